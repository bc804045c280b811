#include <cstdio>
#include <exception>

#include "CLI11.hpp"

void register_gen_data(CLI::App& app, const CLI::App& root);
void register_search(CLI::App& app, const CLI::App& root);
void register_train(CLI::App& app, const CLI::App& root);
void register_eval(CLI::App& app, const CLI::App& root);
void register_quantize(CLI::App& app, const CLI::App& root);
void register_estimate(CLI::App& app, const CLI::App& root);
void register_score(CLI::App& app, const CLI::App& root);

int main(int argc, char** argv) {
  CLI::App app{"bunas: bottom-up hardware-aware network search toolkit"};
  app.set_config("--config", "", "Load options from a resolved run config");
  app.require_subcommand(1);

  register_gen_data(app, app);
  register_search(app, app);
  register_train(app, app);
  register_eval(app, app);
  register_quantize(app, app);
  register_estimate(app, app);
  register_score(app, app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;  // data error
  }
  return 0;
}
