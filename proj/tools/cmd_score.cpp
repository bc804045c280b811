#include <map>
#include <memory>
#include <sstream>

#include "bunas/scoring.hpp"
#include "common.hpp"

using namespace bunas;

namespace {

struct ScoreParams {
  std::string out;
  std::string results_dir;
  std::string ground_truth;
  std::string track = "fpga";  // fpga (log base 2) | gpu (log base 10)
};

// Schema: header "image_id,x_min,y_min,x_max,y_max", one box per image id.
std::map<std::string, Box> read_box_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::map<std::string, Box> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;  // header
    std::istringstream is(line);
    std::string id, v;
    Box b;
    try {
      if (!std::getline(is, id, ',')) throw std::runtime_error("missing image_id");
      std::getline(is, v, ',');
      b.x_min = std::stod(v);
      std::getline(is, v, ',');
      b.y_min = std::stod(v);
      std::getline(is, v, ',');
      b.x_max = std::stod(v);
      if (!std::getline(is, v, ',')) throw std::runtime_error("missing x_max/y_max");
      b.y_max = std::stod(v);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": malformed box row (" + e.what() + ")");
    }
    if (!b.valid()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": invalid box (min > max)");
    }
    out[id] = b;
  }
  return out;
}

double read_energy_meta(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("missing team metadata file " + path.string());
  std::string line;
  while (std::getline(f, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    const auto end = key.find_last_not_of(" \t");
    key = key.substr(0, end + 1);
    if (key == "energy_joules") return std::stod(line.substr(eq + 1));
  }
  throw std::runtime_error("no energy_joules entry in " + path.string());
}

}  // namespace

void register_score(CLI::App& app, const CLI::App& root) {
  auto p = std::make_shared<ScoreParams>();
  CLI::App* cmd = app.add_subcommand("score", "Contest-style leaderboard from team results");
  cmd->add_option("--out", p->out, "Run directory")->required()->capture_default_str();
  cmd->add_option("--results-dir", p->results_dir,
                  "Directory of <team>.csv predictions and <team>.meta energy files")
      ->required()
      ->capture_default_str();
  cmd->add_option("--ground-truth", p->ground_truth, "Ground-truth CSV (same schema)")
      ->required()
      ->capture_default_str();
  cmd->add_option("--track", p->track, "fpga (log base 2) | gpu (log base 10)")
      ->check(CLI::IsMember({"fpga", "gpu"}))
      ->capture_default_str();

  cmd->callback([p, &root] {
    const auto gt = read_box_csv(p->ground_truth);
    if (gt.empty()) throw std::runtime_error("ground truth has no rows: " + p->ground_truth);

    std::vector<TeamResult> teams;
    std::vector<std::filesystem::path> team_files;
    for (const auto& e : std::filesystem::directory_iterator(p->results_dir)) {
      if (e.path().extension() == ".csv") team_files.push_back(e.path());
    }
    std::sort(team_files.begin(), team_files.end());
    for (const auto& path : team_files) {
      TeamResult t;
      t.team_id = path.stem().string();
      const auto preds = read_box_csv(path);
      // Every ground-truth image counts; missing predictions score zero.
      for (const auto& [id, box] : gt) {
        const auto it = preds.find(id);
        t.ious.push_back(it == preds.end() ? 0.0 : iou(it->second, box));
      }
      t.energy_joules =
          read_energy_meta(std::filesystem::path(p->results_dir) / (t.team_id + ".meta"));
      teams.push_back(std::move(t));
    }
    if (teams.empty()) throw std::runtime_error("no team result files in " + p->results_dir);

    const int x = p->track == "fpga" ? 2 : 10;
    auto rows = leaderboard(teams, x);
    std::ostringstream csv;
    csv << "team,r_iou,es,ts\n";
    for (const auto& r : rows) {
      csv << r.team_id << "," << cli::fmt(r.r_iou) << "," << cli::fmt(r.es) << ","
          << cli::fmt(r.ts) << "\n";
    }
    std::filesystem::create_directories(p->out);
    cli::write_file(std::filesystem::path(p->out) / "leaderboard.csv", csv.str());
    cli::finish_run_dir(root, p->out);
    std::printf("scored %zu team(s); winner %s (TS %s)\n", rows.size(), rows[0].team_id.c_str(),
                cli::fmt(rows[0].ts).c_str());
  });
}
