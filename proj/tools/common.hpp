#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace cli {

/// Shortest round-trip formatting; keeps every report reproducible byte for
/// byte.
inline std::string fmt(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    if (cur.empty()) continue;
    out.push_back(std::stoi(cur));
  }
  if (out.empty()) throw std::invalid_argument("empty integer list: '" + s + "'");
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

/// Creates the run directory and drops the fully resolved configuration next
/// to the outputs so the run can be replayed with --config.
inline void finish_run_dir(const CLI::App& root, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(std::filesystem::path(out_dir) / "resolved.cfg", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write resolved config in " + out_dir);
  f << root.config_to_str(true, true);
}

}  // namespace cli
