#pragma once

#include <string>
#include <vector>

namespace bunas {

/// Axis-aligned box; units (normalized or pixel) must be consistent per call.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }
  bool operator==(const Box&) const = default;
};

/// Intersection over union in [0,1]. Disjoint boxes score 0. Degenerate
/// convention: a zero-area union scores 1 when the two boxes are identical
/// (same zero-area point), else 0.
double iou(const Box& a, const Box& b);

/// Arithmetic mean of per-image IoU values. Errors on an empty list.
double r_iou(const std::vector<double>& ious);

/// max{0, 1 + 0.2*log_x(e_mean/e_team)}; x is 2 (FPGA track) or 10 (GPU track).
double energy_score(double e_team, double e_mean, int x);

double mean_energy(const std::vector<double>& energies);

/// r_iou * (1 + es).
double total_score(double r_iou_value, double es);

/// Average overlap: mean IoU over a sequence.
double ao(const std::vector<double>& ious);

/// Success rate: fraction of IoU values strictly above `threshold`
/// (boundary values do not count).
double sr(const std::vector<double>& ious, double threshold);

struct TeamResult {
  std::string team_id;
  std::vector<double> ious;  // per-image, length K
  double energy_joules = 0;
};

struct LeaderboardRow {
  std::string team_id;
  double r_iou = 0, es = 0, ts = 0;
};

/// Scores every team against the shared mean energy and sorts by total score
/// (ties: higher R_IoU first, then team id).
std::vector<LeaderboardRow> leaderboard(const std::vector<TeamResult>& teams, int x);

}  // namespace bunas
