#include "bunas/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bunas {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: invalid box (min > max)");
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

double r_iou(const std::vector<double>& ious) {
  if (ious.empty()) throw std::invalid_argument("r_iou: empty IoU list");
  double s = 0.0;
  for (double v : ious) s += v;
  return s / static_cast<double>(ious.size());
}

double energy_score(double e_team, double e_mean, int x) {
  if (e_team <= 0 || e_mean <= 0) {
    throw std::invalid_argument("energy_score: energies must be positive");
  }
  if (x != 2 && x != 10) throw std::invalid_argument("energy_score: log base must be 2 or 10");
  const double logx = std::log(e_mean / e_team) / std::log(static_cast<double>(x));
  return std::max(0.0, 1.0 + 0.2 * logx);
}

double mean_energy(const std::vector<double>& energies) {
  if (energies.empty()) throw std::invalid_argument("mean_energy: no teams");
  double s = 0.0;
  for (double e : energies) s += e;
  return s / static_cast<double>(energies.size());
}

double total_score(double r_iou_value, double es) { return r_iou_value * (1.0 + es); }

double ao(const std::vector<double>& ious) { return r_iou(ious); }

double sr(const std::vector<double>& ious, double threshold) {
  if (ious.empty()) throw std::invalid_argument("sr: empty IoU list");
  if (threshold <= 0 || threshold >= 1) throw std::invalid_argument("sr: threshold must be in (0,1)");
  int64_t hits = 0;
  for (double v : ious) {
    if (v > threshold) ++hits;  // strictly above
  }
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::vector<LeaderboardRow> leaderboard(const std::vector<TeamResult>& teams, int x) {
  if (teams.empty()) throw std::invalid_argument("leaderboard: no teams");
  std::vector<double> energies;
  energies.reserve(teams.size());
  for (const auto& t : teams) energies.push_back(t.energy_joules);
  const double e_mean = mean_energy(energies);

  std::vector<LeaderboardRow> rows;
  rows.reserve(teams.size());
  for (const auto& t : teams) {
    LeaderboardRow r;
    r.team_id = t.team_id;
    r.r_iou = r_iou(t.ious);
    r.es = energy_score(t.energy_joules, e_mean, x);
    r.ts = total_score(r.r_iou, r.es);
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    if (a.ts != b.ts) return a.ts > b.ts;
    if (a.r_iou != b.r_iou) return a.r_iou > b.r_iou;
    return a.team_id < b.team_id;
  });
  return rows;
}

}  // namespace bunas
