#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bunas/data.hpp"
#include "bunas/genome.hpp"
#include "bunas/hw_model.hpp"

namespace bunas {

/// Search fitness: acc + alpha * (est_ms - tar_ms); alpha must be negative
/// so slower-than-target candidates are penalized.
double fitness(double acc, double est_ms, double tar_ms, double alpha);

struct SwarmConfig {
  int groups = 1;        // one group per bundle type
  int per_group = 8;     // networks per group
  int iterations = 20;
  double alpha = -0.01;  // < 0
  double target_latency_ms = 10.0;
  uint64_t seed = 1;
  double r_local = 0.7;  // per-position move probability toward the local best
  double r_group = 0.2;  // ... toward the group best
  std::vector<int> epoch_schedule;  // per-iteration fast-training epochs; non-decreasing
  GenomeBounds bounds;
  InputShape input;

  /// Linear schedule from `e0` to `e1` over the configured iterations.
  void set_linear_epochs(int e0 = 2, int e1 = 10);
  void validate() const;
};

/// Discrete velocity: signed width-alphabet steps per position plus pool-mask
/// toggle intents.
struct Velocity {
  std::vector<int> dfv1;
  std::vector<int> dfv2;

  bool zero() const;
};

/// Index distance from `current` to `best` in the width alphabet and pool
/// mask. Both genomes must share bundle type and depth.
Velocity get_velocity(const NetworkGenome& current, const NetworkGenome& best,
                      const std::vector<int>& alphabet);

struct EvolveParams {
  double r_local = 0.7;
  double r_group = 0.2;
  int max_pools = 8;
};

/// Moves one alphabet step per position toward the local/group best with the
/// configured probabilities, then repairs the genome (clamp widths, drop the
/// latest-toggled pools past the limit). Always returns a valid genome.
NetworkGenome evolve(const NetworkGenome& p, const Velocity& v_local, const Velocity& v_group,
                     Rng& rng, const EvolveParams& params,
                     const std::vector<int>& alphabet);

/// Accuracy oracle used by the search: (genome, epochs, seed) -> [0,1].
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual double accuracy(const NetworkGenome& g, int epochs, uint64_t seed) = 0;
};

/// Closed-form landscape for search testing: accuracy decays linearly with
/// distance from a target genome, so the full fitness surface can be
/// enumerated exactly.
class SurrogateEvaluator : public Evaluator {
 public:
  SurrogateEvaluator(NetworkGenome optimum, std::vector<int> alphabet, double width_weight = 0.5,
                     double pool_weight = 0.25);
  double accuracy(const NetworkGenome& g, int epochs, uint64_t seed) override;

 private:
  NetworkGenome opt_;
  std::vector<int> alphabet_;
  double ww_, pw_;
};

/// Fast-trains candidate genomes on a synthetic dataset and scores them by
/// validation IoU.
class TinyTrainerEvaluator : public Evaluator {
 public:
  TinyTrainerEvaluator(Dataset train, Dataset val, InputShape input, int batch = 4);
  double accuracy(const NetworkGenome& g, int epochs, uint64_t seed) override;

 private:
  Dataset train_, val_;
  InputShape input_;
  int batch_;
};

using LatencyFn = std::function<double(const NetworkSpec&)>;

/// Default estimator: analytic FPGA model at the given scheme/plan/target.
LatencyFn fpga_latency_fn(QuantScheme scheme, TilingPlan plan, FpgaTarget target);
LatencyFn gpu_latency_fn(GpuTarget target);

struct Particle {
  NetworkGenome genome;
  double fitness = 0, accuracy = 0, latency_ms = 0;
  bool failed = false;
  NetworkGenome best_genome;
  double best_fitness = 0, best_accuracy = 0, best_latency_ms = 0;
};

struct GroupState {
  int group_id = 0;  // bundle type
  std::vector<Particle> particles;
  NetworkGenome best_genome;
  double best_fitness = 0, best_accuracy = 0, best_latency_ms = 0;
};

/// M groups x N random genomes, deterministic under the config seed.
std::vector<GroupState> initial_population(const SwarmConfig& cfg);

struct ParticleRecord {
  int iteration = 0, group = 0, particle = 0;
  NetworkGenome genome;
  double accuracy = 0, latency_ms = 0, fitness = 0;
};

struct ParetoPoint {
  NetworkGenome genome;
  double accuracy = 0, latency_ms = 0;
};

struct SearchReport {
  std::vector<ParticleRecord> history;  // per iteration, per particle
  std::vector<std::vector<double>> group_best_fitness;  // [iteration][group]
  NetworkGenome best_genome;
  double best_fitness = 0, best_accuracy = 0, best_latency_ms = 0;
  std::vector<ParetoPoint> pareto;  // accuracy max / latency min front

  std::string to_text() const;
  std::string history_csv() const;
  std::string pareto_csv() const;
};

/// The full search loop: fast-train, score, rank per group, update local and
/// group bests, move particles. Failed evaluations score -inf and the search
/// continues. Results are identical for any worker count.
SearchReport run_search(const SwarmConfig& cfg, Evaluator& evaluator, const LatencyFn& latency,
                        int workers = 1);

/// Non-dominated (max accuracy, min latency) subset, sorted by latency.
std::vector<size_t> pareto_front(const std::vector<std::pair<double, double>>& acc_lat);

struct BundleScore {
  int bundle_id = 0;
  double accuracy = 0, latency_ms = 0;
};

struct SketchConfig {
  int depth = 3;
  int width = 48;
  int pools = 2;  // evenly spread pool-after positions
  InputShape input;
  int epochs = 3;
  uint64_t seed = 1;
};

/// Stage-1 screening: wraps each bundle type in a fixed sketch, fast-trains
/// it, pairs it with the latency estimate and returns the Pareto-selected
/// bundle set (sorted by latency).
std::vector<BundleScore> bundle_stage1_evaluate(const std::vector<int>& bundle_ids,
                                                Evaluator& evaluator, const LatencyFn& latency,
                                                const SketchConfig& sketch);

}  // namespace bunas
