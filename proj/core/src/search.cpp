#include "bunas/search.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "bunas/quant.hpp"
#include "bunas/train.hpp"

namespace bunas {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string fmt_full(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

int alphabet_index(const std::vector<int>& alphabet, int width) {
  const auto it = std::lower_bound(alphabet.begin(), alphabet.end(), width);
  if (it == alphabet.end() || *it != width) {
    throw std::invalid_argument("width " + std::to_string(width) +
                                " is not in the search alphabet");
  }
  return static_cast<int>(it - alphabet.begin());
}

}  // namespace

double fitness(double acc, double est_ms, double tar_ms, double alpha) {
  if (alpha >= 0) throw std::invalid_argument("fitness: alpha must be negative");
  return acc + alpha * (est_ms - tar_ms);
}

void SwarmConfig::set_linear_epochs(int e0, int e1) {
  epoch_schedule.clear();
  for (int i = 0; i < iterations; ++i) {
    const double t = iterations > 1 ? static_cast<double>(i) / (iterations - 1) : 0.0;
    epoch_schedule.push_back(e0 + static_cast<int>(std::llround(t * (e1 - e0))));
  }
}

void SwarmConfig::validate() const {
  if (groups < 1 || per_group < 1 || iterations < 1) {
    throw std::invalid_argument("swarm config: M, N, I must all be >= 1");
  }
  if (alpha >= 0) throw std::invalid_argument("swarm config: alpha must be negative");
  if (r_local < 0 || r_local > 1 || r_group < 0 || r_group > 1) {
    throw std::invalid_argument("swarm config: move probabilities must be in [0,1]");
  }
  if (static_cast<int>(epoch_schedule.size()) != iterations) {
    throw std::invalid_argument("swarm config: epoch schedule length must equal iterations");
  }
  for (size_t i = 1; i < epoch_schedule.size(); ++i) {
    if (epoch_schedule[i] < epoch_schedule[i - 1]) {
      throw std::invalid_argument("swarm config: epoch schedule must be non-decreasing");
    }
  }
  bounds.validate();
  if (static_cast<int>(bounds.bundle_ids.size()) < groups) {
    throw std::invalid_argument("swarm config: need one bundle id per group");
  }
}

bool Velocity::zero() const {
  for (int v : dfv1) {
    if (v != 0) return false;
  }
  for (int v : dfv2) {
    if (v != 0) return false;
  }
  return true;
}

Velocity get_velocity(const NetworkGenome& current, const NetworkGenome& best,
                      const std::vector<int>& alphabet) {
  if (current.depth != best.depth || current.bundle_id != best.bundle_id) {
    throw std::invalid_argument("get_velocity: genomes must share bundle type and depth");
  }
  Velocity v;
  v.dfv1.resize(static_cast<size_t>(current.depth));
  v.dfv2.resize(static_cast<size_t>(current.depth));
  for (int k = 0; k < current.depth; ++k) {
    v.dfv1[static_cast<size_t>(k)] =
        alphabet_index(alphabet, best.fv1[static_cast<size_t>(k)]) -
        alphabet_index(alphabet, current.fv1[static_cast<size_t>(k)]);
    v.dfv2[static_cast<size_t>(k)] = static_cast<int>(best.fv2[static_cast<size_t>(k)]) -
                                     static_cast<int>(current.fv2[static_cast<size_t>(k)]);
  }
  return v;
}

NetworkGenome evolve(const NetworkGenome& p, const Velocity& v_local, const Velocity& v_group,
                     Rng& rng, const EvolveParams& params, const std::vector<int>& alphabet) {
  if (static_cast<int>(v_local.dfv1.size()) != p.depth ||
      static_cast<int>(v_group.dfv1.size()) != p.depth) {
    throw std::invalid_argument("evolve: velocity depth mismatch");
  }
  NetworkGenome g = p;
  const int last = static_cast<int>(alphabet.size()) - 1;
  std::vector<int> toggled;  // pool positions switched on this step, in order

  for (int k = 0; k < p.depth; ++k) {
    int idx = alphabet_index(alphabet, g.fv1[static_cast<size_t>(k)]);
    if (v_local.dfv1[static_cast<size_t>(k)] != 0 && rng.bernoulli(params.r_local)) {
      idx += v_local.dfv1[static_cast<size_t>(k)] > 0 ? 1 : -1;
    }
    if (v_group.dfv1[static_cast<size_t>(k)] != 0 && rng.bernoulli(params.r_group)) {
      idx += v_group.dfv1[static_cast<size_t>(k)] > 0 ? 1 : -1;
    }
    idx = std::clamp(idx, 0, last);
    g.fv1[static_cast<size_t>(k)] = alphabet[static_cast<size_t>(idx)];
  }

  for (int k = 0; k < p.depth; ++k) {
    int m = g.fv2[static_cast<size_t>(k)] ? 1 : 0;
    const int before = m;
    if (v_local.dfv2[static_cast<size_t>(k)] != 0 && rng.bernoulli(params.r_local)) {
      m = v_local.dfv2[static_cast<size_t>(k)] > 0 ? 1 : 0;
    }
    if (v_group.dfv2[static_cast<size_t>(k)] != 0 && rng.bernoulli(params.r_group)) {
      m = v_group.dfv2[static_cast<size_t>(k)] > 0 ? 1 : 0;
    }
    g.fv2[static_cast<size_t>(k)] = static_cast<uint8_t>(m);
    if (m == 1 && before == 0) toggled.push_back(k);
  }

  // Repair: drop the latest toggled pools first, then highest positions.
  int pools = g.pool_count();
  while (pools > params.max_pools && !toggled.empty()) {
    g.fv2[static_cast<size_t>(toggled.back())] = 0;
    toggled.pop_back();
    --pools;
  }
  for (int k = p.depth - 1; k >= 0 && pools > params.max_pools; --k) {
    if (g.fv2[static_cast<size_t>(k)]) {
      g.fv2[static_cast<size_t>(k)] = 0;
      --pools;
    }
  }
  g.validate();
  return g;
}

// ---- evaluators ----------------------------------------------------------------

SurrogateEvaluator::SurrogateEvaluator(NetworkGenome optimum, std::vector<int> alphabet,
                                       double width_weight, double pool_weight)
    : opt_(std::move(optimum)), alphabet_(std::move(alphabet)), ww_(width_weight),
      pw_(pool_weight) {}

double SurrogateEvaluator::accuracy(const NetworkGenome& g, int /*epochs*/, uint64_t /*seed*/) {
  if (g.depth != opt_.depth) return 0.0;
  const double span = static_cast<double>(alphabet_.size() - 1);
  double wdist = 0, pdist = 0;
  for (int k = 0; k < g.depth; ++k) {
    wdist += std::abs(alphabet_index(alphabet_, g.fv1[static_cast<size_t>(k)]) -
                      alphabet_index(alphabet_, opt_.fv1[static_cast<size_t>(k)]));
    pdist += std::abs(static_cast<int>(g.fv2[static_cast<size_t>(k)]) -
                      static_cast<int>(opt_.fv2[static_cast<size_t>(k)]));
  }
  const double d = static_cast<double>(g.depth);
  double acc = 1.0 - ww_ * wdist / (d * std::max(1.0, span)) - pw_ * pdist / d;
  return std::clamp(acc, 0.0, 1.0);
}

TinyTrainerEvaluator::TinyTrainerEvaluator(Dataset train, Dataset val, InputShape input,
                                           int batch)
    : train_(std::move(train)), val_(std::move(val)), input_(input), batch_(batch) {}

double TinyTrainerEvaluator::accuracy(const NetworkGenome& g, int epochs, uint64_t seed) {
  Model m(instantiate(g, input_), kmeans_anchors(train_, seed));
  Rng rng(mix_seed({seed, 0x731A1ull}));
  m.init_weights(rng);
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch = batch_;
  tc.seed = seed;
  tc.max_val_images = 64;
  train_model(m, train_, {}, tc);
  return val_.empty() ? 0.0 : evaluate_iou(m, val_, 64);
}

LatencyFn fpga_latency_fn(QuantScheme scheme, TilingPlan plan, FpgaTarget target) {
  return [scheme, plan, target](const NetworkSpec& spec) {
    return estimate_fpga(spec, scheme, plan, target).summary.latency_ms;
  };
}

LatencyFn gpu_latency_fn(GpuTarget target) {
  return [target](const NetworkSpec& spec) { return estimate_gpu(spec, target).latency_ms; };
}

// ---- population ------------------------------------------------------------------

std::vector<GroupState> initial_population(const SwarmConfig& cfg) {
  cfg.validate();
  std::vector<GroupState> groups;
  groups.reserve(static_cast<size_t>(cfg.groups));
  for (int gi = 0; gi < cfg.groups; ++gi) {
    GroupState gs;
    gs.group_id = cfg.bounds.bundle_ids[static_cast<size_t>(gi)];
    gs.best_fitness = kNegInf;
    gs.best_latency_ms = std::numeric_limits<double>::infinity();
    GenomeBounds b = cfg.bounds;
    b.bundle_ids = {gs.group_id};
    for (int pi = 0; pi < cfg.per_group; ++pi) {
      Rng rng(mix_seed({cfg.seed, 0x1417ull, static_cast<uint64_t>(gi),
                        static_cast<uint64_t>(pi)}));
      Particle p;
      p.genome = random_genome(rng, b);
      p.best_genome = p.genome;
      p.best_fitness = kNegInf;
      p.best_latency_ms = std::numeric_limits<double>::infinity();
      gs.particles.push_back(std::move(p));
    }
    groups.push_back(std::move(gs));
  }
  return groups;
}

// ---- report --------------------------------------------------------------------

namespace {

std::string genome_one_line(const NetworkGenome& g) {
  std::ostringstream os;
  os << "b" << g.bundle_id << " fv1=[";
  for (size_t i = 0; i < g.fv1.size(); ++i) os << (i ? " " : "") << g.fv1[i];
  os << "] fv2=[";
  for (size_t i = 0; i < g.fv2.size(); ++i) os << (i ? " " : "") << int(g.fv2[i]);
  os << "]";
  if (g.bypass) os << " bypass=" << g.bypass->source_bundle << ">" << g.bypass->dest_bundle;
  return os.str();
}

}  // namespace

std::string SearchReport::to_text() const {
  std::ostringstream os;
  os << "# search report\n";
  os << "best_fitness = " << fmt_full(best_fitness) << "\n";
  os << "best_accuracy = " << fmt_full(best_accuracy) << "\n";
  os << "best_latency_ms = " << fmt_full(best_latency_ms) << "\n";
  os << "best_genome = " << genome_one_line(best_genome) << "\n";
  os << "\n[group best fitness per iteration]\n";
  for (size_t it = 0; it < group_best_fitness.size(); ++it) {
    os << "iter " << it << ":";
    for (double f : group_best_fitness[it]) os << " " << fmt_full(f);
    os << "\n";
  }
  os << "\n[particles: iteration group particle accuracy latency_ms fitness genome]\n";
  for (const ParticleRecord& r : history) {
    os << r.iteration << " " << r.group << " " << r.particle << " " << fmt_full(r.accuracy) << " "
       << fmt_full(r.latency_ms) << " " << fmt_full(r.fitness) << " " << genome_one_line(r.genome)
       << "\n";
  }
  os << "\n[pareto front: accuracy / latency_ms / genome]\n";
  for (const ParetoPoint& p : pareto) {
    os << fmt_full(p.accuracy) << " " << fmt_full(p.latency_ms) << " "
       << genome_one_line(p.genome) << "\n";
  }
  return os.str();
}

std::string SearchReport::history_csv() const {
  std::ostringstream os;
  os << "iteration,group,particle,accuracy,latency_ms,fitness\n";
  for (const ParticleRecord& r : history) {
    os << r.iteration << "," << r.group << "," << r.particle << "," << fmt_full(r.accuracy)
       << "," << fmt_full(r.latency_ms) << "," << fmt_full(r.fitness) << "\n";
  }
  return os.str();
}

std::string SearchReport::pareto_csv() const {
  std::ostringstream os;
  os << "accuracy,latency_ms,genome\n";
  for (const ParetoPoint& p : pareto) {
    os << fmt_full(p.accuracy) << "," << fmt_full(p.latency_ms) << ",\""
       << genome_one_line(p.genome) << "\"\n";
  }
  return os.str();
}

std::vector<size_t> pareto_front(const std::vector<std::pair<double, double>>& acc_lat) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < acc_lat.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < acc_lat.size() && !dominated; ++j) {
      if (j == i) continue;
      const bool geq = acc_lat[j].first >= acc_lat[i].first &&
                       acc_lat[j].second <= acc_lat[i].second;
      const bool strict = acc_lat[j].first > acc_lat[i].first ||
                          acc_lat[j].second < acc_lat[i].second;
      dominated = geq && strict;
    }
    if (!dominated) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (acc_lat[a].second != acc_lat[b].second) return acc_lat[a].second < acc_lat[b].second;
    return acc_lat[a].first > acc_lat[b].first;
  });
  return idx;
}

// ---- main loop -------------------------------------------------------------------

namespace {

struct EvalResult {
  double accuracy = 0, latency_ms = 0, fitness = kNegInf;
  bool failed = false;
};

// Runs fn(i) for i in [0, n) on `workers` threads; results land by index, so
// the outcome is identical for any worker count.
void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  auto body = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int count = static_cast<int>(std::min<int64_t>(workers, n));
  pool.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
}

}  // namespace

SearchReport run_search(const SwarmConfig& cfg, Evaluator& evaluator, const LatencyFn& latency,
                        int workers) {
  cfg.validate();
  std::vector<GroupState> groups = initial_population(cfg);

  SearchReport report;
  report.best_fitness = kNegInf;
  report.best_latency_ms = std::numeric_limits<double>::infinity();

  std::vector<ParetoPoint> all_points;

  for (int itr = 0; itr < cfg.iterations; ++itr) {
    const int epochs = cfg.epoch_schedule[static_cast<size_t>(itr)];

    // Evaluation wave: independent, order-free, merged by particle index.
    const int64_t total = static_cast<int64_t>(cfg.groups) * cfg.per_group;
    std::vector<EvalResult> results(static_cast<size_t>(total));
    parallel_for(total, workers, [&](int64_t flat) {
      const int gi = static_cast<int>(flat / cfg.per_group);
      const int pi = static_cast<int>(flat % cfg.per_group);
      const NetworkGenome& genome = groups[static_cast<size_t>(gi)]
                                        .particles[static_cast<size_t>(pi)]
                                        .genome;
      EvalResult r;
      try {
        const uint64_t eval_seed = mix_seed({cfg.seed, 0xE7A1ull, static_cast<uint64_t>(itr),
                                             static_cast<uint64_t>(gi),
                                             static_cast<uint64_t>(pi)});
        r.accuracy = evaluator.accuracy(genome, epochs, eval_seed);
        r.latency_ms = latency(instantiate(genome, cfg.input));
        r.fitness = fitness(r.accuracy, r.latency_ms, cfg.target_latency_ms, cfg.alpha);
      } catch (const std::exception&) {
        r.failed = true;
        r.fitness = kNegInf;
      }
      results[static_cast<size_t>(flat)] = r;
    });

    // Rank and update bests, strictly in index order.
    std::vector<double> iter_group_best(static_cast<size_t>(cfg.groups), kNegInf);
    for (int gi = 0; gi < cfg.groups; ++gi) {
      GroupState& gs = groups[static_cast<size_t>(gi)];
      for (int pi = 0; pi < cfg.per_group; ++pi) {
        Particle& p = gs.particles[static_cast<size_t>(pi)];
        const EvalResult& r = results[static_cast<size_t>(gi * cfg.per_group + pi)];
        p.accuracy = r.accuracy;
        p.latency_ms = r.latency_ms;
        p.fitness = r.fitness;
        p.failed = r.failed;

        ParticleRecord rec;
        rec.iteration = itr;
        rec.group = gi;
        rec.particle = pi;
        rec.genome = p.genome;
        rec.accuracy = r.accuracy;
        rec.latency_ms = r.latency_ms;
        rec.fitness = r.fitness;
        report.history.push_back(std::move(rec));
        if (!r.failed) {
          all_points.push_back(ParetoPoint{p.genome, r.accuracy, r.latency_ms});
        }

        // Local best across all passing iterations; fitness ties go to the
        // lower latency estimate, then to the earlier record.
        if (p.fitness > p.best_fitness ||
            (p.fitness == p.best_fitness && p.latency_ms < p.best_latency_ms)) {
          p.best_fitness = p.fitness;
          p.best_genome = p.genome;
          p.best_accuracy = p.accuracy;
          p.best_latency_ms = p.latency_ms;
        }
        if (p.best_fitness > gs.best_fitness ||
            (p.best_fitness == gs.best_fitness && p.best_latency_ms < gs.best_latency_ms)) {
          gs.best_fitness = p.best_fitness;
          gs.best_genome = p.best_genome;
          gs.best_accuracy = p.best_accuracy;
          gs.best_latency_ms = p.best_latency_ms;
        }
      }
      iter_group_best[static_cast<size_t>(gi)] = gs.best_fitness;
      if (gs.best_fitness > report.best_fitness ||
          (gs.best_fitness == report.best_fitness &&
           gs.best_latency_ms < report.best_latency_ms)) {
        report.best_fitness = gs.best_fitness;
        report.best_genome = gs.best_genome;
        report.best_accuracy = gs.best_accuracy;
        report.best_latency_ms = gs.best_latency_ms;
      }
    }
    report.group_best_fitness.push_back(iter_group_best);

    if (itr + 1 == cfg.iterations) break;

    // Evolution wave: per-particle rng streams keyed by (seed, itr, g, p).
    for (int gi = 0; gi < cfg.groups; ++gi) {
      GroupState& gs = groups[static_cast<size_t>(gi)];
      EvolveParams ep;
      ep.r_local = cfg.r_local;
      ep.r_group = cfg.r_group;
      ep.max_pools = std::min(cfg.bounds.max_pools, max_pool_count(cfg.input));
      for (int pi = 0; pi < cfg.per_group; ++pi) {
        Particle& p = gs.particles[static_cast<size_t>(pi)];
        const Velocity v_local = get_velocity(p.genome, p.best_genome, cfg.bounds.width_alphabet);
        const Velocity v_group = get_velocity(p.genome, gs.best_genome, cfg.bounds.width_alphabet);
        Rng rng(mix_seed({cfg.seed, 0xEE01ull, static_cast<uint64_t>(itr),
                          static_cast<uint64_t>(gi), static_cast<uint64_t>(pi)}));
        p.genome = evolve(p.genome, v_local, v_group, rng, ep, cfg.bounds.width_alphabet);
      }
    }
  }

  std::vector<std::pair<double, double>> pts;
  pts.reserve(all_points.size());
  for (const auto& p : all_points) pts.emplace_back(p.accuracy, p.latency_ms);
  std::vector<size_t> front = pareto_front(pts);
  // Deduplicate identical (accuracy, latency) pairs for a readable front.
  std::vector<std::pair<double, double>> seen;
  for (size_t i : front) {
    if (std::find(seen.begin(), seen.end(), pts[i]) != seen.end()) continue;
    seen.push_back(pts[i]);
    report.pareto.push_back(all_points[i]);
  }
  return report;
}

std::vector<BundleScore> bundle_stage1_evaluate(const std::vector<int>& bundle_ids,
                                                Evaluator& evaluator, const LatencyFn& latency,
                                                const SketchConfig& sketch) {
  if (bundle_ids.empty()) {
    throw std::invalid_argument("bundle_stage1_evaluate: empty bundle list");
  }
  std::vector<BundleScore> scored;
  for (size_t bi = 0; bi < bundle_ids.size(); ++bi) {
    NetworkGenome g;
    g.bundle_id = bundle_ids[bi];
    g.depth = sketch.depth;
    g.fv1.assign(static_cast<size_t>(sketch.depth), sketch.width);
    g.fv2.assign(static_cast<size_t>(sketch.depth), 0);
    for (int k = 0; k < std::min(sketch.pools, sketch.depth); ++k) {
      g.fv2[static_cast<size_t>(k * sketch.depth / std::max(1, sketch.pools))] = 1;
    }
    g.validate();
    BundleScore s;
    s.bundle_id = bundle_ids[bi];
    s.accuracy = evaluator.accuracy(g, sketch.epochs,
                                    mix_seed({sketch.seed, static_cast<uint64_t>(bi)}));
    s.latency_ms = latency(instantiate(g, sketch.input));
    scored.push_back(s);
  }
  std::vector<std::pair<double, double>> pts;
  for (const auto& s : scored) pts.emplace_back(s.accuracy, s.latency_ms);
  std::vector<BundleScore> out;
  for (size_t i : pareto_front(pts)) out.push_back(scored[i]);
  return out;
}

}  // namespace bunas
