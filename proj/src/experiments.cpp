#include "fednorm/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <system_error>
#include <vector>

#include "fednorm/datagen.hpp"
#include "fednorm/fedproto.hpp"
#include "fednorm/rng.hpp"
#include "fednorm/statkernels.hpp"

namespace fs = std::filesystem;

namespace fednorm {

namespace {

// stream tags for the experiment-owned draws; the training module carves its
// model and batch streams out of the same seed with different tags
constexpr std::uint64_t kPoolStream = 0x706f6f6c;    // per-round sample pool
constexpr std::uint64_t kSplitStream = 0x73706c69;   // per-round partition
constexpr std::uint64_t kTrainStream = 0x747261696e;
constexpr std::uint64_t kTestStream = 0x74657374;
constexpr std::uint64_t kPartStream = 0x70617274;

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string num(std::size_t v) { return std::to_string(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

// resolve + validate + output directory + config echo, shared by every run_*
ExperimentConfig prepare(ExperimentConfig cfg, ExperimentKind kind) {
  cfg.experiment = kind;
  cfg = resolve(cfg);
  validate(cfg);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) {
    throw config_error("config: cannot create output directory '" +
                       cfg.out_dir + "': " + ec.message());
  }
  write_text(fs::path(cfg.out_dir) / "config_echo.cfg", render_config(cfg));
  return cfg;
}

FeatureBatch rows_block(const FeatureBatch& x, std::size_t r0, std::size_t r1) {
  FeatureBatch out(r1 - r0, x.cols);
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) out.at(r - r0, c) = x.at(r, c);
  }
  return out;
}

// one round's sample pool, reordered client-major so client i owns the
// contiguous block [i*per, (i+1)*per)
struct RoundPool {
  LabeledDataset pool;
  std::size_t per = 0;
};

RoundPool draw_round_pool(const ExperimentConfig& cfg, const Rng& master,
                          std::size_t t, double gamma) {
  Rng round_rng = master.split(t);
  Rng pool_rng = round_rng.split(kPoolStream);
  Rng split_rng = round_rng.split(kSplitStream);
  LabeledDataset raw = gaussian_ring(cfg.classes, cfg.batch, 1.0, pool_rng);
  auto parts = gamma_split(raw.labels, cfg.n_clients, gamma, split_rng);
  std::vector<std::size_t> order;
  order.reserve(parts.size() * parts[0].size());
  for (const auto& p : parts) order.insert(order.end(), p.begin(), p.end());
  RoundPool rp;
  rp.pool = take_rows(raw, order);
  rp.per = parts[0].size();
  return rp;
}

// largest relative spread, over coordinates, of the normalized-to-raw
// pairwise difference ratios; an exact affine map gives zero
double ratio_spread(const FeatureBatch& raw, const FeatureBatch& norm) {
  double worst = 0.0;
  for (std::size_t c = 0; c < raw.cols; ++c) {
    double rmin = std::numeric_limits<double>::infinity();
    double rmax = -rmin;
    double rsum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < raw.rows; ++i) {
      for (std::size_t j = i + 1; j < raw.rows; ++j) {
        const double d = raw.at(i, c) - raw.at(j, c);
        if (std::fabs(d) <= 1.0) continue;  // skip noise-dominated pairs
        const double r = (norm.at(i, c) - norm.at(j, c)) / d;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        rsum += r;
        ++cnt;
      }
    }
    if (cnt == 0) continue;
    worst = std::max(worst, (rmax - rmin) / std::fabs(rsum / cnt));
  }
  return worst;
}

void append_points(std::string& csv, std::size_t round, const char* algo,
                   const RoundPool& rp, const FeatureBatch& y) {
  const FeatureBatch& x = rp.pool.x;
  for (std::size_t k = 0; k < x.rows; ++k) {
    csv += num(round);
    csv += ',';
    csv += algo;
    csv += ',';
    csv += num(k / rp.per);
    csv += ',';
    csv += std::to_string(rp.pool.labels[k]);
    csv += ',';
    csv += num(x.at(k, 0)) + "," + num(x.at(k, 1)) + "," + num(y.at(k, 0)) +
           "," + num(y.at(k, 1)) + "\n";
  }
}

struct CellData {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::vector<std::size_t>> parts;
};

CellData make_cell_data(const ExperimentConfig& cfg) {
  Rng master(cfg.seed);
  Rng train_rng = master.split(kTrainStream);
  Rng test_rng = master.split(kTestStream);
  Rng part_rng = master.split(kPartStream);
  CellData d;
  d.train = gaussian_ring(cfg.classes, cfg.m_per_class, 1.0, train_rng);
  d.test = gaussian_ring(cfg.classes, cfg.test_per_class, 1.0, test_rng);
  d.parts = cfg.partition == PartitionKind::Dirichlet
                ? dirichlet_split(d.train.labels, cfg.n_clients, cfg.alpha,
                                  part_rng)
                : gamma_split(d.train.labels, cfg.n_clients, cfg.gamma,
                              part_rng);
  return d;
}

TrainConfig base_train_config(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.backend = cfg.algo;
  tc.n_clients = cfg.n_clients;
  tc.batch = cfg.batch;
  tc.rounds = cfg.rounds;
  tc.hidden = cfg.hidden;
  tc.classes = cfg.classes;
  tc.beta = cfg.beta;
  tc.eps = cfg.eps;
  tc.base_lr = cfg.lr;
  tc.sgd_momentum = cfg.sgd_momentum;
  tc.t_switch = cfg.t_switch;
  tc.freeze = cfg.freeze;
  tc.seed = cfg.seed;
  return tc;
}

std::vector<RoundRecord> train_with_curve(const TrainConfig& tc,
                                          const CellData& d) {
  TrainState st = make_train_state(tc, d.train, d.parts);
  std::vector<RoundRecord> curve;
  curve.reserve(tc.rounds);
  for (std::size_t t = 1; t <= tc.rounds; ++t) {
    const double loss = run_round(st);
    if (!std::isfinite(loss)) {
      throw numerical_error("training diverged at round " + std::to_string(t));
    }
    curve.push_back({t, loss, evaluate_accuracy(st, d.test)});
  }
  return curve;
}

void append_curve(std::string& csv, const char* scenario,
                  const std::vector<RoundRecord>& curve) {
  for (const auto& r : curve) {
    csv += scenario;
    csv += ',';
    csv += num(r.round) + "," + num(r.loss) + "," + num(r.accuracy) + "\n";
  }
}

std::string level_value(const ExperimentConfig& cfg) {
  return cfg.partition == PartitionKind::Dirichlet ? num(cfg.alpha)
                                                   : num(cfg.gamma);
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "separability") return ExperimentKind::Separability;
  if (s == "norm_error") return ExperimentKind::NormError;
  if (s == "toy_training") return ExperimentKind::ToyTraining;
  if (s == "robustness") return ExperimentKind::Robustness;
  throw config_error("config: unknown experiment '" + s + "'");
}

Backend parse_backend(const std::string& s) {
  if (s == "centralized") return Backend::Centralized;
  if (s == "fbn") return Backend::Fbn;
  if (s == "naive") return Backend::Naive;
  if (s == "fixbn") return Backend::FixBn;
  throw config_error("config: unknown algo '" + s + "'");
}

PartitionKind parse_partition_kind(const std::string& s) {
  if (s == "gamma") return PartitionKind::Gamma;
  if (s == "dirichlet") return PartitionKind::Dirichlet;
  throw config_error("config: unknown partition '" + s + "'");
}

AttackKind parse_attack_kind(const std::string& s) {
  if (s == "none") return AttackKind::None;
  if (s == "sf") return AttackKind::SignFlip;
  if (s == "foe") return AttackKind::Foe;
  if (s == "alie") return AttackKind::Alie;
  throw config_error("config: unknown attack '" + s + "'");
}

AttackTargets parse_attack_targets(const std::string& s) {
  if (s == "stats") return AttackTargets::StatsOnly;
  if (s == "grads") return AttackTargets::GradientsOnly;
  if (s == "both") return AttackTargets::Both;
  throw config_error("config: unknown attack target '" + s + "'");
}

Aggregator parse_aggregator(const std::string& s) {
  Aggregator agg;
  std::string rule = s;
  if (s.rfind("nnm_", 0) == 0) {
    agg.nnm = true;
    rule = s.substr(4);
  }
  if (rule == "mean") {
    agg.rule = AggRule::Mean;
  } else if (rule == "median") {
    agg.rule = AggRule::Median;
  } else if (rule == "trimmed") {
    agg.rule = AggRule::Trimmed;
  } else {
    throw config_error("config: unknown aggregator '" + s + "'");
  }
  return agg;
}

FreezeMode parse_freeze_mode(const std::string& s) {
  if (s == "corrected") return FreezeMode::Corrected;
  if (s == "naive") return FreezeMode::Naive;
  throw config_error("config: unknown freeze mode '" + s + "'");
}

std::vector<double> parse_levels(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    const std::string item = csv.substr(pos, comma - pos);
    const char* b = item.c_str();
    char* e = nullptr;
    const double v = std::strtod(b, &e);
    if (item.empty() || e != b + item.size()) {
      throw config_error("config: bad levels entry '" + item + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Separability: return "separability";
    case ExperimentKind::NormError: return "norm_error";
    case ExperimentKind::ToyTraining: return "toy_training";
    case ExperimentKind::Robustness: return "robustness";
  }
  return "?";
}

std::string to_string(Backend b) {
  switch (b) {
    case Backend::Centralized: return "centralized";
    case Backend::Fbn: return "fbn";
    case Backend::Naive: return "naive";
    case Backend::FixBn: return "fixbn";
  }
  return "?";
}

std::string to_string(PartitionKind k) {
  return k == PartitionKind::Dirichlet ? "dirichlet" : "gamma";
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::SignFlip: return "sf";
    case AttackKind::Foe: return "foe";
    case AttackKind::Alie: return "alie";
  }
  return "?";
}

std::string to_string(AttackTargets t) {
  switch (t) {
    case AttackTargets::StatsOnly: return "stats";
    case AttackTargets::GradientsOnly: return "grads";
    case AttackTargets::Both: return "both";
  }
  return "?";
}

std::string to_string(FreezeMode m) {
  return m == FreezeMode::Corrected ? "corrected" : "naive";
}

std::string aggregator_name(const Aggregator& agg) {
  std::string rule;
  switch (agg.rule) {
    case AggRule::Mean: rule = "mean"; break;
    case AggRule::Median: rule = "median"; break;
    case AggRule::Trimmed: rule = "trimmed"; break;
  }
  return agg.nnm ? "nnm_" + rule : rule;
}

ExperimentConfig resolve(const ExperimentConfig& raw) {
  ExperimentConfig cfg = raw;
  if (cfg.rounds == 0) {
    const bool stats_only = cfg.experiment == ExperimentKind::Separability ||
                            cfg.experiment == ExperimentKind::NormError;
    cfg.rounds = stats_only ? 100 : 500;
  }
  if (cfg.t_switch == 0) cfg.t_switch = cfg.rounds / 2;
  cfg.agg.f = cfg.f;
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.n_clients == 0) throw config_error("config: n must be positive");
  if (cfg.batch < 2) throw config_error("config: batch must be at least 2");
  if (cfg.classes < 2) throw config_error("config: classes must be at least 2");
  if (cfg.hidden == 0) throw config_error("config: hidden width must be positive");
  if (cfg.m_per_class == 0 || cfg.test_per_class == 0) {
    throw config_error("config: points per class must be positive");
  }
  if (cfg.rounds == 0) throw config_error("config: rounds must be positive");
  if (!(cfg.beta > 0.0 && cfg.beta <= 1.0)) {
    throw config_error("config: beta must lie in (0, 1]");
  }
  if (cfg.eps < 0.0) throw config_error("config: eps must be non-negative");
  if (cfg.lr <= 0.0) throw config_error("config: lr must be positive");
  if (!(cfg.sgd_momentum >= 0.0 && cfg.sgd_momentum < 1.0)) {
    throw config_error("config: sgd-momentum must lie in [0, 1)");
  }
  if (cfg.partition == PartitionKind::Gamma &&
      !(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) {
    throw config_error("config: gamma must lie in [0, 1]");
  }
  if (cfg.partition == PartitionKind::Dirichlet && !(cfg.alpha > 0.0)) {
    throw config_error("config: dirichlet alpha must be positive");
  }
  if (cfg.foe_eps < 0.0) throw config_error("config: foe-eps must be non-negative");
  if (cfg.alie_z && !std::isfinite(*cfg.alie_z)) {
    throw config_error("config: alie-z must be finite");
  }
  if (cfg.t_switch > cfg.rounds) {
    throw config_error("config: t-switch exceeds the round count");
  }
  if (cfg.f >= cfg.n_clients) {
    throw config_error("config: f must be below the client count");
  }
  if (cfg.attack != AttackKind::None) {
    if (cfg.f == 0) throw config_error("config: an attack needs f >= 1");
    if (2 * cfg.f >= cfg.n_clients) {
      throw config_error("config: attackers must be a minority (2f < n)");
    }
  }
  if (cfg.agg.rule == AggRule::Trimmed && 2 * cfg.f >= cfg.n_clients) {
    throw config_error("config: the trimmed mean needs 2f < n");
  }
  switch (cfg.experiment) {
    case ExperimentKind::Separability:
    case ExperimentKind::NormError: {
      if (cfg.partition == PartitionKind::Dirichlet) {
        throw config_error(
            "config: the statistics experiments need equal client batches; "
            "use the gamma partition");
      }
      if (cfg.classes * cfg.batch / cfg.n_clients < 2) {
        throw config_error("config: fewer than two pool points per client");
      }
      if (cfg.experiment == ExperimentKind::NormError) {
        if (cfg.levels.empty()) {
          throw config_error("config: levels must not be empty");
        }
        for (double l : cfg.levels) {
          if (!(l >= 0.0 && l <= 1.0)) {
            throw config_error("config: levels must lie in [0, 1]");
          }
        }
        if (cfg.t_switch == 0) {
          throw config_error("config: t-switch must be at least 1");
        }
      }
      break;
    }
    case ExperimentKind::ToyTraining:
      break;
    case ExperimentKind::Robustness:
      if (cfg.attack == AttackKind::None) {
        throw config_error("config: the robustness experiment needs an attack");
      }
      break;
  }
  if ((cfg.experiment == ExperimentKind::ToyTraining ||
       cfg.experiment == ExperimentKind::Robustness) &&
      cfg.partition == PartitionKind::Gamma &&
      cfg.classes * cfg.m_per_class / cfg.n_clients < cfg.batch) {
    throw config_error("config: per-client split smaller than the batch size");
  }
}

std::string render_config(const ExperimentConfig& cfg) {
  std::string out;
  out += "experiment=" + to_string(cfg.experiment) + "\n";
  out += "algo=" + to_string(cfg.algo) + "\n";
  if (cfg.partition == PartitionKind::Dirichlet) {
    out += "dirichlet=" + num(cfg.alpha) + "\n";
  } else {
    out += "gamma=" + num(cfg.gamma) + "\n";
  }
  out += "attack=" + to_string(cfg.attack) + "\n";
  out += "attack-targets=" + to_string(cfg.targets) + "\n";
  out += "f=" + num(cfg.f) + "\n";
  out += "foe-eps=" + num(cfg.foe_eps) + "\n";
  if (cfg.alie_z) out += "alie-z=" + num(*cfg.alie_z) + "\n";
  out += "agg=" + aggregator_name(cfg.agg) + "\n";
  out += "n=" + num(cfg.n_clients) + "\n";
  out += "batch=" + num(cfg.batch) + "\n";
  out += "rounds=" + num(cfg.rounds) + "\n";
  out += "hidden=" + num(cfg.hidden) + "\n";
  out += "classes=" + num(cfg.classes) + "\n";
  out += "m-per-class=" + num(cfg.m_per_class) + "\n";
  out += "test-per-class=" + num(cfg.test_per_class) + "\n";
  out += "beta=" + num(cfg.beta) + "\n";
  out += "eps=" + num(cfg.eps) + "\n";
  out += "lr=" + num(cfg.lr) + "\n";
  out += "sgd-momentum=" + num(cfg.sgd_momentum) + "\n";
  out += "t-switch=" + num(cfg.t_switch) + "\n";
  out += "fixbn-freeze=" + to_string(cfg.freeze) + "\n";
  std::string lv;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    if (i) lv += ',';
    lv += num(cfg.levels[i]);
  }
  out += "levels=" + lv + "\n";
  out += "seed=" + std::to_string(cfg.seed) + "\n";
  out += "out=" + cfg.out_dir + "\n";
  return out;
}

AttackConfig attack_config(const ExperimentConfig& cfg) {
  AttackConfig atk;
  atk.kind = cfg.attack;
  atk.targets = cfg.targets;
  atk.f = cfg.f;
  atk.eps = cfg.foe_eps;
  atk.z = cfg.alie_z;
  return atk;
}

Aggregator aggregator(const ExperimentConfig& cfg) {
  Aggregator agg = cfg.agg;
  agg.f = cfg.f;
  return agg;
}

SeparabilityResult run_separability(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = prepare(raw, ExperimentKind::Separability);
  const std::size_t n = cfg.n_clients;
  const std::size_t per = cfg.classes * cfg.batch / n;
  const AffineParams id = AffineParams::identity(2);
  const Rng master(cfg.seed);
  SharedState shared = make_shared_state(2, n, per, cfg.beta, cfg.eps);
  SeparabilityResult out;
  std::string csv = "round,algo,client,label,x_raw,y_raw,x_norm,y_norm\n";
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const RoundPool rp = draw_round_pool(cfg, master, t, cfg.gamma);
    const FeatureBatch& ux = rp.pool.x;
    std::vector<ClientStatsReport> reports;
    reports.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      reports.push_back(fbn_report(
          batch_moments(rows_block(ux, i * rp.per, (i + 1) * rp.per)), shared));
    }
    if (t == cfg.rounds) {
      // final-round clouds, normalized with the statistics each algorithm
      // would apply before seeing this round's aggregate
      const Moments gm = batch_moments(ux);
      const FeatureBatch y_central =
          normalize(ux, gm.mean, gm.var_biased, cfg.eps, id);
      const FeatureBatch y_fbn =
          normalize(ux, shared.stats.mean, shared.stats.var, cfg.eps, id);
      FeatureBatch y_naive(ux.rows, ux.cols);
      for (std::size_t i = 0; i < n; ++i) {
        const FeatureBatch bi = rows_block(ux, i * rp.per, (i + 1) * rp.per);
        const Moments mi = batch_moments(bi);
        const FeatureBatch yi =
            normalize(bi, mi.mean, mi.var_biased, cfg.eps, id);
        std::vector<double> centroid(ux.cols, 0.0);
        for (std::size_t r = 0; r < yi.rows; ++r) {
          for (std::size_t c = 0; c < yi.cols; ++c) {
            y_naive.at(i * rp.per + r, c) = yi.at(r, c);
            centroid[c] += yi.at(r, c);
          }
        }
        double norm2 = 0.0;
        for (double s : centroid) {
          const double m = s / static_cast<double>(yi.rows);
          norm2 += m * m;
        }
        out.max_naive_centroid =
            std::max(out.max_naive_centroid, std::sqrt(norm2));
      }
      out.fbn_central_distance = normalization_error(y_fbn, y_central);
      out.max_ratio_spread = ratio_spread(ux, y_central);
      append_points(csv, t, "centralized", rp, y_central);
      append_points(csv, t, "fbn", rp, y_fbn);
      append_points(csv, t, "naive", rp, y_naive);
    }
    shared.stats = fbn_server_aggregate(reports, shared);
    shared.round = t;
  }
  write_text(fs::path(cfg.out_dir) / "separability_points.csv", csv);
  return out;
}

std::vector<NormErrorCell> run_norm_error(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = prepare(raw, ExperimentKind::NormError);
  const std::size_t n = cfg.n_clients;
  const std::size_t per = cfg.classes * cfg.batch / n;
  const AffineParams id = AffineParams::identity(2);
  std::vector<NormErrorCell> cells;
  std::string csv = "level,algo,error\n";
  for (double level : cfg.levels) {
    // the same seed for every level: the per-round pools coincide and only
    // the partition similarity changes
    const Rng master(cfg.seed);
    SharedState fbn = make_shared_state(2, n, per, cfg.beta, cfg.eps);
    RunningStats naive = make_running_stats(2, cfg.beta, cfg.eps);
    SharedState fix_corr = make_shared_state(2, n, per, cfg.beta, cfg.eps);
    RunningStats fix_plain = make_running_stats(2, cfg.beta, cfg.eps);
    RunningStats frozen;
    double err_fbn = 0.0, err_naive = 0.0, err_fix = 0.0;
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
      const RoundPool rp = draw_round_pool(cfg, master, t, level);
      const FeatureBatch& ux = rp.pool.x;
      const Moments gm = batch_moments(ux);
      const FeatureBatch y_central =
          normalize(ux, gm.mean, gm.var_biased, cfg.eps, id);
      err_fbn += normalization_error(
          normalize(ux, fbn.stats.mean, fbn.stats.var, cfg.eps, id), y_central);

      // per-client own-batch normalization, shared by naive and phase-1 fixbn
      FeatureBatch y_local(ux.rows, ux.cols);
      std::vector<Moments> mom(n);
      for (std::size_t i = 0; i < n; ++i) {
        const FeatureBatch bi = rows_block(ux, i * per, (i + 1) * per);
        mom[i] = batch_moments(bi);
        const FeatureBatch yi =
            normalize(bi, mom[i].mean, mom[i].var_biased, cfg.eps, id);
        for (std::size_t r = 0; r < yi.rows; ++r) {
          for (std::size_t c = 0; c < yi.cols; ++c) {
            y_local.at(i * per + r, c) = yi.at(r, c);
          }
        }
      }
      err_naive += normalization_error(y_local, y_central);
      err_fix += t <= cfg.t_switch
                     ? normalization_error(y_local, y_central)
                     : normalization_error(
                           normalize(ux, frozen.mean, frozen.var, cfg.eps, id),
                           y_central);

      std::vector<ClientStatsReport> reps;
      reps.reserve(n);
      for (std::size_t i = 0; i < n; ++i) reps.push_back(fbn_report(mom[i], fbn));
      fbn.stats = fbn_server_aggregate(reps, fbn);
      fbn.round = t;

      reps.clear();
      for (std::size_t i = 0; i < n; ++i) {
        reps.push_back(to_report(update_running(naive, mom[i], per)));
      }
      naive = naive_server_aggregate(reps, cfg.beta, cfg.eps);

      if (t <= cfg.t_switch) {
        reps.clear();
        if (cfg.freeze == FreezeMode::Corrected) {
          for (std::size_t i = 0; i < n; ++i) {
            reps.push_back(fbn_report(mom[i], fix_corr));
          }
          fix_corr.stats = fbn_server_aggregate(reps, fix_corr);
          fix_corr.round = t;
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            reps.push_back(to_report(update_running(fix_plain, mom[i], per)));
          }
          fix_plain = naive_server_aggregate(reps, cfg.beta, cfg.eps);
        }
        if (t == cfg.t_switch) {
          frozen = cfg.freeze == FreezeMode::Corrected ? fix_corr.stats
                                                       : fix_plain;
        }
      }
    }
    const double r = static_cast<double>(cfg.rounds);
    NormErrorCell cell;
    cell.level = level;
    cell.fbn = err_fbn / r;
    cell.fixbn = err_fix / r;
    cell.naive = err_naive / r;
    cells.push_back(cell);
    csv += num(level) + ",fbn," + num(cell.fbn) + "\n";
    csv += num(level) + ",fixbn," + num(cell.fixbn) + "\n";
    csv += num(level) + ",naive," + num(cell.naive) + "\n";
  }
  write_text(fs::path(cfg.out_dir) / "norm_error.csv", csv);
  return cells;
}

ToyTrainingResult run_toy_training(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = prepare(raw, ExperimentKind::ToyTraining);
  const CellData d = make_cell_data(cfg);
  TrainConfig tc = base_train_config(cfg);
  tc.attack = attack_config(cfg);
  tc.grad_agg = aggregator(cfg);
  tc.stats_agg = aggregator(cfg);

  ToyTrainingResult out;
  out.curve = train_with_curve(tc, d);
  out.final_loss = out.curve.back().loss;
  out.final_accuracy = out.curve.back().accuracy;

  std::string csv = "round,loss,accuracy\n";
  for (const auto& r : out.curve) {
    csv += num(r.round) + "," + num(r.loss) + "," + num(r.accuracy) + "\n";
  }
  write_text(fs::path(cfg.out_dir) / "training_curve.csv", csv);

  std::string summary =
      "experiment,algo,partition,level,attack,targets,agg,f,rounds,seed,"
      "final_loss,final_accuracy\n";
  summary += to_string(cfg.experiment) + "," + to_string(cfg.algo) + "," +
             to_string(cfg.partition) + "," + level_value(cfg) + "," +
             to_string(cfg.attack) + "," + to_string(cfg.targets) + "," +
             aggregator_name(aggregator(cfg)) + "," + num(cfg.f) + "," +
             num(cfg.rounds) + "," + std::to_string(cfg.seed) + "," +
             num(out.final_loss) + "," + num(out.final_accuracy) + "\n";
  write_text(fs::path(cfg.out_dir) / "summary.csv", summary);
  return out;
}

RobustnessResult run_robustness(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = prepare(raw, ExperimentKind::Robustness);
  const CellData d = make_cell_data(cfg);
  const TrainConfig clean = base_train_config(cfg);

  TrainConfig exposed = clean;
  exposed.attack = attack_config(cfg);
  exposed.attack.targets = AttackTargets::Both;  // nothing defended, worst case

  TrainConfig defended = clean;
  defended.attack = attack_config(cfg);
  if (attacks_stats(defended.attack)) defended.stats_agg = aggregator(cfg);
  if (attacks_gradients(defended.attack)) defended.grad_agg = aggregator(cfg);

  RobustnessResult out;
  out.no_attack = train_with_curve(clean, d);
  out.no_defense = train_with_curve(exposed, d);
  out.defense = train_with_curve(defended, d);

  std::string csv = "scenario,round,loss,accuracy\n";
  append_curve(csv, "no_attack", out.no_attack);
  append_curve(csv, "no_defense", out.no_defense);
  append_curve(csv, "defense", out.defense);
  write_text(fs::path(cfg.out_dir) / "robustness_curves.csv", csv);

  std::string summary =
      "scenario,algo,partition,level,attack,targets,agg,f,rounds,seed,"
      "final_accuracy\n";
  const std::string tail = "," + num(cfg.rounds) + "," +
                           std::to_string(cfg.seed) + ",";
  const std::string cell = to_string(cfg.algo) + "," +
                           to_string(cfg.partition) + "," + level_value(cfg);
  summary += "no_attack," + cell + ",none," + to_string(cfg.targets) +
             ",mean,0" + tail + num(out.no_attack.back().accuracy) + "\n";
  summary += "no_defense," + cell + "," + to_string(cfg.attack) + ",both,mean," +
             num(cfg.f) + tail + num(out.no_defense.back().accuracy) + "\n";
  summary += "defense," + cell + "," + to_string(cfg.attack) + "," +
             to_string(cfg.targets) + "," + aggregator_name(aggregator(cfg)) +
             "," + num(cfg.f) + tail + num(out.defense.back().accuracy) + "\n";
  write_text(fs::path(cfg.out_dir) / "robustness_summary.csv", summary);
  return out;
}

}  // namespace fednorm
