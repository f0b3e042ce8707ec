#include "fednorm/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace fednorm {

namespace {

// stream tags so model init and batch draws never collide
constexpr std::uint64_t kModelStream = 0x6d6f64656c;
constexpr std::uint64_t kBatchStream = 0x6261746368;

std::vector<std::size_t> sample_without_replacement(
    const std::vector<std::size_t>& pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> tmp = pool;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick =
        j + static_cast<std::size_t>(rng.below(tmp.size() - j));
    std::swap(tmp[j], tmp[pick]);
  }
  tmp.resize(k);
  return tmp;
}

void fold_momentum(std::vector<double>& velocity,
                   const std::vector<double>& grad, double momentum) {
  if (velocity.empty()) velocity.assign(grad.size(), 0.0);
  for (std::size_t j = 0; j < grad.size(); ++j) {
    velocity[j] = momentum * velocity[j] + grad[j];
  }
}

SharedState layer_shared(const TrainState& st, std::size_t layer) {
  SharedState sh;
  sh.stats = st.model.norm_stats[layer];
  sh.round = st.round;
  sh.n_clients = st.cfg.n_clients;
  sh.k_per_client = st.cfg.batch;
  return sh;
}

}  // namespace

TrainState make_train_state(const TrainConfig& cfg_in, LabeledDataset data,
                            std::vector<std::vector<std::size_t>> parts) {
  TrainConfig cfg = cfg_in;
  if (cfg.n_clients == 0) throw std::invalid_argument("train: needs at least one client");
  if (cfg.batch == 0) throw std::invalid_argument("train: batch size must be positive");
  if (cfg.rounds == 0) throw std::invalid_argument("train: needs at least one round");
  if (cfg.n_clients * cfg.batch < 2) {
    throw std::invalid_argument("train: union batch needs at least 2 samples");
  }
  if ((cfg.backend == Backend::Naive || cfg.backend == Backend::FixBn) &&
      cfg.batch < 2) {
    throw std::invalid_argument(
        "train: per-client batch statistics need at least 2 samples");
  }
  if (!(cfg.beta > 0.0 && cfg.beta <= 1.0)) {
    throw std::invalid_argument("train: beta must lie in (0, 1]");
  }
  if (cfg.eps < 0.0) throw std::invalid_argument("train: eps must be non-negative");
  if (cfg.base_lr <= 0.0) {
    throw std::invalid_argument("train: base learning rate must be positive");
  }
  if (!(cfg.sgd_momentum >= 0.0 && cfg.sgd_momentum < 1.0)) {
    throw std::invalid_argument("train: sgd momentum must lie in [0, 1)");
  }
  if (cfg.backend == Backend::FixBn) {
    if (cfg.t_switch == 0) cfg.t_switch = cfg.rounds / 2;
    if (cfg.t_switch == 0 || cfg.t_switch > cfg.rounds) {
      throw std::invalid_argument("train: switch round must lie in [1, rounds]");
    }
  }
  if (cfg.attack.kind != AttackKind::None && 2 * cfg.attack.f >= cfg.n_clients) {
    throw std::invalid_argument("train: attackers must be a strict minority");
  }
  if (parts.size() != cfg.n_clients) {
    throw std::invalid_argument("train: got " + std::to_string(parts.size()) +
                                " partitions for " +
                                std::to_string(cfg.n_clients) + " clients");
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].size() < cfg.batch) {
      throw std::invalid_argument("train: client " + std::to_string(i) +
                                  " has fewer samples than the batch size");
    }
  }
  if (data.x.rows == 0 || data.x.cols == 0) {
    throw std::invalid_argument("train: empty dataset");
  }

  TrainState st;
  st.cfg = cfg;
  st.data = std::move(data);
  st.parts = std::move(parts);
  st.master = Rng(cfg.seed);
  Rng init_rng = st.master.split(kModelStream);
  st.model = make_model(toy_arch(st.data.x.cols, cfg.hidden, cfg.classes),
                        init_rng, cfg.beta, cfg.eps);
  st.velocity.assign(cfg.n_clients, {});
  return st;
}

double run_round(TrainState& st) {
  const TrainConfig& cfg = st.cfg;
  if (st.round >= cfg.rounds) {
    throw std::invalid_argument("run_round: run is already complete");
  }
  const std::size_t t = st.round + 1;
  const std::size_t n = cfg.n_clients;
  const double lr = lr_at(t, cfg.rounds, cfg.base_lr);
  const std::size_t n_norm = norm_layer_count(st.model.arch);

  // the same per-(round, client) streams for every backend under one seed,
  // so runs that differ only in the backend see identical batches
  std::vector<LabeledDataset> batches;
  batches.reserve(n);
  Rng round_rng = st.master.split(kBatchStream).split(t);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = round_rng.split(i);
    batches.push_back(
        take_rows(st.data, sample_without_replacement(st.parts[i], cfg.batch, r)));
  }

  if (cfg.backend == Backend::Centralized) {
    LabeledDataset uni(0, st.data.x.cols);
    for (const auto& b : batches) {
      uni.x.rows += b.x.rows;
      uni.x.data.insert(uni.x.data.end(), b.x.data.begin(), b.x.data.end());
      uni.labels.insert(uni.labels.end(), b.labels.begin(), b.labels.end());
    }
    ForwardCache cache;
    const auto res = forward(st.model, uni.x, NormSource::Batch, &cache);
    const double loss = nll_loss(res.output, uni.labels);
    const auto grad = backward(st.model, cache, uni.labels);
    for (std::size_t l = 0; l < n_norm; ++l) {
      st.model.norm_stats[l] =
          update_running(st.model.norm_stats[l], res.norm_moments[l], uni.x.rows);
    }
    fold_momentum(st.velocity[0], grad, cfg.sgd_momentum);
    for (std::size_t j = 0; j < grad.size(); ++j) {
      st.model.params[j] -= lr * st.velocity[0][j];
    }
    st.round = t;
    return loss;
  }

  const bool batch_source =
      cfg.backend == Backend::Naive ||
      (cfg.backend == Backend::FixBn && t <= cfg.t_switch);
  const bool update_stats = cfg.backend == Backend::Fbn || batch_source;
  const bool corrected_reports =
      cfg.backend == Backend::Fbn ||
      (cfg.backend == Backend::FixBn && cfg.freeze == FreezeMode::Corrected);
  const NormSource source =
      batch_source ? NormSource::Batch : NormSource::Running;

  VectorSet sent(n);
  std::vector<std::vector<ClientStatsReport>> reports(n_norm);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ForwardCache cache;
    const auto res = forward(st.model, batches[i].x, source, &cache);
    loss_sum += nll_loss(res.output, batches[i].labels);
    const auto grad = backward(st.model, cache, batches[i].labels);
    fold_momentum(st.velocity[i], grad, cfg.sgd_momentum);
    sent[i] = st.velocity[i];
    if (update_stats) {
      for (std::size_t l = 0; l < n_norm; ++l) {
        if (corrected_reports) {
          reports[l].push_back(fbn_report(res.norm_moments[l], layer_shared(st, l)));
        } else {
          reports[l].push_back(to_report(update_running(
              st.model.norm_stats[l], res.norm_moments[l], cfg.batch)));
        }
      }
    }
  }

  if (attacks_gradients(cfg.attack)) attack_vectors(sent, cfg.attack);
  if (update_stats && attacks_stats(cfg.attack)) {
    for (auto& layer_reports : reports) attack_reports(layer_reports, cfg.attack);
  }

  const auto step = cfg.grad_agg.apply(sent);
  if (update_stats) {
    for (std::size_t l = 0; l < n_norm; ++l) {
      if (corrected_reports) {
        st.model.norm_stats[l] =
            robust_stats_aggregate(reports[l], layer_shared(st, l), cfg.stats_agg);
      } else {
        st.model.norm_stats[l] =
            robust_stats_plain(reports[l], cfg.beta, cfg.eps, cfg.stats_agg);
      }
    }
  }
  // FixBn: past t_switch nothing touches norm_stats, they stay frozen
  for (std::size_t j = 0; j < step.size(); ++j) {
    st.model.params[j] -= lr * step[j];
  }
  st.round = t;
  return loss_sum / static_cast<double>(n);
}

void train(TrainState& st) {
  while (st.round < st.cfg.rounds) (void)run_round(st);
}

double evaluate_accuracy(const TrainState& st, const LabeledDataset& test) {
  return accuracy(st.model, test.x, test.labels);
}

double normalization_error(const FeatureBatch& a, const FeatureBatch& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("normalization_error: shape mismatch");
  }
  if (a.rows == 0) throw std::invalid_argument("normalization_error: empty batches");
  double total = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) {
      const double dv = a.at(r, c) - b.at(r, c);
      d2 += dv * dv;
    }
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(a.rows);
}

}  // namespace fednorm
