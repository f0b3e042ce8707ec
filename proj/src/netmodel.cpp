#include "fednorm/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace fednorm {

namespace {

std::size_t layer_param_count(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Dense:
      return s.out * s.in + s.out;
    case LayerKind::Norm:
      return 2 * s.in;
    case LayerKind::Relu:
    case LayerKind::LogSoftmax:
      return 0;
  }
  throw std::invalid_argument("layer_param_count: unknown layer kind");
}

void check_arch(const std::vector<LayerSpec>& arch) {
  if (arch.empty()) throw std::invalid_argument("model: empty architecture");
  for (const auto& s : arch) {
    if (s.kind == LayerKind::Dense && (s.in == 0 || s.out == 0)) {
      throw std::invalid_argument("model: dense layer with zero width");
    }
    if (s.kind == LayerKind::Norm && (s.in == 0 || s.in != s.out)) {
      throw std::invalid_argument("model: norm layer needs in == out > 0");
    }
  }
}

}  // namespace

std::vector<LayerSpec> toy_arch(std::size_t in, std::size_t hidden,
                                std::size_t classes) {
  if (in == 0 || hidden == 0 || classes == 0) {
    throw std::invalid_argument("toy_arch: widths must be positive");
  }
  return {{LayerKind::Dense, in, hidden},
          {LayerKind::Norm, hidden, hidden},
          {LayerKind::Relu, hidden, hidden},
          {LayerKind::Dense, hidden, classes},
          {LayerKind::LogSoftmax, classes, classes}};
}

std::size_t param_count(const std::vector<LayerSpec>& arch) {
  std::size_t total = 0;
  for (const auto& s : arch) total += layer_param_count(s);
  return total;
}

std::size_t norm_layer_count(const std::vector<LayerSpec>& arch) {
  std::size_t n = 0;
  for (const auto& s : arch) n += (s.kind == LayerKind::Norm) ? 1 : 0;
  return n;
}

Model make_model(const std::vector<LayerSpec>& arch, Rng& rng, double momentum,
                 double eps) {
  check_arch(arch);
  Model m;
  m.arch = arch;
  m.params.reserve(param_count(arch));
  for (const auto& s : arch) {
    if (s.kind == LayerKind::Dense) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(s.in + s.out));
      for (std::size_t j = 0; j < s.out * s.in; ++j) {
        m.params.push_back(rng.uniform(-limit, limit));
      }
      m.params.insert(m.params.end(), s.out, 0.0);
    } else if (s.kind == LayerKind::Norm) {
      m.params.insert(m.params.end(), s.in, 1.0);  // scale
      m.params.insert(m.params.end(), s.in, 0.0);  // shift
      m.norm_stats.push_back(make_running_stats(s.in, momentum, eps));
    }
  }
  return m;
}

ForwardResult forward(const Model& m, const FeatureBatch& x, NormSource source,
                      ForwardCache* cache) {
  check_arch(m.arch);
  if (m.params.size() != param_count(m.arch)) {
    throw std::invalid_argument("forward: parameter vector has wrong length");
  }
  if (m.norm_stats.size() != norm_layer_count(m.arch)) {
    throw std::invalid_argument("forward: wrong number of norm statistics");
  }
  if (x.rows == 0) throw std::invalid_argument("forward: empty batch");

  ForwardResult res{FeatureBatch(0, 0), {}};
  if (cache) {
    cache->input = x;
    cache->layer_inputs.clear();
    cache->xhat.clear();
    cache->rstd.clear();
    cache->source = source;
    cache->params_snapshot = m.params;
  }

  FeatureBatch cur = x;
  std::size_t offset = 0;
  std::size_t norm_idx = 0;
  for (const auto& s : m.arch) {
    if (cache) cache->layer_inputs.push_back(cur);
    switch (s.kind) {
      case LayerKind::Dense: {
        if (cur.cols != s.in) {
          throw std::invalid_argument("forward: dense layer expects " +
                                      std::to_string(s.in) + " columns, got " +
                                      std::to_string(cur.cols));
        }
        const double* W = m.params.data() + offset;
        const double* b = W + s.out * s.in;
        FeatureBatch y(cur.rows, s.out);
        for (std::size_t r = 0; r < cur.rows; ++r) {
          for (std::size_t o = 0; o < s.out; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < s.in; ++i) {
              acc += cur.at(r, i) * W[o * s.in + i];
            }
            y.at(r, o) = acc;
          }
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::Norm: {
        if (cur.cols != s.in) {
          throw std::invalid_argument("forward: norm layer expects " +
                                      std::to_string(s.in) + " columns, got " +
                                      std::to_string(cur.cols));
        }
        const double* scale = m.params.data() + offset;
        const double* shift = scale + s.in;
        const RunningStats& stats = m.norm_stats[norm_idx];
        const Moments mom = batch_moments(cur);
        res.norm_moments.push_back(mom);
        const std::vector<double>& mean =
            (source == NormSource::Batch) ? mom.mean : stats.mean;
        const std::vector<double>& var =
            (source == NormSource::Batch) ? mom.var_biased : stats.var;
        std::vector<double> rstd(s.in);
        for (std::size_t c = 0; c < s.in; ++c) {
          const double denom = var[c] + stats.eps;
          if (!(denom > 0.0)) {
            throw std::runtime_error(
                "forward: non-positive variance at norm column " +
                std::to_string(c));
          }
          rstd[c] = 1.0 / std::sqrt(denom);
        }
        FeatureBatch xh(cur.rows, s.in);
        FeatureBatch y(cur.rows, s.in);
        for (std::size_t r = 0; r < cur.rows; ++r) {
          for (std::size_t c = 0; c < s.in; ++c) {
            const double v = (cur.at(r, c) - mean[c]) * rstd[c];
            xh.at(r, c) = v;
            y.at(r, c) = v * scale[c] + shift[c];
          }
        }
        if (cache) {
          cache->xhat.push_back(xh);
          cache->rstd.push_back(std::move(rstd));
        }
        ++norm_idx;
        cur = std::move(y);
        break;
      }
      case LayerKind::Relu: {
        for (auto& v : cur.data) v = std::max(v, 0.0);
        break;
      }
      case LayerKind::LogSoftmax: {
        for (std::size_t r = 0; r < cur.rows; ++r) {
          double hi = cur.at(r, 0);
          for (std::size_t c = 1; c < cur.cols; ++c) hi = std::max(hi, cur.at(r, c));
          double sum = 0.0;
          for (std::size_t c = 0; c < cur.cols; ++c) {
            sum += std::exp(cur.at(r, c) - hi);
          }
          const double lse = hi + std::log(sum);
          for (std::size_t c = 0; c < cur.cols; ++c) cur.at(r, c) -= lse;
        }
        break;
      }
    }
    offset += layer_param_count(s);
  }
  if (cache) cache->output = cur;
  res.output = std::move(cur);
  return res;
}

double nll_loss(const FeatureBatch& logprobs, const std::vector<int>& labels) {
  if (labels.size() != logprobs.rows) {
    throw std::invalid_argument("nll_loss: label count does not match batch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < logprobs.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logprobs.cols) {
      throw std::invalid_argument("nll_loss: label out of range at row " +
                                  std::to_string(r));
    }
    total -= logprobs.at(r, static_cast<std::size_t>(y));
  }
  return total / static_cast<double>(logprobs.rows);
}

std::vector<double> backward(const Model& m, const ForwardCache& cache,
                             const std::vector<int>& labels) {
  if (cache.params_snapshot != m.params) {
    throw std::invalid_argument(
        "backward: cache was built with different parameters");
  }
  const std::size_t B = cache.input.rows;
  if (labels.size() != B) {
    throw std::invalid_argument("backward: label count does not match batch");
  }
  if (cache.layer_inputs.size() != m.arch.size()) {
    throw std::invalid_argument("backward: cache is incomplete");
  }

  std::vector<double> grad(m.params.size(), 0.0);

  // d(mean NLL)/d(output)
  FeatureBatch dy(B, cache.output.cols);
  for (std::size_t r = 0; r < B; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cache.output.cols) {
      throw std::invalid_argument("backward: label out of range at row " +
                                  std::to_string(r));
    }
    dy.at(r, static_cast<std::size_t>(y)) = -1.0 / static_cast<double>(B);
  }

  // parameter offsets per layer, then walk backwards
  std::vector<std::size_t> offsets(m.arch.size());
  std::size_t off = 0;
  for (std::size_t li = 0; li < m.arch.size(); ++li) {
    offsets[li] = off;
    off += layer_param_count(m.arch[li]);
  }

  std::size_t norm_idx = norm_layer_count(m.arch);
  for (std::size_t step = m.arch.size(); step-- > 0;) {
    const LayerSpec& s = m.arch[step];
    const FeatureBatch& x_in = cache.layer_inputs[step];
    switch (s.kind) {
      case LayerKind::Dense: {
        const double* W = m.params.data() + offsets[step];
        double* dW = grad.data() + offsets[step];
        double* db = dW + s.out * s.in;
        FeatureBatch dx(x_in.rows, s.in);
        for (std::size_t r = 0; r < x_in.rows; ++r) {
          for (std::size_t o = 0; o < s.out; ++o) {
            const double g = dy.at(r, o);
            db[o] += g;
            for (std::size_t i = 0; i < s.in; ++i) {
              dW[o * s.in + i] += g * x_in.at(r, i);
              dx.at(r, i) += g * W[o * s.in + i];
            }
          }
        }
        dy = std::move(dx);
        break;
      }
      case LayerKind::Norm: {
        --norm_idx;
        const double* scale = m.params.data() + offsets[step];
        double* dscale = grad.data() + offsets[step];
        double* dshift = dscale + s.in;
        const FeatureBatch& xh = cache.xhat[norm_idx];
        const std::vector<double>& rstd = cache.rstd[norm_idx];
        FeatureBatch dxhat(x_in.rows, s.in);
        for (std::size_t r = 0; r < x_in.rows; ++r) {
          for (std::size_t c = 0; c < s.in; ++c) {
            const double g = dy.at(r, c);
            dscale[c] += g * xh.at(r, c);
            dshift[c] += g;
            dxhat.at(r, c) = g * scale[c];
          }
        }
        FeatureBatch dx(x_in.rows, s.in);
        if (cache.source == NormSource::Batch) {
          const double inv_b = 1.0 / static_cast<double>(x_in.rows);
          for (std::size_t c = 0; c < s.in; ++c) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t r = 0; r < x_in.rows; ++r) {
              mean_g += dxhat.at(r, c);
              mean_gx += dxhat.at(r, c) * xh.at(r, c);
            }
            mean_g *= inv_b;
            mean_gx *= inv_b;
            for (std::size_t r = 0; r < x_in.rows; ++r) {
              dx.at(r, c) = rstd[c] * (dxhat.at(r, c) - mean_g -
                                       xh.at(r, c) * mean_gx);
            }
          }
        } else {
          for (std::size_t r = 0; r < x_in.rows; ++r) {
            for (std::size_t c = 0; c < s.in; ++c) {
              dx.at(r, c) = dxhat.at(r, c) * rstd[c];
            }
          }
        }
        dy = std::move(dx);
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t j = 0; j < dy.data.size(); ++j) {
          if (x_in.data[j] <= 0.0) dy.data[j] = 0.0;
        }
        break;
      }
      case LayerKind::LogSoftmax: {
        const FeatureBatch& out = (step + 1 < m.arch.size())
                                      ? cache.layer_inputs[step + 1]
                                      : cache.output;
        FeatureBatch dx(dy.rows, dy.cols);
        for (std::size_t r = 0; r < dy.rows; ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < dy.cols; ++c) total += dy.at(r, c);
          for (std::size_t c = 0; c < dy.cols; ++c) {
            dx.at(r, c) = dy.at(r, c) - std::exp(out.at(r, c)) * total;
          }
        }
        dy = std::move(dx);
        break;
      }
    }
  }
  return grad;
}

void sgd_update(Model& m, SgdState& opt, const std::vector<double>& grad,
                double lr, double momentum) {
  if (grad.size() != m.params.size()) {
    throw std::invalid_argument("sgd_update: gradient has wrong length");
  }
  if (opt.velocity.empty()) opt.velocity.assign(grad.size(), 0.0);
  if (opt.velocity.size() != grad.size()) {
    throw std::invalid_argument("sgd_update: optimizer state has wrong length");
  }
  for (std::size_t j = 0; j < grad.size(); ++j) {
    opt.velocity[j] = momentum * opt.velocity[j] + grad[j];
    m.params[j] -= lr * opt.velocity[j];
  }
}

double lr_at(std::size_t t, std::size_t total_rounds, double base) {
  if (t == 0 || total_rounds == 0) {
    throw std::invalid_argument("lr_at: rounds are 1-based");
  }
  if (base <= 0.0) throw std::invalid_argument("lr_at: base rate must be positive");
  if (3 * t < total_rounds) return base;
  if (3 * t < 2 * total_rounds) return base / 2.0;
  return base / 3.0;
}

std::vector<std::size_t> predict(const Model& m, const FeatureBatch& x) {
  const auto res = forward(m, x, NormSource::Running);
  std::vector<std::size_t> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < res.output.cols; ++c) {
      if (res.output.at(r, c) > res.output.at(r, best)) best = c;
    }
    out[r] = best;
  }
  return out;
}

double accuracy(const Model& m, const FeatureBatch& x,
                const std::vector<int>& labels) {
  if (labels.size() != x.rows) {
    throw std::invalid_argument("accuracy: label count does not match batch");
  }
  if (x.rows == 0) throw std::invalid_argument("accuracy: empty batch");
  const auto pred = predict(m, x);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    if (labels[r] >= 0 && pred[r] == static_cast<std::size_t>(labels[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows);
}

namespace {

constexpr char kMagic[4] = {'F', 'N', 'M', '1'};

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& f, const char* what) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error(std::string("load_checkpoint: truncated ") + what);
  return v;
}

void put_doubles(std::ofstream& f, const std::vector<double>& v) {
  put<std::uint64_t>(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::ifstream& f, const char* what) {
  const auto n = get<std::uint64_t>(f, what);
  if (n > (1u << 28)) throw std::runtime_error("load_checkpoint: implausible size");
  std::vector<double> v(n);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error(std::string("load_checkpoint: truncated ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(f, m.arch.size());
  for (const auto& s : m.arch) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(s.kind));
    put<std::uint64_t>(f, s.in);
    put<std::uint64_t>(f, s.out);
  }
  put_doubles(f, m.params);
  put<std::uint64_t>(f, m.norm_stats.size());
  for (const auto& st : m.norm_stats) {
    put_doubles(f, st.mean);
    put_doubles(f, st.var);
    put(f, st.momentum);
    put(f, st.eps);
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("load_checkpoint: not a model checkpoint: " + path);
  }
  Model m;
  const auto layers = get<std::uint64_t>(f, "layer count");
  if (layers > 4096) throw std::runtime_error("load_checkpoint: implausible layer count");
  for (std::uint64_t i = 0; i < layers; ++i) {
    const auto kind = get<std::uint32_t>(f, "layer kind");
    if (kind > static_cast<std::uint32_t>(LayerKind::LogSoftmax)) {
      throw std::runtime_error("load_checkpoint: unknown layer kind");
    }
    LayerSpec s;
    s.kind = static_cast<LayerKind>(kind);
    s.in = get<std::uint64_t>(f, "layer width");
    s.out = get<std::uint64_t>(f, "layer width");
    m.arch.push_back(s);
  }
  m.params = get_doubles(f, "parameters");
  if (m.params.size() != param_count(m.arch)) {
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  }
  const auto norms = get<std::uint64_t>(f, "norm stats count");
  if (norms != norm_layer_count(m.arch)) {
    throw std::runtime_error("load_checkpoint: norm stats count mismatch");
  }
  for (std::uint64_t i = 0; i < norms; ++i) {
    RunningStats st;
    st.mean = get_doubles(f, "norm mean");
    st.var = get_doubles(f, "norm var");
    st.momentum = get<double>(f, "momentum");
    st.eps = get<double>(f, "eps");
    if (st.mean.size() != st.var.size()) {
      throw std::runtime_error("load_checkpoint: norm stats width mismatch");
    }
    m.norm_stats.push_back(std::move(st));
  }
  return m;
}

}  // namespace fednorm
