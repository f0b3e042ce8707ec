#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fednorm/rng.hpp"
#include "fednorm/statkernels.hpp"

namespace fednorm {

enum class LayerKind { Dense, Norm, Relu, LogSoftmax };

struct LayerSpec {
  LayerKind kind;
  std::size_t in = 0;   // Dense fan-in / Norm width
  std::size_t out = 0;  // Dense fan-out / Norm width
};

// Dense(in, hidden) -> Norm -> Relu -> Dense(hidden, classes) -> LogSoftmax
std::vector<LayerSpec> toy_arch(std::size_t in, std::size_t hidden,
                                std::size_t classes);

std::size_t param_count(const std::vector<LayerSpec>& arch);
std::size_t norm_layer_count(const std::vector<LayerSpec>& arch);

// trainable parameters live in one flat vector, layer by layer:
// Dense contributes W (out x in, row-major) then b, Norm scale then shift
struct Model {
  std::vector<LayerSpec> arch;
  std::vector<double> params;
  std::vector<RunningStats> norm_stats;  // one per Norm layer
};

// Xavier-uniform dense weights, zero biases, identity norm affine
Model make_model(const std::vector<LayerSpec>& arch, Rng& rng,
                 double momentum = 0.1, double eps = 1e-5);

// where Norm layers take their statistics from during a forward pass:
// Batch recomputes them from the activations, Running reads model.norm_stats
enum class NormSource { Batch, Running };

struct ForwardCache {
  FeatureBatch input{0, 0};
  std::vector<FeatureBatch> layer_inputs;  // activation entering each layer
  std::vector<FeatureBatch> xhat;          // per norm layer
  std::vector<std::vector<double>> rstd;   // per norm layer, 1/sqrt(var+eps)
  NormSource source = NormSource::Batch;
  std::vector<double> params_snapshot;     // guards against stale backward
  FeatureBatch output{0, 0};
};

struct ForwardResult {
  FeatureBatch output;
  // batch moments of every norm layer's input, whatever source was used;
  // this is what a client reports upstream
  std::vector<Moments> norm_moments;
};

ForwardResult forward(const Model& m, const FeatureBatch& x, NormSource source,
                      ForwardCache* cache = nullptr);

// mean negative log-likelihood of the true labels under log-probabilities
double nll_loss(const FeatureBatch& logprobs, const std::vector<int>& labels);

// gradient of nll_loss w.r.t. the flat parameter vector; the cache must come
// from a forward pass with the model's current parameters
std::vector<double> backward(const Model& m, const ForwardCache& cache,
                             const std::vector<int>& labels);

struct SgdState {
  std::vector<double> velocity;
};

void sgd_update(Model& m, SgdState& opt, const std::vector<double>& grad,
                double lr, double momentum = 0.99);

// step schedule over thirds of the run; t is the 1-based round index
double lr_at(std::size_t t, std::size_t total_rounds, double base = 0.1);

std::vector<std::size_t> predict(const Model& m, const FeatureBatch& x);
double accuracy(const Model& m, const FeatureBatch& x,
                const std::vector<int>& labels);

// binary checkpoint, bit-exact round trip on the same platform
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace fednorm
