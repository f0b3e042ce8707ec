#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fednorm/rng.hpp"
#include "fednorm/statkernels.hpp"

namespace fednorm {

struct LabeledDataset {
  FeatureBatch x;
  std::vector<int> labels;

  LabeledDataset() : x(0, 0) {}
  LabeledDataset(std::size_t rows, std::size_t cols)
      : x(rows, cols), labels(rows, 0) {}
};

// Gaussian blobs centered on a circle of radius 10, one blob per component.
// Rows come out component-major; label = component index.
LabeledDataset gaussian_ring(std::size_t components, std::size_t per_component,
                             double var, Rng& rng);

// Splits indices across clients with tunable label similarity. gamma = 1 is a
// uniform random split, gamma = 0 deals label-sorted contiguous chunks, values
// in between mix the two pools. Drops a random remainder so clients get equal
// counts.
std::vector<std::vector<std::size_t>> gamma_split(const std::vector<int>& labels,
                                                  std::size_t n_clients,
                                                  double gamma, Rng& rng);

// Per-class client proportions drawn from a symmetric Dirichlet(alpha).
// Redraws everything if some client ends up empty.
std::vector<std::vector<std::size_t>> dirichlet_split(
    const std::vector<int>& labels, std::size_t n_clients, double alpha,
    Rng& rng);

LabeledDataset take_rows(const LabeledDataset& d,
                         const std::vector<std::size_t>& idx);

// header: x0,..,x{cols-1},label; doubles printed with %.17g so they round-trip
void write_labeled_csv(const std::string& path, const LabeledDataset& d);
LabeledDataset read_labeled_csv(const std::string& path);

}  // namespace fednorm
