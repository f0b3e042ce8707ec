#include "fednorm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fednorm {

LabeledDataset gaussian_ring(std::size_t components, std::size_t per_component,
                             double var, Rng& rng) {
  if (components == 0 || per_component == 0) {
    throw std::invalid_argument("gaussian_ring: components and per_component must be positive");
  }
  if (var < 0.0) throw std::invalid_argument("gaussian_ring: var must be non-negative");
  const double radius = 10.0;
  const double sd = std::sqrt(var);
  LabeledDataset out(components * per_component, 2);
  std::size_t row = 0;
  for (std::size_t i = 0; i < components; ++i) {
    const double angle =
        2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(components);
    const double cx = radius * std::cos(angle);
    const double cy = radius * std::sin(angle);
    for (std::size_t j = 0; j < per_component; ++j, ++row) {
      out.x.at(row, 0) = rng.normal(cx, sd);
      out.x.at(row, 1) = rng.normal(cy, sd);
      out.labels[row] = static_cast<int>(i);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> gamma_split(const std::vector<int>& labels,
                                                  std::size_t n_clients,
                                                  double gamma, Rng& rng) {
  if (n_clients == 0) throw std::invalid_argument("gamma_split: n_clients must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("gamma_split: gamma must lie in [0, 1]");
  }
  const std::size_t per = labels.size() / n_clients;
  if (per == 0) throw std::invalid_argument("gamma_split: fewer samples than clients");

  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  idx.resize(per * n_clients);  // remainder dropped at random via the shuffle

  std::size_t homog = static_cast<std::size_t>(
      std::llround(gamma * static_cast<double>(per)));
  homog = std::min(homog, per);
  const std::size_t heterog = per - homog;

  std::vector<std::size_t> pool_h(idx.begin(),
                                  idx.begin() + static_cast<std::ptrdiff_t>(homog * n_clients));
  std::vector<std::size_t> pool_s(idx.begin() + static_cast<std::ptrdiff_t>(homog * n_clients),
                                  idx.end());
  std::sort(pool_s.begin(), pool_s.end(), [&](std::size_t a, std::size_t b) {
    if (labels[a] != labels[b]) return labels[a] < labels[b];
    return a < b;
  });

  std::vector<std::vector<std::size_t>> clients(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) {
    auto& c = clients[i];
    c.reserve(per);
    c.insert(c.end(), pool_h.begin() + static_cast<std::ptrdiff_t>(i * homog),
             pool_h.begin() + static_cast<std::ptrdiff_t>((i + 1) * homog));
    c.insert(c.end(), pool_s.begin() + static_cast<std::ptrdiff_t>(i * heterog),
             pool_s.begin() + static_cast<std::ptrdiff_t>((i + 1) * heterog));
  }
  return clients;
}

std::vector<std::vector<std::size_t>> dirichlet_split(
    const std::vector<int>& labels, std::size_t n_clients, double alpha,
    Rng& rng) {
  if (n_clients == 0) throw std::invalid_argument("dirichlet_split: n_clients must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_split: alpha must be positive");
  if (labels.size() < n_clients) {
    throw std::invalid_argument("dirichlet_split: fewer samples than clients");
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  const std::vector<double> conc(n_clients, alpha);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::vector<std::size_t>> clients(n_clients);
    for (const auto& [label, members] : by_class) {
      auto p = rng.dirichlet(conc);
      std::vector<double> cum(n_clients);
      std::partial_sum(p.begin(), p.end(), cum.begin());
      for (std::size_t i : members) {
        const double u = rng.uniform();
        std::size_t j = 0;
        while (j + 1 < n_clients && u >= cum[j]) ++j;
        clients[j].push_back(i);
      }
    }
    const bool ok = std::none_of(clients.begin(), clients.end(),
                                 [](const auto& c) { return c.empty(); });
    if (ok) return clients;
  }
  throw std::runtime_error("dirichlet_split: some client stayed empty after 100 attempts");
}

LabeledDataset take_rows(const LabeledDataset& d,
                         const std::vector<std::size_t>& idx) {
  LabeledDataset out(idx.size(), d.x.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= d.x.rows) throw std::invalid_argument("take_rows: index out of range");
    for (std::size_t c = 0; c < d.x.cols; ++c) out.x.at(r, c) = d.x.at(idx[r], c);
    out.labels[r] = d.labels[idx[r]];
  }
  return out;
}

void write_labeled_csv(const std::string& path, const LabeledDataset& d) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_labeled_csv: cannot open " + path);
  for (std::size_t c = 0; c < d.x.cols; ++c) f << 'x' << c << ',';
  f << "label\n";
  char buf[40];
  for (std::size_t r = 0; r < d.x.rows; ++r) {
    for (std::size_t c = 0; c < d.x.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", d.x.at(r, c));
      f << buf << ',';
    }
    f << d.labels[r] << '\n';
  }
  if (!f) throw std::runtime_error("write_labeled_csv: write failed for " + path);
}

LabeledDataset read_labeled_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_labeled_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_labeled_csv: empty file " + path);
  const std::size_t cols = static_cast<std::size_t>(
      std::count(line.begin(), line.end(), ','));

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!std::getline(ss, cell, ',')) {
        throw std::runtime_error("read_labeled_csv: short row at line " + std::to_string(lineno));
      }
      values.push_back(std::stod(cell));
    }
    if (!std::getline(ss, cell)) {
      throw std::runtime_error("read_labeled_csv: missing label at line " + std::to_string(lineno));
    }
    labels.push_back(std::stoi(cell));
  }
  LabeledDataset out(labels.size(), cols);
  out.x.data = std::move(values);
  out.labels = std::move(labels);
  return out;
}

}  // namespace fednorm
