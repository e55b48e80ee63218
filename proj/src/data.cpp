#include "pmsfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmsfl/error.hpp"

namespace pmsfl::data {

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "gaussian-blobs") return DatasetKind::kGaussianBlobs;
  if (name == "two-moons-like") return DatasetKind::kTwoMoonsLike;
  if (name == "tiny-grid-images") return DatasetKind::kTinyGridImages;
  fail(ErrorCode::kInvalidConfig, "unknown dataset kind: " + name);
}

const char* dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kGaussianBlobs: return "gaussian-blobs";
    case DatasetKind::kTwoMoonsLike: return "two-moons-like";
    case DatasetKind::kTinyGridImages: return "tiny-grid-images";
  }
  return "unknown";
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

Dataset make_blobs(const DatasetSpec& spec, Rng& rng) {
  Dataset ds;
  ds.dim = spec.dim;
  ds.classes = spec.classes;
  constexpr double kSeparation = 3.0;
  // Random unit directions scaled by the separation give distinct means;
  // at noise = 0 every sample sits exactly on its class mean.
  std::vector<std::vector<double>> means(spec.classes);
  for (auto& mean : means) {
    mean.resize(spec.dim);
    double norm2 = 0.0;
    for (double& v : mean) {
      v = rng.normal();
      norm2 += v * v;
    }
    const double scale = kSeparation / std::sqrt(std::max(norm2, 1e-300));
    for (double& v : mean) v *= scale;
  }
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      std::vector<double> x(spec.dim);
      for (std::size_t j = 0; j < spec.dim; ++j)
        x[j] = means[c][j] + spec.noise * rng.normal();
      ds.features.push_back(std::move(x));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Dataset make_moons(const DatasetSpec& spec, Rng& rng) {
  if (spec.classes != 2)
    fail(ErrorCode::kInvalidConfig, "two-moons-like requires classes = 2");
  if (spec.dim < 2)
    fail(ErrorCode::kInvalidConfig, "two-moons-like requires dim >= 2");
  Dataset ds;
  ds.dim = spec.dim;
  ds.classes = 2;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      const double t = 3.14159265358979323846 * rng.uniform01();
      std::vector<double> x(spec.dim, 0.0);
      if (c == 0) {
        x[0] = std::cos(t);
        x[1] = std::sin(t);
      } else {
        x[0] = 1.0 - std::cos(t);
        x[1] = 0.5 - std::sin(t);
      }
      for (std::size_t j = 0; j < spec.dim; ++j)
        x[j] += spec.noise * rng.normal() * (j < 2 ? 1.0 : 0.1);
      ds.features.push_back(std::move(x));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Dataset make_grid_images(const DatasetSpec& spec, Rng& rng) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(
      static_cast<double>(spec.dim))));
  if (side * side != spec.dim)
    fail(ErrorCode::kInvalidConfig,
         "tiny-grid-images requires dim to be a perfect square");
  Dataset ds;
  ds.dim = spec.dim;
  ds.classes = spec.classes;
  // One fixed binary cell pattern per class, drawn once per dataset.
  std::vector<std::vector<double>> patterns(spec.classes);
  for (auto& p : patterns) {
    p.resize(spec.dim);
    for (double& v : p) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      std::vector<double> x(spec.dim);
      for (std::size_t j = 0; j < spec.dim; ++j)
        x[j] = patterns[c][j] + spec.noise * rng.normal();
      ds.features.push_back(std::move(x));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

}  // namespace

Dataset synthetic_dataset(const DatasetSpec& spec) {
  if (spec.classes == 0 || spec.dim == 0 || spec.samples_per_class == 0)
    fail(ErrorCode::kInvalidConfig, "synthetic_dataset: sizes must be positive");
  Rng rng = Rng::derive(spec.seed, Rng::tag("dataset"),
                        static_cast<std::uint64_t>(spec.kind));
  switch (spec.kind) {
    case DatasetKind::kGaussianBlobs: return make_blobs(spec, rng);
    case DatasetKind::kTwoMoonsLike: return make_moons(spec, rng);
    case DatasetKind::kTinyGridImages: return make_grid_images(spec, rng);
  }
  fail(ErrorCode::kInvalidConfig, "synthetic_dataset: bad kind");
}

std::vector<std::vector<std::size_t>> dirichlet_partition(
    const std::vector<std::size_t>& labels, std::size_t n_clients,
    double alpha, Rng& rng) {
  if (n_clients == 0)
    fail(ErrorCode::kInvalidConfig, "dirichlet_partition: n_clients >= 1");
  if (!(alpha > 0.0))
    fail(ErrorCode::kInvalidConfig, "dirichlet_partition: alpha > 0");
  if (labels.size() < n_clients)
    fail(ErrorCode::kInvalidConfig,
         "dirichlet_partition: fewer samples than clients");

  std::size_t n_classes = 0;
  for (std::size_t l : labels) n_classes = std::max(n_classes, l + 1);
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(i);

  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<std::size_t>> parts(n_clients);
    for (auto& cls : by_class) {
      if (cls.empty()) continue;
      std::vector<std::size_t> order = cls;
      shuffle_indices(order, rng);
      // Dirichlet draw via normalized gammas.
      std::vector<double> p(n_clients);
      double total = 0.0;
      for (double& v : p) {
        v = rng.gamma(alpha);
        total += v;
      }
      if (total <= 0.0) total = 1.0;
      // Largest-remainder apportionment of the class counts.
      std::vector<std::size_t> counts(n_clients, 0);
      std::vector<std::pair<double, std::size_t>> rema(n_clients);
      std::size_t assigned = 0;
      for (std::size_t i = 0; i < n_clients; ++i) {
        const double share = p[i] / total * static_cast<double>(order.size());
        counts[i] = static_cast<std::size_t>(std::floor(share));
        rema[i] = {share - std::floor(share), i};
        assigned += counts[i];
      }
      std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t i = 0; assigned < order.size(); ++i, ++assigned)
        ++counts[rema[i % n_clients].second];
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n_clients; ++i) {
        for (std::size_t k = 0; k < counts[i]; ++k)
          parts[i].push_back(order[pos++]);
      }
    }
    const bool degenerate = std::any_of(
        parts.begin(), parts.end(), [](const auto& v) { return v.empty(); });
    if (!degenerate) {
      for (auto& part : parts) std::sort(part.begin(), part.end());
      return parts;
    }
  }
  fail(ErrorCode::kInvalidConfig,
       "dirichlet_partition: could not produce a non-degenerate partition");
}

std::vector<std::vector<std::size_t>> personalized_partition(
    const std::vector<std::size_t>& labels, std::size_t n_clients,
    std::size_t classes_per_client, Rng& rng) {
  if (n_clients == 0)
    fail(ErrorCode::kInvalidConfig, "personalized_partition: n_clients >= 1");
  if (classes_per_client == 0)
    fail(ErrorCode::kInvalidConfig,
         "personalized_partition: classes_per_client >= 1");

  std::size_t n_classes = 0;
  for (std::size_t l : labels) n_classes = std::max(n_classes, l + 1);
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(i);
  for (const auto& cls : by_class)
    if (cls.empty())
      fail(ErrorCode::kInvalidConfig, "personalized_partition: empty class");

  const std::size_t cpc = std::min(classes_per_client, n_classes);
  // Round-robin class assignment; classes wrap when clients need more
  // than are available.
  std::vector<std::vector<std::size_t>> class_clients(n_classes);
  for (std::size_t i = 0; i < n_clients; ++i)
    for (std::size_t j = 0; j < cpc; ++j)
      class_clients[(i * cpc + j) % n_classes].push_back(i);

  std::vector<std::vector<std::size_t>> parts(n_clients);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto& holders = class_clients[c];
    if (holders.empty()) continue;
    std::vector<std::size_t> order = by_class[c];
    shuffle_indices(order, rng);
    if (order.size() < holders.size())
      fail(ErrorCode::kInvalidConfig,
           "personalized_partition: class " + std::to_string(c) +
               " has fewer samples than holders");
    for (std::size_t i = 0; i < order.size(); ++i)
      parts[holders[i % holders.size()]].push_back(order[i]);
  }
  for (auto& part : parts) std::sort(part.begin(), part.end());
  return parts;
}

TrainTestSplit train_test_split(const std::vector<std::size_t>& indices,
                                double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    fail(ErrorCode::kInvalidConfig, "train_test_split: fraction in (0,1]");
  std::vector<std::size_t> order = indices;
  shuffle_indices(order, rng);
  std::size_t n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(order.size())));
  if (n_train == 0) n_train = order.size() > 1 ? 1 : order.size();
  if (n_train == order.size() && order.size() > 1 && train_fraction < 1.0)
    --n_train;
  TrainTestSplit split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.test.assign(order.begin() + n_train, order.end());
  return split;
}

}  // namespace pmsfl::data
