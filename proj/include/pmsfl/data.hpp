#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmsfl/rng.hpp"

namespace pmsfl::data {

struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

enum class DatasetKind { kGaussianBlobs, kTwoMoonsLike, kTinyGridImages };

DatasetKind dataset_kind_from_name(const std::string& name);
const char* dataset_kind_name(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kGaussianBlobs;
  std::size_t classes = 8;
  std::size_t dim = 16;
  std::size_t samples_per_class = 120;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

// Reproducible labeled data, samples grouped class-major. Blobs are
// linearly separable at noise = 0.
Dataset synthetic_dataset(const DatasetSpec& spec);

// Class-wise Dirichlet(alpha) split across clients; degenerate draws that
// leave a client empty are resampled. Returns a set partition of all
// sample indices.
std::vector<std::vector<std::size_t>> dirichlet_partition(
    const std::vector<std::size_t>& labels, std::size_t n_clients,
    double alpha, Rng& rng);

// Each client holds samples from exactly classes_per_client classes,
// assigned round-robin; clients sharing a class split its samples evenly.
std::vector<std::vector<std::size_t>> personalized_partition(
    const std::vector<std::size_t>& labels, std::size_t n_clients,
    std::size_t classes_per_client, Rng& rng);

struct TrainTestSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Shuffled split; the test side gets at least one sample whenever the
// client holds two or more.
TrainTestSplit train_test_split(const std::vector<std::size_t>& indices,
                                double train_fraction, Rng& rng);

}  // namespace pmsfl::data
