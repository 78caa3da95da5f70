#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "fedsim/models.hpp"
#include "fedsim/numeric.hpp"

namespace fedsim {

struct Dataset {
  Matrix features;
  std::vector<double> labels;
  std::size_t class_count = 0;  // 0 for regression targets

  std::size_t size() const { return labels.size(); }
  Batch as_batch() const { return Batch{features, labels}; }
  Batch select(std::span<const std::size_t> indices) const {
    return as_batch().select(indices);
  }
};

/// One user's local data. The index vectors point into the Dataset the split
/// was built from.
struct UserData {
  int user_id = 0;
  Batch train;
  Batch val;
  Batch test;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;
};

struct FederatedSplit {
  std::vector<UserData> users;  // users[i].user_id == i
};

/// Class-conditional Gaussians for classifiers (one random mean per class,
/// labels assigned round-robin so classes are balanced up to rounding), or a
/// random linear teacher plus Gaussian noise for the linear model.
Dataset gen_synthetic(const ModelSpec& spec, std::size_t n, double noise,
                      Rng& rng);

/// Sort by label (stable), cut into num_users * shards_per_user equal
/// contiguous shards, deal a random permutation of the shards round-robin to
/// the users, then split every user 80/10/10.
FederatedSplit shard_partition(const Dataset& data, std::size_t num_users,
                               std::size_t shards_per_user, Rng& rng);

/// Deal a random permutation evenly; the remainder is dropped.
FederatedSplit iid_partition(const Dataset& data, std::size_t num_users,
                             Rng& rng);

/// One user per domain. `pool` receives the concatenation of the domains so
/// that index sets refer to a single source, as for the other partitioners.
FederatedSplit domain_partition(const std::vector<Dataset>& domains,
                                Rng& rng, Dataset* pool = nullptr);

/// 80/10/10 by count; val and test get floor(n/10) each, train the rest.
/// Indices are shuffled first so that each part mixes the user's shards.
UserData split_user(const Dataset& data, int user_id,
                    std::vector<std::size_t> indices, Rng& rng);

struct CsvSchema {
  std::size_t label_column = 0;
  bool has_header = false;
  /// Keep labels as real-valued targets instead of mapping distinct values
  /// to class ids 0..K-1.
  bool regression = false;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes features followed by the label as the last column, no header.
void write_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace fedsim
