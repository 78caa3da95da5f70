#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedsim/aggregators.hpp"
#include "fedsim/clients.hpp"
#include "fedsim/models.hpp"

namespace fedsim {

enum class DataSource { kSynthetic, kCsv };
enum class PartitionKind { kShard, kIid, kDomain };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  PartitionKind partition = PartitionKind::kIid;
  std::size_t num_users = 10;
  std::size_t shards_per_user = 2;
  std::size_t n_total = 1000;
  double noise = 1.0;
  /// Domain partition only: points per user (empty: n_total / num_users).
  std::vector<std::size_t> domain_sizes;
  std::filesystem::path csv_path;
  std::size_t csv_label_column = 0;
  bool csv_header = false;
};

struct ClientConfig {
  int local_epochs = 1;
  std::size_t batch_size = 10;
  double local_lr = 0.01;
};

struct ExperimentConfig {
  AggregatorConfig algorithm;
  ModelSpec model;
  DataConfig data;
  double participation = 1.0;
  int rounds = 100;
  ClientConfig client;
  AttackSpec attack;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  /// Wall-clock timings make output nondeterministic, so the wall_ms column
  /// is written as 0 unless this is set.
  bool record_wall_ms = false;
};

/// The on-disk form: `key = value` lines with dotted keys, `#` comments.
/// Keys are kept sorted so that printing is canonical.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text,
                           const std::string& source_name = "<config>");
KeyValues load_key_values(const std::filesystem::path& path);

/// Builds and validates a config. Unknown keys and malformed values raise
/// FormatError naming the key.
ExperimentConfig build_config(const KeyValues& kv);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full canonical listing of every key, suitable for build_config.
KeyValues to_key_values(const ExperimentConfig& cfg);
std::string to_text(const KeyValues& kv);

/// Sweep grid: `key = v1 | v2 | ...`. Returns the Cartesian product as a
/// list of overrides, first key varying slowest.
std::vector<KeyValues> expand_grid(const std::filesystem::path& path);

void validate(const ExperimentConfig& cfg);

}  // namespace fedsim
