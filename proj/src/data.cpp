#include "fedsim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

constexpr double kClassMeanScale = 1.0;

// Per-user shuffles come from streams keyed by user id so that the result
// does not depend on the order users are built in.
std::uint64_t draw_base_seed(Rng& rng) { return rng.next_u64(); }

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

Dataset gen_synthetic(const ModelSpec& spec, std::size_t n, double noise,
                      Rng& rng) {
  if (n < 1) throw ArgumentError("gen_synthetic: n must be >= 1");
  if (!(noise >= 0.0)) throw ArgumentError("gen_synthetic: noise must be >= 0");
  validate(spec);
  const std::size_t dim = spec.input_dim;
  Dataset out;
  out.features = Matrix(n, dim);
  out.labels.resize(n);

  if (!spec.is_classifier()) {
    std::vector<double> teacher(dim + 1);
    for (double& v : teacher) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      double y = teacher[dim];
      for (std::size_t j = 0; j < dim; ++j) {
        const double x = rng.normal();
        out.features.at(i, j) = x;
        y += teacher[j] * x;
      }
      out.labels[i] = y + noise * rng.normal();
    }
    return out;
  }

  const std::size_t classes = spec.num_classes;
  if (n < classes) {
    throw ArgumentError("gen_synthetic: n=" + std::to_string(n) +
                        " is smaller than the class count " +
                        std::to_string(classes));
  }
  out.class_count = classes;
  Matrix means(classes, dim);
  for (double& v : means.data) v = kClassMeanScale * rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    out.labels[i] = static_cast<double>(c);
    for (std::size_t j = 0; j < dim; ++j) {
      out.features.at(i, j) = means.at(c, j) + noise * rng.normal();
    }
  }
  return out;
}

UserData split_user(const Dataset& data, int user_id,
                    std::vector<std::size_t> indices, Rng& rng) {
  rng.shuffle(std::span<std::size_t>(indices));
  const std::size_t n = indices.size();
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_val - n_test;
  UserData u;
  u.user_id = user_id;
  u.train_idx.assign(indices.begin(), indices.begin() + n_train);
  u.val_idx.assign(indices.begin() + n_train,
                   indices.begin() + n_train + n_val);
  u.test_idx.assign(indices.begin() + n_train + n_val, indices.end());
  u.train = data.select(u.train_idx);
  u.val = data.select(u.val_idx);
  u.test = data.select(u.test_idx);
  return u;
}

FederatedSplit shard_partition(const Dataset& data, std::size_t num_users,
                               std::size_t shards_per_user, Rng& rng) {
  if (num_users == 0 || shards_per_user == 0) {
    throw ArgumentError("shard_partition: need at least one user and shard");
  }
  const std::size_t shard_count = num_users * shards_per_user;
  const std::size_t n = data.size();
  if (n == 0 || n % shard_count != 0) {
    throw ArgumentError("shard_partition: " + std::to_string(n) +
                        " points do not divide into " +
                        std::to_string(shard_count) + " equal shards");
  }
  const std::size_t shard_size = n / shard_count;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return data.labels[a] < data.labels[b];
                   });

  std::vector<std::size_t> shard_ids(shard_count);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  rng.shuffle(std::span<std::size_t>(shard_ids));
  const std::uint64_t base = draw_base_seed(rng);

  FederatedSplit split;
  split.users.reserve(num_users);
  for (std::size_t u = 0; u < num_users; ++u) {
    std::vector<std::size_t> mine;
    mine.reserve(shards_per_user * shard_size);
    for (std::size_t k = u; k < shard_count; k += num_users) {
      const std::size_t s = shard_ids[k];
      mine.insert(mine.end(), order.begin() + s * shard_size,
                  order.begin() + (s + 1) * shard_size);
    }
    Rng user_rng(base, u);
    split.users.push_back(
        split_user(data, static_cast<int>(u), std::move(mine), user_rng));
  }
  return split;
}

FederatedSplit iid_partition(const Dataset& data, std::size_t num_users,
                             Rng& rng) {
  if (num_users == 0) throw ArgumentError("iid_partition: num_users is 0");
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  const std::uint64_t base = draw_base_seed(rng);
  const std::size_t per_user = data.size() / num_users;

  FederatedSplit split;
  split.users.reserve(num_users);
  for (std::size_t u = 0; u < num_users; ++u) {
    std::vector<std::size_t> mine(perm.begin() + u * per_user,
                                  perm.begin() + (u + 1) * per_user);
    Rng user_rng(base, u);
    split.users.push_back(
        split_user(data, static_cast<int>(u), std::move(mine), user_rng));
  }
  return split;
}

FederatedSplit domain_partition(const std::vector<Dataset>& domains, Rng& rng,
                                Dataset* pool) {
  if (domains.empty()) throw ArgumentError("domain_partition: no domains");
  Dataset all;
  all.features = Matrix(0, domains.front().features.cols);
  for (const Dataset& d : domains) {
    if (d.features.cols != all.features.cols) {
      throw DimensionError("domain_partition: domains differ in input_dim");
    }
    all.features.data.insert(all.features.data.end(), d.features.data.begin(),
                             d.features.data.end());
    all.features.rows += d.features.rows;
    all.labels.insert(all.labels.end(), d.labels.begin(), d.labels.end());
    all.class_count = std::max(all.class_count, d.class_count);
  }
  const std::uint64_t base = draw_base_seed(rng);
  FederatedSplit split;
  std::size_t offset = 0;
  for (std::size_t u = 0; u < domains.size(); ++u) {
    std::vector<std::size_t> mine(domains[u].size());
    std::iota(mine.begin(), mine.end(), offset);
    offset += domains[u].size();
    Rng user_rng(base, u);
    split.users.push_back(
        split_user(all, static_cast<int>(u), std::move(mine), user_rng));
  }
  if (pool != nullptr) *pool = std::move(all);
  return split;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && schema.has_header) continue;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = trim(std::string_view(line).substr(
          start, comma == std::string::npos ? std::string::npos
                                            : comma - start));
      double value = 0.0;
      const auto [ptr, ec] =
          std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() ||
          ptr != cell.data() + cell.size()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": non-numeric cell '" + cell + "'");
      }
      row.push_back(value);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (rows.empty()) {
      width = row.size();
    } else if (row.size() != width) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": no data rows");
  if (schema.label_column >= width) {
    throw FormatError(path.string() + ": label column " +
                      std::to_string(schema.label_column) + " out of range (" +
                      std::to_string(width) + " columns)");
  }
  if (width < 2) throw FormatError(path.string() + ": no feature columns");

  Dataset out;
  out.features = Matrix(rows.size(), width - 1);
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t col = 0;
    for (std::size_t j = 0; j < width; ++j) {
      if (j == schema.label_column) continue;
      out.features.at(i, col++) = rows[i][j];
    }
    out.labels.push_back(rows[i][schema.label_column]);
  }
  if (!schema.regression) {
    std::map<double, std::size_t> ids;
    for (double y : out.labels) ids.emplace(y, 0);
    std::size_t next = 0;
    for (auto& [label, id] : ids) id = next++;
    for (double& y : out.labels) y = static_cast<double>(ids.at(y));
    out.class_count = ids.size();
  }
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.features.cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,", data.features.at(i, j));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", data.labels[i]);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fedsim
