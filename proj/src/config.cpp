#include "fedsim/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(std::string_view(s).substr(
        start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw FormatError("config key '" + key + "': expected " + expected +
                    ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "a number");
  }
  return out;
}

long long to_integer(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "an integer");
  }
  return out;
}

std::size_t to_count(const std::string& key, const std::string& value) {
  const long long v = to_integer(key, value);
  if (v < 0) bad_value(key, value, "a nonnegative integer");
  return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key,
                                  const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"algorithm.kind",
       [](auto& c, auto&, auto& v) {
         c.algorithm.kind = parse_aggregator_kind(v);
       }},
      {"algorithm.epsilon",
       [](auto& c, auto& k, auto& v) { c.algorithm.epsilon = to_double(k, v); }},
      {"algorithm.lambda0",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.lambda0_weights.clear();
         if (v == "uniform") {
           c.algorithm.lambda0_mode = Lambda0Mode::kUniform;
         } else if (v == "samples") {
           c.algorithm.lambda0_mode = Lambda0Mode::kSampleCount;
         } else {
           c.algorithm.lambda0_mode = Lambda0Mode::kExplicit;
           for (const auto& item : split(v, ',')) {
             c.algorithm.lambda0_weights.push_back(to_double(k, item));
           }
         }
       }},
      {"algorithm.lr",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.global_lr.initial = to_double(k, v);
       }},
      {"algorithm.decay",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.global_lr.decay = to_double(k, v);
       }},
      {"algorithm.schedule",
       [](auto& c, auto&, auto& v) {
         c.algorithm.global_lr.kind = parse_schedule_kind(v);
       }},
      {"algorithm.schedule_c",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.global_lr.c = to_double(k, v);
       }},
      {"algorithm.prox_mu",
       [](auto& c, auto& k, auto& v) { c.algorithm.prox_mu = to_double(k, v); }},
      {"algorithm.q",
       [](auto& c, auto& k, auto& v) { c.algorithm.q = to_double(k, v); }},
      {"algorithm.lipschitz",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.lipschitz = to_double(k, v);
       }},
      {"algorithm.afl_lr_lambda",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.afl_lr_lambda = to_double(k, v);
       }},
      {"algorithm.afl_lr_w",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.afl_lr_w = to_double(k, v);
       }},
      {"algorithm.normalize",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.normalize = to_bool(k, v);
       }},
      {"algorithm.normalize_floor",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.normalize_floor = to_double(k, v);
       }},
      {"algorithm.qp_tol",
       [](auto& c, auto& k, auto& v) { c.algorithm.qp_tol = to_double(k, v); }},
      {"algorithm.qp_max_iters",
       [](auto& c, auto& k, auto& v) {
         c.algorithm.qp_max_iters = static_cast<int>(to_integer(k, v));
       }},
      {"model.kind",
       [](auto& c, auto&, auto& v) { c.model.kind = parse_model_kind(v); }},
      {"model.input_dim",
       [](auto& c, auto& k, auto& v) { c.model.input_dim = to_count(k, v); }},
      {"model.num_classes",
       [](auto& c, auto& k, auto& v) { c.model.num_classes = to_count(k, v); }},
      {"model.hidden_dim",
       [](auto& c, auto& k, auto& v) { c.model.hidden_dim = to_count(k, v); }},
      {"model.l2_reg",
       [](auto& c, auto& k, auto& v) { c.model.l2_reg = to_double(k, v); }},
      {"data.source",
       [](auto& c, auto& k, auto& v) {
         if (v == "synthetic") {
           c.data.source = DataSource::kSynthetic;
         } else if (v == "csv") {
           c.data.source = DataSource::kCsv;
         } else {
           bad_value(k, v, "synthetic or csv");
         }
       }},
      {"data.partition",
       [](auto& c, auto& k, auto& v) {
         if (v == "shard") {
           c.data.partition = PartitionKind::kShard;
         } else if (v == "iid") {
           c.data.partition = PartitionKind::kIid;
         } else if (v == "domain") {
           c.data.partition = PartitionKind::kDomain;
         } else {
           bad_value(k, v, "shard, iid or domain");
         }
       }},
      {"data.num_users",
       [](auto& c, auto& k, auto& v) { c.data.num_users = to_count(k, v); }},
      {"data.shards_per_user",
       [](auto& c, auto& k, auto& v) {
         c.data.shards_per_user = to_count(k, v);
       }},
      {"data.n_total",
       [](auto& c, auto& k, auto& v) { c.data.n_total = to_count(k, v); }},
      {"data.noise",
       [](auto& c, auto& k, auto& v) { c.data.noise = to_double(k, v); }},
      {"data.domain_sizes",
       [](auto& c, auto& k, auto& v) {
         c.data.domain_sizes.clear();
         if (v.empty()) return;
         for (const auto& item : split(v, ',')) {
           c.data.domain_sizes.push_back(to_count(k, item));
         }
       }},
      {"data.csv_path",
       [](auto& c, auto&, auto& v) { c.data.csv_path = v; }},
      {"data.label_column",
       [](auto& c, auto& k, auto& v) {
         c.data.csv_label_column = to_count(k, v);
       }},
      {"data.csv_header",
       [](auto& c, auto& k, auto& v) { c.data.csv_header = to_bool(k, v); }},
      {"participation",
       [](auto& c, auto& k, auto& v) { c.participation = to_double(k, v); }},
      {"rounds",
       [](auto& c, auto& k, auto& v) {
         c.rounds = static_cast<int>(to_integer(k, v));
       }},
      {"client.k",
       [](auto& c, auto& k, auto& v) {
         c.client.local_epochs = static_cast<int>(to_integer(k, v));
       }},
      {"client.b",
       [](auto& c, auto& k, auto& v) { c.client.batch_size = to_count(k, v); }},
      {"client.lr",
       [](auto& c, auto& k, auto& v) { c.client.local_lr = to_double(k, v); }},
      {"attack.mode",
       [](auto& c, auto&, auto& v) { c.attack.mode = parse_attack_mode(v); }},
      {"attack.magnitude",
       [](auto& c, auto& k, auto& v) { c.attack.magnitude = to_double(k, v); }},
      {"attack.adversary_id",
       [](auto& c, auto& k, auto& v) {
         c.attack.adversary_id = static_cast<int>(to_integer(k, v));
       }},
      {"attack.always_participates",
       [](auto& c, auto& k, auto& v) {
         c.attack.always_participates = to_bool(k, v);
       }},
      {"seed",
       [](auto& c, auto& k, auto& v) {
         const long long s = to_integer(k, v);
         if (s < 0) bad_value(k, v, "a nonnegative integer");
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
      {"record_wall_ms",
       [](auto& c, auto& k, auto& v) { c.record_wall_ms = to_bool(k, v); }},
  };
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

KeyValues parse_key_values(const std::string& text,
                           const std::string& source_name) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw FormatError(source_name + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) {
      throw FormatError(source_name + ":" + std::to_string(line_no) +
                        ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw FormatError(source_name + ":" + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_file(path), path.string());
}

ExperimentConfig build_config(const KeyValues& kv) {
  ExperimentConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : kv) {
    const auto it = table.find(key);
    if (it == table.end()) throw FormatError("unknown config key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError("config key '" + key + "': " + e.what());
    }
  }
  if (!kv.contains("algorithm.normalize")) {
    cfg.algorithm.normalize = default_normalize(cfg.algorithm.kind);
  }
  cfg.algorithm.global_lr.total_rounds = cfg.rounds;
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return build_config(load_key_values(path));
}

KeyValues to_key_values(const ExperimentConfig& cfg) {
  const AggregatorConfig& a = cfg.algorithm;
  KeyValues kv;
  kv["algorithm.kind"] = to_string(a.kind);
  kv["algorithm.epsilon"] = fmt(a.epsilon);
  switch (a.lambda0_mode) {
    case Lambda0Mode::kUniform:
      kv["algorithm.lambda0"] = "uniform";
      break;
    case Lambda0Mode::kSampleCount:
      kv["algorithm.lambda0"] = "samples";
      break;
    case Lambda0Mode::kExplicit:
      kv["algorithm.lambda0"] = join(a.lambda0_weights);
      break;
  }
  kv["algorithm.lr"] = fmt(a.global_lr.initial);
  kv["algorithm.decay"] = fmt(a.global_lr.decay);
  kv["algorithm.schedule"] = to_string(a.global_lr.kind);
  kv["algorithm.schedule_c"] = fmt(a.global_lr.c);
  kv["algorithm.prox_mu"] = fmt(a.prox_mu);
  kv["algorithm.q"] = fmt(a.q);
  kv["algorithm.lipschitz"] = fmt(a.lipschitz);
  kv["algorithm.afl_lr_lambda"] = fmt(a.afl_lr_lambda);
  kv["algorithm.afl_lr_w"] = fmt(a.afl_lr_w);
  kv["algorithm.normalize"] = a.normalize ? "true" : "false";
  kv["algorithm.normalize_floor"] = fmt(a.normalize_floor);
  kv["algorithm.qp_tol"] = fmt(a.qp_tol);
  kv["algorithm.qp_max_iters"] = std::to_string(a.qp_max_iters);
  kv["model.kind"] = to_string(cfg.model.kind);
  kv["model.input_dim"] = std::to_string(cfg.model.input_dim);
  kv["model.num_classes"] = std::to_string(cfg.model.num_classes);
  kv["model.hidden_dim"] = std::to_string(cfg.model.hidden_dim);
  kv["model.l2_reg"] = fmt(cfg.model.l2_reg);
  kv["data.source"] =
      cfg.data.source == DataSource::kSynthetic ? "synthetic" : "csv";
  kv["data.partition"] = cfg.data.partition == PartitionKind::kShard ? "shard"
                         : cfg.data.partition == PartitionKind::kIid
                             ? "iid"
                             : "domain";
  kv["data.num_users"] = std::to_string(cfg.data.num_users);
  kv["data.shards_per_user"] = std::to_string(cfg.data.shards_per_user);
  kv["data.n_total"] = std::to_string(cfg.data.n_total);
  kv["data.noise"] = fmt(cfg.data.noise);
  kv["data.domain_sizes"] = join(cfg.data.domain_sizes);
  kv["data.csv_path"] = cfg.data.csv_path.string();
  kv["data.label_column"] = std::to_string(cfg.data.csv_label_column);
  kv["data.csv_header"] = cfg.data.csv_header ? "true" : "false";
  kv["participation"] = fmt(cfg.participation);
  kv["rounds"] = std::to_string(cfg.rounds);
  kv["client.k"] = std::to_string(cfg.client.local_epochs);
  kv["client.b"] = std::to_string(cfg.client.batch_size);
  kv["client.lr"] = fmt(cfg.client.local_lr);
  kv["attack.mode"] = to_string(cfg.attack.mode);
  kv["attack.magnitude"] = fmt(cfg.attack.magnitude);
  kv["attack.adversary_id"] = std::to_string(cfg.attack.adversary_id);
  kv["attack.always_participates"] =
      cfg.attack.always_participates ? "true" : "false";
  kv["seed"] = std::to_string(cfg.seed);
  kv["out_dir"] = cfg.out_dir.string();
  kv["record_wall_ms"] = cfg.record_wall_ms ? "true" : "false";
  return kv;
}

std::string to_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
  return out;
}

std::vector<KeyValues> expand_grid(const std::filesystem::path& path) {
  const KeyValues grid = load_key_values(path);
  std::vector<KeyValues> cells{KeyValues{}};
  // Iterate keys in reverse so that the first key ends up varying slowest.
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    const auto options = split(it->second, '|');
    std::vector<KeyValues> next;
    for (const auto& option : options) {
      for (const auto& cell : cells) {
        KeyValues c = cell;
        c[it->first] = option;
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.model);
  validate(cfg.algorithm);
  validate(cfg.attack);
  if (cfg.rounds < 1) throw ArgumentError("rounds must be >= 1");
  if (!(cfg.participation > 0.0 && cfg.participation <= 1.0)) {
    throw ArgumentError("participation must lie in (0, 1]");
  }
  if (cfg.data.num_users < 1) throw ArgumentError("data.num_users must be >= 1");
  if (cfg.client.local_epochs < 1 || cfg.client.batch_size < 1 ||
      !(cfg.client.local_lr >= 0.0)) {
    throw ArgumentError("client settings need k >= 1, b >= 1, lr >= 0");
  }
  if (cfg.attack.mode != AttackMode::kNone &&
      (cfg.attack.adversary_id < 0 ||
       static_cast<std::size_t>(cfg.attack.adversary_id) >=
           cfg.data.num_users)) {
    throw ArgumentError("attack.adversary_id is not a user id");
  }
  if (cfg.algorithm.lambda0_mode == Lambda0Mode::kExplicit &&
      cfg.algorithm.lambda0_weights.size() != cfg.data.num_users) {
    throw ArgumentError("algorithm.lambda0 needs one weight per user");
  }
  if (cfg.data.partition == PartitionKind::kDomain &&
      !cfg.data.domain_sizes.empty() &&
      cfg.data.domain_sizes.size() != cfg.data.num_users) {
    throw ArgumentError("data.domain_sizes needs one size per user");
  }
  if (cfg.data.source == DataSource::kCsv &&
      cfg.data.partition == PartitionKind::kDomain) {
    throw UnsupportedError("domain partition is only available for synthetic data");
  }
}

}  // namespace fedsim
