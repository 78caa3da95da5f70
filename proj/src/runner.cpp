#include "fedsim/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "fedsim/data.hpp"
#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// only its own output slot, so the result does not depend on scheduling.
// The exception from the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

ParamVector initial_model(const ExperimentConfig& cfg) {
  const ModelSpec& spec = cfg.model;
  ParamVector w(param_dim(spec));
  if (spec.kind != ModelKind::kMlp) return w;
  Rng rng(cfg.seed, Rng::kServerStream);
  const std::size_t first = spec.hidden_dim * (spec.input_dim + 1);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double a = j < first ? a1 : a2;
    w[j] = rng.uniform(-a, a);
  }
  return w;
}

FederatedSplit build_split(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Rng partition_rng(cfg.seed, Rng::stream_key("partition", {}));

  if (d.partition == PartitionKind::kDomain) {
    std::vector<Dataset> domains;
    for (std::size_t u = 0; u < d.num_users; ++u) {
      const std::size_t n =
          d.domain_sizes.empty() ? d.n_total / d.num_users : d.domain_sizes[u];
      Rng rng(cfg.seed, Rng::stream_key("domain", {u}));
      domains.push_back(gen_synthetic(cfg.model, n, d.noise, rng));
    }
    return domain_partition(domains, partition_rng);
  }

  Dataset data;
  if (d.source == DataSource::kSynthetic) {
    Rng rng(cfg.seed, Rng::stream_key("data", {}));
    data = gen_synthetic(cfg.model, d.n_total, d.noise, rng);
  } else {
    CsvSchema schema;
    schema.label_column = d.csv_label_column;
    schema.has_header = d.csv_header;
    schema.regression = !cfg.model.is_classifier();
    data = load_csv(d.csv_path, schema);
    if (data.features.cols != cfg.model.input_dim) {
      throw DimensionError(d.csv_path.string() + " has " +
                           std::to_string(data.features.cols) +
                           " features but model.input_dim is " +
                           std::to_string(cfg.model.input_dim));
    }
    if (cfg.model.is_classifier() && data.class_count > cfg.model.num_classes) {
      throw ArgumentError(d.csv_path.string() + " has " +
                          std::to_string(data.class_count) +
                          " classes but model.num_classes is " +
                          std::to_string(cfg.model.num_classes));
    }
  }
  if (d.partition == PartitionKind::kShard) {
    return shard_partition(data, d.num_users, d.shards_per_user, partition_rng);
  }
  return iid_partition(data, d.num_users, partition_rng);
}

}  // namespace

std::vector<int> sample_participants(std::size_t m, double p, Rng& rng,
                                     const AttackSpec& attack) {
  if (m == 0) throw ArgumentError("sample_participants: no users");
  if (!(p > 0.0 && p <= 1.0)) {
    throw ArgumentError("sample_participants: p must lie in (0, 1]");
  }
  // The slack keeps products like 0.1 * 30 = 3.0000000000000004 at 3.
  std::size_t count = static_cast<std::size_t>(
      std::ceil(p * static_cast<double>(m) - 1e-9));
  count = std::clamp<std::size_t>(count, 1, m);

  std::vector<int> ids(m);
  for (std::size_t i = 0; i < m; ++i) ids[i] = static_cast<int>(i);
  // Partial Fisher-Yates: the first `count` slots form the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(m - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(count);

  if (attack.mode != AttackMode::kNone && attack.always_participates) {
    if (attack.adversary_id < 0 ||
        static_cast<std::size_t>(attack.adversary_id) >= m) {
      throw ArgumentError("sample_participants: adversary id out of range");
    }
    if (std::find(ids.begin(), ids.end(), attack.adversary_id) == ids.end()) {
      ids[static_cast<std::size_t>(rng.uniform_int(count))] =
          attack.adversary_id;
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

Federation build_federation(const ExperimentConfig& cfg) {
  validate(cfg);
  const FederatedSplit split = build_split(cfg);
  Federation fed;
  fed.initial_w = initial_model(cfg);
  for (const UserData& u : split.users) {
    if (u.train.size() == 0 || u.test.size() == 0) {
      throw ArgumentError("user " + std::to_string(u.user_id) + " has " +
                          std::to_string(u.train.size()) + " train and " +
                          std::to_string(u.test.size()) +
                          " test points; every user needs both (>= 10 points)");
    }
    UserTask task;
    task.user_id = u.user_id;
    task.spec = cfg.model;
    task.train = u.train;
    task.val = u.val;
    task.test = u.test;
    task.local_lr = cfg.client.local_lr;
    task.local_epochs = cfg.client.local_epochs;
    task.batch_size = cfg.client.batch_size;
    fed.tasks.push_back(std::move(task));
  }
  return fed;
}

int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FEDSIM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

RunResult run(const ExperimentConfig& config, const RunOptions& options) {
  const Federation fed = build_federation(config);
  const AggregatorConfig& agg = config.algorithm;
  const std::size_t m = fed.tasks.size();
  const int threads = resolve_thread_count(options.threads);
  const bool classifier = config.model.is_classifier();
  const double prox_mu = client_prox_mu(agg);
  const bool residual_normalize =
      agg.normalize || agg.kind == AggregatorKind::kFedAvgN;
  const bool qp_is_residual =
      (agg.kind == AggregatorKind::kFedMgda ||
       ((agg.kind == AggregatorKind::kFedMgdaPlus ||
         agg.kind == AggregatorKind::kMgdaProx) &&
        agg.epsilon == 1.0));

  std::vector<UserTask> reported;
  reported.reserve(m);
  for (const UserTask& t : fed.tasks) {
    reported.push_back(apply_attack(t, config.attack));
  }

  std::filesystem::path csv_path = options.csv_path;
  if (csv_path.empty() && !config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    csv_path = config.out_dir / "report.csv";
    std::ofstream echo(config.out_dir / "config.txt", std::ios::binary);
    echo << to_text(to_key_values(config));
  }
  std::optional<ReportCsvWriter> writer;
  if (!csv_path.empty()) writer.emplace(csv_path, to_string(agg.kind));

  RunResult result;
  result.config_echo = config;
  ServerState state = initial_server_state(agg, fed.initial_w, m);
  if (options.keep_w_history) result.w_history.push_back(state.w);

  std::vector<double> train_losses(m), test_acc(m);
  auto evaluate_all = [&](const ParamVector& w) {
    parallel_for(m, threads, [&](std::size_t i) {
      const UserTask& t = fed.tasks[i];
      train_losses[i] = loss(t.spec, w, t.train);
      test_acc[i] = classifier ? accuracy(t.spec, w, t.test)
                               : std::numeric_limits<double>::quiet_NaN();
    });
  };
  evaluate_all(state.w);
  result.user_train_losses.push_back(train_losses);

  for (int t = 0; t < config.rounds; ++t) {
    const auto started = std::chrono::steady_clock::now();
    Rng sample_rng(config.seed,
                   Rng::stream_key("sample", {static_cast<std::uint64_t>(t)}));
    const std::vector<int> participants = sample_participants(
        m, config.participation, sample_rng, config.attack);

    std::vector<ClientReturn> returns(participants.size());
    try {
      parallel_for(participants.size(), threads, [&](std::size_t k) {
        const int user = participants[k];
        Rng rng(config.seed,
                Rng::stream_key("client", {static_cast<std::uint64_t>(user),
                                           static_cast<std::uint64_t>(t)}));
        try {
          returns[k] = client_update(reported[user], state.w, rng, prox_mu);
        } catch (const std::exception& e) {
          throw Error("user " + std::to_string(user) + ": " + e.what());
        }
      });
    } catch (const std::exception& e) {
      throw Error("round " + std::to_string(t) + ", " + e.what());
    }

    AggregateInfo info;
    try {
      state = aggregate(state, returns, agg, &info);
    } catch (const std::exception& e) {
      throw Error("round " + std::to_string(t) + ", aggregation: " + e.what());
    }
    if (!state.w.all_finite()) {
      throw Error("round " + std::to_string(t) +
                  ": global model became non-finite");
    }

    std::map<int, double> before, after;
    for (int user : participants) before[user] = train_losses[user];
    evaluate_all(state.w);
    for (int user : participants) after[user] = train_losses[user];

    RoundReport r;
    r.round = t;
    if (classifier) {
      const AccuracyStats s = user_accuracy_stats(test_acc);
      r.avg_test_acc = s.avg;
      r.std_test_acc = s.std;
      r.worst5_acc = s.worst5;
      r.best5_acc = s.best5;
    } else {
      r.avg_test_acc = r.std_test_acc = r.worst5_acc = r.best5_acc =
          std::numeric_limits<double>::quiet_NaN();
    }
    double loss_sum = 0.0;
    for (double l : train_losses) loss_sum += l;
    r.avg_train_loss = loss_sum / static_cast<double>(m);
    r.pct_improved = pct_improved(before, after);
    r.min_norm_objective = qp_is_residual
                               ? info.qp_objective
                               : stationarity_residual(returns,
                                                       residual_normalize,
                                                       agg.normalize_floor);
    r.participants = participants;
    if (config.record_wall_ms) {
      r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - started)
                      .count();
    }
    if (writer) writer->append(r);
    if (options.progress && (t % 10 == 0 || t + 1 == config.rounds)) {
      std::fprintf(stderr,
                   "[fedsim] %s round %d/%d avg_train_loss=%.6g "
                   "avg_test_acc=%.4f\n",
                   to_string(agg.kind).c_str(), t + 1, config.rounds,
                   r.avg_train_loss, r.avg_test_acc);
    }
    result.reports.push_back(std::move(r));
    result.user_train_losses.push_back(train_losses);
    if (options.keep_w_history) result.w_history.push_back(state.w);
  }
  result.final_w = state.w;
  return result;
}

ReportCsvWriter::ReportCsvWriter(const std::filesystem::path& path,
                                 std::string algorithm)
    : path_(path), algorithm_(std::move(algorithm)) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot write " + path.string());
  out_ << kReportCsvHeader << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed for " + path.string());
}

void ReportCsvWriter::append(const RoundReport& r) {
  out_ << r.round << ',' << algorithm_ << ',' << fmt9(r.avg_test_acc) << ','
       << fmt9(r.std_test_acc) << ',' << fmt9(r.worst5_acc) << ','
       << fmt9(r.best5_acc) << ',' << fmt9(r.avg_train_loss) << ','
       << fmt9(r.pct_improved) << ',' << fmt9(r.min_norm_objective) << ','
       << r.wall_ms << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed for " + path_.string());
}

void write_report_csv(const std::vector<RoundReport>& reports,
                      const std::filesystem::path& path,
                      const std::string& algorithm) {
  ReportCsvWriter writer(path, algorithm);
  for (const RoundReport& r : reports) writer.append(r);
}

std::vector<RoundReport> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kReportCsvHeader) {
    throw FormatError(path.string() + ": missing or unexpected header");
  }
  std::vector<RoundReport> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 10 columns");
    }
    try {
      RoundReport r;
      r.round = std::stoi(cells[0]);
      r.avg_test_acc = std::stod(cells[2]);
      r.std_test_acc = std::stod(cells[3]);
      r.worst5_acc = std::stod(cells[4]);
      r.best5_acc = std::stod(cells[5]);
      r.avg_train_loss = std::stod(cells[6]);
      r.pct_improved = std::stod(cells[7]);
      r.min_norm_objective = std::stod(cells[8]);
      r.wall_ms = std::stoll(cells[9]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": unparsable value");
    }
  }
  return out;
}

}  // namespace fedsim
