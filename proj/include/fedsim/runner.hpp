#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

/// Sorted ids of ceil(p m) users drawn uniformly without replacement. With
/// attack.always_participates the adversary replaces a uniformly chosen
/// member if it was not drawn.
std::vector<int> sample_participants(std::size_t m, double p, Rng& rng,
                                     const AttackSpec& attack);

/// Users, their local tasks (attack not applied) and the initial model.
struct Federation {
  std::vector<UserTask> tasks;
  ParamVector initial_w;
};

Federation build_federation(const ExperimentConfig& cfg);

struct RunOptions {
  /// Worker threads for client updates and evaluation; <= 0 reads
  /// FEDSIM_THREADS, falling back to the hardware concurrency.
  int threads = 0;
  bool keep_w_history = false;
  bool progress = true;
  /// CSV destination; empty means `<out_dir>/report.csv`, or no file when
  /// out_dir is empty too.
  std::filesystem::path csv_path;
};

struct RunResult {
  std::vector<RoundReport> reports;
  ParamVector final_w;
  ExperimentConfig config_echo;
  /// True (unattacked) full-train losses of every user: entry 0 at the
  /// initial model, entry t+1 after round t.
  std::vector<std::vector<double>> user_train_losses;
  /// w_0 .. w_T when RunOptions::keep_w_history is set.
  std::vector<ParamVector> w_history;
};

RunResult run(const ExperimentConfig& config, const RunOptions& options = {});

int resolve_thread_count(int requested);

/// Incremental writer for the per-round results file.
class ReportCsvWriter {
 public:
  ReportCsvWriter(const std::filesystem::path& path, std::string algorithm);
  void append(const RoundReport& report);

 private:
  std::filesystem::path path_;
  std::string algorithm_;
  std::ofstream out_;
};

inline constexpr const char* kReportCsvHeader =
    "round,algorithm,avg_test_acc,std_test_acc,worst5_acc,best5_acc,"
    "avg_train_loss,pct_improved,min_norm_objective,wall_ms";

void write_report_csv(const std::vector<RoundReport>& reports,
                      const std::filesystem::path& path,
                      const std::string& algorithm);

/// Parses a file written by write_report_csv. Participants are not stored
/// in the file and come back empty.
std::vector<RoundReport> read_report_csv(const std::filesystem::path& path);

}  // namespace fedsim
