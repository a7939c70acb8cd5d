#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "adaptlab/adaptation.hpp"
#include "adaptlab/config.hpp"
#include "adaptlab/theory.hpp"

namespace adaptlab {

void ensure_dir(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

// ordered key=value lines; every command drops one next to its outputs so a
// run can be reproduced from the directory alone
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>&
                        entries);
std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::string& path);

void save_video_bank(const std::string& path, const VideoBank& bank);
VideoBank load_video_bank(const std::string& path);

struct TrainArtifacts {
  std::string dir;            // <out_root>/<name>/s<seed>
  std::string bundle_path;    // trained live + target nets
  std::string snapshot_path;  // frozen reference nets taken at the end
  std::string bank_path;      // distractor sequences used by this run
  double initial_eval = std::numeric_limits<double>::quiet_NaN();
  double final_eval = std::numeric_limits<double>::quiet_NaN();
  bool aborted = false;  // a loss went non-finite; logs are partial
};

// Trains one seed in the source environment (or the distracted one under the
// reward_on_target preset), logging train_metrics.csv and writing the
// checkpoint triple plus config.resolved and seed.manifest.
TrainArtifacts run_train(const RunConfig& cfg, std::uint64_t seed);

struct AdaptArtifacts {
  std::string dir;
  std::string adapted_bundle_path;
  MetricSeries series;
};

// Adapts a trained checkpoint in the distracted environment under
// cfg.adapt, writing adapt_metrics.csv, triangle.csv, matched_pairs.csv,
// the adapted checkpoint, and seed.manifest. out_dir defaults to
// <checkpoint run dir>/adapt_<regime>_<distraction>_s<seed>.
AdaptArtifacts run_adapt(const RunConfig& cfg, const std::string& bundle_path,
                         const std::string& snapshot_path,
                         const std::string& bank_path, std::uint64_t seed,
                         const std::string& out_dir = "");

// deterministic-policy return of a stored checkpoint in the given
// environment
EvalResult run_eval(const std::string& bundle_path,
                    const std::string& bank_path, const EnvConfig& env,
                    int n_episodes, std::uint64_t seed);

struct DiagnoseResult {
  bool ok = false;
  int cells_checked = 0;
  std::string report_path;
};

// Recomputes the distance columns of a stored adapt run from its
// checkpoints and matched-pair CSV: the step-0 row from the starting
// checkpoint and, when the run completed, the final row from the adapted
// checkpoint. Differences beyond 1e-9 fail.
DiagnoseResult run_diagnose(const std::string& adapt_dir);

struct VerifyResult {
  std::vector<PropReport> reports;
  std::string report_path;
  bool ok = false;  // zero violations across all reports
};

// Runs the three proposition verifiers on freshly sampled nets and, when a
// checkpoint is given, on its trained nets; writes theory_report.csv.
VerifyResult run_verify(const RunConfig& cfg, const std::string& bundle_path,
                        std::uint64_t seed, const std::string& out_dir);

struct SweepRow {
  double coefficient = 0.0;
  std::uint64_t seed = 0;
  double lipschitz_upper = 0.0;  // constrained post-bottleneck stack
  double return_pre = 0.0;       // target return before adaptation
  double return_post = 0.0;      // target return after replay adaptation
  double normalised = 0.0;       // return_post / return_pre
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::string csv_path;
};

// Per l2 coefficient and seed: train, adapt under the replay regime, and
// record the certified Lipschitz bound with pre/post target returns.
SweepResult run_sweep(const RunConfig& cfg);

}  // namespace adaptlab
