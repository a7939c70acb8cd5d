#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "adaptlab/csvio.hpp"
#include "adaptlab/harness.hpp"

using namespace adaptlab;

namespace {

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config(config_path);
  for (const std::string& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::string sibling(const std::string& checkpoint, const char* name) {
  return (std::filesystem::path(checkpoint).parent_path() / name).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reward-free adaptation laboratory"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "run configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides,
                 "override one configuration key, section.key=value");

  std::uint64_t seed = 0;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "master seed")
        ->each([&](const std::string&) { seed_given = true; });
  };

  CLI::App* train = app.add_subcommand(
      "train", "train one agent per configured seed");
  add_seed(train);

  std::string checkpoint, snapshot_path, bank_path, out_dir;
  std::string regime_str, distraction_str;
  int adapt_steps = -1;
  CLI::App* adapt = app.add_subcommand(
      "adapt", "reward-free adaptation of a trained checkpoint");
  adapt->add_option("--checkpoint", checkpoint, "trained bundle")
      ->required()
      ->check(CLI::ExistingFile);
  adapt->add_option("--snapshot", snapshot_path,
                    "frozen reference networks (default: sibling "
                    "snapshot.ckpt)");
  adapt->add_option("--bank", bank_path,
                    "distractor sequences (default: sibling "
                    "video_bank.ckpt)");
  adapt->add_option("--regime", regime_str, "online, replay, or replay_bc");
  adapt->add_option("--distraction", distraction_str,
                    "colour or background");
  adapt->add_option("--steps", adapt_steps, "adaptation frames");
  adapt->add_option("--out", out_dir, "output directory");
  add_seed(adapt);

  std::string eval_mode = "source";
  int eval_episodes = 20;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "deterministic-policy return of a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "bundle to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--bank", bank_path,
                       "distractor sequences (default: sibling "
                       "video_bank.ckpt)");
  eval_cmd->add_option("--mode", eval_mode,
                       "source, colour, or background");
  eval_cmd->add_option("--episodes", eval_episodes, "episode count");
  add_seed(eval_cmd);

  std::string run_dir;
  CLI::App* diagnose = app.add_subcommand(
      "diagnose", "recompute the stored distance diagnostics of an "
                  "adaptation run");
  diagnose->add_option("--run", run_dir, "adaptation run directory")
      ->required()
      ->check(CLI::ExistingDirectory);

  CLI::App* verify = app.add_subcommand(
      "verify", "check the certified policy and preference bounds");
  verify->add_option("--checkpoint", checkpoint,
                     "also verify this trained bundle")
      ->check(CLI::ExistingFile);
  verify->add_option("--out", out_dir, "output directory");
  add_seed(verify);

  CLI::App* sweep = app.add_subcommand(
      "sweep-lipschitz", "train and adapt across the l2 coefficient grid");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      const std::vector<std::uint64_t> seeds =
          seed_given ? std::vector<std::uint64_t>{seed} : cfg.seeds;
      for (const std::uint64_t s : seeds) {
        const TrainArtifacts art = run_train(cfg, s);
        std::printf("trained seed=%llu dir=%s initial=%s final=%s%s\n",
                    static_cast<unsigned long long>(s), art.dir.c_str(),
                    csv_double(art.initial_eval).c_str(),
                    csv_double(art.final_eval).c_str(),
                    art.aborted ? " aborted=1" : "");
        if (art.aborted) {
          std::fprintf(stderr, "error: training diverged at seed %llu\n",
                       static_cast<unsigned long long>(s));
          return 1;
        }
      }
    } else if (adapt->parsed()) {
      RunConfig cfg = resolve_config(config_path, overrides);
      if (!regime_str.empty())
        cfg.adapt.regime = regime_from_string(regime_str);
      if (!distraction_str.empty())
        cfg.distraction = mode_from_string(distraction_str);
      if (adapt_steps >= 0) cfg.adapt.steps = adapt_steps;
      if (snapshot_path.empty())
        snapshot_path = sibling(checkpoint, "snapshot.ckpt");
      if (bank_path.empty())
        bank_path = sibling(checkpoint, "video_bank.ckpt");
      const std::uint64_t s = seed_given ? seed : cfg.seeds.at(0);
      const AdaptArtifacts art = run_adapt(cfg, checkpoint, snapshot_path,
                                           bank_path, s, out_dir);
      const AdaptDiagRow& last = art.series.rows.back();
      std::printf(
          "adapted dir=%s steps=%d source_return=%s target_return=%s%s\n",
          art.dir.c_str(), last.step,
          csv_double(last.source_return).c_str(),
          csv_double(last.target_return).c_str(),
          art.series.aborted ? " aborted=1" : "");
      if (art.series.aborted) {
        std::fprintf(stderr, "error: adaptation diverged; logs are partial\n");
        return 1;
      }
    } else if (eval_cmd->parsed()) {
      RunConfig cfg = resolve_config(config_path, overrides);
      if (bank_path.empty())
        bank_path = sibling(checkpoint, "video_bank.ckpt");
      EnvConfig env = cfg.env;
      env.mode = mode_from_string(eval_mode);
      const std::uint64_t s = seed_given ? seed : cfg.seeds.at(0);
      const EvalResult res =
          run_eval(checkpoint, bank_path, env, eval_episodes, s);
      std::printf("return_mean=%s return_std=%s\n",
                  csv_double(res.mean_return).c_str(),
                  csv_double(res.std_of_mean).c_str());
    } else if (diagnose->parsed()) {
      const DiagnoseResult res = run_diagnose(run_dir);
      std::printf("diagnose cells=%d ok=%d report=%s\n", res.cells_checked,
                  res.ok ? 1 : 0, res.report_path.c_str());
      if (!res.ok) {
        std::fprintf(stderr,
                     "error: stored diagnostics do not reproduce within "
                     "1e-9\n");
        return 1;
      }
    } else if (verify->parsed()) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      if (out_dir.empty()) out_dir = cfg.out_root + "/" + cfg.name;
      const std::uint64_t s = seed_given ? seed : cfg.seeds.at(0);
      const VerifyResult res = run_verify(cfg, checkpoint, s, out_dir);
      for (const PropReport& r : res.reports)
        std::printf("%s trials=%d violations=%d min_slack=%s\n",
                    r.proposition.c_str(), r.trials, r.violations,
                    csv_double(r.min_slack).c_str());
      std::printf("verify ok=%d report=%s\n", res.ok ? 1 : 0,
                  res.report_path.c_str());
      if (!res.ok) {
        std::fprintf(stderr, "error: a certified bound was violated\n");
        return 1;
      }
    } else if (sweep->parsed()) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      const SweepResult res = run_sweep(cfg);
      for (const SweepRow& r : res.rows)
        std::printf(
            "coefficient=%s seed=%llu lipschitz_upper=%s normalised=%s\n",
            csv_double(r.coefficient).c_str(),
            static_cast<unsigned long long>(r.seed),
            csv_double(r.lipschitz_upper).c_str(),
            csv_double(r.normalised).c_str());
      std::printf("sweep rows=%d csv=%s\n", int(res.rows.size()),
                  res.csv_path.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
