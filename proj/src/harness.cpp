#include "adaptlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adaptlab/checkpoint.hpp"
#include "adaptlab/csvio.hpp"

namespace adaptlab {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string join(const std::string& a, const std::string& b) {
  return (fs::path(a) / b).string();
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// pinned column order shared by the writer and the diagnostics reader
const std::vector<std::string> kAdaptHeader = {
    "step",           "source_return",       "target_return",
    "invdyn_loss",    "bc_loss",             "cos_dist_encoder",
    "cos_dist_bottleneck", "mse_dist_encoder", "mse_dist_bottleneck",
    "forget_cos"};

const std::vector<std::string> kDistanceColumns = {
    "cos_dist_encoder", "cos_dist_bottleneck", "mse_dist_encoder",
    "mse_dist_bottleneck", "forget_cos"};

std::string manifest_value(
    const std::vector<std::pair<std::string, std::string>>& entries,
    const std::string& key) {
  for (const auto& kv : entries)
    if (kv.first == key) return kv.second;
  throw std::invalid_argument("manifest: missing key " + key);
}

// the five distance diagnostics of one parameter state on a fixed
// matched-pair observation set, in kDistanceColumns order
std::array<double, 5> distance_columns(const AgentBundle& bundle,
                                       const SnapshotSet& snap,
                                       const MatrixXd& obs_source,
                                       const MatrixXd& obs_target) {
  const MatrixXd enc_s = embed(bundle, obs_source, EmbeddingLevel::encoder);
  const MatrixXd enc_t = embed(bundle, obs_target, EmbeddingLevel::encoder);
  const MatrixXd bot_s = embed(bundle, obs_source, EmbeddingLevel::bottleneck);
  const MatrixXd bot_t = embed(bundle, obs_target, EmbeddingLevel::bottleneck);
  const AgentBundle* bp = &bundle;
  const SnapshotSet* sp = &snap;
  const Embedder live_enc = [bp](const MatrixXd& o) {
    return embed(*bp, o, EmbeddingLevel::encoder);
  };
  const Embedder snap_enc = [sp](const MatrixXd& o) {
    return embed_snapshot(*sp, o);
  };
  return {matched_distance(enc_s, enc_t, Metric::cosine).mean,
          matched_distance(bot_s, bot_t, Metric::cosine).mean,
          matched_distance(enc_s, enc_t, Metric::mse).mean,
          matched_distance(bot_s, bot_t, Metric::mse).mean,
          forgetting_distance(obs_source, live_enc, snap_enc, Metric::cosine)};
}

EnvConfig env_with_mode(const RunConfig& cfg, ObsMode mode,
                        bool expose_reward) {
  EnvConfig e = cfg.env;
  e.mode = mode;
  e.expose_reward = expose_reward;
  return e;
}

}  // namespace

void ensure_dir(const std::string& path) { fs::create_directories(path); }

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>&
                        entries) {
  std::ostringstream ss;
  for (const auto& kv : entries) ss << kv.first << " = " << kv.second << "\n";
  write_text_file(path, ss.str());
}

std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::string& path) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, "manifest: bad line " + line);
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

void save_video_bank(const std::string& path, const VideoBank& bank) {
  std::vector<ParamTensor> tensors(bank.seqs.size());
  std::vector<const ParamTensor*> ptrs(bank.seqs.size());
  for (size_t i = 0; i < bank.seqs.size(); ++i) {
    ParamTensor& t = tensors[i];
    t.name = "seq/" + std::to_string(i);
    t.shape = {int(bank.seqs[i].rows()), int(bank.seqs[i].cols())};
    t.values = bank.seqs[i];
    t.grad = MatrixXd::Zero(bank.seqs[i].rows(), bank.seqs[i].cols());
    t.trainable = false;
    ptrs[i] = &t;
  }
  save_tensors(path, ptrs);
}

VideoBank load_video_bank(const std::string& path) {
  VideoBank bank;
  for (ParamTensor& t : load_tensors(path)) {
    require(t.name.rfind("seq/", 0) == 0,
            "video bank: unexpected tensor " + t.name);
    bank.seqs.push_back(std::move(t.values));
  }
  require(!bank.seqs.empty(), "video bank: empty file");
  return bank;
}

TrainArtifacts run_train(const RunConfig& cfg, std::uint64_t seed) {
  const std::string run_root = join(cfg.out_root, cfg.name);
  const std::string seed_dir = join(run_root, "s" + std::to_string(seed));
  const std::string ckpt_dir = join(seed_dir, "checkpoints");
  ensure_dir(ckpt_dir);
  write_text_file(join(run_root, "config.resolved"),
                  serialize_run_config(cfg));

  Rng root(seed);
  Rng warm_rng = root.fork("warmup");
  Rng act_rng = root.fork("act");
  Rng train_rng = root.fork("train");
  Rng eval_rng = root.fork("eval");

  const VideoBank bank = VideoBank::generate(
      root.fork("bank"), 10, cfg.env.episode_length, cfg.env.distractor_dim);
  save_video_bank(join(ckpt_dir, "video_bank.ckpt"), bank);

  // rewards come from the source environment unless the baseline preset
  // trains directly under distraction
  const ObsMode train_mode =
      cfg.train.reward_on_target ? cfg.distraction : ObsMode::source;
  const EnvConfig env_cfg = env_with_mode(cfg, train_mode, true);
  PointMassEnv env(env_cfg, root.fork("env"), &bank);

  AgentBundle bundle = [&] {
    Rng init_rng = root.fork("init");
    return make_bundle(cfg.resolved_agent(), init_rng);
  }();
  Adam opt(bundle.live_params(), bundle.config.lr);
  ReplayBuffer<RewardedTransition> buffer(cfg.train.buffer_capacity);

  TrainArtifacts art;
  art.dir = seed_dir;
  art.bundle_path = join(ckpt_dir, "bundle.ckpt");
  art.snapshot_path = join(ckpt_dir, "snapshot.ckpt");
  art.bank_path = join(ckpt_dir, "video_bank.ckpt");

  CsvWriter metrics(join(seed_dir, "train_metrics.csv"),
                    {"step", "loss_actor", "loss_critic", "loss_invdyn",
                     "return_eval"});
  auto eval_now = [&] {
    return evaluate_policy(bundle, env_cfg, &bank, cfg.train.n_eval_episodes,
                           eval_rng)
        .mean_return;
  };
  art.initial_eval = eval_now();
  metrics.row({"0", csv_double(kNaN), csv_double(kNaN), csv_double(kNaN),
               csv_double(art.initial_eval)});

  LossReport last;
  VectorXd obs = env.reset();
  for (int t = 1; t <= cfg.train.steps && !art.aborted; ++t) {
    Vector2d action;
    if (t <= cfg.train.init_random) {
      action = Vector2d(warm_rng.uniform(-1.0, 1.0),
                        warm_rng.uniform(-1.0, 1.0));
    } else {
      action = explore_action(bundle, obs, act_rng);
    }
    const StepResult sr = env.step(action);
    buffer.push({obs, action, *sr.reward, sr.obs, sr.done});
    obs = sr.done ? env.reset() : sr.obs;

    if (t >= cfg.train.update_after && buffer.size() >= cfg.train.batch) {
      const RewardedBatch batch =
          to_batch(buffer.sample(cfg.train.batch, train_rng));
      try {
        last = bundle.is_sac() ? sac_train_step(bundle, batch, opt, train_rng)
                               : qtopt_train_step(bundle, batch, opt,
                                                  train_rng);
      } catch (const std::runtime_error&) {
        art.aborted = true;  // non-finite gradients; logs stay partial
      }
      if (!art.aborted &&
          (!std::isfinite(last.loss_critic) ||
           !std::isfinite(last.loss_invdyn) ||
           (bundle.is_sac() && !std::isfinite(last.loss_actor))))
        art.aborted = true;
      if (art.aborted) break;
    }

    if (t % cfg.train.log_every == 0 || t == cfg.train.steps) {
      double ret = kNaN;
      if (t % cfg.train.eval_every == 0 || t == cfg.train.steps) {
        ret = eval_now();
        art.final_eval = ret;
      }
      metrics.row({std::to_string(t), csv_double(last.loss_actor),
                   csv_double(last.loss_critic), csv_double(last.loss_invdyn),
                   csv_double(ret)});
    }
  }
  metrics.flush();

  // Adam rejects a non-finite update before applying it, so the saved
  // parameters are the last finite state even on an aborted run
  const SnapshotSet snap = snapshot(bundle);
  save_bundle(art.bundle_path, bundle);
  save_snapshot(art.snapshot_path, snap);

  write_manifest(join(seed_dir, "seed.manifest"),
                 {{"command", "train"},
                  {"name", cfg.name},
                  {"seed", std::to_string(seed)},
                  {"agent", to_string(cfg.agent)},
                  {"distraction", to_string(cfg.distraction)},
                  {"train_mode", to_string(train_mode)},
                  {"steps", std::to_string(cfg.train.steps)},
                  {"aborted", art.aborted ? "1" : "0"},
                  {"bundle", art.bundle_path},
                  {"snapshot", art.snapshot_path},
                  {"bank", art.bank_path},
                  {"initial_eval", csv_double(art.initial_eval)},
                  {"final_eval", csv_double(art.final_eval)}});
  return art;
}

AdaptArtifacts run_adapt(const RunConfig& cfg, const std::string& bundle_path,
                         const std::string& snapshot_path,
                         const std::string& bank_path, std::uint64_t seed,
                         const std::string& out_dir) {
  AgentBundle bundle = load_bundle(bundle_path);
  const SnapshotSet snap = load_snapshot(snapshot_path);
  const VideoBank bank = load_video_bank(bank_path);
  require(bundle.config.kind == cfg.agent,
          "adapt: configured agent does not match the checkpoint");
  require(snap.kind == bundle.config.kind,
          "adapt: snapshot agent does not match the checkpoint");
  require(cfg.distraction != ObsMode::source,
          "adapt: distraction mode must differ from the source");

  AdaptArtifacts art;
  art.dir = out_dir;
  if (art.dir.empty()) {
    const fs::path seed_root = fs::path(bundle_path).parent_path()
                                   .parent_path();
    art.dir = (seed_root / ("adapt_" + to_string(cfg.adapt.regime) + "_" +
                            to_string(cfg.distraction) + "_s" +
                            std::to_string(seed)))
                  .string();
  }
  ensure_dir(join(art.dir, "checkpoints"));

  const EnvConfig source_cfg = env_with_mode(cfg, ObsMode::source, true);
  const EnvConfig target_cfg = env_with_mode(cfg, cfg.distraction, true);
  Rng root(seed);
  art.series =
      adapt(bundle, snap, source_cfg, target_cfg, &bank, cfg.adapt, root);

  CsvWriter metrics(join(art.dir, "adapt_metrics.csv"), kAdaptHeader);
  for (const AdaptDiagRow& r : art.series.rows)
    metrics.row({std::to_string(r.step), csv_double(r.source_return),
                 csv_double(r.target_return), csv_double(r.invdyn_loss),
                 csv_double(r.bc_loss), csv_double(r.cos_dist_encoder),
                 csv_double(r.cos_dist_bottleneck),
                 csv_double(r.mse_dist_encoder),
                 csv_double(r.mse_dist_bottleneck),
                 csv_double(r.forget_cos)});
  metrics.flush();

  CsvWriter tri(join(art.dir, "triangle.csv"),
                {"step", "pair", "cross", "forget", "align"});
  for (const TriangleLogRow& r : art.series.triangle)
    tri.row({std::to_string(r.step), std::to_string(r.pair),
             csv_double(r.cross), csv_double(r.forget), csv_double(r.align)});
  tri.flush();

  const int obs_dim = bundle.config.dims.obs;
  std::vector<std::string> pair_header = {"episode", "step", "action_0",
                                          "action_1"};
  for (int j = 0; j < obs_dim; ++j)
    pair_header.push_back("obs_source_" + std::to_string(j));
  for (int j = 0; j < obs_dim; ++j)
    pair_header.push_back("obs_target_" + std::to_string(j));
  CsvWriter pairs(join(art.dir, "matched_pairs.csv"), pair_header);
  const int ep_len = cfg.env.episode_length;
  for (size_t i = 0; i < art.series.pairs.size(); ++i) {
    const MatchedPair& p = art.series.pairs[i];
    std::vector<std::string> cells = {std::to_string(int(i) / ep_len),
                                      std::to_string(int(i) % ep_len),
                                      csv_double(p.action.x()),
                                      csv_double(p.action.y())};
    for (int j = 0; j < obs_dim; ++j)
      cells.push_back(csv_double(p.obs_source(j)));
    for (int j = 0; j < obs_dim; ++j)
      cells.push_back(csv_double(p.obs_target(j)));
    pairs.row(cells);
  }
  pairs.flush();

  art.adapted_bundle_path = join(art.dir, "checkpoints/adapted.ckpt");
  save_bundle(art.adapted_bundle_path, bundle);

  write_manifest(join(art.dir, "seed.manifest"),
                 {{"command", "adapt"},
                  {"master_seed", std::to_string(seed)},
                  {"bundle", bundle_path},
                  {"snapshot", snapshot_path},
                  {"bank", bank_path},
                  {"regime", to_string(cfg.adapt.regime)},
                  {"distraction", to_string(cfg.distraction)},
                  {"steps", std::to_string(cfg.adapt.steps)},
                  {"aborted", art.series.aborted ? "1" : "0"}});
  return art;
}

EvalResult run_eval(const std::string& bundle_path,
                    const std::string& bank_path, const EnvConfig& env,
                    int n_episodes, std::uint64_t seed) {
  const AgentBundle bundle = load_bundle(bundle_path);
  const VideoBank bank = load_video_bank(bank_path);
  EnvConfig cfg = env;
  cfg.expose_reward = true;
  Rng rng(seed);
  return evaluate_policy(bundle, cfg, &bank, n_episodes, rng);
}

DiagnoseResult run_diagnose(const std::string& adapt_dir) {
  const auto manifest = read_manifest(join(adapt_dir, "seed.manifest"));
  require(manifest_value(manifest, "command") == "adapt",
          "diagnose: not an adaptation run directory");
  const AgentBundle start = load_bundle(manifest_value(manifest, "bundle"));
  const SnapshotSet snap =
      load_snapshot(manifest_value(manifest, "snapshot"));
  const int steps = std::stoi(manifest_value(manifest, "steps"));
  const bool aborted = manifest_value(manifest, "aborted") == "1";

  const CsvTable metrics = read_csv(join(adapt_dir, "adapt_metrics.csv"));
  require(!metrics.rows.empty(), "diagnose: empty metrics table");
  const CsvTable pair_table = read_csv(join(adapt_dir, "matched_pairs.csv"));
  const int n = int(pair_table.rows.size());
  require(n > 0, "diagnose: empty matched-pair table");
  const int obs_dim = start.config.dims.obs;
  const int src0 = pair_table.column("obs_source_0");
  const int tgt0 = pair_table.column("obs_target_0");
  require(src0 >= 0 && tgt0 >= 0, "diagnose: matched-pair columns missing");
  MatrixXd obs_source(n, obs_dim), obs_target(n, obs_dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < obs_dim; ++j) {
      obs_source(i, j) = pair_table.value(size_t(i), src0 + j);
      obs_target(i, j) = pair_table.value(size_t(i), tgt0 + j);
    }

  DiagnoseResult res;
  res.report_path = join(adapt_dir, "diagnose_report.csv");
  CsvWriter report(res.report_path, {"step", "column", "stored", "recomputed",
                                     "abs_diff", "ok"});
  res.ok = true;
  auto check_row = [&](size_t row, const AgentBundle& state) {
    const std::array<double, 5> rec =
        distance_columns(state, snap, obs_source, obs_target);
    const int step_col = metrics.column("step");
    const int step = int(metrics.value(row, step_col));
    for (size_t c = 0; c < kDistanceColumns.size(); ++c) {
      const int col = metrics.column(kDistanceColumns[c]);
      require(col >= 0, "diagnose: column missing " + kDistanceColumns[c]);
      const double stored = metrics.value(row, col);
      const double diff = std::abs(stored - rec[c]);
      const bool ok = diff <= 1e-9;
      res.ok = res.ok && ok;
      ++res.cells_checked;
      report.row({std::to_string(step), kDistanceColumns[c],
                  csv_double(stored), csv_double(rec[c]), csv_double(diff),
                  ok ? "1" : "0"});
    }
  };

  check_row(0, start);
  // the adapted checkpoint matches the final row only when the run reached
  // its configured step count
  const int step_col = metrics.column("step");
  const int last_step =
      int(metrics.value(metrics.rows.size() - 1, step_col));
  if (!aborted && last_step == steps && metrics.rows.size() > 1) {
    const AgentBundle adapted =
        load_bundle(join(adapt_dir, "checkpoints/adapted.ckpt"));
    check_row(metrics.rows.size() - 1, adapted);
  }
  report.flush();
  return res;
}

VerifyResult run_verify(const RunConfig& cfg, const std::string& bundle_path,
                        std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  Rng root(seed);
  const Dims d = cfg.dims();
  const int trials = cfg.theory_trials;
  VerifyResult res;

  auto verify_actor = [&](const ParamGraph& actor, const std::string& tag,
                          Rng rng) {
    const ActorLipschitz lip = actor_bottleneck_lipschitz(actor);
    const double k = std::max(lip.k_mean, lip.k_var);
    PropReport r = verify_policy_kl_bound(
        actor_policy_from_bottleneck(actor, kSigma2Min), k, d.bottleneck,
        d.act, kSigma2Min, trials, rng);
    r.proposition += tag;
    res.reports.push_back(std::move(r));
  };
  auto verify_critic = [&](const ParamGraph& critic, const std::string& tag,
                           Rng rng_pref, Rng rng_gap) {
    const double k = lipschitz_upper(critic, true);
    const CriticMap q = critic_from_bottleneck(critic);
    const int e_dim = d.bottleneck - d.act;
    PropReport r1 =
        verify_preference_radius(q, k, e_dim, d.act, trials, rng_pref);
    r1.proposition += tag;
    res.reports.push_back(std::move(r1));
    PropReport r2 =
        verify_radius_action_gap(q, k, e_dim, d.act, trials, rng_gap);
    r2.proposition += tag;
    res.reports.push_back(std::move(r2));
  };

  {
    Rng fresh = root.fork("fresh");
    const ParamGraph actor = make_actor(d, fresh, "fresh_actor");
    const ParamGraph critic = make_critic(d, fresh, "fresh_critic");
    verify_actor(actor, "_fresh", root.fork("kl_fresh"));
    verify_critic(critic, "_fresh", root.fork("pref_fresh"),
                  root.fork("gap_fresh"));
  }
  if (!bundle_path.empty()) {
    const AgentBundle bundle = load_bundle(bundle_path);
    require(bundle.config.dims.bottleneck == d.bottleneck,
            "verify: checkpoint width does not match the configuration");
    if (bundle.is_sac())
      verify_actor(bundle.f_a, "_trained", root.fork("kl_trained"));
    verify_critic(bundle.f_c1, "_trained", root.fork("pref_trained"),
                  root.fork("gap_trained"));
  }

  res.report_path = join(out_dir, "theory_report.csv");
  CsvWriter report(res.report_path, {"proposition", "trials", "violations",
                                     "max_slack", "min_slack"});
  res.ok = true;
  for (const PropReport& r : res.reports) {
    res.ok = res.ok && r.violations == 0;
    report.row({r.proposition, std::to_string(r.trials),
                std::to_string(r.violations), csv_double(r.max_slack),
                csv_double(r.min_slack)});
  }
  report.flush();
  return res;
}

SweepResult run_sweep(const RunConfig& cfg) {
  const std::string run_root = join(cfg.out_root, cfg.name);
  ensure_dir(run_root);
  SweepResult out;
  out.csv_path = join(run_root, "sweep.csv");
  CsvWriter csv(out.csv_path, {"coefficient", "seed", "lipschitz_upper",
                               "return_pre", "return_post", "normalised"});
  for (const double coeff : cfg.sweep_l2) {
    RunConfig sub = cfg;
    sub.agent_cfg.l2_coefficient = coeff;
    sub.adapt.regime = AdaptRegime::replay;
    sub.name = cfg.name + "/l2_" + fmt_g(coeff);
    for (const std::uint64_t seed : cfg.seeds) {
      const TrainArtifacts ta = run_train(sub, seed);
      const AdaptArtifacts aa = run_adapt(sub, ta.bundle_path,
                                          ta.snapshot_path, ta.bank_path,
                                          seed);
      const AgentBundle trained = load_bundle(ta.bundle_path);
      SweepRow row;
      row.coefficient = coeff;
      row.seed = seed;
      row.lipschitz_upper = lipschitz_upper(
          trained.is_sac() ? trained.f_a : trained.f_c1, true);
      row.return_pre = aa.series.rows.front().target_return;
      row.return_post = aa.series.rows.back().target_return;
      row.normalised = row.return_post / row.return_pre;
      csv.row({csv_double(row.coefficient), std::to_string(row.seed),
               csv_double(row.lipschitz_upper), csv_double(row.return_pre),
               csv_double(row.return_post), csv_double(row.normalised)});
      out.rows.push_back(row);
    }
  }
  csv.flush();
  return out;
}

}  // namespace adaptlab
