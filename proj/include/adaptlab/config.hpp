#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaptlab/adaptation.hpp"
#include "adaptlab/agents.hpp"
#include "adaptlab/env.hpp"

namespace adaptlab {

struct TrainConfig {
  int steps = 50000;
  int batch = 64;
  int buffer_capacity = 50000;
  int init_random = 1000;   // uniform-random warm-up frames
  int update_after = 1000;  // first gradient step
  int eval_every = 1000;
  int n_eval_episodes = 20;
  int log_every = 100;
  // baseline preset: train with rewards directly in the distracted env
  bool reward_on_target = false;
};

// Everything a run needs, resolvable from a flat sectioned key=value file.
// Dims are derived: obs = 6 state features + env.distractor_dim, act = 2.
struct RunConfig {
  std::string name = "run";
  std::string out_root = "runs";
  AgentKind agent = AgentKind::sac;
  ObsMode distraction = ObsMode::colour;  // target-environment mode
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  AgentConfig agent_cfg;
  EnvConfig env;
  TrainConfig train;
  AdaptConfig adapt;
  std::vector<double> sweep_l2 = {0.0, 1e-4, 1e-3, 1e-2, 1e-1};
  int theory_trials = 10000;

  // agent dims resolved against the environment
  Dims dims() const {
    Dims d = agent_cfg.dims;
    d.obs = 6 + env.distractor_dim;
    d.act = 2;
    return d;
  }
  AgentConfig resolved_agent() const {
    AgentConfig a = agent_cfg;
    a.kind = agent;
    a.dims = dims();
    return a;
  }
};

// enum spellings shared by config files and CLI flags
std::string to_string(AgentKind k);
std::string to_string(ObsMode m);
std::string to_string(AdaptRegime r);
AgentKind agent_from_string(const std::string& s);
ObsMode mode_from_string(const std::string& s);
AdaptRegime regime_from_string(const std::string& s);

// Sectioned key=value text: `[section]` headers, `key = value` lines, `#`
// comments. Unknown sections or keys are rejected so typos cannot silently
// fall back to defaults.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// applies one `section.key=value` override
void apply_override(RunConfig& cfg, const std::string& assignment);

// every known key with its resolved value; parse_run_config round-trips it
// to an identical configuration
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace adaptlab
