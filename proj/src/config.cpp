#include "adaptlab/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace adaptlab {
namespace {

std::string trim(const std::string& s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(const std::string& what) {
  throw std::invalid_argument("config: " + what);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) fail("bad number for " + key + ": " + v);
    return d;
  } catch (const std::invalid_argument&) {
    fail("bad number for " + key + ": " + v);
  } catch (const std::out_of_range&) {
    fail("number out of range for " + key + ": " + v);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long n = std::stol(v, &pos);
    if (pos != v.size()) fail("bad integer for " + key + ": " + v);
    return int(n);
  } catch (const std::invalid_argument&) {
    fail("bad integer for " + key + ": " + v);
  } catch (const std::out_of_range&) {
    fail("integer out of range for " + key + ": " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("bad boolean for " + key + ": " + v);
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// one registry drives parsing, overrides, and serialization so the three can
// never disagree about the key set
struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyHandler>& registry() {
  static const std::map<std::string, KeyHandler> reg = [] {
    std::map<std::string, KeyHandler> r;
    const auto add = [&r](const std::string& key,
                          std::function<void(RunConfig&, const std::string&)> s,
                          std::function<std::string(const RunConfig&)> g) {
      r[key] = KeyHandler{std::move(s), std::move(g)};
    };

    add(
        "run.name",
        [](RunConfig& c, const std::string& v) { c.name = v; },
        [](const RunConfig& c) { return c.name; });
    add(
        "run.out_root",
        [](RunConfig& c, const std::string& v) { c.out_root = v; },
        [](const RunConfig& c) { return c.out_root; });
    add(
        "run.agent",
        [](RunConfig& c, const std::string& v) {
          c.agent = agent_from_string(v);
        },
        [](const RunConfig& c) { return to_string(c.agent); });
    add(
        "run.distraction",
        [](RunConfig& c, const std::string& v) {
          const ObsMode m = mode_from_string(v);
          if (m == ObsMode::source) fail("run.distraction must be distracted");
          c.distraction = m;
        },
        [](const RunConfig& c) { return to_string(c.distraction); });
    add(
        "run.seeds",
        [](RunConfig& c, const std::string& v) {
          c.seeds.clear();
          for (const std::string& s : split_commas(v))
            c.seeds.push_back(std::uint64_t(parse_int("run.seeds", s)));
          if (c.seeds.empty()) fail("run.seeds must list at least one seed");
        },
        [](const RunConfig& c) {
          std::string out;
          for (size_t i = 0; i < c.seeds.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(c.seeds[i]);
          }
          return out;
        });

#define AGENT_DOUBLE(key, field)                                   \
  add(                                                             \
      key,                                                         \
      [](RunConfig& c, const std::string& v) {                     \
        c.agent_cfg.field = parse_double(key, v);                  \
      },                                                           \
      [](const RunConfig& c) { return fmt_double(c.agent_cfg.field); })
    AGENT_DOUBLE("agent.gamma", gamma);
    AGENT_DOUBLE("agent.alpha_ent", alpha_ent);
    AGENT_DOUBLE("agent.tau", tau);
    AGENT_DOUBLE("agent.lr", lr);
    AGENT_DOUBLE("agent.l2_coefficient", l2_coefficient);
    AGENT_DOUBLE("agent.qtopt_explore_noise", qtopt_explore_noise);
#undef AGENT_DOUBLE
#define AGENT_INT(key, field)                                      \
  add(                                                             \
      key,                                                         \
      [](RunConfig& c, const std::string& v) {                     \
        c.agent_cfg.field = parse_int(key, v);                     \
      },                                                           \
      [](const RunConfig& c) { return std::to_string(c.agent_cfg.field); })
    AGENT_INT("agent.qtopt_candidates", qtopt_candidates);
    AGENT_INT("agent.qtopt_refine_iters", qtopt_refine_iters);
    AGENT_INT("agent.emb_dim", dims.emb);
    AGENT_INT("agent.hidden_dim", dims.hidden);
    AGENT_INT("agent.bottleneck_dim", dims.bottleneck);
#undef AGENT_INT

#define ENV_INT(key, field)                                              \
  add(                                                                   \
      key,                                                               \
      [](RunConfig& c, const std::string& v) {                           \
        c.env.field = parse_int(key, v);                                 \
      },                                                                 \
      [](const RunConfig& c) { return std::to_string(c.env.field); })
    ENV_INT("env.episode_length", episode_length);
    ENV_INT("env.distractor_dim", distractor_dim);
#undef ENV_INT
#define ENV_DOUBLE(key, field)                                           \
  add(                                                                   \
      key,                                                               \
      [](RunConfig& c, const std::string& v) {                           \
        c.env.field = parse_double(key, v);                              \
      },                                                                 \
      [](const RunConfig& c) { return fmt_double(c.env.field); })
    ENV_DOUBLE("env.beta", beta);
    ENV_DOUBLE("env.v_max", v_max);
#undef ENV_DOUBLE

#define TRAIN_INT(key, field)                                            \
  add(                                                                   \
      key,                                                               \
      [](RunConfig& c, const std::string& v) {                           \
        c.train.field = parse_int(key, v);                               \
      },                                                                 \
      [](const RunConfig& c) { return std::to_string(c.train.field); })
    TRAIN_INT("train.steps", steps);
    TRAIN_INT("train.batch", batch);
    TRAIN_INT("train.buffer_capacity", buffer_capacity);
    TRAIN_INT("train.init_random", init_random);
    TRAIN_INT("train.update_after", update_after);
    TRAIN_INT("train.eval_every", eval_every);
    TRAIN_INT("train.n_eval_episodes", n_eval_episodes);
    TRAIN_INT("train.log_every", log_every);
#undef TRAIN_INT
    add(
        "train.reward_on_target",
        [](RunConfig& c, const std::string& v) {
          c.train.reward_on_target = parse_bool("train.reward_on_target", v);
        },
        [](const RunConfig& c) {
          return c.train.reward_on_target ? std::string("true")
                                          : std::string("false");
        });

    add(
        "adapt.regime",
        [](RunConfig& c, const std::string& v) {
          c.adapt.regime = regime_from_string(v);
        },
        [](const RunConfig& c) { return to_string(c.adapt.regime); });
#define ADAPT_INT(key, field)                                            \
  add(                                                                   \
      key,                                                               \
      [](RunConfig& c, const std::string& v) {                           \
        c.adapt.field = parse_int(key, v);                               \
      },                                                                 \
      [](const RunConfig& c) { return std::to_string(c.adapt.field); })
    ADAPT_INT("adapt.steps", steps);
    ADAPT_INT("adapt.prefill", prefill);
    ADAPT_INT("adapt.batch", batch);
    ADAPT_INT("adapt.grad_steps_per_frame", grad_steps_per_frame);
    ADAPT_INT("adapt.buffer_capacity", buffer_capacity);
    ADAPT_INT("adapt.diag_every", diag_every);
    ADAPT_INT("adapt.n_matched_episodes", n_matched_episodes);
    ADAPT_INT("adapt.n_eval_episodes", n_eval_episodes);
#undef ADAPT_INT
#define ADAPT_DOUBLE(key, field)                                         \
  add(                                                                   \
      key,                                                               \
      [](RunConfig& c, const std::string& v) {                           \
        c.adapt.field = parse_double(key, v);                            \
      },                                                                 \
      [](const RunConfig& c) { return fmt_double(c.adapt.field); })
    ADAPT_DOUBLE("adapt.augment_noise", augment_noise);
    ADAPT_DOUBLE("adapt.bc_weight", bc_weight);
    ADAPT_DOUBLE("adapt.lr", lr);
#undef ADAPT_DOUBLE

    add(
        "sweep.l2_coefficients",
        [](RunConfig& c, const std::string& v) {
          c.sweep_l2.clear();
          for (const std::string& s : split_commas(v))
            c.sweep_l2.push_back(parse_double("sweep.l2_coefficients", s));
          if (c.sweep_l2.empty())
            fail("sweep.l2_coefficients must list at least one value");
        },
        [](const RunConfig& c) {
          std::string out;
          for (size_t i = 0; i < c.sweep_l2.size(); ++i) {
            if (i) out += ",";
            out += fmt_double(c.sweep_l2[i]);
          }
          return out;
        });
    add(
        "theory.n_trials",
        [](RunConfig& c, const std::string& v) {
          c.theory_trials = parse_int("theory.n_trials", v);
        },
        [](const RunConfig& c) { return std::to_string(c.theory_trials); });
    return r;
  }();
  return reg;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = registry().find(key);
  if (it == registry().end()) fail("unknown key " + key);
  it->second.set(cfg, value);
}

}  // namespace

std::string to_string(AgentKind k) {
  return k == AgentKind::sac ? "sac" : "qtopt";
}
std::string to_string(ObsMode m) {
  switch (m) {
    case ObsMode::source: return "source";
    case ObsMode::colour: return "colour";
    default: return "background";
  }
}
std::string to_string(AdaptRegime r) {
  switch (r) {
    case AdaptRegime::online: return "online";
    case AdaptRegime::replay: return "replay";
    default: return "replay_bc";
  }
}

AgentKind agent_from_string(const std::string& s) {
  if (s == "sac") return AgentKind::sac;
  if (s == "qtopt") return AgentKind::qtopt;
  fail("unknown agent " + s);
}
ObsMode mode_from_string(const std::string& s) {
  if (s == "source") return ObsMode::source;
  if (s == "colour") return ObsMode::colour;
  if (s == "background") return ObsMode::background;
  fail("unknown observation mode " + s);
}
AdaptRegime regime_from_string(const std::string& s) {
  if (s == "online") return AdaptRegime::online;
  if (s == "replay") return AdaptRegime::replay;
  if (s == "replay_bc") return AdaptRegime::replay_bc;
  fail("unknown regime " + s);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        fail("line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        fail("line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      fail("line " + std::to_string(line_no) + ": key outside any section");
    set_key(cfg, section + "." + key, value);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    fail("override must look like section.key=value: " + assignment);
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string serialize_run_config(const RunConfig& cfg) {
  // registry iteration is ordered by key, giving stable section grouping
  std::string out;
  std::string section;
  for (const auto& [key, handler] : registry()) {
    const size_t dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + handler.get(cfg) + "\n";
  }
  return out;
}

}  // namespace adaptlab
