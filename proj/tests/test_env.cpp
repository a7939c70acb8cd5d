#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adaptlab/env.hpp"

using namespace adaptlab;

namespace {

EnvConfig cfg(ObsMode mode, bool reward = true) {
  EnvConfig c;
  c.mode = mode;
  c.expose_reward = reward;
  return c;
}

EnvState state_at(double px, double py, double tx, double ty) {
  EnvState s;
  s.position << px, py;
  s.target << tx, ty;
  s.velocity.setZero();
  return s;
}

}  // namespace

TEST_CASE("zero velocity and zero action leave the position unchanged") {
  PointMassEnv env(cfg(ObsMode::source), Rng(1));
  env.reset_to(state_at(0.2, -0.3, 0.9, 0.9));
  StepResult r = env.step({0.0, 0.0});
  CHECK(env.state().position[0] == 0.2);
  CHECK(env.state().position[1] == -0.3);
  CHECK(r.reward.has_value());
  CHECK(*r.reward ==
        doctest::Approx(-(env.state().position - env.state().target).norm()));
}

TEST_CASE("reaching the target yields reward 1") {
  PointMassEnv env(cfg(ObsMode::source), Rng(1));
  env.reset_to(state_at(0.5, 0.5, 0.5, 0.5));
  StepResult r = env.step({0.0, 0.0});
  CHECK(*r.reward == 1.0);
}

TEST_CASE("dynamics follow the pinned update rule") {
  PointMassEnv env(cfg(ObsMode::source), Rng(1));
  EnvState s = state_at(0.0, 0.0, 1.0, 1.0);
  s.velocity << 0.4, -0.2;
  env.reset_to(s);
  env.step({1.0, 0.5});
  // v = clip(0.9*0.4 + 0.1*1, 0.5) = 0.46 ; clip(0.9*-0.2 + 0.1*0.5, 0.5) = -0.13
  CHECK(env.state().velocity[0] == doctest::Approx(0.46).epsilon(1e-15));
  CHECK(env.state().velocity[1] == doctest::Approx(-0.13).epsilon(1e-15));
  CHECK(env.state().position[0] == doctest::Approx(0.46).epsilon(1e-15));
  CHECK(env.state().position[1] == doctest::Approx(-0.13).epsilon(1e-15));
}

TEST_CASE("velocity saturates and positions stay inside the box") {
  PointMassEnv env(cfg(ObsMode::source), Rng(1));
  env.reset_to(state_at(0.99, 0.99, -1.0, -1.0));
  for (int i = 0; i < 20; ++i) env.step({1.0, 1.0});
  CHECK(env.state().velocity[0] == 0.5);
  CHECK(env.state().position[0] == 1.0);
  CHECK(env.state().position[1] == 1.0);
}

TEST_CASE("episodes end exactly at the pinned horizon") {
  PointMassEnv env(cfg(ObsMode::source), Rng(2));
  env.reset();
  for (int t = 1; t <= 100; ++t) {
    StepResult r = env.step({0.1, 0.1});
    CHECK(r.done == (t == 100));
  }
}

TEST_CASE("fixed seed and action sequence replays bitwise") {
  auto run = [](ObsMode mode) {
    VideoBank bank = VideoBank::generate(Rng(7));
    PointMassEnv env(cfg(mode), Rng(42), &bank);
    Rng actions(5);
    std::vector<double> stream;
    for (int ep = 0; ep < 3; ++ep) {
      VectorXd obs = env.reset();
      for (int i = 0; i < obs.size(); ++i) stream.push_back(obs[i]);
      for (int t = 0; t < 100; ++t) {
        Vector2d a(actions.uniform(-1, 1), actions.uniform(-1, 1));
        StepResult r = env.step(a);
        for (int i = 0; i < r.obs.size(); ++i) stream.push_back(r.obs[i]);
      }
    }
    return stream;
  };
  for (ObsMode mode : {ObsMode::source, ObsMode::colour, ObsMode::background}) {
    auto a = run(mode), b = run(mode);
    REQUIRE(a.size() == b.size());
    bool identical = true;
    for (size_t i = 0; i < a.size(); ++i)
      if (std::memcmp(&a[i], &b[i], 8) != 0) identical = false;
    CHECK(identical);
  }
}

TEST_CASE("source observations have an exactly-zero distractor block") {
  PointMassEnv env(cfg(ObsMode::source), Rng(3));
  VectorXd obs = env.reset();
  REQUIRE(obs.size() == 14);
  CHECK(obs.tail(8).isZero(0.0));
  CHECK(obs.segment<2>(0) == env.state().position);
  CHECK(obs.segment<2>(4) == env.state().target);
}

TEST_CASE("colour distraction is constant within an episode") {
  PointMassEnv env(cfg(ObsMode::colour, false), Rng(4));
  env.reset_to(state_at(0.3, -0.4, 0.8, 0.1));
  VectorXd a = env.observe(), b = env.observe();
  CHECK((a - b).norm() == 0.0);
  // scaling acts multiplicatively on the state block
  VectorXd us = env.colour_state_draw();
  CHECK(a[0] == doctest::Approx(0.3 * (1.0 + us[0])).epsilon(1e-15));
  CHECK(a[4] == doctest::Approx(0.8 * (1.0 + us[4])).epsilon(1e-15));
  CHECK((a.tail(8) - env.colour_distractor_draw()).norm() == 0.0);
  // redraw on the next episode
  env.reset();
  CHECK((env.colour_state_draw() - us).norm() > 0.0);
}

TEST_CASE("colour draws are centred and bounded across many episodes") {
  EnvConfig c = cfg(ObsMode::colour, false);
  PointMassEnv env(c, Rng(99));
  const int n = 10000;
  VectorXd mean = VectorXd::Zero(kStateDim);
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < n; ++i) {
    env.reset();
    mean += env.colour_state_draw();
    lo = std::min(lo, env.colour_state_draw().minCoeff());
    hi = std::max(hi, env.colour_state_draw().maxCoeff());
  }
  mean /= double(n);
  CHECK(mean.cwiseAbs().maxCoeff() < 0.02);
  CHECK(lo >= -c.beta);
  CHECK(hi <= c.beta);
}

TEST_CASE("background distraction varies with time but not the state block") {
  VideoBank bank = VideoBank::generate(Rng(11));
  PointMassEnv env(cfg(ObsMode::background, false), Rng(12), &bank);
  env.reset_to(state_at(0.1, 0.2, -0.5, -0.6));
  VectorXd at0 = env.observe();
  env.step({0.0, 0.0});  // zero action at zero velocity keeps the state
  VectorXd at1 = env.observe();
  CHECK((at0.head(kStateDim) - at1.head(kStateDim)).norm() == 0.0);
  CHECK((at0.tail(8) - at1.tail(8)).norm() > 0.0);
}

TEST_CASE("video bank regeneration is bitwise stable and bounded") {
  VideoBank a = VideoBank::generate(Rng(21));
  VideoBank b = VideoBank::generate(Rng(21));
  REQUIRE(a.seqs.size() == 10);
  REQUIRE(a.frames() == 100);
  for (int s = 0; s < 10; ++s) {
    CHECK((a.seqs[s] - b.seqs[s]).norm() == 0.0);
    CHECK(a.seqs[s].maxCoeff() <= 1.0);
    CHECK(a.seqs[s].minCoeff() >= -1.0);
    // smooth walk: bounded single-step movement
    for (int t = 1; t < 100; ++t)
      CHECK((a.seqs[s].row(t) - a.seqs[s].row(t - 1)).cwiseAbs().maxCoeff() <
            0.5);
  }
}

TEST_CASE("reward-free environments omit the reward outright") {
  PointMassEnv env(cfg(ObsMode::colour, false), Rng(31));
  env.reset();
  StepResult r = env.step({0.3, -0.3});
  CHECK(!r.reward.has_value());
}

TEST_CASE("matched episodes share states and actions across both envs") {
  VideoBank bank = VideoBank::generate(Rng(41));
  PointMassEnv src(cfg(ObsMode::source, false), Rng(42));
  PointMassEnv tgt(cfg(ObsMode::background, false), Rng(43), &bank);
  Rng states(44);
  auto policy = [](const VectorXd& obs) {
    return Vector2d(std::tanh(obs[4] - obs[0]), std::tanh(obs[5] - obs[1]));
  };
  auto pairs = collect_matched_episodes(policy, 5, src, tgt, states);
  REQUIRE(pairs.size() == 500);
  for (const auto& p : pairs) {
    // background leaves the state block intact
    CHECK((p.obs_target.head(kStateDim) - p.obs_source.head(kStateDim)).norm() ==
          0.0);
    CHECK(p.obs_source[0] == p.state.position[0]);
    CHECK(p.obs_source[2] == p.state.velocity[0]);
    CHECK(p.obs_source.tail(8).isZero(0.0));
  }
}

TEST_CASE("matched episodes against a source target are trivially identical") {
  PointMassEnv src(cfg(ObsMode::source, false), Rng(51));
  PointMassEnv tgt(cfg(ObsMode::source, false), Rng(52));
  Rng states(53);
  auto policy = [](const VectorXd&) { return Vector2d(0.2, -0.1); };
  auto pairs = collect_matched_episodes(policy, 2, src, tgt, states);
  REQUIRE(pairs.size() == 200);
  for (const auto& p : pairs)
    CHECK((p.obs_source - p.obs_target).norm() == 0.0);
}

TEST_CASE("matched collection replays bitwise from the same seeds") {
  auto run = [] {
    VideoBank bank = VideoBank::generate(Rng(61));
    PointMassEnv src(cfg(ObsMode::source, false), Rng(62));
    PointMassEnv tgt(cfg(ObsMode::colour, false), Rng(63));
    Rng states(64);
    auto policy = [](const VectorXd& obs) {
      return Vector2d(std::tanh(obs[4] - obs[0]), std::tanh(obs[5] - obs[1]));
    };
    return collect_matched_episodes(policy, 3, src, tgt, states);
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].obs_source - b[i].obs_source).norm() == 0.0);
    CHECK((a[i].obs_target - b[i].obs_target).norm() == 0.0);
    CHECK((a[i].action - b[i].action).norm() == 0.0);
  }
}
