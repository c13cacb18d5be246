#include <catch2/catch_amalgamated.hpp>

#include "magex/env.hpp"

using namespace magex;

namespace {

EnvConfig spread_cfg(int n, double map, int horizon) {
  EnvConfig cfg;
  cfg.task = Task::SimpleSpread;
  cfg.n_agents = n;
  cfg.map_size = map;
  cfg.horizon = horizon;
  return resolve_env_config(cfg);
}

bool states_equal(const WorldState& a, const WorldState& b) {
  return a.agent_pos == b.agent_pos && a.agent_vel == b.agent_vel &&
         a.goal_pos == b.goal_pos && a.ball_pos == b.ball_pos &&
         a.reached == b.reached && a.crashed == b.crashed && a.t == b.t;
}

}  // namespace

TEST_CASE("stock task presets") {
  EnvConfig cfg;
  cfg.task = Task::SimpleSpread;
  cfg.n_agents = 5;
  auto r = resolve_env_config(cfg);
  REQUIRE(r.map_size == 4.0);
  REQUIRE(r.horizon == 60);

  cfg.n_agents = 50;
  r = resolve_env_config(cfg);
  REQUIRE(r.map_size == 100.0);
  REQUIRE(r.horizon == 120);

  cfg.task = Task::PushBall;
  cfg.n_agents = 20;
  r = resolve_env_config(cfg);
  REQUIRE(r.map_size == 144.0);
  REQUIRE(r.horizon == 200);

  cfg.task = Task::Drone;
  cfg.n_agents = 2;
  r = resolve_env_config(cfg);
  REQUIRE(r.horizon == 120);
  REQUIRE(r.collision_radius == 0.06);

  // no preset and no explicit sizes -> config error
  EnvConfig bad;
  bad.task = Task::SimpleSpread;
  bad.n_agents = 7;
  REQUIRE_THROWS_AS(resolve_env_config(bad), ConfigError);
}

TEST_CASE("reset is deterministic for (cfg, seed)") {
  auto cfg = spread_cfg(4, 6.0, 50);
  WorldState a = reset(cfg, 42);
  WorldState b = reset(cfg, 42);
  REQUIRE(states_equal(a, b));
  WorldState c = reset(cfg, 43);
  REQUIRE(!states_equal(a, c));
}

TEST_CASE("drone spawns at the fixed altitude") {
  EnvConfig cfg;
  cfg.task = Task::Drone;
  cfg.n_agents = 4;
  cfg = resolve_env_config(cfg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorldState s = reset(cfg, seed);
    for (int i = 0; i < s.n; ++i) {
      REQUIRE(s.pos(i, 2) == 1.5);
      REQUIRE(s.goal(i, 2) == 1.5);
      REQUIRE(std::fabs(s.pos(i, 0)) <= 1.5);
      REQUIRE(std::fabs(s.pos(i, 1)) <= 1.5);
    }
  }
}

TEST_CASE("random spawns cover the map uniformly per quadrant") {
  auto cfg = spread_cfg(3, 8.0, 60);
  const int resets = 10000;
  int quadrant[4] = {0, 0, 0, 0};
  int total = 0;
  for (int k = 0; k < resets; ++k) {
    WorldState s = reset(cfg, 1000 + k);
    for (int i = 0; i < s.n; ++i) {
      const int qx = s.pos(i, 0) < 4.0 ? 0 : 1;
      const int qy = s.pos(i, 1) < 4.0 ? 0 : 1;
      ++quadrant[qx * 2 + qy];
      ++total;
    }
  }
  const double expect = total / 4.0;
  const double sigma = std::sqrt(total * 0.25 * 0.75);
  for (int q = 0; q < 4; ++q)
    REQUIRE(std::fabs(quadrant[q] - expect) < 3.0 * sigma);
}

TEST_CASE("mode layouts put agents and goals on their segments") {
  auto cfg = spread_cfg(5, 10.0, 60);
  cfg.spawn_mode = SpawnMode::Mode1;
  WorldState s = reset(cfg, 7);
  for (int i = 0; i < s.n; ++i) REQUIRE(s.pos(i, 0) == Catch::Approx(0.5));  // left inset
  for (int j = 0; j < s.n; ++j) REQUIRE(s.goal(j, 0) == Catch::Approx(9.5));

  cfg.spawn_mode = SpawnMode::Mode2;
  s = reset(cfg, 7);
  for (int i = 0; i < s.n; ++i) REQUIRE(s.pos(i, 1) == Catch::Approx(0.5));
  for (int j = 0; j < s.n; ++j) REQUIRE(s.goal(j, 1) == Catch::Approx(9.5));

  cfg.spawn_mode = SpawnMode::Mode4;
  s = reset(cfg, 9);
  for (int i = 0; i < s.n; ++i) {
    const bool on_left = s.pos(i, 0) == Catch::Approx(0.5);
    const bool on_right = s.pos(i, 0) == Catch::Approx(9.5);
    REQUIRE((on_left || on_right));
  }
}

TEST_CASE("upward motion until clamped at the boundary") {
  auto cfg = spread_cfg(1, 4.0, 40);
  WorldState s = reset(cfg, 3);
  double prev_y = s.pos(0, 1);
  bool clamped = false;
  for (int t = 0; t < cfg.horizon; ++t) {
    auto res = step(s, {0}, cfg);  // Up
    s = res.state;
    if (s.pos(0, 1) == cfg.map_size) {
      clamped = true;
      break;
    }
    REQUIRE(s.pos(0, 1) > prev_y);
    prev_y = s.pos(0, 1);
  }
  REQUIRE(clamped);
}

TEST_CASE("overlapping agents bounce apart") {
  auto cfg = spread_cfg(2, 4.0, 60);
  WorldState s = reset(cfg, 5);
  // force both agents inside the collision radius, moving in parallel
  s.agent_pos = {2.0, 2.0, 2.0 + 0.4 * cfg.collision_radius, 2.0};
  const double before = s.agent_pair_distance(0, 1);
  auto res = step(s, {0, 0}, cfg);  // both Up: displacement keeps the gap
  REQUIRE(res.state.agent_pair_distance(0, 1) > before);
  REQUIRE(res.state.collisions[0] == 1);
  REQUIRE(res.state.collisions[1] == 1);
  REQUIRE(res.collision_events == 2);
}

TEST_CASE("drone closed-form kinematics for one policy step") {
  EnvConfig cfg;
  cfg.task = Task::Drone;
  cfg.n_agents = 2;
  cfg = resolve_env_config(cfg);
  WorldState s = reset(cfg, 11);
  s.agent_pos = {-1.0, 0.0, 1.5, 1.0, 0.5, 1.5};
  s.agent_vel.assign(6, 0.0);
  const double x0 = s.pos(0, 0);
  auto res = step(s, {1, 0}, cfg);  // agent 0: +x acceleration; agent 1: all stop
  const double dt = 1.0 / 120.0;
  // velocity after k substeps is 5*k*dt; displacement sums v_k * dt
  double expect_v = 0.0, expect_dx = 0.0;
  for (int k = 1; k <= 4; ++k) {
    expect_v = std::min(5.0 * k * dt, 2.0);
    expect_dx += expect_v * dt;
  }
  REQUIRE(res.state.agent_vel[0] == Catch::Approx(expect_v).margin(1e-15));
  REQUIRE(res.state.pos(0, 0) == Catch::Approx(x0 + expect_dx).margin(1e-15));
  REQUIRE(res.state.max_substep_speed <= 2.0);
  // stopped agent stays put
  REQUIRE(res.state.pos(1, 0) == 1.0);
}

TEST_CASE("drone speed never exceeds the cap") {
  EnvConfig cfg;
  cfg.task = Task::Drone;
  cfg.n_agents = 2;
  cfg = resolve_env_config(cfg);
  WorldState s = reset(cfg, 13);
  Rng rng(17);
  for (int t = 0; t < cfg.horizon; ++t) {
    std::vector<int> a = {rng.uniform_int(27), rng.uniform_int(27)};
    auto res = step(s, a, cfg);
    s = res.state;
    REQUIRE(s.max_substep_speed <= 2.0 + 1e-12);
    for (int i = 0; i < s.n; ++i) {
      double sp = 0.0;
      for (int d = 0; d < 3; ++d) sp += s.agent_vel[i * 3 + d] * s.agent_vel[i * 3 + d];
      REQUIRE(std::sqrt(sp) <= 2.0 + 1e-12);
    }
    if (res.done) break;
  }
}

TEST_CASE("drone collisions crash both and can end the episode") {
  EnvConfig cfg;
  cfg.task = Task::Drone;
  cfg.n_agents = 2;
  cfg = resolve_env_config(cfg);
  WorldState s = reset(cfg, 19);
  s.agent_pos = {0.0, 0.0, 1.5, 0.05, 0.0, 1.5};  // inside 0.06
  s.agent_vel.assign(6, 0.0);
  auto res = step(s, {0, 0}, cfg);
  REQUIRE(res.state.crashed[0]);
  REQUIRE(res.state.crashed[1]);
  REQUIRE(res.done);  // everyone crashed
  REQUIRE(collision_rate(res.state, cfg) == 1.0);
}

TEST_CASE("rewards decompose exactly") {
  auto cfg = spread_cfg(2, 4.0, 60);
  WorldState s = reset(cfg, 23);
  // park agent 0 one step below its goal so the next Up move arrives
  const int g0 = s.goal_assign[0];
  s.agent_pos[0] = s.goal_pos[g0 * 2];
  s.agent_pos[1] = std::max(0.0, s.goal_pos[g0 * 2 + 1] - mpe_step_length(cfg));
  s.agent_pos[2] = 0.0;
  s.agent_pos[3] = 0.0;
  auto res = step(s, {0, 0}, cfg);
  REQUIRE(res.state.reached[0]);
  const double d0 = res.state.agent_goal_distance(0);
  REQUIRE(res.rewards[0] ==
          Catch::Approx(cfg.alpha * 1.0 - cfg.beta * d0 / cfg.map_size).margin(1e-12));

  // beta = gamma = 0: reward is exactly the completion indicator
  EnvConfig pure = cfg;
  pure.beta = 0.0;
  pure.gamma = 0.0;
  auto res2 = step(s, {0, 0}, pure);
  REQUIRE(res2.rewards[0] == 1.0);
  REQUIRE(res2.rewards[1] == 0.0);
}

TEST_CASE("reward recomputes from the transition") {
  auto cfg = spread_cfg(3, 5.0, 50);
  WorldState s = reset(cfg, 29);
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    std::vector<int> acts = {rng.uniform_int(4), rng.uniform_int(4), rng.uniform_int(4)};
    WorldState before = s;
    auto res = step(s, acts, cfg);
    s = res.state;
    auto recomputed = reward(before, s, cfg);
    for (int i = 0; i < 3; ++i)
      REQUIRE(res.rewards[i] == Catch::Approx(recomputed[i]).margin(1e-12));
  }
}

TEST_CASE("success and collision rate counters") {
  auto cfg = spread_cfg(5, 4.0, 60);
  WorldState s = reset(cfg, 37);
  REQUIRE(success_rate(s) == 0.0);
  s.reached = {1, 1, 1, 0, 0};
  REQUIRE(success_rate(s) == Catch::Approx(0.6));
  s.reached = {1, 1, 1, 1, 1};
  REQUIRE(success_rate(s) == 1.0);
  REQUIRE_THROWS_AS(collision_rate(s, cfg), InputError);

  EnvConfig dcfg;
  dcfg.task = Task::Drone;
  dcfg.n_agents = 4;
  dcfg = resolve_env_config(dcfg);
  WorldState d = reset(dcfg, 39);
  REQUIRE(collision_rate(d, dcfg) == 0.0);
  d.crashed = {1, 0, 1, 0};
  REQUIRE(collision_rate(d, dcfg) == 0.5);
}

TEST_CASE("trajectories are bit-identical and stay inside the box") {
  auto cfg = spread_cfg(4, 4.0, 30);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WorldState a = reset(cfg, seed);
    WorldState b = reset(cfg, seed);
    Rng ra(seed + 100), rb(seed + 100);
    for (int t = 0; t < cfg.horizon; ++t) {
      std::vector<int> actions(4);
      for (auto& x : actions) x = ra.uniform_int(4);
      std::vector<int> actions_b(4);
      for (auto& x : actions_b) x = rb.uniform_int(4);
      a = step(a, actions, cfg).state;
      b = step(b, actions_b, cfg).state;
      for (double v : a.agent_pos) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= cfg.map_size);
      }
    }
    REQUIRE(states_equal(a, b));
  }
}

TEST_CASE("reached flags are monotone") {
  auto cfg = spread_cfg(3, 3.0, 40);
  WorldState s = reset(cfg, 41);
  Rng rng(43);
  std::vector<char> prev = s.reached;
  double prev_success = success_rate(s);
  for (int t = 0; t < cfg.horizon; ++t) {
    std::vector<int> acts = {rng.uniform_int(4), rng.uniform_int(4), rng.uniform_int(4)};
    s = step(s, acts, cfg).state;
    for (int i = 0; i < 3; ++i)
      if (prev[i]) REQUIRE(s.reached[i]);
    REQUIRE(success_rate(s) >= prev_success);
    prev = s.reached;
    prev_success = success_rate(s);
  }
}

TEST_CASE("push ball: find the ball, then carry it to the landmark") {
  EnvConfig cfg;
  cfg.task = Task::PushBall;
  cfg.n_agents = 1;
  cfg.map_size = 8.0;
  cfg.horizon = 100;
  cfg = resolve_env_config(cfg);
  WorldState s = reset(cfg, 47);
  s.agent_pos = {1.0, 4.0};
  s.ball_pos = {3.0, 4.0};
  s.goal_pos = {6.0, 4.0};
  REQUIRE(!s.ball_attached[0]);
  // walk right: attach the ball, then carry it onto the landmark
  bool attached_before_reach = false;
  for (int t = 0; t < 60 && !s.reached[0]; ++t) {
    auto res = step(s, {3}, cfg);
    s = res.state;
    if (s.ball_attached[0] && !s.reached[0]) attached_before_reach = true;
    if (s.ball_attached[0]) {
      REQUIRE(s.ball_pos[0] == s.agent_pos[0]);
      REQUIRE(s.ball_pos[1] == s.agent_pos[1]);
    }
  }
  REQUIRE(attached_before_reach);
  REQUIRE(s.reached[0]);
  // agent alone at the landmark without the ball does not count
  WorldState fresh = reset(cfg, 47);
  fresh.agent_pos = {6.0, 4.0};
  fresh.ball_pos = {1.0, 1.0};
  fresh.goal_pos = {6.0, 4.0};
  auto res = step(fresh, {0}, cfg);
  REQUIRE(!res.state.reached[0]);
}

TEST_CASE("action validation") {
  auto cfg = spread_cfg(1, 4.0, 60);
  WorldState s = reset(cfg, 53);
  REQUIRE_THROWS_AS(step(s, {4}, cfg), InputError);
  REQUIRE_THROWS_AS(step(s, {0, 0}, cfg), InputError);
}
