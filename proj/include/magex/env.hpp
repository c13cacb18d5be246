#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "magex/common.hpp"
#include "magex/rng.hpp"

namespace magex {

enum class Task { SimpleSpread, PushBall, Drone };
enum class SpawnMode { Random, Mode1, Mode2, Mode3, Mode4 };

inline std::string task_name(Task t) {
  switch (t) {
    case Task::SimpleSpread: return "simple_spread";
    case Task::PushBall: return "push_ball";
    case Task::Drone: return "drone";
  }
  return "?";
}

inline std::string spawn_mode_name(SpawnMode m) {
  switch (m) {
    case SpawnMode::Random: return "random";
    case SpawnMode::Mode1: return "mode1";
    case SpawnMode::Mode2: return "mode2";
    case SpawnMode::Mode3: return "mode3";
    case SpawnMode::Mode4: return "mode4";
  }
  return "?";
}

// Simulator configuration. map_size/horizon of 0 pick the per-task defaults;
// radii of 0 pick the map-proportional defaults.
struct EnvConfig {
  Task task = Task::SimpleSpread;
  int n_agents = 5;
  double map_size = 0.0;
  int horizon = 0;
  SpawnMode spawn_mode = SpawnMode::Random;
  double alpha = 1.0;   // completion bonus coefficient
  double beta = 0.1;    // distance penalty coefficient
  double gamma = 1.0;   // collision penalty coefficient
  double reach_radius = 0.0;
  double collision_radius = 0.0;
  double spawn_inset = 0.05;  // mode segments sit this fraction inside the walls
  std::uint64_t rng_seed = 0;

  // Drone kinematics constants.
  double drone_max_speed = 2.0;   // m/s
  double drone_accel = 5.0;       // m/s^2
  int drone_physics_hz = 120;
  int drone_substeps = 4;  // physics steps per policy action

  int dim() const { return task == Task::Drone ? 3 : 2; }
};

// MPE agents move a fixed displacement per step, sized so a map crossing fits
// inside the horizon.
inline double mpe_step_length(const EnvConfig& cfg) {
  return 2.0 * cfg.map_size / static_cast<double>(cfg.horizon);
}

inline EnvConfig resolve_env_config(EnvConfig cfg) {
  if (cfg.n_agents < 1) throw ConfigError("env.n_agents must be positive");
  if (cfg.map_size == 0.0 || cfg.horizon == 0) {
    // stock task sizes; other combinations must spell out map and horizon
    struct Preset { Task task; int n; double map; int horizon; };
    static const Preset presets[] = {
        {Task::SimpleSpread, 5, 4.0, 60},   {Task::SimpleSpread, 20, 36.0, 100},
        {Task::SimpleSpread, 50, 100.0, 120}, {Task::PushBall, 5, 16.0, 100},
        {Task::PushBall, 20, 144.0, 200},   {Task::Drone, 2, 3.0, 120},
        {Task::Drone, 4, 3.0, 120},
    };
    bool found = false;
    for (const auto& p : presets) {
      if (p.task == cfg.task && p.n == cfg.n_agents) {
        if (cfg.map_size == 0.0) cfg.map_size = p.map;
        if (cfg.horizon == 0) cfg.horizon = p.horizon;
        found = true;
        break;
      }
    }
    if (!found)
      throw ConfigError("no stock preset for task '" + task_name(cfg.task) +
                        "' with n_agents=" + std::to_string(cfg.n_agents) +
                        "; set env.map_size and env.horizon explicitly");
  }
  if (cfg.map_size <= 0.0) throw ConfigError("env.map_size must be positive");
  if (cfg.horizon <= 0) throw ConfigError("env.horizon must be positive");
  if (cfg.reach_radius == 0.0) cfg.reach_radius = 0.05 * cfg.map_size;
  if (cfg.collision_radius == 0.0)
    cfg.collision_radius = cfg.task == Task::Drone ? 0.06 : 0.025 * cfg.map_size;
  if (cfg.task == Task::Drone && cfg.spawn_mode != SpawnMode::Random)
    throw ConfigError("drone task supports only random spawns");
  return cfg;
}

// Full simulator state. Assignments live here so that stepping is a pure
// function of (state, actions, cfg) and trajectories replay exactly.
struct WorldState {
  int n = 0;
  int dim = 2;
  std::vector<double> agent_pos;   // n x dim
  std::vector<double> agent_vel;   // n x dim
  std::vector<double> goal_pos;    // n x dim
  std::vector<double> ball_pos;    // n x 2, push ball only
  std::vector<char> ball_attached; // per agent, push ball only
  std::vector<char> reached;       // monotone within an episode
  std::vector<char> crashed;       // drone only
  std::vector<int> goal_assign;    // agent i -> landmark index
  std::vector<int> ball_assign;    // agent i -> ball index
  std::vector<int> collisions;     // collision events charged this step
  double max_substep_speed = 0.0;  // drone diagnostic for the last step
  int t = 0;

  double pos(int i, int d) const { return agent_pos[i * dim + d]; }
  double goal(int j, int d) const { return goal_pos[j * dim + d]; }

  double agent_goal_distance(int i) const {
    const int g = goal_assign[i];
    double sq = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = pos(i, d) - goal(g, d);
      sq += diff * diff;
    }
    return std::sqrt(sq);
  }

  double agent_ball_distance(int i) const {
    const int b = ball_assign[i];
    double sq = 0.0;
    for (int d = 0; d < 2; ++d) {
      const double diff = pos(i, d) - ball_pos[b * 2 + d];
      sq += diff * diff;
    }
    return std::sqrt(sq);
  }

  double agent_pair_distance(int i, int j) const {
    double sq = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = pos(i, d) - pos(j, d);
      sq += diff * diff;
    }
    return std::sqrt(sq);
  }
};

inline void set_goal_assignment(WorldState& s, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != s.n)
    throw ShapeError("goal assignment length mismatch");
  s.goal_assign = perm;
}

inline void set_ball_assignment(WorldState& s, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != s.n)
    throw ShapeError("ball assignment length mismatch");
  s.ball_assign = perm;
}

// ---- action space ------------------------------------------------------------

// MPE: 0 Up (+y), 1 Down (-y), 2 Left (-x), 3 Right (+x).
// Drone: index = ix + 3*iy + 9*iz, each component 0 stop, 1 forward (+),
// 2 backward (-) along its axis.
inline int action_count(const EnvConfig& cfg) {
  return cfg.task == Task::Drone ? 27 : 4;
}

inline void decode_drone_action(int a, double dir[3]) {
  static const double comp[3] = {0.0, 1.0, -1.0};
  dir[0] = comp[a % 3];
  dir[1] = comp[(a / 3) % 3];
  dir[2] = comp[(a / 9) % 3];
}

// ---- spawning ------------------------------------------------------------------

namespace detail {

struct Segment {
  double x0, y0, x1, y1;
};

// Fig style line arrangements, reconstructed as axis-aligned segments inset
// from the walls. Orange lines host agents, blue lines host goals, pink
// lines host balls.
inline void mode_segments(SpawnMode mode, double map, double inset_frac,
                          std::vector<Segment>& agents, std::vector<Segment>& goals,
                          std::vector<Segment>& balls) {
  const double lo = inset_frac * map;
  const double hi = map - lo;
  const double mid = 0.5 * map;
  agents.clear();
  goals.clear();
  balls.clear();
  switch (mode) {
    case SpawnMode::Mode1:  // left edge -> right edge
      agents.push_back({lo, lo, lo, hi});
      goals.push_back({hi, lo, hi, hi});
      balls.push_back({mid, lo, mid, hi});
      break;
    case SpawnMode::Mode2:  // bottom edge -> top edge
      agents.push_back({lo, lo, hi, lo});
      goals.push_back({lo, hi, hi, hi});
      balls.push_back({lo, mid, hi, mid});
      break;
    case SpawnMode::Mode3:  // lower-left corner L -> upper-right corner L
      agents.push_back({lo, lo, lo, mid});
      agents.push_back({lo, lo, mid, lo});
      goals.push_back({hi, mid, hi, hi});
      goals.push_back({mid, hi, hi, hi});
      balls.push_back({mid, lo, mid, hi});
      balls.push_back({lo, mid, hi, mid});
      break;
    case SpawnMode::Mode4:  // left+right edges -> top+bottom edges
      agents.push_back({lo, lo, lo, hi});
      agents.push_back({hi, lo, hi, hi});
      goals.push_back({lo, hi, hi, hi});
      goals.push_back({lo, lo, hi, lo});
      balls.push_back({mid, lo, mid, hi});
      balls.push_back({lo, mid, hi, mid});
      break;
    default:
      throw ConfigError("mode_segments: not a segment mode");
  }
}

inline void sample_on_segments(const std::vector<Segment>& segs, Rng& rng, double* xy) {
  const Segment& s = segs[segs.size() == 1 ? 0 : rng.uniform_int(static_cast<int>(segs.size()))];
  const double t = rng.uniform();
  xy[0] = s.x0 + t * (s.x1 - s.x0);
  xy[1] = s.y0 + t * (s.y1 - s.y0);
}

inline bool far_enough(const std::vector<double>& placed, int count, int dim,
                       const double* p, double min_dist) {
  for (int i = 0; i < count; ++i) {
    double sq = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = placed[i * dim + d] - p[d];
      sq += diff * diff;
    }
    if (std::sqrt(sq) < min_dist) return false;
  }
  return true;
}

}  // namespace detail

inline WorldState reset(const EnvConfig& cfg, std::uint64_t seed) {
  const int n = cfg.n_agents;
  const int dim = cfg.dim();
  Rng rng(seed);
  WorldState s;
  s.n = n;
  s.dim = dim;
  s.agent_pos.assign(n * dim, 0.0);
  s.agent_vel.assign(n * dim, 0.0);
  s.goal_pos.assign(n * dim, 0.0);
  s.reached.assign(n, 0);
  s.crashed.assign(n, 0);
  s.collisions.assign(n, 0);
  s.goal_assign.resize(n);
  std::iota(s.goal_assign.begin(), s.goal_assign.end(), 0);
  if (cfg.task == Task::PushBall) {
    s.ball_pos.assign(n * 2, 0.0);
    s.ball_attached.assign(n, 0);
    s.ball_assign.resize(n);
    std::iota(s.ball_assign.begin(), s.ball_assign.end(), 0);
  }
  s.t = 0;

  const double agent_sep = 2.5 * cfg.collision_radius;
  constexpr int kMaxTries = 200;

  auto place = [&](std::vector<double>& out, int index, int d, double min_sep,
                   auto&& draw) {
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
      double p[3] = {0, 0, 0};
      draw(p);
      if (min_sep <= 0.0 || detail::far_enough(out, index, d, p, min_sep)) {
        for (int k = 0; k < d; ++k) out[index * d + k] = p[k];
        return;
      }
    }
    throw ConfigError("spawn failed: n_agents and map_size leave no room for "
                      "non-overlapping placements");
  };

  if (cfg.task == Task::Drone) {
    const double half = cfg.map_size / 2.0;
    auto draw = [&](double* p) {
      p[0] = rng.uniform(-half, half);
      p[1] = rng.uniform(-half, half);
      p[2] = half;  // spawn altitude is fixed
    };
    for (int i = 0; i < n; ++i) place(s.agent_pos, i, 3, agent_sep, draw);
    for (int j = 0; j < n; ++j) place(s.goal_pos, j, 3, 0.0, draw);
    return s;
  }

  if (cfg.spawn_mode == SpawnMode::Random) {
    auto draw = [&](double* p) {
      p[0] = rng.uniform(0.0, cfg.map_size);
      p[1] = rng.uniform(0.0, cfg.map_size);
    };
    for (int i = 0; i < n; ++i) place(s.agent_pos, i, 2, agent_sep, draw);
    for (int j = 0; j < n; ++j) place(s.goal_pos, j, 2, 0.0, draw);
    if (cfg.task == Task::PushBall)
      for (int j = 0; j < n; ++j) place(s.ball_pos, j, 2, 0.0, draw);
    return s;
  }

  std::vector<detail::Segment> agent_segs, goal_segs, ball_segs;
  detail::mode_segments(cfg.spawn_mode, cfg.map_size, cfg.spawn_inset, agent_segs,
                        goal_segs, ball_segs);
  for (int i = 0; i < n; ++i)
    place(s.agent_pos, i, 2, agent_sep,
          [&](double* p) { detail::sample_on_segments(agent_segs, rng, p); });
  for (int j = 0; j < n; ++j)
    place(s.goal_pos, j, 2, 0.0,
          [&](double* p) { detail::sample_on_segments(goal_segs, rng, p); });
  if (cfg.task == Task::PushBall)
    for (int j = 0; j < n; ++j)
      place(s.ball_pos, j, 2, 0.0,
            [&](double* p) { detail::sample_on_segments(ball_segs, rng, p); });
  return s;
}

// ---- observations -----------------------------------------------------------------

// Flattening order per agent (documented, constant for a given task and N):
//   simple_spread: self(2), assigned goal(2), others by index(2(N-1)), label(2)
//   push_ball:     as above, then assigned ball(2), attached flag(1)
//   drone:         self(3), assigned goal(3), others(3(N-1)), label(2), vel(3)
// The label is the one-hot [not reached, reached].
inline std::size_t observation_length(const EnvConfig& cfg) {
  const std::size_t n = cfg.n_agents;
  switch (cfg.task) {
    case Task::SimpleSpread: return 2 * n + 4;
    case Task::PushBall: return 2 * n + 7;
    case Task::Drone: return 3 * n + 8;
  }
  return 0;
}

inline std::vector<double> observe_agent(const WorldState& s, const EnvConfig& cfg,
                                         int i) {
  const int dim = s.dim;
  std::vector<double> o;
  o.reserve(observation_length(cfg));
  for (int d = 0; d < dim; ++d) o.push_back(s.pos(i, d));
  const int g = s.goal_assign[i];
  for (int d = 0; d < dim; ++d) o.push_back(s.goal(g, d));
  for (int j = 0; j < s.n; ++j) {
    if (j == i) continue;
    for (int d = 0; d < dim; ++d) o.push_back(s.pos(j, d));
  }
  o.push_back(s.reached[i] ? 0.0 : 1.0);
  o.push_back(s.reached[i] ? 1.0 : 0.0);
  if (cfg.task == Task::PushBall) {
    const int b = s.ball_assign[i];
    o.push_back(s.ball_pos[b * 2]);
    o.push_back(s.ball_pos[b * 2 + 1]);
    o.push_back(s.ball_attached[i] ? 1.0 : 0.0);
  }
  if (cfg.task == Task::Drone)
    for (int d = 0; d < 3; ++d) o.push_back(s.agent_vel[i * 3 + d]);
  return o;
}

inline std::vector<std::vector<double>> observations(const WorldState& s,
                                                     const EnvConfig& cfg) {
  std::vector<std::vector<double>> out;
  out.reserve(s.n);
  for (int i = 0; i < s.n; ++i) out.push_back(observe_agent(s, cfg, i));
  return out;
}

// ---- metrics ------------------------------------------------------------------------

inline double success_rate(const WorldState& s) {
  int count = 0;
  for (char r : s.reached) count += r ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(s.n);
}

inline double collision_rate(const WorldState& s, const EnvConfig& cfg) {
  if (cfg.task != Task::Drone)
    throw InputError("collision_rate: only defined for the drone task");
  int count = 0;
  for (char c : s.crashed) count += c ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(s.n);
}

// ---- reward -----------------------------------------------------------------------

// Per agent: R_e = alpha*R_b + beta*R_d + gamma*R_c where R_b flags a newly
// reached goal, R_d is -(distance to the current target)/map_size and R_c is
// -1 per collision event charged this step. Push Ball targets the assigned
// ball until it is attached, the assigned landmark afterwards.
inline std::vector<double> reward(const WorldState& before, const WorldState& after,
                                  const EnvConfig& cfg) {
  std::vector<double> r(after.n, 0.0);
  for (int i = 0; i < after.n; ++i) {
    const double bonus = (after.reached[i] && !before.reached[i]) ? 1.0 : 0.0;
    double dist;
    if (cfg.task == Task::PushBall && !after.ball_attached[i])
      dist = after.agent_ball_distance(i);
    else
      dist = after.agent_goal_distance(i);
    const double shaped = -dist / cfg.map_size;
    const double collision_pen = -static_cast<double>(after.collisions[i]);
    r[i] = cfg.alpha * bonus + cfg.beta * shaped + cfg.gamma * collision_pen;
    if (!std::isfinite(r[i])) throw NumericError("non-finite environment reward");
  }
  return r;
}

// ---- stepping ---------------------------------------------------------------------

struct StepResult {
  WorldState state;
  std::vector<std::vector<double>> observations;
  std::vector<double> rewards;
  bool done = false;
  double success = 0.0;
  int collision_events = 0;
};

namespace detail {

inline void mpe_move(WorldState& s, const EnvConfig& cfg,
                     const std::vector<int>& actions) {
  const double step_len = mpe_step_length(cfg);
  for (int i = 0; i < s.n; ++i) {
    double dx = 0.0, dy = 0.0;
    switch (actions[i]) {
      case 0: dy = step_len; break;
      case 1: dy = -step_len; break;
      case 2: dx = -step_len; break;
      case 3: dx = step_len; break;
      default: throw InputError("mpe action out of range");
    }
    s.agent_pos[i * 2] += dx;
    s.agent_pos[i * 2 + 1] += dy;
  }
}

// Symmetric positional separation along the contact normal; overlapping pairs
// end up exactly collision_radius apart. Coincident agents separate along x.
inline void mpe_bounce(WorldState& s, const EnvConfig& cfg) {
  for (int i = 0; i < s.n; ++i)
    for (int j = i + 1; j < s.n; ++j) {
      const double dist = s.agent_pair_distance(i, j);
      if (dist >= cfg.collision_radius) continue;
      double nx = 1.0, ny = 0.0;
      if (dist > 1e-12) {
        nx = (s.pos(j, 0) - s.pos(i, 0)) / dist;
        ny = (s.pos(j, 1) - s.pos(i, 1)) / dist;
      }
      const double push = 0.5 * (cfg.collision_radius - dist);
      s.agent_pos[i * 2] -= push * nx;
      s.agent_pos[i * 2 + 1] -= push * ny;
      s.agent_pos[j * 2] += push * nx;
      s.agent_pos[j * 2 + 1] += push * ny;
      ++s.collisions[i];
      ++s.collisions[j];
    }
}

inline void clamp_mpe(WorldState& s, const EnvConfig& cfg) {
  for (double& v : s.agent_pos) v = std::clamp(v, 0.0, cfg.map_size);
}

inline void drone_move(WorldState& s, const EnvConfig& cfg,
                       const std::vector<int>& actions) {
  const double dt = 1.0 / static_cast<double>(cfg.drone_physics_hz);
  const double half = cfg.map_size / 2.0;
  s.max_substep_speed = 0.0;
  for (int i = 0; i < s.n; ++i) {
    if (actions[i] < 0 || actions[i] >= 27) throw InputError("drone action out of range");
    if (s.crashed[i]) continue;  // crashed drones stay down
    double dir[3];
    decode_drone_action(actions[i], dir);
    const double mag = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    double acc[3] = {0, 0, 0};
    if (mag > 0.0)
      for (int d = 0; d < 3; ++d) acc[d] = cfg.drone_accel * dir[d] / mag;
    double* pos = s.agent_pos.data() + i * 3;
    double* vel = s.agent_vel.data() + i * 3;
    for (int sub = 0; sub < cfg.drone_substeps; ++sub) {
      for (int d = 0; d < 3; ++d) vel[d] += acc[d] * dt;
      double speed = std::sqrt(vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]);
      if (speed > cfg.drone_max_speed) {
        const double sc = cfg.drone_max_speed / speed;
        for (int d = 0; d < 3; ++d) vel[d] *= sc;
        speed = cfg.drone_max_speed;
      }
      s.max_substep_speed = std::max(s.max_substep_speed, speed);
      for (int d = 0; d < 3; ++d) pos[d] += vel[d] * dt;
      // stay inside the flight box, killing velocity into a wall
      for (int d = 0; d < 2; ++d) {
        if (pos[d] < -half) { pos[d] = -half; vel[d] = 0.0; }
        if (pos[d] > half) { pos[d] = half; vel[d] = 0.0; }
      }
      if (pos[2] < 0.0) { pos[2] = 0.0; vel[2] = 0.0; }
      if (pos[2] > cfg.map_size) { pos[2] = cfg.map_size; vel[2] = 0.0; }
    }
  }
}

inline void drone_crashes(WorldState& s, const EnvConfig& cfg) {
  for (int i = 0; i < s.n; ++i)
    for (int j = i + 1; j < s.n; ++j) {
      if (s.crashed[i] && s.crashed[j]) continue;
      if (s.agent_pair_distance(i, j) < cfg.collision_radius) {
        for (int k : {i, j}) {
          if (!s.crashed[k]) {
            s.crashed[k] = 1;
            ++s.collisions[k];
            for (int d = 0; d < 3; ++d) s.agent_vel[k * 3 + d] = 0.0;
          }
        }
      }
    }
}

inline void update_reached(WorldState& s, const EnvConfig& cfg) {
  for (int i = 0; i < s.n; ++i) {
    if (s.reached[i]) continue;
    if (cfg.task == Task::Drone && s.crashed[i]) continue;
    if (cfg.task == Task::PushBall) {
      if (!s.ball_attached[i]) continue;
      // ball rides the agent, so both are at the landmark together
      if (s.agent_goal_distance(i) <= cfg.reach_radius) s.reached[i] = 1;
    } else {
      if (s.agent_goal_distance(i) <= cfg.reach_radius) s.reached[i] = 1;
    }
  }
}

inline void pushball_attach_and_carry(WorldState& s, const EnvConfig& cfg) {
  for (int i = 0; i < s.n; ++i) {
    if (!s.ball_attached[i] && s.agent_ball_distance(i) <= cfg.reach_radius)
      s.ball_attached[i] = 1;
    if (s.ball_attached[i]) {
      const int b = s.ball_assign[i];
      s.ball_pos[b * 2] = s.pos(i, 0);
      s.ball_pos[b * 2 + 1] = s.pos(i, 1);
    }
  }
}

}  // namespace detail

inline StepResult step(const WorldState& state, const std::vector<int>& actions,
                       const EnvConfig& cfg) {
  if (static_cast<int>(actions.size()) != state.n)
    throw InputError("step: one action per agent required");
  if (state.t >= cfg.horizon) throw InputError("step: episode is already over");
  StepResult out;
  WorldState before = state;
  out.state = state;
  WorldState& s = out.state;
  std::fill(s.collisions.begin(), s.collisions.end(), 0);

  if (cfg.task == Task::Drone) {
    detail::drone_move(s, cfg, actions);
    detail::drone_crashes(s, cfg);
  } else {
    detail::mpe_move(s, cfg, actions);
    detail::mpe_bounce(s, cfg);
    detail::clamp_mpe(s, cfg);
    if (cfg.task == Task::PushBall) detail::pushball_attach_and_carry(s, cfg);
  }
  detail::update_reached(s, cfg);
  s.t += 1;

  out.rewards = reward(before, s, cfg);
  out.observations = observations(s, cfg);
  out.success = success_rate(s);
  for (int c : s.collisions) out.collision_events += c;
  bool all_crashed = cfg.task == Task::Drone;
  if (all_crashed)
    for (char c : s.crashed) all_crashed = all_crashed && c;
  out.done = s.t >= cfg.horizon || all_crashed;
  return out;
}

}  // namespace magex
