#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "magex/assignment.hpp"
#include "magex/nn.hpp"
#include "magex/tensor.hpp"

namespace magex {

// High-level goal scorer: one linear layer over the flattened, map-normalized
// (agent positions, goal positions) pair, one score per goal, plus a small
// value net for the one-step baseline.
struct CommanderPolicy {
  int n_agents = 0;
  int pos_dim = 2;
  LayerParams f_sche;                   // [2*dim*N -> N]
  std::vector<LayerParams> value_net;   // [2*dim*N -> 32 -> 1]

  ParamRefs parameters() {
    ParamRefs refs;
    refs.push_back({"commander.f_sche.weight", &f_sche.weight});
    refs.push_back({"commander.f_sche.bias", &f_sche.bias});
    for (auto& l : value_net) {
      refs.push_back({"commander." + l.name + ".weight", &l.weight});
      refs.push_back({"commander." + l.name + ".bias", &l.bias});
    }
    return refs;
  }

  CommanderPolicy clone_frozen() const {
    CommanderPolicy c;
    c.n_agents = n_agents;
    c.pos_dim = pos_dim;
    c.f_sche = {f_sche.name, f_sche.weight.detach_copy(), f_sche.bias.detach_copy()};
    for (const auto& l : value_net)
      c.value_net.push_back({l.name, l.weight.detach_copy(), l.bias.detach_copy()});
    return c;
  }
};

inline CommanderPolicy make_commander(int n_agents, int pos_dim, Rng& rng) {
  CommanderPolicy p;
  p.n_agents = n_agents;
  p.pos_dim = pos_dim;
  const std::size_t in = 2 * pos_dim * n_agents;
  p.f_sche = make_layer("f_sche", in, n_agents, rng);
  p.value_net.push_back(make_layer("value.0", in, 32, rng));
  p.value_net.push_back(make_layer("value.1", 32, 1, rng));
  return p;
}

// Flat commander observation: agent positions then goal positions, each
// coordinate divided by map_size.
inline std::vector<double> commander_observation(const std::vector<double>& agents,
                                                 const std::vector<double>& goals,
                                                 double map_size) {
  std::vector<double> obs;
  obs.reserve(agents.size() + goals.size());
  for (double v : agents) obs.push_back(v / map_size);
  for (double v : goals) obs.push_back(v / map_size);
  return obs;
}

// Goal scores (pre-softmax) for a flat observation; stays on the tape.
inline Tensor commander_scores(const CommanderPolicy& policy,
                               const std::vector<double>& obs) {
  const std::size_t expect = 2 * policy.pos_dim * policy.n_agents;
  if (obs.size() != expect)
    throw ShapeError("commander: agent/goal count mismatch");
  return linear(policy.f_sche, Tensor({obs.size()}, obs));
}

// P_goal = softmax(f_sche(P_a, P_g)).
inline Tensor score_goals(const CommanderPolicy& policy,
                          const std::vector<double>& agents,
                          const std::vector<double>& goals, double map_size) {
  return softmax(commander_scores(policy, commander_observation(agents, goals, map_size)));
}

inline Tensor commander_value(const CommanderPolicy& policy,
                              const std::vector<double>& obs) {
  if (obs.size() != 2 * static_cast<std::size_t>(policy.pos_dim) * policy.n_agents)
    throw ShapeError("commander: agent/goal count mismatch");
  return mlp_forward(policy.value_net, Tensor({obs.size()}, obs));
}

// Goals ranked by probability descending (ties to the lower goal index);
// agent i receives the i-th ranked goal.
inline std::vector<int> decode_greedy(const std::vector<double>& p_goal) {
  const int n = static_cast<int>(p_goal.size());
  std::vector<int> ranked(n);
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](int a, int b) { return p_goal[a] > p_goal[b]; });
  return ranked;
}

inline std::vector<int> decode_greedy(const Tensor& p_goal) {
  return decode_greedy(p_goal.values());
}

// Plackett-Luce log-probability of a full ranking under the given scores
// (logits): sum over stages of score[perm[i]] - logsumexp(remaining scores).
inline double pl_log_prob(const std::vector<double>& scores,
                          const std::vector<int>& perm) {
  const std::size_t n = scores.size();
  std::vector<char> remaining(n, 1);
  double lp = 0.0;
  for (std::size_t stage = 0; stage < n; ++stage) {
    const int pick = perm[stage];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (remaining[j]) mx = std::max(mx, scores[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (remaining[j]) sum += std::exp(scores[j] - mx);
    lp += scores[pick] - (mx + std::log(sum));
    remaining[pick] = 0;
  }
  return lp;
}

// Tape version used by the policy update.
inline Tensor pl_log_prob_tensor(const Tensor& scores, const std::vector<int>& perm) {
  const std::size_t n = scores.numel();
  std::vector<char> remaining(n, 1);
  std::vector<Tensor> terms;
  terms.reserve(n);
  for (std::size_t stage = 0; stage < n; ++stage) {
    const int pick = perm[stage];
    terms.push_back(sub(take(scores, pick), masked_logsumexp(scores, remaining)));
    remaining[pick] = 0;
  }
  return add_n(terms);
}

struct SampledAssignment {
  std::vector<int> perm;
  double log_prob = 0.0;
};

// Draws a ranking without replacement, proportionally to the remaining goal
// probabilities (realized as Gumbel perturbation of the scores, which samples
// the same Plackett-Luce distribution); greedy decode is this distribution's
// mode.
inline SampledAssignment sample_assignment(const std::vector<double>& scores,
                                           Rng& rng) {
  const std::size_t n = scores.size();
  std::vector<double> keys(n);
  for (std::size_t j = 0; j < n; ++j) keys[j] = scores[j] + rng.gumbel();
  SampledAssignment out;
  out.perm.resize(n);
  std::iota(out.perm.begin(), out.perm.end(), 0);
  std::stable_sort(out.perm.begin(), out.perm.end(),
                   [&](int a, int b) { return keys[a] > keys[b]; });
  out.log_prob = pl_log_prob(scores, out.perm);
  return out;
}

// Everything the trainer stores per commander action.
struct CommanderDecision {
  std::vector<double> obs;     // normalized flat observation
  std::vector<double> scores;  // pre-softmax goal scores
  std::vector<double> p_goal;
  std::vector<int> perm;
  double log_prob = 0.0;
  double value = 0.0;
};

enum class DecisionMode { Sample, Greedy };

inline CommanderDecision commander_decide(const CommanderPolicy& policy,
                                          const std::vector<double>& agents,
                                          const std::vector<double>& goals,
                                          double map_size, DecisionMode mode,
                                          Rng& rng) {
  CommanderDecision d;
  d.obs = commander_observation(agents, goals, map_size);
  NoGradGuard no_grad;
  Tensor scores = commander_scores(policy, d.obs);
  d.scores = scores.values();
  d.p_goal = softmax(scores).values();
  if (mode == DecisionMode::Sample) {
    auto s = sample_assignment(d.scores, rng);
    d.perm = std::move(s.perm);
    d.log_prob = s.log_prob;
  } else {
    d.perm = decode_greedy(d.p_goal);
    d.log_prob = pl_log_prob(d.scores, d.perm);
  }
  d.value = commander_value(policy, d.obs).item();
  return d;
}

}  // namespace magex
