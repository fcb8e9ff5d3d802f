#pragma once

#include <string>
#include <vector>

#include "calvin/training.hpp"

namespace calvin {

enum class RolloutOutcome { kSuccess, kFalseDone, kStepLimit, kStuck };

std::string to_string(RolloutOutcome o);

struct RolloutResult {
    RolloutOutcome outcome = RolloutOutcome::kStepLimit;
    int steps = 0;
    int collisions = 0;
    std::vector<AgentState> states;
    std::vector<int> actions;
};

// Live episode: each step reveals (or scans) from the current pose, re-plans
// with V warm-started from the previous step, and acts greedily with
// lowest-index tie-breaking. Collisions leave the agent in place; a repeated
// (state, observation) pair seen four times ends the episode as stuck.
RolloutResult rollout(Model& model, const Maze& maze, int max_steps, uint64_t seed);

// As rollout, from an explicit start state (validation rollouts reuse the
// demonstration's start pose).
RolloutResult rollout_from(Model& model, const Maze& maze, const AgentState& start, int max_steps,
                           uint64_t seed);

struct MetricsSummary {
    double success_mean = 0.0;
    double success_std = 0.0;
    std::vector<double> success_per_seed;
    double mean_steps_on_success = 0.0;
    double collision_violation_rate = 0.0;
    int mazes_per_seed = 0;
    int n_seeds = 0;

    std::string to_json() const; // schema version "v1"
    std::string to_csv() const;
};

// Success over fresh unseen mazes: `n_mazes` per seed, mean ± stddev across
// seeds, plus the collision-preference violation rate on the first seed's
// mazes.
MetricsSummary evaluate_model(Model& model, int n_mazes, int n_seeds, uint64_t seed_base,
                              int max_steps);

// Fraction of free states where some unavailable move scores at least as high
// as some available move (done excluded from both sides). Q is computed from
// the full observation.
double collision_preference_rate(Model& model, const std::vector<Maze>& mazes);

// Per-state violation test on one precomputed Q map.
int collision_violations(const Tensor& q, const Maze& maze, Mode mode, int* states_checked);

}  // namespace calvin
