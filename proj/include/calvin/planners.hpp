#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "calvin/env.hpp"
#include "calvin/graph.hpp"
#include "calvin/maze.hpp"
#include "calvin/rng.hpp"
#include "calvin/tensor.hpp"

namespace calvin {

// ---------------------------------------------------------------------------
// Exact value iteration over a tabular MDP with state-dependent legal actions.
// ---------------------------------------------------------------------------

struct ExactMdp {
    struct Transition {
        int next;
        float prob;
        float reward;
        bool terminal; // no future value flows through this transition
    };

    int n_states = 0;
    int n_actions = 0;
    float gamma = 0.99f;
    // Indexed s*n_actions + a; an empty list marks an illegal action.
    std::vector<std::vector<Transition>> table;

    void validate() const; // throws on non-normalized P
};

struct ViResult {
    Tensor v;                // [n_states]
    Tensor q;                // [n_actions, n_states]; -inf placeholder on illegal entries
    std::vector<int> policy; // argmax over legal actions, -1 where none
};

ViResult vi_exact(const ExactMdp& mdp, int iterations);

struct MazeMdpOptions {
    float gamma = 0.99f;
    bool euclid_move_costs = false; // reward -1/-sqrt(2) per move instead of 0
    float done_reward = 1.0f;       // for the done action at the target
};

// Ground-truth MDP of a maze: deterministic moves onto free cells, done legal
// only at the target (terminal). States on obstacle cells have no legal
// actions. State layout matches state_index().
ExactMdp maze_mdp(const Maze& maze, Mode mode, const MazeMdpOptions& opt);

// Greedy descent through a ViResult from `start`; returns the action list
// (ending in done when it succeeds within the step limit).
std::vector<int> greedy_rollout(const ExactMdp& mdp, const ViResult& vi, const Maze& maze,
                                Mode mode, AgentState start, int max_steps);

// ---------------------------------------------------------------------------
// VIN
// ---------------------------------------------------------------------------

struct VinParams {
    Mode mode = Mode::kPositional;
    int n_actions = kPositionalActions;
    int n_theta = 1;       // M
    int hidden_actions = 40;
    int kernel = 3;
    int hidden_width = 150;

    Tensor reward_w1, reward_b1; // hidden_width×3×3×3
    Tensor reward_w2, reward_b2; // 1×hidden_width×1×1
    Tensor p_r, p_v;             // hidden_actions×M×M×K×K
    Tensor head_w, head_b;       // n_actions×hidden_actions×1×1

    static VinParams init(Mode mode, int kernel, int hidden_actions, int hidden_width,
                          uint64_t seed);
    std::vector<std::pair<std::string, Tensor*>> named();
};

struct VinLeaves {
    Val reward_w1, reward_b1, reward_w2, reward_b2, p_r, p_v, head_w, head_b;
    std::vector<std::pair<std::string, Val>> named() const;
};

VinLeaves register_leaves(Graph& g, VinParams& p);

struct VinForward {
    Val logits; // n_actions×M×H×W
    Val v;      // M×H×W hidden value map (for warm starts)
    Val r_hat;  // 1×H×W predicted reward map
};

// k alternations of Q = conv(P_R, R_hat) + conv(P_V, V), V = max_a Q, then a
// 1×1 head mapping hidden action channels to environment action logits.
VinForward vin_forward(Graph& g, const VinLeaves& p, const VinParams& shape, Val obs, int k,
                       const Tensor* v_init);

// ---------------------------------------------------------------------------
// CALVIN
// ---------------------------------------------------------------------------

struct CalvinParams {
    Mode mode = Mode::kPositional;
    int n_actions = kPositionalActions;
    int n_theta = 1; // M
    int kernel = 3;
    int hidden_width = 150;

    Tensor p_logits; // A×M×M×K×K motion-model logits
    Tensor r_hat;    // A×M×M×K×K action-conditioned rewards
    Tensor r_fail;   // [1] failure reward
    Tensor av_w1, av_b1; // hidden_width×3×3×3
    Tensor av_w2, av_b2; // (A·M+M)×hidden_width×1×1: A_valid channels then A_thresh

    static CalvinParams init(Mode mode, int kernel, int hidden_width, uint64_t seed);
    std::vector<std::pair<std::string, Tensor*>> named();
};

struct CalvinLeaves {
    Val p_logits, r_hat, r_fail, av_w1, av_b1, av_w2, av_b2;
    std::vector<std::pair<std::string, Val>> named() const;
};

CalvinLeaves register_leaves(Graph& g, CalvinParams& p);

struct AvailabilityOut {
    Val a_valid; // A×M×H×W logits
    Val avail;   // sigmoid(A_valid - A_thresh) in (0,1)
};

// 2-layer availability CNN over the observation map; the last M output
// channels form the per-state threshold broadcast over actions.
AvailabilityOut calvin_availability(Graph& g, const CalvinLeaves& p, const CalvinParams& shape,
                                    Val obs);

// softmax over the (M'×)K×K support per (a, m) slice.
Val motion_model_distribution(Graph& g, Val p_logits);

// R(s,a) = R_F·(1-A) + A·sum_delta P(delta|a)·R(a,delta).
Val calvin_reward(Graph& g, Val avail, Val p_dist, Val r_hat, Val r_fail);

// Q(s,a) = R(s,a) + gamma·A(s,a)·1[a != done]·sum P(delta|a)·V(s+delta).
// p_dist: A×M×M×K×K, v: M×H×W.
Val calvin_q_update(Graph& g, Val reward, Val avail, Val p_dist, Val v, float gamma,
                    int done_index);

struct CalvinForward {
    Val q;       // A×M×H×W
    Val v;       // M×H×W
    Val a_valid; // availability logits
    Val avail;
    Val p_dist;
    Val reward;
};

// Full CALVIN plan: availability, reward and motion model once, then k value
// iterations. k = 0 returns Q = R.
CalvinForward calvin_forward(Graph& g, const CalvinLeaves& p, const CalvinParams& shape, Val obs,
                             int k, const Tensor* v_init, float gamma);

// Value iterations with externally supplied constraint tensors; used both by
// calvin_forward and by oracle-equivalence tests that feed ground truth.
struct CalvinViOut {
    Val q;
    Val v;
};
CalvinViOut calvin_value_iteration(Graph& g, Val avail, Val p_dist, Val reward, int k,
                                   const Tensor* v_init, float gamma, int done_index,
                                   int height, int width);

// ---------------------------------------------------------------------------
// Ground-truth constraint tensors for oracle tests.
// ---------------------------------------------------------------------------

// A×M×H×W: 1 where the action is available (moves land on free cells from a
// free cell, rotations anywhere free, done only at the target).
Tensor gt_availability(const Maze& maze, Mode mode);
// One-hot deterministic motion model matching the environment kinematics.
Tensor gt_motion_model(Mode mode, int kernel);
// Rewards concentrated where the motion model puts its mass: done_reward on
// the done action's self-offset, move_cost (often 0 or negative) on moves.
Tensor gt_reward_kernel(Mode mode, int kernel, float done_reward, bool euclid_move_costs);

// Lowest-index argmax over the action axis of a A×(M×)H×W map at a flat state.
int greedy_action(const Tensor& q, int state_flat);

}  // namespace calvin
