#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calvin/env.hpp"
#include "calvin/maze.hpp"

namespace calvin {

// Path cost over 8-neighbour moves as exact counts of axial and diagonal
// steps, compared without floating-point error: a + b*sqrt(2) against
// a' + b'*sqrt(2) reduces to integer arithmetic.
struct ExactCost {
    int64_t axial = 0;
    int64_t diag = 0;

    double value() const { return static_cast<double>(axial) + diag * 1.4142135623730951; }
    bool operator==(const ExactCost&) const = default;
};

bool cost_less(const ExactCost& a, const ExactCost& b);

struct ExpertPath {
    std::vector<AgentState> states; // length = moves + 1
    std::vector<int> actions;       // length = moves (no done)
    ExactCost cost;                 // embodied mode: axial = action count
};

// Euclidean-cost A* over the 8-neighbour moves (1 axial, sqrt(2) diagonal),
// admissible straight-line heuristic. Throws when the goal is unreachable.
// diagonals=false restricts to the unit-cost 4-neighbour variant.
ExpertPath astar(const Maze& maze, Cell start, Cell goal, bool diagonals = true);

// Embodied shortest path: unit cost per move or rotation, goal is the target
// cell at any orientation.
ExpertPath embodied_shortest_path(const Maze& maze, AgentState start, Cell goal);

struct Trajectory {
    Maze maze;
    Mode mode = Mode::kPositional;
    std::vector<AgentState> states; // states[i] is where actions[i] is taken
    std::vector<int> actions;       // ends with the done action
    size_t length() const { return actions.size(); }
};

// Expert demonstration: shortest path from start to target plus the terminal
// done action. Deterministic given the seed (which also fixes the embodied
// start orientation).
Trajectory make_trajectory(const Maze& maze, Mode mode, uint64_t seed);

// w_t = beta^(|T|-1-t) for 0-based t; the final step always has weight 1.
std::vector<float> compute_weights(size_t traj_len, float beta);

struct TrainingSample {
    int t_obs = 0;         // observation snapshot index
    int t_sup = 0;         // supervised step, t_sup <= t_obs
    int action = 0;        // expert action at t_sup
    float weight = 1.0f;   // beta decay weight
    bool step_sample = false; // true for the one-per-step sample used by L_P/L_A
};

// Partial-observability sample expansion: all (t_obs, t_sup) pairs with
// t_sup <= t_obs, subsampled to `cap` while always keeping the diagonal.
// Full observability yields exactly |T| samples with t_obs fixed at the end.
std::vector<TrainingSample> expand_samples(const Trajectory& traj, bool full_obs, float beta,
                                           size_t cap, uint64_t seed);

struct Dataset {
    Mode mode = Mode::kPositional;
    int lattice_n = 0;
    std::vector<Trajectory> trajectories;
};

Dataset generate_dataset(size_t count, int lattice_n, Mode mode, uint64_t seed);
void dataset_save_jsonl(const std::string& path, const Dataset& ds);
Dataset dataset_load_jsonl(const std::string& path);
std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& line);

}  // namespace calvin
