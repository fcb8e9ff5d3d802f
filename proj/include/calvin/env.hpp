#pragma once

#include <cstdint>
#include <vector>

#include "calvin/maze.hpp"
#include "calvin/tensor.hpp"

namespace calvin {

enum class Mode { kPositional, kEmbodied };

// Positional action indices: 0..7 move to the 8 neighbours in the order
// N, NE, E, SE, S, SW, W, NW (row axis points south), 8 = done.
// Embodied: 0 = forward, 1 = backward, 2 = rotate-left, 3 = rotate-right,
// 4 = done. Orientation index k heads along kHeadings[k]; rotate-left
// decrements k mod 8, rotate-right increments it.
constexpr int kHeadings[8][2] = {{-1, 0}, {-1, 1}, {0, 1},  {1, 1},
                                 {1, 0},  {1, -1}, {0, -1}, {-1, -1}};
constexpr int kNumThetas = 8;

constexpr int kPositionalActions = 9;
constexpr int kEmbodiedActions = 5;
constexpr int kEmbodiedForward = 0;
constexpr int kEmbodiedBackward = 1;
constexpr int kEmbodiedRotLeft = 2;
constexpr int kEmbodiedRotRight = 3;

inline int action_count(Mode mode) {
    return mode == Mode::kPositional ? kPositionalActions : kEmbodiedActions;
}
inline int done_action(Mode mode) { return action_count(mode) - 1; }
inline int theta_count(Mode mode) { return mode == Mode::kPositional ? 1 : kNumThetas; }

struct AgentState {
    int row = 0;
    int col = 0;
    int theta = 0; // unused (0) in positional mode
    bool operator==(const AgentState&) const = default;
};

enum class StepResult { kMoved, kCollision, kSuccess, kFalseDone };

struct StepOutcome {
    StepResult result;
    AgentState next; // equals the input state on collision / done
};

// One environment transition. Collisions leave the agent in place; done fires
// success only at the target.
StepOutcome step(const Maze& maze, const AgentState& state, int action, Mode mode);

// The cell an action would move to (ignoring obstacles); rotations and done
// stay in place. Exposed for transition-model ground truth.
AgentState kinematic_next(const AgentState& state, int action, Mode mode);

AgentState initial_state(const Maze& maze, Mode mode, uint64_t seed);

// Cells visible from `pos`: Chebyshev radius 2, blocked by any intermediate
// obstacle interior on the centre-to-centre segment. The first obstacle on a
// ray is itself visible.
std::vector<Cell> visible_cells(const Maze& maze, Cell pos);

// Monotone record of everything seen so far in one episode.
class RevealedSet {
  public:
    RevealedSet() = default;
    explicit RevealedSet(const Maze& maze) : mask_(maze.cell_count(), 0) {}

    void reveal(const Maze& maze, Cell pos);
    void reveal_all() { mask_.assign(mask_.size(), 1); }
    bool known(size_t cell_index) const { return mask_[cell_index] != 0; }
    const std::vector<uint8_t>& mask() const { return mask_; }
    uint64_t hash() const;

  private:
    std::vector<uint8_t> mask_;
};

// 3×H×W observation tensor with channels {known-mask, obstacle, target}.
// Unknown cells are all-zero across channels.
Tensor encode_observation(const Maze& maze, const RevealedSet& revealed);
Tensor encode_full_observation(const Maze& maze);

constexpr int kObservationChannels = 3;

// Flat state index into the planner's value maps: positional r*W+c, embodied
// theta*H*W + r*W + c.
int state_index(const Maze& maze, const AgentState& s, Mode mode);

// Ground-truth action availability: moves must land on a free cell, rotations
// are always available, done only at the target.
bool action_available(const Maze& maze, const AgentState& s, int action, Mode mode);

}  // namespace calvin
