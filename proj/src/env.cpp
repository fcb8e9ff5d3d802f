#include "calvin/env.hpp"

#include <stdexcept>

#include "calvin/rng.hpp"

namespace calvin {

AgentState kinematic_next(const AgentState& state, int action, Mode mode) {
    AgentState n = state;
    if (mode == Mode::kPositional) {
        if (action < 8) {
            n.row += kHeadings[action][0];
            n.col += kHeadings[action][1];
        }
        return n;
    }
    switch (action) {
        case kEmbodiedForward:
            n.row += kHeadings[state.theta][0];
            n.col += kHeadings[state.theta][1];
            break;
        case kEmbodiedBackward:
            n.row -= kHeadings[state.theta][0];
            n.col -= kHeadings[state.theta][1];
            break;
        case kEmbodiedRotLeft:
            n.theta = (state.theta + kNumThetas - 1) % kNumThetas;
            break;
        case kEmbodiedRotRight:
            n.theta = (state.theta + 1) % kNumThetas;
            break;
        default:
            break; // done
    }
    return n;
}

StepOutcome step(const Maze& maze, const AgentState& state, int action, Mode mode) {
    if (action < 0 || action >= action_count(mode))
        throw std::invalid_argument("step: invalid action index " + std::to_string(action));
    if (action == done_action(mode)) {
        const bool at_target = state.row == maze.target.row && state.col == maze.target.col;
        return {at_target ? StepResult::kSuccess : StepResult::kFalseDone, state};
    }
    const AgentState next = kinematic_next(state, action, mode);
    if (next.row == state.row && next.col == state.col)
        return {StepResult::kMoved, next}; // rotation
    if (!maze.free_cell(next.row, next.col)) return {StepResult::kCollision, state};
    return {StepResult::kMoved, next};
}

AgentState initial_state(const Maze& maze, Mode mode, uint64_t seed) {
    AgentState s{maze.start.row, maze.start.col, 0};
    if (mode == Mode::kEmbodied) {
        Rng rng(mix_seed(seed, 0x7e7a));
        s.theta = static_cast<int>(rng.uniform_int(kNumThetas));
    }
    return s;
}

namespace {

// Cells whose interior the centre-to-centre segment crosses, for every offset
// with Chebyshev radius <= 2. Perfect diagonals only touch corners of the
// side cells, so (2,2) lists just the intermediate diagonal cell, while
// knight-like offsets cross two cells.
std::vector<Cell> los_intermediates(Cell from, int dr, int dc) {
    const int ar = std::abs(dr), ac = std::abs(dc);
    std::vector<Cell> out;
    if (ar <= 1 && ac <= 1) return out;
    if (ar == 2 && ac == 0) {
        out.push_back({from.row + dr / 2, from.col});
    } else if (ar == 0 && ac == 2) {
        out.push_back({from.row, from.col + dc / 2});
    } else if (ar == 2 && ac == 2) {
        out.push_back({from.row + dr / 2, from.col + dc / 2});
    } else if (ar == 2 && ac == 1) {
        out.push_back({from.row + dr / 2, from.col});
        out.push_back({from.row + dr / 2, from.col + dc});
    } else { // ar == 1 && ac == 2
        out.push_back({from.row, from.col + dc / 2});
        out.push_back({from.row + dr, from.col + dc / 2});
    }
    return out;
}

}  // namespace

std::vector<Cell> visible_cells(const Maze& maze, Cell pos) {
    std::vector<Cell> out;
    for (int dr = -2; dr <= 2; ++dr) {
        for (int dc = -2; dc <= 2; ++dc) {
            const int r = pos.row + dr, c = pos.col + dc;
            if (!maze.in_bounds(r, c)) continue;
            bool blocked = false;
            for (const Cell& mid : los_intermediates(pos, dr, dc)) {
                if (!maze.in_bounds(mid.row, mid.col) || maze.obstacle(mid.row, mid.col)) {
                    blocked = true;
                    break;
                }
            }
            if (!blocked) out.push_back({r, c});
        }
    }
    return out;
}

void RevealedSet::reveal(const Maze& maze, Cell pos) {
    if (mask_.size() != maze.cell_count()) mask_.assign(maze.cell_count(), 0);
    for (const Cell& c : visible_cells(maze, pos)) mask_[maze.cell_index(c.row, c.col)] = 1;
}

uint64_t RevealedSet::hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (uint8_t b : mask_) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

Tensor encode_observation(const Maze& maze, const RevealedSet& revealed) {
    const int H = maze.height, W = maze.width;
    Tensor obs({kObservationChannels, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < plane; ++i) {
        if (!revealed.known(i)) continue;
        obs[i] = 1.0f;
        if (maze.grid[i]) obs[plane + i] = 1.0f;
    }
    const size_t ti = maze.cell_index(maze.target.row, maze.target.col);
    if (revealed.known(ti)) obs[2 * plane + ti] = 1.0f;
    return obs;
}

Tensor encode_full_observation(const Maze& maze) {
    RevealedSet all(maze);
    all.reveal_all();
    return encode_observation(maze, all);
}

int state_index(const Maze& maze, const AgentState& s, Mode mode) {
    const int plane = maze.height * maze.width;
    const int cell = s.row * maze.width + s.col;
    return mode == Mode::kPositional ? cell : s.theta * plane + cell;
}

bool action_available(const Maze& maze, const AgentState& s, int action, Mode mode) {
    if (action == done_action(mode))
        return s.row == maze.target.row && s.col == maze.target.col;
    if (mode == Mode::kEmbodied &&
        (action == kEmbodiedRotLeft || action == kEmbodiedRotRight))
        return true;
    const AgentState n = kinematic_next(s, action, mode);
    return maze.free_cell(n.row, n.col);
}

}  // namespace calvin
