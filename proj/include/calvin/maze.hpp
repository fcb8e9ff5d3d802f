#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace calvin {

struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

// Occupancy-grid maze over a (2n+1)×(2n+1) grid built from an n×n corridor
// lattice: odd-odd cells are lattice rooms, opened walls join them, the rest
// (including the border) is obstacle.
struct Maze {
    int lattice_n = 0;
    uint64_t seed = 0;
    int height = 0;
    int width = 0;
    std::vector<uint8_t> grid; // row-major, 1 = obstacle
    Cell start;
    Cell target;

    bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
    bool obstacle(int r, int c) const { return grid[static_cast<size_t>(r) * width + c] != 0; }
    bool free_cell(int r, int c) const { return in_bounds(r, c) && !obstacle(r, c); }
    size_t cell_index(int r, int c) const { return static_cast<size_t>(r) * width + c; }
    size_t cell_count() const { return grid.size(); }

    std::vector<Cell> free_cells() const;
};

// Uniform spanning tree over the n×n lattice via loop-erased random walks,
// rendered to the occupancy grid. Deterministic given the seed.
Maze generate_maze(int lattice_n, uint64_t seed);

// Chooses a (start, target) pair uniformly among free pairs whose 8-neighbour
// BFS distance is at least the grid side length. Returns nullopt when no such
// pair exists (caller should regenerate the maze).
std::optional<std::pair<Cell, Cell>> place_task(const Maze& maze, uint64_t seed);

// generate_maze + place_task, regenerating with a derived seed until a valid
// task exists. Deterministic given the seed.
Maze make_world(int lattice_n, uint64_t seed);

// 8-neighbour BFS distances (in moves) from `from` to every cell; -1 where
// unreachable or obstacle.
std::vector<int> bfs_distances(const Maze& maze, Cell from);

std::string maze_to_ascii(const Maze& maze);
std::string maze_to_json(const Maze& maze);
Maze maze_from_json(const std::string& text);

}  // namespace calvin
