#include "calvin/maze.hpp"

#include <deque>
#include <stdexcept>

#include <json.hpp>

#include "calvin/rng.hpp"

namespace calvin {

namespace {

constexpr int kLatticeOffsets[4][2] = {{-1, 0}, {0, 1}, {1, 0}, {0, -1}};

}  // namespace

std::vector<Cell> Maze::free_cells() const {
    std::vector<Cell> out;
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            if (!obstacle(r, c)) out.push_back({r, c});
    return out;
}

Maze generate_maze(int lattice_n, uint64_t seed) {
    if (lattice_n < 1) throw std::invalid_argument("generate_maze: lattice_n must be >= 1");
    const int n = lattice_n;
    Rng rng(seed);

    // Wilson's algorithm on the n×n lattice. `next_dir` records the latest
    // exit direction per cell, which erases loops implicitly.
    std::vector<uint8_t> in_tree(static_cast<size_t>(n) * n, 0);
    std::vector<int8_t> next_dir(static_cast<size_t>(n) * n, -1);
    std::vector<std::pair<int, int>> opened; // lattice edges as (cell, dir)

    auto cell_id = [n](int r, int c) { return r * n + c; };
    in_tree[rng.uniform_int(static_cast<uint64_t>(n) * n)] = 1;

    int remaining = n * n - 1;
    for (int root = 0; root < n * n && remaining > 0; ++root) {
        if (in_tree[root]) continue;
        // Random walk from `root` until the tree is hit.
        int cur = root;
        while (!in_tree[cur]) {
            const int r = cur / n, c = cur % n;
            int dir;
            int nr, nc;
            do {
                dir = static_cast<int>(rng.uniform_int(4));
                nr = r + kLatticeOffsets[dir][0];
                nc = c + kLatticeOffsets[dir][1];
            } while (nr < 0 || nr >= n || nc < 0 || nc >= n);
            next_dir[cur] = static_cast<int8_t>(dir);
            cur = cell_id(nr, nc);
        }
        // Commit the loop-erased path.
        cur = root;
        while (!in_tree[cur]) {
            in_tree[cur] = 1;
            --remaining;
            const int dir = next_dir[cur];
            opened.emplace_back(cur, dir);
            cur = cell_id(cur / n + kLatticeOffsets[dir][0], cur % n + kLatticeOffsets[dir][1]);
        }
    }

    Maze m;
    m.lattice_n = n;
    m.seed = seed;
    m.height = m.width = 2 * n + 1;
    m.grid.assign(static_cast<size_t>(m.height) * m.width, 1);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) m.grid[m.cell_index(2 * r + 1, 2 * c + 1)] = 0;
    for (const auto& [cell, dir] : opened) {
        const int r = cell / n, c = cell % n;
        const int wr = 2 * r + 1 + kLatticeOffsets[dir][0];
        const int wc = 2 * c + 1 + kLatticeOffsets[dir][1];
        m.grid[m.cell_index(wr, wc)] = 0;
    }
    m.start = m.target = Cell{1, 1};
    return m;
}

std::vector<int> bfs_distances(const Maze& maze, Cell from) {
    std::vector<int> dist(maze.cell_count(), -1);
    if (!maze.free_cell(from.row, from.col)) return dist;
    std::deque<Cell> queue = {from};
    dist[maze.cell_index(from.row, from.col)] = 0;
    while (!queue.empty()) {
        const Cell cur = queue.front();
        queue.pop_front();
        const int d = dist[maze.cell_index(cur.row, cur.col)];
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                if (dr == 0 && dc == 0) continue;
                const int nr = cur.row + dr, nc = cur.col + dc;
                if (!maze.free_cell(nr, nc)) continue;
                int& nd = dist[maze.cell_index(nr, nc)];
                if (nd < 0) {
                    nd = d + 1;
                    queue.push_back({nr, nc});
                }
            }
        }
    }
    return dist;
}

std::optional<std::pair<Cell, Cell>> place_task(const Maze& maze, uint64_t seed) {
    const std::vector<Cell> free = maze.free_cells();
    const int min_dist = maze.height;
    std::vector<std::pair<Cell, Cell>> valid;
    for (const Cell& s : free) {
        const std::vector<int> dist = bfs_distances(maze, s);
        for (const Cell& t : free) {
            const int d = dist[maze.cell_index(t.row, t.col)];
            if (d >= min_dist) valid.emplace_back(s, t);
        }
    }
    if (valid.empty()) return std::nullopt;
    Rng rng(seed);
    return valid[rng.uniform_int(valid.size())];
}

Maze make_world(int lattice_n, uint64_t seed) {
    for (uint64_t attempt = 0;; ++attempt) {
        const uint64_t maze_seed = attempt == 0 ? seed : mix_seed(seed, attempt);
        Maze m = generate_maze(lattice_n, maze_seed);
        if (auto task = place_task(m, mix_seed(maze_seed, 0x7a5c))) {
            m.start = task->first;
            m.target = task->second;
            return m;
        }
        if (attempt > 1000)
            throw std::runtime_error("make_world: no placeable task after 1000 attempts");
    }
}

std::string maze_to_ascii(const Maze& maze) {
    std::string out;
    out.reserve(static_cast<size_t>(maze.height) * (maze.width + 1));
    for (int r = 0; r < maze.height; ++r) {
        for (int c = 0; c < maze.width; ++c) {
            if (Cell{r, c} == maze.start)
                out += 'S';
            else if (Cell{r, c} == maze.target)
                out += 'T';
            else
                out += maze.obstacle(r, c) ? '#' : '.';
        }
        out += '\n';
    }
    return out;
}

std::string maze_to_json(const Maze& maze) {
    nlohmann::json j;
    j["seed"] = maze.seed;
    j["lattice_n"] = maze.lattice_n;
    std::vector<std::string> rows;
    for (int r = 0; r < maze.height; ++r) {
        std::string row(maze.width, '.');
        for (int c = 0; c < maze.width; ++c)
            if (maze.obstacle(r, c)) row[c] = '#';
        rows.push_back(std::move(row));
    }
    j["grid"] = rows;
    j["start"] = {maze.start.row, maze.start.col};
    j["target"] = {maze.target.row, maze.target.col};
    return j.dump();
}

Maze maze_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    Maze m;
    m.seed = j.at("seed").get<uint64_t>();
    m.lattice_n = j.at("lattice_n").get<int>();
    const auto rows = j.at("grid").get<std::vector<std::string>>();
    m.height = static_cast<int>(rows.size());
    m.width = m.height > 0 ? static_cast<int>(rows[0].size()) : 0;
    m.grid.assign(static_cast<size_t>(m.height) * m.width, 0);
    for (int r = 0; r < m.height; ++r) {
        if (static_cast<int>(rows[r].size()) != m.width)
            throw std::runtime_error("maze_from_json: ragged grid rows");
        for (int c = 0; c < m.width; ++c)
            if (rows[r][c] == '#') m.grid[m.cell_index(r, c)] = 1;
    }
    m.start = {j.at("start")[0].get<int>(), j.at("start")[1].get<int>()};
    m.target = {j.at("target")[0].get<int>(), j.at("target")[1].get<int>()};
    return m;
}

}  // namespace calvin
