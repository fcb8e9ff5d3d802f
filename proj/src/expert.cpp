#include "calvin/expert.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <queue>
#include <stdexcept>

#include <json.hpp>

#include "calvin/rng.hpp"

namespace calvin {

bool cost_less(const ExactCost& a, const ExactCost& b) {
    // a.axial + a.diag*sqrt(2) < b.axial + b.diag*sqrt(2)
    // <=> da < dd*sqrt(2) with da = a.axial - b.axial, dd = b.diag - a.diag.
    const int64_t da = a.axial - b.axial;
    const int64_t dd = b.diag - a.diag;
    if (dd == 0) return da < 0;
    if (dd > 0) {
        if (da <= 0) return true;
        return da * da < 2 * dd * dd;
    }
    if (da >= 0) return false;
    return da * da > 2 * dd * dd;
}

namespace {

bool is_diagonal(int action) { return kHeadings[action][0] != 0 && kHeadings[action][1] != 0; }

double euclid(Cell a, Cell b) {
    const double dr = a.row - b.row, dc = a.col - b.col;
    return std::sqrt(dr * dr + dc * dc);
}

}  // namespace

ExpertPath astar(const Maze& maze, Cell start, Cell goal, bool diagonals) {
    if (!maze.free_cell(start.row, start.col) || !maze.free_cell(goal.row, goal.col))
        throw std::invalid_argument("astar: start and goal must be free cells");

    const size_t n = maze.cell_count();
    std::vector<ExactCost> g(n, ExactCost{1000000000, 0});
    std::vector<int> parent_action(n, -1);
    std::vector<int> parent(n, -1);
    std::vector<uint8_t> settled(n, 0);

    struct Entry {
        double f;
        uint64_t seq;
        int cell;
        bool operator>(const Entry& o) const { return f != o.f ? f > o.f : seq > o.seq; }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> open;

    const size_t si = maze.cell_index(start.row, start.col);
    const size_t gi = maze.cell_index(goal.row, goal.col);
    g[si] = ExactCost{0, 0};
    uint64_t seq = 0;
    open.push({euclid(start, goal), seq++, static_cast<int>(si)});

    while (!open.empty()) {
        const int cur = open.top().cell;
        open.pop();
        if (settled[cur]) continue;
        settled[cur] = 1;
        if (static_cast<size_t>(cur) == gi) break;
        const Cell cc{cur / maze.width, cur % maze.width};
        for (int a = 0; a < 8; ++a) {
            if (!diagonals && is_diagonal(a)) continue;
            const int nr = cc.row + kHeadings[a][0], nc = cc.col + kHeadings[a][1];
            if (!maze.free_cell(nr, nc)) continue;
            const size_t ni = maze.cell_index(nr, nc);
            if (settled[ni]) continue;
            ExactCost cand = g[cur];
            if (is_diagonal(a))
                ++cand.diag;
            else
                ++cand.axial;
            if (cost_less(cand, g[ni])) {
                g[ni] = cand;
                parent[ni] = cur;
                parent_action[ni] = a;
                open.push({cand.value() + euclid({nr, nc}, goal), seq++, static_cast<int>(ni)});
            }
        }
    }
    if (!settled[gi]) throw std::runtime_error("astar: goal unreachable");

    ExpertPath path;
    path.cost = g[gi];
    std::vector<int> rev_actions;
    for (size_t cur = gi; cur != si; cur = static_cast<size_t>(parent[cur]))
        rev_actions.push_back(parent_action[cur]);
    std::reverse(rev_actions.begin(), rev_actions.end());
    AgentState s{start.row, start.col, 0};
    path.states.push_back(s);
    for (int a : rev_actions) {
        s = kinematic_next(s, a, Mode::kPositional);
        path.states.push_back(s);
        path.actions.push_back(a);
    }
    return path;
}

ExpertPath embodied_shortest_path(const Maze& maze, AgentState start, Cell goal) {
    if (!maze.free_cell(start.row, start.col) || !maze.free_cell(goal.row, goal.col))
        throw std::invalid_argument("embodied_shortest_path: start and goal must be free");

    const int plane = maze.height * maze.width;
    const int n_states = plane * kNumThetas;
    auto idx = [&](const AgentState& s) {
        return s.theta * plane + s.row * maze.width + s.col;
    };
    std::vector<int> parent(n_states, -1), parent_action(n_states, -1), dist(n_states, -1);

    std::deque<AgentState> queue = {start};
    dist[idx(start)] = 0;
    int goal_idx = -1;
    while (!queue.empty()) {
        const AgentState cur = queue.front();
        queue.pop_front();
        if (cur.row == goal.row && cur.col == goal.col) {
            goal_idx = idx(cur);
            break;
        }
        for (int a = 0; a < kEmbodiedActions - 1; ++a) {
            const AgentState nxt = kinematic_next(cur, a, Mode::kEmbodied);
            if (!maze.free_cell(nxt.row, nxt.col)) continue;
            const int ni = idx(nxt);
            if (dist[ni] >= 0) continue;
            dist[ni] = dist[idx(cur)] + 1;
            parent[ni] = idx(cur);
            parent_action[ni] = a;
            queue.push_back(nxt);
        }
    }
    if (goal_idx < 0) throw std::runtime_error("embodied_shortest_path: goal unreachable");

    std::vector<int> rev_actions;
    for (int cur = goal_idx; cur != idx(start); cur = parent[cur])
        rev_actions.push_back(parent_action[cur]);
    std::reverse(rev_actions.begin(), rev_actions.end());

    ExpertPath path;
    path.cost = ExactCost{static_cast<int64_t>(rev_actions.size()), 0};
    AgentState s = start;
    path.states.push_back(s);
    for (int a : rev_actions) {
        s = kinematic_next(s, a, Mode::kEmbodied);
        path.states.push_back(s);
        path.actions.push_back(a);
    }
    return path;
}

Trajectory make_trajectory(const Maze& maze, Mode mode, uint64_t seed) {
    Trajectory traj;
    traj.maze = maze;
    traj.mode = mode;
    const AgentState start = initial_state(maze, mode, seed);
    const ExpertPath path = mode == Mode::kPositional
                                ? astar(maze, maze.start, maze.target)
                                : embodied_shortest_path(maze, start, maze.target);
    traj.states = path.states;
    traj.actions = path.actions;
    traj.actions.push_back(done_action(mode)); // terminate at the target
    return traj;
}

std::vector<float> compute_weights(size_t traj_len, float beta) {
    if (traj_len < 1) throw std::invalid_argument("compute_weights: empty trajectory");
    if (!(beta > 0.0f && beta <= 1.0f))
        throw std::invalid_argument("compute_weights: beta must be in (0, 1]");
    std::vector<float> w(traj_len);
    for (size_t t = 0; t < traj_len; ++t)
        w[t] = static_cast<float>(std::pow(static_cast<double>(beta),
                                           static_cast<double>(traj_len - 1 - t)));
    return w;
}

std::vector<TrainingSample> expand_samples(const Trajectory& traj, bool full_obs, float beta,
                                           size_t cap, uint64_t seed) {
    const size_t T = traj.length();
    const std::vector<float> w = compute_weights(T, beta);
    std::vector<TrainingSample> out;

    if (full_obs) {
        for (size_t t = 0; t < T; ++t)
            out.push_back({static_cast<int>(T) - 1, static_cast<int>(t), traj.actions[t], w[t], true});
        return out;
    }

    for (size_t t = 0; t < T; ++t)
        out.push_back({static_cast<int>(t), static_cast<int>(t), traj.actions[t], w[t], true});

    // Off-diagonal hindsight pairs (t_obs > t_sup), subsampled to the cap.
    std::vector<std::pair<int, int>> off;
    for (size_t to = 1; to < T; ++to)
        for (size_t ts = 0; ts < to; ++ts) off.emplace_back(static_cast<int>(to), static_cast<int>(ts));
    const size_t budget = cap > T ? cap - T : 0;
    if (off.size() > budget) {
        Rng rng(seed);
        // Partial Fisher-Yates: the first `budget` entries become a uniform sample.
        for (size_t i = 0; i < budget; ++i) {
            const size_t j = i + rng.uniform_int(off.size() - i);
            std::swap(off[i], off[j]);
        }
        off.resize(budget);
        std::sort(off.begin(), off.end());
    }
    for (const auto& [to, ts] : off)
        out.push_back({to, ts, traj.actions[ts], w[ts], false});
    return out;
}

Dataset generate_dataset(size_t count, int lattice_n, Mode mode, uint64_t seed) {
    Dataset ds;
    ds.mode = mode;
    ds.lattice_n = lattice_n;
    ds.trajectories.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const uint64_t world_seed = mix_seed(seed, i);
        const Maze maze = make_world(lattice_n, world_seed);
        ds.trajectories.push_back(make_trajectory(maze, mode, mix_seed(world_seed, 0x717)));
    }
    return ds;
}

std::string trajectory_to_json(const Trajectory& traj) {
    nlohmann::json j;
    j["maze"] = nlohmann::json::parse(maze_to_json(traj.maze));
    nlohmann::json states = nlohmann::json::array();
    for (const AgentState& s : traj.states) {
        if (traj.mode == Mode::kPositional)
            states.push_back({s.row, s.col});
        else
            states.push_back({s.row, s.col, s.theta});
    }
    j["states"] = states;
    j["actions"] = traj.actions;
    return j.dump();
}

Trajectory trajectory_from_json(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    Trajectory traj;
    traj.maze = maze_from_json(j.at("maze").dump());
    for (const auto& s : j.at("states")) {
        AgentState st{s[0].get<int>(), s[1].get<int>(), 0};
        if (s.size() > 2) {
            st.theta = s[2].get<int>();
            traj.mode = Mode::kEmbodied;
        }
        traj.states.push_back(st);
    }
    traj.actions = j.at("actions").get<std::vector<int>>();
    return traj;
}

void dataset_save_jsonl(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("dataset_save_jsonl: cannot open '" + path + "'");
    for (const Trajectory& traj : ds.trajectories) os << trajectory_to_json(traj) << '\n';
    if (!os) throw std::runtime_error("dataset_save_jsonl: write failed");
}

Dataset dataset_load_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("dataset_load_jsonl: cannot open '" + path + "'");
    Dataset ds;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ds.trajectories.push_back(trajectory_from_json(line));
    }
    if (!ds.trajectories.empty()) {
        ds.mode = ds.trajectories.front().mode;
        ds.lattice_n = ds.trajectories.front().maze.lattice_n;
    }
    return ds;
}

}  // namespace calvin
