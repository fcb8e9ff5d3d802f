#include "calvin/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace calvin {

std::string to_string(RolloutOutcome o) {
    switch (o) {
        case RolloutOutcome::kSuccess: return "success";
        case RolloutOutcome::kFalseDone: return "false-done";
        case RolloutOutcome::kStepLimit: return "step-limit";
        case RolloutOutcome::kStuck: return "stuck-oscillation";
    }
    return "?";
}

namespace {

// Episode-local observation state; one of the three branches is live
// depending on the model's observability mode.
struct ObsState {
    RevealedSet revealed;
    Tensor full_obs;
    LatticeMap map;

    static ObsState make(Model& model, const Maze& maze) {
        ObsState s;
        switch (model.cfg.obs) {
            case ObsKind::kFull:
                s.full_obs = encode_full_observation(maze);
                break;
            case ObsKind::kPartial:
                s.revealed = RevealedSet(maze);
                break;
            case ObsKind::kLpn:
                s.map = LatticeMap::make(kScanClasses, maze.height, maze.width, 1.0f);
                break;
        }
        return s;
    }

    void observe(Model& model, const Maze& maze, const AgentState& pose, uint64_t step_seed) {
        switch (model.cfg.obs) {
            case ObsKind::kFull:
                break;
            case ObsKind::kPartial:
                revealed.reveal(maze, {pose.row, pose.col});
                break;
            case ObsKind::kLpn: {
                Rng rng(step_seed);
                std::vector<CameraFrame> frames;
                if (model.cfg.mode == Mode::kEmbodied)
                    frames.push_back(synthetic_scan(maze, {pose.row, pose.col}, pose.theta, rng,
                                                    model.cfg.scan));
                else
                    frames = synthetic_scan_panorama(maze, {pose.row, pose.col}, rng,
                                                     model.cfg.scan);
                for (const CameraFrame& f : frames)
                    update_map(map,
                               bin_and_pool(project_pixels(f), map.tau, maze.height, maze.width));
                break;
            }
        }
    }

    SnapshotInput input(Model& model, const Maze& maze) const {
        SnapshotInput in;
        switch (model.cfg.obs) {
            case ObsKind::kFull: in.obs = full_obs; break;
            case ObsKind::kPartial: in.obs = encode_observation(maze, revealed); break;
            case ObsKind::kLpn:
                in.pooled = map.pooled();
                in.mask = map.observed_mask();
                break;
        }
        return in;
    }

    uint64_t hash(Model& model) const {
        switch (model.cfg.obs) {
            case ObsKind::kFull: return 0;
            case ObsKind::kPartial: return revealed.hash();
            case ObsKind::kLpn: return map.hash();
        }
        return 0;
    }
};

}  // namespace

RolloutResult rollout_from(Model& model, const Maze& maze, const AgentState& start, int max_steps,
                           uint64_t seed) {
    const Mode mode = model.cfg.mode;
    RolloutResult result;
    AgentState state = start;
    ObsState obs = ObsState::make(model, maze);
    Tensor warm;
    std::map<std::pair<int, uint64_t>, int> visits;

    for (int stepn = 0; stepn < max_steps; ++stepn) {
        obs.observe(model, maze, state, mix_seed(seed, 0xF00D + stepn));
        const int sidx = state_index(maze, state, mode);

        // A repeated (state, observation) pair replays the same deterministic
        // plan; four visits is a proven oscillation.
        if (++visits[{sidx, obs.hash(model)}] >= 4) {
            result.outcome = RolloutOutcome::kStuck;
            return result;
        }

        Graph g;
        const ModelRun run =
            run_model(g, model, obs.input(model, maze), model.cfg.k, warm.empty() ? nullptr : &warm);
        warm = run.v.value();
        const int action = greedy_action(run.q.value(), sidx);

        result.states.push_back(state);
        result.actions.push_back(action);
        ++result.steps;
        const StepOutcome out = step(maze, state, action, mode);
        switch (out.result) {
            case StepResult::kSuccess:
                result.outcome = RolloutOutcome::kSuccess;
                return result;
            case StepResult::kFalseDone:
                result.outcome = RolloutOutcome::kFalseDone;
                return result;
            case StepResult::kCollision:
                ++result.collisions;
                break;
            case StepResult::kMoved:
                state = out.next;
                break;
        }
    }
    result.outcome = RolloutOutcome::kStepLimit;
    return result;
}

RolloutResult rollout(Model& model, const Maze& maze, int max_steps, uint64_t seed) {
    return rollout_from(model, maze, initial_state(maze, model.cfg.mode, seed), max_steps, seed);
}

int collision_violations(const Tensor& q, const Maze& maze, Mode mode, int* states_checked) {
    const int A = action_count(mode);
    const int done = done_action(mode);
    const size_t rest = q.numel() / A;
    int violations = 0;
    int checked = 0;
    for (int theta = 0; theta < theta_count(mode); ++theta) {
        for (int r = 0; r < maze.height; ++r) {
            for (int c = 0; c < maze.width; ++c) {
                if (maze.obstacle(r, c)) continue;
                const AgentState s{r, c, theta};
                const int sidx = state_index(maze, s, mode);
                float min_valid = INFINITY, max_invalid = -INFINITY;
                bool any_valid = false, any_invalid = false;
                for (int a = 0; a < A; ++a) {
                    if (a == done) continue;
                    const float qa = q[static_cast<size_t>(a) * rest + sidx];
                    if (action_available(maze, s, a, mode)) {
                        any_valid = true;
                        min_valid = std::min(min_valid, qa);
                    } else {
                        any_invalid = true;
                        max_invalid = std::max(max_invalid, qa);
                    }
                }
                ++checked;
                if (any_valid && any_invalid && min_valid <= max_invalid) ++violations;
            }
        }
    }
    if (states_checked) *states_checked = checked;
    return violations;
}

namespace {

SnapshotInput full_knowledge_input(Model& model, const Maze& maze) {
    SnapshotInput in;
    if (model.cfg.obs != ObsKind::kLpn) {
        in.obs = encode_full_observation(maze);
        return in;
    }
    // LPN analog of full observability: scans from every free cell.
    LatticeMap map = LatticeMap::make(kScanClasses, maze.height, maze.width, 1.0f);
    Rng rng(maze.seed ^ 0xFULL);
    for (const Cell& c : maze.free_cells())
        for (const CameraFrame& f : synthetic_scan_panorama(maze, c, rng, model.cfg.scan))
            update_map(map, bin_and_pool(project_pixels(f), map.tau, maze.height, maze.width));
    in.pooled = map.pooled();
    in.mask = map.observed_mask();
    return in;
}

}  // namespace

double collision_preference_rate(Model& model, const std::vector<Maze>& mazes) {
    int64_t violations = 0, checked = 0;
    std::vector<std::pair<int, int>> per_maze(mazes.size());
    std::string failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (size_t i = 0; i < mazes.size(); ++i) {
        try {
            Graph g;
            const ModelRun run =
                run_model(g, model, full_knowledge_input(model, mazes[i]), model.cfg.k, nullptr);
            int c = 0;
            const int v = collision_violations(run.q.value(), mazes[i], model.cfg.mode, &c);
            per_maze[i] = {v, c};
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (failure.empty()) failure = e.what();
        }
    }
    if (!failure.empty())
        throw std::runtime_error("collision-preference evaluation failed: " + failure);
    for (const auto& [v, c] : per_maze) {
        violations += v;
        checked += c;
    }
    return checked ? static_cast<double>(violations) / static_cast<double>(checked) : 0.0;
}

MetricsSummary evaluate_model(Model& model, int n_mazes, int n_seeds, uint64_t seed_base,
                              int max_steps) {
    MetricsSummary summary;
    summary.mazes_per_seed = n_mazes;
    summary.n_seeds = n_seeds;

    int64_t success_steps_total = 0, success_count = 0;
    std::vector<Maze> first_seed_mazes;
    for (int s = 0; s < n_seeds; ++s) {
        std::vector<Maze> mazes;
        mazes.reserve(n_mazes);
        for (int i = 0; i < n_mazes; ++i)
            mazes.push_back(make_world(model.cfg.lattice_n,
                                       mix_seed(seed_base + static_cast<uint64_t>(s), i)));
        if (s == 0) first_seed_mazes = mazes;

        std::vector<RolloutResult> results(mazes.size());
        std::string failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
        for (size_t i = 0; i < mazes.size(); ++i) {
            try {
                results[i] = rollout(model, mazes[i], max_steps,
                                     mix_seed(seed_base + static_cast<uint64_t>(s), 0xA0 + i));
            } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
                if (failure.empty()) failure = e.what();
            }
        }
        if (!failure.empty()) throw std::runtime_error("evaluation rollouts failed: " + failure);

        int wins = 0;
        for (const RolloutResult& r : results) {
            if (r.outcome == RolloutOutcome::kSuccess) {
                ++wins;
                success_steps_total += r.steps;
                ++success_count;
            }
        }
        summary.success_per_seed.push_back(static_cast<double>(wins) / n_mazes);
    }

    double mean = 0.0;
    for (double v : summary.success_per_seed) mean += v;
    mean /= n_seeds;
    double var = 0.0;
    for (double v : summary.success_per_seed) var += (v - mean) * (v - mean);
    summary.success_mean = mean;
    summary.success_std = n_seeds > 1 ? std::sqrt(var / (n_seeds - 1)) : 0.0;
    summary.mean_steps_on_success =
        success_count ? static_cast<double>(success_steps_total) / success_count : 0.0;
    summary.collision_violation_rate = collision_preference_rate(model, first_seed_mazes);
    return summary;
}

std::string MetricsSummary::to_json() const {
    nlohmann::json j;
    j["version"] = "v1";
    j["success_rate"] = {{"mean", success_mean},
                         {"std", success_std},
                         {"per_seed", success_per_seed}};
    j["mean_steps_on_success"] = mean_steps_on_success;
    j["collision_preference_violation_rate"] = collision_violation_rate;
    j["mazes_per_seed"] = mazes_per_seed;
    j["seeds"] = n_seeds;
    return j.dump(2);
}

std::string MetricsSummary::to_csv() const {
    std::string out =
        "success_mean,success_std,mean_steps_on_success,collision_violation_rate,mazes_per_seed,"
        "seeds\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%d,%d\n", success_mean, success_std,
                  mean_steps_on_success, collision_violation_rate, mazes_per_seed, n_seeds);
    return out + buf;
}

}  // namespace calvin
