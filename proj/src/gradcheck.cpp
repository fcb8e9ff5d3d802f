#include "calvin/gradcheck.hpp"

#include <cmath>

#include "calvin/expert.hpp"
#include "calvin/lpn.hpp"
#include "calvin/planners.hpp"
#include "calvin/rng.hpp"
#include "calvin/training.hpp"

namespace calvin {

namespace {

// Tiny worlds for gradient probes: the experiment-scale minimum-distance rule
// can be unsatisfiable on a 5×5 grid, so place the farthest reachable pair.
Maze small_world(int lattice_n, uint64_t seed) {
    Maze m = generate_maze(lattice_n, seed);
    const auto free = m.free_cells();
    m.start = free.front();
    const auto dist = bfs_distances(m, m.start);
    Cell best = free.front();
    for (const Cell& c : free)
        if (dist[m.cell_index(c.row, c.col)] > dist[m.cell_index(best.row, best.col)]) best = c;
    m.target = best;
    return m;
}

std::map<std::string, Val> register_all(Graph& g, const std::map<std::string, Tensor>& params) {
    std::map<std::string, Val> leaves;
    for (const auto& [name, t] : params) leaves.emplace(name, g.leaf(t));
    return leaves;
}

double eval_loss(const LossBuilder& build, const std::map<std::string, Tensor>& params) {
    Graph g;
    const std::map<std::string, Val> leaves = register_all(g, params);
    return build(g, leaves).value()[0];
}

}  // namespace

GradCheckReport check_gradients(const LossBuilder& build,
                                const std::map<std::string, Tensor>& params, double h,
                                double tol_abs, double tol_rel, int max_coords_per_param,
                                uint64_t coord_seed) {
    GradCheckReport report;

    // Reverse-mode gradients once.
    std::map<std::string, Tensor> grads;
    {
        Graph g;
        const std::map<std::string, Val> leaves = register_all(g, params);
        const Val loss = build(g, leaves);
        g.backward(loss);
        for (const auto& [name, leaf] : leaves) grads.emplace(name, leaf.grad());
    }

    Rng rng(mix_seed(coord_seed, 0x6D));
    std::map<std::string, Tensor> work = params;
    for (const auto& [name, t] : params) {
        std::vector<size_t> coords;
        if (max_coords_per_param < 0 || t.numel() <= static_cast<size_t>(max_coords_per_param)) {
            for (size_t i = 0; i < t.numel(); ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < max_coords_per_param; ++i)
                coords.push_back(rng.uniform_int(t.numel()));
        }
        for (size_t c : coords) {
            Tensor& wt = work.at(name);
            const float orig = wt[c];
            wt[c] = orig + static_cast<float>(h);
            const double f_plus = eval_loss(build, work);
            wt[c] = orig - static_cast<float>(h);
            const double f_minus = eval_loss(build, work);
            wt[c] = orig;

            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double ad = grads.at(name)[c];
            const double abs_err = std::abs(ad - fd);
            const double rel_err = abs_err / std::max(1e-12, std::abs(fd));
            ++report.coords_checked;
            if (abs_err > report.worst_abs_err) {
                report.worst_abs_err = abs_err;
                report.worst_at = name + "[" + std::to_string(c) + "]";
            }
            report.worst_rel_err = std::max(report.worst_rel_err, rel_err);
            if (abs_err > std::max(tol_abs, tol_rel * std::abs(fd))) report.ok = false;
        }
    }
    return report;
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_pm(scale);
    return t;
}

// Weighted sum against a fixed random tensor makes every output coordinate
// matter without symmetry artefacts.
Val weigh(Graph& g, Val x, const Tensor& w) { return g.sum(g.mul_const(x, w)); }

struct OpProbe {
    std::string name;
    std::map<std::string, Tensor> params;
    LossBuilder build;
};

std::vector<OpProbe> make_probes(uint64_t seed) {
    std::vector<OpProbe> probes;
    Rng rng(seed);

    {
        OpProbe p;
        p.name = "add/sub/scale";
        p.params = {{"a", random_tensor({3, 4}, rng)},
                    {"b", random_tensor({3, 4}, rng)},
                    {"pre", random_tensor({3}, rng)},
                    {"suf", random_tensor({4}, rng)},
                    {"sc", random_tensor({1}, rng)}};
        const Tensor w = random_tensor({3, 4}, rng);
        p.build = [w](Graph& g, const std::map<std::string, Val>& v) {
            Val x = g.add(v.at("a"), v.at("b"));
            x = g.sub(x, v.at("pre"));
            x = g.add(x, v.at("suf"));
            x = g.add(x, v.at("sc"));
            x = g.add_scalar(g.scale(x, -0.7f), 0.3f);
            return g.sum(g.mul_const(x, w));
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "mul";
        p.params = {{"a", random_tensor({2, 3, 4}, rng)},
                    {"pre", random_tensor({2, 3}, rng)},
                    {"suf", random_tensor({3, 4}, rng)},
                    {"sc", random_tensor({1}, rng)}};
        const Tensor w = random_tensor({2, 3, 4}, rng);
        p.build = [w](Graph& g, const std::map<std::string, Val>& v) {
            Val x = g.mul(v.at("a"), v.at("pre"));
            x = g.mul(x, v.at("suf"));
            x = g.mul(x, v.at("sc"));
            return weigh(g, x, w);
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "conv2d";
        p.params = {{"x", random_tensor({2, 5, 5}, rng)},
                    {"k", random_tensor({3, 2, 3, 3}, rng)},
                    {"b", random_tensor({3}, rng)}};
        const Tensor w = random_tensor({3, 5, 5}, rng);
        p.build = [w](Graph& g, const std::map<std::string, Val>& v) {
            return weigh(g, g.conv2d(v.at("x"), v.at("k"), v.at("b")), w);
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "channel_max";
        // Central differences are invalid across argmax ties; keep channels
        // separated by more than the probe step.
        Tensor q = random_tensor({4, 3, 3}, rng, 0.02f);
        for (int a = 0; a < 4; ++a)
            for (int i = 0; i < 9; ++i) q[a * 9 + i] += 0.2f * static_cast<float>((a * 7 + i) % 5);
        p.params = {{"q", q}};
        const Tensor w = random_tensor({3, 3}, rng);
        p.build = [w](Graph& g, const std::map<std::string, Val>& v) {
            return weigh(g, g.channel_max(v.at("q")).v, w);
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "softmax_tail";
        p.params = {{"x", random_tensor({3, 2, 2}, rng)}};
        const Tensor w = random_tensor({3, 2, 2}, rng);
        p.build = [w](Graph& g, const std::map<std::string, Val>& v) {
            return weigh(g, g.softmax_tail(v.at("x"), 1), w);
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "softmax_cross_entropy";
        p.params = {{"x", random_tensor({5}, rng)}};
        p.build = [](Graph& g, const std::map<std::string, Val>& v) {
            return g.softmax_ce(v.at("x"), 2, 0.8f);
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "sigmoid/relu";
        // Keep inputs off the relu kink at zero.
        Tensor x = random_tensor({4, 4}, rng);
        for (size_t i = 0; i < x.numel(); ++i) x[i] += x[i] >= 0.0f ? 0.05f : -0.05f;
        p.params = {{"x", x}};
        const Tensor w = random_tensor({4, 4}, rng);
        const Tensor w2 = random_tensor({4, 4}, rng);
        p.build = [w, w2](Graph& g, const std::map<std::string, Val>& v) {
            Val s = g.sigmoid(v.at("x"));
            Val r = g.relu(v.at("x"));
            return g.add(weigh(g, s, w), weigh(g, r, w2));
        };
        probes.push_back(std::move(p));
    }
    {
        OpProbe p;
        p.name = "reduce/reshape/slice/concat/gather";
        p.params = {{"x", random_tensor({4, 6}, rng)}, {"y", random_tensor({2, 6}, rng)}};
        const Tensor w = random_tensor({2, 3}, rng);
        const Tensor w2 = random_tensor({6}, rng);
        const Tensor w3 = random_tensor({6}, rng);
        p.build = [w, w2, w3](Graph& g, const std::map<std::string, Val>& v) {
            Val cat = g.concat0({v.at("x"), v.at("y")}); // 6×6
            Val sl = g.slice_range(cat, 1, 3);           // 2×6
            Val rs = g.reshape(sl, {2, 3, 2});
            Val st = g.sum_tail(rs, 2); // [2,3]
            Val ga = g.gather_state(cat, 4);  // [6]
            Val col = g.gather_state(rs, 1);  // hmm: [2] from 2×(3·2)
            return g.add(g.add(weigh(g, st, w), weigh(g, ga, w2)),
                         g.add(g.sum(g.mul_const(col, Tensor({2}, {0.3f, -0.9f}))),
                               g.sum(v.at("y"))));
        };
        probes.push_back(std::move(p));
    }
    return probes;
}

}  // namespace

std::vector<OpCheck> run_op_gradient_suite(int seeds) {
    std::vector<OpCheck> out;
    for (int s = 0; s < seeds; ++s) {
        for (OpProbe& probe : make_probes(mix_seed(0x0b5e55ed, s))) {
            const GradCheckReport r = check_gradients(probe.build, probe.params);
            auto it = std::find_if(out.begin(), out.end(),
                                   [&](const OpCheck& c) { return c.name == probe.name; });
            if (it == out.end()) {
                out.push_back({probe.name, r.ok, r.worst_abs_err, r.worst_rel_err});
            } else {
                it->ok = it->ok && r.ok;
                it->worst_abs_err = std::max(it->worst_abs_err, r.worst_abs_err);
                it->worst_rel_err = std::max(it->worst_rel_err, r.worst_rel_err);
            }
        }
    }
    return out;
}

GradCheckReport check_calvin_end_to_end(uint64_t seed, bool embodied) {
    const Mode mode = embodied ? Mode::kEmbodied : Mode::kPositional;
    const Maze maze = small_world(2, mix_seed(seed, 77)); // 5×5 grid
    const Trajectory traj = make_trajectory(maze, mode, seed);

    TrainConfig cfg;
    cfg.mode = mode;
    cfg.obs = ObsKind::kPartial;
    cfg.lattice_n = 2;
    cfg.hidden_width = 12;
    cfg.k = 8;
    cfg.beta = 0.5f;
    cfg.seed = seed;
    Model model = Model::init(cfg);
    // Small random offsets so motion/reward kernels are not at their zero
    // initialization (gradients there are structurally symmetric).
    Rng prng(mix_seed(seed, 0x9));
    for (size_t i = 0; i < model.calvin.p_logits.numel(); ++i)
        model.calvin.p_logits[i] = prng.uniform_pm(0.3f);
    for (size_t i = 0; i < model.calvin.r_hat.numel(); ++i)
        model.calvin.r_hat[i] = prng.uniform_pm(0.3f);

    std::vector<RevealedSet> revealed;
    RevealedSet seen(maze);
    for (size_t t = 0; t < traj.length(); ++t) {
        seen.reveal(maze, {traj.states[t].row, traj.states[t].col});
        revealed.push_back(seen);
    }
    const std::vector<TrainingSample> samples =
        expand_samples(traj, false, cfg.beta, 4 * traj.length(), mix_seed(seed, 3));

    const CalvinParams shape = model.calvin;
    const Maze maze_c = maze;
    const Trajectory traj_c = traj;
    const TrainConfig cfg_c = cfg;
    LossBuilder build = [=](Graph& g, const std::map<std::string, Val>& leaves) {
        CalvinLeaves l;
        l.p_logits = leaves.at("calvin.P_logits");
        l.r_hat = leaves.at("calvin.R_hat");
        l.r_fail = leaves.at("calvin.R_F");
        l.av_w1 = leaves.at("calvin.avail.conv1.w");
        l.av_b1 = leaves.at("calvin.avail.conv1.b");
        l.av_w2 = leaves.at("calvin.avail.conv2.w");
        l.av_b2 = leaves.at("calvin.avail.conv2.b");

        const int M = shape.n_theta, K = shape.kernel, A = shape.n_actions;
        Val p_flat = g.reshape(l.p_logits, {A * M, M * K * K});
        Val total;
        auto extend = [&g](Val& chain, Val term) {
            chain = chain.valid() ? g.add(chain, term) : term;
        };
        // One forward per observation snapshot appearing in the sample set.
        std::map<int, CalvinForward> fwd;
        for (const TrainingSample& s : samples) {
            if (!fwd.count(s.t_obs)) {
                Val obs = g.input(encode_observation(maze_c, revealed[s.t_obs]));
                fwd[s.t_obs] =
                    calvin_forward(g, l, shape, obs, cfg_c.k, nullptr, cfg_c.gamma);
            }
            const CalvinForward& f = fwd[s.t_obs];
            const int sidx = state_index(maze_c, traj_c.states[s.t_sup], cfg_c.mode);
            extend(total, g.softmax_ce(g.gather_state(f.q, sidx), s.action, s.weight));
            if (!s.step_sample) continue;
            extend(total, g.softmax_ce(g.gather_state(f.a_valid, sidx), s.action, 1.0f));
            if (static_cast<size_t>(s.t_sup) + 1 < traj_c.states.size()) {
                const AgentState& s0 = traj_c.states[s.t_sup];
                const AgentState& s1 = traj_c.states[s.t_sup + 1];
                const int ctr = (K - 1) / 2;
                const int row = s.action * M + s0.theta;
                const int target =
                    (s1.theta * K + (s1.row - s0.row + ctr)) * K + (s1.col - s0.col + ctr);
                extend(total, g.softmax_ce(g.slice_range(p_flat, row, row + 1), target, 1.0f));
            }
        }
        return g.scale(total, 1.0f / static_cast<float>(samples.size()));
    };

    std::map<std::string, Tensor> params;
    for (auto& [name, t] : model.named_params()) params.emplace(name, *t);
    return check_gradients(build, params, 1e-3, 1e-3, 1e-3, 8, mix_seed(seed, 0xC0));
}

GradCheckReport check_lpn_pipeline(uint64_t seed) {
    const Maze maze = small_world(2, mix_seed(seed, 99));

    TrainConfig cfg;
    cfg.obs = ObsKind::kLpn;
    cfg.lattice_n = 2;
    cfg.hidden_width = 12;
    cfg.lpn_emb = 6;
    cfg.lpn_hidden = 8;
    cfg.k = 6;
    cfg.seed = seed;
    Model model = Model::init(cfg);
    Rng prng(mix_seed(seed, 0x9));
    for (size_t i = 0; i < model.calvin.p_logits.numel(); ++i)
        model.calvin.p_logits[i] = prng.uniform_pm(0.3f);
    for (size_t i = 0; i < model.calvin.r_hat.numel(); ++i)
        model.calvin.r_hat[i] = prng.uniform_pm(0.3f);

    // A few scans along the expert path build the pooled map input.
    const Trajectory traj = make_trajectory(maze, Mode::kPositional, seed);
    LatticeMap map = LatticeMap::make(kScanClasses, maze.height, maze.width, 1.0f);
    Rng scan_rng(mix_seed(seed, 0x5C));
    for (size_t t = 0; t < traj.length(); ++t)
        for (const CameraFrame& f : synthetic_scan_panorama(
                 maze, {traj.states[t].row, traj.states[t].col}, scan_rng))
            update_map(map, bin_and_pool(project_pixels(f), map.tau, maze.height, maze.width));

    const Tensor pooled = map.pooled();
    const Tensor mask = map.observed_mask();
    const CalvinParams shape = model.calvin;
    const Maze maze_c = maze;
    const Trajectory traj_c = traj;
    const int k = cfg.k;
    const float gamma = cfg.gamma;
    LossBuilder build = [=](Graph& g, const std::map<std::string, Val>& leaves) {
        LpnLeaves lp;
        lp.phi_w = leaves.at("lpn.phi.w");
        lp.phi_b = leaves.at("lpn.phi.b");
        lp.map_w1 = leaves.at("lpn.map.conv1.w");
        lp.map_b1 = leaves.at("lpn.map.conv1.b");
        lp.map_w2 = leaves.at("lpn.map.conv2.w");
        lp.map_b2 = leaves.at("lpn.map.conv2.b");
        CalvinLeaves l;
        l.p_logits = leaves.at("calvin.P_logits");
        l.r_hat = leaves.at("calvin.R_hat");
        l.r_fail = leaves.at("calvin.R_F");
        l.av_w1 = leaves.at("calvin.avail.conv1.w");
        l.av_b1 = leaves.at("calvin.avail.conv1.b");
        l.av_w2 = leaves.at("calvin.avail.conv2.w");
        l.av_b2 = leaves.at("calvin.avail.conv2.b");

        Val obs = lpn_encode(g, lp, pooled, mask);
        const CalvinForward f = calvin_forward(g, l, shape, obs, k, nullptr, gamma);
        Val total;
        for (size_t t = 0; t < traj_c.length(); ++t) {
            const int sidx = state_index(maze_c, traj_c.states[t], Mode::kPositional);
            Val term = g.softmax_ce(g.gather_state(f.q, sidx), traj_c.actions[t], 1.0f);
            total = total.valid() ? g.add(total, term) : term;
        }
        return g.scale(total, 1.0f / static_cast<float>(traj_c.length()));
    };

    std::map<std::string, Tensor> params;
    for (auto& [name, t] : model.named_params()) params.emplace(name, *t);
    return check_gradients(build, params, 1e-3, 1e-3, 1e-3, 8, mix_seed(seed, 0xC1));
}

}  // namespace calvin
