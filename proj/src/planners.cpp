#include "calvin/planners.hpp"

#include <cmath>
#include <stdexcept>

namespace calvin {

// ---------------------------------------------------------------------------
// Exact VI
// ---------------------------------------------------------------------------

void ExactMdp::validate() const {
    if (static_cast<size_t>(n_states) * n_actions != table.size())
        throw std::invalid_argument("ExactMdp: table size mismatch");
    if (!(gamma > 0.0f && gamma < 1.0f))
        throw std::invalid_argument("ExactMdp: gamma must be in (0,1)");
    for (size_t i = 0; i < table.size(); ++i) {
        if (table[i].empty()) continue;
        double p = 0.0;
        for (const auto& tr : table[i]) p += tr.prob;
        if (std::abs(p - 1.0) > 1e-6)
            throw std::invalid_argument("ExactMdp: transition probabilities for state-action " +
                                        std::to_string(i) + " sum to " + std::to_string(p));
    }
}

ViResult vi_exact(const ExactMdp& mdp, int iterations) {
    if (iterations < 1) throw std::invalid_argument("vi_exact: iterations must be >= 1");
    mdp.validate();
    const int S = mdp.n_states, A = mdp.n_actions;

    ViResult out;
    out.v = Tensor({S});
    out.q = Tensor::full({A, S}, -INFINITY);
    out.policy.assign(S, -1);

    Tensor v_prev({S});
    for (int it = 0; it < iterations; ++it) {
        for (int s = 0; s < S; ++s) {
            float best = 0.0f; // states with no legal action keep value 0
            bool any = false;
            for (int a = 0; a < A; ++a) {
                const auto& trs = mdp.table[static_cast<size_t>(s) * A + a];
                if (trs.empty()) continue;
                double q = 0.0;
                for (const auto& tr : trs) {
                    double term = tr.reward;
                    if (!tr.terminal) term += static_cast<double>(mdp.gamma) * v_prev[tr.next];
                    q += static_cast<double>(tr.prob) * term;
                }
                const float qf = static_cast<float>(q);
                out.q[static_cast<size_t>(a) * S + s] = qf;
                if (!any || qf > best) {
                    best = qf;
                    any = true;
                }
            }
            out.v[s] = any ? best : 0.0f;
        }
        v_prev = out.v;
    }
    for (int s = 0; s < S; ++s) {
        float best = -INFINITY;
        for (int a = 0; a < A; ++a) {
            const float q = out.q[static_cast<size_t>(a) * S + s];
            if (mdp.table[static_cast<size_t>(s) * A + a].empty()) continue;
            if (q > best) {
                best = q;
                out.policy[s] = a;
            }
        }
    }
    return out;
}

ExactMdp maze_mdp(const Maze& maze, Mode mode, const MazeMdpOptions& opt) {
    const int plane = maze.height * maze.width;
    ExactMdp mdp;
    mdp.gamma = opt.gamma;
    mdp.n_actions = action_count(mode);
    mdp.n_states = plane * theta_count(mode);
    mdp.table.assign(static_cast<size_t>(mdp.n_states) * mdp.n_actions, {});

    const float diag_cost = 1.4142135623730951f;
    for (int theta = 0; theta < theta_count(mode); ++theta) {
        for (int r = 0; r < maze.height; ++r) {
            for (int c = 0; c < maze.width; ++c) {
                if (maze.obstacle(r, c)) continue;
                const AgentState s{r, c, theta};
                const int si = state_index(maze, s, mode);
                for (int a = 0; a < mdp.n_actions; ++a) {
                    if (!action_available(maze, s, a, mode)) continue;
                    auto& trs = mdp.table[static_cast<size_t>(si) * mdp.n_actions + a];
                    if (a == done_action(mode)) {
                        trs.push_back({si, 1.0f, opt.done_reward, true});
                        continue;
                    }
                    const AgentState n = kinematic_next(s, a, mode);
                    float reward = 0.0f;
                    if (opt.euclid_move_costs) {
                        const bool moved = n.row != r || n.col != c;
                        const bool diag = n.row != r && n.col != c;
                        reward = moved ? (diag ? -diag_cost : -1.0f) : -1.0f;
                    }
                    trs.push_back({state_index(maze, n, mode), 1.0f, reward, false});
                }
            }
        }
    }
    return mdp;
}

std::vector<int> greedy_rollout(const ExactMdp& mdp, const ViResult& vi, const Maze& maze,
                                Mode mode, AgentState start, int max_steps) {
    (void)mdp;
    std::vector<int> actions;
    AgentState s = start;
    for (int stepn = 0; stepn < max_steps; ++stepn) {
        const int si = state_index(maze, s, mode);
        const int a = vi.policy[si];
        if (a < 0) break;
        actions.push_back(a);
        const StepOutcome o = step(maze, s, a, mode);
        if (o.result == StepResult::kSuccess || o.result == StepResult::kFalseDone) break;
        if (o.result == StepResult::kCollision) break; // oracle policies never collide
        s = o.next;
    }
    return actions;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

Tensor uniform_init(std::vector<int> shape, size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_pm(bound);
    return t;
}

// P-or-R kernel applied to a value map: contract A×M×M'×K×K against M'×H×W.
Val pose_kernel_apply(Graph& g, Val kernel5, Val v, int n_actions, int n_theta, int kernel) {
    Val k4 = g.reshape(kernel5, {n_actions * n_theta, n_theta, kernel, kernel});
    Val out = g.conv2d(v, k4);
    const int H = v.shape()[1], W = v.shape()[2];
    return g.reshape(out, {n_actions, n_theta, H, W});
}

Val broadcast_over_theta(Graph& g, Val map_1hw, int n_theta, int h, int w) {
    Val flat = g.reshape(map_1hw, {h, w});
    Val zeros = g.input(Tensor({n_theta, h, w}));
    return g.add(zeros, flat);
}

}  // namespace

// ---------------------------------------------------------------------------
// VIN
// ---------------------------------------------------------------------------

VinParams VinParams::init(Mode mode, int kernel, int hidden_actions, int hidden_width,
                          uint64_t seed) {
    Rng rng(seed);
    VinParams p;
    p.mode = mode;
    p.n_actions = action_count(mode);
    p.n_theta = theta_count(mode);
    p.hidden_actions = hidden_actions;
    p.kernel = kernel;
    p.hidden_width = hidden_width;

    p.reward_w1 = uniform_init({hidden_width, kObservationChannels, 3, 3},
                               kObservationChannels * 9, rng);
    p.reward_b1 = Tensor({hidden_width});
    p.reward_w2 = uniform_init({1, hidden_width, 1, 1}, hidden_width, rng);
    p.reward_b2 = Tensor({1});
    const int M = p.n_theta, K = kernel;
    p.p_r = uniform_init({hidden_actions, M, M, K, K}, static_cast<size_t>(M) * K * K, rng);
    p.p_v = uniform_init({hidden_actions, M, M, K, K}, static_cast<size_t>(M) * K * K, rng);
    p.head_w = uniform_init({p.n_actions, hidden_actions, 1, 1}, hidden_actions, rng);
    p.head_b = Tensor({p.n_actions});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> VinParams::named() {
    return {{"vin.reward.conv1.w", &reward_w1}, {"vin.reward.conv1.b", &reward_b1},
            {"vin.reward.conv2.w", &reward_w2}, {"vin.reward.conv2.b", &reward_b2},
            {"vin.P_R", &p_r},                  {"vin.P_V", &p_v},
            {"vin.head.w", &head_w},            {"vin.head.b", &head_b}};
}

std::vector<std::pair<std::string, Val>> VinLeaves::named() const {
    return {{"vin.reward.conv1.w", reward_w1}, {"vin.reward.conv1.b", reward_b1},
            {"vin.reward.conv2.w", reward_w2}, {"vin.reward.conv2.b", reward_b2},
            {"vin.P_R", p_r},                  {"vin.P_V", p_v},
            {"vin.head.w", head_w},            {"vin.head.b", head_b}};
}

VinLeaves register_leaves(Graph& g, VinParams& p) {
    VinLeaves l;
    l.reward_w1 = g.leaf(p.reward_w1);
    l.reward_b1 = g.leaf(p.reward_b1);
    l.reward_w2 = g.leaf(p.reward_w2);
    l.reward_b2 = g.leaf(p.reward_b2);
    l.p_r = g.leaf(p.p_r);
    l.p_v = g.leaf(p.p_v);
    l.head_w = g.leaf(p.head_w);
    l.head_b = g.leaf(p.head_b);
    return l;
}

VinForward vin_forward(Graph& g, const VinLeaves& p, const VinParams& shape, Val obs, int k,
                       const Tensor* v_init) {
    const int H = obs.shape()[1], W = obs.shape()[2];
    const int A = shape.hidden_actions, M = shape.n_theta, K = shape.kernel;

    Val hid = g.relu(g.conv2d(obs, p.reward_w1, p.reward_b1));
    Val r_hat = g.conv2d(hid, p.reward_w2, p.reward_b2); // 1×H×W

    Val r_rep = broadcast_over_theta(g, r_hat, M, H, W); // M×H×W
    Val q_r = pose_kernel_apply(g, p.p_r, r_rep, A, M, K);

    Tensor v0 = v_init ? *v_init : Tensor({M, H, W});
    if (v_init && (v_init->rank() != 3 || v_init->extent(0) != M || v_init->extent(1) != H ||
                   v_init->extent(2) != W))
        throw std::invalid_argument("vin_forward: bad warm-start shape");
    Val v = g.input(v0);
    Val q = q_r;
    for (int it = 0; it < k; ++it) {
        q = g.add(q_r, pose_kernel_apply(g, p.p_v, v, A, M, K));
        v = g.channel_max(q).v;
    }

    // 1×1 head over hidden action channels, shared across orientations.
    Val q_flat = g.reshape(q, {A, M * H, W});
    Val logits = g.conv2d(q_flat, p.head_w, p.head_b);
    VinForward out;
    out.logits = g.reshape(logits, {shape.n_actions, M, H, W});
    out.v = v;
    out.r_hat = r_hat;
    return out;
}

// ---------------------------------------------------------------------------
// CALVIN
// ---------------------------------------------------------------------------

CalvinParams CalvinParams::init(Mode mode, int kernel, int hidden_width, uint64_t seed) {
    Rng rng(seed);
    CalvinParams p;
    p.mode = mode;
    p.n_actions = action_count(mode);
    p.n_theta = theta_count(mode);
    p.kernel = kernel;
    p.hidden_width = hidden_width;

    const int A = p.n_actions, M = p.n_theta, K = kernel;
    p.p_logits = Tensor({A, M, M, K, K}); // zeros: uniform motion prior
    p.r_hat = Tensor({A, M, M, K, K});
    p.r_fail = Tensor::full({1}, -1.0f);
    p.av_w1 = uniform_init({hidden_width, kObservationChannels, 3, 3},
                           kObservationChannels * 9, rng);
    p.av_b1 = Tensor({hidden_width});
    p.av_w2 = uniform_init({A * M + M, hidden_width, 1, 1}, hidden_width, rng);
    p.av_b2 = Tensor({A * M + M});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> CalvinParams::named() {
    return {{"calvin.P_logits", &p_logits},    {"calvin.R_hat", &r_hat},
            {"calvin.R_F", &r_fail},           {"calvin.avail.conv1.w", &av_w1},
            {"calvin.avail.conv1.b", &av_b1},  {"calvin.avail.conv2.w", &av_w2},
            {"calvin.avail.conv2.b", &av_b2}};
}

std::vector<std::pair<std::string, Val>> CalvinLeaves::named() const {
    return {{"calvin.P_logits", p_logits},    {"calvin.R_hat", r_hat},
            {"calvin.R_F", r_fail},           {"calvin.avail.conv1.w", av_w1},
            {"calvin.avail.conv1.b", av_b1},  {"calvin.avail.conv2.w", av_w2},
            {"calvin.avail.conv2.b", av_b2}};
}

CalvinLeaves register_leaves(Graph& g, CalvinParams& p) {
    CalvinLeaves l;
    l.p_logits = g.leaf(p.p_logits);
    l.r_hat = g.leaf(p.r_hat);
    l.r_fail = g.leaf(p.r_fail);
    l.av_w1 = g.leaf(p.av_w1);
    l.av_b1 = g.leaf(p.av_b1);
    l.av_w2 = g.leaf(p.av_w2);
    l.av_b2 = g.leaf(p.av_b2);
    return l;
}

AvailabilityOut calvin_availability(Graph& g, const CalvinLeaves& p, const CalvinParams& shape,
                                    Val obs) {
    const int H = obs.shape()[1], W = obs.shape()[2];
    const int A = shape.n_actions, M = shape.n_theta;
    Val hid = g.relu(g.conv2d(obs, p.av_w1, p.av_b1));
    Val out = g.conv2d(hid, p.av_w2, p.av_b2); // (A·M+M)×H×W
    Val a_valid = g.reshape(g.slice_range(out, 0, A * M), {A, M, H, W});
    Val thresh = g.slice_range(out, A * M, A * M + M); // M×H×W, broadcast over actions
    AvailabilityOut r;
    r.a_valid = a_valid;
    r.avail = g.sigmoid(g.sub(a_valid, thresh));
    return r;
}

Val motion_model_distribution(Graph& g, Val p_logits) {
    return g.softmax_tail(p_logits, 2); // per (action, current orientation)
}

Val calvin_reward(Graph& g, Val avail, Val p_dist, Val r_hat, Val r_fail) {
    Val r_sum = g.sum_tail(g.mul(p_dist, r_hat), 2); // [A, M]
    Val miss = g.add_scalar(g.scale(avail, -1.0f), 1.0f);
    return g.add(g.mul(miss, r_fail), g.mul(avail, r_sum));
}

Val calvin_q_update(Graph& g, Val reward, Val avail, Val p_dist, Val v, float gamma,
                    int done_index) {
    const auto& ps = p_dist.shape(); // A×M×M×K×K
    const int A = ps[0], M = ps[1], K = ps[3];
    Val pv = pose_kernel_apply(g, p_dist, v, A, M, K);
    Val fut = g.mul(pv, avail);
    Tensor mask({A});
    for (int a = 0; a < A; ++a) mask[a] = a == done_index ? 0.0f : gamma;
    return g.add(reward, g.mul_const(fut, std::move(mask)));
}

CalvinViOut calvin_value_iteration(Graph& g, Val avail, Val p_dist, Val reward, int k,
                                   const Tensor* v_init, float gamma, int done_index,
                                   int height, int width) {
    const int M = p_dist.shape()[1];
    if (v_init && (v_init->rank() != 3 || v_init->extent(0) != M ||
                   v_init->extent(1) != height || v_init->extent(2) != width))
        throw std::invalid_argument("calvin_value_iteration: bad warm-start shape");
    Val v = g.input(v_init ? *v_init : Tensor({M, height, width}));
    Val q = reward;
    for (int it = 0; it < k; ++it) {
        q = calvin_q_update(g, reward, avail, p_dist, v, gamma, done_index);
        v = g.channel_max(q).v;
    }
    if (k == 0) v = g.channel_max(q).v;
    return {q, v};
}

CalvinForward calvin_forward(Graph& g, const CalvinLeaves& p, const CalvinParams& shape, Val obs,
                             int k, const Tensor* v_init, float gamma) {
    const int H = obs.shape()[1], W = obs.shape()[2];
    CalvinForward out;
    const AvailabilityOut av = calvin_availability(g, p, shape, obs);
    out.a_valid = av.a_valid;
    out.avail = av.avail;
    out.p_dist = motion_model_distribution(g, p.p_logits);
    out.reward = calvin_reward(g, av.avail, out.p_dist, p.r_hat, p.r_fail);
    const CalvinViOut vi = calvin_value_iteration(g, av.avail, out.p_dist, out.reward, k, v_init,
                                                  gamma, shape.n_actions - 1, H, W);
    out.q = vi.q;
    out.v = vi.v;
    return out;
}

// ---------------------------------------------------------------------------
// Ground-truth tensors
// ---------------------------------------------------------------------------

Tensor gt_availability(const Maze& maze, Mode mode) {
    const int A = action_count(mode), M = theta_count(mode);
    const int H = maze.height, W = maze.width;
    Tensor out({A, M, H, W});
    for (int a = 0; a < A; ++a)
        for (int m = 0; m < M; ++m)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    if (maze.obstacle(r, c)) continue; // unreachable states stay unavailable
                    const AgentState s{r, c, m};
                    if (action_available(maze, s, a, mode))
                        out.at({a, m, r, c}) = 1.0f;
                }
    return out;
}

namespace {

// Kernel-space index of a spatial offset; the kernel centre is (K-1)/2.
size_t kernel_offset_index(int kernel, int dr, int dc) {
    const int ctr = (kernel - 1) / 2;
    return static_cast<size_t>(dr + ctr) * kernel + (dc + ctr);
}

}  // namespace

Tensor gt_motion_model(Mode mode, int kernel) {
    const int A = action_count(mode), M = theta_count(mode), K = kernel;
    Tensor out({A, M, M, K, K});
    const size_t cell = static_cast<size_t>(K) * K;
    auto put = [&](int a, int m, int m2, int dr, int dc) {
        out[((static_cast<size_t>(a) * M + m) * M + m2) * cell + kernel_offset_index(K, dr, dc)] =
            1.0f;
    };
    for (int m = 0; m < M; ++m) {
        if (mode == Mode::kPositional) {
            for (int a = 0; a < 8; ++a) put(a, m, m, kHeadings[a][0], kHeadings[a][1]);
            put(8, m, m, 0, 0); // done
        } else {
            put(kEmbodiedForward, m, m, kHeadings[m][0], kHeadings[m][1]);
            put(kEmbodiedBackward, m, m, -kHeadings[m][0], -kHeadings[m][1]);
            put(kEmbodiedRotLeft, m, (m + kNumThetas - 1) % kNumThetas, 0, 0);
            put(kEmbodiedRotRight, m, (m + 1) % kNumThetas, 0, 0);
            put(kEmbodiedActions - 1, m, m, 0, 0); // done
        }
    }
    return out;
}

Tensor gt_reward_kernel(Mode mode, int kernel, float done_reward, bool euclid_move_costs) {
    const int A = action_count(mode), M = theta_count(mode), K = kernel;
    Tensor out({A, M, M, K, K});
    const Tensor p = gt_motion_model(mode, kernel);
    const int done = done_action(mode);
    const float diag_cost = 1.4142135623730951f;
    // Assign rewards exactly where the one-hot motion model places its mass.
    for (int a = 0; a < A; ++a) {
        float reward = 0.0f;
        if (a == done) {
            reward = done_reward;
        } else if (euclid_move_costs) {
            if (mode == Mode::kPositional)
                reward = (kHeadings[a][0] != 0 && kHeadings[a][1] != 0) ? -diag_cost : -1.0f;
            else
                reward = -1.0f;
        }
        if (reward == 0.0f) continue;
        const size_t block = static_cast<size_t>(M) * M * K * K;
        for (size_t i = 0; i < block; ++i)
            if (p[static_cast<size_t>(a) * block + i] > 0.0f)
                out[static_cast<size_t>(a) * block + i] = reward;
    }
    return out;
}

int greedy_action(const Tensor& q, int state_flat) {
    const int A = q.extent(0);
    const size_t R = q.numel() / A;
    int best = 0;
    float bv = q[state_flat];
    for (int a = 1; a < A; ++a) {
        const float v = q[static_cast<size_t>(a) * R + state_flat];
        if (v > bv) {
            bv = v;
            best = a;
        }
    }
    return best;
}

}  // namespace calvin
