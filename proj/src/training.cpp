#include "calvin/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "calvin/eval.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace calvin {

std::string to_string(PlannerKind k) { return k == PlannerKind::kCalvin ? "calvin" : "vin"; }
std::string to_string(ObsKind o) {
    switch (o) {
        case ObsKind::kFull: return "full";
        case ObsKind::kPartial: return "partial";
        case ObsKind::kLpn: return "lpn";
    }
    return "?";
}
std::string to_string(Mode m) { return m == Mode::kPositional ? "positional" : "embodied"; }

PlannerKind planner_kind_from_string(const std::string& s) {
    if (s == "calvin") return PlannerKind::kCalvin;
    if (s == "vin") return PlannerKind::kVin;
    throw std::invalid_argument("unknown planner '" + s + "' (expected calvin|vin)");
}
ObsKind obs_kind_from_string(const std::string& s) {
    if (s == "full") return ObsKind::kFull;
    if (s == "partial") return ObsKind::kPartial;
    if (s == "lpn") return ObsKind::kLpn;
    throw std::invalid_argument("unknown observability '" + s + "' (expected full|partial|lpn)");
}
Mode mode_from_string(const std::string& s) {
    if (s == "positional") return Mode::kPositional;
    if (s == "embodied") return Mode::kEmbodied;
    throw std::invalid_argument("unknown mode '" + s + "' (expected positional|embodied)");
}

void TrainConfig::validate() const {
    const bool lr_ok = lr == 0.01f || lr == 0.005f || lr == 0.001f;
    if (!lr_ok) throw std::invalid_argument("config: lr must be one of {0.01, 0.005, 0.001}");
    if (!(beta > 0.0f && beta <= 1.0f))
        throw std::invalid_argument("config: beta must be in (0, 1]");
    if (k < 1 || k > 100) throw std::invalid_argument("config: k must be in [1, 100]");
    if (kernel < 1 || kernel % 2 == 0)
        throw std::invalid_argument("config: kernel must be odd and positive");
    if (hidden_width < 1 || hidden_width > 150)
        throw std::invalid_argument("config: hidden_width must be in [1, 150]");
    if (epochs < 0 || epochs > 30)
        throw std::invalid_argument("config: epochs must be in [0, 30]");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (!(gamma > 0.0f && gamma < 1.0f))
        throw std::invalid_argument("config: gamma must be in (0, 1)");
    if (val_frac < 0.0f || val_frac > 0.5f)
        throw std::invalid_argument("config: val_frac must be in [0, 0.5]");
    if (cap_factor < 1.0f) throw std::invalid_argument("config: cap_factor must be >= 1");
    if (lattice_n < 1) throw std::invalid_argument("config: lattice_n must be >= 1");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["planner"] = calvin::to_string(planner);
    j["obs"] = calvin::to_string(obs);
    j["mode"] = calvin::to_string(mode);
    j["lattice_n"] = lattice_n;
    j["lr"] = lr;
    j["beta"] = beta;
    j["k"] = k;
    j["kernel"] = kernel;
    j["hidden_width"] = hidden_width;
    j["hidden_actions"] = hidden_actions;
    j["epochs"] = epochs;
    j["batch"] = batch;
    j["seed"] = seed;
    j["gamma"] = gamma;
    j["cap_factor"] = cap_factor;
    j["val_frac"] = val_frac;
    j["val_rollouts"] = val_rollouts;
    j["patience"] = patience;
    j["use_loss_p"] = use_loss_p;
    j["use_loss_a"] = use_loss_a;
    j["max_rollout_steps"] = max_rollout_steps;
    j["lpn_emb"] = lpn_emb;
    j["lpn_hidden"] = lpn_hidden;
    j["scan_rays"] = scan.n_rays;
    j["scan_fov"] = scan.fov_deg;
    j["scan_range"] = scan.range;
    j["scan_noise"] = scan.noise_sigma;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig c;
    if (j.contains("planner")) c.planner = planner_kind_from_string(j["planner"]);
    if (j.contains("obs")) c.obs = obs_kind_from_string(j["obs"]);
    if (j.contains("mode")) c.mode = mode_from_string(j["mode"]);
    auto get = [&j](const char* key, auto& out) {
        if (j.contains(key)) out = j[key].template get<std::decay_t<decltype(out)>>();
    };
    get("lattice_n", c.lattice_n);
    get("lr", c.lr);
    get("beta", c.beta);
    get("k", c.k);
    get("kernel", c.kernel);
    get("hidden_width", c.hidden_width);
    get("hidden_actions", c.hidden_actions);
    get("epochs", c.epochs);
    get("batch", c.batch);
    get("seed", c.seed);
    get("gamma", c.gamma);
    get("cap_factor", c.cap_factor);
    get("val_frac", c.val_frac);
    get("val_rollouts", c.val_rollouts);
    get("patience", c.patience);
    get("use_loss_p", c.use_loss_p);
    get("use_loss_a", c.use_loss_a);
    get("max_rollout_steps", c.max_rollout_steps);
    get("lpn_emb", c.lpn_emb);
    get("lpn_hidden", c.lpn_hidden);
    get("scan_rays", c.scan.n_rays);
    get("scan_fov", c.scan.fov_deg);
    get("scan_range", c.scan.range);
    get("scan_noise", c.scan.noise_sigma);
    return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model Model::init(const TrainConfig& cfg) {
    Model m;
    m.cfg = cfg;
    if (cfg.planner == PlannerKind::kCalvin)
        m.calvin = CalvinParams::init(cfg.mode, cfg.kernel, cfg.hidden_width,
                                      mix_seed(cfg.seed, 0xCA1));
    else
        m.vin = VinParams::init(cfg.mode, cfg.kernel, cfg.hidden_actions, cfg.hidden_width,
                                mix_seed(cfg.seed, 0x71A));
    if (cfg.obs == ObsKind::kLpn)
        m.lpn = LpnParams::init(mix_seed(cfg.seed, 0x1B9), cfg.lpn_emb, cfg.lpn_hidden);
    return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (cfg.planner == PlannerKind::kCalvin)
        out = calvin.named();
    else
        out = vin.named();
    if (cfg.obs == ObsKind::kLpn)
        for (auto& kv : lpn.named()) out.push_back(kv);
    return out;
}

std::map<std::string, Tensor> Model::param_map() {
    std::map<std::string, Tensor> out;
    for (auto& [name, t] : named_params()) out.emplace(name, *t);
    return out;
}

void Model::load_params(const std::map<std::string, Tensor>& params) {
    for (auto& [name, t] : named_params()) {
        const auto it = params.find(name);
        if (it == params.end())
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (it->second.shape() != t->shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                                     Tensor::shape_str(it->second.shape()) + ", model expects " +
                                     Tensor::shape_str(t->shape()));
        *t = it->second;
    }
}

ModelRun run_model(Graph& g, Model& model, const SnapshotInput& in, int k,
                   const Tensor* v_init) {
    ModelRun run;
    Val obs;
    if (model.cfg.obs == ObsKind::kLpn) {
        LpnLeaves lpn = register_leaves(g, model.lpn);
        obs = lpn_encode(g, lpn, in.pooled, in.mask);
        for (auto& kv : lpn.named()) run.leaves.push_back(kv);
    } else {
        obs = g.input(in.obs);
    }
    if (model.cfg.planner == PlannerKind::kCalvin) {
        CalvinLeaves leaves = register_leaves(g, model.calvin);
        const CalvinForward fwd =
            calvin_forward(g, leaves, model.calvin, obs, k, v_init, model.cfg.gamma);
        run.q = fwd.q;
        run.v = fwd.v;
        run.a_valid = fwd.a_valid;
        run.avail = fwd.avail;
        run.reward = fwd.reward;
        run.p_logits = leaves.p_logits;
        for (auto& kv : leaves.named()) run.leaves.push_back(kv);
    } else {
        VinLeaves leaves = register_leaves(g, model.vin);
        const VinForward fwd = vin_forward(g, leaves, model.vin, obs, k, v_init);
        run.q = fwd.logits;
        run.v = fwd.v;
        run.reward = fwd.r_hat;
        for (auto& kv : leaves.named()) run.leaves.push_back(kv);
    }
    return run;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const Dataset& dataset) : cfg_(cfg) {
    cfg_.validate();
    if (dataset.trajectories.empty()) throw std::invalid_argument("train: empty dataset");
    if (dataset.mode != cfg.mode)
        throw std::invalid_argument("train: dataset mode does not match config mode");
    model_ = Model::init(cfg_);
    adam_ = Adam({cfg_.lr, 0.9f, 0.999f, 1e-8f});
    trajectories_ = dataset.trajectories;

    // Deterministic 90/10-style train/validation split over trajectories.
    std::vector<int> order(trajectories_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(mix_seed(cfg_.seed, 0x59717));
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    size_t n_val = static_cast<size_t>(std::lround(cfg_.val_frac * order.size()));
    if (cfg_.val_frac > 0.0f && n_val == 0 && order.size() > 1) n_val = 1;
    val_refs_.assign(order.begin(), order.begin() + n_val);
    train_refs_.assign(order.begin() + n_val, order.end());
    if (train_refs_.empty()) throw std::invalid_argument("train: no training trajectories left");

    build_snapshots(dataset);
    groups_ = make_groups(train_refs_);
    val_groups_ = make_groups(val_refs_);
}

void Trainer::build_snapshots(const Dataset& dataset) {
    const size_t n = trajectories_.size();
    if (cfg_.obs == ObsKind::kFull) {
        full_obs_.resize(n);
        for (size_t i = 0; i < n; ++i)
            full_obs_[i] = encode_full_observation(trajectories_[i].maze);
        return;
    }
    if (cfg_.obs == ObsKind::kPartial) {
        revealed_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const Trajectory& traj = trajectories_[i];
            RevealedSet seen(traj.maze);
            revealed_[i].reserve(traj.length());
            for (size_t t = 0; t < traj.length(); ++t) {
                seen.reveal(traj.maze, {traj.states[t].row, traj.states[t].col});
                revealed_[i].push_back(seen);
            }
        }
        return;
    }
    // LPN: accumulate scans along the trajectory, snapshotting the pooled map
    // and observed mask after every step.
    lpn_pooled_.resize(n);
    lpn_mask_.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const Trajectory& traj = trajectories_[i];
        const Maze& maze = traj.maze;
        LatticeMap map = LatticeMap::make(kScanClasses, maze.height, maze.width, 1.0f);
        for (size_t t = 0; t < traj.length(); ++t) {
            Rng scan_rng(mix_seed(mix_seed(cfg_.seed, 0x5CA9 + i), t));
            const AgentState& s = traj.states[t];
            std::vector<CameraFrame> frames;
            if (cfg_.mode == Mode::kEmbodied)
                frames.push_back(synthetic_scan(maze, {s.row, s.col}, s.theta, scan_rng,
                                                cfg_.scan));
            else
                frames = synthetic_scan_panorama(maze, {s.row, s.col}, scan_rng, cfg_.scan);
            for (const CameraFrame& f : frames)
                update_map(map, bin_and_pool(project_pixels(f), map.tau, maze.height, maze.width));
            lpn_pooled_[i].push_back(map.pooled());
            lpn_mask_[i].push_back(map.observed_mask());
        }
    }
    (void)dataset;
}

std::vector<Trainer::Group> Trainer::make_groups(const std::vector<int>& refs) const {
    std::vector<Group> out;
    for (int ti : refs) {
        const Trajectory& traj = trajectories_[ti];
        const size_t cap =
            static_cast<size_t>(std::ceil(cfg_.cap_factor * static_cast<double>(traj.length())));
        const std::vector<TrainingSample> samples =
            expand_samples(traj, cfg_.obs == ObsKind::kFull, cfg_.beta, cap,
                           mix_seed(cfg_.seed, 0xE4B + static_cast<uint64_t>(ti)));
        // Bucket by observation snapshot; full observability lands on one group.
        std::map<int, Group> by_obs;
        for (const TrainingSample& s : samples) {
            Group& g = by_obs[s.t_obs];
            g.traj = ti;
            g.t_obs = s.t_obs;
            g.samples.push_back(s);
        }
        for (auto& [t, g] : by_obs) out.push_back(std::move(g));
    }
    return out;
}

void Trainer::count_loss_terms(const Group& g, size_t* n_a, size_t* n_p) const {
    if (cfg_.planner != PlannerKind::kCalvin) return;
    const Trajectory& traj = trajectories_[g.traj];
    for (const TrainingSample& s : g.samples) {
        if (!s.step_sample) continue;
        if (cfg_.use_loss_a) ++*n_a;
        if (cfg_.use_loss_p && static_cast<size_t>(s.t_sup) + 1 < traj.states.size()) ++*n_p;
    }
}

std::vector<Trainer::Batch> Trainer::plan_epoch(int epoch) const {
    std::vector<int> order(groups_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(mix_seed(cfg_.seed, 0xE90C + static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);

    std::vector<Batch> plan;
    Batch cur;
    for (int gi : order) {
        cur.group_ids.push_back(gi);
        cur.n_samples += groups_[gi].samples.size();
        count_loss_terms(groups_[gi], &cur.n_a, &cur.n_p);
        if (cur.n_samples >= static_cast<size_t>(cfg_.batch)) {
            plan.push_back(std::move(cur));
            cur = Batch{};
        }
    }
    if (!cur.group_ids.empty()) plan.push_back(std::move(cur));
    return plan;
}

SnapshotInput Trainer::snapshot_input(int traj, int t_obs) const {
    SnapshotInput in;
    switch (cfg_.obs) {
        case ObsKind::kFull:
            in.obs = full_obs_[traj];
            break;
        case ObsKind::kPartial:
            in.obs = encode_observation(trajectories_[traj].maze, revealed_[traj][t_obs]);
            break;
        case ObsKind::kLpn:
            in.pooled = lpn_pooled_[traj][t_obs];
            in.mask = lpn_mask_[traj][t_obs];
            break;
    }
    return in;
}

Trainer::GroupGrad Trainer::process_group(const Group& group, size_t n_samples, size_t n_a,
                                          size_t n_p, bool compute_grads) {
    const Trajectory& traj = trajectories_[group.traj];
    const Maze& maze = traj.maze;
    const int ctr = (cfg_.kernel - 1) / 2;
    const int M = theta_count(cfg_.mode);
    const int A = action_count(cfg_.mode);

    Graph g;
    const SnapshotInput in = snapshot_input(group.traj, group.t_obs);
    ModelRun run = run_model(g, model_, in, cfg_.k, nullptr);

    Val q_chain, a_chain, p_chain;
    auto extend = [&g](Val& chain, Val term) {
        chain = chain.valid() ? g.add(chain, term) : term;
    };
    const bool is_calvin = cfg_.planner == PlannerKind::kCalvin;
    Val p_flat;
    if (is_calvin)
        p_flat = g.reshape(run.p_logits,
                           {A * M, M * cfg_.kernel * cfg_.kernel});

    for (const TrainingSample& s : group.samples) {
        const int sidx = state_index(maze, traj.states[s.t_sup], cfg_.mode);
        extend(q_chain, g.softmax_ce(g.gather_state(run.q, sidx), s.action, s.weight));
        if (!is_calvin || !s.step_sample) continue;
        if (cfg_.use_loss_a)
            extend(a_chain, g.softmax_ce(g.gather_state(run.a_valid, sidx), s.action, 1.0f));
        if (cfg_.use_loss_p && static_cast<size_t>(s.t_sup) + 1 < traj.states.size()) {
            const AgentState& s0 = traj.states[s.t_sup];
            const AgentState& s1 = traj.states[s.t_sup + 1];
            const int dr = s1.row - s0.row, dc = s1.col - s0.col;
            if (std::abs(dr) > ctr || std::abs(dc) > ctr)
                throw std::runtime_error("loss_P: observed offset outside kernel support");
            const int row = s.action * M + s0.theta;
            const int target =
                (s1.theta * cfg_.kernel + (dr + ctr)) * cfg_.kernel + (dc + ctr);
            extend(p_chain,
                   g.softmax_ce(g.slice_range(p_flat, row, row + 1), target, 1.0f));
        }
    }

    Val total;
    if (q_chain.valid()) extend(total, g.scale(q_chain, 1.0f / static_cast<float>(n_samples)));
    if (a_chain.valid()) extend(total, g.scale(a_chain, 1.0f / static_cast<float>(n_a)));
    if (p_chain.valid()) extend(total, g.scale(p_chain, 1.0f / static_cast<float>(n_p)));

    GroupGrad out;
    out.q_sum = q_chain.valid() ? q_chain.value()[0] : 0.0;
    out.a_sum = a_chain.valid() ? a_chain.value()[0] : 0.0;
    out.p_sum = p_chain.valid() ? p_chain.value()[0] : 0.0;
    if (compute_grads && total.valid()) {
        g.backward(total);
        for (auto& [name, leaf] : run.leaves) out.grads.emplace(name, leaf.grad());
    }
    return out;
}

void Trainer::run_steps(int n) {
    for (int it = 0; it < n; ++it) {
        if (batch_in_epoch_ == 0) {
            epoch_plan_ = plan_epoch(epoch_);
            epoch_q_sum_ = epoch_p_sum_ = epoch_a_sum_ = 0.0;
            epoch_n_ = epoch_na_ = epoch_np_ = 0;
        }
        const Batch& batch = epoch_plan_[batch_in_epoch_];
        std::vector<GroupGrad> results(batch.group_ids.size());
        std::string failure; // exceptions may not cross the parallel region
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
        for (size_t gi = 0; gi < batch.group_ids.size(); ++gi) {
            try {
                results[gi] = process_group(groups_[batch.group_ids[gi]], batch.n_samples,
                                            batch.n_a, batch.n_p, true);
            } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
                if (failure.empty()) failure = e.what();
            }
        }
        if (!failure.empty())
            throw std::runtime_error("training aborted at epoch " + std::to_string(epoch_) +
                                     " step " + std::to_string(batch_in_epoch_) + ": " + failure);

        // Deterministic reduction in batch order, then one Adam step.
        std::map<std::string, Tensor> grad_sum;
        for (const GroupGrad& gg : results) {
            for (const auto& [name, grad] : gg.grads) {
                auto it2 = grad_sum.find(name);
                if (it2 == grad_sum.end()) {
                    grad_sum.emplace(name, grad);
                } else {
                    Tensor& acc = it2->second;
                    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += grad[i];
                }
            }
            epoch_q_sum_ += gg.q_sum;
            epoch_p_sum_ += gg.p_sum;
            epoch_a_sum_ += gg.a_sum;
        }
        epoch_n_ += batch.n_samples;
        epoch_na_ += batch.n_a;
        epoch_np_ += batch.n_p;
        for (auto& [name, param] : model_.named_params()) {
            const auto it2 = grad_sum.find(name);
            if (it2 != grad_sum.end()) adam_.step_param(name, *param, it2->second);
        }
        adam_.advance();

        if (++batch_in_epoch_ >= static_cast<int>(epoch_plan_.size())) {
            batch_in_epoch_ = 0;
            ++epoch_;
        }
    }
}

LossReport Trainer::run_epoch() {
    const int start = epoch_;
    while (epoch_ == start) run_steps(1);
    LossReport out;
    out.l_q = epoch_n_ ? epoch_q_sum_ / static_cast<double>(epoch_n_) : 0.0;
    out.l_a = epoch_na_ ? epoch_a_sum_ / static_cast<double>(epoch_na_) : 0.0;
    out.l_p = epoch_np_ ? epoch_p_sum_ / static_cast<double>(epoch_np_) : 0.0;
    out.samples = epoch_n_;
    epoch_report_ = out;
    return out;
}

double Trainer::validation_loss() {
    if (val_groups_.empty()) return 0.0;
    size_t n = 0, n_a = 0, n_p = 0;
    for (const Group& g : val_groups_) {
        n += g.samples.size();
        count_loss_terms(g, &n_a, &n_p);
    }
    std::vector<GroupGrad> results(val_groups_.size());
    std::string failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (size_t i = 0; i < val_groups_.size(); ++i) {
        try {
            results[i] = process_group(val_groups_[i], n, n_a, n_p, false);
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (failure.empty()) failure = e.what();
        }
    }
    if (!failure.empty()) throw std::runtime_error("validation failed: " + failure);
    double q = 0.0, p = 0.0, a = 0.0;
    for (const GroupGrad& gg : results) {
        q += gg.q_sum;
        p += gg.p_sum;
        a += gg.a_sum;
    }
    double total = n ? q / static_cast<double>(n) : 0.0;
    if (n_a) total += a / static_cast<double>(n_a);
    if (n_p) total += p / static_cast<double>(n_p);
    return total;
}

double Trainer::validation_success() {
    if (val_refs_.empty()) return 0.0;
    const size_t count = std::min<size_t>(val_refs_.size(),
                                          cfg_.val_rollouts > 0 ? cfg_.val_rollouts : 1);
    std::vector<int> wins(count, 0);
    std::string failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (size_t i = 0; i < count; ++i) {
        try {
            const Trajectory& traj = trajectories_[val_refs_[i]];
            const RolloutResult r = rollout_from(model_, traj.maze, traj.states[0],
                                                 cfg_.rollout_steps(),
                                                 mix_seed(cfg_.seed, 0xE7A1 + i));
            wins[i] = r.outcome == RolloutOutcome::kSuccess ? 1 : 0;
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (failure.empty()) failure = e.what();
        }
    }
    if (!failure.empty()) throw std::runtime_error("validation rollouts failed: " + failure);
    int total = 0;
    for (int w : wins) total += w;
    return static_cast<double>(total) / static_cast<double>(count);
}

std::map<std::string, Tensor> Trainer::full_state() {
    std::map<std::string, Tensor> out = model_.param_map();
    for (auto& [name, t] : adam_.state()) out.emplace(name, t);
    out.emplace("trainer.epoch", Tensor::scalar(static_cast<float>(epoch_)));
    out.emplace("trainer.batch", Tensor::scalar(static_cast<float>(batch_in_epoch_)));
    return out;
}

void Trainer::load_full_state(const std::map<std::string, Tensor>& state) {
    std::map<std::string, Tensor> params;
    for (const auto& [name, t] : state)
        if (name.rfind("adam.", 0) != 0 && name.rfind("trainer.", 0) != 0)
            params.emplace(name, t);
    model_.load_params(params);
    adam_.load_state(state);
    epoch_ = static_cast<int>(state.at("trainer.epoch")[0]);
    batch_in_epoch_ = static_cast<int>(state.at("trainer.batch")[0]);
    if (batch_in_epoch_ > 0) epoch_plan_ = plan_epoch(epoch_);
}

std::string metrics_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,L_Q,L_P,L_A,val_loss,val_success\n";
    char buf[256];
    for (const EpochRecord& r : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train.l_q,
                      r.train.l_p, r.train.l_a, r.val_loss, r.val_success);
        out += buf;
    }
    return out;
}

TrainResult train(const TrainConfig& cfg, const Dataset& dataset, std::ostream* log) {
    Trainer trainer(cfg, dataset);
    TrainResult result;
    result.best_params = trainer.model().param_map(); // zero-epoch fallback
    double best_val = INFINITY;
    for (int e = 0; e < cfg.epochs; ++e) {
        EpochRecord rec;
        rec.epoch = e;
        rec.train = trainer.run_epoch();
        rec.val_loss = trainer.validation_loss();
        rec.val_success = trainer.validation_success();
        result.history.push_back(rec);
        if (log)
            *log << "epoch " << e << " L_Q=" << rec.train.l_q << " L_P=" << rec.train.l_p
                 << " L_A=" << rec.train.l_a << " val_loss=" << rec.val_loss
                 << " val_success=" << rec.val_success << "\n";
        if (rec.val_loss < best_val) {
            best_val = rec.val_loss;
            result.best_epoch = e;
            result.best_params = trainer.model().param_map();
        }
        if (cfg.patience > 0 && e - result.best_epoch >= cfg.patience) break;
    }
    result.final_model = trainer.model();
    result.final_state = trainer.full_state();
    return result;
}

}  // namespace calvin
