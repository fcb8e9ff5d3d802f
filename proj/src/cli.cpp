#include "calvin/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "calvin/checkpoint.hpp"
#include "calvin/eval.hpp"
#include "calvin/gradcheck.hpp"
#include "calvin/render.hpp"
#include "calvin/training.hpp"

namespace calvin {

namespace {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << text;
}

// Shared --config/--flag plumbing: flags override the config file.
struct ConfigArgs {
    std::string config_path;
    std::string planner, obs, mode;
    int lattice_n = 0, k = 0, kernel = 0, hidden_width = 0, hidden_actions = 0;
    int epochs = -1, batch = 0, patience = -1, val_rollouts = -1, max_rollout_steps = -1;
    float lr = 0, beta = 0, gamma = 0, cap_factor = 0, val_frac = -1;
    uint64_t seed = 0;
    bool no_loss_p = false, no_loss_a = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (flags override it)");
        cmd->add_option("--planner", planner, "calvin|vin");
        cmd->add_option("--obs", obs, "full|partial|lpn");
        cmd->add_option("--mode", mode, "positional|embodied");
        cmd->add_option("--lattice-n", lattice_n, "maze lattice size n (grid is 2n+1)");
        cmd->add_option("--lr", lr, "learning rate {0.01,0.005,0.001}");
        cmd->add_option("--beta", beta, "trajectory reweighting decay (1 = standard loss)");
        cmd->add_option("--k", k, "value-iteration depth");
        cmd->add_option("--kernel", kernel, "motion kernel size (odd)");
        cmd->add_option("--hidden", hidden_width, "availability/reward CNN width");
        cmd->add_option("--hidden-actions", hidden_actions, "VIN hidden action channels");
        cmd->add_option("--epochs", epochs, "training epochs (max 30)");
        cmd->add_option("--batch", batch, "samples per optimizer step");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--gamma", gamma, "discount factor");
        cmd->add_option("--cap-factor", cap_factor, "sample cap multiplier");
        cmd->add_option("--val-frac", val_frac, "validation fraction");
        cmd->add_option("--val-rollouts", val_rollouts, "validation rollouts per epoch");
        cmd->add_option("--patience", patience, "early-stop patience (0 = off)");
        cmd->add_option("--max-steps", max_rollout_steps, "rollout step limit override");
        cmd->add_flag("--no-loss-p", no_loss_p, "drop the transition-model loss");
        cmd->add_flag("--no-loss-a", no_loss_a, "drop the availability loss");
    }

    TrainConfig resolve(const CLI::App* cmd) const {
        TrainConfig cfg;
        if (!config_path.empty()) cfg = TrainConfig::from_json(read_file(config_path));
        if (cmd->count("--planner")) cfg.planner = planner_kind_from_string(planner);
        if (cmd->count("--obs")) cfg.obs = obs_kind_from_string(obs);
        if (cmd->count("--mode")) cfg.mode = mode_from_string(mode);
        if (cmd->count("--lattice-n")) cfg.lattice_n = lattice_n;
        if (cmd->count("--lr")) cfg.lr = lr;
        if (cmd->count("--beta")) cfg.beta = beta;
        if (cmd->count("--k")) cfg.k = k;
        if (cmd->count("--kernel")) cfg.kernel = kernel;
        if (cmd->count("--hidden")) cfg.hidden_width = hidden_width;
        if (cmd->count("--hidden-actions")) cfg.hidden_actions = hidden_actions;
        if (cmd->count("--epochs")) cfg.epochs = epochs;
        if (cmd->count("--batch")) cfg.batch = batch;
        if (cmd->count("--seed")) cfg.seed = seed;
        if (cmd->count("--gamma")) cfg.gamma = gamma;
        if (cmd->count("--cap-factor")) cfg.cap_factor = cap_factor;
        if (cmd->count("--val-frac")) cfg.val_frac = val_frac;
        if (cmd->count("--val-rollouts")) cfg.val_rollouts = val_rollouts;
        if (cmd->count("--patience")) cfg.patience = patience;
        if (cmd->count("--max-steps")) cfg.max_rollout_steps = max_rollout_steps;
        if (no_loss_p) cfg.use_loss_p = false;
        if (no_loss_a) cfg.use_loss_a = false;
        return cfg;
    }
};

Model load_model(const TrainConfig& cfg, const std::string& ckpt) {
    Model m = Model::init(cfg);
    m.load_params(checkpoint_load(ckpt));
    return m;
}

int run_train(const TrainConfig& cfg, const std::string& data_path, const std::string& out_dir) {
    const Dataset ds = dataset_load_jsonl(data_path);
    fs::create_directories(out_dir + "/checkpoints");
    write_file(out_dir + "/config.json", cfg.to_json());

    const TrainResult result = train(cfg, ds, &std::cout);
    write_file(out_dir + "/metrics.csv", metrics_csv(result.history));
    checkpoint_save(out_dir + "/checkpoints/best.ckpt", result.best_params);
    checkpoint_save(out_dir + "/checkpoints/final.ckpt", result.final_state);
    std::cout << "best epoch: " << result.best_epoch << "\n";
    std::cout << "checkpoint: " << out_dir << "/checkpoints/best.ckpt\n";
    return 0;
}

MetricsSummary run_eval(const TrainConfig& cfg, const std::string& ckpt, int mazes, int seeds,
                        uint64_t seed_base, const std::string& out_dir) {
    Model model = load_model(cfg, ckpt);
    const MetricsSummary summary =
        evaluate_model(model, mazes, seeds, seed_base, cfg.rollout_steps());
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(out_dir + "/metrics.json", summary.to_json() + "\n");
        write_file(out_dir + "/metrics.csv", summary.to_csv());
    }
    return summary;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"differentiable maze planners: data generation, training, evaluation"};
    app.require_subcommand(1);

    // --- gen-data ---
    auto* gen = app.add_subcommand("gen-data", "generate an expert trajectory dataset");
    size_t gen_count = 1000;
    int gen_lattice = 7;
    uint64_t gen_seed = 1;
    bool gen_embodied = false;
    std::string gen_out = "dataset.jsonl";
    gen->add_option("--count", gen_count, "number of trajectories");
    gen->add_option("--lattice-n", gen_lattice, "maze lattice size (grid 2n+1)");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_flag("--embodied", gen_embodied, "embodied (pose) trajectories");
    gen->add_option("--out", gen_out, "output JSONL path");

    // --- train ---
    auto* tr = app.add_subcommand("train", "imitation-train a planner");
    ConfigArgs tr_args;
    std::string tr_data, tr_out = "out";
    tr->add_option("--data", tr_data, "dataset JSONL")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr_args.attach(tr);

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on unseen mazes");
    ConfigArgs ev_args;
    std::string ev_ckpt, ev_out;
    int ev_mazes = 100, ev_seeds = 3;
    uint64_t ev_seed_base = 900000;
    double ev_min_success = -1.0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--mazes", ev_mazes, "mazes per seed");
    ev->add_option("--seeds", ev_seeds, "number of evaluation seeds");
    ev->add_option("--seed-base", ev_seed_base, "base seed for unseen mazes");
    ev->add_option("--out", ev_out, "output directory for metrics files");
    ev->add_option("--min-success", ev_min_success,
                   "exit 1 when mean success falls below this rate");
    ev_args.attach(ev);

    // --- ablate ---
    auto* ab = app.add_subcommand("ablate", "rerun training with loss components removed");
    ConfigArgs ab_args;
    std::string ab_data, ab_out = "ablate_out";
    int ab_mazes = 50, ab_seeds = 3;
    uint64_t ab_seed_base = 910000;
    ab->add_option("--data", ab_data, "dataset JSONL")->required();
    ab->add_option("--out", ab_out, "output directory");
    ab->add_option("--mazes", ab_mazes, "evaluation mazes per seed");
    ab->add_option("--seeds", ab_seeds, "evaluation seeds");
    ab->add_option("--seed-base", ab_seed_base, "evaluation maze seed base");
    ab_args.attach(ab);

    // --- render ---
    auto* re = app.add_subcommand("render", "write value/reward map images");
    ConfigArgs re_args;
    std::string re_ckpt, re_out = "maps";
    uint64_t re_maze_seed = 7;
    int re_cell_px = 16;
    re->add_option("--ckpt", re_ckpt, "checkpoint file")->required();
    re->add_option("--maze-seed", re_maze_seed, "world seed to render");
    re->add_option("--cell-px", re_cell_px, "pixels per maze cell");
    re->add_option("--out", re_out, "output directory");
    re_args.attach(re);

    // --- gradcheck ---
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    int gc_seeds = 20;
    bool gc_quick = false;
    gc->add_option("--seeds", gc_seeds, "random seeds per op");
    gc->add_flag("--quick", gc_quick, "ops only, skip end-to-end checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the usage message on stderr
        return 2;
    }

    try {
        if (gen->parsed()) {
            const Dataset ds = generate_dataset(gen_count, gen_lattice,
                                                gen_embodied ? Mode::kEmbodied : Mode::kPositional,
                                                gen_seed);
            dataset_save_jsonl(gen_out, ds);
            std::cout << "wrote " << ds.trajectories.size() << " trajectories to " << gen_out
                      << "\n";
            return 0;
        }
        if (tr->parsed()) return run_train(tr_args.resolve(tr), tr_data, tr_out);
        if (ev->parsed()) {
            const MetricsSummary summary =
                run_eval(ev_args.resolve(ev), ev_ckpt, ev_mazes, ev_seeds, ev_seed_base, ev_out);
            std::cout << summary.to_json() << "\n";
            if (ev_min_success >= 0.0 && summary.success_mean < ev_min_success) {
                std::cerr << "success rate " << summary.success_mean << " below required "
                          << ev_min_success << "\n";
                return 1;
            }
            return 0;
        }
        if (ab->parsed()) {
            const TrainConfig base = ab_args.resolve(ab);
            fs::create_directories(ab_out);
            struct Variant {
                const char* name;
                bool use_p, use_a;
            };
            const Variant variants[] = {{"full", true, true},
                                        {"no_loss_a", true, false},
                                        {"no_loss_p", false, true}};
            std::string csv = "variant,success_mean,success_std,collision_violation_rate\n";
            for (const Variant& v : variants) {
                TrainConfig cfg = base;
                cfg.use_loss_p = v.use_p;
                cfg.use_loss_a = v.use_a;
                const std::string dir = ab_out + "/" + v.name;
                run_train(cfg, ab_data, dir);
                const MetricsSummary m = run_eval(cfg, dir + "/checkpoints/best.ckpt", ab_mazes,
                                                  ab_seeds, ab_seed_base, dir);
                char buf[256];
                std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", v.name, m.success_mean,
                              m.success_std, m.collision_violation_rate);
                csv += buf;
                std::cout << v.name << ": success " << m.success_mean << " ± " << m.success_std
                          << "\n";
            }
            write_file(ab_out + "/ablate.csv", csv);
            std::cout << csv;
            return 0;
        }
        if (re->parsed()) {
            const TrainConfig cfg = re_args.resolve(re);
            Model model = load_model(cfg, re_ckpt);
            const Maze maze = make_world(cfg.lattice_n, re_maze_seed);
            for (const std::string& f : render_maps(model, maze, re_out, re_cell_px))
                std::cout << f << "\n";
            return 0;
        }
        if (gc->parsed()) {
            bool ok = true;
            for (const OpCheck& c : run_op_gradient_suite(gc_seeds)) {
                ok = ok && c.ok;
                std::cout << (c.ok ? "pass" : "FAIL") << "  " << c.name
                          << "  worst_abs=" << c.worst_abs_err << "\n";
            }
            if (!gc_quick) {
                for (int s = 0; s < std::min(gc_seeds, 5); ++s) {
                    const GradCheckReport pos = check_calvin_end_to_end(1000 + s, false);
                    const GradCheckReport emb = check_calvin_end_to_end(2000 + s, true);
                    const GradCheckReport lpn = check_lpn_pipeline(3000 + s);
                    ok = ok && pos.ok && emb.ok && lpn.ok;
                    std::cout << (pos.ok ? "pass" : "FAIL") << "  calvin-end-to-end seed "
                              << 1000 + s << "  worst_abs=" << pos.worst_abs_err << "\n";
                    std::cout << (emb.ok ? "pass" : "FAIL") << "  calvin-embodied seed "
                              << 2000 + s << "  worst_abs=" << emb.worst_abs_err << "\n";
                    std::cout << (lpn.ok ? "pass" : "FAIL") << "  lpn-pipeline seed " << 3000 + s
                              << "  worst_abs=" << lpn.worst_abs_err << "\n";
                }
            }
            std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace calvin
