#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "calvin/checkpoint.hpp"
#include "calvin/eval.hpp"
#include "calvin/expert.hpp"
#include "calvin/gradcheck.hpp"
#include "calvin/maze.hpp"
#include "calvin/planners.hpp"
#include "calvin/training.hpp"

namespace py = pybind11;
using namespace calvin;

namespace {

py::array_t<float> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

Mode mode_arg(bool embodied) { return embodied ? Mode::kEmbodied : Mode::kPositional; }

}  // namespace

PYBIND11_MODULE(_calvin, m) {
    m.doc() = "differentiable maze planners: exact VI, VIN and the constrained planner";

    py::class_<Maze>(m, "Maze")
        .def_property_readonly("height", [](const Maze& z) { return z.height; })
        .def_property_readonly("width", [](const Maze& z) { return z.width; })
        .def_property_readonly("start", [](const Maze& z) {
            return py::make_tuple(z.start.row, z.start.col);
        })
        .def_property_readonly("target", [](const Maze& z) {
            return py::make_tuple(z.target.row, z.target.col);
        })
        .def("ascii", &maze_to_ascii)
        .def("to_json", &maze_to_json)
        .def("occupancy", [](const Maze& z) {
            py::array_t<uint8_t> out({z.height, z.width});
            std::copy(z.grid.begin(), z.grid.end(), out.mutable_data());
            return out;
        });

    m.def("make_world", &make_world, py::arg("lattice_n"), py::arg("seed"),
          "Wilson maze with a start/target pair at experiment distance");
    m.def("maze_from_json", &maze_from_json);

    m.def(
        "expert_actions",
        [](const Maze& maze, bool embodied, uint64_t seed) {
            return make_trajectory(maze, mode_arg(embodied), seed).actions;
        },
        py::arg("maze"), py::arg("embodied") = false, py::arg("seed") = 0,
        "Shortest-path expert action sequence ending in the done action");

    m.def(
        "vi_values",
        [](const Maze& maze, bool embodied, float gamma, int iterations) {
            MazeMdpOptions opt;
            opt.gamma = gamma;
            const ExactMdp mdp = maze_mdp(maze, mode_arg(embodied), opt);
            const ViResult vi = vi_exact(mdp, iterations);
            return py::make_tuple(tensor_to_array(vi.v), vi.policy);
        },
        py::arg("maze"), py::arg("embodied") = false, py::arg("gamma") = 0.99f,
        py::arg("iterations") = 150, "Exact value iteration: (values, greedy policy)");

    m.def(
        "calvin_oracle_values",
        [](const Maze& maze, bool embodied, float gamma, int iterations) {
            const Mode mode = mode_arg(embodied);
            Graph g;
            Val avail = g.input(gt_availability(maze, mode));
            Val p = g.input(gt_motion_model(mode, 3));
            Val reward = calvin_reward(g, avail, p,
                                       g.input(gt_reward_kernel(mode, 3, 1.0f, false)),
                                       g.input(Tensor::scalar(0.0f)));
            const CalvinViOut out =
                calvin_value_iteration(g, avail, p, reward, iterations, nullptr, gamma,
                                       done_action(mode), maze.height, maze.width);
            return tensor_to_array(out.v.value());
        },
        py::arg("maze"), py::arg("embodied") = false, py::arg("gamma") = 0.99f,
        py::arg("iterations") = 150,
        "Constrained-planner values under ground-truth availability/motion/reward");

    m.def(
        "gradcheck_ops",
        [](int seeds) {
            bool ok = true;
            for (const OpCheck& c : run_op_gradient_suite(seeds)) ok = ok && c.ok;
            return ok;
        },
        py::arg("seeds") = 3, "Finite-difference check of every differentiable op");

    m.def(
        "rollout_outcome",
        [](const Maze& maze, const std::string& planner, const std::string& obs, int k,
           int max_steps, uint64_t seed) {
            TrainConfig cfg;
            cfg.planner = planner_kind_from_string(planner);
            cfg.obs = obs_kind_from_string(obs);
            cfg.k = k;
            cfg.hidden_width = 16;
            cfg.lattice_n = maze.lattice_n;
            cfg.seed = seed;
            Model model = Model::init(cfg);
            const RolloutResult r = rollout(model, maze, max_steps, seed);
            return py::make_tuple(to_string(r.outcome), r.steps, r.collisions);
        },
        py::arg("maze"), py::arg("planner") = "calvin", py::arg("obs") = "partial",
        py::arg("k") = 20, py::arg("max_steps") = 100, py::arg("seed") = 0,
        "Live rollout of a freshly initialized planner (outcome, steps, collisions)");

    m.def(
        "checkpoint_roundtrip",
        [](const std::string& path) {
            std::map<std::string, Tensor> params;
            params.emplace("probe.a", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
            params.emplace("probe.b", Tensor::scalar(-2.5f));
            checkpoint_save(path, params);
            const auto loaded = checkpoint_load(path);
            return loaded.size() == params.size() &&
                   loaded.at("probe.a").vec() == params.at("probe.a").vec() &&
                   loaded.at("probe.b").vec() == params.at("probe.b").vec();
        },
        py::arg("path"), "Write and re-read a checkpoint, verifying bit-exact contents");
}
