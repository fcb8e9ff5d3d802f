#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "calvin/graph.hpp"
#include "calvin/tensor.hpp"

namespace calvin {

// Builds a scalar loss from a graph whose leaves were registered (in name
// order) from the given parameter set.
using LossBuilder =
    std::function<Val(Graph&, const std::map<std::string, Val>&)>;

struct GradCheckReport {
    bool ok = true;
    double worst_abs_err = 0.0;
    double worst_rel_err = 0.0;
    std::string worst_at; // "param[coord]"
    int coords_checked = 0;
};

// Central finite differences at perturbation h against reverse-mode
// gradients; a coordinate passes when |ad - fd| <= max(tol_abs, tol_rel*|fd|).
// max_coords_per_param < 0 checks every coordinate, otherwise a seeded random
// subset per parameter.
GradCheckReport check_gradients(const LossBuilder& build,
                                const std::map<std::string, Tensor>& params,
                                double h = 1e-3, double tol_abs = 1e-3, double tol_rel = 1e-3,
                                int max_coords_per_param = -1, uint64_t coord_seed = 0);

struct OpCheck {
    std::string name;
    bool ok;
    double worst_abs_err;
    double worst_rel_err;
};

// Per-op finite-difference suite over random inputs, `seeds` seeds each.
std::vector<OpCheck> run_op_gradient_suite(int seeds);

// End-to-end CALVIN imitation loss on a small maze, all parameter groups.
GradCheckReport check_calvin_end_to_end(uint64_t seed, bool embodied);

// LPN map encoder + CALVIN pipeline gradient check on a small maze.
GradCheckReport check_lpn_pipeline(uint64_t seed);

}  // namespace calvin
