#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "calvin/adam.hpp"
#include "calvin/expert.hpp"
#include "calvin/graph.hpp"
#include "calvin/lpn.hpp"
#include "calvin/planners.hpp"

namespace calvin {

enum class PlannerKind { kCalvin, kVin };
enum class ObsKind { kFull, kPartial, kLpn };

std::string to_string(PlannerKind k);
std::string to_string(ObsKind o);
std::string to_string(Mode m);
PlannerKind planner_kind_from_string(const std::string& s);
ObsKind obs_kind_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
    PlannerKind planner = PlannerKind::kCalvin;
    ObsKind obs = ObsKind::kFull;
    Mode mode = Mode::kPositional;
    int lattice_n = 7;

    float lr = 0.005f;  // paper grid {0.01, 0.005, 0.001}
    float beta = 0.25f; // 1.0 = standard unweighted loss
    int k = 60;         // VI iterations, paper grid {20,40,60,80,100}
    int kernel = 3;
    int hidden_width = 150; // availability / reward CNN, grid {40, 80, 150}
    int hidden_actions = 40; // VIN hidden action channels
    int epochs = 30;
    int batch = 32;
    uint64_t seed = 1;
    float gamma = 0.99f;
    float cap_factor = 4.0f; // sample cap = cap_factor·|T| in partial mode
    float val_frac = 0.1f;
    int val_rollouts = 50;
    int patience = 5; // early stop after this many epochs without val improvement; 0 = off
    bool use_loss_p = true;
    bool use_loss_a = true;
    int max_rollout_steps = 0; // 0 = default by observability (200 full, 500 partial)
    int lpn_emb = 8;
    int lpn_hidden = 16;
    ScanConfig scan;

    int rollout_steps() const {
        if (max_rollout_steps > 0) return max_rollout_steps;
        return obs == ObsKind::kFull ? 200 : 500;
    }
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// A planner plus (for LPN observability) the map head, with everything needed
// to rebuild the forward pass.
struct Model {
    TrainConfig cfg;
    CalvinParams calvin;
    VinParams vin;
    LpnParams lpn;

    static Model init(const TrainConfig& cfg);
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::map<std::string, Tensor> param_map();
    // Throws on missing names or shape mismatches, naming the offender.
    void load_params(const std::map<std::string, Tensor>& params);
};

// Planner input for one observation snapshot. Oracle modes fill `obs`; LPN
// mode fills `pooled` + `mask`.
struct SnapshotInput {
    Tensor obs;
    Tensor pooled;
    Tensor mask;
};

struct ModelRun {
    Val q;        // action logits/values A×M×H×W
    Val v;        // M×H×W value map for warm starts
    Val a_valid;  // CALVIN availability logits (invalid handle for VIN)
    Val avail;
    Val reward;   // CALVIN R(s,a); VIN predicted reward map
    Val p_logits; // CALVIN motion-model leaf
    std::vector<std::pair<std::string, Val>> leaves;
};

// Registers leaves and builds the forward pass for the model's planner on one
// snapshot.
ModelRun run_model(Graph& g, Model& model, const SnapshotInput& in, int k,
                   const Tensor* v_init);

struct LossReport {
    double l_q = 0.0;
    double l_p = 0.0;
    double l_a = 0.0;
    size_t samples = 0;
    double total() const { return l_q + l_p + l_a; }
};

struct EpochRecord {
    int epoch = 0;
    LossReport train;
    double val_loss = 0.0;
    double val_success = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    std::map<std::string, Tensor> best_params;
    Model final_model;
    std::map<std::string, Tensor> final_state; // params + optimizer + counters
};

std::string metrics_csv(const std::vector<EpochRecord>& history);

// Step-resumable trainer. Batches are a pure function of (seed, epoch), so a
// state snapshot at any batch boundary resumes bit-identically.
class Trainer {
  public:
    Trainer(const TrainConfig& cfg, const Dataset& dataset);

    // Runs `n` optimizer steps, crossing epoch boundaries as needed.
    void run_steps(int n);
    // Runs the remainder of the current epoch; returns its loss report.
    LossReport run_epoch();

    double validation_loss();
    double validation_success();

    int epoch() const { return epoch_; }
    int batch_index() const { return batch_in_epoch_; }
    Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    size_t train_trajectories() const { return train_refs_.size(); }
    size_t val_trajectories() const { return val_refs_.size(); }

    std::map<std::string, Tensor> full_state();
    void load_full_state(const std::map<std::string, Tensor>& state);

    // Aggregated losses of steps taken in the current epoch so far.
    const LossReport& epoch_report() const { return epoch_report_; }

  private:
    struct Group { // samples sharing one observation snapshot
        int traj = 0;
        int t_obs = 0;
        std::vector<TrainingSample> samples;
    };
    struct Batch {
        std::vector<int> group_ids;
        size_t n_samples = 0, n_a = 0, n_p = 0;
    };

    void build_snapshots(const Dataset& dataset);
    std::vector<Group> make_groups(const std::vector<int>& refs) const;
    std::vector<Batch> plan_epoch(int epoch) const;
    struct GroupGrad {
        std::map<std::string, Tensor> grads;
        double q_sum = 0.0, p_sum = 0.0, a_sum = 0.0;
    };
    GroupGrad process_group(const Group& group, size_t n_samples, size_t n_a, size_t n_p,
                            bool compute_grads);
    SnapshotInput snapshot_input(int traj, int t_obs) const;
    void count_loss_terms(const Group& g, size_t* n_a, size_t* n_p) const;

    TrainConfig cfg_;
    Model model_;
    Adam adam_;
    std::vector<Trajectory> trajectories_;
    std::vector<int> train_refs_, val_refs_;
    std::vector<Group> groups_;     // training sample groups
    std::vector<Group> val_groups_; // validation sample groups
    std::vector<std::vector<RevealedSet>> revealed_;         // per traj per t (partial)
    std::vector<Tensor> full_obs_;                           // per traj (full mode)
    std::vector<std::vector<Tensor>> lpn_pooled_, lpn_mask_; // per traj per t
    std::vector<Batch> epoch_plan_;
    int epoch_ = 0;
    int batch_in_epoch_ = 0;
    LossReport epoch_report_;
    double epoch_q_sum_ = 0.0, epoch_p_sum_ = 0.0, epoch_a_sum_ = 0.0;
    size_t epoch_n_ = 0, epoch_na_ = 0, epoch_np_ = 0;
};

// Epoch loop with per-epoch validation, min-validation checkpoint selection
// and optional early stopping. Fully deterministic given the config seed.
TrainResult train(const TrainConfig& cfg, const Dataset& dataset, std::ostream* log = nullptr);

}  // namespace calvin
