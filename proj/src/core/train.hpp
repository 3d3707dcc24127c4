#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/rollout.hpp"
#include "core/rng.hpp"

namespace hsflow {

// ----------------------------------------------------------------- phases

struct PhaseSpec {
    std::string name = "phase";
    bool coarse = false;   // which resolution of the corpus to draw from
    bool masked = false;   // route through the masked-autoencoder path
    bool decoder_only = false;  // freeze everything but the decoder MLP
    uint64_t steps = 0;
    double lr_max = 1e-4;
    double lr_min = 1e-7;
    int batch_size = 2;
    std::array<double, 3> noise_sigma{10.0, 10.0, 1.0};  // mm/s, per axis
    double mask_ratio = 0.5;

    void validate() const;
};

// The five-phase curriculum at published step counts: masked coarse, coarse
// with the pretrained trunk frozen, fine, then coarse/fine fine-tuning at a
// lower learning rate. `scale` divides every step count for desk-scale runs.
std::vector<PhaseSpec> default_schedule(double scale = 1.0);

// ----------------------------------------------------------------- corpus

struct TrainCase {
    Mesh mesh;
    Waveform waveform;
    Trajectory traj;
    std::vector<uint64_t> bulge_nodes;
    Adjacency adj;
    AugmentedAdjacency aug;
    MaskSet masks;
    std::vector<FeatureFrame> frames;      // one per transition start
    std::vector<Mat<double>> next_velocity;  // u_{t+1} per transition

    // builds adjacency, augmented masks and the cached frames
    void prepare(const ModelConfig& cfg, uint64_t aug_seed);
    size_t transitions() const { return frames.size(); }
};

struct Corpus {
    std::vector<std::unique_ptr<TrainCase>> fine, coarse;

    std::vector<TrainCase*> select(bool want_coarse) const {
        std::vector<TrainCase*> out;
        const auto& src = want_coarse && !coarse.empty() ? coarse : fine;
        for (const auto& c : src) out.push_back(c.get());
        return out;
    }
};

// ------------------------------------------------------------ normalization

// Per-feature z-score statistics over every cached frame and clean target of
// the given cases. Population convention, std floored at 1e-8.
NormStats fit_norm_stats(const std::vector<const TrainCase*>& cases);

// Same statistics straight from feature/target matrices.
NormStats fit_norm_stats_from(const std::vector<const Mat<double>*>& inputs,
                              const std::vector<const Mat<double>*>& outputs);

// ---------------------------------------------------------------- noise

// Adds independent zero-mean Gaussian noise with per-axis sigma to the
// velocity and acceleration features only. Deterministic given the seed.
FeatureFrame add_noise(const FeatureFrame& frame, const std::array<double, 3>& sigma,
                       uint64_t seed);

// --------------------------------------------------------------- optimizer

// One flat AdamW update with decoupled weight decay and bias correction.
// `step` is the 1-based step count after this update.
template <typename T>
void adamw_step(T* theta, const T* grad, T* m, T* v, size_t n, uint64_t step, double lr,
                double beta1 = 0.9, double beta2 = 0.95, double weight_decay = 1e-4,
                double eps = 1e-8);

template <typename T>
struct AdamW {
    double beta1 = 0.9, beta2 = 0.95, weight_decay = 1e-4, eps = 1e-8;
    uint64_t step = 0;
    ModelParams<T> m, v;

    void init(const ModelConfig& cfg) {
        m.allocate(cfg);
        m.zero_all();
        v.allocate(cfg);
        v.zero_all();
    }
    // decoder_only freezes every block whose name does not start with "dec."
    void apply(ModelParams<T>& params, ModelParams<T>& grads, double lr, bool decoder_only);
};

double cosine_lr(uint64_t step, uint64_t total_steps, double lr_max, double lr_min);

// --------------------------------------------------------------- training

struct StepLog {
    uint64_t step = 0;
    std::string phase;
    double lr = 0.0;
    double loss = 0.0;
};

struct PhaseResult {
    std::vector<StepLog> log;
    double first_loss = 0.0;
    double final_loss = 0.0;
};

// Runs `phase.steps` gradient descents with cosine-decayed learning rate.
// Masked phases route through mae_forward. A NaN loss dumps a diagnostic
// snapshot (when snapshot_path is non-empty) and aborts.
template <typename T>
PhaseResult run_phase(ModelParams<T>& params, AdamW<T>& opt, const PhaseSpec& phase,
                      const std::vector<TrainCase*>& cases, const NormStats& norm, Rng& rng,
                      const std::string& snapshot_path = "");

// ----------------------------------------------------------- sub-meshes

struct SubmeshStrategy {
    enum class Kind { partition, neighbor };
    Kind kind = Kind::partition;
    size_t parts = 4;         // partition count
    size_t edge_budget = 0;   // neighbor sampling budget
    uint64_t seed = 0;
};

// One macro-step: one optimizer step per sub-mesh, in deterministic part
// order. Returns the mean loss across sub-steps.
template <typename T>
double submesh_gradient_step(ModelParams<T>& params, AdamW<T>& opt, const TrainCase& cs,
                             size_t transition, const NormStats& norm,
                             const SubmeshStrategy& strategy, const PhaseSpec& phase,
                             Rng& rng);

// ------------------------------------------------------------ scaling laws

// Training-compute convention C = 6 P D with D in processed node-steps.
double flops_estimate(const ModelConfig& cfg, double nodes_processed);

struct ScalingFit {
    double exponent = 0.0;     // a in P = b C^a
    double coefficient = 0.0;  // b
    double r_squared = 0.0;
};

// Least squares of log P against log C.
ScalingFit fit_scaling_law(const std::vector<std::pair<double, double>>& budget_params);

struct SweepRecord {
    double budget = 0.0;
    uint64_t param_count = 0;
    uint64_t steps = 0;
    double all_rollout = 0.0;
    bool skipped = false;
};

struct SweepResult {
    std::vector<SweepRecord> records;
    // index into `records` of the best run per budget, -1 when all skipped
    std::vector<int> argmin_per_budget;
};

// Trains every grid model once per budget for steps = C / (6 P batch_nodes)
// and records the final all-rollout error. Models whose budget is below one
// step are skipped with a warning record.
SweepResult isoflops_sweep(const std::vector<double>& budgets,
                           const std::vector<ModelConfig>& grid, TrainCase& toy_case,
                           const PhaseSpec& base_phase, uint64_t seed);

}  // namespace hsflow
