#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace hsflow {

struct ModelConfig {
    int layers = 15;            // L transformer blocks
    int latent = 512;           // d
    int heads = 8;
    int expansion = 3;          // gated MLP hidden = expansion * latent
    int input_features = 15;    // per-node inputs
    int output_features = 3;    // predicted acceleration components
    int mae_decoder_layers = 3; // auxiliary stack for masked pretraining
    int dilated_layer_count = 5;
    double jumper_fraction = 0.20;
    double global_fraction = 0.05;
    bool strict_a2 = false;

    // Desk-scale preset. Global attention stays off here: dilating the
    // augmented base (the documented composition) turns A^2 dense as soon as
    // one node reaches everything, which no desk budget survives.
    static ModelConfig toy() {
        ModelConfig c;
        c.layers = 4;
        c.latent = 64;
        c.heads = 8;
        c.mae_decoder_layers = 2;
        c.dilated_layer_count = 2;
        c.global_fraction = 0.0;
        return c;
    }

    void validate() const;

    AugmentConfig augment_config(uint64_t seed) const {
        AugmentConfig a;
        a.jumper_fraction = jumper_fraction;
        a.global_fraction = global_fraction;
        a.layers = layers;
        a.heads = heads;
        a.dilated_layer_count = dilated_layer_count;
        a.strict_a2 = strict_a2;
        a.seed = seed;
        return a;
    }
};

// Per-feature z-score statistics, fitted on the training corpus and stored in
// checkpoints next to the weights they were trained with.
struct NormStats {
    std::vector<double> in_mean, in_std;    // input_features
    std::vector<double> out_mean, out_std;  // output_features
};

template <typename T>
struct BlockParams {
    Mat<T> w_qkv;
    std::vector<T> b_qkv;
    Mat<T> w_out;
    std::vector<T> b_out;
    GatedMlpParams<T> mlp;
    std::vector<T> gain_attn, gain_mlp;
};

template <typename T>
struct ParamView {
    std::string name;
    T* data = nullptr;
    size_t size = 0;
    std::vector<uint64_t> dims;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    Mat<T> enc_w1;
    std::vector<T> enc_b1;
    Mat<T> enc_w2;
    std::vector<T> enc_b2;
    std::vector<T> enc_gain;
    std::vector<BlockParams<T>> blocks;
    std::vector<T> dec_gain;
    Mat<T> dec_w1;
    std::vector<T> dec_b1;
    Mat<T> dec_w2;
    std::vector<T> dec_b2;
    std::vector<T> masked_token;
    std::vector<BlockParams<T>> mae_blocks;

    void allocate(const ModelConfig& cfg);
    void init(const ModelConfig& cfg, uint64_t seed);  // Xavier-uniform weights
    void zero_all();

    std::vector<ParamView<T>> views();  // stable names, checkpoint order
    size_t scalar_count() const;
};

// Closed-form count of the standalone model (encoder, L blocks, decoder,
// masked token). The MAE decoder stack is pretraining-only and counted
// separately.
uint64_t param_count(const ModelConfig& cfg);
uint64_t mae_param_count(const ModelConfig& cfg);

// ------------------------------------------------------------ mask plumbing

struct HeadMask {
    const Adjacency* adj = nullptr;
    const std::vector<uint64_t>* tperm = nullptr;
};

// Transpose permutations computed once per augmented adjacency.
struct MaskSet {
    const AugmentedAdjacency* aug = nullptr;
    std::vector<uint64_t> tperm_base, tperm_dilated;

    MaskSet() = default;
    explicit MaskSet(const AugmentedAdjacency& a)
        : aug(&a),
          tperm_base(transpose_permutation(a.base)),
          tperm_dilated(transpose_permutation(a.dilated)) {}

    std::vector<HeadMask> layer_masks(int layer) const {
        std::vector<HeadMask> m(aug->heads);
        for (int h = 0; h < aug->heads; ++h) {
            if (aug->dilated_on(layer, h)) {
                m[h] = {&aug->dilated, &tperm_dilated};
            } else {
                m[h] = {&aug->base, &tperm_base};
            }
        }
        return m;
    }
    std::vector<HeadMask> base_masks(int heads) const {
        return std::vector<HeadMask>(size_t(heads), HeadMask{&aug->base, &tperm_base});
    }
};

// ------------------------------------------------------------- activations

template <typename T>
struct BlockContext {
    Mat<T> input;
    Mat<T> qkv;
    std::vector<Mat<T>> q, k, v, head_out;
    std::vector<SparseScores<T>> scores;
    Mat<T> attn_concat, attn_proj, resid1, z1;
    std::vector<T> inv_rms1;
    GatedMlpContext<T> mlp;
    Mat<T> mlp_out, resid2, z2;
    std::vector<T> inv_rms2;
};

template <typename T>
struct TrunkContext {
    Mat<T> input;
    Mat<T> enc_h1, enc_act, enc_pre, z0;
    std::vector<T> enc_inv_rms;
    std::vector<BlockContext<T>> blocks;
    const Mat<T>& latent() const { return blocks.empty() ? z0 : blocks.back().z2; }
};

template <typename T>
struct HeadContext {
    Mat<T> normed, h1, act, output;
    std::vector<T> inv_rms;
};

// Post-norm residual block: Z' = RMSNorm(MMHA(Z) + Z), Z" = RMSNorm(MLP(Z') + Z')
template <typename T>
void process_block_forward(const BlockParams<T>& p, const std::vector<HeadMask>& masks,
                           const Mat<T>& z_in, BlockContext<T>& ctx);

template <typename T>
void process_block_backward(const BlockParams<T>& p, const std::vector<HeadMask>& masks,
                            const BlockContext<T>& ctx, const Mat<T>& dz_out,
                            BlockParams<T>& grad, Mat<T>& dz_in);

// Encoder MLP plus L transformer blocks.
template <typename T>
void trunk_forward(const ModelParams<T>& p, const Mat<T>& x, const MaskSet& masks,
                   TrunkContext<T>& ctx);

template <typename T>
void trunk_backward(const ModelParams<T>& p, const MaskSet& masks, const TrunkContext<T>& ctx,
                    const Mat<T>& d_latent, ModelParams<T>& grad, Mat<T>* dx);

// Decoder MLP mapping the latent back to output_features per node.
template <typename T>
void decode_forward(const ModelParams<T>& p, const Mat<T>& z, HeadContext<T>& ctx);

template <typename T>
void decode_backward(const ModelParams<T>& p, const Mat<T>& z, const HeadContext<T>& ctx,
                     const Mat<T>& d_out, ModelParams<T>& grad, Mat<T>& dz);

// Full standalone pass: encode, process, decode.
template <typename T>
struct ForwardContext {
    TrunkContext<T> trunk;
    HeadContext<T> head;
    const Mat<T>& output() const { return head.output; }
};

template <typename T>
void model_forward(const ModelParams<T>& p, const Mat<T>& x, const MaskSet& masks,
                   ForwardContext<T>& ctx);

template <typename T>
void model_backward(const ModelParams<T>& p, const MaskSet& masks, ForwardContext<T>& ctx,
                    const Mat<T>& d_out, ModelParams<T>& grad, Mat<T>* dx = nullptr);

// --------------------------------------------------------------- MAE pass
// Encoder trunk on the visible subgraph only; hidden latents are the shared
// learnable token; the auxiliary decoder stack runs on the full graph with
// the base mask on all heads; readout through the standalone decoder MLP.

template <typename T>
struct MaeContext {
    MaskResult masking;
    AugmentedAdjacency vis_aug;
    std::unique_ptr<MaskSet> vis_masks;
    Mat<T> vis_input;
    TrunkContext<T> trunk;
    Mat<T> z_full;
    std::vector<BlockContext<T>> mae_blocks;
    HeadContext<T> head;
    const Mat<T>& output() const { return head.output; }
};

template <typename T>
void mae_forward(const ModelParams<T>& p, const Mat<T>& x, const AugmentedAdjacency& aug,
                 const MaskSet& full_masks, double mask_ratio, uint64_t seed,
                 MaeContext<T>& ctx);

template <typename T>
void mae_backward(const ModelParams<T>& p, const MaskSet& full_masks, MaeContext<T>& ctx,
                  const Mat<T>& d_out, ModelParams<T>& grad);

// ------------------------------------------------------------- checkpoint
// HSCKPT binary, magic "HSC1": config JSON (model config, seeds, norm stats,
// step counter), then named f32 blobs. Bit-exact round trip.

struct CheckpointMeta {
    uint64_t init_seed = 0;
    uint64_t trained_steps = 0;
    std::string phase;  // last completed phase name
};

template <typename T>
void save_checkpoint(const std::string& path, ModelParams<T>& params, const NormStats& norm,
                     const CheckpointMeta& meta,
                     std::vector<ParamView<T>> extra_blobs = {});

template <typename T>
struct Checkpoint {
    ModelParams<T> params;
    NormStats norm;
    CheckpointMeta meta;
    // extra blobs (e.g. optimizer moments) keyed by name
    std::vector<std::pair<std::string, std::vector<T>>> extras;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace hsflow
