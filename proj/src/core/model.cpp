#include "core/model.hpp"

#include <json.hpp>

#include "core/binio.hpp"
#include "core/rng.hpp"

namespace hsflow {

using json = nlohmann::json;

void ModelConfig::validate() const {
    if (layers < 0 || latent <= 0 || heads <= 0 || expansion <= 0) {
        throw Error::usage("model config: non-positive dimension");
    }
    if (latent % heads != 0) throw Error::usage("model config: latent must divide by heads");
    if (heads % 2 != 0) throw Error::usage("model config: head count must be even");
    if (input_features <= 0 || output_features <= 0) {
        throw Error::usage("model config: feature widths must be positive");
    }
    if (mae_decoder_layers < 0) throw Error::usage("model config: negative MAE depth");
}

namespace {

template <typename T>
void allocate_block(BlockParams<T>& b, int d, int e) {
    b.w_qkv = Mat<T>(d, 3 * d);
    b.b_qkv.assign(3 * d, T(0));
    b.w_out = Mat<T>(d, d);
    b.b_out.assign(d, T(0));
    b.mlp.wl = Mat<T>(d, e * d);
    b.mlp.bl.assign(e * d, T(0));
    b.mlp.wr = Mat<T>(d, e * d);
    b.mlp.br.assign(e * d, T(0));
    b.mlp.wf = Mat<T>(e * d, d);
    b.mlp.bf.assign(d, T(0));
    b.gain_attn.assign(d, T(1));
    b.gain_mlp.assign(d, T(1));
}

template <typename T>
void xavier_init(Mat<T>& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / double(w.rows + w.cols));
    for (auto& v : w.data) v = T((2.0 * rng.next_unit() - 1.0) * limit);
}

template <typename T>
void add_into(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
    if (out.rows != a.rows || out.cols != a.cols) out = Mat<T>(a.rows, a.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
}

}  // namespace

template <typename T>
void ModelParams<T>::allocate(const ModelConfig& cfg) {
    cfg.validate();
    config = cfg;
    const int d = cfg.latent, e = cfg.expansion;
    enc_w1 = Mat<T>(cfg.input_features, d);
    enc_b1.assign(d, T(0));
    enc_w2 = Mat<T>(d, d);
    enc_b2.assign(d, T(0));
    enc_gain.assign(d, T(1));
    blocks.resize(cfg.layers);
    for (auto& b : blocks) allocate_block(b, d, e);
    dec_gain.assign(d, T(1));
    dec_w1 = Mat<T>(d, d);
    dec_b1.assign(d, T(0));
    dec_w2 = Mat<T>(d, cfg.output_features);
    dec_b2.assign(cfg.output_features, T(0));
    masked_token.assign(d, T(0));
    mae_blocks.resize(cfg.mae_decoder_layers);
    for (auto& b : mae_blocks) allocate_block(b, d, e);
}

template <typename T>
void ModelParams<T>::init(const ModelConfig& cfg, uint64_t seed) {
    allocate(cfg);
    Rng rng(seed);
    xavier_init(enc_w1, rng);
    xavier_init(enc_w2, rng);
    for (auto& b : blocks) {
        xavier_init(b.w_qkv, rng);
        xavier_init(b.w_out, rng);
        xavier_init(b.mlp.wl, rng);
        xavier_init(b.mlp.wr, rng);
        xavier_init(b.mlp.wf, rng);
    }
    xavier_init(dec_w1, rng);
    xavier_init(dec_w2, rng);
    for (auto& v : masked_token) v = T(0.02 * rng.next_normal());
    for (auto& b : mae_blocks) {
        xavier_init(b.w_qkv, rng);
        xavier_init(b.w_out, rng);
        xavier_init(b.mlp.wl, rng);
        xavier_init(b.mlp.wr, rng);
        xavier_init(b.mlp.wf, rng);
    }
}

template <typename T>
void ModelParams<T>::zero_all() {
    for (auto& v : views()) std::fill(v.data, v.data + v.size, T(0));
}

template <typename T>
std::vector<ParamView<T>> ModelParams<T>::views() {
    std::vector<ParamView<T>> out;
    auto push_mat = [&](const std::string& name, Mat<T>& m) {
        out.push_back({name, m.data.data(), m.size(), {m.rows, m.cols}});
    };
    auto push_vec = [&](const std::string& name, std::vector<T>& v) {
        out.push_back({name, v.data(), v.size(), {v.size()}});
    };
    auto push_block = [&](const std::string& prefix, BlockParams<T>& b) {
        push_mat(prefix + ".w_qkv", b.w_qkv);
        push_vec(prefix + ".b_qkv", b.b_qkv);
        push_mat(prefix + ".w_out", b.w_out);
        push_vec(prefix + ".b_out", b.b_out);
        push_mat(prefix + ".mlp.wl", b.mlp.wl);
        push_vec(prefix + ".mlp.bl", b.mlp.bl);
        push_mat(prefix + ".mlp.wr", b.mlp.wr);
        push_vec(prefix + ".mlp.br", b.mlp.br);
        push_mat(prefix + ".mlp.wf", b.mlp.wf);
        push_vec(prefix + ".mlp.bf", b.mlp.bf);
        push_vec(prefix + ".gain_attn", b.gain_attn);
        push_vec(prefix + ".gain_mlp", b.gain_mlp);
    };
    push_mat("enc.w1", enc_w1);
    push_vec("enc.b1", enc_b1);
    push_mat("enc.w2", enc_w2);
    push_vec("enc.b2", enc_b2);
    push_vec("enc.gain", enc_gain);
    for (size_t l = 0; l < blocks.size(); ++l) {
        push_block("block" + std::to_string(l), blocks[l]);
    }
    push_vec("dec.gain", dec_gain);
    push_mat("dec.w1", dec_w1);
    push_vec("dec.b1", dec_b1);
    push_mat("dec.w2", dec_w2);
    push_vec("dec.b2", dec_b2);
    push_vec("masked_token", masked_token);
    for (size_t l = 0; l < mae_blocks.size(); ++l) {
        push_block("mae" + std::to_string(l), mae_blocks[l]);
    }
    return out;
}

template <typename T>
size_t ModelParams<T>::scalar_count() const {
    size_t total = 0;
    auto* self = const_cast<ModelParams<T>*>(this);
    for (const auto& v : self->views()) total += v.size;
    return total;
}

uint64_t param_count(const ModelConfig& cfg) {
    const uint64_t d = cfg.latent, e = cfg.expansion;
    const uint64_t p_in = cfg.input_features, p_out = cfg.output_features;
    const uint64_t enc = p_in * d + d + d * d + d + d;
    const uint64_t block = (d * 3 * d + 3 * d) + (d * d + d) +
                           2 * (d * e * d + e * d) + (e * d * d + d) + 2 * d;
    const uint64_t dec = d + d * d + d + d * p_out + p_out;
    return enc + uint64_t(cfg.layers) * block + dec + d;
}

uint64_t mae_param_count(const ModelConfig& cfg) {
    const uint64_t d = cfg.latent, e = cfg.expansion;
    const uint64_t block = (d * 3 * d + 3 * d) + (d * d + d) +
                           2 * (d * e * d + e * d) + (e * d * d + d) + 2 * d;
    return uint64_t(cfg.mae_decoder_layers) * block;
}

// ----------------------------------------------------------------- blocks

template <typename T>
void process_block_forward(const BlockParams<T>& p, const std::vector<HeadMask>& masks,
                           const Mat<T>& z_in, BlockContext<T>& ctx) {
    const size_t n = z_in.rows, d = z_in.cols;
    const size_t heads = masks.size();
    const size_t dh = d / heads;
    ctx.input = z_in;

    linear_forward(z_in, p.w_qkv, p.b_qkv, ctx.qkv);
    ctx.q.resize(heads);
    ctx.k.resize(heads);
    ctx.v.resize(heads);
    ctx.head_out.resize(heads);
    ctx.scores.resize(heads);
    if (ctx.attn_concat.rows != n || ctx.attn_concat.cols != d) {
        ctx.attn_concat = Mat<T>(n, d);
    }
    for (size_t h = 0; h < heads; ++h) {
        auto& q = ctx.q[h];
        auto& k = ctx.k[h];
        auto& v = ctx.v[h];
        if (q.rows != n || q.cols != dh) {
            q = Mat<T>(n, dh);
            k = Mat<T>(n, dh);
            v = Mat<T>(n, dh);
        }
#pragma omp parallel for schedule(static)
        for (size_t i = 0; i < n; ++i) {
            const T* row = ctx.qkv.row_ptr(i);
            for (size_t c = 0; c < dh; ++c) {
                q.at(i, c) = row[h * dh + c];
                k.at(i, c) = row[d + h * dh + c];
                v.at(i, c) = row[2 * d + h * dh + c];
            }
        }
        sparse_attention_forward(q, k, v, *masks[h].adj, ctx.scores[h], ctx.head_out[h]);
#pragma omp parallel for schedule(static)
        for (size_t i = 0; i < n; ++i) {
            const T* src = ctx.head_out[h].row_ptr(i);
            T* dst = ctx.attn_concat.row_ptr(i);
            for (size_t c = 0; c < dh; ++c) dst[h * dh + c] = src[c];
        }
    }

    linear_forward(ctx.attn_concat, p.w_out, p.b_out, ctx.attn_proj);
    add_into(ctx.attn_proj, ctx.input, ctx.resid1);
    rmsnorm_forward(ctx.resid1, p.gain_attn, ctx.z1, ctx.inv_rms1);
    gated_mlp_forward(ctx.z1, p.mlp, ctx.mlp, ctx.mlp_out);
    add_into(ctx.mlp_out, ctx.z1, ctx.resid2);
    rmsnorm_forward(ctx.resid2, p.gain_mlp, ctx.z2, ctx.inv_rms2);
}

template <typename T>
void process_block_backward(const BlockParams<T>& p, const std::vector<HeadMask>& masks,
                            const BlockContext<T>& ctx, const Mat<T>& dz_out,
                            BlockParams<T>& grad, Mat<T>& dz_in) {
    const size_t n = ctx.input.rows, d = ctx.input.cols;
    const size_t heads = masks.size();
    const size_t dh = d / heads;

    Mat<T> dresid2;
    rmsnorm_backward(ctx.resid2, p.gain_mlp, ctx.inv_rms2, dz_out, dresid2, grad.gain_mlp);

    // resid2 = mlp_out + z1
    Mat<T> dz1_from_mlp;
    gated_mlp_backward(ctx.z1, p.mlp, ctx.mlp, dresid2, dz1_from_mlp, grad.mlp);
    Mat<T> dz1;
    add_into(dz1_from_mlp, dresid2, dz1);

    Mat<T> dresid1;
    rmsnorm_backward(ctx.resid1, p.gain_attn, ctx.inv_rms1, dz1, dresid1, grad.gain_attn);

    // resid1 = attn_proj + input
    Mat<T> dattn_concat;
    linear_backward(ctx.attn_concat, p.w_out, dresid1, &dattn_concat, grad.w_out, grad.b_out);

    Mat<T> dqkv(n, 3 * d);
    for (size_t h = 0; h < heads; ++h) {
        Mat<T> dhead(n, dh);
#pragma omp parallel for schedule(static)
        for (size_t i = 0; i < n; ++i) {
            const T* src = dattn_concat.row_ptr(i);
            T* dst = dhead.row_ptr(i);
            for (size_t c = 0; c < dh; ++c) dst[c] = src[h * dh + c];
        }
        Mat<T> dq(n, dh), dk(n, dh), dv(n, dh);
        sparse_attention_backward(ctx.q[h], ctx.k[h], ctx.v[h], ctx.scores[h],
                                  *masks[h].tperm, dhead, dq, dk, dv);
#pragma omp parallel for schedule(static)
        for (size_t i = 0; i < n; ++i) {
            T* row = dqkv.row_ptr(i);
            for (size_t c = 0; c < dh; ++c) {
                row[h * dh + c] = dq.at(i, c);
                row[d + h * dh + c] = dk.at(i, c);
                row[2 * d + h * dh + c] = dv.at(i, c);
            }
        }
    }

    Mat<T> dinput_from_qkv;
    linear_backward(ctx.input, p.w_qkv, dqkv, &dinput_from_qkv, grad.w_qkv, grad.b_qkv);
    add_into(dinput_from_qkv, dresid1, dz_in);
}

template <typename T>
void trunk_forward(const ModelParams<T>& p, const Mat<T>& x, const MaskSet& masks,
                   TrunkContext<T>& ctx) {
    check_shape(int(x.cols) == p.config.input_features, "trunk input width");
    if (!p.blocks.empty()) {
        check_shape(masks.aug != nullptr && masks.aug->heads == p.config.heads &&
                        masks.aug->layers >= p.config.layers,
                    "trunk mask bundle");
    }
    ctx.input = x;
    linear_forward(x, p.enc_w1, p.enc_b1, ctx.enc_h1);
    relu_forward(ctx.enc_h1, ctx.enc_act);
    linear_forward(ctx.enc_act, p.enc_w2, p.enc_b2, ctx.enc_pre);
    rmsnorm_forward(ctx.enc_pre, p.enc_gain, ctx.z0, ctx.enc_inv_rms);

    ctx.blocks.resize(p.blocks.size());
    const Mat<T>* z = &ctx.z0;
    for (size_t l = 0; l < p.blocks.size(); ++l) {
        process_block_forward(p.blocks[l], masks.layer_masks(int(l)), *z, ctx.blocks[l]);
        z = &ctx.blocks[l].z2;
    }
}

template <typename T>
void trunk_backward(const ModelParams<T>& p, const MaskSet& masks, const TrunkContext<T>& ctx,
                    const Mat<T>& d_latent, ModelParams<T>& grad, Mat<T>* dx) {
    Mat<T> dz = d_latent;
    for (size_t l = p.blocks.size(); l-- > 0;) {
        Mat<T> dz_in;
        process_block_backward(p.blocks[l], masks.layer_masks(int(l)), ctx.blocks[l], dz,
                               grad.blocks[l], dz_in);
        dz = std::move(dz_in);
    }
    Mat<T> denc_pre;
    rmsnorm_backward(ctx.enc_pre, p.enc_gain, ctx.enc_inv_rms, dz, denc_pre, grad.enc_gain);
    Mat<T> denc_act;
    linear_backward(ctx.enc_act, p.enc_w2, denc_pre, &denc_act, grad.enc_w2, grad.enc_b2);
    Mat<T> denc_h1;
    relu_backward(ctx.enc_h1, denc_act, denc_h1);
    linear_backward(ctx.input, p.enc_w1, denc_h1, dx, grad.enc_w1, grad.enc_b1);
}

template <typename T>
void decode_forward(const ModelParams<T>& p, const Mat<T>& z, HeadContext<T>& ctx) {
    rmsnorm_forward(z, p.dec_gain, ctx.normed, ctx.inv_rms);
    linear_forward(ctx.normed, p.dec_w1, p.dec_b1, ctx.h1);
    relu_forward(ctx.h1, ctx.act);
    linear_forward(ctx.act, p.dec_w2, p.dec_b2, ctx.output);
}

template <typename T>
void decode_backward(const ModelParams<T>& p, const Mat<T>& z, const HeadContext<T>& ctx,
                     const Mat<T>& d_out, ModelParams<T>& grad, Mat<T>& dz) {
    Mat<T> dact;
    linear_backward(ctx.act, p.dec_w2, d_out, &dact, grad.dec_w2, grad.dec_b2);
    Mat<T> dh1;
    relu_backward(ctx.h1, dact, dh1);
    Mat<T> dnormed;
    linear_backward(ctx.normed, p.dec_w1, dh1, &dnormed, grad.dec_w1, grad.dec_b1);
    rmsnorm_backward(z, p.dec_gain, ctx.inv_rms, dnormed, dz, grad.dec_gain);
}

template <typename T>
void model_forward(const ModelParams<T>& p, const Mat<T>& x, const MaskSet& masks,
                   ForwardContext<T>& ctx) {
    trunk_forward(p, x, masks, ctx.trunk);
    decode_forward(p, ctx.trunk.latent(), ctx.head);
}

template <typename T>
void model_backward(const ModelParams<T>& p, const MaskSet& masks, ForwardContext<T>& ctx,
                    const Mat<T>& d_out, ModelParams<T>& grad, Mat<T>* dx) {
    Mat<T> dz;
    decode_backward(p, ctx.trunk.latent(), ctx.head, d_out, grad, dz);
    trunk_backward(p, masks, ctx.trunk, dz, grad, dx);
}

// ------------------------------------------------------------------- MAE

template <typename T>
void mae_forward(const ModelParams<T>& p, const Mat<T>& x, const AugmentedAdjacency& aug,
                 const MaskSet& full_masks, double mask_ratio, uint64_t seed,
                 MaeContext<T>& ctx) {
    const size_t n = x.rows;
    const size_t d = p.config.latent;
    ctx.masking = mask_nodes(aug.base, mask_ratio, seed);
    ctx.vis_aug = restrict_augmented(aug, ctx.masking.visible_nodes);
    ctx.vis_masks = std::make_unique<MaskSet>(ctx.vis_aug);

    const auto& vis = ctx.masking.visible_nodes;
    ctx.vis_input = Mat<T>(vis.size(), x.cols);
    for (size_t i = 0; i < vis.size(); ++i) {
        const T* src = x.row_ptr(vis[i]);
        std::copy(src, src + x.cols, ctx.vis_input.row_ptr(i));
    }

    trunk_forward(p, ctx.vis_input, *ctx.vis_masks, ctx.trunk);

    // hidden positions carry the shared learnable token; hidden edges come
    // back through the full-graph masks below
    ctx.z_full = Mat<T>(n, d);
    for (size_t i = 0; i < n; ++i) {
        std::copy(p.masked_token.begin(), p.masked_token.end(), ctx.z_full.row_ptr(i));
    }
    const Mat<T>& z_vis = ctx.trunk.latent();
    for (size_t i = 0; i < vis.size(); ++i) {
        const T* src = z_vis.row_ptr(i);
        std::copy(src, src + d, ctx.z_full.row_ptr(vis[i]));
    }

    const auto base_masks = full_masks.base_masks(p.config.heads);
    ctx.mae_blocks.resize(p.mae_blocks.size());
    const Mat<T>* z = &ctx.z_full;
    for (size_t l = 0; l < p.mae_blocks.size(); ++l) {
        process_block_forward(p.mae_blocks[l], base_masks, *z, ctx.mae_blocks[l]);
        z = &ctx.mae_blocks[l].z2;
    }
    decode_forward(p, *z, ctx.head);
}

template <typename T>
void mae_backward(const ModelParams<T>& p, const MaskSet& full_masks, MaeContext<T>& ctx,
                  const Mat<T>& d_out, ModelParams<T>& grad) {
    const size_t d = p.config.latent;
    const Mat<T>& z_last =
        p.mae_blocks.empty() ? ctx.z_full : ctx.mae_blocks.back().z2;
    Mat<T> dz;
    decode_backward(p, z_last, ctx.head, d_out, grad, dz);

    const auto base_masks = full_masks.base_masks(p.config.heads);
    for (size_t l = p.mae_blocks.size(); l-- > 0;) {
        Mat<T> dz_in;
        process_block_backward(p.mae_blocks[l], base_masks, ctx.mae_blocks[l], dz,
                               grad.mae_blocks[l], dz_in);
        dz = std::move(dz_in);
    }

    // split the full-graph latent gradient: visible rows flow back into the
    // encoder trunk, hidden rows accumulate on the masked token
    const auto& vis = ctx.masking.visible_nodes;
    Mat<T> dvis(vis.size(), d);
    std::vector<uint8_t> is_visible(dz.rows, 0);
    for (size_t i = 0; i < vis.size(); ++i) {
        is_visible[vis[i]] = 1;
        const T* src = dz.row_ptr(vis[i]);
        std::copy(src, src + d, dvis.row_ptr(i));
    }
    for (size_t i = 0; i < dz.rows; ++i) {
        if (is_visible[i]) continue;
        const T* src = dz.row_ptr(i);
        for (size_t c = 0; c < d; ++c) grad.masked_token[c] += src[c];
    }
    trunk_backward(p, *ctx.vis_masks, ctx.trunk, dvis, grad, static_cast<Mat<T>*>(nullptr));
}

// ------------------------------------------------------------- checkpoint

namespace {

json norm_to_json(const NormStats& n) {
    return json{{"in_mean", n.in_mean},
                {"in_std", n.in_std},
                {"out_mean", n.out_mean},
                {"out_std", n.out_std}};
}

NormStats norm_from_json(const json& j) {
    NormStats n;
    n.in_mean = j.at("in_mean").get<std::vector<double>>();
    n.in_std = j.at("in_std").get<std::vector<double>>();
    n.out_mean = j.at("out_mean").get<std::vector<double>>();
    n.out_std = j.at("out_std").get<std::vector<double>>();
    return n;
}

json config_to_json(const ModelConfig& c) {
    return json{{"layers", c.layers},
                {"latent", c.latent},
                {"heads", c.heads},
                {"expansion", c.expansion},
                {"input_features", c.input_features},
                {"output_features", c.output_features},
                {"mae_decoder_layers", c.mae_decoder_layers},
                {"dilated_layer_count", c.dilated_layer_count},
                {"jumper_fraction", c.jumper_fraction},
                {"global_fraction", c.global_fraction},
                {"strict_a2", c.strict_a2}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.latent = j.at("latent").get<int>();
    c.heads = j.at("heads").get<int>();
    c.expansion = j.at("expansion").get<int>();
    c.input_features = j.at("input_features").get<int>();
    c.output_features = j.at("output_features").get<int>();
    c.mae_decoder_layers = j.at("mae_decoder_layers").get<int>();
    c.dilated_layer_count = j.at("dilated_layer_count").get<int>();
    c.jumper_fraction = j.at("jumper_fraction").get<double>();
    c.global_fraction = j.at("global_fraction").get<double>();
    c.strict_a2 = j.at("strict_a2").get<bool>();
    return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, ModelParams<T>& params, const NormStats& norm,
                     const CheckpointMeta& meta, std::vector<ParamView<T>> extra_blobs) {
    json cfg;
    cfg["model"] = config_to_json(params.config);
    cfg["norm"] = norm_to_json(norm);
    cfg["init_seed"] = meta.init_seed;
    cfg["trained_steps"] = meta.trained_steps;
    cfg["phase"] = meta.phase;
    const std::string cfg_str = cfg.dump();

    auto out = open_output(path);
    BinWriter w(out, path);
    w.write_raw("HSC1", 4);
    w.write_pod<uint64_t>(cfg_str.size());
    w.write_raw(cfg_str.data(), cfg_str.size());

    auto views = params.views();
    for (auto& v : extra_blobs) views.push_back(v);
    w.write_pod<uint64_t>(views.size());
    std::vector<float> buf;
    for (const auto& v : views) {
        w.write_pod<uint64_t>(v.name.size());
        w.write_raw(v.name.data(), v.name.size());
        w.write_pod<uint64_t>(v.dims.size());
        for (uint64_t dim : v.dims) w.write_pod(dim);
        buf.resize(v.size);
        for (size_t i = 0; i < v.size; ++i) buf[i] = float(v.data[i]);
        w.write_vec(buf);
    }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    auto in = open_input(path);
    BinReader r(in, path);
    r.expect_magic("HSC1");
    const uint64_t cfg_len = r.read_u64("config length");
    std::string cfg_str(cfg_len, '\0');
    r.read_raw(cfg_str.data(), cfg_len, "config json");
    json cfg = json::parse(cfg_str, nullptr, false);
    if (cfg.is_discarded()) throw Error::format(path + ": config block is not valid JSON");

    Checkpoint<T> ck;
    ck.params.allocate(config_from_json(cfg.at("model")));
    ck.norm = norm_from_json(cfg.at("norm"));
    ck.meta.init_seed = cfg.at("init_seed").get<uint64_t>();
    ck.meta.trained_steps = cfg.at("trained_steps").get<uint64_t>();
    ck.meta.phase = cfg.at("phase").get<std::string>();

    auto views = ck.params.views();
    const uint64_t blob_count = r.read_u64("blob count");
    std::vector<float> buf;
    for (uint64_t b = 0; b < blob_count; ++b) {
        const uint64_t name_len = r.read_u64("blob name length");
        std::string name(name_len, '\0');
        r.read_raw(name.data(), name_len, "blob name");
        const uint64_t rank = r.read_u64("blob rank");
        uint64_t count = 1;
        for (uint64_t k = 0; k < rank; ++k) count *= r.read_u64("blob dim");
        r.read_vec(buf, count, "blob data");

        bool matched = false;
        for (auto& v : views) {
            if (v.name == name) {
                if (v.size != count) {
                    throw Error::format(path + ": blob \"" + name + "\" has " +
                                        std::to_string(count) + " values, expected " +
                                        std::to_string(v.size));
                }
                for (size_t i = 0; i < count; ++i) v.data[i] = T(buf[i]);
                matched = true;
                break;
            }
        }
        if (!matched) {
            std::vector<T> extra(count);
            for (size_t i = 0; i < count; ++i) extra[i] = T(buf[i]);
            ck.extras.emplace_back(name, std::move(extra));
        }
    }
    return ck;
}

// ------------------------------------------------- explicit instantiation

template struct ModelParams<float>;
template struct ModelParams<double>;

#define HSFLOW_INSTANTIATE(T)                                                              \
    template void process_block_forward<T>(const BlockParams<T>&,                         \
                                           const std::vector<HeadMask>&, const Mat<T>&,   \
                                           BlockContext<T>&);                             \
    template void process_block_backward<T>(const BlockParams<T>&,                        \
                                            const std::vector<HeadMask>&,                 \
                                            const BlockContext<T>&, const Mat<T>&,        \
                                            BlockParams<T>&, Mat<T>&);                    \
    template void trunk_forward<T>(const ModelParams<T>&, const Mat<T>&, const MaskSet&,  \
                                   TrunkContext<T>&);                                     \
    template void trunk_backward<T>(const ModelParams<T>&, const MaskSet&,                \
                                    const TrunkContext<T>&, const Mat<T>&,                \
                                    ModelParams<T>&, Mat<T>*);                            \
    template void decode_forward<T>(const ModelParams<T>&, const Mat<T>&,                 \
                                    HeadContext<T>&);                                     \
    template void decode_backward<T>(const ModelParams<T>&, const Mat<T>&,                \
                                     const HeadContext<T>&, const Mat<T>&,                \
                                     ModelParams<T>&, Mat<T>&);                           \
    template void model_forward<T>(const ModelParams<T>&, const Mat<T>&, const MaskSet&,  \
                                   ForwardContext<T>&);                                   \
    template void model_backward<T>(const ModelParams<T>&, const MaskSet&,                \
                                    ForwardContext<T>&, const Mat<T>&, ModelParams<T>&,   \
                                    Mat<T>*);                                             \
    template void mae_forward<T>(const ModelParams<T>&, const Mat<T>&,                    \
                                 const AugmentedAdjacency&, const MaskSet&, double,       \
                                 uint64_t, MaeContext<T>&);                               \
    template void mae_backward<T>(const ModelParams<T>&, const MaskSet&, MaeContext<T>&,  \
                                  const Mat<T>&, ModelParams<T>&);                        \
    template void save_checkpoint<T>(const std::string&, ModelParams<T>&,                 \
                                     const NormStats&, const CheckpointMeta&,             \
                                     std::vector<ParamView<T>>);                          \
    template Checkpoint<T> load_checkpoint<T>(const std::string&);

HSFLOW_INSTANTIATE(float)
HSFLOW_INSTANTIATE(double)

#undef HSFLOW_INSTANTIATE

}  // namespace hsflow
