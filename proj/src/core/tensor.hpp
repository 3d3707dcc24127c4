#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/graph.hpp"

namespace hsflow {

// Dense row-major matrix. Training instantiates float, verification and the
// gradient oracles double.
template <typename T>
struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

    T* row_ptr(size_t i) { return data.data() + i * cols; }
    const T* row_ptr(size_t i) const { return data.data() + i * cols; }
    T& at(size_t i, size_t j) { return data[i * cols + j]; }
    T at(size_t i, size_t j) const { return data[i * cols + j]; }
    size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

inline void check_shape(bool ok, const char* what) {
    if (!ok) throw Error::usage(std::string("shape mismatch in ") + what);
}

// ---------------------------------------------------------------- GEMM
// Accumulation order within each output element is fixed (k ascending), so
// results are bitwise reproducible for any thread count.

template <typename T>
void matmul_nn(const Mat<T>& a, const Mat<T>& b, Mat<T>& c, bool accumulate = false) {
    check_shape(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols, "matmul_nn");
    const size_t m = a.rows, k = a.cols, n = b.cols;
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(i);
        if (!accumulate) {
            for (size_t j = 0; j < n; ++j) ci[j] = T(0);
        }
        const T* ai = a.row_ptr(i);
        for (size_t l = 0; l < k; ++l) {
            const T av = ai[l];
            if (av == T(0)) continue;
            const T* bl = b.row_ptr(l);
            for (size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

// c = a^T b, a is k x m, b is k x n, c is m x n
template <typename T>
void matmul_tn(const Mat<T>& a, const Mat<T>& b, Mat<T>& c, bool accumulate = false) {
    check_shape(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols, "matmul_tn");
    const size_t m = a.cols, k = a.rows, n = b.cols;
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(i);
        if (!accumulate) {
            for (size_t j = 0; j < n; ++j) ci[j] = T(0);
        }
        for (size_t l = 0; l < k; ++l) {
            const T av = a.at(l, i);
            if (av == T(0)) continue;
            const T* bl = b.row_ptr(l);
            for (size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

// c = a b^T, a is m x k, b is n x k, c is m x n
template <typename T>
void matmul_nt(const Mat<T>& a, const Mat<T>& b, Mat<T>& c, bool accumulate = false) {
    check_shape(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows, "matmul_nt");
    const size_t m = a.rows, k = a.cols, n = b.rows;
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(i);
        const T* ai = a.row_ptr(i);
        for (size_t j = 0; j < n; ++j) {
            const T* bj = b.row_ptr(j);
            T acc = accumulate ? ci[j] : T(0);
            for (size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] = acc;
        }
    }
}

// ---------------------------------------------------------------- linear

template <typename T>
void linear_forward(const Mat<T>& x, const Mat<T>& w, const std::vector<T>& b, Mat<T>& y) {
    check_shape(x.cols == w.rows && b.size() == w.cols, "linear");
    if (y.rows != x.rows || y.cols != w.cols) y = Mat<T>(x.rows, w.cols);
    matmul_nn(x, w, y);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < y.rows; ++i) {
        T* yi = y.row_ptr(i);
        for (size_t j = 0; j < y.cols; ++j) yi[j] += b[j];
    }
}

// dx (optional), dw += x^T dy, db += colsum(dy)
template <typename T>
void linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>* dx,
                     Mat<T>& dw, std::vector<T>& db) {
    check_shape(dy.rows == x.rows && dy.cols == w.cols, "linear backward");
    if (dx) {
        if (dx->rows != x.rows || dx->cols != x.cols) *dx = Mat<T>(x.rows, x.cols);
        matmul_nt(dy, w, *dx);
    }
    matmul_tn(x, dy, dw, true);
#pragma omp parallel for schedule(static)
    for (size_t j = 0; j < dy.cols; ++j) {
        T acc = T(0);
        for (size_t i = 0; i < dy.rows; ++i) acc += dy.at(i, j);
        db[j] += acc;
    }
}

// ---------------------------------------------------------------- rmsnorm

inline constexpr double kRmsNormEps = 1e-6;

// y = x / sqrt(mean(x^2) + eps) * gain, per row; saves the inverse rms
template <typename T>
void rmsnorm_forward(const Mat<T>& x, const std::vector<T>& gain, Mat<T>& y,
                     std::vector<T>& inv_rms) {
    check_shape(gain.size() == x.cols, "rmsnorm");
    if (y.rows != x.rows || y.cols != x.cols) y = Mat<T>(x.rows, x.cols);
    inv_rms.resize(x.rows);
    const size_t d = x.cols;
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.rows; ++i) {
        const T* xi = x.row_ptr(i);
        T ms = T(0);
        for (size_t j = 0; j < d; ++j) ms += xi[j] * xi[j];
        const T s = T(1) / std::sqrt(ms / T(d) + T(kRmsNormEps));
        inv_rms[i] = s;
        T* yi = y.row_ptr(i);
        for (size_t j = 0; j < d; ++j) yi[j] = xi[j] * s * gain[j];
    }
}

template <typename T>
void rmsnorm_backward(const Mat<T>& x, const std::vector<T>& gain,
                      const std::vector<T>& inv_rms, const Mat<T>& dy, Mat<T>& dx,
                      std::vector<T>& dgain) {
    const size_t d = x.cols;
    if (dx.rows != x.rows || dx.cols != d) dx = Mat<T>(x.rows, d);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.rows; ++i) {
        const T* xi = x.row_ptr(i);
        const T* dyi = dy.row_ptr(i);
        const T s = inv_rms[i];
        T dot = T(0);
        for (size_t j = 0; j < d; ++j) dot += dyi[j] * gain[j] * xi[j];
        const T coef = s * s * s * dot / T(d);
        T* dxi = dx.row_ptr(i);
        for (size_t j = 0; j < d; ++j) dxi[j] = s * gain[j] * dyi[j] - coef * xi[j];
    }
    // gain gradient: deterministic column reduction
#pragma omp parallel for schedule(static)
    for (size_t j = 0; j < d; ++j) {
        T acc = T(0);
        for (size_t i = 0; i < x.rows; ++i) acc += dy.at(i, j) * x.at(i, j) * inv_rms[i];
        dgain[j] += acc;
    }
}

// ------------------------------------------------------------- activations

template <typename T>
T gelu_scalar(T x) {
    // tanh approximation
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T inner = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T c = T(0.7978845608028654);
    const T x3 = x * x * x;
    const T inner = c * (x + T(0.044715) * x3);
    const T t = std::tanh(inner);
    const T sech2 = T(1) - t * t;
    const T dinner = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * sech2 * dinner;
}

template <typename T>
void gelu_forward(const Mat<T>& x, Mat<T>& y) {
    if (y.rows != x.rows || y.cols != x.cols) y = Mat<T>(x.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = gelu_scalar(x.data[i]);
}

template <typename T>
void gelu_backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>& dx) {
    if (dx.rows != x.rows || dx.cols != x.cols) dx = Mat<T>(x.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.size(); ++i) dx.data[i] = dy.data[i] * gelu_grad_scalar(x.data[i]);
}

template <typename T>
void relu_forward(const Mat<T>& x, Mat<T>& y) {
    if (y.rows != x.rows || y.cols != x.cols) y = Mat<T>(x.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

template <typename T>
void relu_backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>& dx) {
    if (dx.rows != x.rows || dx.cols != x.cols) dx = Mat<T>(x.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
}

// ---------------------------------------------------------------- gated MLP

template <typename T>
struct GatedMlpParams {
    Mat<T> wl, wr, wf;
    std::vector<T> bl, br, bf;
};

template <typename T>
struct GatedMlpContext {
    Mat<T> hl, hr, act, gated;
};

// y = W_f (GeLU(x W_l + b_l) . (x W_r + b_r)) + b_f
template <typename T>
void gated_mlp_forward(const Mat<T>& x, const GatedMlpParams<T>& p, GatedMlpContext<T>& ctx,
                       Mat<T>& y) {
    check_shape(p.wl.rows == x.cols && p.wr.rows == x.cols && p.wf.rows == p.wl.cols &&
                    p.wl.cols == p.wr.cols,
                "gated_mlp");
    linear_forward(x, p.wl, p.bl, ctx.hl);
    linear_forward(x, p.wr, p.br, ctx.hr);
    gelu_forward(ctx.hl, ctx.act);
    if (ctx.gated.rows != ctx.act.rows || ctx.gated.cols != ctx.act.cols) {
        ctx.gated = Mat<T>(ctx.act.rows, ctx.act.cols);
    }
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < ctx.act.size(); ++i) {
        ctx.gated.data[i] = ctx.act.data[i] * ctx.hr.data[i];
    }
    linear_forward(ctx.gated, p.wf, p.bf, y);
}

template <typename T>
void gated_mlp_backward(const Mat<T>& x, const GatedMlpParams<T>& p,
                        const GatedMlpContext<T>& ctx, const Mat<T>& dy, Mat<T>& dx,
                        GatedMlpParams<T>& grad) {
    Mat<T> dgated;
    linear_backward(ctx.gated, p.wf, dy, &dgated, grad.wf, grad.bf);
    Mat<T> dact(dgated.rows, dgated.cols), dhr(dgated.rows, dgated.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < dgated.size(); ++i) {
        dact.data[i] = dgated.data[i] * ctx.hr.data[i];
        dhr.data[i] = dgated.data[i] * ctx.act.data[i];
    }
    Mat<T> dhl;
    gelu_backward(ctx.hl, dact, dhl);
    Mat<T> dx_l, dx_r;
    linear_backward(x, p.wl, dhl, &dx_l, grad.wl, grad.bl);
    linear_backward(x, p.wr, dhr, &dx_r, grad.wr, grad.br);
    if (dx.rows != x.rows || dx.cols != x.cols) dx = Mat<T>(x.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < dx.size(); ++i) dx.data[i] = dx_l.data[i] + dx_r.data[i];
}

// --------------------------------------------------------- sparse attention
// Scores exist only on mask entries (SDDMM), the softmax normalizes over each
// row's stored entries, and the output is row-wise probs times V (SpMM).

template <typename T>
struct SparseScores {
    const Adjacency* mask = nullptr;
    std::vector<T> probs;  // nnz, post-softmax
};

template <typename T>
void sparse_attention_forward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                              const Adjacency& mask, SparseScores<T>& scores, Mat<T>& out) {
    const size_t n = q.rows, dh = q.cols;
    check_shape(k.rows == n && v.rows == n && k.cols == dh && v.cols == dh,
                "sparse_attention");
    check_shape(mask.num_nodes() == n, "sparse_attention mask");
    for (size_t i = 0; i < n; ++i) {
        if (mask.degree(i) == 0) {
            throw Error::usage("sparse_attention: empty mask row " + std::to_string(i));
        }
    }
    scores.mask = &mask;
    scores.probs.resize(mask.nnz());
    if (out.rows != n || out.cols != dh) out = Mat<T>(n, dh);
    const T scale = T(1) / std::sqrt(T(dh));
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const uint64_t begin = mask.row_offsets[i], end = mask.row_offsets[i + 1];
        const T* qi = q.row_ptr(i);
        // SDDMM on the stored entries
        T row_max = -std::numeric_limits<T>::infinity();
        for (uint64_t e = begin; e < end; ++e) {
            const T* kj = k.row_ptr(mask.cols[e]);
            T s = T(0);
            for (size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
            s *= scale;
            scores.probs[e] = s;
            row_max = std::max(row_max, s);
        }
        // stable softmax over the row's stored entries only
        T denom = T(0);
        for (uint64_t e = begin; e < end; ++e) {
            const T ex = std::exp(scores.probs[e] - row_max);
            scores.probs[e] = ex;
            denom += ex;
        }
        T* oi = out.row_ptr(i);
        for (size_t c = 0; c < dh; ++c) oi[c] = T(0);
        for (uint64_t e = begin; e < end; ++e) {
            const T p = scores.probs[e] / denom;
            scores.probs[e] = p;
            const T* vj = v.row_ptr(mask.cols[e]);
            for (size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
    }
}

// Accumulates into dq, dk, dv. tperm maps each entry to its mirror, allowing
// the transposed products to run row-parallel with deterministic order.
template <typename T>
void sparse_attention_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                               const SparseScores<T>& scores,
                               const std::vector<uint64_t>& tperm, const Mat<T>& dout,
                               Mat<T>& dq, Mat<T>& dk, Mat<T>& dv) {
    const Adjacency& mask = *scores.mask;
    const size_t n = q.rows, dh = q.cols;
    const T scale = T(1) / std::sqrt(T(dh));

    // dp_e = dout_i . v_j, then softmax backward to raw score gradients
    std::vector<T> dscore(mask.nnz());
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const uint64_t begin = mask.row_offsets[i], end = mask.row_offsets[i + 1];
        const T* doi = dout.row_ptr(i);
        T inner = T(0);  // sum_e p_e dp_e over the row
        for (uint64_t e = begin; e < end; ++e) {
            const T* vj = v.row_ptr(mask.cols[e]);
            T dp = T(0);
            for (size_t c = 0; c < dh; ++c) dp += doi[c] * vj[c];
            dscore[e] = dp;
            inner += scores.probs[e] * dp;
        }
        for (uint64_t e = begin; e < end; ++e) {
            dscore[e] = scores.probs[e] * (dscore[e] - inner);
        }
    }

#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const uint64_t begin = mask.row_offsets[i], end = mask.row_offsets[i + 1];
        // dq_i += sum_j ds_ij k_j * scale
        T* dqi = dq.row_ptr(i);
        for (uint64_t e = begin; e < end; ++e) {
            const T ds = dscore[e] * scale;
            const T* kj = k.row_ptr(mask.cols[e]);
            for (size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
        }
        // dk_i += sum_j ds_ji q_j * scale and dv_i += sum_j p_ji dout_j,
        // read through the mirrored entries (mask is symmetric)
        T* dki = dk.row_ptr(i);
        T* dvi = dv.row_ptr(i);
        for (uint64_t e = begin; e < end; ++e) {
            const uint64_t j = mask.cols[e];
            const uint64_t mirrored = tperm[e];  // entry (j, i)
            const T ds = dscore[mirrored] * scale;
            const T p = scores.probs[mirrored];
            const T* qj = q.row_ptr(j);
            const T* doj = dout.row_ptr(j);
            for (size_t c = 0; c < dh; ++c) {
                dki[c] += ds * qj[c];
                dvi[c] += p * doj[c];
            }
        }
    }
}

// ---------------------------------------------------------------- losses

template <typename T>
double mse_loss(const Mat<T>& pred, const Mat<T>& target) {
    check_shape(pred.rows == target.rows && pred.cols == target.cols, "mse_loss");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred.data[i]) - double(target.data[i]);
        acc += d * d;
    }
    return acc / double(pred.size());
}

template <typename T>
void mse_loss_backward(const Mat<T>& pred, const Mat<T>& target, Mat<T>& dpred) {
    if (dpred.rows != pred.rows || dpred.cols != pred.cols) {
        dpred = Mat<T>(pred.rows, pred.cols);
    }
    const T scale = T(2) / T(pred.size());
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < pred.size(); ++i) {
        dpred.data[i] = scale * (pred.data[i] - target.data[i]);
    }
}

// ---------------------------------------------------- finite differences

struct ParamBlockRef {
    std::string name;
    double* values = nullptr;
    double* grads = nullptr;
    size_t size = 0;
};

struct FdBlockReport {
    std::string name;
    double max_rel_err = 0.0;
    size_t worst_index = 0;
};

struct FdReport {
    std::vector<FdBlockReport> blocks;
    double worst = 0.0;
    double tolerance = 0.0;
    bool passed() const { return worst < tolerance; }
};

// Central differences with h = 1e-5 (1 + |theta|) against gradients produced
// by `backward`. Runs in binary64 only.
FdReport finite_diff_check(const std::function<double()>& loss,
                           const std::function<void()>& backward,
                           const std::vector<ParamBlockRef>& params, double tolerance);

}  // namespace hsflow
