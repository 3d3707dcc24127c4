#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace hsflow;

namespace {

Mat<double> random_mat(Rng& rng, size_t r, size_t c, double scale = 1.0) {
    Mat<double> m(r, c);
    for (auto& v : m.data) v = rng.next_normal() * scale;
    return m;
}

std::vector<double> random_vec(Rng& rng, size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_normal() * scale;
    return v;
}

Adjacency random_nonempty_mask(Rng& rng, size_t n, double p) {
    // every row needs at least one neighbour: ring plus random extras
    std::vector<std::pair<uint64_t, uint64_t>> pairs;
    for (size_t i = 0; i < n; ++i) pairs.emplace_back(i, (i + 1) % n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (rng.next_unit() < p) pairs.emplace_back(i, j);
        }
    }
    return adjacency_from_pairs(n, pairs);
}

// dense oracle: full QK^T/sqrt(dh), non-neighbours (and diagonal) at -inf,
// row softmax, times V
Mat<double> dense_attention_oracle(const Mat<double>& q, const Mat<double>& k,
                                   const Mat<double>& v, const Adjacency& mask) {
    const size_t n = q.rows, dh = q.cols;
    Mat<double> out(n, dh);
    const double scale = 1.0 / std::sqrt(double(dh));
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> logits(n, -std::numeric_limits<double>::infinity());
        for (uint64_t j : mask.row(i)) {
            double s = 0.0;
            for (size_t c = 0; c < dh; ++c) s += q.at(i, c) * k.at(j, c);
            logits[j] = s * scale;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        std::vector<double> p(n, 0.0);
        for (size_t j = 0; j < n; ++j) {
            if (std::isinf(logits[j])) continue;
            p[j] = std::exp(logits[j] - mx);
            denom += p[j];
        }
        for (size_t j = 0; j < n; ++j) {
            const double pj = p[j] / denom;
            for (size_t c = 0; c < dh; ++c) out.at(i, c) += pj * v.at(j, c);
        }
    }
    return out;
}

double max_rel_diff(const Mat<double>& a, const Mat<double>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1e-12});
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("linear: identity weights pass the input through") {
    Mat<double> x(2, 3);
    x.data = {1, 2, 3, 4, 5, 6};
    Mat<double> w(3, 3);
    for (int i = 0; i < 3; ++i) w.at(i, i) = 1.0;
    std::vector<double> b(3, 0.0);
    Mat<double> y;
    linear_forward(x, w, b, y);
    CHECK(y.data == x.data);
}

TEST_CASE("linear: hand-computed 1x2 by 2x1 case") {
    Mat<double> x(1, 2);
    x.data = {1, 2};
    Mat<double> w(2, 1);
    w.data = {1, 1};
    std::vector<double> b = {3.0};
    Mat<double> y;
    linear_forward(x, w, b, y);
    CHECK(y.at(0, 0) == 6.0);
}

TEST_CASE("linear: shape mismatch throws") {
    Mat<double> x(1, 2), w(3, 1);
    std::vector<double> b(1, 0.0);
    Mat<double> y;
    CHECK_THROWS_AS(linear_forward(x, w, b, y), Error);
}

TEST_CASE("linear gradients match central finite differences") {
    Rng rng(101);
    Mat<double> x = random_mat(rng, 4, 5);
    Mat<double> w = random_mat(rng, 5, 3);
    std::vector<double> b = random_vec(rng, 3);
    Mat<double> target = random_mat(rng, 4, 3);

    Mat<double> dw(5, 3);
    std::vector<double> db(3, 0.0);
    Mat<double> dx(4, 5);

    auto loss = [&]() {
        Mat<double> y;
        linear_forward(x, w, b, y);
        return mse_loss(y, target);
    };
    auto backward = [&]() {
        Mat<double> y, dy;
        linear_forward(x, w, b, y);
        mse_loss_backward(y, target, dy);
        dw.zero();
        std::fill(db.begin(), db.end(), 0.0);
        linear_backward(x, w, dy, &dx, dw, db);
    };
    auto report = finite_diff_check(
        loss, backward,
        {{"x", x.data.data(), dx.data.data(), x.size()},
         {"w", w.data.data(), dw.data.data(), w.size()},
         {"b", b.data(), db.data(), b.size()}},
        1e-6);
    CHECK(report.passed());
    CHECK(report.worst < 1e-6);
}

TEST_CASE("finite difference harness flags a corrupted backward") {
    Rng rng(7);
    Mat<double> x = random_mat(rng, 3, 3);
    Mat<double> w = random_mat(rng, 3, 2);
    std::vector<double> b = random_vec(rng, 2);
    Mat<double> target = random_mat(rng, 3, 2);
    Mat<double> dw(3, 2);
    std::vector<double> db(2, 0.0);
    auto loss = [&]() {
        Mat<double> y;
        linear_forward(x, w, b, y);
        return mse_loss(y, target);
    };
    auto backward = [&]() {
        Mat<double> y, dy;
        linear_forward(x, w, b, y);
        mse_loss_backward(y, target, dy);
        dw.zero();
        std::fill(db.begin(), db.end(), 0.0);
        linear_backward(x, w, dy, static_cast<Mat<double>*>(nullptr), dw, db);
        dw.data[0] += 0.5;  // deliberate corruption
    };
    auto report = finite_diff_check(loss, backward,
                                    {{"w", w.data.data(), dw.data.data(), w.size()}}, 1e-6);
    CHECK_FALSE(report.passed());
}

TEST_CASE("rmsnorm: constant rows map to unit-magnitude rows") {
    Mat<double> x(2, 4);
    for (size_t j = 0; j < 4; ++j) {
        x.at(0, j) = 3.0;    // mean square = 9
        x.at(1, j) = -0.5;   // mean square = 0.25
    }
    std::vector<double> gain(4, 1.0);
    Mat<double> y;
    std::vector<double> inv_rms;
    rmsnorm_forward(x, gain, y, inv_rms);
    for (size_t j = 0; j < 4; ++j) {
        CHECK(y.at(0, j) == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(y.at(1, j) == doctest::Approx(-1.0).epsilon(1e-5));
    }
}

TEST_CASE("rmsnorm: zero row stays zero") {
    Mat<double> x(1, 4);
    std::vector<double> gain(4, 1.0);
    Mat<double> y;
    std::vector<double> inv_rms;
    rmsnorm_forward(x, gain, y, inv_rms);
    for (size_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == 0.0);
}

TEST_CASE("rmsnorm gradients match finite differences") {
    Rng rng(33);
    Mat<double> x = random_mat(rng, 5, 6);
    std::vector<double> gain = random_vec(rng, 6);
    Mat<double> target = random_mat(rng, 5, 6);
    Mat<double> dx(5, 6);
    std::vector<double> dgain(6, 0.0);
    auto loss = [&]() {
        Mat<double> y;
        std::vector<double> s;
        rmsnorm_forward(x, gain, y, s);
        return mse_loss(y, target);
    };
    auto backward = [&]() {
        Mat<double> y, dy;
        std::vector<double> s;
        rmsnorm_forward(x, gain, y, s);
        mse_loss_backward(y, target, dy);
        dx.zero();
        std::fill(dgain.begin(), dgain.end(), 0.0);
        rmsnorm_backward(x, gain, s, dy, dx, dgain);
    };
    auto report = finite_diff_check(loss, backward,
                                    {{"x", x.data.data(), dx.data.data(), x.size()},
                                     {"gain", gain.data(), dgain.data(), gain.size()}},
                                    1e-5);
    CHECK(report.passed());
}

TEST_CASE("gated mlp: unit gate reduces to a plain GeLU MLP") {
    Rng rng(5);
    GatedMlpParams<double> p;
    p.wl = random_mat(rng, 4, 8);
    p.bl = random_vec(rng, 8);
    p.wr = Mat<double>(4, 8);  // zero weights
    p.br.assign(8, 1.0);       // gate = 1
    p.wf = random_mat(rng, 8, 4);
    p.bf = random_vec(rng, 4);
    Mat<double> x = random_mat(rng, 3, 4);

    GatedMlpContext<double> ctx;
    Mat<double> y;
    gated_mlp_forward(x, p, ctx, y);

    // oracle: W_f GeLU(x W_l + b_l) + b_f
    Mat<double> h, a, ref;
    linear_forward(x, p.wl, p.bl, h);
    gelu_forward(h, a);
    linear_forward(a, p.wf, p.bf, ref);
    CHECK(max_rel_diff(y, ref) < 1e-14);
}

TEST_CASE("gated mlp: zero left branch collapses to the output bias") {
    Rng rng(6);
    GatedMlpParams<double> p;
    p.wl = Mat<double>(4, 8);
    p.bl.assign(8, 0.0);  // GeLU(0) = 0 kills the product
    p.wr = random_mat(rng, 4, 8);
    p.br = random_vec(rng, 8);
    p.wf = random_mat(rng, 8, 4);
    p.bf = random_vec(rng, 4);
    Mat<double> x = random_mat(rng, 3, 4);
    GatedMlpContext<double> ctx;
    Mat<double> y;
    gated_mlp_forward(x, p, ctx, y);
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 4; ++j) CHECK(y.at(i, j) == doctest::Approx(p.bf[j]));
    }
}

TEST_CASE("gated mlp gradients match finite differences") {
    Rng rng(44);
    GatedMlpParams<double> p;
    p.wl = random_mat(rng, 3, 6);
    p.bl = random_vec(rng, 6);
    p.wr = random_mat(rng, 3, 6);
    p.br = random_vec(rng, 6);
    p.wf = random_mat(rng, 6, 3);
    p.bf = random_vec(rng, 3);
    Mat<double> x = random_mat(rng, 4, 3);
    Mat<double> target = random_mat(rng, 4, 3);

    GatedMlpParams<double> g;
    g.wl = Mat<double>(3, 6);
    g.bl.assign(6, 0.0);
    g.wr = Mat<double>(3, 6);
    g.br.assign(6, 0.0);
    g.wf = Mat<double>(6, 3);
    g.bf.assign(3, 0.0);
    Mat<double> dx(4, 3);

    auto loss = [&]() {
        GatedMlpContext<double> ctx;
        Mat<double> y;
        gated_mlp_forward(x, p, ctx, y);
        return mse_loss(y, target);
    };
    auto backward = [&]() {
        GatedMlpContext<double> ctx;
        Mat<double> y, dy;
        gated_mlp_forward(x, p, ctx, y);
        mse_loss_backward(y, target, dy);
        g.wl.zero();
        g.wr.zero();
        g.wf.zero();
        std::fill(g.bl.begin(), g.bl.end(), 0.0);
        std::fill(g.br.begin(), g.br.end(), 0.0);
        std::fill(g.bf.begin(), g.bf.end(), 0.0);
        dx.zero();
        gated_mlp_backward(x, p, ctx, dy, dx, g);
    };
    auto report = finite_diff_check(
        loss, backward,
        {{"x", x.data.data(), dx.data.data(), x.size()},
         {"wl", p.wl.data.data(), g.wl.data.data(), p.wl.size()},
         {"bl", p.bl.data(), g.bl.data(), p.bl.size()},
         {"wr", p.wr.data.data(), g.wr.data.data(), p.wr.size()},
         {"br", p.br.data(), g.br.data(), p.br.size()},
         {"wf", p.wf.data.data(), g.wf.data.data(), p.wf.size()},
         {"bf", p.bf.data(), g.bf.data(), p.bf.size()}},
        1e-5);
    CHECK(report.passed());
}

TEST_CASE("sparse attention: single stored neighbour copies that V row") {
    // directed star pattern is not allowed (masks are symmetric); use a pair
    Adjacency mask = adjacency_from_pairs(2, {{0, 1}});
    Rng rng(9);
    Mat<double> q = random_mat(rng, 2, 4), k = random_mat(rng, 2, 4),
                v = random_mat(rng, 2, 4);
    SparseScores<double> sc;
    Mat<double> out;
    sparse_attention_forward(q, k, v, mask, sc, out);
    for (size_t c = 0; c < 4; ++c) {
        CHECK(out.at(0, c) == doctest::Approx(v.at(1, c)));
        CHECK(out.at(1, c) == doctest::Approx(v.at(0, c)));
    }
}

TEST_CASE("sparse attention: equal logits average the neighbour rows") {
    // path 0-1-2, zero Q makes all logits equal
    Adjacency mask = adjacency_from_pairs(3, {{0, 1}, {1, 2}});
    Mat<double> q(3, 2);  // zeros
    Rng rng(10);
    Mat<double> k = random_mat(rng, 3, 2), v = random_mat(rng, 3, 2);
    SparseScores<double> sc;
    Mat<double> out;
    sparse_attention_forward(q, k, v, mask, sc, out);
    for (size_t c = 0; c < 2; ++c) {
        CHECK(out.at(1, c) == doctest::Approx(0.5 * (v.at(0, c) + v.at(2, c))));
    }
}

TEST_CASE("sparse attention equals the dense masked-softmax oracle") {
    Rng rng(2025);
    for (int rep = 0; rep < 50; ++rep) {
        const size_t n = 3 + rng.next_below(10);  // N <= 12
        const size_t dh = 1 + rng.next_below(8);
        Adjacency mask = random_nonempty_mask(rng, n, 0.4);
        Mat<double> q = random_mat(rng, n, dh), k = random_mat(rng, n, dh),
                    v = random_mat(rng, n, dh);
        SparseScores<double> sc;
        Mat<double> out;
        sparse_attention_forward(q, k, v, mask, sc, out);
        Mat<double> ref = dense_attention_oracle(q, k, v, mask);
        CHECK(max_rel_diff(out, ref) < 1e-12);
    }
}

TEST_CASE("sparse attention row probabilities sum to one") {
    Rng rng(15);
    Adjacency mask = random_nonempty_mask(rng, 20, 0.2);
    Mat<double> q = random_mat(rng, 20, 4), k = random_mat(rng, 20, 4),
                v = random_mat(rng, 20, 4);
    SparseScores<double> sc;
    Mat<double> out;
    sparse_attention_forward(q, k, v, mask, sc, out);
    for (size_t i = 0; i < 20; ++i) {
        double s = 0.0;
        for (uint64_t e = mask.row_offsets[i]; e < mask.row_offsets[i + 1]; ++e) {
            s += sc.probs[e];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("sparse attention ignores K and V at non-neighbour indices") {
    Rng rng(16);
    const size_t n = 10, dh = 3;
    Adjacency mask = random_nonempty_mask(rng, n, 0.15);
    Mat<double> q = random_mat(rng, n, dh), k = random_mat(rng, n, dh),
                v = random_mat(rng, n, dh);
    SparseScores<double> sc;
    Mat<double> out;
    sparse_attention_forward(q, k, v, mask, sc, out);

    // perturb K,V rows that node 0 does not attend to; row 0 must be bitwise equal
    Mat<double> k2 = k, v2 = v;
    auto row0 = mask.row(0);
    for (size_t j = 1; j < n; ++j) {
        if (std::find(row0.begin(), row0.end(), j) == row0.end()) {
            for (size_t c = 0; c < dh; ++c) {
                k2.at(j, c) += 100.0;
                v2.at(j, c) -= 42.0;
            }
        }
    }
    SparseScores<double> sc2;
    Mat<double> out2;
    sparse_attention_forward(q, k2, v2, mask, sc2, out2);
    for (size_t c = 0; c < dh; ++c) CHECK(out.at(0, c) == out2.at(0, c));
}

TEST_CASE("sparse attention rejects empty rows") {
    Adjacency mask = adjacency_from_pairs(3, {{0, 1}});  // node 2 isolated
    Mat<double> q(3, 2), k(3, 2), v(3, 2);
    SparseScores<double> sc;
    Mat<double> out;
    CHECK_THROWS_AS(sparse_attention_forward(q, k, v, mask, sc, out), Error);
}

TEST_CASE("sparse attention gradients match finite differences") {
    Rng rng(77);
    const size_t n = 8, dh = 4;
    Adjacency mask = random_nonempty_mask(rng, n, 0.3);
    auto tperm = transpose_permutation(mask);
    Mat<double> q = random_mat(rng, n, dh), k = random_mat(rng, n, dh),
                v = random_mat(rng, n, dh);
    Mat<double> target = random_mat(rng, n, dh);
    Mat<double> dq(n, dh), dk(n, dh), dv(n, dh);

    auto loss = [&]() {
        SparseScores<double> sc;
        Mat<double> out;
        sparse_attention_forward(q, k, v, mask, sc, out);
        return mse_loss(out, target);
    };
    auto backward = [&]() {
        SparseScores<double> sc;
        Mat<double> out, dout;
        sparse_attention_forward(q, k, v, mask, sc, out);
        mse_loss_backward(out, target, dout);
        dq.zero();
        dk.zero();
        dv.zero();
        sparse_attention_backward(q, k, v, sc, tperm, dout, dq, dk, dv);
    };
    auto report = finite_diff_check(loss, backward,
                                    {{"q", q.data.data(), dq.data.data(), q.size()},
                                     {"k", k.data.data(), dk.data.data(), k.size()},
                                     {"v", v.data.data(), dv.data.data(), v.size()}},
                                    1e-4);
    CHECK(report.worst < 1e-4);
}

TEST_CASE("mse loss fixtures") {
    Mat<double> a(2, 3), b(2, 3);
    CHECK(mse_loss(a, b) == 0.0);
    for (auto& x : a.data) x = 1.0;
    CHECK(mse_loss(a, b) == 1.0);
}

TEST_CASE("mse gradient matches finite differences") {
    Rng rng(3);
    Mat<double> pred = random_mat(rng, 3, 3), target = random_mat(rng, 3, 3);
    Mat<double> dpred(3, 3);
    auto loss = [&]() { return mse_loss(pred, target); };
    auto backward = [&]() { mse_loss_backward(pred, target, dpred); };
    auto report = finite_diff_check(
        loss, backward, {{"pred", pred.data.data(), dpred.data.data(), pred.size()}}, 1e-6);
    CHECK(report.passed());
}

TEST_CASE("relu fixtures and gelu gradient") {
    Mat<double> x(1, 2);
    x.data = {-1.0, 2.0};
    Mat<double> y;
    relu_forward(x, y);
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == 2.0);

    Rng rng(21);
    Mat<double> g = random_mat(rng, 4, 4);
    Mat<double> target = random_mat(rng, 4, 4);
    Mat<double> dg(4, 4);
    auto loss = [&]() {
        Mat<double> out;
        gelu_forward(g, out);
        return mse_loss(out, target);
    };
    auto backward = [&]() {
        Mat<double> out, dout;
        gelu_forward(g, out);
        mse_loss_backward(out, target, dout);
        gelu_backward(g, dout, dg);
    };
    auto report = finite_diff_check(
        loss, backward, {{"x", g.data.data(), dg.data.data(), g.size()}}, 1e-5);
    CHECK(report.passed());
}

TEST_CASE("matmul variants agree with naive loops") {
    Rng rng(55);
    Mat<double> a = random_mat(rng, 7, 5), b = random_mat(rng, 5, 6);
    Mat<double> c(7, 6);
    matmul_nn(a, b, c);
    for (size_t i = 0; i < 7; ++i) {
        for (size_t j = 0; j < 6; ++j) {
            double acc = 0.0;
            for (size_t l = 0; l < 5; ++l) acc += a.at(i, l) * b.at(l, j);
            CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
    // a^T via matmul_tn equals transposing then matmul_nn
    Mat<double> at(5, 7);
    for (size_t i = 0; i < 7; ++i) {
        for (size_t j = 0; j < 5; ++j) at.at(j, i) = a.at(i, j);
    }
    Mat<double> c2(5, 6), c3(5, 6);
    Mat<double> b2 = random_mat(rng, 7, 6);
    matmul_tn(a, b2, c2);
    matmul_nn(at, b2, c3);
    CHECK(max_rel_diff(c2, c3) < 1e-13);
}
