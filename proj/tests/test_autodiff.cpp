#include "aag/autodiff.hpp"

#include "doctest.h"

#include <cmath>
#include <functional>

using namespace aag;
using namespace aag::ad;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            m(i, j) = rng.uniform(-scale, scale);
        }
    }
    return m;
}

// Reduces y to (1/rows) * sum(C .* y): linear in y with generic weights, so
// op gradients are exercised without cancellation.
Var reduce_ip(Tape& t, Var y, const Mat& c) {
    Var z = hadamard(y, t.constant(c));
    Var m = mean_rows(z);
    return matmul(m, t.constant(Mat::Ones(c.cols(), 1)));
}

// Central finite differences of `f` w.r.t. every entry of x, compared
// against the analytic gradient returned by `grad_of`.
void check_grad(const std::function<double(const Mat&)>& f, const Mat& x,
                const Mat& analytic, double h = 1e-6, double tol = 1e-6) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            Mat xp = x;
            Mat xm = x;
            xp(i, j) += h;
            xm(i, j) -= h;
            const double fd = (f(xp) - f(xm)) / (2.0 * h);
            const double an = analytic(i, j);
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            CHECK(std::abs(fd - an) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise and matmul ops match finite differences") {
    Rng rng(7);
    const Mat a0 = random_mat(rng, 3, 4);
    const Mat b0 = random_mat(rng, 3, 4);
    const Mat w0 = random_mat(rng, 4, 5);
    const Mat c34 = random_mat(rng, 3, 4);
    const Mat c35 = random_mat(rng, 3, 5);
    const Mat c33 = random_mat(rng, 3, 3);

    SUBCASE("add/sub/scale/hadamard") {
        auto f = [&](const Mat& x) {
            Tape t;
            Var v = t.leaf(x);
            Var y = hadamard(add(v, t.constant(b0)),
                             sub(scale(v, 1.7), t.constant(0.3 * b0)));
            Tape* tp = &t;
            Var loss = reduce_ip(*tp, y, c34);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(a0);
        Var y = hadamard(add(v, t.constant(b0)),
                         sub(scale(v, 1.7), t.constant(0.3 * b0)));
        Var loss = reduce_ip(t, y, c34);
        t.backward(loss);
        check_grad(f, a0, t.grad(v));
    }

    SUBCASE("matmul") {
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss = reduce_ip(t, matmul(t.leaf(x), t.constant(w0)), c35);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(a0);
        Var loss = reduce_ip(t, matmul(v, t.constant(w0)), c35);
        t.backward(loss);
        check_grad(f, a0, t.grad(v));
    }

    SUBCASE("matmul right argument") {
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss = reduce_ip(t, matmul(t.constant(a0), t.leaf(x)), c35);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(w0);
        Var loss = reduce_ip(t, matmul(t.constant(a0), v), c35);
        t.backward(loss);
        check_grad(f, w0, t.grad(v));
    }

    SUBCASE("matmul_nt") {
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss = reduce_ip(t, matmul_nt(t.leaf(x), t.constant(b0)), c33);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(a0);
        Var loss = reduce_ip(t, matmul_nt(v, t.constant(b0)), c33);
        t.backward(loss);
        check_grad(f, a0, t.grad(v));
    }
}

TEST_CASE("row broadcast, relu, slicing, concat, reshape, mean") {
    Rng rng(11);
    const Mat a0 = random_mat(rng, 4, 6);
    const Mat row0 = random_mat(rng, 1, 6);

    SUBCASE("add_row_broadcast w.r.t. row") {
        const Mat c = random_mat(rng, 4, 6);
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss =
                reduce_ip(t, add_row_broadcast(t.constant(a0), t.leaf(x)), c);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(row0);
        Var loss = reduce_ip(t, add_row_broadcast(t.constant(a0), v), c);
        t.backward(loss);
        check_grad(f, row0, t.grad(v));
    }

    SUBCASE("relu (away from kink)") {
        Mat x0 = a0;
        for (Eigen::Index i = 0; i < x0.size(); ++i) {
            if (std::abs(x0(i)) < 1e-2) {
                x0(i) = 0.5;
            }
        }
        const Mat c = random_mat(rng, 4, 6);
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss = reduce_ip(t, relu(t.leaf(x)), c);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(x0);
        Var loss = reduce_ip(t, relu(v), c);
        t.backward(loss);
        check_grad(f, x0, t.grad(v));
    }

    SUBCASE("slice + concat + reshape + mean_rows pipeline") {
        const Mat c = random_mat(rng, 2, 6);
        auto build = [&](Tape& t, Var v) {
            Var left = slice_cols(v, 0, 3);
            Var right = slice_cols(v, 3, 3);
            Var swapped = concat_cols(t, {right, left});
            Var top = slice_rows(swapped, 0, 2);
            Var bottom = slice_rows(swapped, 2, 2);
            Var stacked = concat_rows(t, {bottom, top});
            Var wide = reshape_rowmajor(stacked, 2, 12);
            Var narrow = reshape_rowmajor(wide, 4, 6);
            Var pooled = mean_rows(narrow);
            Var tiled = concat_rows(t, {pooled, pooled});
            return reduce_ip(t, tiled, c);
        };
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss = build(t, t.leaf(x));
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(a0);
        Var loss = build(t, v);
        t.backward(loss);
        check_grad(f, a0, t.grad(v));
    }
}

TEST_CASE("softmax, layer norm, embedding") {
    Rng rng(13);

    SUBCASE("row_softmax with causal mask") {
        const Mat x0 = random_mat(rng, 4, 4, 2.0);
        Mat mask = Mat::Zero(4, 4);
        for (int i = 0; i < 4; ++i) {
            for (int j = i + 1; j < 4; ++j) {
                mask(i, j) = -std::numeric_limits<double>::infinity();
            }
        }
        const Mat c = random_mat(rng, 4, 4);
        auto f = [&](const Mat& x) {
            Tape t;
            Var loss = reduce_ip(t, row_softmax(t.leaf(x), &mask), c);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(x0);
        Var p = row_softmax(v, &mask);
        // rows are distributions over the unmasked prefix
        for (int i = 0; i < 4; ++i) {
            CHECK(t.val(p).row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
            for (int j = i + 1; j < 4; ++j) {
                CHECK(t.val(p)(i, j) == 0.0);
            }
        }
        Var loss = reduce_ip(t, p, c);
        t.backward(loss);
        check_grad(f, x0, t.grad(v));
    }

    SUBCASE("layer_norm w.r.t. input, gain and shift") {
        const Mat x0 = random_mat(rng, 3, 5);
        const Mat g0 = random_mat(rng, 1, 5) + Mat::Ones(1, 5);
        const Mat s0 = random_mat(rng, 1, 5);
        const Mat c = random_mat(rng, 3, 5);
        {
            auto f = [&](const Mat& x) {
                Tape t;
                Var loss = reduce_ip(
                    t, layer_norm(t.leaf(x), t.constant(g0), t.constant(s0)),
                    c);
                return t.val(loss)(0, 0);
            };
            Tape t;
            Var v = t.leaf(x0);
            Var loss =
                reduce_ip(t, layer_norm(v, t.constant(g0), t.constant(s0)), c);
            t.backward(loss);
            check_grad(f, x0, t.grad(v), 1e-6, 1e-5);
        }
        {
            auto f = [&](const Mat& g) {
                Tape t;
                Var loss = reduce_ip(
                    t, layer_norm(t.constant(x0), t.leaf(g), t.constant(s0)),
                    c);
                return t.val(loss)(0, 0);
            };
            Tape t;
            Var vg = t.leaf(g0);
            Var loss =
                reduce_ip(t, layer_norm(t.constant(x0), vg, t.constant(s0)), c);
            t.backward(loss);
            check_grad(f, g0, t.grad(vg));
        }
        {
            auto f = [&](const Mat& s) {
                Tape t;
                Var loss = reduce_ip(
                    t, layer_norm(t.constant(x0), t.constant(g0), t.leaf(s)),
                    c);
                return t.val(loss)(0, 0);
            };
            Tape t;
            Var vs = t.leaf(s0);
            Var loss =
                reduce_ip(t, layer_norm(t.constant(x0), t.constant(g0), vs), c);
            t.backward(loss);
            check_grad(f, s0, t.grad(vs));
        }
    }

    SUBCASE("embedding gathers and scatter-adds") {
        const Mat table0 = random_mat(rng, 6, 3);
        const std::vector<int> ids = {4, 0, 4, 2};
        const Mat c = random_mat(rng, 4, 3);
        auto f = [&](const Mat& tab) {
            Tape t;
            Var loss = reduce_ip(t, embedding(t.leaf(tab), ids), c);
            return t.val(loss)(0, 0);
        };
        Tape t;
        Var v = t.leaf(table0);
        Var loss = reduce_ip(t, embedding(v, ids), c);
        t.backward(loss);
        check_grad(f, table0, t.grad(v));
    }
}

TEST_CASE("loss ops match finite differences and hand values") {
    Rng rng(17);

    SUBCASE("cross_entropy") {
        const Mat z0 = random_mat(rng, 5, 7, 2.0);
        const std::vector<int> y = {3, 0, 6, 2, 5};
        const std::vector<uint8_t> mask = {1, 1, 0, 1, 1};
        auto f = [&](const Mat& z) {
            Tape t;
            return t.val(cross_entropy(t.leaf(z), y, mask))(0, 0);
        };
        Tape t;
        Var v = t.leaf(z0);
        Var loss = cross_entropy(v, y, mask);
        t.backward(loss);
        check_grad(f, z0, t.grad(v));

        // uniform logits -> ln(vocab)
        Tape t2;
        Var u = t2.constant(Mat::Zero(3, 7));
        CHECK(t2.val(cross_entropy(u, {0, 1, 2}))(0, 0) ==
              doctest::Approx(std::log(7.0)).epsilon(1e-12));

        Tape t3;
        CHECK_THROWS_AS(cross_entropy(t3.constant(Mat::Zero(2, 4)), {0, 1},
                                      {0, 0}),
                        DataError);
    }

    SUBCASE("soft_cross_entropy") {
        const Mat s0 = random_mat(rng, 4, 6, 2.0);
        const Mat t0 = random_mat(rng, 4, 6, 2.0);
        const double temp = 2.5;
        auto f = [&](const Mat& s) {
            Tape t;
            return t.val(soft_cross_entropy(t.leaf(s), t0, {}, temp))(0, 0);
        };
        Tape t;
        Var v = t.leaf(s0);
        Var loss = soft_cross_entropy(v, t0, {}, temp);
        t.backward(loss);
        check_grad(f, s0, t.grad(v));

        // student == teacher -> entropy of the softened teacher distribution
        Tape t2;
        Var same = t2.constant(t0);
        const double got =
            t2.val(soft_cross_entropy(same, t0, {}, temp))(0, 0);
        double want = 0.0;
        for (int i = 0; i < 4; ++i) {
            Eigen::RowVectorXd z = t0.row(i) / temp;
            Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
            Eigen::RowVectorXd p = e / e.sum();
            for (int j = 0; j < 6; ++j) {
                want -= p(j) * std::log(p(j));
            }
        }
        want /= 4.0;
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }

    SUBCASE("neg_cosine_rows") {
        const Mat s0 = random_mat(rng, 5, 4);
        const Mat t0 = random_mat(rng, 5, 4);
        auto f = [&](const Mat& s) {
            Tape t;
            return t.val(neg_cosine_rows(t.leaf(s), t0))(0, 0);
        };
        Tape t;
        Var v = t.leaf(s0);
        Var loss = neg_cosine_rows(v, t0);
        t.backward(loss);
        check_grad(f, s0, t.grad(v), 1e-6, 1e-5);

        // equal rows -> -1; opposite rows -> +1; zero student row -> 0
        Tape t2;
        CHECK(t2.val(neg_cosine_rows(t2.constant(t0), t0))(0, 0) ==
              doctest::Approx(-1.0).epsilon(1e-12));
        Tape t3;
        CHECK(t3.val(neg_cosine_rows(t3.constant(Mat(-t0)), t0))(0, 0) ==
              doctest::Approx(1.0).epsilon(1e-12));
        Tape t4;
        int zeroed = -1;
        CHECK(t4.val(neg_cosine_rows(t4.constant(Mat::Zero(5, 4)), t0, {},
                                     &zeroed))(0, 0) == 0.0);
        CHECK(zeroed == 5);
    }

    SUBCASE("mse_against") {
        const Mat s0 = random_mat(rng, 3, 3);
        const Mat t0 = random_mat(rng, 3, 3);
        auto f = [&](const Mat& s) {
            Tape t;
            return t.val(mse_against(t.leaf(s), t0))(0, 0);
        };
        Tape t;
        Var v = t.leaf(s0);
        Var loss = mse_against(v, t0);
        t.backward(loss);
        check_grad(f, s0, t.grad(v));

        Tape t2;
        Mat diff = Mat::Constant(2, 2, 0.1);
        CHECK(t2.val(mse_against(t2.constant(t0.topLeftCorner(2, 2) + diff),
                                 t0.topLeftCorner(2, 2)))(0, 0) ==
              doctest::Approx(0.01).epsilon(1e-12));
    }
}

TEST_CASE("constant-only graphs make no gradient work") {
    Tape t;
    Var a = t.constant(Mat::Ones(2, 2));
    Var b = t.constant(Mat::Ones(2, 2));
    Var y = matmul(add(a, b), b);
    CHECK_FALSE(t.requires_grad(y));
}
