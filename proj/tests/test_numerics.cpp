#include <doctest.h>

#include <cmath>

#include "t2m/error.hpp"
#include "t2m/matrix.hpp"
#include "t2m/numerics.hpp"
#include "t2m/rng.hpp"

using namespace t2m;

namespace {

// Independent oracle: naive triple loop, written without reference to the
// library implementation.
Matrix affine_oracle(const Matrix& X, const Matrix& W, const std::vector<double>& b) {
    Matrix Y(X.rows(), W.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) {
        for (std::size_t o = 0; o < W.rows(); ++o) {
            double acc = 0.0;
            for (std::size_t j = 0; j < X.cols(); ++j) acc += W(o, j) * X(i, j);
            Y(i, o) = acc + b[o];
        }
    }
    return Y;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("affine identity and hand-computed cases") {
    const Matrix X1 = Matrix::from_rows({{1.0, 2.0}});
    const std::vector<double> zero2{0.0, 0.0};
    const Matrix Y1 = affine(X1, Matrix::identity(2), zero2);
    CHECK(Y1(0, 0) == 1.0);
    CHECK(Y1(0, 1) == 2.0);

    const Matrix X2 = Matrix::from_rows({{1.0, 1.0}});
    const Matrix W2 = Matrix::from_rows({{1.0, 1.0}, {2.0, 2.0}});
    const std::vector<double> b2{0.0, 1.0};
    const Matrix Y2 = affine(X2, W2, b2);
    CHECK(Y2(0, 0) == doctest::Approx(2.0));
    CHECK(Y2(0, 1) == doctest::Approx(5.0));
}

TEST_CASE("affine matches the loop oracle on random input") {
    Rng rng(11);
    const Matrix X = random_matrix(rng, 3, 4);
    const Matrix W = random_matrix(rng, 5, 4);
    std::vector<double> b(5);
    for (double& v : b) v = rng.normal();
    CHECK(max_abs_diff(affine(X, W, b), affine_oracle(X, W, b)) <= 1e-12);
}

TEST_CASE("affine is linear in its input") {
    Rng rng(12);
    const Matrix X = random_matrix(rng, 4, 3);
    const Matrix Y = random_matrix(rng, 4, 3);
    const Matrix W = random_matrix(rng, 6, 3);
    const std::vector<double> zero(6, 0.0);
    const double a = 1.7, c = -0.4;

    Matrix mix(4, 3);
    for (std::size_t i = 0; i < mix.size(); ++i) {
        mix.data()[i] = a * X.data()[i] + c * Y.data()[i];
    }
    const Matrix lhs = affine(mix, W, zero);
    const Matrix ax = affine(X, W, zero);
    const Matrix cy = affine(Y, W, zero);
    double worst = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        worst = std::max(worst, std::abs(lhs.data()[i] - a * ax.data()[i] - c * cy.data()[i]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("affine rejects mismatched shapes, naming both") {
    const Matrix X(2, 3);
    const Matrix W(4, 5);
    const std::vector<double> b(4, 0.0);
    CHECK_THROWS_AS(affine(X, W, b), DimError);
    try {
        affine(X, W, b);
    } catch (const DimError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }
}

TEST_CASE("relu") {
    const Matrix X = Matrix::from_rows({{-1.0, 2.0}});
    const Matrix Y = relu(X);
    CHECK(Y(0, 0) == 0.0);
    CHECK(Y(0, 1) == 2.0);

    Rng rng(13);
    Matrix pos = random_matrix(rng, 3, 3);
    for (double& v : pos.data()) v = std::abs(v);
    CHECK(max_abs_diff(relu(pos), pos) == 0.0);

    // relu(x) + relu(-x) = |x|
    const Matrix Z = random_matrix(rng, 3, 5);
    Matrix neg = Z;
    for (double& v : neg.data()) v = -v;
    const Matrix rp = relu(Z), rn = relu(neg);
    for (std::size_t i = 0; i < Z.size(); ++i) {
        CHECK(rp.data()[i] + rn.data()[i] == doctest::Approx(std::abs(Z.data()[i])));
    }
}

TEST_CASE("softmax cross entropy: uniform and saturated cases") {
    const std::vector<double> uniform{0.0, 0.0};
    const ScalarLossGrad lg = softmax_cross_entropy(uniform, 0);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(lg.grad[0] == doctest::Approx(-0.5));
    CHECK(lg.grad[1] == doctest::Approx(0.5));

    const std::vector<double> saturated{100.0, 0.0};
    CHECK(softmax_cross_entropy(saturated, 0).loss < 1e-9);

    CHECK_THROWS_AS(softmax_cross_entropy(uniform, 2), IndexError);
}

TEST_CASE("softmax gradient matches finite differences and sums to zero") {
    Rng rng(14);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> logits(4);
        for (double& v : logits) v = rng.normal() * 2.0;
        const std::size_t label = rng.uniform_index(4);

        const ScalarLossGrad lg = softmax_cross_entropy(logits, label);
        double sum = 0.0;
        for (double g : lg.grad) sum += g;
        CHECK(std::abs(sum) <= 1e-12);

        const auto numeric = finite_diff_grad(
            [&](std::span<const double> x) {
                return softmax_cross_entropy(x, label).loss;
            },
            logits, 1e-6);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double denom = std::max(1.0, std::abs(numeric[i]));
            CHECK(std::abs(lg.grad[i] - numeric[i]) / denom < 1e-6);
        }
    }
}

TEST_CASE("sgd momentum step: basic updates") {
    std::vector<double> p{1.0};
    std::vector<double> g{1.0};
    OptimState state(1, {.learning_rate = 0.1, .momentum = 0.0, .weight_decay = 0.0});
    sgd_momentum_step(p, g, state);
    CHECK(p[0] == doctest::Approx(0.9));

    // zero gradient, zero velocity: fixed point
    std::vector<double> q{2.5};
    std::vector<double> zg{0.0};
    OptimState s2(1, {.learning_rate = 0.1, .momentum = 0.9, .weight_decay = 0.0});
    sgd_momentum_step(q, zg, s2);
    CHECK(q[0] == 2.5);
}

TEST_CASE("sgd momentum matches a hand-unrolled recurrence") {
    const double lr = 0.05, mom = 0.9, wd = 0.01;
    const double g1 = 0.3, g2 = -0.7;
    double p_ref = 1.5, v_ref = 0.0;
    v_ref = mom * v_ref + (g1 + wd * p_ref);
    p_ref = p_ref - lr * v_ref;
    v_ref = mom * v_ref + (g2 + wd * p_ref);
    p_ref = p_ref - lr * v_ref;

    std::vector<double> p{1.5};
    OptimState state(1, {.learning_rate = lr, .momentum = mom, .weight_decay = wd});
    std::vector<double> g{g1};
    sgd_momentum_step(p, g, state);
    g[0] = g2;
    sgd_momentum_step(p, g, state);
    CHECK(std::abs(p[0] - p_ref) <= 1e-15);
}

TEST_CASE("sgd rejects mismatched lengths and bad hyperparameters") {
    std::vector<double> p{1.0, 2.0};
    std::vector<double> g{1.0};
    OptimState state(2, {});
    CHECK_THROWS_AS(sgd_momentum_step(p, g, state), DimError);
    CHECK_THROWS_AS(OptimState(1, {.learning_rate = -0.1, .momentum = 0.0, .weight_decay = 0.0}),
                    ConfigError);
    CHECK_THROWS_AS(OptimState(1, {.learning_rate = 0.1, .momentum = 1.0, .weight_decay = 0.0}),
                    ConfigError);
    CHECK_THROWS_AS(OptimState(1, {.learning_rate = 0.1, .momentum = 0.0, .weight_decay = -1.0}),
                    ConfigError);
}

TEST_CASE("plain sgd reduces a convex quadratic monotonically") {
    // f(p) = sum c_i p_i^2 with max curvature 2*c_max; lr below 1/c_max converges
    const std::vector<double> curv{0.5, 1.0, 2.0};
    std::vector<double> p{3.0, -2.0, 1.5};
    OptimState state(3, {.learning_rate = 0.2, .momentum = 0.0, .weight_decay = 0.0});
    auto loss = [&](const std::vector<double>& x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += curv[i] * x[i] * x[i];
        return acc;
    };
    double prev = loss(p);
    for (int step = 0; step < 50; ++step) {
        std::vector<double> g(3);
        for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * curv[i] * p[i];
        sgd_momentum_step(p, g, state);
        const double cur = loss(p);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("decay mask exempts flagged entries from weight decay") {
    std::vector<double> p{1.0, 1.0};
    std::vector<double> g{0.0, 0.0};
    std::vector<std::uint8_t> mask{1, 0};
    OptimState state(2, {.learning_rate = 0.1, .momentum = 0.0, .weight_decay = 0.5});
    sgd_momentum_step(p, g, state, mask);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(p[1] == 1.0);
}

TEST_CASE("finite differences: analytic derivative and constant function") {
    const std::vector<double> x{3.0};
    const auto g = finite_diff_grad(
        [](std::span<const double> v) { return v[0] * v[0]; }, x, 1e-5);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));

    const std::vector<double> y{1.0, -2.0, 0.5};
    const auto zero = finite_diff_grad(
        [](std::span<const double>) { return 4.2; }, y, 1e-5);
    for (double v : zero) CHECK(v == 0.0);

    CHECK_THROWS_AS(finite_diff_grad(
                        [](std::span<const double> v) { return std::log(v[0]); },
                        std::vector<double>{0.0}, 1e-5),
                    NumericError);
}

TEST_CASE("public numerics ops emit finite values for finite inputs") {
    Rng rng(15);
    for (int rep = 0; rep < 10; ++rep) {
        const Matrix X = random_matrix(rng, 3, 4);
        const Matrix W = random_matrix(rng, 2, 4);
        std::vector<double> b(2);
        for (double& v : b) v = rng.normal() * 100.0;
        CHECK(affine(X, W, b).all_finite());
        CHECK(relu(X).all_finite());

        std::vector<double> logits(6);
        for (double& v : logits) v = rng.normal() * 50.0;
        const auto lg = softmax_cross_entropy(logits, rng.uniform_index(6));
        CHECK(std::isfinite(lg.loss));
        for (double g : lg.grad) CHECK(std::isfinite(g));
    }
}
