#include <algorithm>
#include <cmath>

#include "t2m/engine.hpp"
#include "t2m/error.hpp"

namespace t2m {

namespace {

// Solves A X = B in place (A is d x d, B is d x p) by Gaussian elimination
// with partial pivoting.
Matrix gauss_solve(Matrix A, Matrix B) {
    const std::size_t d = A.rows();
    if (A.cols() != d || B.rows() != d) {
        throw DimError("gauss_solve: A " + A.shape_str() + " vs B " + B.shape_str());
    }
    double scale = 0.0;
    for (double v : A.data()) scale = std::max(scale, std::abs(v));
    const double tol = std::max(scale, 1.0) * 1e-12;

    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r) {
            if (std::abs(A(r, col)) > std::abs(A(pivot, col))) pivot = r;
        }
        if (std::abs(A(pivot, col)) <= tol) {
            throw NumericError(
                "normal equations are singular; refit with ridge lambda > 0");
        }
        if (pivot != col) {
            for (std::size_t c = 0; c < d; ++c) std::swap(A(col, c), A(pivot, c));
            for (std::size_t c = 0; c < B.cols(); ++c) std::swap(B(col, c), B(pivot, c));
        }
        const double inv = 1.0 / A(col, col);
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = A(r, col) * inv;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < d; ++c) A(r, c) -= f * A(col, c);
            for (std::size_t c = 0; c < B.cols(); ++c) B(r, c) -= f * B(col, c);
        }
    }
    Matrix X(d, B.cols());
    for (std::size_t r = 0; r < d; ++r) {
        const double inv = 1.0 / A(r, r);
        for (std::size_t c = 0; c < B.cols(); ++c) X(r, c) = B(r, c) * inv;
    }
    return X;
}

std::vector<double> class_mean_feature(const ClassRecord& rec) {
    const Matrix& rows = rec.train_rows;
    std::vector<double> mean(rows.cols(), 0.0);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        for (std::size_t c = 0; c < rows.cols(); ++c) mean[c] += rows(r, c);
    }
    for (double& v : mean) v /= static_cast<double>(rows.rows());
    return mean;
}

std::vector<double> class_mean_descriptor(const ClassRecord& rec) {
    std::vector<double> mean(rec.descriptors.front().size(), 0.0);
    for (const auto& d : rec.descriptors) {
        for (std::size_t i = 0; i < d.size(); ++i) mean[i] += d[i];
    }
    for (double& v : mean) v /= static_cast<double>(rec.descriptors.size());
    return mean;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::vector<double> apply_map(const Matrix& map, std::span<const double> x) {
    std::vector<double> y(map.rows(), 0.0);
    for (std::size_t r = 0; r < map.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < map.cols(); ++c) acc += map(r, c) * x[c];
        y[r] = acc;
    }
    return y;
}

}  // namespace

FixedRepBaseline fit_fixed_rep(const ClassPool& pool, MapDirection direction,
                               double ridge_lambda) {
    if (ridge_lambda < 0.0) throw ConfigError("fit_fixed_rep: ridge lambda must be >= 0");
    pool.audit();
    if (pool.seen.empty()) throw ContractError("fit_fixed_rep: no seen classes to fit on");

    // (input, output) pairs per seen class in the chosen direction.
    std::vector<std::vector<double>> inputs, outputs;
    for (std::size_t c : pool.seen) {
        std::vector<double> mu = class_mean_feature(pool.classes[c]);
        std::vector<double> s = class_mean_descriptor(pool.classes[c]);
        if (direction == MapDirection::text_to_visual) {
            inputs.push_back(std::move(s));
            outputs.push_back(std::move(mu));
        } else {
            inputs.push_back(std::move(mu));
            outputs.push_back(std::move(s));
        }
    }

    const std::size_t d = inputs.front().size();
    const std::size_t p = outputs.front().size();
    Matrix G(d, d);
    for (std::size_t i = 0; i < d; ++i) G(i, i) = ridge_lambda;
    Matrix R_t(d, p);  // transpose of the cross moment, shaped for the solver
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) G(i, j) += inputs[n][i] * inputs[n][j];
            for (std::size_t o = 0; o < p; ++o) R_t(i, o) += inputs[n][i] * outputs[n][o];
        }
    }

    const Matrix X = gauss_solve(std::move(G), std::move(R_t));  // d x p
    FixedRepBaseline baseline;
    baseline.direction = direction;
    baseline.map = Matrix(p, d);
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < d; ++c) baseline.map(r, c) = X(c, r);
    }
    return baseline;
}

SetClassifier baseline_classifier(const FixedRepBaseline& baseline) {
    return [baseline](const Matrix& S, const Matrix& X) {
        const std::size_t k = S.rows();
        std::vector<std::size_t> pred(X.rows(), 0);
        if (baseline.direction == MapDirection::text_to_visual) {
            // Anchors live in feature space.
            std::vector<std::vector<double>> anchors;
            anchors.reserve(k);
            for (std::size_t i = 0; i < k; ++i) anchors.push_back(apply_map(baseline.map, S.row(i)));
            for (std::size_t r = 0; r < X.rows(); ++r) {
                std::size_t best = 0;
                double best_sim = cosine_similarity(X.row(r), anchors[0]);
                for (std::size_t i = 1; i < k; ++i) {
                    const double sim = cosine_similarity(X.row(r), anchors[i]);
                    if (sim > best_sim) {
                        best_sim = sim;
                        best = i;
                    }
                }
                pred[r] = best;
            }
        } else {
            // Project each feature row into descriptor space.
            for (std::size_t r = 0; r < X.rows(); ++r) {
                const std::vector<double> proj = apply_map(baseline.map, X.row(r));
                std::size_t best = 0;
                double best_sim = cosine_similarity(proj, S.row(0));
                for (std::size_t i = 1; i < k; ++i) {
                    const double sim = cosine_similarity(proj, S.row(i));
                    if (sim > best_sim) {
                        best_sim = sim;
                        best = i;
                    }
                }
                pred[r] = best;
            }
        }
        return pred;
    };
}

}  // namespace t2m
