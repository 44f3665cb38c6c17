#include "t2m/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "t2m/error.hpp"

namespace t2m {

Matrix affine(const Matrix& X, const Matrix& W, std::span<const double> b) {
    if (X.cols() != W.cols()) {
        throw DimError("affine: input " + X.shape_str() + " vs weight " + W.shape_str());
    }
    if (b.size() != W.rows()) {
        throw DimError("affine: bias length " + std::to_string(b.size()) +
                       " vs weight " + W.shape_str());
    }
    Matrix Y(X.rows(), W.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) {
        for (std::size_t o = 0; o < W.rows(); ++o) {
            double acc = b[o];
            for (std::size_t j = 0; j < X.cols(); ++j) acc += W(o, j) * X(i, j);
            Y(i, o) = acc;
        }
    }
    return Y;
}

Matrix relu(const Matrix& X) {
    Matrix Y = X;
    for (double& v : Y.data()) v = std::max(0.0, v);
    return Y;
}

ScalarLossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
    if (logits.empty()) throw ContractError("softmax_cross_entropy: empty logits");
    if (label >= logits.size()) {
        throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(logits.size()) + " classes");
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - top);

    ScalarLossGrad out;
    out.loss = std::log(denom) - (logits[label] - top);
    out.grad.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out.grad[j] = std::exp(logits[j] - top) / denom;
    }
    out.grad[label] -= 1.0;
    return out;
}

OptimState::OptimState(std::size_t n_params, const OptimHyper& h)
    : velocity(n_params, 0.0), hyper(h) {
    if (h.learning_rate < 0.0) throw ConfigError("optimizer: learning_rate must be >= 0");
    if (h.momentum < 0.0 || h.momentum >= 1.0) {
        throw ConfigError("optimizer: momentum must be in [0, 1)");
    }
    if (h.weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
}

namespace {

void check_step_sizes(std::size_t params, std::size_t grads, std::size_t velocity) {
    if (params != grads || params != velocity) {
        throw DimError("sgd_momentum_step: params " + std::to_string(params) +
                       ", grads " + std::to_string(grads) + ", velocity " +
                       std::to_string(velocity));
    }
}

}  // namespace

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       OptimState& state) {
    check_step_sizes(params.size(), grads.size(), state.velocity.size());
    const auto& h = state.hyper;
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.velocity[i] =
            h.momentum * state.velocity[i] + (grads[i] + h.weight_decay * params[i]);
        params[i] -= h.learning_rate * state.velocity[i];
    }
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       OptimState& state, std::span<const std::uint8_t> decay_mask) {
    check_step_sizes(params.size(), grads.size(), state.velocity.size());
    if (decay_mask.size() != params.size()) {
        throw DimError("sgd_momentum_step: decay mask length " +
                       std::to_string(decay_mask.size()) + " vs params " +
                       std::to_string(params.size()));
    }
    const auto& h = state.hyper;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double decay = decay_mask[i] ? h.weight_decay * params[i] : 0.0;
        state.velocity[i] = h.momentum * state.velocity[i] + (grads[i] + decay);
        params[i] -= h.learning_rate * state.velocity[i];
    }
}

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h) {
    if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be > 0");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = f(probe);
        probe[i] = saved - h;
        const double down = f(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                               std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace t2m
