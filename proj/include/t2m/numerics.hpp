#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "t2m/matrix.hpp"

namespace t2m {

// Row-wise affine map: output row i = W * X.row(i) + b.
// X is k x d, W is d_out x d, b has length d_out.
Matrix affine(const Matrix& X, const Matrix& W, std::span<const double> b);

// Elementwise max(0, x).
Matrix relu(const Matrix& X);

struct ScalarLossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// Numerically stable cross entropy of softmax(logits) against a hard label.
// grad = softmax(logits) - onehot(label).
ScalarLossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label);

struct OptimHyper {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.01;
};

// Momentum buffer plus hyperparameters for one flat parameter vector.
struct OptimState {
    std::vector<double> velocity;
    OptimHyper hyper;

    OptimState(std::size_t n_params, const OptimHyper& h);
};

// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       OptimState& state);

// Same update, but weight decay is applied only where decay_mask is nonzero
// (used to exempt biases).
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       OptimState& state, std::span<const std::uint8_t> decay_mask);

// Central-difference gradient of a scalar function, the reference oracle for
// every hand-written backward pass in this library.
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h);

}  // namespace t2m
