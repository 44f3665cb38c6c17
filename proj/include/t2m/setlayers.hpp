#pragma once

#include <span>
#include <vector>

#include "t2m/matrix.hpp"

namespace t2m {

// How the shared context vector is pooled from the set elements. Sum matches
// the reference architecture; mean keeps the context scale stable when the
// set size at evaluation differs from training.
enum class Pooling { sum, mean };

enum class Activation { identity, relu };

// One permutation-equivariant layer over a set of row vectors. Every element
// goes through the shared per-element map; the pooled context goes through a
// second map whose output is added back to each element.
struct EquivariantLayerParams {
    Matrix element;            // per-element shared map, d_out x d_in
    Matrix context;            // context map, d_out x d_in
    std::vector<double> bias;  // d_out

    void check() const;
    std::size_t in_dim() const { return element.cols(); }
    std::size_t out_dim() const { return element.rows(); }
};

struct EvCache {
    Matrix input;                 // k x d_in
    std::vector<double> pooled;   // pooled input, d_in
    Matrix pre;                   // k x d_out, before activation
    Activation act = Activation::identity;
    Pooling pooling = Pooling::sum;
};

// y_i = act(element * x_i + context * pool(x_1..x_k) + bias). The pool always
// includes x_i itself and runs in ascending element order.
Matrix ev_forward(const Matrix& X, const EquivariantLayerParams& P, Activation act,
                  Pooling pooling = Pooling::sum, EvCache* cache = nullptr);

struct EvBackward {
    Matrix d_input;
    EquivariantLayerParams d_params;
};

EvBackward ev_backward(const Matrix& dY, const EvCache& cache,
                       const EquivariantLayerParams& P);

// Permutation-invariant head: an equivariant layer followed by pooling over
// the set and one more linear map.
struct InvariantHeadParams {
    EquivariantLayerParams inner;
    Matrix post;                    // p x inner.out_dim
    std::vector<double> post_bias;  // p

    void check() const;
    std::size_t out_dim() const { return post.rows(); }
};

struct InvCache {
    EvCache inner;
    std::vector<double> pooled_out;  // pooled inner output, inner.out_dim
    std::size_t set_size = 0;
};

std::vector<double> inv_forward(const Matrix& X, const InvariantHeadParams& P,
                                Activation act = Activation::identity,
                                Pooling pooling = Pooling::sum,
                                InvCache* cache = nullptr);

struct InvBackward {
    Matrix d_input;
    InvariantHeadParams d_params;
};

InvBackward inv_backward(std::span<const double> dz, const InvCache& cache,
                         const InvariantHeadParams& P);

// Per-element linear head: row i of the output depends on row i of the input
// only, so permuting inputs permutes outputs identically.
struct EquivariantHeadParams {
    Matrix weight;             // p x d
    std::vector<double> bias;  // p

    void check() const;
    std::size_t out_dim() const { return weight.rows(); }
};

struct EvHeadCache {
    Matrix input;
};

Matrix evhead_forward(const Matrix& X, const EquivariantHeadParams& P,
                      EvHeadCache* cache = nullptr);

struct EvHeadBackward {
    Matrix d_input;
    EquivariantHeadParams d_params;
};

EvHeadBackward evhead_backward(const Matrix& dY, const EvHeadCache& cache,
                               const EquivariantHeadParams& P);

}  // namespace t2m
