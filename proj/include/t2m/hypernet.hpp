#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "t2m/matrix.hpp"
#include "t2m/setlayers.hpp"

namespace t2m {

// Shape of the classifier the hypernetwork emits: either a single linear
// layer over the feature vector, or a hidden layer followed by the
// per-class output layer.
struct TargetSpec {
    std::size_t feature_dim = 1;  // m, width of the ingested feature vectors
    int layers = 1;               // 1 or 2
    std::size_t hidden_dim = 0;   // h, required when layers == 2
    bool emit_biases = true;

    void validate() const;
    // Width of one emitted output-layer row.
    std::size_t last_width() const {
        return layers == 2 ? hidden_dim : feature_dim;
    }
    // Total emitted floats for a k-class bundle.
    std::size_t bundle_size(std::size_t k) const;

    bool operator==(const TargetSpec&) const = default;
};

// The emitted classifier weights. w_last holds one row per class; the
// penultimate layer is shared by all classes and present only in 2-layer
// mode.
struct WeightBundle {
    Matrix w_last;               // k x last_width
    std::vector<double> b_last;  // k, empty when biases are off
    Matrix w_pen;                // hidden_dim x feature_dim, empty in 1-layer mode
    std::vector<double> b_pen;   // hidden_dim, empty unless 2-layer with biases

    std::size_t k() const { return w_last.rows(); }
    void check_against(const TargetSpec& spec) const;
};

// Flat layout: w_last row-major, b_last, w_pen row-major, b_pen.
std::vector<double> flatten_bundle(const WeightBundle& w);
WeightBundle unflatten_bundle(std::span<const double> flat, const TargetSpec& spec,
                              std::size_t k);

// Learnable parameters of the equivariant hypernetwork: a trunk of
// equivariant layers (ReLU between and after), an equivariant head that
// emits one output-layer row per class, and, in 2-layer mode, an invariant
// head that emits the shared hidden layer.
struct HyperNetParams {
    std::vector<EquivariantLayerParams> trunk;
    EquivariantHeadParams last_head;
    std::optional<InvariantHeadParams> pen_head;

    std::size_t descriptor_dim() const;
    std::size_t trunk_out_dim() const;
    std::vector<std::size_t> trunk_widths() const;
    void check_against(const TargetSpec& spec) const;
};

// Gradients share the parameter layout.
using HyperNetGrads = HyperNetParams;

struct EmitCache {
    std::vector<EvCache> trunk;
    Matrix trunk_out;
    EvHeadCache last;
    InvCache pen;  // valid iff spec.layers == 2
    TargetSpec spec;
    Pooling pooling = Pooling::sum;
    bool valid = false;
};

// Runs the trunk over the k descriptors and maps trunk outputs to the weight
// bundle: output-layer row i comes from element i, the hidden layer from the
// pooled invariant head. w_pen is reshaped row-major from the head output.
WeightBundle emit_weights(const Matrix& descriptors, const HyperNetParams& params,
                          const TargetSpec& spec, Pooling pooling = Pooling::sum,
                          EmitCache* cache = nullptr);

// Reverse-mode pass through emit_weights. d_bundle must have the shapes the
// matching forward call produced.
HyperNetGrads hypernet_backward(const WeightBundle& d_bundle, const EmitCache& cache,
                                const HyperNetParams& params);

// Weights ~ U(-s, s) with s = sqrt(1/fan_in), biases zero. The final linear
// map of each prediction head is scaled by 0.1 so freshly emitted classifiers
// start with small logits.
HyperNetParams init_hypernet(const TargetSpec& spec, std::size_t descriptor_dim,
                             std::span<const std::size_t> trunk_widths,
                             std::uint64_t seed);

// Ablation variant: an ordinary MLP over the concatenated descriptors,
// valid only for the set size it was built for and not permutation-symmetric.
struct AffineParams {
    Matrix weight;
    std::vector<double> bias;
};

struct NonEquivariantParams {
    std::vector<AffineParams> layers;  // ReLU between layers, last layer linear
    std::size_t set_size = 0;          // the k this network was built for

    std::size_t descriptor_dim() const;
    std::vector<std::size_t> hidden_widths() const;
};

using NonEvGrads = std::vector<AffineParams>;

struct NonEvCache {
    std::vector<std::vector<double>> inputs;  // input to each layer
    std::vector<std::vector<double>> pres;    // pre-activation per layer
    TargetSpec spec;
    bool valid = false;
};

// Flat output layout: w_pen, b_pen, b_last, then the per-class weight rows in
// the tail.
WeightBundle emit_weights_nonev(const Matrix& descriptors,
                                const NonEquivariantParams& params,
                                const TargetSpec& spec, NonEvCache* cache = nullptr);

NonEvGrads nonev_backward(const WeightBundle& d_bundle, const NonEvCache& cache,
                          const NonEquivariantParams& params);

NonEquivariantParams init_nonev(const TargetSpec& spec, std::size_t descriptor_dim,
                                std::size_t set_size,
                                std::span<const std::size_t> hidden_widths,
                                std::uint64_t seed);

// Flat parameter vector: per trunk layer element/context/bias, then head
// weight/bias, then (2-layer) inner element/context/bias, post, post bias.
// The order is fixed; checkpoints and the optimizer both rely on it.
std::vector<double> flatten_params(const HyperNetParams& p);
void set_params(HyperNetParams& p, std::span<const double> flat);
std::vector<std::uint8_t> decay_mask(const HyperNetParams& p);

std::vector<double> flatten_params(const NonEquivariantParams& p);
void set_params(NonEquivariantParams& p, std::span<const double> flat);
std::vector<std::uint8_t> decay_mask(const NonEquivariantParams& p);

enum class HyperKind { equivariant, non_equivariant };

struct ModelCache {
    EmitCache ev;
    NonEvCache nonev;
};

// A trained hypernetwork of either kind together with the target spec and
// pooling mode it was built with.
struct HyperModel {
    std::variant<HyperNetParams, NonEquivariantParams> params;
    TargetSpec spec;
    Pooling pooling = Pooling::sum;

    HyperKind kind() const {
        return std::holds_alternative<HyperNetParams>(params)
                   ? HyperKind::equivariant
                   : HyperKind::non_equivariant;
    }
    const HyperNetParams& ev() const { return std::get<HyperNetParams>(params); }
    HyperNetParams& ev() { return std::get<HyperNetParams>(params); }
    const NonEquivariantParams& nonev() const {
        return std::get<NonEquivariantParams>(params);
    }

    std::size_t descriptor_dim() const;
    bool supports_k(std::size_t k) const;

    WeightBundle emit(const Matrix& descriptors, ModelCache* cache = nullptr) const;
    // Gradient w.r.t. all parameters, flattened with flatten().
    std::vector<double> backward_flat(const WeightBundle& d_bundle,
                                      const ModelCache& cache) const;
    std::vector<double> flatten() const;
    void set_flat(std::span<const double> flat);
    std::vector<std::uint8_t> mask() const;
};

}  // namespace t2m
