#include "t2m/hypernet.hpp"

#include <cmath>
#include <string>

#include "t2m/error.hpp"
#include "t2m/numerics.hpp"
#include "t2m/rng.hpp"

namespace t2m {

namespace {

constexpr double kHeadInitScale = 0.1;

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double s) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-s, s);
    return m;
}

void append(std::vector<double>& out, const Matrix& m) {
    out.insert(out.end(), m.data().begin(), m.data().end());
}

void append(std::vector<double>& out, const std::vector<double>& v) {
    out.insert(out.end(), v.begin(), v.end());
}

void take(std::span<const double>& flat, Matrix& m) {
    if (flat.size() < m.size()) throw DimError("set_params: flat vector too short");
    std::copy(flat.begin(), flat.begin() + m.size(), m.data().begin());
    flat = flat.subspan(m.size());
}

void take(std::span<const double>& flat, std::vector<double>& v) {
    if (flat.size() < v.size()) throw DimError("set_params: flat vector too short");
    std::copy(flat.begin(), flat.begin() + v.size(), v.begin());
    flat = flat.subspan(v.size());
}

void mask_weights(std::vector<std::uint8_t>& out, const Matrix& m) {
    out.insert(out.end(), m.size(), 1);
}

void mask_biases(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
    out.insert(out.end(), v.size(), 0);
}

}  // namespace

void TargetSpec::validate() const {
    if (feature_dim < 1) throw ConfigError("target spec: feature_dim must be >= 1");
    if (layers != 1 && layers != 2) throw ConfigError("target spec: layers must be 1 or 2");
    if (layers == 2 && hidden_dim < 1) {
        throw ConfigError("target spec: hidden_dim must be >= 1 for a 2-layer target");
    }
}

std::size_t TargetSpec::bundle_size(std::size_t k) const {
    std::size_t n = k * last_width();
    if (emit_biases) n += k;
    if (layers == 2) {
        n += hidden_dim * feature_dim;
        if (emit_biases) n += hidden_dim;
    }
    return n;
}

void WeightBundle::check_against(const TargetSpec& spec) const {
    if (w_last.cols() != spec.last_width()) {
        throw DimError("bundle: w_last " + w_last.shape_str() + " vs expected row width " +
                       std::to_string(spec.last_width()));
    }
    if (spec.emit_biases ? b_last.size() != k() : !b_last.empty()) {
        throw DimError("bundle: b_last length " + std::to_string(b_last.size()));
    }
    if (spec.layers == 2) {
        if (w_pen.rows() != spec.hidden_dim || w_pen.cols() != spec.feature_dim) {
            throw DimError("bundle: w_pen " + w_pen.shape_str());
        }
        if (spec.emit_biases ? b_pen.size() != spec.hidden_dim : !b_pen.empty()) {
            throw DimError("bundle: b_pen length " + std::to_string(b_pen.size()));
        }
    } else if (!w_pen.empty() || !b_pen.empty()) {
        throw DimError("bundle: unexpected penultimate layer in 1-layer spec");
    }
}

std::vector<double> flatten_bundle(const WeightBundle& w) {
    std::vector<double> flat;
    flat.reserve(w.w_last.size() + w.b_last.size() + w.w_pen.size() + w.b_pen.size());
    append(flat, w.w_last);
    append(flat, w.b_last);
    append(flat, w.w_pen);
    append(flat, w.b_pen);
    return flat;
}

WeightBundle unflatten_bundle(std::span<const double> flat, const TargetSpec& spec,
                              std::size_t k) {
    if (flat.size() != spec.bundle_size(k)) {
        throw DimError("unflatten_bundle: got " + std::to_string(flat.size()) +
                       " floats, expected " + std::to_string(spec.bundle_size(k)));
    }
    WeightBundle w;
    w.w_last = Matrix(k, spec.last_width());
    take(flat, w.w_last);
    if (spec.emit_biases) {
        w.b_last.resize(k);
        take(flat, w.b_last);
    }
    if (spec.layers == 2) {
        w.w_pen = Matrix(spec.hidden_dim, spec.feature_dim);
        take(flat, w.w_pen);
        if (spec.emit_biases) {
            w.b_pen.resize(spec.hidden_dim);
            take(flat, w.b_pen);
        }
    }
    return w;
}

std::size_t HyperNetParams::descriptor_dim() const {
    if (trunk.empty()) throw ContractError("hypernet: empty trunk");
    return trunk.front().in_dim();
}

std::size_t HyperNetParams::trunk_out_dim() const {
    if (trunk.empty()) throw ContractError("hypernet: empty trunk");
    return trunk.back().out_dim();
}

std::vector<std::size_t> HyperNetParams::trunk_widths() const {
    std::vector<std::size_t> w;
    w.reserve(trunk.size());
    for (const auto& layer : trunk) w.push_back(layer.out_dim());
    return w;
}

void HyperNetParams::check_against(const TargetSpec& spec) const {
    spec.validate();
    if (trunk.empty()) throw ContractError("hypernet: trunk must have depth >= 1");
    for (std::size_t l = 0; l < trunk.size(); ++l) {
        trunk[l].check();
        if (l > 0 && trunk[l].in_dim() != trunk[l - 1].out_dim()) {
            throw DimError("hypernet: trunk layer " + std::to_string(l) +
                           " input width " + std::to_string(trunk[l].in_dim()) +
                           " vs previous output " + std::to_string(trunk[l - 1].out_dim()));
        }
    }
    last_head.check();
    const std::size_t t = trunk_out_dim();
    const std::size_t want_last = spec.last_width() + (spec.emit_biases ? 1 : 0);
    if (last_head.weight.cols() != t || last_head.out_dim() != want_last) {
        throw DimError("hypernet: output head " + last_head.weight.shape_str() +
                       " vs expected " + std::to_string(want_last) + "x" + std::to_string(t));
    }
    if (spec.layers == 2) {
        if (!pen_head) throw ContractError("hypernet: 2-layer spec needs a hidden-layer head");
        pen_head->check();
        const std::size_t want_pen =
            spec.hidden_dim * spec.feature_dim + (spec.emit_biases ? spec.hidden_dim : 0);
        if (pen_head->inner.in_dim() != t || pen_head->out_dim() != want_pen) {
            throw DimError("hypernet: hidden-layer head emits " +
                           std::to_string(pen_head->out_dim()) + " floats, expected " +
                           std::to_string(want_pen));
        }
    } else if (pen_head) {
        throw ContractError("hypernet: 1-layer spec must not carry a hidden-layer head");
    }
}

WeightBundle emit_weights(const Matrix& descriptors, const HyperNetParams& params,
                          const TargetSpec& spec, Pooling pooling, EmitCache* cache) {
    params.check_against(spec);
    if (descriptors.rows() == 0) throw ContractError("emit_weights: empty descriptor set");
    if (descriptors.cols() != params.descriptor_dim()) {
        throw DimError("emit_weights: descriptors " + descriptors.shape_str() +
                       " vs trunk input width " + std::to_string(params.descriptor_dim()));
    }
    const std::size_t k = descriptors.rows();

    if (cache) {
        cache->trunk.resize(params.trunk.size());
        cache->spec = spec;
        cache->pooling = pooling;
    }
    Matrix X = descriptors;
    for (std::size_t l = 0; l < params.trunk.size(); ++l) {
        X = ev_forward(X, params.trunk[l], Activation::relu, pooling,
                       cache ? &cache->trunk[l] : nullptr);
    }

    const Matrix rows = evhead_forward(X, params.last_head, cache ? &cache->last : nullptr);

    WeightBundle w;
    const std::size_t lw = spec.last_width();
    w.w_last = Matrix(k, lw);
    if (spec.emit_biases) w.b_last.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < lw; ++j) w.w_last(i, j) = rows(i, j);
        if (spec.emit_biases) w.b_last[i] = rows(i, lw);
    }

    if (spec.layers == 2) {
        const std::vector<double> pen =
            inv_forward(X, *params.pen_head, Activation::identity, pooling,
                        cache ? &cache->pen : nullptr);
        const std::size_t h = spec.hidden_dim;
        const std::size_t m = spec.feature_dim;
        w.w_pen = Matrix(h, m);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < m; ++c) w.w_pen(r, c) = pen[r * m + c];
        }
        if (spec.emit_biases) {
            w.b_pen.assign(pen.begin() + static_cast<std::ptrdiff_t>(h * m), pen.end());
        }
    }

    if (cache) {
        cache->trunk_out = std::move(X);
        cache->valid = true;
    }
    return w;
}

HyperNetGrads hypernet_backward(const WeightBundle& d_bundle, const EmitCache& cache,
                                const HyperNetParams& params) {
    if (!cache.valid) throw ContractError("hypernet_backward: cache not from emit_weights");
    const TargetSpec& spec = cache.spec;
    d_bundle.check_against(spec);
    const std::size_t k = cache.trunk_out.rows();
    if (d_bundle.k() != k) {
        throw ContractError("hypernet_backward: bundle gradient for k=" +
                            std::to_string(d_bundle.k()) + " vs cached k=" +
                            std::to_string(k));
    }

    // Output head.
    const std::size_t lw = spec.last_width();
    Matrix d_rows(k, lw + (spec.emit_biases ? 1 : 0));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < lw; ++j) d_rows(i, j) = d_bundle.w_last(i, j);
        if (spec.emit_biases) d_rows(i, lw) = d_bundle.b_last[i];
    }
    EvHeadBackward head_back = evhead_backward(d_rows, cache.last, params.last_head);

    HyperNetGrads grads;
    grads.last_head = std::move(head_back.d_params);
    Matrix d_trunk_out = std::move(head_back.d_input);

    // Hidden-layer head.
    if (spec.layers == 2) {
        const std::size_t h = spec.hidden_dim;
        const std::size_t m = spec.feature_dim;
        std::vector<double> d_pen(h * m + (spec.emit_biases ? h : 0), 0.0);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < m; ++c) d_pen[r * m + c] = d_bundle.w_pen(r, c);
        }
        if (spec.emit_biases) {
            for (std::size_t r = 0; r < h; ++r) d_pen[h * m + r] = d_bundle.b_pen[r];
        }
        InvBackward pen_back = inv_backward(d_pen, cache.pen, *params.pen_head);
        grads.pen_head = std::move(pen_back.d_params);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < d_trunk_out.cols(); ++j) {
                d_trunk_out(i, j) += pen_back.d_input(i, j);
            }
        }
    }

    // Trunk, in reverse.
    grads.trunk.resize(params.trunk.size());
    Matrix dX = std::move(d_trunk_out);
    for (std::size_t l = params.trunk.size(); l-- > 0;) {
        EvBackward back = ev_backward(dX, cache.trunk[l], params.trunk[l]);
        grads.trunk[l] = std::move(back.d_params);
        dX = std::move(back.d_input);
    }
    return grads;
}

HyperNetParams init_hypernet(const TargetSpec& spec, std::size_t descriptor_dim,
                             std::span<const std::size_t> trunk_widths,
                             std::uint64_t seed) {
    spec.validate();
    if (descriptor_dim < 1) throw ConfigError("init_hypernet: descriptor_dim must be >= 1");
    if (trunk_widths.empty()) throw ConfigError("init_hypernet: trunk must have depth >= 1");
    for (std::size_t w : trunk_widths) {
        if (w < 1) throw ConfigError("init_hypernet: trunk widths must be >= 1");
    }

    Rng rng(seed);
    HyperNetParams p;
    std::size_t in = descriptor_dim;
    for (std::size_t w : trunk_widths) {
        const double s = std::sqrt(1.0 / static_cast<double>(in));
        EquivariantLayerParams layer;
        layer.element = uniform_matrix(rng, w, in, s);
        layer.context = uniform_matrix(rng, w, in, s);
        layer.bias.assign(w, 0.0);
        p.trunk.push_back(std::move(layer));
        in = w;
    }

    const std::size_t t = in;
    const double sh = std::sqrt(1.0 / static_cast<double>(t));
    p.last_head.weight = uniform_matrix(rng, spec.last_width() + (spec.emit_biases ? 1 : 0),
                                        t, sh * kHeadInitScale);
    p.last_head.bias.assign(p.last_head.weight.rows(), 0.0);

    if (spec.layers == 2) {
        InvariantHeadParams pen;
        pen.inner.element = uniform_matrix(rng, t, t, sh);
        pen.inner.context = uniform_matrix(rng, t, t, sh);
        pen.inner.bias.assign(t, 0.0);
        const std::size_t out =
            spec.hidden_dim * spec.feature_dim + (spec.emit_biases ? spec.hidden_dim : 0);
        pen.post = uniform_matrix(rng, out, t, sh * kHeadInitScale);
        pen.post_bias.assign(out, 0.0);
        p.pen_head = std::move(pen);
    }
    return p;
}

std::size_t NonEquivariantParams::descriptor_dim() const {
    if (layers.empty() || set_size == 0) throw ContractError("nonev: uninitialized network");
    return layers.front().weight.cols() / set_size;
}

std::vector<std::size_t> NonEquivariantParams::hidden_widths() const {
    std::vector<std::size_t> w;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) w.push_back(layers[l].weight.rows());
    return w;
}

WeightBundle emit_weights_nonev(const Matrix& descriptors,
                                const NonEquivariantParams& params,
                                const TargetSpec& spec, NonEvCache* cache) {
    spec.validate();
    if (params.layers.empty()) throw ContractError("nonev: uninitialized network");
    if (descriptors.rows() != params.set_size) {
        throw DimError("nonev: got " + std::to_string(descriptors.rows()) +
                       " descriptors, network was built for k=" +
                       std::to_string(params.set_size));
    }
    const std::size_t k = params.set_size;
    std::vector<double> u(descriptors.data());  // concatenated rows
    if (u.size() != params.layers.front().weight.cols()) {
        throw DimError("nonev: descriptor width " + std::to_string(descriptors.cols()) +
                       " vs expected " +
                       std::to_string(params.layers.front().weight.cols() / k));
    }

    if (cache) {
        cache->inputs.clear();
        cache->pres.clear();
        cache->spec = spec;
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        std::vector<double> pre(layer.weight.rows());
        for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
            double acc = layer.bias[o];
            for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
                acc += layer.weight(o, j) * u[j];
            }
            pre[o] = acc;
        }
        if (cache) {
            cache->inputs.push_back(std::move(u));
            cache->pres.push_back(pre);
        }
        if (l + 1 < params.layers.size()) {
            for (double& v : pre) v = std::max(0.0, v);
        }
        u = std::move(pre);
    }

    const std::size_t expect = spec.bundle_size(k);
    if (u.size() != expect) {
        throw DimError("nonev: network emits " + std::to_string(u.size()) +
                       " floats, bundle needs " + std::to_string(expect));
    }

    // Slice: w_pen, b_pen, b_last, per-class weight rows in the tail.
    WeightBundle w;
    std::size_t pos = 0;
    if (spec.layers == 2) {
        w.w_pen = Matrix(spec.hidden_dim, spec.feature_dim);
        for (double& v : w.w_pen.data()) v = u[pos++];
        if (spec.emit_biases) {
            w.b_pen.resize(spec.hidden_dim);
            for (double& v : w.b_pen) v = u[pos++];
        }
    }
    if (spec.emit_biases) {
        w.b_last.resize(k);
        for (double& v : w.b_last) v = u[pos++];
    }
    w.w_last = Matrix(k, spec.last_width());
    for (double& v : w.w_last.data()) v = u[pos++];

    if (cache) cache->valid = true;
    return w;
}

NonEvGrads nonev_backward(const WeightBundle& d_bundle, const NonEvCache& cache,
                          const NonEquivariantParams& params) {
    if (!cache.valid) throw ContractError("nonev_backward: cache not from emit_weights_nonev");
    const TargetSpec& spec = cache.spec;
    d_bundle.check_against(spec);
    const std::size_t k = params.set_size;
    if (d_bundle.k() != k) {
        throw ContractError("nonev_backward: bundle gradient k=" +
                            std::to_string(d_bundle.k()) + " vs network k=" +
                            std::to_string(k));
    }

    std::vector<double> g;
    g.reserve(spec.bundle_size(k));
    if (spec.layers == 2) {
        g.insert(g.end(), d_bundle.w_pen.data().begin(), d_bundle.w_pen.data().end());
        if (spec.emit_biases) g.insert(g.end(), d_bundle.b_pen.begin(), d_bundle.b_pen.end());
    }
    if (spec.emit_biases) g.insert(g.end(), d_bundle.b_last.begin(), d_bundle.b_last.end());
    g.insert(g.end(), d_bundle.w_last.data().begin(), d_bundle.w_last.data().end());

    NonEvGrads grads(params.layers.size());
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        const auto& input = cache.inputs[l];
        grads[l].weight = Matrix(layer.weight.rows(), layer.weight.cols());
        grads[l].bias.assign(layer.weight.rows(), 0.0);
        for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
            grads[l].bias[o] = g[o];
            for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
                grads[l].weight(o, j) = g[o] * input[j];
            }
        }
        if (l > 0) {
            std::vector<double> g_in(layer.weight.cols(), 0.0);
            for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
                double acc = 0.0;
                for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
                    acc += layer.weight(o, j) * g[o];
                }
                g_in[j] = cache.pres[l - 1][j] > 0.0 ? acc : 0.0;
            }
            g = std::move(g_in);
        }
    }
    return grads;
}

NonEquivariantParams init_nonev(const TargetSpec& spec, std::size_t descriptor_dim,
                                std::size_t set_size,
                                std::span<const std::size_t> hidden_widths,
                                std::uint64_t seed) {
    spec.validate();
    if (descriptor_dim < 1) throw ConfigError("init_nonev: descriptor_dim must be >= 1");
    if (set_size < 1) throw ConfigError("init_nonev: set_size must be >= 1");
    for (std::size_t w : hidden_widths) {
        if (w < 1) throw ConfigError("init_nonev: hidden widths must be >= 1");
    }

    Rng rng(seed);
    NonEquivariantParams p;
    p.set_size = set_size;
    std::size_t in = set_size * descriptor_dim;
    for (std::size_t w : hidden_widths) {
        const double s = std::sqrt(1.0 / static_cast<double>(in));
        p.layers.push_back({uniform_matrix(rng, w, in, s), std::vector<double>(w, 0.0)});
        in = w;
    }
    const std::size_t out = spec.bundle_size(set_size);
    const double s = std::sqrt(1.0 / static_cast<double>(in));
    p.layers.push_back({uniform_matrix(rng, out, in, s * kHeadInitScale),
                        std::vector<double>(out, 0.0)});
    return p;
}

std::vector<double> flatten_params(const HyperNetParams& p) {
    std::vector<double> flat;
    for (const auto& layer : p.trunk) {
        append(flat, layer.element);
        append(flat, layer.context);
        append(flat, layer.bias);
    }
    append(flat, p.last_head.weight);
    append(flat, p.last_head.bias);
    if (p.pen_head) {
        append(flat, p.pen_head->inner.element);
        append(flat, p.pen_head->inner.context);
        append(flat, p.pen_head->inner.bias);
        append(flat, p.pen_head->post);
        append(flat, p.pen_head->post_bias);
    }
    return flat;
}

void set_params(HyperNetParams& p, std::span<const double> flat) {
    for (auto& layer : p.trunk) {
        take(flat, layer.element);
        take(flat, layer.context);
        take(flat, layer.bias);
    }
    take(flat, p.last_head.weight);
    take(flat, p.last_head.bias);
    if (p.pen_head) {
        take(flat, p.pen_head->inner.element);
        take(flat, p.pen_head->inner.context);
        take(flat, p.pen_head->inner.bias);
        take(flat, p.pen_head->post);
        take(flat, p.pen_head->post_bias);
    }
    if (!flat.empty()) throw DimError("set_params: flat vector too long");
}

std::vector<std::uint8_t> decay_mask(const HyperNetParams& p) {
    std::vector<std::uint8_t> mask;
    for (const auto& layer : p.trunk) {
        mask_weights(mask, layer.element);
        mask_weights(mask, layer.context);
        mask_biases(mask, layer.bias);
    }
    mask_weights(mask, p.last_head.weight);
    mask_biases(mask, p.last_head.bias);
    if (p.pen_head) {
        mask_weights(mask, p.pen_head->inner.element);
        mask_weights(mask, p.pen_head->inner.context);
        mask_biases(mask, p.pen_head->inner.bias);
        mask_weights(mask, p.pen_head->post);
        mask_biases(mask, p.pen_head->post_bias);
    }
    return mask;
}

std::vector<double> flatten_params(const NonEquivariantParams& p) {
    std::vector<double> flat;
    for (const auto& layer : p.layers) {
        append(flat, layer.weight);
        append(flat, layer.bias);
    }
    return flat;
}

void set_params(NonEquivariantParams& p, std::span<const double> flat) {
    for (auto& layer : p.layers) {
        take(flat, layer.weight);
        take(flat, layer.bias);
    }
    if (!flat.empty()) throw DimError("set_params: flat vector too long");
}

std::vector<std::uint8_t> decay_mask(const NonEquivariantParams& p) {
    std::vector<std::uint8_t> mask;
    for (const auto& layer : p.layers) {
        mask_weights(mask, layer.weight);
        mask_biases(mask, layer.bias);
    }
    return mask;
}

std::size_t HyperModel::descriptor_dim() const {
    return kind() == HyperKind::equivariant ? ev().descriptor_dim()
                                            : nonev().descriptor_dim();
}

bool HyperModel::supports_k(std::size_t k) const {
    if (k == 0) return false;
    return kind() == HyperKind::equivariant || nonev().set_size == k;
}

WeightBundle HyperModel::emit(const Matrix& descriptors, ModelCache* cache) const {
    if (kind() == HyperKind::equivariant) {
        return emit_weights(descriptors, ev(), spec, pooling, cache ? &cache->ev : nullptr);
    }
    return emit_weights_nonev(descriptors, nonev(), spec, cache ? &cache->nonev : nullptr);
}

std::vector<double> HyperModel::backward_flat(const WeightBundle& d_bundle,
                                              const ModelCache& cache) const {
    if (kind() == HyperKind::equivariant) {
        return flatten_params(hypernet_backward(d_bundle, cache.ev, ev()));
    }
    NonEvGrads grads = nonev_backward(d_bundle, cache.nonev, nonev());
    std::vector<double> flat;
    for (const auto& layer : grads) {
        append(flat, layer.weight);
        append(flat, layer.bias);
    }
    return flat;
}

std::vector<double> HyperModel::flatten() const {
    return kind() == HyperKind::equivariant ? flatten_params(ev())
                                            : flatten_params(nonev());
}

void HyperModel::set_flat(std::span<const double> flat) {
    if (kind() == HyperKind::equivariant) {
        set_params(std::get<HyperNetParams>(params), flat);
    } else {
        set_params(std::get<NonEquivariantParams>(params), flat);
    }
}

std::vector<std::uint8_t> HyperModel::mask() const {
    return kind() == HyperKind::equivariant ? decay_mask(ev()) : decay_mask(nonev());
}

}  // namespace t2m
