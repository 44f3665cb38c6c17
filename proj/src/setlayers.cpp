#include "t2m/setlayers.hpp"

#include <string>

#include "t2m/error.hpp"
#include "t2m/numerics.hpp"

namespace t2m {

namespace {

double act_deriv(Activation act, double pre) {
    return act == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0;
}

void require_nonempty(const Matrix& X, const char* op) {
    if (X.rows() == 0) throw ContractError(std::string(op) + ": empty input set");
}

}  // namespace

void EquivariantLayerParams::check() const {
    if (!element.same_shape(context)) {
        throw DimError("equivariant layer: element " + element.shape_str() +
                       " vs context " + context.shape_str());
    }
    if (bias.size() != element.rows()) {
        throw DimError("equivariant layer: bias length " + std::to_string(bias.size()) +
                       " vs width " + std::to_string(element.rows()));
    }
}

Matrix ev_forward(const Matrix& X, const EquivariantLayerParams& P, Activation act,
                  Pooling pooling, EvCache* cache) {
    require_nonempty(X, "ev_forward");
    P.check();
    if (X.cols() != P.in_dim()) {
        throw DimError("ev_forward: input " + X.shape_str() + " vs layer " +
                       P.element.shape_str());
    }
    const std::size_t k = X.rows();
    const std::size_t d_in = X.cols();
    const std::size_t d_out = P.out_dim();

    std::vector<double> pooled(d_in, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d_in; ++j) pooled[j] += X(i, j);
    }
    if (pooling == Pooling::mean) {
        for (double& v : pooled) v /= static_cast<double>(k);
    }

    Matrix pre(k, d_out);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < d_out; ++o) {
            double acc = P.bias[o];
            for (std::size_t j = 0; j < d_in; ++j) acc += P.element(o, j) * X(i, j);
            for (std::size_t j = 0; j < d_in; ++j) acc += P.context(o, j) * pooled[j];
            pre(i, o) = acc;
        }
    }

    Matrix Y = act == Activation::relu ? relu(pre) : pre;
    if (cache) {
        cache->input = X;
        cache->pooled = std::move(pooled);
        cache->pre = std::move(pre);
        cache->act = act;
        cache->pooling = pooling;
    }
    return Y;
}

EvBackward ev_backward(const Matrix& dY, const EvCache& cache,
                       const EquivariantLayerParams& P) {
    const Matrix& X = cache.input;
    const std::size_t k = X.rows();
    const std::size_t d_in = X.cols();
    const std::size_t d_out = P.out_dim();
    if (dY.rows() != k || dY.cols() != d_out || cache.pre.rows() != k) {
        throw DimError("ev_backward: gradient " + dY.shape_str() + " vs cache " +
                       cache.pre.shape_str());
    }

    // Fold the activation derivative into the upstream gradient.
    Matrix g = dY;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < d_out; ++o) {
            g(i, o) *= act_deriv(cache.act, cache.pre(i, o));
        }
    }

    std::vector<double> g_sum(d_out, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < d_out; ++o) g_sum[o] += g(i, o);
    }

    EvBackward out;
    out.d_params.element = Matrix(d_out, d_in);
    out.d_params.context = Matrix(d_out, d_in);
    out.d_params.bias = g_sum;

    // d_element = sum_i g_i x_i^T
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < d_out; ++o) {
            const double gi = g(i, o);
            for (std::size_t j = 0; j < d_in; ++j) {
                out.d_params.element(o, j) += gi * X(i, j);
            }
        }
    }
    // d_context = (sum_i g_i) pooled^T
    for (std::size_t o = 0; o < d_out; ++o) {
        for (std::size_t j = 0; j < d_in; ++j) {
            out.d_params.context(o, j) = g_sum[o] * cache.pooled[j];
        }
    }

    // d_x_j = element^T g_j + scale * context^T (sum_i g_i)
    const double scale =
        cache.pooling == Pooling::mean ? 1.0 / static_cast<double>(k) : 1.0;
    std::vector<double> ctx_back(d_in, 0.0);
    for (std::size_t j = 0; j < d_in; ++j) {
        double acc = 0.0;
        for (std::size_t o = 0; o < d_out; ++o) acc += P.context(o, j) * g_sum[o];
        ctx_back[j] = scale * acc;
    }
    out.d_input = Matrix(k, d_in);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d_in; ++j) {
            double acc = ctx_back[j];
            for (std::size_t o = 0; o < d_out; ++o) acc += P.element(o, j) * g(i, o);
            out.d_input(i, j) = acc;
        }
    }
    return out;
}

void InvariantHeadParams::check() const {
    inner.check();
    if (post.cols() != inner.out_dim()) {
        throw DimError("invariant head: post map " + post.shape_str() +
                       " vs inner width " + std::to_string(inner.out_dim()));
    }
    if (post_bias.size() != post.rows()) {
        throw DimError("invariant head: bias length " + std::to_string(post_bias.size()) +
                       " vs width " + std::to_string(post.rows()));
    }
}

std::vector<double> inv_forward(const Matrix& X, const InvariantHeadParams& P,
                                Activation act, Pooling pooling, InvCache* cache) {
    require_nonempty(X, "inv_forward");
    P.check();
    EvCache inner_cache;
    const Matrix Y = ev_forward(X, P.inner, act, pooling, cache ? &inner_cache : nullptr);

    const std::size_t k = Y.rows();
    const std::size_t w = Y.cols();
    std::vector<double> pooled(w, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < w; ++o) pooled[o] += Y(i, o);
    }
    if (pooling == Pooling::mean) {
        for (double& v : pooled) v /= static_cast<double>(k);
    }

    std::vector<double> z(P.out_dim());
    for (std::size_t p = 0; p < P.out_dim(); ++p) {
        double acc = P.post_bias[p];
        for (std::size_t o = 0; o < w; ++o) acc += P.post(p, o) * pooled[o];
        z[p] = acc;
    }

    if (cache) {
        cache->inner = std::move(inner_cache);
        cache->pooled_out = std::move(pooled);
        cache->set_size = k;
    }
    return z;
}

InvBackward inv_backward(std::span<const double> dz, const InvCache& cache,
                         const InvariantHeadParams& P) {
    if (dz.size() != P.out_dim()) {
        throw DimError("inv_backward: gradient length " + std::to_string(dz.size()) +
                       " vs head width " + std::to_string(P.out_dim()));
    }
    const std::size_t k = cache.set_size;
    const std::size_t w = P.inner.out_dim();

    InvBackward out;
    out.d_params.post = Matrix(P.post.rows(), w);
    out.d_params.post_bias.assign(dz.begin(), dz.end());
    for (std::size_t p = 0; p < P.post.rows(); ++p) {
        for (std::size_t o = 0; o < w; ++o) {
            out.d_params.post(p, o) = dz[p] * cache.pooled_out[o];
        }
    }

    // Every set element receives the same pooled gradient.
    const double scale =
        cache.inner.pooling == Pooling::mean ? 1.0 / static_cast<double>(k) : 1.0;
    std::vector<double> d_pooled(w, 0.0);
    for (std::size_t o = 0; o < w; ++o) {
        double acc = 0.0;
        for (std::size_t p = 0; p < P.post.rows(); ++p) acc += P.post(p, o) * dz[p];
        d_pooled[o] = scale * acc;
    }
    Matrix dY(k, w);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < w; ++o) dY(i, o) = d_pooled[o];
    }

    EvBackward inner_back = ev_backward(dY, cache.inner, P.inner);
    out.d_input = std::move(inner_back.d_input);
    out.d_params.inner = std::move(inner_back.d_params);
    return out;
}

void EquivariantHeadParams::check() const {
    if (bias.size() != weight.rows()) {
        throw DimError("equivariant head: bias length " + std::to_string(bias.size()) +
                       " vs width " + std::to_string(weight.rows()));
    }
}

Matrix evhead_forward(const Matrix& X, const EquivariantHeadParams& P,
                      EvHeadCache* cache) {
    require_nonempty(X, "evhead_forward");
    P.check();
    if (X.cols() != P.weight.cols()) {
        throw DimError("evhead_forward: input " + X.shape_str() + " vs head " +
                       P.weight.shape_str());
    }
    if (cache) cache->input = X;
    return affine(X, P.weight, P.bias);
}

EvHeadBackward evhead_backward(const Matrix& dY, const EvHeadCache& cache,
                               const EquivariantHeadParams& P) {
    const Matrix& X = cache.input;
    if (dY.rows() != X.rows() || dY.cols() != P.weight.rows()) {
        throw DimError("evhead_backward: gradient " + dY.shape_str() + " vs head " +
                       P.weight.shape_str());
    }
    const std::size_t k = X.rows();
    const std::size_t d = X.cols();
    const std::size_t p = P.weight.rows();

    EvHeadBackward out;
    out.d_params.weight = Matrix(p, d);
    out.d_params.bias.assign(p, 0.0);
    out.d_input = Matrix(k, d);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t o = 0; o < p; ++o) {
            const double gi = dY(i, o);
            out.d_params.bias[o] += gi;
            for (std::size_t j = 0; j < d; ++j) {
                out.d_params.weight(o, j) += gi * X(i, j);
                out.d_input(i, j) += P.weight(o, j) * gi;
            }
        }
    }
    return out;
}

}  // namespace t2m
