#include "t2m/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "t2m/engine.hpp"
#include "t2m/error.hpp"
#include "t2m/hypernet.hpp"
#include "t2m/numerics.hpp"
#include "t2m/rng.hpp"
#include "t2m/setlayers.hpp"
#include "t2m/target.hpp"

namespace t2m {

namespace {

double scaled_max_err(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimError("gradcheck: gradient lengths differ");
    double num = 0.0, den = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max({den, std::abs(a[i]), std::abs(b[i])});
    }
    return num / den;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal() * scale;
    return m;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal() * scale;
    return v;
}

void append(std::vector<double>& out, const Matrix& m) {
    out.insert(out.end(), m.data().begin(), m.data().end());
}
void append(std::vector<double>& out, const std::vector<double>& v) {
    out.insert(out.end(), v.begin(), v.end());
}
void take(std::span<const double>& flat, Matrix& m) {
    std::copy(flat.begin(), flat.begin() + m.size(), m.data().begin());
    flat = flat.subspan(m.size());
}
void take(std::span<const double>& flat, std::vector<double>& v) {
    std::copy(flat.begin(), flat.begin() + v.size(), v.begin());
    flat = flat.subspan(v.size());
}

double weighted_sum(const Matrix& y, const Matrix& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y.data()[i] * r.data()[i];
    return acc;
}

// --- equivariant layer: gradient of sum(R .* Y) w.r.t. params and input ---

double check_ev_layer(Rng& rng, std::size_t k, std::size_t d_in, std::size_t d_out,
                      Activation act, Pooling pooling, double h) {
    EquivariantLayerParams P{random_matrix(rng, d_out, d_in),
                             random_matrix(rng, d_out, d_in), random_vector(rng, d_out)};
    const Matrix X = random_matrix(rng, k, d_in);
    const Matrix R = random_matrix(rng, k, d_out);

    EvCache cache;
    ev_forward(X, P, act, pooling, &cache);
    Matrix dY = R;
    const EvBackward back = ev_backward(dY, cache, P);

    std::vector<double> analytic;
    append(analytic, back.d_params.element);
    append(analytic, back.d_params.context);
    append(analytic, back.d_params.bias);
    append(analytic, back.d_input);

    std::vector<double> theta;
    append(theta, P.element);
    append(theta, P.context);
    append(theta, P.bias);
    append(theta, X);

    auto f = [&](std::span<const double> flat) {
        EquivariantLayerParams p2 = P;
        Matrix x2 = X;
        take(flat, p2.element);
        take(flat, p2.context);
        take(flat, p2.bias);
        take(flat, x2);
        return weighted_sum(ev_forward(x2, p2, act, pooling), R);
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

double check_inv_head(Rng& rng, std::size_t k, std::size_t d_in, std::size_t d_mid,
                      std::size_t p, Pooling pooling, double h) {
    InvariantHeadParams P;
    P.inner = {random_matrix(rng, d_mid, d_in), random_matrix(rng, d_mid, d_in),
               random_vector(rng, d_mid)};
    P.post = random_matrix(rng, p, d_mid);
    P.post_bias = random_vector(rng, p);
    const Matrix X = random_matrix(rng, k, d_in);
    const std::vector<double> r = random_vector(rng, p);

    InvCache cache;
    inv_forward(X, P, Activation::identity, pooling, &cache);
    const InvBackward back = inv_backward(r, cache, P);

    std::vector<double> analytic;
    append(analytic, back.d_params.inner.element);
    append(analytic, back.d_params.inner.context);
    append(analytic, back.d_params.inner.bias);
    append(analytic, back.d_params.post);
    append(analytic, back.d_params.post_bias);
    append(analytic, back.d_input);

    std::vector<double> theta;
    append(theta, P.inner.element);
    append(theta, P.inner.context);
    append(theta, P.inner.bias);
    append(theta, P.post);
    append(theta, P.post_bias);
    append(theta, X);

    auto f = [&](std::span<const double> flat) {
        InvariantHeadParams p2 = P;
        Matrix x2 = X;
        take(flat, p2.inner.element);
        take(flat, p2.inner.context);
        take(flat, p2.inner.bias);
        take(flat, p2.post);
        take(flat, p2.post_bias);
        take(flat, x2);
        const std::vector<double> z = inv_forward(x2, p2, Activation::identity, pooling);
        double acc = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) acc += z[i] * r[i];
        return acc;
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

double check_ev_head(Rng& rng, std::size_t k, std::size_t d, std::size_t p, double h) {
    EquivariantHeadParams P{random_matrix(rng, p, d), random_vector(rng, p)};
    const Matrix X = random_matrix(rng, k, d);
    const Matrix R = random_matrix(rng, k, p);

    EvHeadCache cache;
    evhead_forward(X, P, &cache);
    const EvHeadBackward back = evhead_backward(R, cache, P);

    std::vector<double> analytic;
    append(analytic, back.d_params.weight);
    append(analytic, back.d_params.bias);
    append(analytic, back.d_input);

    std::vector<double> theta;
    append(theta, P.weight);
    append(theta, P.bias);
    append(theta, X);

    auto f = [&](std::span<const double> flat) {
        EquivariantHeadParams p2 = P;
        Matrix x2 = X;
        take(flat, p2.weight);
        take(flat, p2.bias);
        take(flat, x2);
        return weighted_sum(evhead_forward(x2, p2), R);
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

Episode random_episode(Rng& rng, std::size_t k, std::size_t e, std::size_t m,
                       std::size_t n) {
    Episode ep;
    ep.descriptors = random_matrix(rng, k, e);
    ep.features = random_matrix(rng, n, m);
    for (std::size_t i = 0; i < k; ++i) ep.class_ids.push_back("c" + std::to_string(i));
    for (std::size_t i = 0; i < n; ++i) ep.labels.push_back(rng.uniform_index(k));
    return ep;
}

double check_episode_loss(Rng& rng, const TargetSpec& spec, std::size_t k, double h) {
    const std::size_t n = 6;
    Episode ep = random_episode(rng, k, 4, spec.feature_dim, n);

    WeightBundle w = unflatten_bundle(
        random_vector(rng, spec.bundle_size(k), 0.7), spec, k);
    const EpisodeLossResult lr = episode_loss(ep, w);
    const std::vector<double> analytic = flatten_bundle(lr.d_bundle);

    const std::vector<double> theta = flatten_bundle(w);
    auto f = [&](std::span<const double> flat) {
        return episode_loss(ep, unflatten_bundle(flat, spec, k)).loss;
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

double check_one_class_loss(Rng& rng, const TargetSpec& spec, double h) {
    const Matrix pos = random_matrix(rng, 4, spec.feature_dim);
    const Matrix neg = random_matrix(rng, 4, spec.feature_dim);
    WeightBundle w = unflatten_bundle(random_vector(rng, spec.bundle_size(1), 0.7), spec, 1);

    const OneClassLossResult lr = one_class_loss(pos, neg, w);
    const std::vector<double> analytic = flatten_bundle(lr.d_bundle);

    const std::vector<double> theta = flatten_bundle(w);
    auto f = [&](std::span<const double> flat) {
        return one_class_loss(pos, neg, unflatten_bundle(flat, spec, 1)).loss;
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

// Full chain: episode loss -> bundle -> hypernetwork parameters.
double check_hypernet_full(Rng& rng, const TargetSpec& spec, Pooling pooling,
                           std::size_t k, double h) {
    const std::size_t e = 5;
    const std::vector<std::size_t> widths = {6, 7};
    HyperNetParams params = init_hypernet(spec, e, widths, rng.next_u64());
    Episode ep = random_episode(rng, k, e, spec.feature_dim, 6);

    EmitCache cache;
    const WeightBundle w = emit_weights(ep.descriptors, params, spec, pooling, &cache);
    const EpisodeLossResult lr = episode_loss(ep, w);
    const HyperNetGrads grads = hypernet_backward(lr.d_bundle, cache, params);
    const std::vector<double> analytic = flatten_params(grads);

    const std::vector<double> theta = flatten_params(params);
    auto f = [&](std::span<const double> flat) {
        HyperNetParams p2 = params;
        set_params(p2, flat);
        return episode_loss(ep, emit_weights(ep.descriptors, p2, spec, pooling)).loss;
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

double check_nonev_full(Rng& rng, const TargetSpec& spec, std::size_t k, double h) {
    const std::size_t e = 5;
    const std::vector<std::size_t> widths = {8};
    NonEquivariantParams params = init_nonev(spec, e, k, widths, rng.next_u64());
    Episode ep = random_episode(rng, k, e, spec.feature_dim, 6);

    NonEvCache cache;
    const WeightBundle w = emit_weights_nonev(ep.descriptors, params, spec, &cache);
    const EpisodeLossResult lr = episode_loss(ep, w);
    const NonEvGrads grads = nonev_backward(lr.d_bundle, cache, params);
    std::vector<double> analytic;
    for (const auto& layer : grads) {
        append(analytic, layer.weight);
        append(analytic, layer.bias);
    }

    const std::vector<double> theta = flatten_params(params);
    auto f = [&](std::span<const double> flat) {
        NonEquivariantParams p2 = params;
        set_params(p2, flat);
        return episode_loss(ep, emit_weights_nonev(ep.descriptors, p2, spec)).loss;
    };
    const std::vector<double> numeric = finite_diff_grad(f, theta, h);
    return scaled_max_err(analytic, numeric);
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, double tolerance, double step) {
    Rng rng(Rng::mix(seed, 0x6badc0deull));
    GradCheckReport report;
    report.tolerance = tolerance;
    report.step = step;

    const TargetSpec one_layer{.feature_dim = 5, .layers = 1, .hidden_dim = 0,
                               .emit_biases = true};
    const TargetSpec two_layer{.feature_dim = 5, .layers = 2, .hidden_dim = 3,
                               .emit_biases = true};
    const TargetSpec no_bias{.feature_dim = 5, .layers = 2, .hidden_dim = 3,
                             .emit_biases = false};

    auto add = [&](const std::string& name, double err) {
        report.entries.push_back({name, err, err <= tolerance});
    };

    add("ev_layer_relu_sum_k3", check_ev_layer(rng, 3, 5, 6, Activation::relu,
                                               Pooling::sum, step));
    add("ev_layer_identity_mean_k5", check_ev_layer(rng, 5, 4, 7, Activation::identity,
                                                    Pooling::mean, step));
    add("ev_layer_relu_sum_k1", check_ev_layer(rng, 1, 6, 5, Activation::relu,
                                               Pooling::sum, step));
    add("inv_head_sum_k3", check_inv_head(rng, 3, 5, 6, 4, Pooling::sum, step));
    add("inv_head_mean_k2", check_inv_head(rng, 2, 4, 5, 7, Pooling::mean, step));
    add("ev_head_k4", check_ev_head(rng, 4, 6, 5, step));
    add("episode_loss_1layer_k3", check_episode_loss(rng, one_layer, 3, step));
    add("episode_loss_2layer_k2", check_episode_loss(rng, two_layer, 2, step));
    add("episode_loss_nobias_k2", check_episode_loss(rng, no_bias, 2, step));
    add("one_class_loss_1layer", check_one_class_loss(
        rng, TargetSpec{.feature_dim = 5, .layers = 1, .hidden_dim = 0, .emit_biases = true},
        step));
    add("hypernet_full_1layer_k3", check_hypernet_full(rng, one_layer, Pooling::sum, 3, step));
    add("hypernet_full_2layer_k2", check_hypernet_full(rng, two_layer, Pooling::sum, 2, step));
    add("hypernet_full_2layer_mean_k5",
        check_hypernet_full(rng, two_layer, Pooling::mean, 5, step));
    add("nonev_full_1layer_k2", check_nonev_full(rng, one_layer, 2, step));
    add("nonev_full_2layer_k3", check_nonev_full(rng, two_layer, 3, step));

    report.all_pass = std::all_of(report.entries.begin(), report.entries.end(),
                                  [](const GradCheckEntry& e) { return e.pass; });
    return report;
}

}  // namespace t2m
