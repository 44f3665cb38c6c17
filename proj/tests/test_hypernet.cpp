#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "t2m/checkpoint.hpp"
#include "t2m/error.hpp"
#include "t2m/hypernet.hpp"
#include "t2m/numerics.hpp"
#include "t2m/rng.hpp"
#include "t2m/target.hpp"

using namespace t2m;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

double stddev(const std::vector<double>& xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / xs.size());
}

const TargetSpec kTwoLayer{.feature_dim = 4, .layers = 2, .hidden_dim = 3,
                           .emit_biases = true};
const TargetSpec kOneLayer{.feature_dim = 4, .layers = 1, .hidden_dim = 0,
                           .emit_biases = true};

}  // namespace

TEST_CASE("emit_weights: swapping two descriptors swaps output rows, hidden layer fixed") {
    Rng rng(31);
    const std::size_t e = 5, k = 3;
    const std::vector<std::size_t> widths{6};
    const HyperNetParams params = init_hypernet(kTwoLayer, e, widths, 77);

    const Matrix S = random_matrix(rng, k, e);
    Matrix S_swapped = S;
    for (std::size_t j = 0; j < e; ++j) std::swap(S_swapped(0, j), S_swapped(1, j));

    const WeightBundle a = emit_weights(S, params, kTwoLayer);
    const WeightBundle b = emit_weights(S_swapped, params, kTwoLayer);

    CHECK(max_abs_diff(b.w_last.row(0), a.w_last.row(1)) <= 1e-9);
    CHECK(max_abs_diff(b.w_last.row(1), a.w_last.row(0)) <= 1e-9);
    CHECK(max_abs_diff(b.w_last.row(2), a.w_last.row(2)) <= 1e-9);
    CHECK(std::abs(b.b_last[0] - a.b_last[1]) <= 1e-9);
    CHECK(max_abs_diff(b.w_pen, a.w_pen) <= 1e-9);
    CHECK(max_abs_diff(std::span<const double>(b.b_pen), std::span<const double>(a.b_pen)) <=
          1e-9);
}

TEST_CASE("emit_weights: duplicate descriptors give bitwise-identical rows") {
    Rng rng(32);
    const HyperNetParams params = init_hypernet(kOneLayer, 4, std::vector<std::size_t>{5}, 3);
    Matrix S(2, 4);
    for (std::size_t j = 0; j < 4; ++j) {
        S(0, j) = rng.normal();
        S(1, j) = S(0, j);
    }
    const WeightBundle w = emit_weights(S, params, kOneLayer);
    CHECK(max_abs_diff(w.w_last.row(0), w.w_last.row(1)) == 0.0);
    CHECK(w.b_last[0] == w.b_last[1]);
}

TEST_CASE("emit_weights: bundle float count matches the spec arithmetic") {
    // k=3, m=4, h=3, biases on: 3*3 + 3 + 3*4 + 3 = 27
    CHECK(kTwoLayer.bundle_size(3) == 27);
    Rng rng(33);
    const HyperNetParams params = init_hypernet(kTwoLayer, 6, std::vector<std::size_t>{7}, 5);
    const Matrix S = random_matrix(rng, 3, 6);
    const WeightBundle w = emit_weights(S, params, kTwoLayer);
    CHECK(flatten_bundle(w).size() == 27);
    CHECK(w.w_last.all_finite());
    CHECK(w.w_pen.all_finite());

    // 1-layer without biases: k*m only
    const TargetSpec lean{.feature_dim = 4, .layers = 1, .hidden_dim = 0,
                          .emit_biases = false};
    CHECK(lean.bundle_size(5) == 20);
}

TEST_CASE("emit_weights supports any k >= 1 with the same parameters") {
    Rng rng(34);
    const HyperNetParams params = init_hypernet(kOneLayer, 5, std::vector<std::size_t>{6}, 9);
    for (std::size_t k : {1u, 2u, 5u, 8u}) {
        const WeightBundle w = emit_weights(random_matrix(rng, k, 5), params, kOneLayer);
        CHECK(w.k() == k);
        CHECK(w.w_last.cols() == 4);
    }
    CHECK_THROWS_AS(emit_weights(Matrix(0, 5), params, kOneLayer), ContractError);
    CHECK_THROWS_AS(emit_weights(random_matrix(rng, 2, 7), params, kOneLayer), DimError);
}

TEST_CASE("eq-3 law: rows permute, hidden layer invariant, k in {2,3,5}") {
    Rng rng(35);
    for (std::size_t k : {2u, 3u, 5u}) {
        const HyperNetParams params =
            init_hypernet(kTwoLayer, 6, std::vector<std::size_t>{8}, 100 + k);
        const Matrix S = random_matrix(rng, k, 6);
        std::vector<std::size_t> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);

        Matrix S_perm(k, 6);
        for (std::size_t i = 0; i < k; ++i) {
            std::copy(S.row(perm[i]).begin(), S.row(perm[i]).end(), S_perm.row(i).begin());
        }
        const WeightBundle a = emit_weights(S, params, kTwoLayer);
        const WeightBundle b = emit_weights(S_perm, params, kTwoLayer);
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(max_abs_diff(b.w_last.row(i), a.w_last.row(perm[i])) <= 1e-9);
        }
        CHECK(max_abs_diff(b.w_pen, a.w_pen) <= 1e-9);
    }
}

TEST_CASE("hypernet_backward: zero bundle gradient gives zero parameter gradients") {
    Rng rng(36);
    const HyperNetParams params = init_hypernet(kTwoLayer, 5, std::vector<std::size_t>{6}, 1);
    EmitCache cache;
    const WeightBundle w = emit_weights(random_matrix(rng, 3, 5), params, kTwoLayer,
                                        Pooling::sum, &cache);
    WeightBundle zero = w;
    for (double& v : zero.w_last.data()) v = 0.0;
    for (double& v : zero.b_last) v = 0.0;
    for (double& v : zero.w_pen.data()) v = 0.0;
    for (double& v : zero.b_pen) v = 0.0;

    const HyperNetGrads grads = hypernet_backward(zero, cache, params);
    for (double v : flatten_params(grads)) CHECK(v == 0.0);
}

TEST_CASE("hypernet_backward: 1-layer spec has no hidden-layer head gradients") {
    Rng rng(37);
    const HyperNetParams params = init_hypernet(kOneLayer, 5, std::vector<std::size_t>{6}, 2);
    EmitCache cache;
    const WeightBundle w = emit_weights(random_matrix(rng, 2, 5), params, kOneLayer,
                                        Pooling::sum, &cache);
    WeightBundle dw = w;  // arbitrary nonzero gradient
    const HyperNetGrads grads = hypernet_backward(dw, cache, params);
    CHECK(!grads.pen_head.has_value());
    CHECK(grads.trunk.size() == 1);

    // stale-cache misuse is rejected
    EmitCache empty;
    CHECK_THROWS_AS(hypernet_backward(dw, empty, params), ContractError);
}

TEST_CASE("hypernet full-loss gradient matches finite differences") {
    Rng rng(38);
    for (const TargetSpec& spec : {kOneLayer, kTwoLayer}) {
        const std::size_t e = 5, k = 3, n = 6;
        const std::vector<std::size_t> widths{6, 5};
        HyperNetParams params = init_hypernet(spec, e, widths, 17);

        Episode ep;
        ep.descriptors = random_matrix(rng, k, e);
        ep.features = random_matrix(rng, n, spec.feature_dim);
        for (std::size_t i = 0; i < k; ++i) ep.class_ids.push_back("c" + std::to_string(i));
        for (std::size_t i = 0; i < n; ++i) ep.labels.push_back(rng.uniform_index(k));

        EmitCache cache;
        const WeightBundle w =
            emit_weights(ep.descriptors, params, spec, Pooling::sum, &cache);
        const EpisodeLossResult lr = episode_loss(ep, w);
        const std::vector<double> analytic =
            flatten_params(hypernet_backward(lr.d_bundle, cache, params));

        const std::vector<double> theta = flatten_params(params);
        const auto numeric = finite_diff_grad(
            [&](std::span<const double> flat) {
                HyperNetParams p = params;
                set_params(p, flat);
                return episode_loss(ep, emit_weights(ep.descriptors, p, spec)).loss;
            },
            theta, 1e-5);

        double worst = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
            worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("init_hypernet: determinism, zero-width guard, head scaling") {
    const std::vector<std::size_t> widths{7, 7};
    const HyperNetParams a = init_hypernet(kTwoLayer, 6, widths, 42);
    const HyperNetParams b = init_hypernet(kTwoLayer, 6, widths, 42);
    CHECK(flatten_params(a) == flatten_params(b));
    const HyperNetParams c = init_hypernet(kTwoLayer, 6, widths, 43);
    CHECK(flatten_params(a) != flatten_params(c));

    CHECK_THROWS_AS(init_hypernet(kTwoLayer, 6, std::vector<std::size_t>{0}, 1), ConfigError);
    CHECK_THROWS_AS(init_hypernet(kTwoLayer, 6, std::vector<std::size_t>{}, 1), ConfigError);
    CHECK_THROWS_AS(init_hypernet(kTwoLayer, 0, widths, 1), ConfigError);

    // Monte Carlo over seeds: the output head entries have ~0.1x the spread of
    // a trunk layer with the same fan-in.
    std::vector<double> head_entries, trunk_entries;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const HyperNetParams p = init_hypernet(kOneLayer, 7, widths, seed);
        head_entries.insert(head_entries.end(), p.last_head.weight.data().begin(),
                            p.last_head.weight.data().end());
        trunk_entries.insert(trunk_entries.end(), p.trunk[1].element.data().begin(),
                             p.trunk[1].element.data().end());
    }
    const double ratio = stddev(head_entries) / stddev(trunk_entries);
    CHECK(ratio == doctest::Approx(0.1).epsilon(0.02));
}

TEST_CASE("non-equivariant ablation: permutation sensitivity and zero collapse") {
    Rng rng(39);
    const std::size_t e = 5, k = 3;
    NonEquivariantParams params =
        init_nonev(kOneLayer, e, k, std::vector<std::size_t>{8}, 11);

    // Random search for a witness permutation: a generic MLP over the
    // concatenation is not symmetric.
    const Matrix S = random_matrix(rng, k, e);
    const WeightBundle base = emit_weights_nonev(S, params, kOneLayer);
    double best = 0.0;
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    do {
        Matrix S_perm(k, e);
        for (std::size_t i = 0; i < k; ++i) {
            std::copy(S.row(perm[i]).begin(), S.row(perm[i]).end(), S_perm.row(i).begin());
        }
        const WeightBundle w = emit_weights_nonev(S_perm, params, kOneLayer);
        for (std::size_t i = 0; i < k; ++i) {
            best = std::max(best, max_abs_diff(w.w_last.row(i), base.w_last.row(perm[i])));
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(best > 1e-6);

    for (auto& layer : params.layers) {
        for (double& v : layer.weight.data()) v = 0.0;
        for (double& v : layer.bias) v = 0.0;
    }
    const WeightBundle zero = emit_weights_nonev(S, params, kOneLayer);
    for (double v : flatten_bundle(zero)) CHECK(v == 0.0);

    CHECK_THROWS_AS(emit_weights_nonev(random_matrix(rng, 2, e), params, kOneLayer), DimError);
}

TEST_CASE("non-equivariant backward matches finite differences") {
    Rng rng(40);
    const std::size_t e = 4, k = 2, n = 5;
    const NonEquivariantParams params =
        init_nonev(kTwoLayer, e, k, std::vector<std::size_t>{7}, 13);

    Episode ep;
    ep.descriptors = random_matrix(rng, k, e);
    ep.features = random_matrix(rng, n, kTwoLayer.feature_dim);
    ep.class_ids = {"a", "b"};
    for (std::size_t i = 0; i < n; ++i) ep.labels.push_back(rng.uniform_index(k));

    NonEvCache cache;
    const WeightBundle w = emit_weights_nonev(ep.descriptors, params, kTwoLayer, &cache);
    const EpisodeLossResult lr = episode_loss(ep, w);
    const NonEvGrads grads = nonev_backward(lr.d_bundle, cache, params);

    std::vector<double> analytic;
    for (const auto& layer : grads) {
        analytic.insert(analytic.end(), layer.weight.data().begin(),
                        layer.weight.data().end());
        analytic.insert(analytic.end(), layer.bias.begin(), layer.bias.end());
    }
    const std::vector<double> theta = flatten_params(params);
    const auto numeric = finite_diff_grad(
        [&](std::span<const double> flat) {
            NonEquivariantParams p = params;
            set_params(p, flat);
            return episode_loss(ep, emit_weights_nonev(ep.descriptors, p, kTwoLayer)).loss;
        },
        theta, 1e-5);

    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint json round trip is value-exact for both kinds") {
    {
        Checkpoint ckpt;
        ckpt.model.spec = kTwoLayer;
        ckpt.model.pooling = Pooling::mean;
        ckpt.model.params = init_hypernet(kTwoLayer, 6, std::vector<std::size_t>{7}, 99);
        ckpt.normalize_descriptors = false;
        ckpt.seed = 1234;
        ckpt.training_config_hash = "fnv1a64:deadbeef00000000";

        const std::string text = checkpoint_to_json(ckpt).dump();
        const Checkpoint back = checkpoint_from_json(nlohmann::json::parse(text));
        CHECK(back.model.flatten() == ckpt.model.flatten());
        CHECK(back.model.pooling == Pooling::mean);
        CHECK(back.model.spec == ckpt.model.spec);
        CHECK(back.normalize_descriptors == false);
        CHECK(back.seed == 1234);
        CHECK(back.training_config_hash == ckpt.training_config_hash);
    }
    {
        Checkpoint ckpt;
        ckpt.model.spec = kOneLayer;
        ckpt.model.params = init_nonev(kOneLayer, 5, 2, std::vector<std::size_t>{6}, 7);
        const std::string text = checkpoint_to_json(ckpt).dump();
        const Checkpoint back = checkpoint_from_json(nlohmann::json::parse(text));
        CHECK(back.model.kind() == HyperKind::non_equivariant);
        CHECK(back.model.flatten() == ckpt.model.flatten());
        CHECK(back.model.nonev().set_size == 2);
    }
}

TEST_CASE("flat parameter layout round-trips and the decay mask flags biases only") {
    const HyperNetParams params = init_hypernet(kTwoLayer, 5, std::vector<std::size_t>{6}, 3);
    const std::vector<double> flat = flatten_params(params);
    HyperNetParams copy = params;
    for (auto& layer : copy.trunk) {
        for (double& v : layer.element.data()) v = 0.0;
    }
    set_params(copy, flat);
    CHECK(flatten_params(copy) == flat);

    const auto mask = decay_mask(params);
    CHECK(mask.size() == flat.size());
    std::size_t weights = 0, biases = 0;
    for (auto b : mask) (b ? weights : biases)++;
    const std::size_t expect_biases = params.trunk[0].bias.size() +
                                      params.last_head.bias.size() +
                                      params.pen_head->inner.bias.size() +
                                      params.pen_head->post_bias.size();
    CHECK(biases == expect_biases);
    CHECK(weights + biases == flat.size());
}
