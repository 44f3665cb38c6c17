#include "t2m/target.hpp"

#include <algorithm>
#include <cmath>

#include "t2m/error.hpp"
#include "t2m/numerics.hpp"

namespace t2m {

const char* split_tag_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::train: return "train";
        case SplitTag::seen_eval: return "seen_eval";
        case SplitTag::unseen_eval: return "unseen_eval";
    }
    return "?";
}

SplitTag parse_split_tag(const std::string& name) {
    if (name == "train") return SplitTag::train;
    if (name == "seen_eval") return SplitTag::seen_eval;
    if (name == "unseen_eval") return SplitTag::unseen_eval;
    throw ParseError("unknown split tag '" + name + "'");
}

void Episode::validate() const {
    if (k() == 0) throw ContractError("episode: empty descriptor set");
    if (features.rows() == 0) throw ContractError("episode: empty feature batch");
    if (labels.size() != features.rows()) {
        throw DimError("episode: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(features.rows()) + " rows");
    }
    if (class_ids.size() != k()) {
        throw DimError("episode: " + std::to_string(class_ids.size()) + " class ids for k=" +
                       std::to_string(k()));
    }
    for (std::size_t y : labels) {
        if (y >= k()) {
            throw IndexError("episode: label " + std::to_string(y) + " out of range for k=" +
                             std::to_string(k()));
        }
    }
}

namespace {

// Hidden activation of a 2-layer bundle; returns both pre and post ReLU.
void hidden_forward(std::span<const double> x, const WeightBundle& w,
                    std::vector<double>& pre, std::vector<double>& post) {
    const std::size_t h = w.w_pen.rows();
    pre.resize(h);
    post.resize(h);
    for (std::size_t r = 0; r < h; ++r) {
        double acc = w.b_pen.empty() ? 0.0 : w.b_pen[r];
        for (std::size_t c = 0; c < w.w_pen.cols(); ++c) acc += w.w_pen(r, c) * x[c];
        pre[r] = acc;
        post[r] = std::max(0.0, acc);
    }
}

std::vector<double> output_layer(std::span<const double> z, const WeightBundle& w) {
    std::vector<double> logits(w.k());
    for (std::size_t i = 0; i < w.k(); ++i) {
        double acc = w.b_last.empty() ? 0.0 : w.b_last[i];
        for (std::size_t j = 0; j < w.w_last.cols(); ++j) acc += w.w_last(i, j) * z[j];
        logits[i] = acc;
    }
    return logits;
}

bool two_layer(const WeightBundle& w) { return !w.w_pen.empty(); }

void check_feature_width(std::span<const double> x, const WeightBundle& w) {
    const std::size_t want = two_layer(w) ? w.w_pen.cols() : w.w_last.cols();
    if (x.size() != want) {
        throw DimError("classify: feature length " + std::to_string(x.size()) +
                       " vs expected " + std::to_string(want));
    }
}

WeightBundle zero_like(const WeightBundle& w) {
    WeightBundle g;
    g.w_last = Matrix(w.w_last.rows(), w.w_last.cols());
    g.b_last.assign(w.b_last.size(), 0.0);
    g.w_pen = Matrix(w.w_pen.rows(), w.w_pen.cols());
    g.b_pen.assign(w.b_pen.size(), 0.0);
    return g;
}

double stable_logistic_loss(double z, bool positive) {
    // softplus(z) - y*z, computed without overflow
    const double sp = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    return positive ? sp - z : sp;
}

void check_bundle_shapes(const WeightBundle& w) {
    if (w.k() == 0) throw ContractError("bundle: empty output layer");
    if (!w.b_last.empty() && w.b_last.size() != w.k()) {
        throw DimError("bundle: b_last length " + std::to_string(w.b_last.size()) +
                       " vs k=" + std::to_string(w.k()));
    }
    if (two_layer(w)) {
        if (w.w_last.cols() != w.w_pen.rows()) {
            throw DimError("bundle: w_last " + w.w_last.shape_str() + " vs w_pen " +
                           w.w_pen.shape_str());
        }
        if (!w.b_pen.empty() && w.b_pen.size() != w.w_pen.rows()) {
            throw DimError("bundle: b_pen length " + std::to_string(w.b_pen.size()));
        }
    }
}

}  // namespace

std::vector<double> classify(std::span<const double> x, const WeightBundle& w) {
    check_bundle_shapes(w);
    check_feature_width(x, w);
    if (!two_layer(w)) return output_layer(x, w);
    std::vector<double> pre, post;
    hidden_forward(x, w, pre, post);
    return output_layer(post, w);
}

std::size_t predict(std::span<const double> x, const WeightBundle& w) {
    const std::vector<double> logits = classify(x, w);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;  // strict: ties keep the lowest index
    }
    return best;
}

EpisodeLossResult episode_loss(const Episode& ep, const WeightBundle& w) {
    ep.validate();
    check_bundle_shapes(w);
    if (ep.k() != w.k()) {
        throw DimError("episode_loss: episode k=" + std::to_string(ep.k()) +
                       " vs bundle k=" + std::to_string(w.k()));
    }

    EpisodeLossResult out;
    out.d_bundle = zero_like(w);
    const std::size_t n = ep.features.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> pre, post;

    for (std::size_t s = 0; s < n; ++s) {
        const auto x = ep.features.row(s);
        check_feature_width(x, w);
        std::vector<double> logits;
        if (two_layer(w)) {
            hidden_forward(x, w, pre, post);
            logits = output_layer(post, w);
        } else {
            logits = output_layer(x, w);
        }
        ScalarLossGrad lg = softmax_cross_entropy(logits, ep.labels[s]);
        out.loss += lg.loss * inv_n;

        const std::span<const double> z = two_layer(w) ? std::span<const double>(post) : x;
        std::vector<double> dz(w.w_last.cols(), 0.0);
        for (std::size_t i = 0; i < w.k(); ++i) {
            const double gi = lg.grad[i] * inv_n;
            if (!out.d_bundle.b_last.empty()) out.d_bundle.b_last[i] += gi;
            for (std::size_t j = 0; j < w.w_last.cols(); ++j) {
                out.d_bundle.w_last(i, j) += gi * z[j];
                dz[j] += w.w_last(i, j) * gi;
            }
        }
        if (two_layer(w)) {
            for (std::size_t r = 0; r < w.w_pen.rows(); ++r) {
                if (pre[r] <= 0.0) continue;
                if (!out.d_bundle.b_pen.empty()) out.d_bundle.b_pen[r] += dz[r];
                for (std::size_t c = 0; c < w.w_pen.cols(); ++c) {
                    out.d_bundle.w_pen(r, c) += dz[r] * x[c];
                }
            }
        }
    }
    return out;
}

double one_class_score(std::span<const double> x, const WeightBundle& w) {
    if (w.k() != 1) {
        throw ContractError("one_class_score: bundle has k=" + std::to_string(w.k()) +
                            ", needs k=1");
    }
    const std::vector<double> logits = classify(x, w);
    return logits[0];
}

OneClassLossResult one_class_loss(const Matrix& positives, const Matrix& negatives,
                                  const WeightBundle& w) {
    if (w.k() != 1) {
        throw ContractError("one_class_loss: bundle has k=" + std::to_string(w.k()) +
                            ", needs k=1");
    }
    const std::size_t n = positives.rows() + negatives.rows();
    if (n == 0) throw ContractError("one_class_loss: empty batch");

    OneClassLossResult out;
    out.d_bundle = zero_like(w);
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> pre, post;

    auto accumulate = [&](const Matrix& batch, bool positive) {
        for (std::size_t s = 0; s < batch.rows(); ++s) {
            const auto x = batch.row(s);
            check_feature_width(x, w);
            double z;
            if (two_layer(w)) {
                hidden_forward(x, w, pre, post);
                z = output_layer(post, w)[0];
            } else {
                z = output_layer(x, w)[0];
            }
            out.loss += stable_logistic_loss(z, positive) * inv_n;

            const double p = 1.0 / (1.0 + std::exp(-z));
            const double dz = (p - (positive ? 1.0 : 0.0)) * inv_n;
            const std::span<const double> feat =
                two_layer(w) ? std::span<const double>(post) : x;
            if (!out.d_bundle.b_last.empty()) out.d_bundle.b_last[0] += dz;
            std::vector<double> dzf(w.w_last.cols(), 0.0);
            for (std::size_t j = 0; j < w.w_last.cols(); ++j) {
                out.d_bundle.w_last(0, j) += dz * feat[j];
                dzf[j] = w.w_last(0, j) * dz;
            }
            if (two_layer(w)) {
                for (std::size_t r = 0; r < w.w_pen.rows(); ++r) {
                    if (pre[r] <= 0.0) continue;
                    if (!out.d_bundle.b_pen.empty()) out.d_bundle.b_pen[r] += dzf[r];
                    for (std::size_t c = 0; c < w.w_pen.cols(); ++c) {
                        out.d_bundle.w_pen(r, c) += dzf[r] * x[c];
                    }
                }
            }
        }
    };
    accumulate(positives, true);
    accumulate(negatives, false);
    return out;
}

}  // namespace t2m
