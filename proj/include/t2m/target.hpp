#pragma once

#include <span>
#include <string>
#include <vector>

#include "t2m/hypernet.hpp"
#include "t2m/matrix.hpp"

namespace t2m {

enum class SplitTag { train, seen_eval, unseen_eval };

const char* split_tag_name(SplitTag tag);
SplitTag parse_split_tag(const std::string& name);

// One sampled classification task: k classes in descriptor order plus a
// labeled feature batch. Labels index into the descriptor order.
struct Episode {
    Matrix descriptors;                  // k x e
    std::vector<std::string> class_ids;  // k
    Matrix features;                     // n x m
    std::vector<std::size_t> labels;     // n, each < k
    SplitTag split = SplitTag::train;

    std::size_t k() const { return descriptors.rows(); }
    void validate() const;
};

// Logits of the emitted classifier: one linear layer, or hidden ReLU layer
// followed by the per-class output rows.
std::vector<double> classify(std::span<const double> x, const WeightBundle& w);

// Argmax over classify(x, w); ties go to the lowest class index.
std::size_t predict(std::span<const double> x, const WeightBundle& w);

struct EpisodeLossResult {
    double loss = 0.0;
    WeightBundle d_bundle;  // gradient of the mean loss w.r.t. every bundle field
};

// Mean softmax cross entropy over the episode batch.
EpisodeLossResult episode_loss(const Episode& ep, const WeightBundle& w);

// Single-concept scoring; requires a k=1 bundle.
double one_class_score(std::span<const double> x, const WeightBundle& w);

struct OneClassLossResult {
    double loss = 0.0;
    WeightBundle d_bundle;
};

// Mean logistic loss over the union of batches, positives labeled 1.
OneClassLossResult one_class_loss(const Matrix& positives, const Matrix& negatives,
                                  const WeightBundle& w);

}  // namespace t2m
