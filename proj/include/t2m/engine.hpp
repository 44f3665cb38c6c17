#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t2m/episodes.hpp"
#include "t2m/hypernet.hpp"
#include "t2m/numerics.hpp"
#include "t2m/target.hpp"

namespace t2m {

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t k_train = 2;
    std::size_t epochs = 50;
    std::size_t tasks_per_epoch = 200;
    std::size_t batch_size = 32;
    OptimHyper optimizer;
    std::vector<std::size_t> trunk_widths = {50};
    Pooling pooling = Pooling::sum;
    HyperKind kind = HyperKind::equivariant;
    TargetSpec target;
    bool normalize_descriptors = true;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    HyperModel model;
    std::vector<EpochRecord> log;
    bool diverged = false;
    std::size_t completed_epochs = 0;
};

// Episodic training: every step samples a k_train-class task from the seen
// classes, emits a classifier, and descends the episode loss through the
// hypernetwork. Deterministic given the config seed; on a non-finite loss the
// parameters roll back to the last completed epoch.
TrainResult train(const TrainConfig& cfg, const ClassPool& pool);

struct TaskResult {
    std::vector<std::string> class_ids;
    std::size_t n_rows = 0;
    double accuracy = 0.0;
};

struct SplitMetrics {
    std::string split;
    std::size_t k = 0;
    double mean_accuracy = 0.0;
    double sem = 0.0;  // sample std over tasks / sqrt(n_tasks)
    bool enumerated = true;
    std::size_t n_tasks = 0;
    std::vector<TaskResult> per_task;
};

struct EvalOptions {
    std::size_t max_tasks = 1000;  // enumerate all subsets up to this, sample beyond
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

// Maps a task's descriptor set plus a feature batch to predicted labels.
using SetClassifier =
    std::function<std::vector<std::size_t>(const Matrix& descriptors, const Matrix& features)>;

// Evaluation protocol: enumerate (or sample) class subsets of the split,
// score every evaluation row of those classes, aggregate mean accuracy and
// SEM over tasks. Identical results for any thread count.
SplitMetrics evaluate_with(const SetClassifier& classifier, const ClassPool& pool,
                           std::size_t k_eval, SplitTag split, const EvalOptions& opts = {});

SplitMetrics evaluate(const HyperModel& model, const ClassPool& pool, std::size_t k_eval,
                      SplitTag split, const EvalOptions& opts = {});

struct MetricsReport {
    std::size_t k = 0;
    std::optional<SplitMetrics> seen;
    std::optional<SplitMetrics> unseen;
    std::optional<double> harmonic;
    std::string config_hash;
    std::uint64_t seed = 0;
};

MetricsReport evaluate_full(const HyperModel& model, const ClassPool& pool,
                            std::size_t k_eval, const EvalOptions& opts = {});

// 2ab / (a + b); zero when both inputs are zero.
double harmonic_mean(double seen, double unseen);

// Area under the precision-recall curve by descending-score sweep with
// step-wise precision; tied scores are processed as one group.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct LawReport {
    std::string law;
    double max_deviation = 0.0;
    std::size_t trials = 0;
    bool applicable = true;
    bool pass = true;
    std::string witness;  // filled when the law is violated
};

struct SymmetryReport {
    LawReport w_last_law;     // output rows permute with the input
    LawReport w_pen_law;      // hidden layer untouched by permutation
    LawReport end_to_end_law; // permuted logits of the emitted classifier
    double tolerance = 0.0;
    bool all_pass = true;
};

// Runs the permutation laws on random descriptor sets. For the
// non-equivariant ablation this records the violating trial as a witness.
SymmetryReport check_equivariance(const HyperModel& model, std::size_t trials,
                                  std::span<const std::size_t> k_list, double tolerance,
                                  std::uint64_t seed);

enum class MapDirection { text_to_visual, visual_to_text };

// Fixed-representation baseline: a ridge-regression linear map between mean
// class features and class descriptors, fitted on seen classes; tasks are
// classified by nearest anchor under cosine distance.
struct FixedRepBaseline {
    MapDirection direction = MapDirection::text_to_visual;
    Matrix map;
};

FixedRepBaseline fit_fixed_rep(const ClassPool& pool, MapDirection direction,
                               double ridge_lambda);

SetClassifier baseline_classifier(const FixedRepBaseline& baseline);

// One-class mode: the hypernetwork emits a single scorer per attribute task,
// trained with logistic loss on balanced batches.
TrainResult train_one_class(const TrainConfig& cfg, const ClassPool& pool,
                            const AttributeTaskSet& attrs);

struct AttributeResult {
    std::string name;
    std::size_t n_rows = 0;
    double auprc_value = 0.0;
};

struct OneClassEval {
    double mean_auprc = 0.0;
    double sem = 0.0;
    std::size_t n_tasks = 0;
    std::vector<AttributeResult> per_attribute;
};

OneClassEval evaluate_one_class(const HyperModel& model, const ClassPool& pool,
                                const AttributeTaskSet& attrs, SplitTag split,
                                std::uint64_t seed = 0);

}  // namespace t2m
