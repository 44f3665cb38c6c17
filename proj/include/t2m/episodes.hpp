#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t2m/matrix.hpp"
#include "t2m/rng.hpp"
#include "t2m/target.hpp"

namespace t2m {

struct ClassRecord {
    std::string id;
    std::string display_name;
    std::vector<std::vector<double>> descriptors;  // >= 1 alternative descriptions
    Matrix train_rows;
    Matrix seen_eval_rows;
    Matrix unseen_eval_rows;

    const Matrix& rows_for(SplitTag tag) const;
    Matrix& rows_for(SplitTag tag);
};

// Immutable-after-construction class universe: descriptors, tagged feature
// rows, the seen/unseen class partition and the inner backbone/held-out
// partition of the seen classes (recorded for provenance; features arrive
// precomputed, so no backbone is trained here).
struct ClassPool {
    std::size_t descriptor_dim = 0;
    std::size_t feature_dim = 0;
    bool normalized_descriptors = false;
    std::vector<ClassRecord> classes;  // sorted by id
    std::vector<std::size_t> seen;     // indices into classes, ascending
    std::vector<std::size_t> unseen;
    std::vector<std::size_t> backbone_seen;
    std::vector<std::size_t> heldout_seen;

    std::size_t index_of(const std::string& id) const;
    // Classes a task may draw from when episodes carry the given tag.
    const std::vector<std::size_t>& classes_for(SplitTag tag) const;
    // Split-hygiene audit: partitions disjoint and exhaustive, rows tagged
    // consistently with the partition, required rows present.
    void audit() const;
};

// L2-normalize every descriptor in place (zero vectors are left alone).
void normalize_descriptors(ClassPool& pool);

struct SplitPartitions {
    std::vector<std::string> seen;
    std::vector<std::string> unseen;
    std::vector<std::string> backbone;  // subset of seen
    std::vector<std::string> heldout;   // seen minus backbone
};

// Seeded split of a class list into seen/unseen, and of the seen part into
// backbone-training vs hypernet-held-out classes.
SplitPartitions split_classes(std::vector<std::string> class_ids, double unseen_fraction,
                              double inner_fraction, std::uint64_t seed);

// One sampled task: k distinct classes in draw order plus one descriptor
// choice per class.
struct Task {
    std::vector<std::size_t> class_indices;
    std::vector<std::size_t> descriptor_choice;
};

Task sample_task(const ClassPool& pool, std::size_t k, SplitTag split, Rng& rng);

Matrix task_descriptors(const Task& task, const ClassPool& pool);

// Balanced labeled batch over the task classes (row counts differ by at most
// one); labels are positions in the task's class order.
Episode make_episode(const Task& task, const ClassPool& pool, std::size_t batch_size,
                     SplitTag split, Rng& rng);

struct SyntheticConfig {
    std::size_t feature_dim = 16;         // m
    std::size_t descriptor_dim = 24;      // e
    std::size_t n_classes = 50;
    std::size_t seen_classes = 40;
    std::size_t unseen_classes = 10;
    std::size_t samples_per_class = 60;
    double feature_noise = 1.0;           // sigma_x
    double descriptor_noise = 0.0;        // sigma_s
    std::size_t descriptors_per_class = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

// Gaussian benchmark: class means drawn in feature space, descriptors are a
// fixed seeded linear image of the means plus noise, and the exact pairwise
// Bayes accuracy is known in closed form.
struct SyntheticPool {
    ClassPool pool;
    std::vector<std::vector<double>> class_means;  // per class, feature space
    Matrix descriptor_map;                         // e x m
    Matrix bayes;                                  // n x n pairwise accuracy
    SyntheticConfig config;

    double mean_bayes(const std::vector<std::size_t>& class_indices) const;
};

SyntheticPool gen_synthetic(const SyntheticConfig& cfg);

// Optimal two-class accuracy for spherical Gaussians with equal priors.
double bayes_pair_accuracy(const std::vector<double>& mean_a,
                           const std::vector<double>& mean_b, double sigma_x);

struct DescriptorTable {
    struct Rec {
        std::string class_id;
        std::string display_name;
        std::vector<double> values;
    };
    std::size_t dim = 0;
    std::vector<Rec> records;
};

struct FeatureTable {
    struct Rec {
        std::string class_id;
        SplitTag tag = SplitTag::train;
        std::vector<double> values;
    };
    std::size_t dim = 0;
    std::vector<Rec> records;
};

// Text formats: a mandatory "#dim <n>" header, then one tab-separated record
// per line; later lines starting with '#' are comments. Values are written
// with 17 significant digits so a round trip is value-exact.
DescriptorTable load_descriptors(const std::string& path);
FeatureTable load_features(const std::string& path);
void save_descriptors(const std::string& path, const DescriptorTable& table);
void save_features(const std::string& path, const FeatureTable& table);

DescriptorTable descriptor_table(const ClassPool& pool);
FeatureTable feature_table(const ClassPool& pool);

// Assembles a pool from loaded tables. The seen/unseen partition is derived
// from the row tags; every class must appear in both tables.
ClassPool build_pool(const DescriptorTable& descriptors, const FeatureTable& features,
                     bool normalize);

// One-class concept cutting across class boundaries: a direction in feature
// space, its induced per-class membership (median split, so half the classes
// are positive), and a descriptor obtained through the same linear map as the
// class descriptors.
struct AttributeTask {
    std::string name;
    std::vector<double> descriptor;       // e
    std::vector<std::uint8_t> class_has;  // per pool class index
};

struct AttributeTaskSet {
    std::vector<AttributeTask> tasks;
    std::vector<std::size_t> train_tasks;
    std::vector<std::size_t> eval_tasks;
};

AttributeTaskSet gen_attribute_tasks(const SyntheticPool& sp, std::size_t n_attributes,
                                     double train_fraction, std::uint64_t seed);

struct OneClassBatch {
    Matrix positives;
    Matrix negatives;
};

// Balanced 1:1 batch for an attribute: positives from classes that have it,
// negatives sampled uniformly from the split's other classes.
OneClassBatch make_one_class_batch(const ClassPool& pool, const AttributeTask& attr,
                                   std::size_t per_side, SplitTag split, Rng& rng);

}  // namespace t2m
