#include "t2m/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "t2m/error.hpp"
#include "t2m/rng.hpp"

namespace t2m {

namespace {

// Substream labels so init, step and eval randomness never collide.
constexpr std::uint64_t kInitStream = 0x1000000000000001ull;
constexpr std::uint64_t kEvalSubsetStream = 0x2000000000000002ull;
constexpr std::uint64_t kCheckStream = 0x3000000000000003ull;
constexpr std::uint64_t kOneClassEvalStream = 0x4000000000000004ull;

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double sem_of(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    if (n < 2) return 0.0;
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return sd / std::sqrt(static_cast<double>(n));
}

// C(n, k) saturating at cap + 1.
std::size_t combinations_capped(std::size_t n, std::size_t k, std::size_t cap) {
    if (k > n) return 0;
    std::size_t c = 1;
    for (std::size_t i = 0; i < k; ++i) {
        if (c > cap) return cap + 1;
        c = c * (n - i) / (i + 1);
    }
    return std::min(c, cap + 1);
}

// All k-subsets of 0..n-1 in lexicographic order.
std::vector<std::vector<std::size_t>> enumerate_subsets(std::size_t n, std::size_t k) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> c(k);
    std::iota(c.begin(), c.end(), 0);
    while (true) {
        out.push_back(c);
        std::size_t j = k;
        while (j > 0 && c[j - 1] == n - k + (j - 1)) --j;
        if (j == 0) break;
        ++c[j - 1];
        for (std::size_t l = j; l < k; ++l) c[l] = c[l - 1] + 1;
    }
    return out;
}

std::vector<std::vector<std::size_t>> sample_subsets(std::size_t n, std::size_t k,
                                                     std::size_t count, Rng& rng) {
    std::set<std::vector<std::size_t>> chosen;
    while (chosen.size() < count) {
        auto pick = rng.sample_without_replacement(n, k);
        std::sort(pick.begin(), pick.end());
        chosen.insert(std::move(pick));
    }
    return {chosen.begin(), chosen.end()};
}

}  // namespace

void TrainConfig::validate() const {
    target.validate();
    if (k_train < 2) throw ConfigError("train config: k_train must be >= 2");
    if (epochs < 1 || tasks_per_epoch < 1 || batch_size < 1) {
        throw ConfigError("train config: epochs, tasks_per_epoch and batch_size must be >= 1");
    }
    if (trunk_widths.empty()) throw ConfigError("train config: trunk_widths must be nonempty");
    for (std::size_t w : trunk_widths) {
        if (w < 1) throw ConfigError("train config: trunk widths must be >= 1");
    }
    // Constructor-level checks on the optimizer hyperparameters.
    OptimState probe(1, optimizer);
}

namespace {

HyperModel init_model(const TrainConfig& cfg, std::size_t descriptor_dim) {
    HyperModel model;
    model.spec = cfg.target;
    model.pooling = cfg.pooling;
    const std::uint64_t seed = Rng::mix(cfg.seed, kInitStream);
    if (cfg.kind == HyperKind::equivariant) {
        model.params = init_hypernet(cfg.target, descriptor_dim, cfg.trunk_widths, seed);
    } else {
        model.params = init_nonev(cfg.target, descriptor_dim, cfg.k_train,
                                  cfg.trunk_widths, seed);
    }
    return model;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ClassPool& pool) {
    cfg.validate();
    pool.audit();
    if (pool.feature_dim != cfg.target.feature_dim) {
        throw ConfigError("train: pool feature dim " + std::to_string(pool.feature_dim) +
                          " vs target spec " + std::to_string(cfg.target.feature_dim));
    }

    TrainResult result;
    result.model = init_model(cfg, pool.descriptor_dim);

    std::vector<double> flat = result.model.flatten();
    OptimState opt(flat.size(), cfg.optimizer);
    const auto mask = result.model.mask();
    std::vector<double> last_good = flat;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double t0 = now_ms();
        double loss_sum = 0.0;
        for (std::size_t t = 0; t < cfg.tasks_per_epoch; ++t) {
            Rng rng(Rng::mix(cfg.seed, 1 + epoch * cfg.tasks_per_epoch + t));
            const Task task = sample_task(pool, cfg.k_train, SplitTag::train, rng);
            const Episode ep =
                make_episode(task, pool, cfg.batch_size, SplitTag::train, rng);

            ModelCache cache;
            const WeightBundle w = result.model.emit(ep.descriptors, &cache);
            const EpisodeLossResult lr = episode_loss(ep, w);
            if (!std::isfinite(lr.loss)) {
                result.model.set_flat(last_good);
                result.diverged = true;
                return result;
            }
            const std::vector<double> grads = result.model.backward_flat(lr.d_bundle, cache);
            sgd_momentum_step(flat, grads, opt, mask);
            result.model.set_flat(flat);
            loss_sum += lr.loss;
        }
        result.log.push_back({epoch + 1,
                              loss_sum / static_cast<double>(cfg.tasks_per_epoch),
                              now_ms() - t0});
        last_good = flat;
        result.completed_epochs = epoch + 1;
    }
    return result;
}

SplitMetrics evaluate_with(const SetClassifier& classifier, const ClassPool& pool,
                           std::size_t k_eval, SplitTag split, const EvalOptions& opts) {
    if (k_eval < 1) throw ContractError("evaluate: k must be >= 1");
    if (split == SplitTag::train) {
        throw ContractError("evaluate: split must be seen_eval or unseen_eval");
    }
    const auto& candidates = pool.classes_for(split);
    if (candidates.size() < k_eval) {
        throw ContractError("evaluate: k=" + std::to_string(k_eval) + " exceeds the " +
                            std::to_string(candidates.size()) + " classes in the split");
    }
    for (std::size_t c : candidates) {
        if (pool.classes[c].rows_for(split).rows() == 0) {
            throw ContractError("evaluate: class '" + pool.classes[c].id +
                                "' has no evaluation rows tagged " + split_tag_name(split));
        }
    }
    if (opts.max_tasks < 1) throw ConfigError("evaluate: max_tasks must be >= 1");

    const std::size_t total = combinations_capped(candidates.size(), k_eval, opts.max_tasks);
    std::vector<std::vector<std::size_t>> subsets;
    bool enumerated = true;
    if (total <= opts.max_tasks) {
        subsets = enumerate_subsets(candidates.size(), k_eval);
    } else {
        enumerated = false;
        Rng rng(Rng::mix(opts.seed, kEvalSubsetStream));
        subsets = sample_subsets(candidates.size(), k_eval, opts.max_tasks, rng);
    }

    std::vector<TaskResult> results(subsets.size());
    auto run_task = [&](std::size_t ti) {
        const auto& subset = subsets[ti];
        Rng rng(Rng::mix(opts.seed, ti));

        Task task;
        for (std::size_t p : subset) {
            const std::size_t ci = candidates[p];
            task.class_indices.push_back(ci);
            task.descriptor_choice.push_back(
                rng.uniform_index(pool.classes[ci].descriptors.size()));
        }
        const Matrix S = task_descriptors(task, pool);

        std::size_t n_rows = 0;
        for (std::size_t ci : task.class_indices) {
            n_rows += pool.classes[ci].rows_for(split).rows();
        }
        Matrix X(n_rows, pool.feature_dim);
        std::vector<std::size_t> labels(n_rows);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < task.class_indices.size(); ++i) {
            const Matrix& rows = pool.classes[task.class_indices[i]].rows_for(split);
            for (std::size_t r = 0; r < rows.rows(); ++r) {
                std::copy(rows.row(r).begin(), rows.row(r).end(), X.row(offset).begin());
                labels[offset] = i;
                ++offset;
            }
        }

        const std::vector<std::size_t> pred = classifier(S, X);
        if (pred.size() != n_rows) {
            throw ContractError("evaluate: classifier returned " +
                                std::to_string(pred.size()) + " labels for " +
                                std::to_string(n_rows) + " rows");
        }
        std::size_t correct = 0;
        for (std::size_t r = 0; r < n_rows; ++r) {
            if (pred[r] == labels[r]) ++correct;
        }

        TaskResult tr;
        for (std::size_t ci : task.class_indices) tr.class_ids.push_back(pool.classes[ci].id);
        tr.n_rows = n_rows;
        tr.accuracy = static_cast<double>(correct) / static_cast<double>(n_rows);
        results[ti] = std::move(tr);
    };

    const unsigned n_threads = std::max(1u, opts.threads);
    if (n_threads == 1 || subsets.size() < 2) {
        for (std::size_t ti = 0; ti < subsets.size(); ++ti) run_task(ti);
    } else {
        std::vector<std::thread> workers;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (unsigned w = 0; w < n_threads; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (std::size_t ti = w; ti < subsets.size(); ti += n_threads) {
                        run_task(ti);
                    }
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    SplitMetrics metrics;
    metrics.split = split == SplitTag::seen_eval ? "seen" : "unseen";
    metrics.k = k_eval;
    metrics.enumerated = enumerated;
    metrics.n_tasks = results.size();
    std::vector<double> accs;
    accs.reserve(results.size());
    for (const auto& r : results) accs.push_back(r.accuracy);
    metrics.mean_accuracy =
        std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    metrics.sem = sem_of(accs);
    metrics.per_task = std::move(results);
    return metrics;
}

SplitMetrics evaluate(const HyperModel& model, const ClassPool& pool, std::size_t k_eval,
                      SplitTag split, const EvalOptions& opts) {
    if (!model.supports_k(k_eval)) {
        throw ContractError("evaluate: model does not support k=" + std::to_string(k_eval));
    }
    SetClassifier classifier = [&model](const Matrix& S, const Matrix& X) {
        const WeightBundle w = model.emit(S);
        std::vector<std::size_t> pred(X.rows());
        for (std::size_t r = 0; r < X.rows(); ++r) pred[r] = predict(X.row(r), w);
        return pred;
    };
    return evaluate_with(classifier, pool, k_eval, split, opts);
}

MetricsReport evaluate_full(const HyperModel& model, const ClassPool& pool,
                            std::size_t k_eval, const EvalOptions& opts) {
    MetricsReport report;
    report.k = k_eval;
    report.seed = opts.seed;
    report.seen = evaluate(model, pool, k_eval, SplitTag::seen_eval, opts);
    report.unseen = evaluate(model, pool, k_eval, SplitTag::unseen_eval, opts);
    report.harmonic = harmonic_mean(report.seen->mean_accuracy, report.unseen->mean_accuracy);
    return report;
}

double harmonic_mean(double seen, double unseen) {
    if (seen < 0.0 || unseen < 0.0) {
        throw ContractError("harmonic_mean: inputs must be nonnegative");
    }
    const double total = seen + unseen;
    if (total == 0.0) return 0.0;
    return 2.0 * seen * unseen / total;
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw DimError("auprc: " + std::to_string(scores.size()) + " scores vs " +
                       std::to_string(labels.size()) + " labels");
    }
    std::size_t positives = 0;
    for (std::uint8_t y : labels) {
        if (y > 1) throw ContractError("auprc: labels must be 0 or 1");
        positives += y;
    }
    if (positives == 0 || positives == labels.size()) {
        throw ContractError("auprc: need at least one positive and one negative");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    double area = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        // group tied scores
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) ++tp; else ++fp;
            ++j;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

namespace {

struct LawAccumulator {
    double max_dev = 0.0;
    std::string witness;

    void update(double dev, std::size_t k, std::size_t trial) {
        if (dev > max_dev) {
            max_dev = dev;
            std::ostringstream os;
            os << "k=" << k << " trial=" << trial << " deviation=" << dev;
            witness = os.str();
        }
    }
};

}  // namespace

SymmetryReport check_equivariance(const HyperModel& model, std::size_t trials,
                                  std::span<const std::size_t> k_list, double tolerance,
                                  std::uint64_t seed) {
    if (trials < 1) throw ConfigError("check_equivariance: trials must be >= 1");
    if (k_list.empty()) throw ConfigError("check_equivariance: k_list must be nonempty");
    for (std::size_t k : k_list) {
        if (!model.supports_k(k)) {
            throw ContractError("check_equivariance: model does not support k=" +
                                std::to_string(k));
        }
    }

    const std::size_t e = model.descriptor_dim();
    const std::size_t m = model.spec.feature_dim;
    const bool has_pen = model.spec.layers == 2;
    Rng rng(Rng::mix(seed, kCheckStream));

    LawAccumulator last_acc, pen_acc, end_acc;
    std::size_t total_trials = 0;

    for (std::size_t k : k_list) {
        for (std::size_t t = 0; t < trials; ++t) {
            ++total_trials;
            Matrix S(k, e);
            for (double& v : S.data()) v = rng.normal();

            std::vector<std::size_t> perm(k);
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm);
            if (k >= 2 && std::is_sorted(perm.begin(), perm.end())) {
                std::swap(perm[0], perm[1]);  // force a nontrivial permutation
            }

            Matrix S_perm(k, e);
            for (std::size_t i = 0; i < k; ++i) {
                std::copy(S.row(perm[i]).begin(), S.row(perm[i]).end(),
                          S_perm.row(i).begin());
            }

            const WeightBundle w = model.emit(S);
            const WeightBundle w_perm = model.emit(S_perm);

            // Output rows must follow the permutation.
            double dev = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                dev = std::max(dev, max_abs_diff(w_perm.w_last.row(i),
                                                 w.w_last.row(perm[i])));
                if (!w.b_last.empty()) {
                    dev = std::max(dev, std::abs(w_perm.b_last[i] - w.b_last[perm[i]]));
                }
            }
            last_acc.update(dev, k, t);

            // Hidden layer must not move.
            if (has_pen) {
                double pen_dev = max_abs_diff(w_perm.w_pen, w.w_pen);
                if (!w.b_pen.empty()) {
                    pen_dev = std::max(pen_dev, max_abs_diff(w_perm.b_pen, w.b_pen));
                }
                pen_acc.update(pen_dev, k, t);
            }

            // End to end: permuted logits of the emitted classifier.
            std::vector<double> x(m);
            for (double& v : x) v = rng.normal();
            const std::vector<double> logits = classify(x, w);
            const std::vector<double> logits_perm = classify(x, w_perm);
            double end_dev = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                end_dev = std::max(end_dev, std::abs(logits_perm[i] - logits[perm[i]]));
            }
            end_acc.update(end_dev, k, t);
        }
    }

    SymmetryReport report;
    report.tolerance = tolerance;
    auto fill = [&](LawReport& law, const char* name, const LawAccumulator& acc,
                    bool applicable) {
        law.law = name;
        law.applicable = applicable;
        law.trials = applicable ? total_trials : 0;
        law.max_deviation = applicable ? acc.max_dev : 0.0;
        law.pass = !applicable || acc.max_dev <= tolerance;
        if (!law.pass) law.witness = acc.witness;
    };
    fill(report.w_last_law, "w_last_row_permutation", last_acc, true);
    fill(report.w_pen_law, "w_pen_invariance", pen_acc, has_pen);
    fill(report.end_to_end_law, "classifier_equivariance", end_acc, true);
    report.all_pass =
        report.w_last_law.pass && report.w_pen_law.pass && report.end_to_end_law.pass;
    return report;
}

TrainResult train_one_class(const TrainConfig& cfg, const ClassPool& pool,
                            const AttributeTaskSet& attrs) {
    cfg.target.validate();
    pool.audit();
    if (attrs.train_tasks.empty()) {
        throw ContractError("train_one_class: no training attributes");
    }
    for (const auto& task : attrs.tasks) {
        if (task.class_has.size() != pool.classes.size()) {
            throw DimError("train_one_class: attribute '" + task.name +
                           "' covers " + std::to_string(task.class_has.size()) +
                           " classes, pool has " + std::to_string(pool.classes.size()));
        }
    }
    if (cfg.kind != HyperKind::equivariant) {
        throw ConfigError("train_one_class: one-class mode uses the equivariant hypernet");
    }

    TrainResult result;
    result.model.spec = cfg.target;
    result.model.pooling = cfg.pooling;
    result.model.params = init_hypernet(cfg.target, pool.descriptor_dim, cfg.trunk_widths,
                                        Rng::mix(cfg.seed, kInitStream));

    std::vector<double> flat = result.model.flatten();
    OptimState opt(flat.size(), cfg.optimizer);
    const auto mask = result.model.mask();
    std::vector<double> last_good = flat;
    const std::size_t per_side = std::max<std::size_t>(1, cfg.batch_size / 2);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double t0 = now_ms();
        double loss_sum = 0.0;
        for (std::size_t t = 0; t < cfg.tasks_per_epoch; ++t) {
            Rng rng(Rng::mix(cfg.seed, 1 + epoch * cfg.tasks_per_epoch + t));
            const auto& attr =
                attrs.tasks[attrs.train_tasks[rng.uniform_index(attrs.train_tasks.size())]];
            const OneClassBatch batch =
                make_one_class_batch(pool, attr, per_side, SplitTag::train, rng);

            Matrix S(1, pool.descriptor_dim);
            std::copy(attr.descriptor.begin(), attr.descriptor.end(), S.row(0).begin());
            ModelCache cache;
            const WeightBundle w = result.model.emit(S, &cache);
            const OneClassLossResult lr = one_class_loss(batch.positives, batch.negatives, w);
            if (!std::isfinite(lr.loss)) {
                result.model.set_flat(last_good);
                result.diverged = true;
                return result;
            }
            const std::vector<double> grads = result.model.backward_flat(lr.d_bundle, cache);
            sgd_momentum_step(flat, grads, opt, mask);
            result.model.set_flat(flat);
            loss_sum += lr.loss;
        }
        result.log.push_back({epoch + 1,
                              loss_sum / static_cast<double>(cfg.tasks_per_epoch),
                              now_ms() - t0});
        last_good = flat;
        result.completed_epochs = epoch + 1;
    }
    return result;
}

OneClassEval evaluate_one_class(const HyperModel& model, const ClassPool& pool,
                                const AttributeTaskSet& attrs, SplitTag split,
                                std::uint64_t seed) {
    if (split == SplitTag::train) {
        throw ContractError("evaluate_one_class: split must be seen_eval or unseen_eval");
    }
    OneClassEval out;
    std::vector<double> values;

    for (std::size_t ai : attrs.eval_tasks) {
        const AttributeTask& attr = attrs.tasks[ai];
        std::vector<std::span<const double>> pos_rows, neg_rows;
        for (std::size_t c : pool.classes_for(split)) {
            const Matrix& rows = pool.classes[c].rows_for(split);
            for (std::size_t r = 0; r < rows.rows(); ++r) {
                (attr.class_has[c] ? pos_rows : neg_rows).push_back(rows.row(r));
            }
        }
        if (pos_rows.empty() || neg_rows.empty()) continue;  // attribute one-sided here

        // Balance to a 50% positive base rate.
        const std::size_t per_side = std::min(pos_rows.size(), neg_rows.size());
        Rng rng(Rng::mix(seed, Rng::mix(kOneClassEvalStream, ai)));
        auto pick = [&](std::vector<std::span<const double>>& rows) {
            if (rows.size() > per_side) {
                const auto keep = rng.sample_without_replacement(rows.size(), per_side);
                std::vector<std::span<const double>> kept;
                kept.reserve(per_side);
                for (std::size_t idx : keep) kept.push_back(rows[idx]);
                rows = std::move(kept);
            }
        };
        pick(pos_rows);
        pick(neg_rows);

        Matrix S(1, pool.descriptor_dim);
        std::copy(attr.descriptor.begin(), attr.descriptor.end(), S.row(0).begin());
        const WeightBundle w = model.emit(S);

        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        for (const auto& row : pos_rows) {
            scores.push_back(one_class_score(row, w));
            labels.push_back(1);
        }
        for (const auto& row : neg_rows) {
            scores.push_back(one_class_score(row, w));
            labels.push_back(0);
        }
        const double value = auprc(scores, labels);
        values.push_back(value);
        out.per_attribute.push_back({attr.name, scores.size(), value});
    }

    if (values.empty()) {
        throw ContractError("evaluate_one_class: no attribute had both sides in split " +
                            std::string(split_tag_name(split)));
    }
    out.n_tasks = values.size();
    out.mean_auprc =
        std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    out.sem = sem_of(values);
    return out;
}

}  // namespace t2m
