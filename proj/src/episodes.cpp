#include "t2m/episodes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include "t2m/error.hpp"

namespace t2m {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        throw ParseError("line " + std::to_string(line_no) + ": bad float '" +
                         std::string(s) + "'");
    }
    return v;
}

std::vector<double> parse_floats(std::string_view s, std::size_t dim, std::size_t line_no) {
    std::vector<double> out;
    out.reserve(dim);
    std::size_t pos = 0;
    while (pos < s.size()) {
        while (pos < s.size() && s[pos] == ' ') ++pos;
        if (pos >= s.size()) break;
        std::size_t end = pos;
        while (end < s.size() && s[end] != ' ') ++end;
        out.push_back(parse_double(s.substr(pos, end - pos), line_no));
        pos = end;
    }
    if (out.size() != dim) {
        throw ParseError("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(dim) + " values, got " + std::to_string(out.size()));
    }
    return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
        const std::size_t tab = line.find('\t', pos);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(pos));
            break;
        }
        fields.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return fields;
}

std::size_t parse_dim_header(const std::string& line, const std::string& path) {
    constexpr std::string_view prefix = "#dim ";
    if (line.rfind(prefix, 0) != 0) {
        throw ParseError(path + ": first line must be '#dim <n>', got '" + line + "'");
    }
    std::size_t dim = 0;
    const char* first = line.data() + prefix.size();
    const char* last = line.data() + line.size();
    auto res = std::from_chars(first, last, dim);
    if (res.ec != std::errc() || res.ptr != last || dim == 0) {
        throw ParseError(path + ": bad dimension in header '" + line + "'");
    }
    return dim;
}

void append_row(Matrix& m, const std::vector<double>& row) {
    if (m.empty()) {
        m = Matrix(1, row.size());
        std::copy(row.begin(), row.end(), m.row(0).begin());
        return;
    }
    Matrix grown(m.rows() + 1, m.cols());
    std::copy(m.data().begin(), m.data().end(), grown.data().begin());
    std::copy(row.begin(), row.end(), grown.row(m.rows()).begin());
    m = std::move(grown);
}

void sample_rows(const Matrix& source, std::size_t count, Rng& rng, Matrix& dest,
                 std::size_t dest_offset) {
    if (count <= source.rows()) {
        const auto picks = rng.sample_without_replacement(source.rows(), count);
        for (std::size_t i = 0; i < count; ++i) {
            std::copy(source.row(picks[i]).begin(), source.row(picks[i]).end(),
                      dest.row(dest_offset + i).begin());
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t pick = rng.uniform_index(source.rows());
            std::copy(source.row(pick).begin(), source.row(pick).end(),
                      dest.row(dest_offset + i).begin());
        }
    }
}

}  // namespace

const Matrix& ClassRecord::rows_for(SplitTag tag) const {
    switch (tag) {
        case SplitTag::train: return train_rows;
        case SplitTag::seen_eval: return seen_eval_rows;
        case SplitTag::unseen_eval: return unseen_eval_rows;
    }
    return train_rows;
}

Matrix& ClassRecord::rows_for(SplitTag tag) {
    return const_cast<Matrix&>(static_cast<const ClassRecord&>(*this).rows_for(tag));
}

std::size_t ClassPool::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].id == id) return i;
    }
    throw ContractError("pool: unknown class id '" + id + "'");
}

const std::vector<std::size_t>& ClassPool::classes_for(SplitTag tag) const {
    return tag == SplitTag::unseen_eval ? unseen : seen;
}

void ClassPool::audit() const {
    std::set<std::size_t> seen_set(seen.begin(), seen.end());
    std::set<std::size_t> unseen_set(unseen.begin(), unseen.end());
    if (seen_set.size() + unseen_set.size() != classes.size()) {
        throw ContractError("pool audit: seen/unseen partition not exhaustive");
    }
    for (std::size_t i : unseen) {
        if (seen_set.count(i)) throw ContractError("pool audit: class in both partitions");
    }
    std::set<std::size_t> inner(backbone_seen.begin(), backbone_seen.end());
    inner.insert(heldout_seen.begin(), heldout_seen.end());
    if (inner != seen_set ||
        backbone_seen.size() + heldout_seen.size() != seen_set.size()) {
        throw ContractError("pool audit: backbone/held-out partition does not cover seen");
    }

    for (std::size_t i = 0; i < classes.size(); ++i) {
        const ClassRecord& c = classes[i];
        if (c.descriptors.empty()) {
            throw ContractError("pool audit: class '" + c.id + "' has no descriptors");
        }
        for (const auto& d : c.descriptors) {
            if (d.size() != descriptor_dim) {
                throw DimError("pool audit: class '" + c.id + "' descriptor width " +
                               std::to_string(d.size()) + " vs pool " +
                               std::to_string(descriptor_dim));
            }
        }
        const bool is_seen = seen_set.count(i) > 0;
        if (is_seen) {
            if (c.train_rows.rows() == 0) {
                throw ContractError("pool audit: seen class '" + c.id + "' has no train rows");
            }
            if (c.unseen_eval_rows.rows() != 0) {
                throw ContractError("pool audit: seen class '" + c.id +
                                    "' carries unseen_eval rows");
            }
        } else {
            if (c.unseen_eval_rows.rows() == 0) {
                throw ContractError("pool audit: unseen class '" + c.id +
                                    "' has no unseen_eval rows");
            }
            if (c.train_rows.rows() != 0 || c.seen_eval_rows.rows() != 0) {
                throw ContractError("pool audit: unseen class '" + c.id +
                                    "' carries train or seen_eval rows");
            }
        }
    }
}

void normalize_descriptors(ClassPool& pool) {
    for (auto& c : pool.classes) {
        for (auto& d : c.descriptors) {
            double norm = 0.0;
            for (double v : d) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 0.0) {
                for (double& v : d) v /= norm;
            }
        }
    }
    pool.normalized_descriptors = true;
}

SplitPartitions split_classes(std::vector<std::string> class_ids, double unseen_fraction,
                              double inner_fraction, std::uint64_t seed) {
    if (!(unseen_fraction > 0.0 && unseen_fraction < 1.0) ||
        !(inner_fraction > 0.0 && inner_fraction < 1.0)) {
        throw ConfigError("split_classes: fractions must lie in (0, 1)");
    }
    const std::size_t n = class_ids.size();
    const auto n_unseen =
        static_cast<std::size_t>(std::llround(unseen_fraction * static_cast<double>(n)));
    if (n_unseen == 0 || n_unseen >= n) {
        throw ConfigError("split_classes: " + std::to_string(n) +
                          " classes cannot be split with unseen_fraction " +
                          std::to_string(unseen_fraction));
    }
    const std::size_t n_seen = n - n_unseen;
    const auto n_heldout =
        static_cast<std::size_t>(std::llround(inner_fraction * static_cast<double>(n_seen)));
    if (n_heldout == 0 || n_heldout >= n_seen) {
        throw ConfigError("split_classes: " + std::to_string(n_seen) +
                          " seen classes cannot be split with inner_fraction " +
                          std::to_string(inner_fraction));
    }

    Rng rng(seed);
    rng.shuffle(class_ids);

    SplitPartitions parts;
    parts.unseen.assign(class_ids.begin(), class_ids.begin() + n_unseen);
    parts.seen.assign(class_ids.begin() + n_unseen, class_ids.end());
    parts.heldout.assign(parts.seen.begin(), parts.seen.begin() + n_heldout);
    parts.backbone.assign(parts.seen.begin() + n_heldout, parts.seen.end());
    return parts;
}

Task sample_task(const ClassPool& pool, std::size_t k, SplitTag split, Rng& rng) {
    const auto& candidates = pool.classes_for(split);
    if (k == 0) throw ContractError("sample_task: k must be >= 1");
    if (k > candidates.size()) {
        throw ContractError("sample_task: k=" + std::to_string(k) + " exceeds the " +
                            std::to_string(candidates.size()) + " classes in the split");
    }
    Task task;
    const auto picks = rng.sample_without_replacement(candidates.size(), k);
    task.class_indices.reserve(k);
    task.descriptor_choice.reserve(k);
    for (std::size_t p : picks) {
        const std::size_t ci = candidates[p];
        task.class_indices.push_back(ci);
        task.descriptor_choice.push_back(
            rng.uniform_index(pool.classes[ci].descriptors.size()));
    }
    return task;
}

Matrix task_descriptors(const Task& task, const ClassPool& pool) {
    Matrix S(task.class_indices.size(), pool.descriptor_dim);
    for (std::size_t i = 0; i < task.class_indices.size(); ++i) {
        const auto& d =
            pool.classes[task.class_indices[i]].descriptors[task.descriptor_choice[i]];
        std::copy(d.begin(), d.end(), S.row(i).begin());
    }
    return S;
}

Episode make_episode(const Task& task, const ClassPool& pool, std::size_t batch_size,
                     SplitTag split, Rng& rng) {
    const std::size_t k = task.class_indices.size();
    if (k == 0) throw ContractError("make_episode: empty task");
    if (batch_size == 0) throw ContractError("make_episode: batch_size must be >= 1");

    std::vector<std::size_t> counts(k, batch_size / k);
    for (std::size_t i = 0; i < batch_size % k; ++i) ++counts[i];

    Episode ep;
    ep.split = split;
    ep.descriptors = task_descriptors(task, pool);
    ep.features = Matrix(batch_size, pool.feature_dim);
    ep.labels.reserve(batch_size);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const ClassRecord& c = pool.classes[task.class_indices[i]];
        ep.class_ids.push_back(c.id);
        const Matrix& rows = c.rows_for(split);
        if (counts[i] > 0 && rows.rows() == 0) {
            throw ContractError("make_episode: class '" + c.id + "' has no rows tagged " +
                                split_tag_name(split));
        }
        sample_rows(rows, counts[i], rng, ep.features, offset);
        for (std::size_t r = 0; r < counts[i]; ++r) ep.labels.push_back(i);
        offset += counts[i];
    }
    return ep;
}

void SyntheticConfig::validate() const {
    if (feature_dim < 1 || descriptor_dim < 1) {
        throw ConfigError("synthetic: dimensions must be >= 1");
    }
    if (n_classes < 1 || samples_per_class < 1 || descriptors_per_class < 1) {
        throw ConfigError("synthetic: counts must be >= 1");
    }
    if (seen_classes + unseen_classes != n_classes) {
        throw ConfigError("synthetic: seen (" + std::to_string(seen_classes) +
                          ") + unseen (" + std::to_string(unseen_classes) +
                          ") must equal n_classes (" + std::to_string(n_classes) + ")");
    }
    if (seen_classes == 0) throw ConfigError("synthetic: need at least one seen class");
    if (feature_noise < 0.0 || descriptor_noise < 0.0) {
        throw ConfigError("synthetic: noise levels must be >= 0");
    }
}

double bayes_pair_accuracy(const std::vector<double>& mean_a,
                           const std::vector<double>& mean_b, double sigma_x) {
    if (mean_a.size() != mean_b.size()) {
        throw DimError("bayes_pair_accuracy: mean lengths differ");
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < mean_a.size(); ++i) {
        const double diff = mean_a[i] - mean_b[i];
        d2 += diff * diff;
    }
    const double dist = std::sqrt(d2);
    if (sigma_x == 0.0) return dist > 0.0 ? 1.0 : 0.5;
    const double z = dist / (2.0 * sigma_x);
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double SyntheticPool::mean_bayes(const std::vector<std::size_t>& class_indices) const {
    double total = 0.0;
    std::size_t n_pairs = 0;
    for (std::size_t a = 0; a < class_indices.size(); ++a) {
        for (std::size_t b = a + 1; b < class_indices.size(); ++b) {
            total += bayes(class_indices[a], class_indices[b]);
            ++n_pairs;
        }
    }
    if (n_pairs == 0) throw ContractError("mean_bayes: need at least two classes");
    return total / static_cast<double>(n_pairs);
}

SyntheticPool gen_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    SyntheticPool sp;
    sp.config = cfg;

    // Fixed seeded linear map from feature space to descriptor space.
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    sp.descriptor_map = Matrix(cfg.descriptor_dim, cfg.feature_dim);
    for (double& v : sp.descriptor_map.data()) v = rng.normal() * map_scale;

    ClassPool& pool = sp.pool;
    pool.descriptor_dim = cfg.descriptor_dim;
    pool.feature_dim = cfg.feature_dim;

    std::size_t width = 1;
    for (std::size_t n = cfg.n_classes; n >= 10; n /= 10) ++width;

    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        std::string num = std::to_string(c);
        num.insert(0, width - num.size(), '0');
        ClassRecord rec;
        rec.id = "class_" + num;
        rec.display_name = rec.id;

        std::vector<double> mean(cfg.feature_dim);
        for (double& v : mean) v = rng.normal();

        for (std::size_t d = 0; d < cfg.descriptors_per_class; ++d) {
            std::vector<double> desc(cfg.descriptor_dim);
            for (std::size_t i = 0; i < cfg.descriptor_dim; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
                    acc += sp.descriptor_map(i, j) * mean[j];
                }
                desc[i] = acc + cfg.descriptor_noise * rng.normal();
            }
            rec.descriptors.push_back(std::move(desc));
        }

        Matrix rows(cfg.samples_per_class, cfg.feature_dim);
        for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
            for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
                rows(s, j) = mean[j] + cfg.feature_noise * rng.normal();
            }
        }

        const bool is_seen = c < cfg.seen_classes;
        if (is_seen) {
            // Hold out 10% of rows (at least one when possible) for seen-class
            // evaluation.
            std::size_t n_eval =
                cfg.samples_per_class >= 2
                    ? std::max<std::size_t>(
                          1, static_cast<std::size_t>(std::llround(
                                 0.1 * static_cast<double>(cfg.samples_per_class))))
                    : 0;
            const std::size_t n_train = cfg.samples_per_class - n_eval;
            rec.train_rows = Matrix(n_train, cfg.feature_dim);
            rec.seen_eval_rows = Matrix(n_eval, cfg.feature_dim);
            for (std::size_t s = 0; s < n_train; ++s) {
                std::copy(rows.row(s).begin(), rows.row(s).end(),
                          rec.train_rows.row(s).begin());
            }
            for (std::size_t s = 0; s < n_eval; ++s) {
                std::copy(rows.row(n_train + s).begin(), rows.row(n_train + s).end(),
                          rec.seen_eval_rows.row(s).begin());
            }
            pool.seen.push_back(c);
        } else {
            rec.unseen_eval_rows = std::move(rows);
            pool.unseen.push_back(c);
        }

        pool.classes.push_back(std::move(rec));
        sp.class_means.push_back(std::move(mean));
    }

    // Inner 80:20 backbone/held-out partition of the seen classes, recorded as
    // provenance metadata.
    const auto n_heldout = static_cast<std::size_t>(
        std::llround(0.2 * static_cast<double>(pool.seen.size())));
    pool.backbone_seen.assign(pool.seen.begin(), pool.seen.end() - n_heldout);
    pool.heldout_seen.assign(pool.seen.end() - n_heldout, pool.seen.end());

    sp.bayes = Matrix(cfg.n_classes, cfg.n_classes);
    for (std::size_t a = 0; a < cfg.n_classes; ++a) {
        sp.bayes(a, a) = 0.5;
        for (std::size_t b = a + 1; b < cfg.n_classes; ++b) {
            const double acc =
                bayes_pair_accuracy(sp.class_means[a], sp.class_means[b], cfg.feature_noise);
            sp.bayes(a, b) = acc;
            sp.bayes(b, a) = acc;
        }
    }

    pool.audit();
    return sp;
}

DescriptorTable load_descriptors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open descriptor file '" + path + "'");
    DescriptorTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            table.dim = parse_dim_header(line, path);
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 3) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 3 tab-separated fields, got " +
                             std::to_string(fields.size()));
        }
        DescriptorTable::Rec rec;
        rec.class_id = std::string(fields[0]);
        rec.display_name = std::string(fields[1]);
        rec.values = parse_floats(fields[2], table.dim, line_no);
        if (rec.class_id.empty()) {
            throw ParseError("line " + std::to_string(line_no) + ": empty class id");
        }
        table.records.push_back(std::move(rec));
    }
    if (line_no == 0) throw ParseError(path + ": empty file, missing '#dim' header");
    return table;
}

FeatureTable load_features(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature file '" + path + "'");
    FeatureTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            table.dim = parse_dim_header(line, path);
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 3) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 3 tab-separated fields, got " +
                             std::to_string(fields.size()));
        }
        FeatureTable::Rec rec;
        rec.class_id = std::string(fields[0]);
        try {
            rec.tag = parse_split_tag(std::string(fields[1]));
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        rec.values = parse_floats(fields[2], table.dim, line_no);
        if (rec.class_id.empty()) {
            throw ParseError("line " + std::to_string(line_no) + ": empty class id");
        }
        table.records.push_back(std::move(rec));
    }
    if (line_no == 0) throw ParseError(path + ": empty file, missing '#dim' header");
    return table;
}

void save_descriptors(const std::string& path, const DescriptorTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write descriptor file '" + path + "'");
    out << "#dim " << table.dim << "\n";
    for (const auto& rec : table.records) {
        out << rec.class_id << '\t' << rec.display_name << '\t';
        for (std::size_t i = 0; i < rec.values.size(); ++i) {
            if (i) out << ' ';
            out << format_double(rec.values[i]);
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

void save_features(const std::string& path, const FeatureTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write feature file '" + path + "'");
    out << "#dim " << table.dim << "\n";
    for (const auto& rec : table.records) {
        out << rec.class_id << '\t' << split_tag_name(rec.tag) << '\t';
        for (std::size_t i = 0; i < rec.values.size(); ++i) {
            if (i) out << ' ';
            out << format_double(rec.values[i]);
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

DescriptorTable descriptor_table(const ClassPool& pool) {
    DescriptorTable table;
    table.dim = pool.descriptor_dim;
    for (const auto& c : pool.classes) {
        for (const auto& d : c.descriptors) {
            table.records.push_back({c.id, c.display_name, d});
        }
    }
    return table;
}

FeatureTable feature_table(const ClassPool& pool) {
    FeatureTable table;
    table.dim = pool.feature_dim;
    for (const auto& c : pool.classes) {
        for (SplitTag tag : {SplitTag::train, SplitTag::seen_eval, SplitTag::unseen_eval}) {
            const Matrix& rows = c.rows_for(tag);
            for (std::size_t r = 0; r < rows.rows(); ++r) {
                FeatureTable::Rec rec;
                rec.class_id = c.id;
                rec.tag = tag;
                rec.values.assign(rows.row(r).begin(), rows.row(r).end());
                table.records.push_back(std::move(rec));
            }
        }
    }
    return table;
}

ClassPool build_pool(const DescriptorTable& descriptors, const FeatureTable& features,
                     bool normalize) {
    ClassPool pool;
    pool.descriptor_dim = descriptors.dim;
    pool.feature_dim = features.dim;

    std::map<std::string, ClassRecord> by_id;
    for (const auto& rec : descriptors.records) {
        auto [it, inserted] = by_id.try_emplace(rec.class_id);
        if (inserted) {
            it->second.id = rec.class_id;
            it->second.display_name = rec.display_name;
        }
        it->second.descriptors.push_back(rec.values);
    }

    for (const auto& rec : features.records) {
        auto it = by_id.find(rec.class_id);
        if (it == by_id.end()) {
            throw ContractError("feature rows for class '" + rec.class_id +
                                "' have no descriptor");
        }
        append_row(it->second.rows_for(rec.tag), rec.values);
    }

    for (auto& [id, rec] : by_id) {
        const bool has_rows = rec.train_rows.rows() || rec.seen_eval_rows.rows() ||
                              rec.unseen_eval_rows.rows();
        if (!has_rows) {
            throw ContractError("class '" + id + "' has descriptors but no feature rows");
        }
        const std::size_t idx = pool.classes.size();
        if (rec.train_rows.rows() > 0) {
            pool.seen.push_back(idx);
        } else if (rec.unseen_eval_rows.rows() > 0) {
            pool.unseen.push_back(idx);
        } else {
            throw ContractError("class '" + id +
                                "' has only seen_eval rows; seen classes need train rows");
        }
        pool.classes.push_back(std::move(rec));
    }

    // Ingested features come from an external backbone, so the inner
    // backbone/held-out provenance split is degenerate here.
    pool.backbone_seen = pool.seen;

    if (normalize) normalize_descriptors(pool);
    pool.audit();
    return pool;
}

AttributeTaskSet gen_attribute_tasks(const SyntheticPool& sp, std::size_t n_attributes,
                                     double train_fraction, std::uint64_t seed) {
    if (n_attributes < 2) throw ConfigError("gen_attribute_tasks: need >= 2 attributes");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("gen_attribute_tasks: train_fraction must lie in (0, 1)");
    }
    const std::size_t n_classes = sp.pool.classes.size();
    const std::size_t m = sp.pool.feature_dim;
    Rng rng(seed);

    AttributeTaskSet set;
    std::size_t width = 1;
    for (std::size_t n = n_attributes; n >= 10; n /= 10) ++width;

    for (std::size_t a = 0; a < n_attributes; ++a) {
        std::vector<double> dir(m);
        double norm = 0.0;
        for (double& v : dir) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : dir) v /= norm;

        std::vector<double> proj(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += dir[j] * sp.class_means[c][j];
            proj[c] = acc;
        }
        std::vector<double> sorted = proj;
        std::sort(sorted.begin(), sorted.end());
        const double median = sorted[n_classes / 2];

        AttributeTask task;
        std::string num = std::to_string(a);
        num.insert(0, width - num.size(), '0');
        task.name = "attr_" + num;
        task.class_has.resize(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            task.class_has[c] = proj[c] >= median ? 1 : 0;
        }

        task.descriptor.resize(sp.pool.descriptor_dim);
        for (std::size_t i = 0; i < sp.pool.descriptor_dim; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += sp.descriptor_map(i, j) * dir[j];
            task.descriptor[i] = acc + sp.config.descriptor_noise * rng.normal();
        }
        if (sp.pool.normalized_descriptors) {
            double dnorm = 0.0;
            for (double v : task.descriptor) dnorm += v * v;
            dnorm = std::sqrt(dnorm);
            if (dnorm > 0.0) {
                for (double& v : task.descriptor) v /= dnorm;
            }
        }
        set.tasks.push_back(std::move(task));
    }

    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(n_attributes)));
    if (n_train == 0 || n_train >= n_attributes) {
        throw ConfigError("gen_attribute_tasks: train_fraction leaves an empty side");
    }
    for (std::size_t a = 0; a < n_attributes; ++a) {
        (a < n_train ? set.train_tasks : set.eval_tasks).push_back(a);
    }
    return set;
}

OneClassBatch make_one_class_batch(const ClassPool& pool, const AttributeTask& attr,
                                   std::size_t per_side, SplitTag split, Rng& rng) {
    if (per_side == 0) throw ContractError("make_one_class_batch: per_side must be >= 1");
    std::vector<std::size_t> pos, neg;
    for (std::size_t c : pool.classes_for(split)) {
        if (pool.classes[c].rows_for(split).rows() == 0) continue;
        (attr.class_has[c] ? pos : neg).push_back(c);
    }
    if (pos.empty() || neg.empty()) {
        throw ContractError("make_one_class_batch: attribute '" + attr.name +
                            "' has no " + (pos.empty() ? "positive" : "negative") +
                            " classes in split " + split_tag_name(split));
    }

    OneClassBatch batch;
    batch.positives = Matrix(per_side, pool.feature_dim);
    batch.negatives = Matrix(per_side, pool.feature_dim);
    for (std::size_t s = 0; s < per_side; ++s) {
        const auto& prows =
            pool.classes[pos[rng.uniform_index(pos.size())]].rows_for(split);
        const auto src_p = prows.row(rng.uniform_index(prows.rows()));
        std::copy(src_p.begin(), src_p.end(), batch.positives.row(s).begin());

        const auto& nrows =
            pool.classes[neg[rng.uniform_index(neg.size())]].rows_for(split);
        const auto src_n = nrows.row(rng.uniform_index(nrows.rows()));
        std::copy(src_n.begin(), src_n.end(), batch.negatives.row(s).begin());
    }
    return batch;
}

}  // namespace t2m
