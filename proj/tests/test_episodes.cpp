#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "t2m/episodes.hpp"
#include "t2m/error.hpp"
#include "t2m/rng.hpp"
#include "test_util.hpp"

using namespace t2m;
using t2m_test::TempDir;
using t2m_test::read_file;
using t2m_test::write_file;

namespace {

std::vector<std::string> make_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("c" + std::to_string(i));
    return ids;
}

// Tiny pool built by hand: two seen classes with sentinel-valued rows, one
// unseen class.
ClassPool tiny_pool() {
    ClassPool pool;
    pool.descriptor_dim = 2;
    pool.feature_dim = 1;
    auto add_class = [&](const std::string& id, double train_value, double eval_value,
                         bool seen) {
        ClassRecord rec;
        rec.id = id;
        rec.display_name = id;
        rec.descriptors = {{1.0, 0.0}};
        if (seen) {
            rec.train_rows = Matrix(3, 1, train_value);
            rec.seen_eval_rows = Matrix(2, 1, eval_value);
        } else {
            rec.unseen_eval_rows = Matrix(2, 1, eval_value);
        }
        pool.classes.push_back(rec);
    };
    add_class("a", 10.0, 20.0, true);
    add_class("b", 11.0, 21.0, true);
    add_class("z", 0.0, 30.0, false);
    pool.seen = {0, 1};
    pool.unseen = {2};
    pool.backbone_seen = {0, 1};
    pool.audit();
    return pool;
}

}  // namespace

TEST_CASE("split_classes: 50 classes at 0.2 give the 40/10 split") {
    const SplitPartitions parts = split_classes(make_ids(50), 0.2, 0.2, 7);
    CHECK(parts.seen.size() == 40);
    CHECK(parts.unseen.size() == 10);
    CHECK(parts.heldout.size() == 8);
    CHECK(parts.backbone.size() == 32);

    // disjoint and exhaustive
    std::set<std::string> all(parts.seen.begin(), parts.seen.end());
    all.insert(parts.unseen.begin(), parts.unseen.end());
    CHECK(all.size() == 50);
    std::set<std::string> inner(parts.backbone.begin(), parts.backbone.end());
    inner.insert(parts.heldout.begin(), parts.heldout.end());
    CHECK(inner == std::set<std::string>(parts.seen.begin(), parts.seen.end()));
}

TEST_CASE("split_classes: deterministic per seed, guarded against degenerate fractions") {
    const SplitPartitions a = split_classes(make_ids(20), 0.25, 0.2, 11);
    const SplitPartitions b = split_classes(make_ids(20), 0.25, 0.2, 11);
    CHECK(a.seen == b.seen);
    CHECK(a.unseen == b.unseen);
    CHECK(a.backbone == b.backbone);

    const SplitPartitions c = split_classes(make_ids(20), 0.25, 0.2, 12);
    CHECK(a.unseen != c.unseen);

    CHECK_THROWS_AS(split_classes(make_ids(3), 0.999, 0.2, 1), ConfigError);
    CHECK_THROWS_AS(split_classes(make_ids(10), 0.0, 0.2, 1), ConfigError);
    CHECK_THROWS_AS(split_classes(make_ids(10), 0.2, 1.0, 1), ConfigError);
}

TEST_CASE("sample_task: exhaustive pair coverage, full-set draw, guards") {
    SyntheticConfig cfg;
    cfg.n_classes = 12;
    cfg.seen_classes = 2;
    cfg.unseen_classes = 10;
    cfg.samples_per_class = 4;
    cfg.seed = 5;
    const SyntheticPool sp = gen_synthetic(cfg);

    Rng rng(99);
    std::set<std::set<std::size_t>> pairs;
    for (int draw = 0; draw < 4000; ++draw) {
        const Task t = sample_task(sp.pool, 2, SplitTag::unseen_eval, rng);
        CHECK(t.class_indices[0] != t.class_indices[1]);
        pairs.insert({t.class_indices[0], t.class_indices[1]});
    }
    CHECK(pairs.size() == 45);  // C(10, 2)

    const Task full = sample_task(sp.pool, 10, SplitTag::unseen_eval, rng);
    std::set<std::size_t> unique(full.class_indices.begin(), full.class_indices.end());
    CHECK(unique.size() == 10);

    CHECK_THROWS_AS(sample_task(sp.pool, 11, SplitTag::unseen_eval, rng), ContractError);
    CHECK_THROWS_AS(sample_task(sp.pool, 0, SplitTag::unseen_eval, rng), ContractError);
}

TEST_CASE("sample_task: descriptor choice is uniform over the alternatives") {
    ClassPool pool = tiny_pool();
    // five alternative descriptions for class a
    pool.classes[0].descriptors = {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}};

    Rng rng(123);
    std::vector<std::size_t> counts(5, 0);
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) {
        const Task t = sample_task(pool, 2, SplitTag::train, rng);
        for (std::size_t j = 0; j < t.class_indices.size(); ++j) {
            if (t.class_indices[j] == 0) ++counts[t.descriptor_choice[j]];
        }
    }
    const double total = static_cast<double>(counts[0] + counts[1] + counts[2] + counts[3] +
                                             counts[4]);
    const double expected = total / 5.0;
    double chi2 = 0.0;
    for (std::size_t c : counts) {
        const double diff = static_cast<double>(c) - expected;
        chi2 += diff * diff / expected;
    }
    CHECK(chi2 < 13.2767);  // chi-square critical value, df=4, p=0.01
}

TEST_CASE("make_episode: balanced batches, label order, leakage and error paths") {
    const ClassPool pool = tiny_pool();
    Rng rng(7);
    Task task;
    task.class_indices = {0, 1};
    task.descriptor_choice = {0, 0};

    const Episode ep = make_episode(task, pool, 8, SplitTag::train, rng);
    CHECK(ep.features.rows() == 8);
    CHECK(std::count(ep.labels.begin(), ep.labels.end(), 0u) == 4);
    CHECK(std::count(ep.labels.begin(), ep.labels.end(), 1u) == 4);
    // train episodes only contain train-tagged sentinel values
    for (std::size_t r = 0; r < ep.features.rows(); ++r) {
        CHECK(ep.features(r, 0) == (ep.labels[r] == 0 ? 10.0 : 11.0));
    }

    // reordering the task classes reorders the labels with them
    Task flipped;
    flipped.class_indices = {1, 0};
    flipped.descriptor_choice = {0, 0};
    Rng rng2(7);
    const Episode ep2 = make_episode(flipped, pool, 8, SplitTag::train, rng2);
    for (std::size_t r = 0; r < ep2.features.rows(); ++r) {
        CHECK(ep2.features(r, 0) == (ep2.labels[r] == 0 ? 11.0 : 10.0));
    }

    // seen_eval episodes never contain train-tagged rows
    Rng rng3(8);
    const Episode ev = make_episode(task, pool, 6, SplitTag::seen_eval, rng3);
    for (std::size_t r = 0; r < ev.features.rows(); ++r) {
        CHECK((ev.features(r, 0) == 20.0 || ev.features(r, 0) == 21.0));
    }

    // unseen class has no train rows: asking for them names the class
    Task bad;
    bad.class_indices = {2};
    bad.descriptor_choice = {0};
    try {
        make_episode(bad, pool, 4, SplitTag::train, rng);
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("'z'") != std::string::npos);
    }
}

TEST_CASE("bayes_pair_accuracy limits") {
    const std::vector<double> mu_a{1.0, 0.0};
    const std::vector<double> mu_b{-1.0, 0.0};
    CHECK(bayes_pair_accuracy(mu_a, mu_b, 0.0) == 1.0);
    CHECK(bayes_pair_accuracy(mu_a, mu_a, 0.0) == 0.5);
    CHECK(bayes_pair_accuracy(mu_a, mu_a, 1.0) == 0.5);
    // sigma -> 0 drives accuracy to 1
    CHECK(bayes_pair_accuracy(mu_a, mu_b, 1e-3) == doctest::Approx(1.0));
    // phi(1) for distance 2, sigma 1
    CHECK(bayes_pair_accuracy(mu_a, mu_b, 1.0) ==
          doctest::Approx(0.841344746068543).epsilon(1e-12));
}

TEST_CASE("gen_synthetic: oracle agrees with an empirical nearest-mean classifier") {
    SyntheticConfig cfg;
    cfg.feature_dim = 6;
    cfg.n_classes = 4;
    cfg.seen_classes = 2;
    cfg.unseen_classes = 2;
    cfg.samples_per_class = 5;
    cfg.feature_noise = 1.3;
    cfg.seed = 17;
    const SyntheticPool sp = gen_synthetic(cfg);

    const auto& mu_a = sp.class_means[0];
    const auto& mu_b = sp.class_means[1];
    Rng rng(555);
    std::size_t correct = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        const bool from_a = i % 2 == 0;
        const auto& mu = from_a ? mu_a : mu_b;
        double dist_a = 0.0, dist_b = 0.0;
        for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
            const double x = mu[j] + cfg.feature_noise * rng.normal();
            dist_a += (x - mu_a[j]) * (x - mu_a[j]);
            dist_b += (x - mu_b[j]) * (x - mu_b[j]);
        }
        const bool pick_a = dist_a < dist_b;
        if (pick_a == from_a) ++correct;
    }
    const double empirical = static_cast<double>(correct) / static_cast<double>(n);
    CHECK(std::abs(empirical - sp.bayes(0, 1)) <= 0.005);
}

TEST_CASE("gen_synthetic: same seed gives byte-identical serialized pools") {
    SyntheticConfig cfg;
    cfg.n_classes = 6;
    cfg.seen_classes = 4;
    cfg.unseen_classes = 2;
    cfg.samples_per_class = 7;
    cfg.descriptors_per_class = 2;
    cfg.descriptor_noise = 0.1;
    cfg.seed = 42;

    TempDir dir;
    const SyntheticPool a = gen_synthetic(cfg);
    const SyntheticPool b = gen_synthetic(cfg);
    save_descriptors(dir.file("da.txt"), descriptor_table(a.pool));
    save_descriptors(dir.file("db.txt"), descriptor_table(b.pool));
    save_features(dir.file("fa.txt"), feature_table(a.pool));
    save_features(dir.file("fb.txt"), feature_table(b.pool));
    CHECK(read_file(dir.file("da.txt")) == read_file(dir.file("db.txt")));
    CHECK(read_file(dir.file("fa.txt")) == read_file(dir.file("fb.txt")));

    // seen classes hold out 10% of rows for seen evaluation
    const ClassRecord& seen0 = a.pool.classes[0];
    CHECK(seen0.train_rows.rows() == 6);
    CHECK(seen0.seen_eval_rows.rows() == 1);

    SyntheticConfig bad = cfg;
    bad.unseen_classes = 3;
    CHECK_THROWS_AS(gen_synthetic(bad), ConfigError);
}

TEST_CASE("descriptor file: worked example and parse errors with line numbers") {
    TempDir dir;
    write_file(dir.file("d.txt"), "#dim 2\ncat\tcat\t1.0 2.0\n");
    const DescriptorTable table = load_descriptors(dir.file("d.txt"));
    CHECK(table.dim == 2);
    CHECK(table.records.size() == 1);
    CHECK(table.records[0].class_id == "cat");
    CHECK(table.records[0].values == std::vector<double>{1.0, 2.0});

    // comments and blank lines are ignored after the header
    write_file(dir.file("c.txt"), "#dim 1\n# a comment\n\ndog\tdog\t3.5\n");
    CHECK(load_descriptors(dir.file("c.txt")).records.size() == 1);

    // wrong float count on line 7 names line 7
    std::string text = "#dim 2\n";
    for (int i = 0; i < 5; ++i) text += "c" + std::to_string(i) + "\tx\t1.0 2.0\n";
    text += "bad\tx\t1.0\n";  // line 7
    write_file(dir.file("bad.txt"), text);
    try {
        load_descriptors(dir.file("bad.txt"));
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 7") != std::string::npos);
    }

    write_file(dir.file("nohdr.txt"), "cat\tcat\t1.0 2.0\n");
    CHECK_THROWS_AS(load_descriptors(dir.file("nohdr.txt")), ParseError);
    CHECK_THROWS_AS(load_descriptors(dir.file("missing.txt")), IoError);

    write_file(dir.file("badtag.txt"), "#dim 1\ncat\tnot_a_tag\t1.0\n");
    CHECK_THROWS_AS(load_features(dir.file("badtag.txt")), ParseError);
}

TEST_CASE("generated pool round-trips through the text formats value-exactly") {
    SyntheticConfig cfg;
    cfg.n_classes = 5;
    cfg.seen_classes = 3;
    cfg.unseen_classes = 2;
    cfg.samples_per_class = 6;
    cfg.seed = 3;
    const SyntheticPool sp = gen_synthetic(cfg);

    TempDir dir;
    save_descriptors(dir.file("d.txt"), descriptor_table(sp.pool));
    save_features(dir.file("f.txt"), feature_table(sp.pool));
    const ClassPool loaded = build_pool(load_descriptors(dir.file("d.txt")),
                                        load_features(dir.file("f.txt")), false);

    REQUIRE(loaded.classes.size() == sp.pool.classes.size());
    CHECK(loaded.seen.size() == 3);
    CHECK(loaded.unseen.size() == 2);
    for (std::size_t c = 0; c < loaded.classes.size(); ++c) {
        CHECK(loaded.classes[c].id == sp.pool.classes[c].id);
        CHECK(loaded.classes[c].descriptors == sp.pool.classes[c].descriptors);
        CHECK(loaded.classes[c].train_rows.data() == sp.pool.classes[c].train_rows.data());
        CHECK(loaded.classes[c].seen_eval_rows.data() ==
              sp.pool.classes[c].seen_eval_rows.data());
        CHECK(loaded.classes[c].unseen_eval_rows.data() ==
              sp.pool.classes[c].unseen_eval_rows.data());
    }
}

TEST_CASE("build_pool validation names the offending class") {
    TempDir dir;
    write_file(dir.file("d.txt"), "#dim 1\na\ta\t1.0\n");
    write_file(dir.file("f.txt"), "#dim 1\na\ttrain\t0.5\nb\ttrain\t0.7\n");
    try {
        build_pool(load_descriptors(dir.file("d.txt")), load_features(dir.file("f.txt")),
                   false);
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }

    // descriptor with no rows
    write_file(dir.file("f2.txt"), "#dim 1\n");
    CHECK_THROWS_AS(build_pool(load_descriptors(dir.file("d.txt")),
                               load_features(dir.file("f2.txt")), false),
                    ContractError);
}

TEST_CASE("descriptor normalization yields unit norms") {
    SyntheticConfig cfg;
    cfg.n_classes = 4;
    cfg.seen_classes = 3;
    cfg.unseen_classes = 1;
    cfg.samples_per_class = 4;
    cfg.seed = 9;
    SyntheticPool sp = gen_synthetic(cfg);
    normalize_descriptors(sp.pool);
    CHECK(sp.pool.normalized_descriptors);
    for (const auto& c : sp.pool.classes) {
        for (const auto& d : c.descriptors) {
            double norm = 0.0;
            for (double v : d) norm += v * v;
            CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("attribute tasks: median split membership and balanced batches") {
    SyntheticConfig cfg;
    cfg.n_classes = 10;
    cfg.seen_classes = 8;
    cfg.unseen_classes = 2;
    cfg.samples_per_class = 6;
    cfg.seed = 21;
    const SyntheticPool sp = gen_synthetic(cfg);
    const AttributeTaskSet attrs = gen_attribute_tasks(sp, 6, 0.5, 77);

    CHECK(attrs.tasks.size() == 6);
    CHECK(attrs.train_tasks.size() == 3);
    CHECK(attrs.eval_tasks.size() == 3);
    for (const auto& task : attrs.tasks) {
        const auto positives =
            std::count(task.class_has.begin(), task.class_has.end(), std::uint8_t{1});
        CHECK(positives == 5);  // median split over 10 classes
        CHECK(task.descriptor.size() == cfg.descriptor_dim);
    }

    Rng rng(3);
    const OneClassBatch batch =
        make_one_class_batch(sp.pool, attrs.tasks[0], 4, SplitTag::train, rng);
    CHECK(batch.positives.rows() == 4);
    CHECK(batch.negatives.rows() == 4);

    // an attribute with no negative classes in the split is rejected
    AttributeTask all_pos = attrs.tasks[0];
    std::fill(all_pos.class_has.begin(), all_pos.class_has.end(), std::uint8_t{1});
    CHECK_THROWS_AS(make_one_class_batch(sp.pool, all_pos, 4, SplitTag::train, rng),
                    ContractError);
}
