#include "t2m/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "t2m/checkpoint.hpp"
#include "t2m/config_json.hpp"
#include "t2m/digest.hpp"
#include "t2m/engine.hpp"
#include "t2m/error.hpp"
#include "t2m/gradcheck.hpp"

namespace t2m {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitProperty = 3;

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// The manifest is written before any result file. Everything in it is
// deterministic except the timestamps field.
void write_manifest(const fs::path& dir, const std::string& command,
                    const json& config_snapshot, std::uint64_t seed,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_names) {
    json inputs = json::object();
    for (const auto& p : input_paths) inputs[fs::path(p).filename().string()] = file_digest(p);
    json manifest{{"format_version", 1},
                  {"command", command},
                  {"config", config_snapshot},
                  {"seed", seed},
                  {"inputs", inputs},
                  {"outputs", output_names},
                  {"timestamps", {{"created", utc_now()}}}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct LoadedData {
    ClassPool pool;
    fs::path descriptors_path;
    fs::path features_path;
};

LoadedData load_data_dir(const std::string& data_dir, bool normalize) {
    LoadedData data;
    data.descriptors_path = fs::path(data_dir) / "descriptors.txt";
    data.features_path = fs::path(data_dir) / "features.txt";
    if (!fs::exists(data.descriptors_path)) {
        throw IoError("missing descriptor file '" + data.descriptors_path.string() + "'");
    }
    if (!fs::exists(data.features_path)) {
        throw IoError("missing feature file '" + data.features_path.string() + "'");
    }
    data.pool = build_pool(load_descriptors(data.descriptors_path.string()),
                           load_features(data.features_path.string()), normalize);
    return data;
}

void check_pool_matches(const ClassPool& pool, const HyperModel& model) {
    if (pool.descriptor_dim != model.descriptor_dim()) {
        throw ConfigError("descriptor dim mismatch: data has " +
                          std::to_string(pool.descriptor_dim) + ", checkpoint expects " +
                          std::to_string(model.descriptor_dim()));
    }
    if (pool.feature_dim != model.spec.feature_dim) {
        throw ConfigError("feature dim mismatch: data has " +
                          std::to_string(pool.feature_dim) + ", checkpoint expects " +
                          std::to_string(model.spec.feature_dim));
    }
}

std::string format_accuracy(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

// ---- gen ----

int cmd_gen(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
    const SyntheticConfig cfg = parse_synthetic_config(load_json_file(config_path));
    const SyntheticPool sp = gen_synthetic(cfg);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_manifest(dir, "gen", synthetic_config_to_json(cfg), cfg.seed, {config_path},
                   {"descriptors.txt", "features.txt", "oracle.json"});

    save_descriptors((dir / "descriptors.txt").string(), descriptor_table(sp.pool));
    save_features((dir / "features.txt").string(), feature_table(sp.pool));

    json pairs = json::array();
    for (std::size_t a = 0; a < sp.pool.classes.size(); ++a) {
        for (std::size_t b = a + 1; b < sp.pool.classes.size(); ++b) {
            pairs.push_back({{"a", sp.pool.classes[a].id},
                             {"b", sp.pool.classes[b].id},
                             {"bayes_accuracy", sp.bayes(a, b)}});
        }
    }
    json oracle{{"format_version", 1},
                {"feature_noise", cfg.feature_noise},
                {"mean_seen_pairs", sp.mean_bayes(sp.pool.seen)},
                {"mean_unseen_pairs", sp.mean_bayes(sp.pool.unseen)},
                {"pairs", pairs}};
    write_text(dir / "oracle.json", oracle.dump(2) + "\n");

    out << "generated " << sp.pool.classes.size() << " classes ("
        << sp.pool.seen.size() << " seen / " << sp.pool.unseen.size() << " unseen) in "
        << out_dir << "\n";
    out << "mean unseen-pair bayes accuracy: "
        << format_accuracy(sp.mean_bayes(sp.pool.unseen)) << "\n";
    return kExitOk;
}

// ---- train ----

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::ostream& out, std::ostream& err) {
    const TrainConfig cfg = parse_train_config(load_json_file(config_path));
    const LoadedData data = load_data_dir(data_dir, cfg.normalize_descriptors);
    const json config_snapshot = train_config_to_json(cfg);
    const std::string config_hash = fnv1a64_hex(config_snapshot.dump());

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_manifest(dir, "train", config_snapshot, cfg.seed,
                   {config_path, data.descriptors_path.string(), data.features_path.string()},
                   {"checkpoint.json", "train_log.jsonl"});

    const TrainResult result = train(cfg, data.pool);

    Checkpoint ckpt{result.model, cfg.normalize_descriptors, cfg.seed, config_hash};
    const fs::path ckpt_path = dir / "checkpoint.json";
    save_checkpoint(ckpt_path.string(), ckpt);

    std::ostringstream log;
    for (const auto& rec : result.log) {
        log << json{{"epoch", rec.epoch}, {"mean_loss", rec.mean_loss},
                    {"wall_ms", rec.wall_ms}}
                   .dump()
            << "\n";
    }
    write_text(dir / "train_log.jsonl", log.str());

    if (result.diverged) {
        err << "training diverged (non-finite loss) after " << result.completed_epochs
            << " epochs; last-good checkpoint written to " << ckpt_path.string() << "\n";
        return kExitNumeric;
    }
    out << "trained " << result.completed_epochs << " epochs; final mean loss "
        << (result.log.empty() ? 0.0 : result.log.back().mean_loss) << "\n";
    out << "checkpoint: " << ckpt_path.string() << "\n";
    return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             std::size_t k, const std::string& split, const std::string& out_dir,
             bool with_baseline, const std::string& direction_name, double ridge_lambda,
             unsigned threads, std::size_t max_tasks, std::uint64_t seed,
             std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const LoadedData data = load_data_dir(data_dir, ckpt.normalize_descriptors);
    check_pool_matches(data.pool, ckpt.model);

    EvalOptions opts;
    opts.threads = threads;
    opts.max_tasks = max_tasks;
    opts.seed = seed;

    MetricsReport report;
    report.k = k;
    report.seed = seed;
    report.config_hash = ckpt.training_config_hash;
    if (split.empty()) {
        report = evaluate_full(ckpt.model, data.pool, k, opts);
        report.config_hash = ckpt.training_config_hash;
        report.seed = seed;
    } else if (split == "seen") {
        report.seen = evaluate(ckpt.model, data.pool, k, SplitTag::seen_eval, opts);
    } else if (split == "unseen") {
        report.unseen = evaluate(ckpt.model, data.pool, k, SplitTag::unseen_eval, opts);
    } else {
        throw ConfigError("--split must be 'seen' or 'unseen', got '" + split + "'");
    }

    json output = report_to_json(report);

    if (with_baseline) {
        const MapDirection direction = direction_name == "visual2text"
                                           ? MapDirection::visual_to_text
                                           : MapDirection::text_to_visual;
        const FixedRepBaseline baseline = fit_fixed_rep(data.pool, direction, ridge_lambda);
        const SetClassifier classifier = baseline_classifier(baseline);
        MetricsReport base_report;
        base_report.k = k;
        base_report.seed = seed;
        if (split.empty() || split == "seen") {
            base_report.seen =
                evaluate_with(classifier, data.pool, k, SplitTag::seen_eval, opts);
        }
        if (split.empty() || split == "unseen") {
            base_report.unseen =
                evaluate_with(classifier, data.pool, k, SplitTag::unseen_eval, opts);
        }
        if (base_report.seen && base_report.unseen) {
            base_report.harmonic = harmonic_mean(base_report.seen->mean_accuracy,
                                                 base_report.unseen->mean_accuracy);
        }
        output = json{{"t2m", output}, {"baseline", report_to_json(base_report)}};

        auto row = [&](const char* name, const MetricsReport& r) {
            out << std::left << std::setw(10) << name;
            out << std::setw(10)
                << (r.seen ? format_accuracy(r.seen->mean_accuracy) : std::string("-"));
            out << std::setw(10)
                << (r.unseen ? format_accuracy(r.unseen->mean_accuracy) : std::string("-"));
            out << (r.harmonic ? format_accuracy(*r.harmonic) : std::string("-")) << "\n";
        };
        out << std::left << std::setw(10) << "" << std::setw(10) << "seen" << std::setw(10)
            << "unseen" << "harmonic\n";
        row("t2m-hn", report);
        row("baseline", base_report);
    }

    out << output.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_manifest(fs::path(out_dir), "eval",
                       json{{"checkpoint", checkpoint_path},
                            {"k", k},
                            {"split", split.empty() ? "both" : split},
                            {"baseline", with_baseline},
                            {"max_tasks", max_tasks},
                            {"seed", seed}},
                       seed,
                       {checkpoint_path, data.descriptors_path.string(),
                        data.features_path.string()},
                       {"report.json"});
        write_text(fs::path(out_dir) / "report.json", output.dump(2) + "\n");
    }
    return kExitOk;
}

// ---- check ----

int cmd_check(const std::string& checkpoint_path, const std::string& kind,
              double tolerance, double grad_tolerance, std::size_t trials,
              std::vector<std::size_t> k_list, std::uint64_t seed,
              const std::string& out_dir, std::ostream& out) {
    HyperModel model;
    if (!checkpoint_path.empty()) {
        model = load_checkpoint(checkpoint_path).model;
    } else {
        // Fresh model in the exact two-layer, bias-free form of the
        // equivariance theorem.
        TargetSpec spec{.feature_dim = 6, .layers = 2, .hidden_dim = 4, .emit_biases = false};
        const std::size_t e = 5;
        const std::vector<std::size_t> widths = {8};
        model.spec = spec;
        if (kind == "nonev") {
            if (k_list.size() != 1) k_list = {2};
            model.params = init_nonev(spec, e, k_list.front(), widths, Rng::mix(seed, 0xf1));
        } else {
            model.params = init_hypernet(spec, e, widths, Rng::mix(seed, 0xf1));
        }
    }
    if (k_list.empty()) k_list = {2, 3, 5};

    const SymmetryReport symmetry = check_equivariance(model, trials, k_list, tolerance, seed);
    const GradCheckReport grads = run_gradient_checks(seed, grad_tolerance);

    json grad_json = json::array();
    for (const auto& entry : grads.entries) {
        grad_json.push_back({{"component", entry.component},
                             {"max_rel_err", entry.max_rel_err},
                             {"pass", entry.pass}});
    }
    const bool all_pass = symmetry.all_pass && grads.all_pass;
    json output{{"symmetry", symmetry_report_to_json(symmetry)},
                {"gradients",
                 {{"tolerance", grads.tolerance},
                  {"step", grads.step},
                  {"all_pass", grads.all_pass},
                  {"components", grad_json}}},
                {"all_pass", all_pass}};
    out << output.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "check.json", output.dump(2) + "\n");
    }
    return all_pass ? kExitOk : kExitProperty;
}

// ---- ablate ----

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, std::size_t n_seeds, unsigned threads,
               std::ostream& out) {
    const json config_json = load_json_file(config_path);
    TrainConfig base = parse_train_config(config_json);
    if (base.target.hidden_dim < 1) {
        throw ConfigError("ablate: target.hidden_dim must be >= 1 for the 2-layer variants");
    }
    if (n_seeds == 0) n_seeds = config_json.value("ablate_seeds", std::size_t{5});
    const LoadedData data = load_data_dir(data_dir, base.normalize_descriptors);

    fs::create_directories(out_dir);
    write_manifest(fs::path(out_dir), "ablate", train_config_to_json(base), base.seed,
                   {config_path, data.descriptors_path.string(), data.features_path.string()},
                   {"ablation.json"});

    struct Variant {
        const char* name;
        HyperKind kind;
        int layers;
    };
    const Variant variants[] = {{"t2m-hn-1layer", HyperKind::equivariant, 1},
                                {"1layer-wo-ev", HyperKind::non_equivariant, 1},
                                {"t2m-hn-2layer", HyperKind::equivariant, 2},
                                {"2layer-wo-ev", HyperKind::non_equivariant, 2}};

    EvalOptions opts;
    opts.threads = threads;

    json rows = json::array();
    out << std::left << std::setw(16) << "variant" << std::setw(18) << "seen"
        << std::setw(18) << "unseen" << "harmonic\n";
    for (const Variant& variant : variants) {
        std::vector<double> seen_accs, unseen_accs, harmonics;
        std::string symmetry_note;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            TrainConfig cfg = base;
            cfg.kind = variant.kind;
            cfg.target.layers = variant.layers;
            if (variant.layers == 1) cfg.target.hidden_dim = 0;
            cfg.seed = base.seed + s;

            const TrainResult result = train(cfg, data.pool);
            if (result.diverged) {
                throw NumericError(std::string("ablate: variant ") + variant.name +
                                   " diverged at seed " + std::to_string(cfg.seed));
            }
            const MetricsReport report =
                evaluate_full(result.model, data.pool, cfg.k_train, opts);
            seen_accs.push_back(report.seen->mean_accuracy);
            unseen_accs.push_back(report.unseen->mean_accuracy);
            harmonics.push_back(*report.harmonic);

            if (s == 0) {
                const std::vector<std::size_t> ks{cfg.k_train};
                const SymmetryReport sym =
                    check_equivariance(result.model, 50, ks, 1e-9, cfg.seed);
                symmetry_note = sym.all_pass
                                    ? "permutation laws hold"
                                    : "permutation laws violated (" +
                                          sym.w_last_law.witness + ")";
            }
        }

        auto mean_of = [](const std::vector<double>& xs) {
            double acc = 0.0;
            for (double x : xs) acc += x;
            return acc / static_cast<double>(xs.size());
        };
        auto sem_of = [&](const std::vector<double>& xs) {
            if (xs.size() < 2) return 0.0;
            const double mean = mean_of(xs);
            double ss = 0.0;
            for (double x : xs) ss += (x - mean) * (x - mean);
            return std::sqrt(ss / static_cast<double>(xs.size() - 1)) /
                   std::sqrt(static_cast<double>(xs.size()));
        };

        json row{{"variant", variant.name},
                 {"kind", variant.kind == HyperKind::equivariant ? "ev" : "nonev"},
                 {"layers", variant.layers},
                 {"n_seeds", n_seeds},
                 {"seen", {{"mean", mean_of(seen_accs)}, {"sem", sem_of(seen_accs)}}},
                 {"unseen", {{"mean", mean_of(unseen_accs)}, {"sem", sem_of(unseen_accs)}}},
                 {"harmonic", {{"mean", mean_of(harmonics)}, {"sem", sem_of(harmonics)}}},
                 {"symmetry", symmetry_note}};
        rows.push_back(row);

        auto cell = [&](const std::vector<double>& xs) {
            return format_accuracy(mean_of(xs)) + " +- " + format_accuracy(sem_of(xs));
        };
        out << std::left << std::setw(16) << variant.name << std::setw(18)
            << cell(seen_accs) << std::setw(18) << cell(unseen_accs)
            << format_accuracy(mean_of(harmonics)) << "\n";
    }

    json output{{"format_version", 1},
                {"k", base.k_train},
                {"n_seeds", n_seeds},
                {"base_seed", base.seed},
                {"variants", rows}};
    write_text(fs::path(out_dir) / "ablation.json", output.dump(2) + "\n");
    out << "ablation table written to " << (fs::path(out_dir) / "ablation.json").string()
        << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"text-to-model hypernetwork: emit classifiers from class descriptors"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark pool");
    std::string gen_config, gen_out;
    gen->add_option("--config", gen_config, "synthetic config JSON")->required();
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a hypernetwork on a data directory");
    std::string tr_config, tr_data, tr_out;
    tr->add_option("--config", tr_config, "train config JSON")->required();
    tr->add_option("--data", tr_data, "data directory with descriptors.txt/features.txt")
        ->required();
    tr->add_option("--out", tr_out, "output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_split, ev_out, ev_direction = "text2visual";
    std::size_t ev_k = 2, ev_max_tasks = 1000;
    std::uint64_t ev_seed = 0;
    unsigned ev_threads = 1;
    bool ev_baseline = false;
    double ev_lambda = 1e-3;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON")->required();
    ev->add_option("--data", ev_data, "data directory")->required();
    ev->add_option("--k", ev_k, "classes per task");
    ev->add_option("--split", ev_split, "seen|unseen (default: both)");
    ev->add_option("--out", ev_out, "directory for report.json");
    ev->add_flag("--baseline", ev_baseline, "also run the fixed-representation baseline");
    ev->add_option("--direction", ev_direction, "baseline map direction")
        ->check(CLI::IsMember({"text2visual", "visual2text"}));
    ev->add_option("--ridge-lambda", ev_lambda, "baseline ridge strength");
    ev->add_option("--threads", ev_threads, "evaluation threads");
    ev->add_option("--max-tasks", ev_max_tasks, "enumeration cap per split");
    ev->add_option("--seed", ev_seed, "evaluation seed");

    // check
    auto* ck = app.add_subcommand("check", "run symmetry laws and the gradient suite");
    std::string ck_ckpt, ck_kind = "ev", ck_out;
    bool ck_fresh = false;
    double ck_tol = 1e-9, ck_grad_tol = 1e-4;
    std::size_t ck_trials = 100;
    std::vector<std::size_t> ck_k;
    std::uint64_t ck_seed = 0;
    ck->add_option("--checkpoint", ck_ckpt, "checkpoint JSON");
    ck->add_flag("--fresh", ck_fresh, "check a freshly initialized hypernetwork");
    ck->add_option("--kind", ck_kind, "ev|nonev (fresh model kind)")
        ->check(CLI::IsMember({"ev", "nonev"}));
    ck->add_option("--tolerance", ck_tol, "symmetry tolerance");
    ck->add_option("--grad-tolerance", ck_grad_tol, "gradient check tolerance");
    ck->add_option("--trials", ck_trials, "trials per k");
    ck->add_option("--k", ck_k, "set sizes to test");
    ck->add_option("--seed", ck_seed, "check seed");
    ck->add_option("--out", ck_out, "directory for check.json");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and compare the four design variants");
    std::string ab_config, ab_data, ab_out;
    std::size_t ab_seeds = 0;
    unsigned ab_threads = 1;
    ab->add_option("--config", ab_config, "train config JSON")->required();
    ab->add_option("--data", ab_data, "data directory")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--seeds", ab_seeds, "number of seeds per variant (default 5)");
    ab->add_option("--threads", ab_threads, "evaluation threads");

    std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 wants reversed args
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_config, gen_out, out);
        if (tr->parsed()) return cmd_train(tr_config, tr_data, tr_out, out, err);
        if (ev->parsed()) {
            return cmd_eval(ev_ckpt, ev_data, ev_k, ev_split, ev_out, ev_baseline,
                            ev_direction, ev_lambda, ev_threads, ev_max_tasks, ev_seed, out);
        }
        if (ck->parsed()) {
            if (ck_ckpt.empty() && !ck_fresh) ck_fresh = true;
            return cmd_check(ck_ckpt, ck_kind, ck_tol, ck_grad_tol, ck_trials, ck_k,
                             ck_seed, ck_out, out);
        }
        if (ab->parsed()) return cmd_ablate(ab_config, ab_data, ab_out, ab_seeds, ab_threads, out);
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}

}  // namespace t2m
