#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "ktan/gradcheck.hpp"
#include "ktan/train.hpp"

// Subcommand implementations. The CLI binary is a thin argument parser over
// these; tests drive them directly.
namespace ktan::commands {

namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    bool overwrite = false;
    int64_t threads = 1;
    std::vector<uint64_t> seeds;  // compare
    std::string checkpoint;       // eval
    std::string split = "test";   // eval
};

inline ExperimentConfig load_config(const Options& opts) {
    if (opts.config_path.empty()) throw ConfigError("--config is required");
    ExperimentConfig cfg = ExperimentConfig::load_file(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.out) cfg.out_dir = *opts.out;
    return cfg;
}

inline void prepare_out_dir(const std::string& dir, bool overwrite) {
    const fs::path d(dir);
    if (fs::exists(d / "metrics.txt") || fs::exists(d / "checkpoint.ktck")) {
        if (!overwrite)
            throw ConfigError("output directory '" + dir + "' already holds run artifacts; pass --overwrite");
    }
    fs::create_directories(d);
}

template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_datasets(const ExperimentConfig& cfg) {
    if (cfg.dataset_kind == "file") {
        auto train = load_dataset<T>(cfg.train_file);
        auto test = load_dataset<T>(cfg.test_file);
        train.split = "train";
        test.split = "test";
        return {std::move(train), std::move(test)};
    }
    return generate_synthetic<T>(cfg.synth, cfg.dataset_seed);
}

template <typename T>
TeacherArtifacts<T> load_teacher_artifacts(const ExperimentConfig& cfg, bool need_regressor) {
    if (cfg.teacher_checkpoint.empty())
        throw ConfigError(std::string("method ") + method_name(cfg.method) +
                          " requires teacher.checkpoint");
    auto ck = load_checkpoint<T>(cfg.teacher_checkpoint);
    if (!ck.spec || !ck.state)
        throw FormatError(cfg.teacher_checkpoint + ": checkpoint holds no network");
    TeacherArtifacts<T> art;
    art.spec = *ck.spec;
    art.state = *ck.state;
    art.state.freeze_all();
    if (need_regressor) {
        if (cfg.regressor_checkpoint.empty())
            throw ConfigError(std::string("method ") + method_name(cfg.method) +
                              " requires teacher.regressor_checkpoint");
        auto rck = load_checkpoint<T>(cfg.regressor_checkpoint);
        if (!rck.reg_spec || !rck.reg_state)
            throw FormatError(cfg.regressor_checkpoint + ": checkpoint holds no regressor");
        art.reg_spec = rck.reg_spec;
        art.reg_state = rck.reg_state;
    }
    return art;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << text;
}

// One training run: metrics, final checkpoint and summary under out_dir.
template <typename T>
RunResult<T> run_and_persist(const ExperimentConfig& cfg, const Dataset<T>& train,
                             const Dataset<T>& test, std::optional<TeacherArtifacts<T>> teacher,
                             const std::string& out_dir, bool overwrite, bool freeze_saved = false) {
    prepare_out_dir(out_dir, overwrite);
    MetricsLog log;
    log.open_file((fs::path(out_dir) / "metrics.txt").string());

    auto result = run_experiment<T>(cfg, train, test, std::move(teacher), log);
    log.flush();

    Checkpoint<T> ck;
    ck.config_hash = cfg.hash();
    ck.phase = result.final_phase;
    ck.iteration = result.summary.total_iterations;
    ck.spec = result.model_spec;
    ck.state = result.model_state;
    if (freeze_saved) ck.state->freeze_all();
    save_checkpoint(ck, (fs::path(out_dir) / "checkpoint.ktck").string());
    write_text((fs::path(out_dir) / "summary.txt").string(), result.summary.text());
    return result;
}

inline int cmd_train(const Options& opts, std::ostream& err = std::cerr) {
    try {
        ExperimentConfig cfg = load_config(opts);
        auto [train, test] = load_datasets<float>(cfg);
        std::optional<TeacherArtifacts<float>> teacher;
        const bool needs_teacher = cfg.method != Method::teacher && cfg.method != Method::student;
        const bool needs_regressor =
            cfg.method == Method::dln || cfg.method == Method::ktan || cfg.method == Method::ktan_kd;
        if (needs_teacher) teacher = load_teacher_artifacts<float>(cfg, needs_regressor);
        auto result = run_and_persist<float>(cfg, train, test, std::move(teacher), cfg.out_dir,
                                             opts.overwrite, cfg.method == Method::teacher);
        std::cout << "method " << result.summary.method << ": test accuracy "
                  << fmt_double(result.summary.final_test_accuracy) << "\n";
        return 0;
    } catch (const NanError& e) {
        err << "aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int cmd_train_teacher(Options opts, std::ostream& err = std::cerr) {
    try {
        ExperimentConfig cfg = load_config(opts);
        cfg.method = Method::teacher;
        auto [train, test] = load_datasets<float>(cfg);
        auto result = run_and_persist<float>(cfg, train, test, std::nullopt, cfg.out_dir,
                                             opts.overwrite, /*freeze_saved=*/true);
        std::cout << "teacher: test accuracy " << fmt_double(result.summary.final_test_accuracy) << "\n";
        return 0;
    } catch (const NanError& e) {
        err << "aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

// Runs the teacher-to-student training end to end and writes a regressor
// checkpoint.
inline int cmd_train_regressor(const Options& opts, std::ostream& err = std::cerr) {
    try {
        ExperimentConfig cfg = load_config(opts);
        auto [train, test] = load_datasets<float>(cfg);
        if (cfg.teacher_checkpoint.empty())
            throw ConfigError("train-regressor requires teacher.checkpoint");
        auto tck = load_checkpoint<float>(cfg.teacher_checkpoint);
        if (!tck.spec || !tck.state) throw FormatError(cfg.teacher_checkpoint + ": no network inside");
        tck.state->freeze_all();

        const Shape3 input{train.images.extent(1), train.images.extent(2), train.images.extent(3)};
        auto student_spec = arch_from_name(cfg.student_arch, input, train.class_count);
        auto reg_spec =
            solve_regressor_geometry(tck.spec->generator_output(), student_spec.generator_output(),
                                     cfg.regressor_stride, cfg.regressor_padding);

        Rng init = Rng::stream(cfg.seed, RngStream::regressor_init);
        auto reg_state = init_regressor<float>(reg_spec, init);

        prepare_out_dir(cfg.out_dir, opts.overwrite);
        MetricsLog log;
        log.open_file((fs::path(cfg.out_dir) / "metrics.txt").string());

        Batcher sizing(train.size(), cfg.batch_size, Rng(0));
        RegressorTrainConfig<float> rcfg;
        rcfg.steps = cfg.regressor_steps >= 0 ? cfg.regressor_steps : sizing.batches_per_epoch();
        rcfg.batch_size = cfg.batch_size;
        rcfg.learning_rate = static_cast<float>(cfg.regressor_lr);
        rcfg.momentum = static_cast<float>(cfg.momentum);
        rcfg.weight_decay = static_cast<float>(cfg.weight_decay);
        rcfg.seed = cfg.seed;
        train_regressor(*tck.spec, *tck.state, reg_spec, reg_state, train, rcfg, log);
        log.flush();

        Checkpoint<float> ck;
        ck.config_hash = cfg.hash();
        ck.iteration = rcfg.steps;
        ck.reg_spec = reg_spec;
        ck.reg_state = reg_state;
        save_checkpoint(ck, (fs::path(cfg.out_dir) / "checkpoint.ktck").string());

        std::ostringstream summary;
        summary << "method=regressor\n"
                << "kernel_h=" << reg_spec.kernel_h << "\nkernel_w=" << reg_spec.kernel_w << "\n"
                << "steps=" << rcfg.steps << "\n"
                << "final_ce=" << fmt_double(log.records().back().ce) << "\n";
        write_text((fs::path(cfg.out_dir) / "summary.txt").string(), summary.str());
        std::cout << "regressor: solved kernel " << reg_spec.kernel_h << "x" << reg_spec.kernel_w << "\n";
        return 0;
    } catch (const NanError& e) {
        err << "aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int cmd_gradcheck(std::ostream& out = std::cout) {
    auto rows = gradcheck::run_all();
    out << "gradient check (central differences, eps 1e-5, tolerance 1e-4)\n";
    bool ok = true;
    for (const auto& r : rows) {
        const bool pass = r.max_rel_err < 1e-4;
        ok = ok && pass;
        out << "  " << (pass ? "pass" : "FAIL") << "  " << r.op << "  max_rel_err=" << fmt_double(r.max_rel_err)
            << "\n";
    }
    out << (ok ? "all operations pass" : "gradient check FAILED") << "\n";
    return ok ? 0 : 1;
}

inline int cmd_eval(const Options& opts, std::ostream& err = std::cerr) {
    try {
        ExperimentConfig cfg = load_config(opts);
        if (opts.checkpoint.empty()) throw ConfigError("--checkpoint is required for eval");
        auto ck = load_checkpoint<float>(opts.checkpoint);
        if (!ck.spec || !ck.state) throw FormatError(opts.checkpoint + ": checkpoint holds no network");
        auto [train, test] = load_datasets<float>(cfg);
        const auto& ds = opts.split == "train" ? train : test;
        const double acc = evaluate(*ck.spec, *ck.state, ds);
        std::cout << "accuracy=" << fmt_double(acc) << "\n";
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---- compare: the Table-1-shaped method matrix -----------------------------

struct CompareCell {
    bool ok = false;
    double accuracy = 0;
    std::string error;
};

struct CompareReport {
    std::vector<uint64_t> seeds;
    std::map<std::string, std::vector<CompareCell>> cells;  // method config name -> per-seed
    std::string text;
    bool ordering_ok = false;
};

namespace detail {

inline double mean_of_cells(const std::vector<CompareCell>& cells) {
    double s = 0;
    int64_t n = 0;
    for (const auto& c : cells)
        if (c.ok) {
            s += c.accuracy;
            ++n;
        }
    return n ? s / static_cast<double>(n) : -1;
}

inline double std_of_cells(const std::vector<CompareCell>& cells) {
    const double m = mean_of_cells(cells);
    double s = 0;
    int64_t n = 0;
    for (const auto& c : cells)
        if (c.ok) {
            s += (c.accuracy - m) * (c.accuracy - m);
            ++n;
        }
    return n > 1 ? std::sqrt(s / static_cast<double>(n - 1)) : 0;
}

// Per-seed pipeline: teacher, then the teacher-to-student layer, then every
// method config against those artifacts.
template <typename T>
void run_seed(const std::map<std::string, ExperimentConfig>& configs, uint64_t seed,
              const Dataset<T>& train, const Dataset<T>& test, const std::string& out_root,
              std::mutex& mu, CompareReport& report) {
    const fs::path seed_dir = fs::path(out_root) / ("seed" + std::to_string(seed));
    std::optional<TeacherArtifacts<T>> teacher;

    bool any_transfer = false;
    for (const auto& [name, cfg] : configs)
        any_transfer = any_transfer || (cfg.method != Method::teacher && cfg.method != Method::student);

    // teacher run (also the 'teacher' row when present)
    auto teacher_it =
        std::find_if(configs.begin(), configs.end(),
                     [](const auto& kv) { return kv.second.method == Method::teacher; });
    if (teacher_it == configs.end() && any_transfer)
        throw ConfigError("compare: transfer methods present but no teacher config in the directory");

    if (teacher_it != configs.end()) {
        ExperimentConfig tcfg = teacher_it->second;
        tcfg.seed = seed;
        auto res = run_and_persist<T>(tcfg, train, test, std::nullopt,
                                      (seed_dir / teacher_it->first).string(), true, true);
        teacher = TeacherArtifacts<T>{res.model_spec, res.model_state, std::nullopt, std::nullopt};
        teacher->state.freeze_all();
        std::lock_guard<std::mutex> lock(mu);
        report.cells[teacher_it->first][static_cast<size_t>(
            std::find(report.seeds.begin(), report.seeds.end(), seed) - report.seeds.begin())] =
            CompareCell{true, res.summary.final_test_accuracy, ""};
    }

    // the teacher-to-student layer, trained once per seed; regressor settings
    // come from the ktan config when present, else the first config that needs
    // one (sorted order)
    bool any_regressor = false;
    const ExperimentConfig* reg_source = nullptr;
    for (const auto& [name, cfg] : configs) {
        const bool needs = cfg.method == Method::dln || cfg.method == Method::ktan ||
                           cfg.method == Method::ktan_kd;
        if (needs && !reg_source) reg_source = &cfg;
        if (needs && cfg.method == Method::ktan) reg_source = &cfg;
        any_regressor = any_regressor || needs;
    }
    if (any_regressor) {
        if (!teacher) throw ConfigError("compare: regressor methods need a teacher config");
        const Shape3 input{train.images.extent(1), train.images.extent(2), train.images.extent(3)};
        auto student_spec = arch_from_name(reg_source->student_arch, input, train.class_count);
        auto reg_spec = solve_regressor_geometry(teacher->spec.generator_output(),
                                                 student_spec.generator_output(),
                                                 reg_source->regressor_stride, reg_source->regressor_padding);
        Rng init = Rng::stream(seed, RngStream::regressor_init);
        auto reg_state = init_regressor<T>(reg_spec, init);
        Batcher sizing(train.size(), reg_source->batch_size, Rng(0));
        RegressorTrainConfig<T> rcfg;
        rcfg.steps =
            reg_source->regressor_steps >= 0 ? reg_source->regressor_steps : sizing.batches_per_epoch();
        rcfg.batch_size = reg_source->batch_size;
        rcfg.learning_rate = static_cast<T>(reg_source->regressor_lr);
        rcfg.momentum = static_cast<T>(reg_source->momentum);
        rcfg.weight_decay = static_cast<T>(reg_source->weight_decay);
        rcfg.seed = seed;
        fs::create_directories(seed_dir / "regressor");
        MetricsLog rlog;
        rlog.open_file((seed_dir / "regressor" / "metrics.txt").string());
        train_regressor(teacher->spec, teacher->state, reg_spec, reg_state, train, rcfg, rlog);
        teacher->reg_spec = reg_spec;
        teacher->reg_state = reg_state;

        Checkpoint<T> rck;
        rck.reg_spec = reg_spec;
        rck.reg_state = reg_state;
        save_checkpoint(rck, (seed_dir / "regressor" / "checkpoint.ktck").string());
    }

    // method rows
    for (const auto& [name, base_cfg] : configs) {
        if (base_cfg.method == Method::teacher) continue;  // already run
        ExperimentConfig cfg = base_cfg;
        cfg.seed = seed;
        CompareCell cell;
        try {
            std::optional<TeacherArtifacts<T>> art;
            if (cfg.method != Method::student) art = teacher;
            auto res =
                run_and_persist<T>(cfg, train, test, std::move(art), (seed_dir / name).string(), true);
            cell = CompareCell{true, res.summary.final_test_accuracy, ""};
        } catch (const std::exception& e) {
            cell = CompareCell{false, 0, e.what()};
        }
        std::lock_guard<std::mutex> lock(mu);
        report.cells[name][static_cast<size_t>(std::find(report.seeds.begin(), report.seeds.end(), seed) -
                                               report.seeds.begin())] = cell;
    }
}

}  // namespace detail

// Runs every method config in a directory across the seed list and writes a
// Table-1-shaped report with per-method mean and spread plus an ordering
// verdict against the expected desk-scale ordering
// teacher > ktan >= dln > student.
inline CompareReport compare_methods(const std::string& config_dir, std::vector<uint64_t> seeds,
                                     const std::string& out_root, int64_t threads = 1) {
    std::map<std::string, ExperimentConfig> configs;
    for (const auto& entry : fs::directory_iterator(config_dir)) {
        if (entry.path().extension() != ".cfg") continue;
        configs[entry.path().stem().string()] = ExperimentConfig::load_file(entry.path().string());
    }
    if (configs.empty()) throw ConfigError("compare: no .cfg files in " + config_dir);
    if (seeds.empty()) throw ConfigError("compare: at least one seed is required");

    // all configs must agree on the dataset
    std::string dataset_id;
    for (const auto& [name, cfg] : configs) {
        const std::string id = cfg.dataset_kind + "|" + cfg.synth.str() + "|" +
                               std::to_string(cfg.dataset_seed) + "|" + cfg.train_file + "|" +
                               cfg.test_file;
        if (dataset_id.empty())
            dataset_id = id;
        else if (dataset_id != id)
            throw ConfigError("compare: config '" + name + "' uses a different dataset");
    }

    const auto& first = configs.begin()->second;
    Dataset<float> train, test;
    if (first.dataset_kind == "file") {
        train = load_dataset<float>(first.train_file);
        test = load_dataset<float>(first.test_file);
    } else {
        std::tie(train, test) = generate_synthetic<float>(first.synth, first.dataset_seed);
    }

    CompareReport report;
    report.seeds = seeds;
    for (const auto& [name, cfg] : configs)
        report.cells[name] = std::vector<CompareCell>(seeds.size());

    std::mutex mu;
    std::vector<std::string> seed_errors(seeds.size());
    auto worker = [&](size_t begin, size_t step) {
        for (size_t i = begin; i < seeds.size(); i += step) {
            try {
                detail::run_seed<float>(configs, seeds[i], train, test, out_root, mu, report);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(mu);
                seed_errors[i] = e.what();
            }
        }
    };
    const size_t nthreads = static_cast<size_t>(std::max<int64_t>(1, std::min<int64_t>(threads, static_cast<int64_t>(seeds.size()))));
    if (nthreads == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker, t, nthreads);
        for (auto& t : pool) t.join();
    }
    for (size_t i = 0; i < seeds.size(); ++i)
        if (!seed_errors[i].empty())
            for (auto& [name, cells] : report.cells)
                if (!cells[i].ok && cells[i].error.empty()) cells[i].error = seed_errors[i];

    // report text
    std::ostringstream os;
    os << "# method comparison\nseeds =";
    for (auto s : seeds) os << " " << s;
    os << "\n\n";
    for (const auto& [name, cells] : report.cells) {
        os << name << ": mean=" << fmt_double(detail::mean_of_cells(cells))
           << " std=" << fmt_double(detail::std_of_cells(cells)) << " cells=[";
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) os << ", ";
            if (cells[i].ok)
                os << fmt_double(cells[i].accuracy);
            else
                os << "failed(" << cells[i].error << ")";
        }
        os << "]\n";
    }

    auto mean_of = [&](Method m) -> std::optional<double> {
        for (const auto& [name, cfg] : configs)
            if (cfg.method == m) {
                const double v = detail::mean_of_cells(report.cells.at(name));
                if (v >= 0) return v;
                return std::nullopt;
            }
        return std::nullopt;
    };
    const auto t = mean_of(Method::teacher);
    const auto k = mean_of(Method::ktan);
    const auto d = mean_of(Method::dln);
    const auto s = mean_of(Method::student);

    report.ordering_ok = true;
    auto verdict = [&](const char* label, bool present, bool pass) {
        if (!present) {
            os << "ordering " << label << ": not evaluated\n";
            return;
        }
        report.ordering_ok = report.ordering_ok && pass;
        os << "ordering " << label << ": " << (pass ? "PASS" : "FAIL") << "\n";
    };
    verdict("teacher>ktan", t && k, t && k && *t > *k);
    verdict("ktan>=dln", k && d, k && d && *k >= *d);
    verdict("dln>student", d && s, d && s && *d > *s);
    verdict("ktan>student", k && s, k && s && *k > *s);
    if (k && s) os << "margin ktan-student = " << fmt_double(*k - *s) << "\n";

    report.text = os.str();
    fs::create_directories(out_root);
    write_text((fs::path(out_root) / "compare_report.txt").string(), report.text);
    return report;
}

inline int cmd_compare(const Options& opts, std::ostream& err = std::cerr) {
    try {
        if (opts.config_path.empty()) throw ConfigError("--config <dir> is required for compare");
        if (opts.seeds.empty()) throw ConfigError("--seeds is required for compare (e.g. --seeds 1,2,3)");
        const std::string out = opts.out.value_or("compare_out");
        auto report = compare_methods(opts.config_path, opts.seeds, out, opts.threads);
        std::cout << report.text;
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ktan::commands
