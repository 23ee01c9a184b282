#include <CLI11.hpp>

#include "ktan/commands.hpp"

// ktan <subcommand> — experiment runner for the knowledge-transfer framework.
int main(int argc, char** argv) {
    CLI::App app{"ktan: adversarial feature-map knowledge transfer at desk scale"};
    app.require_subcommand(1);

    ktan::commands::Options opts;
    std::string seeds_arg;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", opts.config_path, "experiment config path");
        if (needs_config) c->required();
        sub->add_option_function<uint64_t>(
            "--seed", [&](uint64_t s) { opts.seed = s; }, "override the training seed");
        sub->add_option_function<std::string>(
            "--out", [&](const std::string& d) { opts.out = d; }, "override the output directory");
        sub->add_flag("--overwrite", opts.overwrite, "allow clobbering an existing output directory");
        sub->add_option("--threads", opts.threads, "worker threads for compare fan-out");
    };

    auto* train = app.add_subcommand("train", "run the configured method end to end");
    add_common(train, true);

    auto* train_teacher = app.add_subcommand("train-teacher", "train and freeze the teacher network");
    add_common(train_teacher, true);

    auto* train_regressor =
        app.add_subcommand("train-regressor", "train the teacher-to-student layer against a frozen teacher");
    add_common(train_regressor, true);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");

    auto* compare = app.add_subcommand("compare", "run the method matrix across seeds and report ordering");
    add_common(compare, true);
    compare->add_option("--seeds", seeds_arg, "comma-separated seed list")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    add_common(eval, true);
    eval->add_option("--checkpoint", opts.checkpoint, "checkpoint to evaluate")->required();
    eval->add_option("--split", opts.split, "train or test (default test)");

    auto* reference = app.add_subcommand("config-reference", "print every accepted config key");

    CLI11_PARSE(app, argc, argv);

    if (!seeds_arg.empty()) {
        std::istringstream is(seeds_arg);
        std::string item;
        while (std::getline(is, item, ','))
            if (!item.empty()) opts.seeds.push_back(std::stoull(item));
    }

    if (train->parsed()) return ktan::commands::cmd_train(opts);
    if (train_teacher->parsed()) return ktan::commands::cmd_train_teacher(opts);
    if (train_regressor->parsed()) return ktan::commands::cmd_train_regressor(opts);
    if (gradcheck->parsed()) return ktan::commands::cmd_gradcheck();
    if (compare->parsed()) return ktan::commands::cmd_compare(opts);
    if (eval->parsed()) return ktan::commands::cmd_eval(opts);
    if (reference->parsed()) {
        std::cout << ktan::config_reference();
        return 0;
    }
    return 1;
}
