#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ktan/checkpoint.hpp"
#include "ktan/config.hpp"
#include "ktan/train.hpp"

using namespace ktan;

namespace {

std::filesystem::path temp_path(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "ktan_test_cfg";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config parses with defaults applied") {
    auto cfg = ExperimentConfig::load(ParsedConfig::from_string(R"(
[method]
name = ktan
[optimizer]
seed = 42
)"));
    CHECK(cfg.method == Method::ktan);
    CHECK(cfg.seed == 42);
    CHECK(cfg.alpha == 0.6);
    CHECK(cfg.beta == 0.5);
    CHECK(cfg.temperature == 4.0);
    CHECK(cfg.kd_weight == 0.9);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.lr == 0.2);
    CHECK(cfg.lr_adversarial == 0.01);
    CHECK(cfg.weight_decay == 1e-4);
    CHECK(cfg.fitnet_weight == 4.0);
    CHECK(cfg.synth.train_per_class == 500);
}

TEST_CASE("config rejects unknown and malformed keys with location") {
    CHECK_THROWS_MATCHES(ParsedConfig::from_string("[method]\nbogus = 1\n"), ConfigError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("bogus")));
    CHECK_THROWS_MATCHES(ParsedConfig::from_string("[method]\nname = ktan\nname = kd\n"), ConfigError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("duplicate")));
    CHECK_THROWS_MATCHES(ParsedConfig::from_string("name = ktan\n"), ConfigError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("section")));
    CHECK_THROWS_MATCHES(
        ExperimentConfig::load(ParsedConfig::from_string("[method]\nname = resnet\n")), ConfigError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("unknown method")));
    CHECK_THROWS_AS(ExperimentConfig::load(ParsedConfig::from_string("[optimizer]\nbatch_size = zero\n")),
                    ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::load(ParsedConfig::from_string("[method]\nname = kd\nfitnet = true\n")),
        ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load(ParsedConfig::from_string("[dataset]\nkind = file\n")),
                    ConfigError);
}

TEST_CASE("reference and parser accept exactly the same key set") {
    // every documented key, fed back through the parser at its default
    std::string text;
    std::string section;
    for (const auto& k : kConfigKeys) {
        if (section != k.section) {
            section = k.section;
            text += "[" + section + "]\n";
        }
        if (*k.def) text += std::string(k.key) + " = " + k.def + "\n";
    }
    CHECK_NOTHROW(ExperimentConfig::load(ParsedConfig::from_string(text)));

    const std::string ref = config_reference();
    for (const auto& k : kConfigKeys) {
        INFO(k.section << "." << k.key);
        CHECK(ref.find(k.key) != std::string::npos);
    }
}

TEST_CASE("config hash tracks content") {
    auto a = ExperimentConfig::load(ParsedConfig::from_string("[optimizer]\nseed = 1\n"));
    auto b = ExperimentConfig::load(ParsedConfig::from_string("[optimizer]\nseed = 1\n"));
    auto c = ExperimentConfig::load(ParsedConfig::from_string("[optimizer]\nseed = 2\n"));
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    // the output directory does not participate in the hash
    auto d = ExperimentConfig::load(ParsedConfig::from_string("[optimizer]\nseed = 1\n[output]\ndir = x\n"));
    CHECK(a.hash() == d.hash());
}

TEST_CASE("checkpoint round trip is bit-identical") {
    auto spec = tiny_teacher_spec({1, 8, 8}, 3);
    auto state = init_network<float>(spec, 9);
    state.groups.at("gen.0").frozen = true;

    Checkpoint<float> ck;
    ck.config_hash = 0xdeadbeef12345678ULL;
    ck.phase = Phase::adversarial;
    ck.iteration = 321;
    ck.spec = spec;
    ck.state = state;

    OptimizerState<float> opt;
    opt.learning_rate = 0.05f;
    opt.velocity["gen.0"] = {Tensor<float>::ones({8, 1, 3, 3}), Tensor<float>::ones({8})};
    ck.optimizer = opt;

    auto rspec = solve_regressor_geometry({16, 4, 4}, {8, 2, 2});
    Rng rng(4);
    auto rstate = init_regressor<float>(rspec, rng);
    rstate.trained = true;
    ck.reg_spec = rspec;
    ck.reg_state = rstate;

    auto p1 = temp_path("ck1.ktck");
    auto p2 = temp_path("ck2.ktck");
    save_checkpoint(ck, p1.string());
    auto loaded = load_checkpoint<float>(p1.string());

    CHECK(loaded.config_hash == ck.config_hash);
    CHECK(loaded.phase == Phase::adversarial);
    CHECK(loaded.iteration == 321);
    REQUIRE(loaded.spec.has_value());
    CHECK(loaded.spec->name == "tiny_teacher");
    CHECK(loaded.spec->generator_output() == spec.generator_output());
    REQUIRE(loaded.state.has_value());
    CHECK(*loaded.state == state);
    CHECK(loaded.state->groups.at("gen.0").frozen);
    REQUIRE(loaded.optimizer.has_value());
    CHECK(loaded.optimizer->learning_rate == 0.05f);
    REQUIRE(loaded.reg_state.has_value());
    CHECK(loaded.reg_state->trained);
    CHECK(loaded.reg_state->weight == rstate.weight);

    save_checkpoint(loaded, p2.string());
    CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("checkpoint rejects version, precision and truncation") {
    Checkpoint<float> ck;
    ck.spec = tiny_student_spec({1, 8, 8}, 2);
    ck.state = init_network<float>(*ck.spec, 3);
    auto path = temp_path("bad.ktck");
    save_checkpoint(ck, path.string());

    CHECK_THROWS_MATCHES(load_checkpoint<double>(path.string()), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("precision")));

    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 7);
    CHECK_THROWS_MATCHES(load_checkpoint<float>(path.string()), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("truncated")));

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(static_cast<char>(9));  // version byte
    }
    CHECK_THROWS_MATCHES(load_checkpoint<float>(path.string()), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("version")));
}

TEST_CASE("state hashing distinguishes parameter changes") {
    auto spec = tiny_student_spec({1, 8, 8}, 2);
    auto a = init_network<float>(spec, 5);
    auto b = a;
    CHECK(state_hash(a) == state_hash(b));
    b.groups.at("gen.0").weight[0] += 1.0f;
    CHECK(state_hash(a) != state_hash(b));
}
