#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ktan/dataset.hpp"
#include "ktan/metrics.hpp"

using namespace ktan;

namespace {

std::filesystem::path temp_path(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "ktan_test_data";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and balanced") {
    SyntheticSpec spec;
    spec.classes = 4;
    spec.train_per_class = 12;
    spec.test_per_class = 5;
    spec.image_size = 16;

    auto [train1, test1] = generate_synthetic<float>(spec, 77);
    auto [train2, test2] = generate_synthetic<float>(spec, 77);
    CHECK(train1.images == train2.images);
    CHECK(train1.labels == train2.labels);
    CHECK(test1.images == test2.images);

    auto [train3, test3] = generate_synthetic<float>(spec, 78);
    CHECK_FALSE(train1.images == train3.images);

    REQUIRE(train1.size() == 48);
    REQUIRE(test1.size() == 20);
    std::vector<int64_t> hist(4, 0);
    for (int64_t y : train1.labels) hist[static_cast<size_t>(y)]++;
    for (auto h : hist) CHECK(h == 12);

    train1.validate();
    test1.validate();

    SyntheticSpec bad = spec;
    bad.classes = 1;
    CHECK_THROWS_AS(generate_synthetic<float>(bad, 1), ShapeError);
    bad.classes = 9;
    CHECK_THROWS_AS(generate_synthetic<float>(bad, 1), ShapeError);
    bad = spec;
    bad.image_size = 4;
    CHECK_THROWS_AS(generate_synthetic<float>(bad, 1), ShapeError);
}

TEST_CASE("dataset save/load round trip is bit-identical") {
    SyntheticSpec spec;
    spec.classes = 3;
    spec.train_per_class = 6;
    spec.test_per_class = 2;
    auto [train, test] = generate_synthetic<float>(spec, 5);

    auto p1 = temp_path("roundtrip1.ktds");
    auto p2 = temp_path("roundtrip2.ktds");
    save_dataset(train, p1.string());
    auto loaded = load_dataset<float>(p1.string());
    CHECK(loaded.images == train.images);
    CHECK(loaded.labels == train.labels);
    CHECK(loaded.class_count == train.class_count);

    save_dataset(loaded, p2.string());
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("dataset format rejects corruption") {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.train_per_class = 4;
    spec.test_per_class = 2;
    spec.image_size = 8;
    auto [train, test] = generate_synthetic<float>(spec, 9);
    auto path = temp_path("corrupt.ktds");
    save_dataset(train, path.string());

    // wrong precision on load
    CHECK_THROWS_AS(load_dataset<double>(path.string()), FormatError);

    // corrupted magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_MATCHES(load_dataset<float>(path.string()), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("magic")));

    // truncation mid image block
    save_dataset(train, path.string());
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 13);
    CHECK_THROWS_MATCHES(load_dataset<float>(path.string()), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("truncated")));
}

TEST_CASE("augmentation identity, involution and multiset properties") {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.train_per_class = 5;
    spec.test_per_class = 1;
    auto [train, test] = generate_synthetic<float>(spec, 33);
    auto [batch, labels] = gather(train, {0, 3, 7});

    AugmentConfig off;
    off.flip_prob = 0;
    off.crop_padding = 0;
    Rng r1(1);
    CHECK(augment_batch(batch, off, r1) == batch);

    // flip is an involution when crop offsets are pinned at (0,0)
    AugmentConfig flip_only;
    flip_only.flip_prob = 1;
    flip_only.crop_padding = 0;
    Rng r2(2), r3(3);
    auto once = augment_batch(batch, flip_only, r2);
    auto twice = augment_batch(once, flip_only, r3);
    CHECK(twice == batch);

    // flipped image is a pixel permutation
    auto sorted = [](std::vector<float> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(once.vec()) == sorted(batch.vec()));

    // value range and shape preserved under full augmentation
    AugmentConfig full;
    Rng r4(4);
    auto aug = augment_batch(batch, full, r4);
    REQUIRE(aug.shape() == batch.shape());
    for (int64_t i = 0; i < aug.numel(); ++i) {
        REQUIRE(aug[i] >= 0.0f);
        REQUIRE(aug[i] <= 1.0f);
    }

    // deterministic per rng state
    Rng r5(4);
    CHECK(augment_batch(batch, full, r5) == aug);
}

TEST_CASE("batcher covers every index exactly once per epoch") {
    Batcher batcher(10, 3, Rng(42));
    auto batches = batcher.epoch();
    REQUIRE(batches.size() == 4);
    CHECK(batches.back().size() == 1);

    std::vector<bool> seen(10, false);
    int64_t total = 0;
    for (const auto& b : batches)
        for (int64_t i : b) {
            REQUIRE_FALSE(seen[static_cast<size_t>(i)]);
            seen[static_cast<size_t>(i)] = true;
            ++total;
        }
    CHECK(total == 10);

    // same seed, same order
    Batcher again(10, 3, Rng(42));
    CHECK(again.epoch() == batches);

    CHECK_THROWS_AS(Batcher(0, 3, Rng(1)), ShapeError);
    CHECK_THROWS_AS(Batcher(10, 0, Rng(1)), ShapeError);
}

TEST_CASE("metrics records round trip through the text format") {
    auto r = MetricsRecord::train(Phase::adversarial, 17, 2);
    r.ce = 0.5;
    r.kd = 0;
    r.mse_fm = 0.125;
    r.adv_g = 0.0625;
    r.adv_d = 1.25;
    r.d_teacher = 0.75;
    r.d_student = 0.25;
    r.total = 0.6875;
    auto parsed = MetricsRecord::parse(r.line());
    CHECK(parsed.phase == Phase::adversarial);
    CHECK(parsed.iteration == 17);
    CHECK(parsed.epoch == 2);
    CHECK(parsed.mse_fm == 0.125);
    CHECK(parsed.total == 0.6875);

    auto e = MetricsRecord::evaluation(63, 1, "test", 0.8125);
    auto pe = MetricsRecord::parse(e.line());
    CHECK(pe.phase == Phase::eval);
    CHECK(pe.eval_split == "test");
    CHECK(pe.accuracy == 0.8125);

    CHECK_THROWS_AS(MetricsRecord::parse("phase=eval junk"), FormatError);
    CHECK_THROWS_AS(MetricsRecord::parse("phase=eval bogus=1"), FormatError);
    CHECK_THROWS_AS(MetricsRecord::parse("iter=3"), FormatError);
}

TEST_CASE("metrics log mirrors records to disk") {
    auto path = temp_path("metrics.txt");
    {
        MetricsLog log;
        log.open_file(path.string());
        auto r = MetricsRecord::train(Phase::pretrain, 0, 0);
        r.ce = 1.5;
        r.total = 1.5;
        log.append(r);
        log.append(MetricsRecord::evaluation(0, 0, "test", 0.5));
        log.flush();
    }
    auto rows = MetricsLog::read_file(path.string());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ce == 1.5);
    CHECK(rows[1].accuracy == 0.5);
}
