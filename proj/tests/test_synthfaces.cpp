#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "denseface/image_io.hpp"
#include "denseface/rng.hpp"
#include "denseface/synthfaces.hpp"

using namespace df;

namespace {

SpriteSpec random_spec(Rng& rng) {
    SpriteSpec s;
    for (auto& p : s.id_params) p = rng.uniform();
    s.pose.yaw = rng.uniform(-45.0, 45.0);
    s.pose.pitch = rng.uniform(-45.0, 45.0);
    s.pose.roll = rng.uniform(-45.0, 45.0);
    s.background = static_cast<int>(rng.uniform_int(8));
    s.seed = rng.uniform_int(1u << 30);
    return s;
}

double mask_area(const TensorF& m) {
    double a = 0;
    for (int64_t i = 0; i < m.numel(); ++i) a += m.at(i);
    return a;
}

}  // namespace

TEST_CASE("render output ranges and shapes") {
    Rng rng(1);
    auto s = render(random_spec(rng));
    CHECK(s.image.shape() == Shape{3, 64, 64});
    CHECK(s.annotations.mask.shape() == Shape{64, 64});
    CHECK(s.annotations.depth.shape() == Shape{64, 64});
    for (int64_t i = 0; i < s.image.numel(); ++i) {
        CHECK(s.image.at(i) >= -1.0f);
        CHECK(s.image.at(i) <= 1.0f);
    }
    for (int64_t i = 0; i < 64 * 64; ++i) {
        const float m = s.annotations.mask.at(i);
        const float d = s.annotations.depth.at(i);
        CHECK((m == 0.0f || m == 1.0f));
        CHECK(d >= 0.0f);
        CHECK(d <= 1.0f);
        if (m == 0.0f) CHECK(d == 0.0f);  // depth is zero outside the face
    }
}

TEST_CASE("render is deterministic in the spec") {
    Rng rng(2);
    auto spec = random_spec(rng);
    auto a = render(spec);
    auto b = render(spec);
    CHECK(a.image.values() == b.image.values());
    CHECK(a.annotations.mask.values() == b.annotations.mask.values());
    CHECK(a.caption == b.caption);
}

TEST_CASE("frontal mask area matches the ellipse formula within 2%") {
    // yaw=pitch=roll=0: the face is the ellipse (x/a)^2 + (y/b)^2 <= 1
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto spec = random_spec(rng);
        spec.pose = {};
        auto s = render(spec);
        const double a = 16.0 + 6.0 * spec.id_params[0];
        const double b = 18.0 + 6.0 * spec.id_params[1];
        const double expect = M_PI * a * b;
        CHECK(mask_area(s.annotations.mask) == doctest::Approx(expect).epsilon(0.02));
    }
}

TEST_CASE("landmarks lie inside the mask") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = render(random_spec(rng));
        for (const auto& lm : s.annotations.landmarks) {
            const int x = static_cast<int>(std::lround(lm[0]));
            const int y = static_cast<int>(std::lround(lm[1]));
            REQUIRE(x >= 0);
            REQUIRE(x < 64);
            REQUIRE(y >= 0);
            REQUIRE(y < 64);
            CHECK(s.annotations.mask.at(y * 64 + x) == 1.0f);
        }
    }
}

TEST_CASE("recover_pose inverts the renderer over 1000 random specs") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        auto spec = random_spec(rng);
        auto s = render(spec);
        auto p = recover_pose(s.annotations.landmarks);
        CHECK(p.yaw == doctest::Approx(spec.pose.yaw).epsilon(1e-6));
        CHECK(p.pitch == doctest::Approx(spec.pose.pitch).epsilon(1e-6));
        CHECK(p.roll == doctest::Approx(spec.pose.roll).epsilon(1e-6));
    }
}

TEST_CASE("recover_pose hand-worked frontal case") {
    // Frontal pose: eyes level, nose on the eye-midpoint vertical at the rest
    // offset. All angles must be exactly zero.
    std::array<std::array<double, 2>, kNumLandmarks> lm{};
    const double spacing = 13.0;
    lm[0] = {32.0 - spacing / 2.0, 26.0};  // left eye
    lm[1] = {32.0 + spacing / 2.0, 26.0};  // right eye
    lm[2] = {32.0, 26.0 + kNoseRestFrac * spacing};  // nose at rest
    lm[3] = {28.0, 37.0};
    lm[4] = {36.0, 37.0};
    auto p = recover_pose(lm);
    CHECK(p.yaw == doctest::Approx(0.0));
    CHECK(p.pitch == doctest::Approx(0.0));
    CHECK(p.roll == doctest::Approx(0.0));
    // coincident eyes are unrecoverable
    lm[1] = lm[0];
    CHECK_THROWS_AS(recover_pose(lm), DomainError);
}

TEST_CASE("pose moves nose and mouth, not the eyes") {
    Rng rng(6);
    auto spec = random_spec(rng);
    spec.pose = {};
    auto frontal = render(spec);
    spec.pose = {30.0, -20.0, 0.0};
    auto turned = render(spec);
    for (int i : {0, 1}) {  // eyes fixed
        CHECK(turned.annotations.landmarks[i][0] == doctest::Approx(frontal.annotations.landmarks[i][0]));
        CHECK(turned.annotations.landmarks[i][1] == doctest::Approx(frontal.annotations.landmarks[i][1]));
    }
    const double dx = kPoseShiftPx * std::sin(30.0 * M_PI / 180.0);
    const double dy = kPoseShiftPx * std::sin(-20.0 * M_PI / 180.0);
    for (int i : {2, 3, 4}) {  // nose + mouth translate
        CHECK(turned.annotations.landmarks[i][0] ==
              doctest::Approx(frontal.annotations.landmarks[i][0] + dx));
        CHECK(turned.annotations.landmarks[i][1] ==
              doctest::Approx(frontal.annotations.landmarks[i][1] + dy));
    }
}

TEST_CASE("roll rotates all landmarks about the image center") {
    Rng rng(7);
    auto spec = random_spec(rng);
    spec.pose = {10.0, -5.0, 0.0};
    auto flat = render(spec);
    spec.pose.roll = 25.0;
    auto rolled = render(spec);
    const double th = 25.0 * M_PI / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    for (int i = 0; i < kNumLandmarks; ++i) {
        const double x = flat.annotations.landmarks[i][0] - 32.0;
        const double y = flat.annotations.landmarks[i][1] - 32.0;
        CHECK(rolled.annotations.landmarks[i][0] == doctest::Approx(32.0 + c * x - sn * y));
        CHECK(rolled.annotations.landmarks[i][1] == doctest::Approx(32.0 + sn * x + c * y));
    }
}

TEST_CASE("direction word binning") {
    CHECK(direction_word({0, 0, 0}) == "ahead");
    CHECK(direction_word({15.0, -15.0, 30.0}) == "ahead");  // roll ignored
    CHECK(direction_word({30.0, 0, 0}) == "right");
    CHECK(direction_word({-30.0, 10.0, 0}) == "left");
    CHECK(direction_word({0, 30.0, 0}) == "down");
    CHECK(direction_word({10.0, -40.0, 0}) == "up");
    CHECK(direction_word({40.0, 20.0, 0}) == "right");  // yaw dominates ties toward yaw
}

TEST_CASE("spec validation") {
    SpriteSpec s;
    s.id_params.fill(0.5);
    s.pose = {50.0, 0, 0};
    CHECK_THROWS_AS(s.validate(), DomainError);
    s.pose = {0, 0, 0};
    s.background = 9;
    CHECK_THROWS_AS(s.validate(), DomainError);
    s.background = 0;
    s.id_params[2] = 1.5;
    CHECK_THROWS_AS(s.validate(), DomainError);
}

TEST_CASE("annotations round-trip through files") {
    namespace fs = std::filesystem;
    Rng rng(8);
    auto s = render(random_spec(rng));
    auto dir = fs::temp_directory_path() / "df_synth_test";
    fs::create_directories(dir);
    const auto m = (dir / "m.pgm").string(), d = (dir / "d.pgm").string(),
               l = (dir / "l.json").string();
    save_annotations(s.annotations, m, d, l);
    auto back = load_annotations(m, d, l);
    CHECK(back.mask.values() == s.annotations.mask.values());
    for (int i = 0; i < kNumLandmarks; ++i) {
        CHECK(back.landmarks[i][0] == doctest::Approx(s.annotations.landmarks[i][0]));
        CHECK(back.landmarks[i][1] == doctest::Approx(s.annotations.landmarks[i][1]));
    }
    // depth is 8-bit quantized on disk
    for (int64_t i = 0; i < 64 * 64; ++i)
        CHECK(std::abs(back.depth.at(i) - s.annotations.depth.at(i)) <= 1.0f / 255.0f + 1e-6f);
    fs::remove_all(dir);
}

TEST_CASE("image encode/decode round-trip is byte-stable") {
    Rng rng(9);
    auto s = render(random_spec(rng));
    auto bytes = decode_image(s.image);
    auto img2 = encode_image(bytes);
    auto bytes2 = decode_image(img2);
    CHECK(bytes.data == bytes2.data);
}

TEST_CASE("generate_dataset layout, splits, determinism") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "df_dataset_test";
    fs::remove_all(dir);
    auto man = generate_dataset(40, 1234, dir.string(), 4, true);
    REQUIRE(static_cast<int>(man.entries.size()) == 40);

    // identity split is disjoint: no identity appears in both train and heldout
    std::set<int> train_ids, held_ids;
    for (const auto& e : man.entries)
        (e.split == "train" ? train_ids : held_ids).insert(e.identity);
    CHECK(!train_ids.empty());
    CHECK(!held_ids.empty());
    for (int id : held_ids) CHECK(train_ids.count(id) == 0);
    // each identity has n_pose samples
    std::map<int, int> counts;
    for (const auto& e : man.entries) counts[e.identity]++;
    for (const auto& [id, c] : counts) CHECK(c == 4);

    // all referenced files exist and a sample re-renders identically
    for (const auto& e : man.entries) {
        CHECK(fs::exists(dir / e.image));
        CHECK(fs::exists(dir / e.mask));
        CHECK(fs::exists(dir / e.depth));
        CHECK(fs::exists(dir / e.landmarks));
    }
    const auto& e0 = man.entries.front();
    auto rerender = render(e0.spec);
    auto on_disk = read_ppm((dir / e0.image).string());
    CHECK(decode_image(rerender.image).data == on_disk.data);

    // manifest re-load matches, and a second generation is identical
    auto loaded = load_manifest((dir / "manifest.jsonl").string());
    REQUIRE(loaded.entries.size() == man.entries.size());
    for (size_t i = 0; i < man.entries.size(); ++i) {
        CHECK(loaded.entries[i].caption == man.entries[i].caption);
        CHECK(loaded.entries[i].split == man.entries[i].split);
        CHECK(loaded.entries[i].spec.seed == man.entries[i].spec.seed);
    }
    auto man2 = generate_dataset(40, 1234, (dir.parent_path() / "df_dataset_test2").string(), 4, false);
    for (size_t i = 0; i < man.entries.size(); ++i)
        CHECK(man2.entries[i].spec.id_params == man.entries[i].spec.id_params);
    auto man3 = generate_dataset(40, 777, (dir.parent_path() / "df_dataset_test3").string(), 4, false);
    CHECK(man3.entries.front().spec.id_params != man.entries.front().spec.id_params);

    fs::remove_all(dir);
}

TEST_CASE("truncated image file is a corrupt artifact") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "df_trunc_test";
    fs::create_directories(dir);
    Rng rng(10);
    auto s = render(random_spec(rng));
    const auto path = (dir / "img.ppm").string();
    write_ppm(path, decode_image(s.image));
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK_THROWS_AS(read_ppm(path), CorruptArtifactError);
    fs::remove_all(dir);
}
