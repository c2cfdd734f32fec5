#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "denseface/palettes.hpp"
#include "denseface/synthfaces.hpp"
#include "denseface/vocab.hpp"

using namespace df;

TEST_CASE("default vocabulary structure") {
    auto v = Vocabulary::defaults();
    CHECK(v.size() <= 128);
    CHECK(v.token(v.pad()) == "<pad>");
    CHECK(v.token(v.bos()) == "<bos>");
    CHECK(v.token(v.eos()) == "<eos>");
    CHECK(v.token(v.face()) == "face");
    CHECK(v.id("face") == v.face());
    // ids are dense and round-trip
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
    CHECK_THROWS_AS(v.id("zebra"), TokenizeError);
    CHECK_THROWS_AS(v.token(v.size()), IndexError);
}

TEST_CASE("tokenize basic caption") {
    auto v = Vocabulary::defaults();
    auto ids = tokenize("a face", v, 8);
    REQUIRE(static_cast<int>(ids.size()) == 8);
    CHECK(ids[0] == v.bos());
    CHECK(ids[1] == v.id("a"));
    CHECK(ids[2] == v.face());
    CHECK(ids[3] == v.eos());
    for (int i = 4; i < 8; ++i) CHECK(ids[i] == v.pad());
    CHECK(detokenize(ids, v) == "a face");
}

TEST_CASE("tokenize is case/whitespace tolerant, strict on vocabulary") {
    auto v = Vocabulary::defaults();
    CHECK(tokenize("A  FaCe ", v, 8) == tokenize("a face", v, 8));
    CHECK_THROWS_WITH_AS(tokenize("a zebra", v, 8), doctest::Contains("zebra"), TokenizeError);
    // caption too long for the window
    CHECK_THROWS_AS(tokenize("a face with black hair and blue eyes", v, 4), TokenizeError);
    // empty caption is the unconditional prompt: just BOS/EOS + padding
    auto ids = tokenize("", v, 6);
    CHECK(ids[0] == v.bos());
    CHECK(ids[1] == v.eos());
    for (int i = 2; i < 6; ++i) CHECK(ids[i] == v.pad());
}

TEST_CASE("every renderable caption tokenizes with L=16 (closure sweep)") {
    auto v = Vocabulary::defaults();
    std::array<const char*, 5> dirs = {"left", "right", "up", "down", "ahead"};
    for (const auto& hair : kHairColors)
        for (const auto& eye : kEyeColors)
            for (const auto& bg : kBackgroundColors)
                for (const char* dir : dirs) {
                    std::string cap = std::string("a face with ") + hair.name + " hair and " +
                                      eye.name + " eyes looking " + dir + " on a " + bg.name +
                                      " background";
                    auto ids = tokenize(cap, v, 16);
                    CHECK(static_cast<int>(ids.size()) == 16);
                    CHECK(detokenize(ids, v) == cap);
                }
}

TEST_CASE("caption_of output matches the template and tokenizes") {
    auto v = Vocabulary::defaults();
    SpriteSpec spec;
    spec.id_params = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.1, 0.9};
    spec.pose = {30.0, 0.0, 0.0};
    spec.background = 3;
    auto cap = caption_of(spec);
    CHECK(cap == "a face with black hair and violet eyes looking right on a green background");
    CHECK_NOTHROW(tokenize(cap, v, 16));
}

TEST_CASE("vocabulary save/load round-trip") {
    auto v = Vocabulary::defaults();
    auto path = std::filesystem::temp_directory_path() / "df_vocab_test.txt";
    v.save(path.string());
    auto w = Vocabulary::load(path.string());
    CHECK(w.tokens() == v.tokens());
    CHECK(w.pad() == v.pad());
    CHECK(w.face() == v.face());
    std::filesystem::remove(path);
    CHECK_THROWS_AS(Vocabulary::load("/nonexistent/vocab.txt"), IoError);
}

TEST_CASE("from_tokens validates specials and duplicates") {
    CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "b"}), ConfigError);  // no specials
    CHECK_THROWS_AS(
        Vocabulary::from_tokens({"<pad>", "<bos>", "<eos>", "face", "a", "a"}),
        ConfigError);  // duplicate
    std::vector<std::string> many = {"<pad>", "<bos>", "<eos>", "face"};
    for (int i = 0; i < 130; ++i) many.push_back("w" + std::to_string(i));
    CHECK_THROWS_AS(Vocabulary::from_tokens(many), ConfigError);  // > 128
}
