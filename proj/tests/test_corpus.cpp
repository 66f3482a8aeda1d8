#include <doctest.h>

#include <algorithm>
#include <random>

#include "cmie/corpus.hpp"
#include "cmie/errors.hpp"
#include "support/paths.hpp"
#include "support/scripted_provider.hpp"

using namespace cmie;
using cmie::testing::FixtureModel;
using cmie::testing::TempDir;

TEST_CASE("dataset loads jsonl with defaults and case-insensitive labels") {
    TempDir dir;
    const auto file = dir.write("data.jsonl",
                                R"({"id": "a", "image": "img/a.png", "caption": "one", "label": "FAKE"}
{"id": "b", "image": "/abs/b.png", "caption": "two", "label": "Real", "split": "val"}
)");
    const auto items = load_dataset(file);
    REQUIRE(items.size() == 2);
    CHECK(items[0].gold_label == Label::Fake);
    CHECK(items[0].split == Split::Test); // default when absent
    // relative refs resolve against the dataset directory, absolute pass through
    CHECK(items[0].image_ref == (dir.path() / "img/a.png").lexically_normal().string());
    CHECK(items[1].image_ref == "/abs/b.png");
    CHECK(items[1].split == Split::Val);
}

TEST_CASE("dataset also accepts a top-level json array") {
    TempDir dir;
    const auto file = dir.write(
        "data.json",
        R"([{"id": "x", "image": "x.png", "caption": "c", "label": "real"}])");
    CHECK(load_dataset(file).size() == 1);
}

TEST_CASE("dataset errors carry the offending line") {
    TempDir dir;
    SUBCASE("missing caption") {
        const auto file =
            dir.write("bad.jsonl", R"({"id": "a", "image": "a.png", "label": "fake"})");
        CHECK_THROWS_AS(load_dataset(file), DataError);
    }
    SUBCASE("unknown label token") {
        const auto file = dir.write(
            "bad.jsonl", R"({"id": "a", "image": "a.png", "caption": "c", "label": "maybe"})");
        CHECK_THROWS_AS(load_dataset(file), DataError);
    }
    SUBCASE("duplicate ids") {
        const auto file = dir.write("bad.jsonl",
                                    R"({"id": "a", "image": "a.png", "caption": "c", "label": "fake"}
{"id": "a", "image": "b.png", "caption": "d", "label": "real"}
)");
        CHECK_THROWS_AS(load_dataset(file), DataError);
    }
}

TEST_CASE("split filter keeps only the requested split") {
    TempDir dir;
    const auto file = dir.write("data.jsonl",
                                R"({"id": "a", "image": "a.png", "caption": "c", "label": "fake", "split": "train"}
{"id": "b", "image": "b.png", "caption": "c", "label": "real", "split": "test"}
)");
    const auto test_only = load_dataset(file, Split::Test);
    REQUIRE(test_only.size() == 1);
    CHECK(test_only[0].id == "b");
}

TEST_CASE("dataset round-trips through write_dataset") {
    std::mt19937 rng(11);
    std::vector<NewsItem> items;
    for (int i = 0; i < 60; ++i) {
        NewsItem it;
        it.id = "item_" + std::to_string(i);
        it.image_ref = "/img/" + std::to_string(rng() % 1000) + ".png";
        it.caption = "caption " + std::to_string(rng()) + " with \"quotes\" and {braces}";
        it.gold_label = (rng() % 2) ? Label::Fake : Label::Real;
        it.split = static_cast<Split>(rng() % 3);
        items.push_back(std::move(it));
    }
    TempDir dir;
    const auto file = dir.path() / "round.jsonl";
    write_dataset(items, file);
    const auto back = load_dataset(file);
    REQUIRE(back.size() == items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        CHECK(back[i].id == items[i].id);
        CHECK(back[i].image_ref == items[i].image_ref);
        CHECK(back[i].caption == items[i].caption);
        CHECK(back[i].gold_label == items[i].gold_label);
        CHECK(back[i].split == items[i].split);
    }
}

TEST_CASE("title normalization trims, collapses, dedups and is idempotent") {
    const std::vector<std::string> raw = {"  Two   spaced    words ", "", "   ",
                                          "Two spaced words", "unique\ttitle", "unique title"};
    const auto once = normalize_titles(raw);
    REQUIRE(once.size() == 2);
    CHECK(once[0] == "Two spaced words");
    CHECK(once[1] == "unique title");
    CHECK(normalize_titles(once) == once);

    // idempotence over random whitespace noise
    std::mt19937 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::string> noisy;
        for (int k = 0; k < 10; ++k) {
            std::string s;
            for (int c = 0; c < 12; ++c) {
                const int pick = static_cast<int>(rng() % 6);
                if (pick < 3) s += static_cast<char>('a' + rng() % 26);
                else if (pick == 3) s += ' ';
                else if (pick == 4) s += '\t';
                else s += "  ";
            }
            noisy.push_back(s);
        }
        const auto first = normalize_titles(noisy);
        CHECK(normalize_titles(first) == first);
    }
}

TEST_CASE("entity normalization keeps duplicates in api order") {
    const std::vector<std::string> raw = {" Eiffel  Tower ", "Paris", "Paris", ""};
    const auto out = normalize_entities(raw);
    REQUIRE(out.size() == 3);
    CHECK(out[0] == "Eiffel Tower");
    CHECK(out[1] == "Paris");
    CHECK(out[2] == "Paris");
}

TEST_CASE("evidence store directory layout round-trips") {
    TempDir dir;
    EvidenceStore store(dir.path());
    EvidenceBundle b;
    b.item_id = "item_x";
    b.titles = {"t1", "t2"};
    b.entities = {"e1"};
    b.provenance = EvidenceBundle::Provenance::Cache;
    store.put(b);

    const auto back = store.load("item_x");
    CHECK(back.titles == b.titles);
    CHECK(back.entities == b.entities);
    CHECK(back.provenance == EvidenceBundle::Provenance::Cache);

    const auto missing = store.load("item_y");
    CHECK(missing.provenance == EvidenceBundle::Provenance::Absent);
    CHECK(missing.titles.empty());
}

TEST_CASE("evidence store rejects malformed records") {
    TempDir dir;
    dir.write("item_bad.json", R"({"titles": "not a list"})");
    EvidenceStore store(dir.path());
    CHECK_THROWS_AS(store.load("item_bad"), DataError);
}

TEST_CASE("empty evidence path is an always-absent store") {
    EvidenceStore store{std::filesystem::path{}};
    CHECK(store.load("anything").provenance == EvidenceBundle::Provenance::Absent);
    EvidenceBundle b;
    b.item_id = "x";
    CHECK_THROWS_AS(store.put(b), DataError);
}

TEST_CASE("fixture corpus matches the planted world") {
    const auto items = load_dataset(cmie::testing::fixture_root() / "corpus_100.jsonl");
    REQUIRE(items.size() == FixtureModel::kItemCount);
    EvidenceStore store(cmie::testing::fixture_root() / "evidence");
    for (int i = 0; i < FixtureModel::kItemCount; ++i) {
        CHECK(items[static_cast<std::size_t>(i)].id == FixtureModel::item_id(i));
        CHECK(items[static_cast<std::size_t>(i)].gold_label == FixtureModel::gold(i));
        const auto ev = store.load(FixtureModel::item_id(i));
        if (FixtureModel::has_evidence(i)) {
            CHECK(ev.titles.size() == FixtureModel::title_count(i));
        } else {
            CHECK(ev.provenance == EvidenceBundle::Provenance::Absent);
        }
    }
}
