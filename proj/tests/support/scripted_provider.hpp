#pragma once

// Deterministic stand-in for a multimodal chat model. The fixture generator
// records its answers into the replay transcript store; the tests re-derive
// the same expectations from the predicates below. Keep both sides reading
// from this one file or they will drift.

#include <atomic>
#include <cstdio>
#include <functional>
#include <regex>
#include <string>
#include <vector>

#include "cmie/gateway.hpp"
#include "cmie/types.hpp"

namespace cmie::testing {

// ---- the planted world -----------------------------------------------------
//
// 100 items, item_0000 .. item_0099.
//   gold:      Fake when the index is even, Real when odd.
//   evidence:  absent when index % 5 == 4 (20 fallback items).
//   titles:    3 + index % 4 per item; item_0042 gets 25 to force the cap.
//
// Planted model opinion (wrong-answer sets, all inside the evidence items
// except the direct set's % 20 == 9 slice which lands on fallback items):
//   direct:    wrong when index % 10 in {0, 3, 6} or index % 20 == 9  -> 0.65
//   augmented: wrong when index % 10 in {0, 3}                        -> 0.75
//   final:     wrong when index % 20 in {0, 3}, plus {7, 27, 47, 67}
//              while the prompt carries no scored evidence and {26, 46}
//              while it carries no entities, so the toggle rows step
//              0.79 -> 0.83 -> 0.85 like the published direction
//   final under label reversal additionally flubs items 7 and 57.
//
// Coexistence scores plant the stage-1 error split: fake items score 7.0
// (strong, type i) when index % 10 == 0 and 3.0 otherwise; real items score
// 4.0 (weak, type ii) when index % 10 == 1 and 8.0 otherwise.

struct FixtureModel {
    static constexpr int kItemCount = 100;
    static constexpr const char* kModelName = "scripted-mllm";

    static std::string item_id(int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "item_%04d", i);
        return buf;
    }

    static Label gold(int i) { return (i % 2 == 0) ? Label::Fake : Label::Real; }

    static bool has_evidence(int i) { return i % 5 != 4; }

    static std::size_t title_count(int i) {
        return (i == 42) ? 25u : static_cast<std::size_t>(3 + i % 4);
    }

    static std::vector<std::string> titles(int i) {
        std::vector<std::string> out;
        for (std::size_t t = 1; t <= title_count(i); ++t) {
            out.push_back("Coverage " + std::to_string(t) + " of the scene behind " +
                          item_id(i));
        }
        return out;
    }

    static std::vector<std::string> entities(int i) {
        std::vector<std::string> out;
        for (int k = 0; k < 2 + i % 3; ++k) {
            out.push_back("entity-" + std::to_string(i) + "-" + std::to_string(k));
        }
        return out;
    }

    static std::string caption(int i) {
        return "Scene " + std::to_string(i) + " as reported in dispatch " + item_id(i) +
               " from the field.";
    }

    static double coexistence_score(int i) {
        if (gold(i) == Label::Fake) return (i % 10 == 0) ? 7.0 : 3.0;
        return (i % 10 == 1) ? 4.0 : 8.0;
    }

    static bool direct_wrong(int i) {
        const int m = i % 10;
        return m == 0 || m == 3 || m == 6 || i % 20 == 9;
    }

    static bool augmented_wrong(int i) {
        const int m = i % 10;
        return m == 0 || m == 3;
    }

    static bool final_wrong(int i, bool label_reversal, bool has_scores = true,
                            bool has_entities = true) {
        const int m = i % 20;
        if (m == 0 || m == 3) return true;
        if (label_reversal && (i == 7 || i == 57)) return true;
        if (!has_scores && (i == 7 || i == 27 || i == 47 || i == 67)) return true;
        if (!has_entities && (i == 26 || i == 46)) return true;
        return false;
    }

    // ---- prompt introspection ----------------------------------------------

    static int item_index(const std::string& prompt) {
        static const std::regex re("item_(\\d{4})");
        std::smatch m;
        if (!std::regex_search(prompt, m, re)) {
            throw std::runtime_error("scripted model saw a prompt without an item id");
        }
        return std::stoi(m[1].str());
    }

    static bool mentions(const std::string& prompt, const char* needle) {
        return prompt.find(needle) != std::string::npos;
    }

    static Stage detect_stage(const std::string& prompt) {
        if (mentions(prompt, "score for the coexistence")) return Stage::Coexistence;
        if (mentions(prompt, "score the relevance level")) return Stage::Scoring;
        if (mentions(prompt, "auxiliary information")) return Stage::Final;
        if (mentions(prompt, "and a list of titles")) return Stage::Augmented;
        return Stage::Direct;
    }

    static bool reversed_output(const std::string& prompt) {
        return mentions(prompt, "Yes indicates there is no misinformation");
    }

    // Numbered titles as rendered into the scoring prompt. The first one sits
    // inline after the input-line colon, the rest start fresh lines.
    static std::vector<std::string> titles_in_prompt(const std::string& prompt) {
        std::vector<std::string> out;
        static const std::regex line_re("(\n|: )(\\d+)\\. ([^\n]*)");
        for (auto it = std::sregex_iterator(prompt.begin(), prompt.end(), line_re);
             it != std::sregex_iterator(); ++it) {
            out.push_back((*it)[3].str());
        }
        return out;
    }

    // ---- response synthesis --------------------------------------------------

    static std::string verdict_json(bool fake_opinion, bool reversed, int i) {
        const bool yes = reversed ? !fake_opinion : fake_opinion;
        std::string body = std::string("{\"label\": \"") + (yes ? "Yes" : "No") +
                           "\", \"explanation\": \"Planted rationale for " + item_id(i) +
                           ": the pairing looks " +
                           (fake_opinion ? "mismatched" : "consistent") + ".\"}";
        // a slice of answers arrives fenced so replay also exercises the
        // repair ladder end to end
        if (i % 9 == 2) return "```json\n" + body + "\n```";
        return body;
    }

    static std::string respond(const ChatRequest& req) {
        const std::string& p = req.prompt_text;
        const int i = item_index(p);
        const Stage stage = detect_stage(p);
        switch (stage) {
        case Stage::Coexistence: {
            char buf[320];
            std::snprintf(buf, sizeof(buf),
                          "{\"score\": %.1f, \"explanation\": \"Both sides describe "
                          "scene %d, so they could plausibly co-occur.\"}",
                          coexistence_score(i), i);
            return buf;
        }
        case Stage::Scoring: {
            const auto listed = titles_in_prompt(p);
            std::string out = "[";
            for (std::size_t t = 0; t < listed.size(); ++t) {
                if (t > 0) out += ", ";
                const int score = static_cast<int>((i + 3 * (t + 1)) % 11);
                out += "{\"index\": " + std::to_string(t + 1) +
                       ", \"score\": " + std::to_string(score) +
                       ", \"explanation\": \"Overlap with the planted relation for "
                       "title " + std::to_string(t + 1) + ".\"" +
                       ", \"original title\": \"" + listed[t] + "\"}";
            }
            return out + "]";
        }
        case Stage::Final: {
            const bool rev = reversed_output(p);
            const bool has_scores = mentions(p, "The correlation score and explanation");
            const bool has_entities = mentions(p, "The the entities extracted from image:");
            const bool wrong = final_wrong(i, rev, has_scores, has_entities);
            return verdict_json(wrong != (gold(i) == Label::Fake), rev, i);
        }
        case Stage::Augmented:
            return verdict_json(augmented_wrong(i) != (gold(i) == Label::Fake), false, i);
        case Stage::Direct:
            return verdict_json(direct_wrong(i) != (gold(i) == Label::Fake), false, i);
        }
        throw std::runtime_error("unreachable stage");
    }
};

// Provider driven by an arbitrary handler; defaults to the fixture model.
class ScriptedProvider : public Provider {
public:
    using Handler = std::function<std::string(const ChatRequest&)>;

    explicit ScriptedProvider(Handler h = FixtureModel::respond,
                              std::string id = FixtureModel::kModelName)
        : handler_(std::move(h)), id_(std::move(id)) {}

    ProviderResponse complete(const ChatRequest& request) override {
        ++calls_;
        return ProviderResponse{handler_(request), 0, 0};
    }

    std::string id() const override { return id_; }

    std::size_t calls() const { return calls_.load(); }

private:
    Handler handler_;
    std::string id_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace cmie::testing
