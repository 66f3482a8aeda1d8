#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmie/config.hpp"
#include "cmie/corpus.hpp"
#include "cmie/digest.hpp"
#include "cmie/errors.hpp"
#include "cmie/evaluate.hpp"
#include "cmie/gateway.hpp"
#include "cmie/pipeline.hpp"
#include "cmie/prompting.hpp"

namespace {

using namespace cmie;

void log_line(const std::string& msg) { std::cerr << "[cmie] " << msg << "\n"; }

// Options shared by the verbs that execute batches.
struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;      // --set key=value
    std::vector<std::string> flag_overrides; // explicit flags, applied last
};

void add_set_option(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--set", o.overrides, "override a documented config key (key=value)");
}

// Explicit flags funnel through the same key table as --set so precedence
// stays file < env < --set < flag.
void flag_override(CLI::App* cmd, CommonOpts& o, const char* flag, const char* key,
                   const char* help) {
    cmd->add_option_function<std::string>(
        flag,
        [&o, key](const std::string& v) { o.flag_overrides.push_back(std::string(key) + "=" + v); },
        help);
}

RunConfig resolve_config(const CommonOpts& o) {
    std::optional<std::filesystem::path> file;
    if (!o.config_path.empty()) file = o.config_path;
    RunConfig cfg = load_config_file(file);
    apply_env(cfg);
    for (const auto& list : {o.overrides, o.flag_overrides}) {
        for (const auto& kv : list) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("override '" + kv + "' is not key=value");
            }
            apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
    }
    return cfg;
}

std::optional<Split> parse_split_filter(const std::string& s) {
    if (s.empty() || s == "all") return std::nullopt;
    return split_from_string(s);
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::vector<std::string> nearest_ids(const std::string& wanted,
                                     const std::vector<PipelineResult>& results) {
    std::vector<std::pair<std::size_t, std::string>> ranked;
    for (const auto& r : results) {
        ranked.emplace_back(levenshtein(wanted, r.item_id), r.item_id);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) out.push_back(ranked[i].second);
    return out;
}

struct RunArgs {
    CommonOpts common;
    std::string corpus;
    std::string evidence;
    std::string out;
    std::string split;
    bool resume = false;
};

int cmd_run(const RunArgs& a) {
    RunConfig cfg = resolve_config(a.common);
    cfg.pipeline.validate_and_normalize();
    const auto corpus = load_dataset(a.corpus, parse_split_filter(a.split));
    EvidenceStore store(a.evidence);
    PromptCatalog catalog(cfg.prompts_dir);
    auto provider = make_provider(cfg.provider);
    Pipeline pipeline(cfg.pipeline, provider, &catalog);

    BatchOptions opts;
    opts.out_dir = a.out;
    opts.resume = a.resume;
    opts.workers = cfg.pipeline.workers;
    opts.corpus_digest = sha256_file(a.corpus);
    opts.config_digest = config_digest(cfg);
    opts.prompts_digest = catalog.digest();

    const BatchSummary summary = run_batch(corpus, store, pipeline, opts);
    const double rate = summary.results.empty()
                            ? 0.0
                            : static_cast<double>(summary.abstentions) /
                                  static_cast<double>(summary.results.size());
    log_line("mode=" + to_string(cfg.pipeline.mode) + " items=" +
             std::to_string(summary.results.size()) + " abstentions=" +
             std::to_string(summary.abstentions) + " resumed=" +
             std::to_string(summary.skipped_resume) + " model_calls=" +
             std::to_string(pipeline.model_calls()));
    if (rate > cfg.abstention_ceiling) {
        log_line("abstention rate " + std::to_string(rate) + " exceeds ceiling " +
                 std::to_string(cfg.abstention_ceiling));
        return 2;
    }
    return 0;
}

struct EvaluateArgs {
    std::string results;
    std::string corpus;
    std::string out;
    std::string format = "table-text";
    std::string name = "results";
    std::string split;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const auto results = load_results(a.results);
    const auto corpus = load_dataset(a.corpus, parse_split_filter(a.split));
    const auto gold = gold_map(corpus);
    const auto metrics = compute_metrics(predictions_from_results(results), gold);
    AnalysisBundle bundle;
    bundle.methods.push_back({a.name, metrics});
    emit_report(bundle, a.out, report_format_from_string(a.format));
    log_line("evaluated " + std::to_string(results.size()) + " results -> " + a.out);
    return 0;
}

struct AblateArgs {
    CommonOpts common;
    std::string corpus;
    std::string evidence;
    std::string out;
    std::string format = "table-text";
    std::string split;
    std::vector<std::string> rows;
    bool no_share_cache = false;
};

int cmd_ablate(const AblateArgs& a) {
    RunConfig cfg = resolve_config(a.common);
    const auto corpus = load_dataset(a.corpus, parse_split_filter(a.split));
    EvidenceStore store(a.evidence);
    PromptCatalog catalog(cfg.prompts_dir);
    auto provider = make_provider(cfg.provider);
    std::vector<Toggles> rows;
    if (a.rows.empty()) {
        rows = default_ablation_rows();
    } else {
        for (const auto& r : a.rows) rows.push_back(toggles_from_string(r));
    }
    AnalysisBundle bundle;
    bundle.ablation = run_ablation(corpus, store, cfg.pipeline, provider, catalog, rows,
                                   !a.no_share_cache);
    emit_report(bundle, a.out, report_format_from_string(a.format));
    log_line("ablation over " + std::to_string(rows.size()) + " rows -> " + a.out);
    return 0;
}

struct SensitivityArgs {
    CommonOpts common;
    std::string corpus;
    std::string evidence;
    std::string out;
    std::string format = "table-text";
    std::string split;
};

int cmd_sensitivity(const SensitivityArgs& a) {
    RunConfig cfg = resolve_config(a.common);
    const auto corpus = load_dataset(a.corpus, parse_split_filter(a.split));
    EvidenceStore store(a.evidence);
    PromptCatalog catalog(cfg.prompts_dir);
    auto provider = make_provider(cfg.provider);
    AnalysisBundle bundle;
    bundle.sensitivity =
        prompt_sensitivity_run(corpus, store, cfg.pipeline, provider, catalog);
    emit_report(bundle, a.out, report_format_from_string(a.format));
    log_line("sensitivity over " + std::to_string(corpus.size()) + " items -> " + a.out);
    return 0;
}

struct PropagationArgs {
    std::string results;
    std::string corpus;
    std::string out;
    std::string format = "table-text";
    std::string split;
    double threshold = 6.0;
};

int cmd_propagation(const PropagationArgs& a) {
    const auto results = load_results(a.results);
    const auto corpus = load_dataset(a.corpus, parse_split_filter(a.split));
    AnalysisBundle bundle;
    bundle.propagation = error_propagation_analysis(results, gold_map(corpus), a.threshold);
    emit_report(bundle, a.out, report_format_from_string(a.format));
    log_line("propagation analysis (threshold " + std::to_string(a.threshold) + ") -> " +
             a.out);
    return 0;
}

struct InspectArgs {
    std::string results;
    std::string id;
    std::string corpus;
    std::string evidence;
};

int cmd_inspect(const InspectArgs& a) {
    const auto results = load_results(a.results);
    const PipelineResult* found = nullptr;
    for (const auto& r : results) {
        if (r.item_id == a.id) {
            found = &r;
            break;
        }
    }
    if (found == nullptr) {
        std::string msg = "no result for item '" + a.id + "'";
        const auto near = nearest_ids(a.id, results);
        if (!near.empty()) {
            msg += "; nearest ids:";
            for (const auto& n : near) msg += " " + n;
        }
        throw DataError(msg);
    }
    const PipelineResult& r = *found;
    std::cout << "item " << r.item_id << "\n";
    if (!a.corpus.empty()) {
        for (const auto& item : load_dataset(a.corpus)) {
            if (item.id == r.item_id) {
                std::cout << "gold: " << to_string(item.gold_label) << "\n"
                          << "caption: " << item.caption << "\n";
                break;
            }
        }
    }
    std::cout << "mode: " << to_string(r.mode) << "  variant: " << to_string(r.variant)
              << "  fallback: " << (r.fallback_used ? "yes" : "no")
              << "  degraded: " << (r.degraded ? "yes" : "no") << "\n";
    if (!a.evidence.empty()) {
        EvidenceStore store(a.evidence);
        const auto bundle = store.load(r.item_id);
        if (!bundle.titles.empty()) {
            std::cout << "titles:\n";
            for (std::size_t i = 0; i < bundle.titles.size(); ++i) {
                std::cout << "  " << (i + 1) << ". " << bundle.titles[i] << "\n";
            }
        }
        if (!bundle.entities.empty()) {
            std::cout << "entities: " << render_entities(bundle.entities) << "\n";
        }
    }
    if (r.relation) {
        std::cout << "relation (S_co=" << format_score_1dp(r.relation->score)
                  << "): " << r.relation->explanation << "\n";
    }
    if (r.evidence_scores) {
        std::cout << "evidence scores:\n";
        for (const auto& e : r.evidence_scores->entries) {
            std::cout << "  " << e.index << ". [" << format_score_1dp(e.score) << "] "
                      << e.original_title << " (" << e.explanation << ")\n";
        }
    }
    if (r.abstained) {
        std::cout << "abstained: " << r.abstain_reason << "\n";
    } else if (r.verdict) {
        std::cout << "verdict: " << r.verdict->raw_label << " -> "
                  << to_string(r.verdict->semantic_label) << "\n"
                  << "explanation: " << r.verdict->explanation << "\n";
    }
    return 0;
}

int cmd_record_check(const std::string& transcripts) {
    const TranscriptAudit audit = audit_transcripts(transcripts);
    std::cout << "entries: " << audit.total_entries << "\n"
              << "distinct hashes: " << audit.distinct_hashes << "\n"
              << "exact duplicates: " << audit.exact_duplicates << "\n"
              << "divergent duplicates: " << audit.divergent_duplicates << "\n";
    if (audit.divergent_duplicates > 0) {
        log_line("divergent duplicates found: replay would be ambiguous");
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coexistence-guided multimodal misinformation detection pipeline"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "execute a batch over a corpus");
    add_set_option(run_cmd, run_args.common);
    run_cmd->add_option("--corpus", run_args.corpus, "dataset file (JSONL or array)")
        ->required();
    run_cmd->add_option("--evidence", run_args.evidence, "evidence store (dir or map file)");
    run_cmd->add_option("--out", run_args.out, "result directory")->required();
    run_cmd->add_option("--split", run_args.split, "train/val/test filter (default all)");
    run_cmd->add_flag("--resume", run_args.resume, "skip items with existing result files");
    flag_override(run_cmd, run_args.common, "--mode", "pipeline.mode",
                  "direct, augmented or cmie");
    flag_override(run_cmd, run_args.common, "--provider", "provider.kind",
                  "live, record or replay");
    flag_override(run_cmd, run_args.common, "--transcripts", "provider.transcripts",
                  "transcript file (replay source / record sink)");
    flag_override(run_cmd, run_args.common, "--variant", "pipeline.variant",
                  "original, task_rewrite or label_reversal");
    flag_override(run_cmd, run_args.common, "--toggles", "pipeline.toggles",
                  "TTTF form or comma list");
    flag_override(run_cmd, run_args.common, "--workers", "pipeline.workers", "pool size");
    flag_override(run_cmd, run_args.common, "--strong-threshold",
                  "pipeline.strong_threshold", "strong coexistence cut");
    flag_override(run_cmd, run_args.common, "--evidence-cap", "pipeline.evidence_cap",
                  "max titles per item");
    flag_override(run_cmd, run_args.common, "--model", "provider.model", "model name");
    flag_override(run_cmd, run_args.common, "--prompts", "prompts_dir",
                  "prompt catalog directory");

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "score a result directory against gold");
    eval_cmd->add_option("--results", eval_args.results, "result directory")->required();
    eval_cmd->add_option("--corpus", eval_args.corpus, "dataset file")->required();
    eval_cmd->add_option("--out", eval_args.out, "report file")->required();
    eval_cmd->add_option("--format", eval_args.format, "table-text, delimited or structured");
    eval_cmd->add_option("--name", eval_args.name, "method label in the report");
    eval_cmd->add_option("--split", eval_args.split, "train/val/test filter");

    AblateArgs ablate_args;
    auto* ablate_cmd = app.add_subcommand("ablate", "run the toggle matrix");
    add_set_option(ablate_cmd, ablate_args.common);
    ablate_cmd->add_option("--corpus", ablate_args.corpus, "dataset file")->required();
    ablate_cmd->add_option("--evidence", ablate_args.evidence, "evidence store");
    ablate_cmd->add_option("--out", ablate_args.out, "report file")->required();
    ablate_cmd->add_option("--format", ablate_args.format,
                           "table-text, delimited or structured");
    ablate_cmd->add_option("--rows", ablate_args.rows,
                           "toggle rows (TTTF form); default is the published five");
    ablate_cmd->add_option("--split", ablate_args.split, "train/val/test filter");
    ablate_cmd->add_flag("--no-share-cache", ablate_args.no_share_cache,
                         "rerun upstream stages per row");
    flag_override(ablate_cmd, ablate_args.common, "--provider", "provider.kind",
                  "live, record or replay");
    flag_override(ablate_cmd, ablate_args.common, "--transcripts", "provider.transcripts",
                  "transcript file");
    flag_override(ablate_cmd, ablate_args.common, "--model", "provider.model", "model name");
    flag_override(ablate_cmd, ablate_args.common, "--workers", "pipeline.workers",
                  "pool size");
    flag_override(ablate_cmd, ablate_args.common, "--prompts", "prompts_dir",
                  "prompt catalog directory");

    SensitivityArgs sens_args;
    auto* sens_cmd = app.add_subcommand("sensitivity", "compare final-prompt variants");
    add_set_option(sens_cmd, sens_args.common);
    sens_cmd->add_option("--corpus", sens_args.corpus, "dataset file")->required();
    sens_cmd->add_option("--evidence", sens_args.evidence, "evidence store");
    sens_cmd->add_option("--out", sens_args.out, "report file")->required();
    sens_cmd->add_option("--format", sens_args.format,
                         "table-text, delimited or structured");
    sens_cmd->add_option("--split", sens_args.split, "train/val/test filter");
    flag_override(sens_cmd, sens_args.common, "--provider", "provider.kind",
                  "live, record or replay");
    flag_override(sens_cmd, sens_args.common, "--transcripts", "provider.transcripts",
                  "transcript file");
    flag_override(sens_cmd, sens_args.common, "--model", "provider.model", "model name");
    flag_override(sens_cmd, sens_args.common, "--workers", "pipeline.workers", "pool size");
    flag_override(sens_cmd, sens_args.common, "--prompts", "prompts_dir",
                  "prompt catalog directory");

    PropagationArgs prop_args;
    auto* prop_cmd = app.add_subcommand("analyze-propagation",
                                        "stage-1 error split and affected-subset metrics");
    prop_cmd->add_option("--results", prop_args.results, "result directory")->required();
    prop_cmd->add_option("--corpus", prop_args.corpus, "dataset file")->required();
    prop_cmd->add_option("--out", prop_args.out, "report file")->required();
    prop_cmd->add_option("--format", prop_args.format,
                         "table-text, delimited or structured");
    prop_cmd->add_option("--threshold", prop_args.threshold,
                         "strong coexistence cut (default 6.0)");
    prop_cmd->add_option("--split", prop_args.split, "train/val/test filter");

    InspectArgs inspect_args;
    auto* inspect_cmd = app.add_subcommand("inspect", "print one item's trace");
    inspect_cmd->add_option("--results", inspect_args.results, "result directory")
        ->required();
    inspect_cmd->add_option("--id", inspect_args.id, "item id")->required();
    inspect_cmd->add_option("--corpus", inspect_args.corpus, "dataset file (adds caption)");
    inspect_cmd->add_option("--evidence", inspect_args.evidence,
                            "evidence store (adds titles)");

    std::string check_transcripts;
    auto* check_cmd = app.add_subcommand("record-check", "audit a transcript store");
    check_cmd->add_option("--transcripts", check_transcripts, "transcript file")->required();

    try {
        app.parse(argc, argv);
        if (run_cmd->parsed()) return cmd_run(run_args);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_args);
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_args);
        if (sens_cmd->parsed()) return cmd_sensitivity(sens_args);
        if (prop_cmd->parsed()) return cmd_propagation(prop_args);
        if (inspect_cmd->parsed()) return cmd_inspect(inspect_args);
        if (check_cmd->parsed()) return cmd_record_check(check_transcripts);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const cmie::Error& e) {
        log_line(std::string("error: ") + e.what());
        return 1;
    } catch (const std::exception& e) {
        log_line(std::string("unexpected error: ") + e.what());
        return 1;
    }
}
