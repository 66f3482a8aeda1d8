#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cmie/config.hpp"
#include "cmie/corpus.hpp"
#include "cmie/errors.hpp"
#include "cmie/evaluate.hpp"
#include "cmie/gateway.hpp"
#include "cmie/parsing.hpp"
#include "cmie/pipeline.hpp"
#include "cmie/prompting.hpp"
#include "cmie/types.hpp"

namespace py = pybind11;
using namespace cmie;

namespace {

// Enums cross the boundary as their canonical strings; the C++ side already
// owns both directions of the mapping.
std::optional<Label> label_opt_from(const std::optional<std::string>& s) {
    if (!s) return std::nullopt;
    return label_from_string(*s);
}

std::map<std::string, Label> gold_from_dict(const std::map<std::string, std::string>& gold) {
    std::map<std::string, Label> out;
    for (const auto& [id, label] : gold) out[id] = label_from_string(label);
    return out;
}

std::vector<ItemPrediction>
predictions_from_pairs(const std::vector<std::pair<std::string, std::optional<std::string>>>& v) {
    std::vector<ItemPrediction> preds;
    preds.reserve(v.size());
    for (const auto& [id, label] : v) preds.push_back({id, label_opt_from(label)});
    return preds;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "coexistence-guided misinformation detection core";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<TransportError>(m, "TransportError");
    py::register_exception<RefusalError>(m, "RefusalError");
    py::register_exception<ReplayMissError>(m, "ReplayMissError");
    py::register_exception<ParseFailure>(m, "ParseFailure");
    py::register_exception<PromptError>(m, "PromptError");

    py::class_<NewsItem>(m, "NewsItem")
        .def(py::init([](std::string id, std::string image_ref, std::string caption,
                         const std::string& label, const std::string& split) {
                 NewsItem it;
                 it.id = std::move(id);
                 it.image_ref = std::move(image_ref);
                 it.caption = std::move(caption);
                 it.gold_label = label_from_string(label);
                 it.split = split_from_string(split);
                 return it;
             }),
             py::arg("id"), py::arg("image_ref"), py::arg("caption"),
             py::arg("label") = "real", py::arg("split") = "test")
        .def_readwrite("id", &NewsItem::id)
        .def_readwrite("image_ref", &NewsItem::image_ref)
        .def_readwrite("caption", &NewsItem::caption)
        .def_property(
            "label", [](const NewsItem& it) { return to_string(it.gold_label); },
            [](NewsItem& it, const std::string& v) { it.gold_label = label_from_string(v); })
        .def_property(
            "split", [](const NewsItem& it) { return to_string(it.split); },
            [](NewsItem& it, const std::string& v) { it.split = split_from_string(v); })
        .def("__repr__", [](const NewsItem& it) {
            return "NewsItem(id='" + it.id + "', label='" + to_string(it.gold_label) + "')";
        });

    py::class_<EvidenceBundle>(m, "EvidenceBundle")
        .def(py::init<>())
        .def_readwrite("item_id", &EvidenceBundle::item_id)
        .def_readwrite("titles", &EvidenceBundle::titles)
        .def_readwrite("entities", &EvidenceBundle::entities)
        .def_property_readonly("provenance", [](const EvidenceBundle& b) {
            return to_string(b.provenance);
        });

    py::class_<ExtractedJson>(m, "ExtractedJson")
        .def_readonly("text", &ExtractedJson::text)
        .def_readonly("repaired", &ExtractedJson::repaired);

    py::class_<ParsedVerdict>(m, "ParsedVerdict")
        .def_readonly("raw_label", &ParsedVerdict::raw_label)
        .def_readonly("explanation", &ParsedVerdict::explanation)
        .def_readonly("repaired", &ParsedVerdict::repaired)
        .def_property_readonly("semantic_label", [](const ParsedVerdict& v) {
            return to_string(v.semantic_label);
        });

    py::class_<ParsedCoexistence>(m, "ParsedCoexistence")
        .def(py::init([](double score, std::string explanation) {
                 ParsedCoexistence c;
                 c.score = score;
                 c.explanation = std::move(explanation);
                 return c;
             }),
             py::arg("score"), py::arg("explanation") = "")
        .def_readwrite("score", &ParsedCoexistence::score)
        .def_readwrite("explanation", &ParsedCoexistence::explanation)
        .def_readonly("repaired", &ParsedCoexistence::repaired);

    py::class_<ScoreEntry>(m, "ScoreEntry")
        .def(py::init<>())
        .def_readwrite("index", &ScoreEntry::index)
        .def_readwrite("score", &ScoreEntry::score)
        .def_readwrite("explanation", &ScoreEntry::explanation)
        .def_readwrite("original_title", &ScoreEntry::original_title);

    py::class_<ParsedScores>(m, "ParsedScores")
        .def_readonly("entries", &ParsedScores::entries)
        .def_readonly("repaired", &ParsedScores::repaired);

    py::class_<ConfusionCounts>(m, "ConfusionCounts")
        .def_readonly("tp", &ConfusionCounts::tp)
        .def_readonly("fp", &ConfusionCounts::fp)
        .def_readonly("fn", &ConfusionCounts::fn)
        .def_readonly("tn", &ConfusionCounts::tn)
        .def_readonly("abstentions", &ConfusionCounts::abstentions);

    py::class_<ClassMetrics>(m, "ClassMetrics")
        .def_readonly("precision", &ClassMetrics::precision)
        .def_readonly("recall", &ClassMetrics::recall)
        .def_readonly("f1", &ClassMetrics::f1)
        .def_readonly("support", &ClassMetrics::support);

    py::class_<MetricsSummary>(m, "MetricsSummary")
        .def_readonly("real", &MetricsSummary::real)
        .def_readonly("fake", &MetricsSummary::fake)
        .def_readonly("accuracy", &MetricsSummary::accuracy)
        .def_readonly("abstention_rate", &MetricsSummary::abstention_rate)
        .def_readonly("counts", &MetricsSummary::counts);

    py::class_<PropagationReport>(m, "PropagationReport")
        .def_readonly("affected_fake", &PropagationReport::affected_fake)
        .def_readonly("affected_real", &PropagationReport::affected_real)
        .def_readonly("with_relation", &PropagationReport::with_relation)
        .def_readonly("fake_share", &PropagationReport::fake_share)
        .def_readonly("affected_metrics", &PropagationReport::affected_metrics);

    py::class_<StageTranscriptRef>(m, "StageTranscriptRef")
        .def_property_readonly("stage", [](const StageTranscriptRef& r) {
            return to_string(r.stage);
        })
        .def_readonly("request_hash", &StageTranscriptRef::request_hash)
        .def_readonly("latency_ms", &StageTranscriptRef::latency_ms);

    py::class_<PipelineResult>(m, "PipelineResult")
        .def_readonly("item_id", &PipelineResult::item_id)
        .def_readonly("abstained", &PipelineResult::abstained)
        .def_readonly("abstain_reason", &PipelineResult::abstain_reason)
        .def_readonly("verdict", &PipelineResult::verdict)
        .def_readonly("relation", &PipelineResult::relation)
        .def_readonly("evidence_scores", &PipelineResult::evidence_scores)
        .def_readonly("stage_transcripts", &PipelineResult::stage_transcripts)
        .def_readonly("fallback_used", &PipelineResult::fallback_used)
        .def_readonly("degraded", &PipelineResult::degraded)
        .def_property_readonly("mode",
                               [](const PipelineResult& r) { return to_string(r.mode); })
        .def_property_readonly("variant",
                               [](const PipelineResult& r) { return to_string(r.variant); })
        .def("to_json", [](const PipelineResult& r) { return result_to_json(r); });

    py::class_<RenderedPrompt>(m, "RenderedPrompt")
        .def_readonly("text", &RenderedPrompt::text)
        .def_readonly("image_attached", &RenderedPrompt::image_attached)
        .def_readonly("placeholders_resolved", &RenderedPrompt::placeholders_resolved)
        .def_property_readonly("stage", [](const RenderedPrompt& p) {
            return to_string(p.stage);
        });

    py::class_<PromptCatalog>(m, "PromptCatalog")
        .def(py::init<const std::filesystem::path&>(), py::arg("dir"))
        .def_property_readonly("digest", &PromptCatalog::digest)
        .def("template_body",
             [](const PromptCatalog& c, const std::string& stage, const std::string& variant) {
                 return c.get(stage_from_string(stage), variant_from_string(variant)).body;
             },
             py::arg("stage"), py::arg("variant") = "original")
        .def("render",
             [](const PromptCatalog& c, const std::string& stage, const NewsItem& item,
                const std::optional<std::vector<std::string>>& titles,
                const std::optional<ParsedCoexistence>& relation,
                const std::optional<std::vector<ScoreEntry>>& scores,
                const std::optional<std::vector<std::string>>& entities,
                const std::string& variant, std::size_t evidence_cap) {
                 RenderInputs in;
                 in.item = &item;
                 if (titles) in.titles = &*titles;
                 if (relation) in.relation = &*relation;
                 if (scores) in.scores = &*scores;
                 if (entities) in.entities = &*entities;
                 return c.render(stage_from_string(stage), variant_from_string(variant), in,
                                 evidence_cap);
             },
             py::arg("stage"), py::arg("item"), py::arg("titles") = py::none(),
             py::arg("relation") = py::none(), py::arg("scores") = py::none(),
             py::arg("entities") = py::none(), py::arg("variant") = "original",
             py::arg("evidence_cap") = 20);

    py::class_<EvidenceStore>(m, "EvidenceStore")
        .def(py::init<std::filesystem::path>(), py::arg("path"))
        .def("load", &EvidenceStore::load, py::arg("item_id"))
        .def("put", &EvidenceStore::put, py::arg("bundle"));

    py::class_<TranscriptAudit>(m, "TranscriptAudit")
        .def_readonly("total_entries", &TranscriptAudit::total_entries)
        .def_readonly("distinct_hashes", &TranscriptAudit::distinct_hashes)
        .def_readonly("exact_duplicates", &TranscriptAudit::exact_duplicates)
        .def_readonly("divergent_duplicates", &TranscriptAudit::divergent_duplicates);

    m.def("load_dataset",
          [](const std::filesystem::path& path, const std::optional<std::string>& split) {
              std::optional<Split> filter;
              if (split) filter = split_from_string(*split);
              return load_dataset(path, filter);
          },
          py::arg("path"), py::arg("split") = py::none());

    m.def("write_dataset",
          [](const std::vector<NewsItem>& items, const std::filesystem::path& path) {
              write_dataset(items, path);
          },
          py::arg("items"), py::arg("path"));

    m.def("normalize_titles",
          [](const std::vector<std::string>& raw) { return normalize_titles(raw); },
          py::arg("titles"));
    m.def("normalize_entities",
          [](const std::vector<std::string>& raw) { return normalize_entities(raw); },
          py::arg("entities"));

    m.def("extract_json", &extract_json, py::arg("raw"));
    m.def("parse_verdict",
          [](const std::string& raw, const std::string& variant) {
              return parse_verdict(raw, variant_from_string(variant));
          },
          py::arg("raw"), py::arg("variant") = "original");
    m.def("parse_coexistence", &parse_coexistence, py::arg("raw"));
    m.def("parse_scores", &parse_scores, py::arg("raw"), py::arg("n_titles"));

    m.def("request_hash",
          [](const std::string& prompt_text, const std::string& model_name, double temperature,
             const std::optional<py::bytes>& image_bytes, const std::string& media_type) {
              ChatRequest req;
              req.prompt_text = prompt_text;
              req.model_name = model_name;
              req.temperature = temperature;
              if (image_bytes) {
                  req.image = ImagePayload{std::string(*image_bytes), media_type};
              }
              return request_hash(req);
          },
          py::arg("prompt_text"), py::arg("model_name"), py::arg("temperature") = 0.1,
          py::arg("image_bytes") = py::none(), py::arg("media_type") = "image/png");

    m.def("compute_metrics",
          [](const std::vector<std::pair<std::string, std::optional<std::string>>>& predictions,
             const std::map<std::string, std::string>& gold) {
              return compute_metrics(predictions_from_pairs(predictions), gold_from_dict(gold));
          },
          py::arg("predictions"), py::arg("gold"));

    m.def("error_propagation_analysis",
          [](const std::vector<PipelineResult>& results,
             const std::map<std::string, std::string>& gold, double threshold) {
              return error_propagation_analysis(results, gold_from_dict(gold), threshold);
          },
          py::arg("results"), py::arg("gold"), py::arg("threshold") = 6.0);

    // out_dir is optional rather than a defaulted path: an empty path would
    // round-trip through pathlib as "." and silently persist into the CWD.
    m.def("replay_batch",
          [](const std::filesystem::path& corpus_path, const std::filesystem::path& evidence,
             const std::filesystem::path& transcripts, const std::filesystem::path& prompts_dir,
             const std::string& mode, const std::string& toggles, const std::string& variant,
             const std::string& model_name, int workers,
             const std::optional<std::filesystem::path>& out_dir) {
              const auto corpus = load_dataset(corpus_path);
              const EvidenceStore store(evidence);
              const PromptCatalog catalog(prompts_dir);
              auto provider = std::make_shared<ReplayProvider>(transcripts);
              PipelineConfig cfg;
              cfg.mode = mode_from_string(mode);
              cfg.toggles = toggles_from_string(toggles);
              cfg.variant = variant_from_string(variant);
              cfg.model_name = model_name;
              cfg.workers = workers;
              cfg.validate_and_normalize();
              Pipeline pipeline(cfg, provider, &catalog);
              BatchOptions opts;
              opts.out_dir = out_dir.value_or(std::filesystem::path{});
              opts.workers = workers;
              opts.write_manifest = !opts.out_dir.empty();
              return run_batch(corpus, store, pipeline, opts).results;
          },
          py::arg("corpus"), py::arg("evidence"), py::arg("transcripts"),
          py::arg("prompts_dir"), py::arg("mode") = "cmie", py::arg("toggles") = "TTTT",
          py::arg("variant") = "original", py::arg("model_name") = "gpt-4o",
          py::arg("workers") = 4, py::arg("out_dir") = py::none(),
          py::call_guard<py::gil_scoped_release>());

    m.def("audit_transcripts", &audit_transcripts, py::arg("path"));
}
