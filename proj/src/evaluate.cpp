#include "cmie/evaluate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cmie/errors.hpp"

namespace cmie {

namespace {

using nlohmann::json;

double sdiv(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

// Left-aligned fixed-width text table; first row is the header.
std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return {};
    std::vector<std::size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (std::size_t i = 0; i < row.size(); ++i) {
            widths[i] = std::max(widths[i], row[i].size());
        }
    }
    std::string out;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out += row[i];
            if (i + 1 < row.size()) {
                out.append(widths[i] - row[i].size() + 2, ' ');
            }
        }
        out.push_back('\n');
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

json metrics_to_json(const MetricsSummary& m) {
    json j;
    j["accuracy"] = m.accuracy;
    j["abstention_rate"] = m.abstention_rate;
    j["counts"] = {{"tp", m.counts.tp},
                   {"fp", m.counts.fp},
                   {"fn", m.counts.fn},
                   {"tn", m.counts.tn},
                   {"abstentions", m.counts.abstentions}};
    j["real"] = {{"precision", m.real.precision},
                 {"recall", m.real.recall},
                 {"f1", m.real.f1},
                 {"support", m.real.support}};
    j["fake"] = {{"precision", m.fake.precision},
                 {"recall", m.fake.recall},
                 {"f1", m.fake.f1},
                 {"support", m.fake.support}};
    return j;
}

MetricsSummary metrics_from_json(const json& j) {
    MetricsSummary m;
    m.accuracy = j.at("accuracy").get<double>();
    m.abstention_rate = j.at("abstention_rate").get<double>();
    const auto& c = j.at("counts");
    m.counts.tp = c.at("tp").get<std::uint64_t>();
    m.counts.fp = c.at("fp").get<std::uint64_t>();
    m.counts.fn = c.at("fn").get<std::uint64_t>();
    m.counts.tn = c.at("tn").get<std::uint64_t>();
    m.counts.abstentions = c.at("abstentions").get<std::uint64_t>();
    const auto& r = j.at("real");
    m.real = {Label::Real, r.at("precision").get<double>(), r.at("recall").get<double>(),
              r.at("f1").get<double>(), r.at("support").get<std::uint64_t>()};
    const auto& f = j.at("fake");
    m.fake = {Label::Fake, f.at("precision").get<double>(), f.at("recall").get<double>(),
              f.at("f1").get<double>(), f.at("support").get<std::uint64_t>()};
    return m;
}

std::vector<std::string> metrics_row_cells(const MetricsSummary& m) {
    return {fmt2(m.accuracy),       fmt2(m.real.precision), fmt2(m.real.recall),
            fmt2(m.real.f1),        fmt2(m.fake.precision), fmt2(m.fake.recall),
            fmt2(m.fake.f1),        fmt2(m.abstention_rate)};
}

const char* onoff(bool b) { return b ? "on" : "off"; }

} // namespace

std::map<std::string, Label> gold_map(std::span<const NewsItem> corpus) {
    std::map<std::string, Label> gold;
    for (const auto& item : corpus) {
        gold[item.id] = item.gold_label;
    }
    return gold;
}

std::vector<ItemPrediction> predictions_from_results(std::span<const PipelineResult> results) {
    std::vector<ItemPrediction> preds;
    preds.reserve(results.size());
    for (const auto& r : results) {
        ItemPrediction p;
        p.item_id = r.item_id;
        if (!r.abstained && r.verdict) {
            p.predicted = r.verdict->semantic_label;
        }
        preds.push_back(std::move(p));
    }
    return preds;
}

MetricsSummary metrics_from_counts(const ConfusionCounts& counts) {
    MetricsSummary m;
    m.counts = counts;
    const auto tp = static_cast<double>(counts.tp);
    const auto fp = static_cast<double>(counts.fp);
    const auto fn = static_cast<double>(counts.fn);
    const auto tn = static_cast<double>(counts.tn);

    m.fake.cls = Label::Fake;
    m.fake.precision = sdiv(tp, tp + fp);
    m.fake.recall = sdiv(tp, tp + fn);
    m.fake.f1 = sdiv(2.0 * m.fake.precision * m.fake.recall,
                     m.fake.precision + m.fake.recall);
    m.fake.support = counts.tp + counts.fn;

    // One-vs-rest with Real as positive mirrors the cells.
    m.real.cls = Label::Real;
    m.real.precision = sdiv(tn, tn + fn);
    m.real.recall = sdiv(tn, tn + fp);
    m.real.f1 = sdiv(2.0 * m.real.precision * m.real.recall,
                     m.real.precision + m.real.recall);
    m.real.support = counts.tn + counts.fp;

    m.accuracy = sdiv(tp + tn, tp + tn + fp + fn);
    m.abstention_rate = sdiv(static_cast<double>(counts.abstentions),
                             static_cast<double>(counts.total()));
    return m;
}

MetricsSummary compute_metrics(std::span<const ItemPrediction> predictions,
                               const std::map<std::string, Label>& gold) {
    ConfusionCounts c;
    std::set<std::string> seen;
    for (const auto& p : predictions) {
        if (!seen.insert(p.item_id).second) {
            throw DataError("duplicate prediction for item " + p.item_id);
        }
        auto it = gold.find(p.item_id);
        if (it == gold.end()) {
            throw DataError("prediction references unknown item " + p.item_id);
        }
        if (!p.predicted) {
            ++c.abstentions;
            continue;
        }
        const bool pred_fake = *p.predicted == Label::Fake;
        const bool gold_fake = it->second == Label::Fake;
        if (pred_fake && gold_fake) ++c.tp;
        else if (pred_fake && !gold_fake) ++c.fp;
        else if (!pred_fake && gold_fake) ++c.fn;
        else ++c.tn;
    }
    return metrics_from_counts(c);
}

std::vector<Toggles> default_ablation_rows() {
    return {
        {false, false, false, false},
        {true, false, false, false},
        {true, true, false, false},
        {true, true, true, false},
        {true, true, true, true},
    };
}

std::vector<AblationRow> run_ablation(std::span<const NewsItem> corpus,
                                      const EvidenceStore& store,
                                      const PipelineConfig& base,
                                      std::shared_ptr<Provider> provider,
                                      const PromptCatalog& catalog,
                                      std::span<const Toggles> rows,
                                      bool share_cache) {
    const auto gold = gold_map(corpus);
    StageCache shared;
    std::vector<AblationRow> table;
    for (const auto& row : rows) {
        const PipelineConfig cfg = config_for_toggles(base, row);
        Pipeline pipeline(cfg, provider, &catalog, share_cache ? &shared : nullptr);
        const std::uint64_t hits_before = shared.hits();
        BatchOptions opts;
        opts.workers = cfg.workers;
        const BatchSummary summary = run_batch(corpus, store, pipeline, opts);
        AblationRow out;
        out.toggles = cfg.toggles;
        out.mode = cfg.mode;
        out.metrics = compute_metrics(predictions_from_results(summary.results), gold);
        out.model_calls = pipeline.model_calls();
        out.cache_hits = share_cache ? shared.hits() - hits_before : 0;
        table.push_back(std::move(out));
    }
    return table;
}

PropagationReport error_propagation_analysis(std::span<const PipelineResult> results,
                                             const std::map<std::string, Label>& gold,
                                             double threshold) {
    PropagationReport report;
    std::vector<ItemPrediction> affected_preds;
    std::map<std::string, Label> affected_gold;
    for (const auto& r : results) {
        if (!r.relation) continue; // never entered stage 1
        ++report.with_relation;
        auto it = gold.find(r.item_id);
        if (it == gold.end()) {
            throw DataError("result references unknown item " + r.item_id);
        }
        const bool strong = r.relation->score >= threshold;
        const bool gold_fake = it->second == Label::Fake;
        const bool affected = (gold_fake && strong) || (!gold_fake && !strong);
        if (!affected) continue;
        if (gold_fake) ++report.affected_fake;
        else ++report.affected_real;
        affected_gold[r.item_id] = it->second;
        ItemPrediction p;
        p.item_id = r.item_id;
        if (!r.abstained && r.verdict) p.predicted = r.verdict->semantic_label;
        affected_preds.push_back(std::move(p));
    }
    if (report.with_relation == 0) {
        throw DataError("no results carry a coexistence relation; nothing to analyze");
    }
    const std::uint64_t affected = report.affected_fake + report.affected_real;
    if (affected > 0) {
        report.fake_share = static_cast<double>(report.affected_fake) /
                            static_cast<double>(affected);
        report.affected_metrics = compute_metrics(affected_preds, affected_gold);
    }
    return report;
}

std::map<Variant, MetricsSummary> prompt_sensitivity_run(std::span<const NewsItem> corpus,
                                                         const EvidenceStore& store,
                                                         const PipelineConfig& base,
                                                         std::shared_ptr<Provider> provider,
                                                         const PromptCatalog& catalog) {
    const auto gold = gold_map(corpus);
    std::map<Variant, MetricsSummary> out;
    for (Variant v : {Variant::Original, Variant::TaskRewrite, Variant::LabelReversal}) {
        PipelineConfig cfg = base;
        cfg.mode = Mode::Cmie;
        cfg.variant = v;
        cfg.validate_and_normalize();
        Pipeline pipeline(cfg, provider, &catalog);
        BatchOptions opts;
        opts.workers = cfg.workers;
        const BatchSummary summary = run_batch(corpus, store, pipeline, opts);
        out[v] = compute_metrics(predictions_from_results(summary.results), gold);
    }
    return out;
}

std::vector<ExplanationScoreStats> load_explanation_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read explanation score file " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("empty explanation score file " + path.string());
    }
    std::string header;
    for (char c : line) {
        if (!std::isspace(static_cast<unsigned char>(c))) {
            header.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (header != "method,score") {
        throw DataError(path.string() + ": expected a method,score header, got '" + line + "'");
    }
    std::map<std::string, std::vector<double>> by_method;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing comma");
        }
        const std::string method = line.substr(0, comma);
        const std::string score_text = line.substr(comma + 1);
        double score = 0.0;
        try {
            std::size_t used = 0;
            score = std::stod(score_text, &used);
            while (used < score_text.size() &&
                   std::isspace(static_cast<unsigned char>(score_text[used]))) {
                ++used;
            }
            if (used != score_text.size()) throw std::invalid_argument(score_text);
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": score '" + score_text + "' is not numeric");
        }
        if (score < 1.0 || score > 5.0) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": score " + score_text + " outside the 1-5 scale");
        }
        if (method.empty()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty method");
        }
        by_method[method].push_back(score);
    }
    std::vector<ExplanationScoreStats> out;
    for (const auto& [method, scores] : by_method) {
        ExplanationScoreStats s;
        s.method = method;
        s.count = scores.size();
        double sum = 0.0;
        for (double v : scores) sum += v;
        s.mean = sum / static_cast<double>(scores.size());
        if (scores.size() > 1) {
            double ss = 0.0;
            for (double v : scores) ss += (v - s.mean) * (v - s.mean);
            s.stddev = std::sqrt(ss / static_cast<double>(scores.size() - 1));
        }
        out.push_back(std::move(s));
    }
    return out;
}

ReportFormat report_format_from_string(const std::string& s) {
    std::string v;
    for (char c : s) {
        if (c != '-' && c != '_') {
            v.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (v == "tabletext" || v == "table" || v == "text") return ReportFormat::TableText;
    if (v == "delimited" || v == "csv") return ReportFormat::Delimited;
    if (v == "structured" || v == "json") return ReportFormat::Structured;
    throw ConfigError("unknown report format '" + s + "'");
}

namespace {

std::string format_table_text(const AnalysisBundle& b) {
    std::string out;
    if (!b.methods.empty()) {
        out += "== Method comparison ==\n";
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"Method", "Accuracy", "Real Precision", "Real Recall", "Real F1",
                        "Fake Precision", "Fake Recall", "Fake F1", "Abstention Rate"});
        for (const auto& m : b.methods) {
            std::vector<std::string> row{m.name};
            for (auto& cell : metrics_row_cells(m.metrics)) row.push_back(cell);
            rows.push_back(std::move(row));
        }
        out += render_table(rows);
    }
    if (!b.ablation.empty()) {
        if (!out.empty()) out.push_back('\n');
        out += "== Ablation ==\n";
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"ImageTitle", "CRG", "AS", "Entity", "All", "Real", "Fake"});
        for (const auto& r : b.ablation) {
            rows.push_back({onoff(r.toggles.image_title), onoff(r.toggles.crg),
                            onoff(r.toggles.as), onoff(r.toggles.entity),
                            fmt2(r.metrics.accuracy), fmt2(r.metrics.real.precision),
                            fmt2(r.metrics.fake.precision)});
        }
        out += render_table(rows);
    }
    if (b.propagation) {
        if (!out.empty()) out.push_back('\n');
        const auto& p = *b.propagation;
        out += "== Error propagation ==\n";
        out += "Affected misinformation (strong coexistence): " +
               std::to_string(p.affected_fake) + "\n";
        out += "Affected real (weak coexistence): " + std::to_string(p.affected_real) + "\n";
        out += "Misinformation share: " + (p.fake_share ? fmt2(*p.fake_share) : "n/a") + "\n";
        if (p.affected_metrics) {
            const auto& m = *p.affected_metrics;
            out += "Affected-subset detection (fake positive): Precision " +
                   fmt2(m.fake.precision) + "  Recall " + fmt2(m.fake.recall) + "  F1 " +
                   fmt2(m.fake.f1) + "\n";
        }
    }
    if (!b.sensitivity.empty()) {
        if (!out.empty()) out.push_back('\n');
        out += "== Prompt sensitivity ==\n";
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"Variant", "Accuracy", "Abstention Rate"});
        for (const auto& [variant, m] : b.sensitivity) {
            rows.push_back({to_string(variant), fmt2(m.accuracy), fmt2(m.abstention_rate)});
        }
        out += render_table(rows);
    }
    if (!b.explanation_scores.empty()) {
        if (!out.empty()) out.push_back('\n');
        out += "== Explanation quality (human 1-5) ==\n";
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"Method", "Count", "Mean", "Stddev"});
        for (const auto& s : b.explanation_scores) {
            rows.push_back({s.method, std::to_string(s.count), fmt2(s.mean), fmt2(s.stddev)});
        }
        out += render_table(rows);
    }
    return out;
}

std::string format_delimited(const AnalysisBundle& b) {
    std::string out;
    if (!b.methods.empty()) {
        out += "# methods\n";
        out += "method,accuracy,real_precision,real_recall,real_f1,"
               "fake_precision,fake_recall,fake_f1,abstention_rate\n";
        for (const auto& m : b.methods) {
            out += csv_escape(m.name);
            for (auto& cell : metrics_row_cells(m.metrics)) out += "," + cell;
            out.push_back('\n');
        }
    }
    if (!b.ablation.empty()) {
        out += "# ablation\n";
        out += "image_title,crg,as,entity,all,real,fake,model_calls,cache_hits\n";
        for (const auto& r : b.ablation) {
            out += std::string(onoff(r.toggles.image_title)) + "," + onoff(r.toggles.crg) +
                   "," + onoff(r.toggles.as) + "," + onoff(r.toggles.entity) + "," +
                   fmt2(r.metrics.accuracy) + "," + fmt2(r.metrics.real.precision) + "," +
                   fmt2(r.metrics.fake.precision) + "," + std::to_string(r.model_calls) +
                   "," + std::to_string(r.cache_hits) + "\n";
        }
    }
    if (b.propagation) {
        const auto& p = *b.propagation;
        out += "# propagation\n";
        out += "affected_fake,affected_real,fake_share,precision,recall,f1\n";
        out += std::to_string(p.affected_fake) + "," + std::to_string(p.affected_real) + ",";
        out += p.fake_share ? fmt2(*p.fake_share) : "";
        if (p.affected_metrics) {
            out += "," + fmt2(p.affected_metrics->fake.precision) + "," +
                   fmt2(p.affected_metrics->fake.recall) + "," +
                   fmt2(p.affected_metrics->fake.f1);
        } else {
            out += ",,,";
        }
        out.push_back('\n');
    }
    if (!b.sensitivity.empty()) {
        out += "# sensitivity\n";
        out += "variant,accuracy,abstention_rate\n";
        for (const auto& [variant, m] : b.sensitivity) {
            out += to_string(variant) + "," + fmt2(m.accuracy) + "," +
                   fmt2(m.abstention_rate) + "\n";
        }
    }
    if (!b.explanation_scores.empty()) {
        out += "# explanation_scores\n";
        out += "method,count,mean,stddev\n";
        for (const auto& s : b.explanation_scores) {
            out += csv_escape(s.method) + "," + std::to_string(s.count) + "," + fmt2(s.mean) +
                   "," + fmt2(s.stddev) + "\n";
        }
    }
    return out;
}

std::string format_structured(const AnalysisBundle& b) {
    json j;
    json methods = json::array();
    for (const auto& m : b.methods) {
        methods.push_back({{"name", m.name}, {"metrics", metrics_to_json(m.metrics)}});
    }
    j["methods"] = methods;
    json ablation = json::array();
    for (const auto& r : b.ablation) {
        ablation.push_back({{"toggles", to_string(r.toggles)},
                            {"mode", to_string(r.mode)},
                            {"metrics", metrics_to_json(r.metrics)},
                            {"model_calls", r.model_calls},
                            {"cache_hits", r.cache_hits}});
    }
    j["ablation"] = ablation;
    if (b.propagation) {
        const auto& p = *b.propagation;
        json pj;
        pj["affected_fake"] = p.affected_fake;
        pj["affected_real"] = p.affected_real;
        pj["with_relation"] = p.with_relation;
        if (p.fake_share) pj["fake_share"] = *p.fake_share;
        if (p.affected_metrics) pj["affected_metrics"] = metrics_to_json(*p.affected_metrics);
        j["propagation"] = pj;
    }
    json sens;
    for (const auto& [variant, m] : b.sensitivity) {
        sens[to_string(variant)] = metrics_to_json(m);
    }
    j["sensitivity"] = sens.is_null() ? json::object() : sens;
    json scores = json::array();
    for (const auto& s : b.explanation_scores) {
        scores.push_back({{"method", s.method},
                          {"count", s.count},
                          {"mean", s.mean},
                          {"stddev", s.stddev}});
    }
    j["explanation_scores"] = scores;
    return j.dump(2) + "\n";
}

} // namespace

std::string format_report(const AnalysisBundle& bundle, ReportFormat format) {
    switch (format) {
    case ReportFormat::TableText: return format_table_text(bundle);
    case ReportFormat::Delimited: return format_delimited(bundle);
    default: return format_structured(bundle);
    }
}

void emit_report(const AnalysisBundle& bundle, const std::filesystem::path& path,
                 ReportFormat format) {
    write_file(path, format_report(bundle, format));
}

AnalysisBundle bundle_from_structured(const std::string& text) {
    const json j = json::parse(text);
    AnalysisBundle b;
    for (const auto& m : j.at("methods")) {
        b.methods.push_back({m.at("name").get<std::string>(),
                             metrics_from_json(m.at("metrics"))});
    }
    for (const auto& r : j.at("ablation")) {
        AblationRow row;
        row.toggles = toggles_from_string(r.at("toggles").get<std::string>());
        row.mode = mode_from_string(r.at("mode").get<std::string>());
        row.metrics = metrics_from_json(r.at("metrics"));
        row.model_calls = r.at("model_calls").get<std::uint64_t>();
        row.cache_hits = r.at("cache_hits").get<std::uint64_t>();
        b.ablation.push_back(std::move(row));
    }
    if (j.contains("propagation")) {
        PropagationReport p;
        const auto& pj = j["propagation"];
        p.affected_fake = pj.at("affected_fake").get<std::uint64_t>();
        p.affected_real = pj.at("affected_real").get<std::uint64_t>();
        p.with_relation = pj.at("with_relation").get<std::uint64_t>();
        if (pj.contains("fake_share")) p.fake_share = pj["fake_share"].get<double>();
        if (pj.contains("affected_metrics")) {
            p.affected_metrics = metrics_from_json(pj["affected_metrics"]);
        }
        b.propagation = std::move(p);
    }
    for (const auto& [key, value] : j.at("sensitivity").items()) {
        b.sensitivity[variant_from_string(key)] = metrics_from_json(value);
    }
    for (const auto& s : j.at("explanation_scores")) {
        b.explanation_scores.push_back({s.at("method").get<std::string>(),
                                        s.at("count").get<std::uint64_t>(),
                                        s.at("mean").get<double>(),
                                        s.at("stddev").get<double>()});
    }
    return b;
}

} // namespace cmie
