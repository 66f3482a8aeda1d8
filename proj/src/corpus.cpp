#include "cmie/corpus.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cmie/digest.hpp"
#include "cmie/errors.hpp"

namespace cmie {

namespace {

using nlohmann::json;

std::string trim_collapse(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string require_string(const json& rec, const char* key, size_t line) {
    auto it = rec.find(key);
    if (it == rec.end()) {
        throw DataError("line " + std::to_string(line) + ": missing field '" + key + "'");
    }
    if (!it->is_string()) {
        throw DataError("line " + std::to_string(line) + ": field '" + key + "' is not a string");
    }
    return it->get<std::string>();
}

NewsItem item_from_record(const json& rec, size_t line, const std::filesystem::path& base_dir) {
    if (!rec.is_object()) {
        throw DataError("line " + std::to_string(line) + ": record is not an object");
    }
    NewsItem item;
    item.id = require_string(rec, "id", line);
    if (item.id.empty()) {
        throw DataError("line " + std::to_string(line) + ": field 'id' is empty");
    }
    item.image_ref = require_string(rec, "image", line);
    item.caption = require_string(rec, "caption", line);
    if (trim_collapse(item.caption).empty()) {
        throw DataError("line " + std::to_string(line) + ": field 'caption' is empty");
    }
    try {
        item.gold_label = label_from_string(require_string(rec, "label", line));
    } catch (const DataError& e) {
        throw DataError("line " + std::to_string(line) + ": field 'label': " + e.what());
    }
    if (auto it = rec.find("split"); it != rec.end()) {
        if (!it->is_string()) {
            throw DataError("line " + std::to_string(line) + ": field 'split' is not a string");
        }
        try {
            item.split = split_from_string(it->get<std::string>());
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line) + ": field 'split': " + e.what());
        }
    }
    // Resolve a relative image path against the dataset file's directory so
    // corpora stay relocatable. URIs and absolute paths pass through.
    if (!item.image_ref.empty() && item.image_ref.find("://") == std::string::npos) {
        std::filesystem::path p(item.image_ref);
        if (p.is_relative()) {
            item.image_ref = (base_dir / p).lexically_normal().string();
        }
    }
    return item;
}

json item_to_record(const NewsItem& item) {
    return json{{"id", item.id},
                {"image", item.image_ref},
                {"caption", item.caption},
                {"label", to_string(item.gold_label)},
                {"split", to_string(item.split)}};
}

bool blank(const std::string& s) {
    for (unsigned char c : s) {
        if (!std::isspace(c)) return false;
    }
    return true;
}

EvidenceBundle bundle_from_json(const std::string& item_id, const json& rec,
                                const std::string& where) {
    if (!rec.is_object()) {
        throw DataError(where + ": evidence record is not an object");
    }
    EvidenceBundle b;
    b.item_id = item_id;
    b.provenance = EvidenceBundle::Provenance::Cache;
    auto read_list = [&](const char* key) {
        std::vector<std::string> out;
        auto it = rec.find(key);
        if (it == rec.end()) return out;
        if (!it->is_array()) {
            throw DataError(where + ": key '" + key + "' is not an array");
        }
        for (const auto& v : *it) {
            if (!v.is_string()) {
                throw DataError(where + ": key '" + key + "' holds a non-string entry");
            }
            out.push_back(v.get<std::string>());
        }
        return out;
    };
    b.titles = normalize_titles(read_list("titles"));
    b.entities = normalize_entities(read_list("entities"));
    return b;
}

} // namespace

std::vector<NewsItem> load_dataset(const std::filesystem::path& path,
                                   std::optional<Split> split_filter) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open dataset file: " + path.string());
    }
    const auto base_dir = path.has_parent_path() ? path.parent_path()
                                                 : std::filesystem::path(".");

    std::vector<NewsItem> items;
    std::unordered_set<std::string> seen_ids;
    auto add = [&](NewsItem item, size_t line) {
        if (!seen_ids.insert(item.id).second) {
            throw DataError("line " + std::to_string(line) + ": duplicate id '" + item.id + "'");
        }
        if (!split_filter || item.split == *split_filter) {
            items.push_back(std::move(item));
        }
    };

    // Peek the first non-whitespace byte to pick the layout.
    char first = 0;
    while (in.get(first) && std::isspace(static_cast<unsigned char>(first))) {
    }
    if (!in) {
        std::cerr << "[cmie] warning: dataset file is empty: " << path.string() << "\n";
        return items;
    }
    in.seekg(0);

    if (first == '[') {
        json arr;
        try {
            arr = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError("dataset array parse error in " + path.string() + ": " + e.what());
        }
        size_t index = 1;
        for (const auto& rec : arr) {
            add(item_from_record(rec, index, base_dir), index);
            ++index;
        }
        return items;
    }

    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        add(item_from_record(rec, line_no, base_dir), line_no);
    }
    return items;
}

void write_dataset(std::span<const NewsItem> items, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write dataset file: " + path.string());
    }
    for (const auto& item : items) {
        out << item_to_record(item).dump() << "\n";
    }
    if (!out) {
        throw DataError("write failure on dataset file: " + path.string());
    }
}

std::vector<std::string> normalize_titles(std::span<const std::string> raw) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& s : raw) {
        std::string t = trim_collapse(s);
        if (t.empty()) continue;
        if (seen.insert(t).second) {
            out.push_back(std::move(t));
        }
    }
    return out;
}

std::vector<std::string> normalize_entities(std::span<const std::string> raw) {
    std::vector<std::string> out;
    for (const auto& s : raw) {
        std::string t = trim_collapse(s);
        if (!t.empty()) {
            out.push_back(std::move(t));
        }
    }
    return out;
}

EvidenceStore::EvidenceStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty()) {
        return; // empty store: every lookup comes back absent
    }
    if (std::filesystem::is_regular_file(path_)) {
        consolidated_ = true;
        std::ifstream in(path_, std::ios::binary);
        if (!in) {
            throw DataError("cannot open evidence store: " + path_.string());
        }
        json map;
        try {
            map = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError("evidence store parse error in " + path_.string() + ": " + e.what());
        }
        if (!map.is_object()) {
            throw DataError("consolidated evidence store must be a JSON object: " + path_.string());
        }
        for (auto it = map.begin(); it != map.end(); ++it) {
            consolidated_map_.emplace(it.key(),
                                      bundle_from_json(it.key(), it.value(), path_.string()));
        }
    } else if (!std::filesystem::is_directory(path_)) {
        throw DataError("evidence store path is neither file nor directory: " + path_.string());
    }
}

EvidenceBundle EvidenceStore::load(const std::string& item_id) const {
    if (path_.empty()) {
        return EvidenceBundle{item_id, {}, {}, EvidenceBundle::Provenance::Absent};
    }
    if (consolidated_) {
        auto it = consolidated_map_.find(item_id);
        if (it == consolidated_map_.end()) {
            return EvidenceBundle{item_id, {}, {}, EvidenceBundle::Provenance::Absent};
        }
        return it->second;
    }
    const auto file = path_ / (item_id + ".json");
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        return EvidenceBundle{item_id, {}, {}, EvidenceBundle::Provenance::Absent};
    }
    json rec;
    try {
        rec = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("evidence record parse error in " + file.string() + ": " + e.what());
    }
    return bundle_from_json(item_id, rec, file.string());
}

void EvidenceStore::put(const EvidenceBundle& bundle) {
    if (path_.empty()) {
        throw DataError("evidence write-through requires a store path");
    }
    if (consolidated_) {
        throw DataError("evidence write-through requires the per-item directory layout");
    }
    std::lock_guard<std::mutex> lock(write_mutex_);
    std::filesystem::create_directories(path_);
    const auto file = path_ / (bundle.item_id + ".json");
    const auto tmp = path_ / (bundle.item_id + ".json.tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write evidence record: " + tmp.string());
        }
        out << json{{"titles", bundle.titles}, {"entities", bundle.entities}}.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, file);
}

EvidenceBundle load_evidence(const std::string& item_id,
                             const std::filesystem::path& store_path) {
    EvidenceStore store(store_path);
    return store.load(item_id);
}

EntityClient::EntityClient(EntityApiConfig cfg, std::shared_ptr<HttpTransport> transport,
                           EvidenceStore* write_through)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), store_(write_through) {}

std::vector<std::string> EntityClient::fetch_entities(const std::string& image_ref,
                                                      const std::string& item_id) {
    std::ifstream img(image_ref, std::ios::binary);
    if (!img) {
        throw DataError("cannot read image for entity extraction: " + image_ref);
    }
    std::ostringstream bytes;
    bytes << img.rdbuf();

    // Vision web-detection request shape; credentials travel as a query key.
    const std::string encoded = base64_encode(bytes.str());

    json body = {{"requests",
                  {{{"image", {{"content", encoded}}},
                    {"features", {{{"type", "WEB_DETECTION"}, {"maxResults", cfg_.max_results}}}}}}}};

    std::string url = cfg_.endpoint;
    if (!cfg_.api_key_env.empty()) {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw AuthError("entity API credentials missing: set " + cfg_.api_key_env);
        }
        url += (url.find('?') == std::string::npos ? "?key=" : "&key=") + std::string(key);
    }

    stats_ = {};
    HttpResponse res;
    for (int attempt = 0;; ++attempt) {
        try {
            res = transport_->post_json(url, {}, body.dump());
        } catch (const TransportError&) {
            if (attempt + 1 >= cfg_.retry.max_attempts) throw;
            backoff_sleep(cfg_.retry, attempt);
            ++stats_.retries;
            continue;
        }
        if (res.status == 401 || res.status == 403) {
            throw AuthError("entity API rejected credentials (status " +
                            std::to_string(res.status) + ")");
        }
        if (res.status == 429 && attempt + 1 >= cfg_.retry.max_attempts) {
            throw QuotaError("entity API quota exhausted (429 after retries)");
        }
        if (retriable_status(res.status)) {
            if (attempt + 1 >= cfg_.retry.max_attempts) {
                throw TransportError("entity API failed with status " +
                                     std::to_string(res.status) + " after retries");
            }
            backoff_sleep(cfg_.retry, attempt);
            ++stats_.retries;
            continue;
        }
        if (res.status != 200) {
            throw TransportError("entity API failed with status " + std::to_string(res.status));
        }
        break;
    }

    json parsed;
    try {
        parsed = json::parse(res.body);
    } catch (const json::exception& e) {
        throw TransportError(std::string("entity API returned invalid JSON: ") + e.what());
    }
    std::vector<std::string> entities;
    if (parsed.contains("responses") && parsed["responses"].is_array() &&
        !parsed["responses"].empty()) {
        const auto& wd = parsed["responses"][0];
        if (wd.contains("webDetection") && wd["webDetection"].contains("webEntities")) {
            for (const auto& e : wd["webDetection"]["webEntities"]) {
                if (e.contains("description") && e["description"].is_string()) {
                    entities.push_back(e["description"].get<std::string>());
                }
            }
        }
    }
    entities = normalize_entities(entities);

    if (store_ != nullptr && !item_id.empty()) {
        EvidenceBundle existing = store_->load(item_id);
        existing.item_id = item_id;
        existing.entities = entities;
        existing.provenance = EvidenceBundle::Provenance::Live;
        store_->put(existing);
    }
    return entities;
}

EvidenceBundle EntityClient::fetch_bundle(const std::string& item_id,
                                          const std::string& image_ref) {
    EvidenceBundle b;
    if (store_ != nullptr) {
        b = store_->load(item_id);
    }
    b.item_id = item_id;
    b.entities = fetch_entities(image_ref, item_id);
    b.provenance = EvidenceBundle::Provenance::Live;
    return b;
}

} // namespace cmie
