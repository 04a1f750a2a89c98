#include "tsg/data/manifest.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "tsg/common/error.hpp"
#include "tsg/common/rng.hpp"

namespace fs = std::filesystem;

namespace tsg::data {

const char* to_string(Label l) noexcept { return l == Label::real ? "real" : "synthetic"; }
const char* to_string(Split s) noexcept { return s == Split::train ? "train" : "val"; }

Label parse_label(const std::string& s) {
    if (s == "real") return Label::real;
    if (s == "synthetic") return Label::synthetic;
    throw DataError("unknown label '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    throw DataError("unknown split '" + s + "'");
}

std::size_t& Tally::at(Label l, Split s) {
    if (l == Label::real) return s == Split::train ? real_train : real_val;
    return s == Split::train ? synthetic_train : synthetic_val;
}

std::size_t Tally::at(Label l, Split s) const { return const_cast<Tally&>(*this).at(l, s); }

DatasetManifest::DatasetManifest(std::vector<ManifestEntry> entries, json params, std::string root)
    : entries_(std::move(entries)), params_(std::move(params)), root_(std::move(root)) {
    std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    for (std::size_t i = 1; i < entries_.size(); ++i)
        if (entries_[i].path == entries_[i - 1].path) throw DataError("duplicate manifest path: " + entries_[i].path);
}

Tally DatasetManifest::tally() const {
    Tally t;
    for (const auto& e : entries_) ++t.at(e.label, e.split);
    return t;
}

std::vector<ManifestEntry> DatasetManifest::select(std::optional<Label> label, std::optional<Split> split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries_)
        if ((!label || e.label == *label) && (!split || e.split == *split)) out.push_back(e);
    return out;
}

fs::path DatasetManifest::resolve(const ManifestEntry& e) const {
    fs::path p(e.path);
    return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
}

namespace {

json counts_json(const Tally& t) {
    return {{"real", {{"train", t.real_train}, {"val", t.real_val}}},
            {"synthetic", {{"train", t.synthetic_train}, {"val", t.synthetic_val}}}};
}

}  // namespace

json DatasetManifest::provenance() const {
    return {{"schema", "tsgmanifest/1"},
            {"root", root_},
            {"params", params_},
            {"counts", counts_json(tally())},
            {"entries", entries_.size()},
            {"sources", sources_},
            {"digest", digest()},
            {"version", version_tag()}};
}

std::string DatasetManifest::digest() const { return hex_digest(manifest_jsonl(*this)); }

json to_json(const ManifestEntry& e) {
    json j = {{"path", e.path}, {"label", to_string(e.label)}, {"generator", e.generator}, {"split", to_string(e.split)}};
    j["jpeg_quality"] = e.jpeg_quality ? json(*e.jpeg_quality) : json(nullptr);
    return j;
}

ManifestEntry entry_from_json(const json& j) {
    try {
        ManifestEntry e;
        e.path = j.at("path").get<std::string>();
        e.label = parse_label(j.at("label").get<std::string>());
        e.generator = j.at("generator").get<std::string>();
        e.split = parse_split(j.at("split").get<std::string>());
        if (j.contains("jpeg_quality") && !j.at("jpeg_quality").is_null()) {
            e.jpeg_quality = j.at("jpeg_quality").get<int>();
            if (*e.jpeg_quality < 1 || *e.jpeg_quality > 100) throw DataError("jpeg_quality outside [1, 100]");
        }
        if (e.path.empty()) throw DataError("empty path");
        return e;
    } catch (const json::exception& ex) {
        throw DataError(std::string("malformed manifest entry: ") + ex.what());
    }
}

std::string manifest_jsonl(const DatasetManifest& m) {
    std::string out;
    for (const auto& e : m.entries()) out += to_json(e).dump() + "\n";
    return out;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    write_file_atomic(path, manifest_jsonl(m));
    json meta = m.provenance();
    meta["created_utc"] = utc_timestamp();
    write_json_file(fs::path(path.string() + ".meta.json"), meta);
}

DatasetManifest load_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("manifest not found: " + path.string());
    std::istringstream in(read_text_file(path));
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            entries.push_back(entry_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    json params = json::object();
    std::string root;
    std::vector<std::string> sources;
    const fs::path meta_path(path.string() + ".meta.json");
    std::optional<json> meta;
    if (fs::exists(meta_path)) {
        meta = read_json_file(meta_path);
        params = meta->value("params", json::object());
        root = meta->value("root", "");
        sources = meta->value("sources", std::vector<std::string>{});
    }
    DatasetManifest m(std::move(entries), params, root);
    m.set_sources(std::move(sources));
    m.set_base_dir(path.parent_path());
    if (meta && meta->contains("counts") && meta->at("counts") != counts_json(m.tally()))
        throw DataError("manifest provenance counts disagree with entries in " + path.string());
    return m;
}

DatasetManifest permute_labels(const DatasetManifest& m, Split split, std::uint64_t seed) {
    std::vector<ManifestEntry> entries = m.entries();
    std::vector<Label> labels;
    for (const auto& e : entries)
        if (e.split == split) labels.push_back(e.label);
    Rng rng = make_rng(seed, "permute-labels");
    std::shuffle(labels.begin(), labels.end(), rng);
    auto next = labels.begin();
    for (auto& e : entries)
        if (e.split == split) e.label = *next++;
    json params = m.params();
    params["permuted_labels"] = {{"split", to_string(split)}, {"seed", seed}};
    DatasetManifest out(std::move(entries), std::move(params), m.root());
    out.set_base_dir(m.base_dir());
    out.set_sources(m.sources());
    return out;
}

DatasetManifest mix_manifests(const std::vector<DatasetManifest>& parts) {
    if (parts.size() < 2) throw UsageError("mixing needs at least two manifests");
    std::vector<ManifestEntry> all;
    std::set<std::string> seen;
    std::vector<std::string> sources;
    json params = json::array();
    for (const DatasetManifest& m : parts) {
        for (ManifestEntry e : m.entries()) {
            e.path = m.resolve(e).string();
            if (!seen.insert(e.path).second) throw DataError("path collision while mixing manifests: " + e.path);
            all.push_back(std::move(e));
        }
        sources.push_back(m.root().empty() ? m.digest() : m.root());
        params.push_back({{"root", m.root()}, {"digest", m.digest()}, {"entries", m.size()}});
    }
    DatasetManifest out(std::move(all), {{"mixed", params}}, "");
    out.set_sources(std::move(sources));
    return out;
}

bool is_jpeg_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".jpg" || ext == ".jpeg";
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return is_jpeg_file(p) || ext == ".png" || ext == ".bmp" || ext == ".webp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& de : fs::directory_iterator(dir))
        if (de.is_regular_file() && is_image_file(de.path())) out.push_back(de.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace tsg::data
