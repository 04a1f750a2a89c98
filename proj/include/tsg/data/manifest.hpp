#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsg/common/io.hpp"

namespace tsg::data {

enum class Label { real, synthetic };
enum class Split { train, val };

const char* to_string(Label l) noexcept;
const char* to_string(Split s) noexcept;
Label parse_label(const std::string& s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string path;
    Label label = Label::real;
    std::string generator;
    Split split = Split::train;
    std::optional<int> jpeg_quality;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Tally {
    std::size_t real_train = 0, real_val = 0, synthetic_train = 0, synthetic_val = 0;

    std::size_t& at(Label l, Split s);
    std::size_t at(Label l, Split s) const;
    std::size_t total() const { return real_train + real_val + synthetic_train + synthetic_val; }
    friend bool operator==(const Tally&, const Tally&) = default;
};

// Labeled image index. Entries are kept sorted by path and paths are unique.
// Relative paths resolve against base_dir (the manifest file's directory when
// loaded from disk).
class DatasetManifest {
public:
    DatasetManifest() = default;
    // Sorts entries; throws DataError on duplicate paths.
    explicit DatasetManifest(std::vector<ManifestEntry> entries, json params = json::object(), std::string root = {});

    const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    Tally tally() const;
    std::vector<ManifestEntry> select(std::optional<Label> label, std::optional<Split> split) const;

    std::filesystem::path resolve(const ManifestEntry& e) const;
    const std::filesystem::path& base_dir() const noexcept { return base_dir_; }
    void set_base_dir(std::filesystem::path p) { base_dir_ = std::move(p); }

    // Provenance: {root, params, counts, sources, created_utc, version}.
    json provenance() const;
    const json& params() const noexcept { return params_; }
    const std::string& root() const noexcept { return root_; }
    const std::vector<std::string>& sources() const noexcept { return sources_; }
    void set_sources(std::vector<std::string> s) { sources_ = std::move(s); }

    // Stable digest of the entry list (used to tie checkpoints to their training data).
    std::string digest() const;

private:
    std::vector<ManifestEntry> entries_;
    json params_ = json::object();
    std::string root_;
    std::vector<std::string> sources_;
    std::filesystem::path base_dir_;
};

json to_json(const ManifestEntry& e);
ManifestEntry entry_from_json(const json& j);

// JSON lines, one entry per line, plus provenance in `<path>.meta.json`.
std::string manifest_jsonl(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
// Validates provenance counts against the entries when the sidecar exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Copy of `m` whose labels within `split` are shuffled among themselves; the
// class counts are unchanged. Used for the label-permutation control.
DatasetManifest permute_labels(const DatasetManifest& m, Split split, std::uint64_t seed);

// Union of at least two manifests; throws DataError on a path collision.
DatasetManifest mix_manifests(const std::vector<DatasetManifest>& parts);

bool is_image_file(const std::filesystem::path& p);
bool is_jpeg_file(const std::filesystem::path& p);
// Image files directly inside `dir`, sorted.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace tsg::data
