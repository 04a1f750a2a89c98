#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsg/common/io.hpp"

namespace tsg::cli {

// Parsed command plus everything needed to reproduce it.
struct Context {
    std::uint64_t seed = 0;
    int workers = 1;
    std::vector<std::string> argv;
    // Canonical command path, e.g. {"toy", "train"}.
    std::vector<std::string> command;
    CLI::App* app = nullptr;

    // Writes <stem>.provenance.json (or provenance.json inside a directory).
    void write_provenance(const std::filesystem::path& output, const json& extra = json::object()) const;
    json resolved_config() const;
};

using Action = std::function<void(Context&)>;

// Registers `fn` to run when `sub` is the selected command.
void on_run(CLI::App* sub, Context& ctx, Action* slot, Action fn);

// JSON config files: a flat object of option names, optionally nested by
// subcommand ({"toy": {"train": {"steps": 100}}}).
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override;
    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override;
};

void register_toy(CLI::App& app, Context& ctx, Action* slot);
void register_extract(CLI::App& app, Context& ctx, Action* slot);
void register_train(CLI::App& app, Context& ctx, Action* slot);
void register_eval(CLI::App& app, Context& ctx, Action* slot);
void register_crossval(CLI::App& app, Context& ctx, Action* slot);
void register_bench(CLI::App& app, Context& ctx, Action* slot);
void register_build_unbiased(CLI::App& app, Context& ctx, Action* slot);
void register_gradcam(CLI::App& app, Context& ctx, Action* slot);

// A manifest file, or a directory holding features.jsonl.
std::filesystem::path manifest_path(const std::filesystem::path& p);

// Progress lines go to stderr; stdout carries machine-readable results.
void progress(const std::string& line);

}  // namespace tsg::cli
