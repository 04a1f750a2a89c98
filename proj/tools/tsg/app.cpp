#include "app.hpp"

#include <iostream>

#include "tsg/common/error.hpp"

namespace fs = std::filesystem;

namespace tsg::cli {

namespace {

json option_value(const CLI::Option* opt) {
    std::vector<std::string> vals = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
    if (vals.empty()) {
        const std::string d = opt->get_default_str();
        if (d.empty()) return nullptr;
        vals = {d};
    }
    if (opt->get_expected_max() > 1 || vals.size() > 1) return vals;
    return vals.front();
}

json app_options(const CLI::App* app) {
    json out = json::object();
    for (const CLI::Option* opt : app->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config") continue;
        if (opt->get_configurable() == false) continue;
        json v = option_value(opt);
        if (!v.is_null()) out[name] = std::move(v);
    }
    return out;
}

void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
        if (value.is_object()) {
            auto p = parents;
            p.push_back(key);
            flatten(value, p, out);
            continue;
        }
        CLI::ConfigItem item;
        item.parents = parents;
        item.name = key;
        auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_array())
            for (const json& v : value) item.inputs.push_back(scalar(v));
        else
            item.inputs.push_back(scalar(value));
        out.push_back(std::move(item));
    }
}

}  // namespace

std::string JsonConfig::to_config(const CLI::App* app, bool, bool, std::string) const {
    return app_options(app).dump(2);
}

std::vector<CLI::ConfigItem> JsonConfig::from_config(std::istream& in) const {
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("config file must hold a JSON object");
    // Provenance files keep the options under "config".
    if (j.contains("config") && j.contains("schema") && j["config"].is_object()) j = j["config"];
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
}

json Context::resolved_config() const {
    json cfg = app_options(app);
    const CLI::App* node = app;
    json* slot = &cfg;
    for (const std::string& name : command) {
        node = node->get_subcommand(name);
        (*slot)[name] = app_options(node);
        slot = &(*slot)[name];
    }
    return cfg;
}

void Context::write_provenance(const fs::path& output, const json& extra) const {
    fs::path target;
    if (fs::is_directory(output))
        target = output / "provenance.json";
    else
        target = fs::path(output.string() + ".provenance.json");
    json j = {{"schema", "tsgprov/1"},
              {"command", command},
              {"argv", argv},
              {"config", resolved_config()},
              {"seed", seed},
              {"version", version_tag()},
              {"created_utc", utc_timestamp()}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_json_file(target, j);
}

void on_run(CLI::App* sub, Context& ctx, Action* slot, Action fn) {
    sub->callback([sub, &ctx, slot, fn = std::move(fn)] {
        ctx.command.clear();
        for (const CLI::App* a = sub; a->get_parent() != nullptr; a = a->get_parent())
            ctx.command.insert(ctx.command.begin(), a->get_name());
        *slot = fn;
    });
}

void progress(const std::string& line) { std::cerr << line << std::endl; }

std::filesystem::path manifest_path(const std::filesystem::path& p) {
    return std::filesystem::is_directory(p) ? p / "features.jsonl" : p;
}

}  // namespace tsg::cli
