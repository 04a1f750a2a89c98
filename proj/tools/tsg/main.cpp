#include <iostream>

#include "app.hpp"
#include "tsg/common/error.hpp"

namespace {

void print_error(const char* kind, const std::string& message) {
    std::cerr << tsg::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace tsg::cli;
    CLI::App app{"Timestep-generating feature detector for diffusion-generated images", "tsg"};
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::ignore);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file with option values (flags take precedence)");
    app.set_version_flag("--version", std::string(tsg::version_tag()));

    Context ctx;
    ctx.app = &app;
    ctx.argv.assign(argv, argv + argc);
    app.add_option("--seed", ctx.seed, "Seed fixing every stochastic choice")->capture_default_str();
    app.add_option("--workers", ctx.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    Action action;
    register_extract(app, ctx, &action);
    register_train(app, ctx, &action);
    register_eval(app, ctx, &action);
    register_crossval(app, ctx, &action);
    register_bench(app, ctx, &action);
    register_build_unbiased(app, ctx, &action);
    register_gradcam(app, ctx, &action);
    register_toy(app, ctx, &action);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    } catch (const tsg::Error& e) {
        print_error(tsg::to_string(e.kind()), e.what());
        return e.exit_code();
    }

    try {
        if (!action) throw tsg::UsageError("no command selected");
        action(ctx);
    } catch (const tsg::Error& e) {
        print_error(tsg::to_string(e.kind()), e.what());
        return e.exit_code();
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
    return 0;
}
