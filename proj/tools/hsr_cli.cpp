#include <CLI11.hpp>

#include <iostream>

#include "hsr/pipeline.hpp"

extern char** environ;

int main(int argc, char** argv) {
    CLI::App app{"RGB to hyperspectral reconstruction and chemometrics pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out = "hsr_out";
    std::string arch;
    bool quiet = false;
    app.add_option("--config", config_path, "settings file ([section] key = value)")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "global seed; replaces every per-stage seed");
    app.add_option("--out", out, "output directory")->capture_default_str();
    app.add_flag("-q,--quiet", quiet, "suppress progress messages");

    std::vector<std::string> all = hsr::subcommands();
    all.push_back("all");
    for (const auto& name : all) {
        auto* sub = app.add_subcommand(name, name == "all" ? "run every stage in order" : "pipeline stage");
        if (name == "train-recon" || name == "eval-recon" || name == "recon-spectra" || name == "fit-plsr-recon" ||
            name == "all") {
            sub->add_option("--arch", arch, "hscnn-d | hrnet | mst++ (default: all three)");
        }
    }

    CLI11_PARSE(app, argc, argv);

    try {
        hsr::PipelineContext ctx;
        if (!config_path.empty()) ctx.config = hsr::Config::load(config_path);
        ctx.config.apply_environment(environ);
        ctx.out = out;
        if (seed_opt->count()) ctx.seed_override = seed;
        if (!arch.empty()) ctx.arch = arch;
        if (!quiet) ctx.log = &std::cerr;

        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "all") {
            for (const auto& stage : hsr::subcommands()) hsr::run_subcommand(stage, ctx);
        } else {
            hsr::run_subcommand(name, ctx);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
