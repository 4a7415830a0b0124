#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hsr/chemometrics.hpp"
#include "hsr/config.hpp"
#include "hsr/recon_nets.hpp"
#include "hsr/trainer.hpp"

namespace hsr {

/// Everything a subcommand needs: settings, output root, optional global seed and a log sink.
struct PipelineContext {
    Config config;
    std::filesystem::path out = "hsr_out";
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> arch;  // restricts reconstruction subcommands to one architecture
    std::ostream* log = nullptr;

    /// [section] seed, or a value derived from --seed when given.
    std::uint64_t seed(const std::string& section, std::uint64_t fallback) const;
    std::filesystem::path path(const std::string& relative) const { return out / relative; }
};

/// Subcommands in pipeline order.
const std::vector<std::string>& subcommands();
/// Runs one subcommand. Throws hsr::Error with an actionable message on failure.
void run_subcommand(const std::string& name, PipelineContext& ctx);

/// Architectures selected by ctx.arch (all three when unset).
std::vector<Architecture> selected_architectures(const PipelineContext& ctx);
/// Filesystem-safe architecture name: hscnn-d, hrnet, mst-pp.
std::string architecture_slug(Architecture arch);

ModelSpec model_spec_from_config(const Config& config, Architecture arch, std::size_t out_bands);
TrainConfig train_config_from_config(const PipelineContext& ctx, Architecture arch);

void write_model_spec(const ModelSpec& spec, const std::vector<double>& wavelengths, const std::filesystem::path& path);
ModelSpec read_model_spec(const std::filesystem::path& path, std::vector<double>* wavelengths = nullptr);

/// One row of the PLSR summary tables.
struct PlsrSummary {
    std::size_t lv = 0;
    double r2c = 0.0, rmsec = 0.0;
    double r2v = 0.0, rmsev = 0.0;
    double r2p = 0.0, rmsep = 0.0;
    double rpd = 0.0;
};

inline const char* kPlsrHeader = "LV,R2c,RMSEC,R2v,RMSEV,R2p,RMSEP,RPD";

/// LV chosen by leave-one-out on the training rows, then calibration/validation/prediction metrics.
PlsrSummary fit_and_summarize(const SpectraTable& table, const SplitAssignment& split, std::size_t max_lv,
                              PlsrModel* model = nullptr);
void write_plsr_summary(const PlsrSummary& s, const std::filesystem::path& path);
PlsrSummary read_plsr_summary(const std::filesystem::path& path);

}  // namespace hsr
