#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsr/tensor.hpp"

namespace hsr {

enum class Architecture { HscnnD, Hrnet, MstPlusPlus };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

/// Architecture plus the knobs that fix every parameter shape.
struct ModelSpec {
    Architecture architecture = Architecture::HscnnD;
    std::size_t base_channels = 16;  // HSCNN-D stem, HRNET per-level width, MST++ embedding
    std::size_t depth = 4;           // dense blocks | blocks per level | stages
    std::size_t growth = 8;          // HSCNN-D / HRNET dense growth
    std::size_t heads = 2;           // MST++ attention heads
    std::size_t u_levels = 2;        // MST++ U-shape resolution levels
    std::size_t out_bands = 7;

    /// Desk-scale defaults for each architecture.
    static ModelSpec toy(Architecture arch, std::size_t out_bands);
    void validate() const;
    /// Spatial sizes must be multiples of this.
    std::size_t spatial_multiple() const;
};

/// Optional introspection filled during a forward pass.
struct ForwardTrace {
    std::vector<std::size_t> dense_block_inputs;  // HSCNN-D: channels entering each dense block
    std::vector<ad::Shape> level_inputs;          // HRNET: unshuffled input per level, top first
    std::vector<ad::Tensor> attention;            // MST++: every per-head attention matrix
};

struct ForwardOptions {
    /// HRNET residual global blocks keep their shortcut; false drops it (ablation).
    bool global_shortcut = true;
};

class ReconNetwork {
public:
    ReconNetwork(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    ad::ParamSet& params() { return params_; }
    const ad::ParamSet& params() const { return params_; }

    /// rgb [3,H,W] -> [out_bands,H,W].
    ad::Tensor forward(ad::Tape& tape, const ad::Tensor& rgb, ForwardTrace* trace = nullptr,
                       const ForwardOptions& options = {}) const;

private:
    ModelSpec spec_;
    ad::ParamSet params_;
};

/// Tensors of one spectral-wise multi-head self-attention layer over C channels.
struct SmsaParams {
    ad::Tensor wq, wk, wv;        // [C,C,1,1] projections
    std::vector<ad::Tensor> rescale;  // per-head temperature, each [1]
    ad::Tensor proj_w, proj_b;    // [C,C,1,1], [C]
    ad::Tensor pos_w, pos_b;      // depthwise [C,1,3,3], [C]
};

/// Creates S-MSA parameters named `<prefix>.*` in `params`.
SmsaParams make_smsa_params(ad::ParamSet& params, const std::string& prefix, std::size_t channels,
                            std::size_t heads, Rng& rng);
SmsaParams lookup_smsa_params(const ad::ParamSet& params, const std::string& prefix, std::size_t heads);

/// Concat_j(head_j) W + f_p(V) over x [C,H,W]; attention is (C/heads) x (C/heads) per head.
ad::Tensor s_msa(ad::Tape& tape, const ad::Tensor& x, const SmsaParams& p, std::vector<ad::Tensor>* attention = nullptr);

struct Cost {
    std::size_t parameters = 0;
    std::uint64_t macs = 0;
};

/// Exact parameter count and multiply-accumulates of one forward pass at H x W.
Cost count_params_flops(const ModelSpec& spec, std::size_t height, std::size_t width);

}  // namespace hsr
