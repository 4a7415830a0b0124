#include "hsr/recon_nets.hpp"

#include <algorithm>
#include <cctype>

namespace hsr {

using ad::Padding;
using ad::Tape;
using ad::Tensor;

std::string to_string(Architecture arch) {
    switch (arch) {
        case Architecture::HscnnD: return "HSCNN-D";
        case Architecture::Hrnet: return "HRNET";
        case Architecture::MstPlusPlus: return "MST++";
    }
    return "?";
}

Architecture parse_architecture(const std::string& name) {
    std::string n;
    for (char c : name)
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '+') n.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (n == "hscnnd") return Architecture::HscnnD;
    if (n == "hrnet") return Architecture::Hrnet;
    if (n == "mst++" || n == "mstpp" || n == "mstplusplus") return Architecture::MstPlusPlus;
    throw Error("unknown architecture '" + name + "' (expected HSCNN-D, HRNET or MST++)");
}

ModelSpec ModelSpec::toy(Architecture arch, std::size_t out_bands) {
    ModelSpec s;
    s.architecture = arch;
    s.out_bands = out_bands;
    switch (arch) {
        case Architecture::HscnnD:
            s.base_channels = 16;
            s.depth = 6;
            s.growth = 12;
            break;
        case Architecture::Hrnet:
            s.base_channels = 16;
            s.depth = 1;
            s.growth = 8;
            break;
        case Architecture::MstPlusPlus:
            s.base_channels = 12;
            s.depth = 2;
            s.heads = 2;
            s.u_levels = 2;
            break;
    }
    return s;
}

void ModelSpec::validate() const {
    if (out_bands < 1) throw Error("model spec: out_bands must be >= 1");
    if (base_channels < 1 || depth < 1 || growth < 1 || heads < 1 || u_levels < 1) {
        throw Error("model spec: every width/depth knob must be >= 1");
    }
    if (architecture == Architecture::Hrnet && base_channels % 4 != 0) {
        throw Error("model spec: HRNET base channels must be divisible by 4 for pixel shuffle fusion");
    }
    if (architecture == Architecture::MstPlusPlus && base_channels % heads != 0) {
        throw Error("model spec: MST++ channels must be divisible by the head count");
    }
}

std::size_t ModelSpec::spatial_multiple() const {
    switch (architecture) {
        case Architecture::HscnnD: return 1;
        case Architecture::Hrnet: return 8;
        case Architecture::MstPlusPlus: return std::size_t{1} << (u_levels - 1);
    }
    return 1;
}

namespace {

void add_conv(ad::ParamSet& p, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng,
              bool bias = true) {
    p.add_glorot(name + ".w", {cout, cin, k, k}, cin * k * k, cout * k * k, rng);
    if (bias) p.add_constant(name + ".b", {cout}, 0.0);
}

Tensor conv(Tape& t, const ad::ParamSet& p, const std::string& name, const Tensor& x) {
    const Tensor& w = p.get(name + ".w");
    const Tensor b = p.contains(name + ".b") ? p.get(name + ".b") : Tensor();
    return ad::conv2d(t, x, w, b, Padding::Same);
}

// ---- HSCNN-D --------------------------------------------------------------

void build_hscnn_d(const ModelSpec& s, ad::ParamSet& p, Rng& rng) {
    add_conv(p, "stem", 3, s.base_channels, 3, rng);
    for (std::size_t k = 0; k < s.depth; ++k) {
        const std::size_t cin = s.base_channels + k * s.growth;
        const std::string n = "dense" + std::to_string(k);
        add_conv(p, n + ".path1x1", cin, s.growth, 1, rng);
        add_conv(p, n + ".path3x3", cin, s.growth, 3, rng);
    }
    add_conv(p, "recon", s.base_channels + s.depth * s.growth, s.out_bands, 1, rng);
}

Tensor hscnn_d_forward(const ModelSpec& s, const ad::ParamSet& p, Tape& t, const Tensor& rgb, ForwardTrace* trace) {
    std::vector<Tensor> features{ad::relu(t, conv(t, p, "stem", rgb))};
    for (std::size_t k = 0; k < s.depth; ++k) {
        // f_k = c_k([f_0, ..., f_{k-1}])
        const Tensor in = ad::concat_channels(t, features);
        if (trace) trace->dense_block_inputs.push_back(in.dim(0));
        const std::string n = "dense" + std::to_string(k);
        // path-widening fusion: parallel 1x1 and 3x3 branches summed
        const Tensor a = conv(t, p, n + ".path1x1", in);
        const Tensor b = conv(t, p, n + ".path3x3", in);
        features.push_back(ad::relu(t, ad::add(t, a, b)));
    }
    return conv(t, p, "recon", ad::concat_channels(t, features));
}

// ---- HRNET ----------------------------------------------------------------

constexpr std::size_t kHrnetLevels = 4;
constexpr std::size_t kDenseLayers = 5;

void build_rdb(ad::ParamSet& p, const std::string& n, std::size_t c, std::size_t g, Rng& rng) {
    for (std::size_t l = 0; l < kDenseLayers; ++l) add_conv(p, n + ".layer" + std::to_string(l), c + l * g, g, 3, rng);
    add_conv(p, n + ".fuse", c + kDenseLayers * g, c, 1, rng);
}

Tensor residual_dense_block(Tape& t, const ad::ParamSet& p, const std::string& n, const Tensor& x) {
    std::vector<Tensor> feats{x};
    for (std::size_t l = 0; l < kDenseLayers; ++l) {
        feats.push_back(ad::relu(t, conv(t, p, n + ".layer" + std::to_string(l), ad::concat_channels(t, feats))));
    }
    return ad::add(t, x, conv(t, p, n + ".fuse", ad::concat_channels(t, feats)));
}

void build_rgb(ad::ParamSet& p, const std::string& n, std::size_t c, Rng& rng) {
    const std::size_t hidden = std::max<std::size_t>(1, c / 2);
    p.add_glorot(n + ".mlp1.w", {hidden, c}, c, hidden, rng);
    p.add_constant(n + ".mlp1.b", {hidden, 1}, 0.0);
    p.add_glorot(n + ".mlp2.w", {c, hidden}, hidden, c, rng);
    p.add_constant(n + ".mlp2.b", {c, 1}, 0.0);
}

// x (+ shortcut) scaled per channel by an MLP over the globally pooled features.
Tensor residual_global_block(Tape& t, const ad::ParamSet& p, const std::string& n, const Tensor& x, bool shortcut) {
    const std::size_t c = x.dim(0);
    Tensor pooled = ad::reshape(t, ad::channel_mean(t, x), {c, 1});
    Tensor h = ad::relu(t, ad::add(t, ad::matmul(t, p.get(n + ".mlp1.w"), pooled), p.get(n + ".mlp1.b")));
    Tensor a = ad::sigmoid(t, ad::add(t, ad::matmul(t, p.get(n + ".mlp2.w"), h), p.get(n + ".mlp2.b")));
    Tensor attended = ad::channel_scale(t, x, ad::reshape(t, a, {c}));
    return shortcut ? ad::add(t, x, attended) : attended;
}

std::string level_name(std::size_t level) { return "level" + std::to_string(level); }

void build_hrnet(const ModelSpec& s, ad::ParamSet& p, Rng& rng) {
    const std::size_t c = s.base_channels;
    for (std::size_t i = kHrnetLevels; i-- > 0;) {
        const std::string n = level_name(i);
        const std::size_t r = std::size_t{1} << i;
        add_conv(p, n + ".head", 3 * r * r, c, 3, rng);
        if (i + 1 < kHrnetLevels) add_conv(p, n + ".fusion", c + c / 4, c, 3, rng);
        for (std::size_t b = 0; b < s.depth; ++b) {
            build_rdb(p, n + ".rdb" + std::to_string(b), c, s.growth, rng);
            build_rgb(p, n + ".rgb" + std::to_string(b), c, rng);
        }
        if (i + 1 == kHrnetLevels) add_conv(p, n + ".tone", c, c, 1, rng);
    }
    add_conv(p, "out", c, s.out_bands, 3, rng);
}

Tensor hrnet_forward(const ModelSpec& s, const ad::ParamSet& p, Tape& t, const Tensor& rgb, ForwardTrace* trace,
                     const ForwardOptions& opt) {
    if (rgb.dim(1) % 8 != 0 || rgb.dim(2) % 8 != 0) {
        throw Error("HRNET input height and width must be divisible by 8, got " + ad::to_string(rgb.shape()));
    }
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < kHrnetLevels; ++i) {
        inputs.push_back(ad::pixel_unshuffle(t, rgb, std::size_t{1} << i));
        if (trace) trace->level_inputs.push_back(inputs.back().shape());
    }
    Tensor lower;
    for (std::size_t i = kHrnetLevels; i-- > 0;) {
        const std::string n = level_name(i);
        Tensor x = ad::relu(t, conv(t, p, n + ".head", inputs[i]));
        if (lower.defined()) {
            // inter-level fusion: shuffle the coarser output up, concatenate, restore width
            Tensor up = ad::pixel_shuffle(t, lower, 2);
            x = ad::relu(t, conv(t, p, n + ".fusion", ad::concat_channels(t, {x, up})));
        }
        for (std::size_t b = 0; b < s.depth; ++b) {
            x = residual_dense_block(t, p, n + ".rdb" + std::to_string(b), x);
            x = residual_global_block(t, p, n + ".rgb" + std::to_string(b), x, opt.global_shortcut);
        }
        if (i + 1 == kHrnetLevels) x = conv(t, p, n + ".tone", x);
        lower = x;
    }
    return conv(t, p, "out", lower);
}

// ---- MST++ ----------------------------------------------------------------

std::size_t level_channels(const ModelSpec& s, std::size_t level) { return s.base_channels << level; }

void build_sab(ad::ParamSet& p, const std::string& n, std::size_t c, std::size_t heads, Rng& rng) {
    make_smsa_params(p, n + ".msa", c, heads, rng);
    add_conv(p, n + ".ffn1", c, 2 * c, 1, rng);
    add_conv(p, n + ".ffn2", 2 * c, c, 1, rng);
}

Tensor spectral_attention_block(Tape& t, const ad::ParamSet& p, const std::string& n, std::size_t heads, const Tensor& x,
                                ForwardTrace* trace) {
    const SmsaParams sp = lookup_smsa_params(p, n + ".msa", heads);
    Tensor y = ad::add(t, x, s_msa(t, x, sp, trace ? &trace->attention : nullptr));
    Tensor f = conv(t, p, n + ".ffn2", ad::gelu(t, conv(t, p, n + ".ffn1", y)));
    return ad::add(t, y, f);
}

void build_mst(const ModelSpec& s, ad::ParamSet& p, Rng& rng) {
    add_conv(p, "embed", 3, s.base_channels, 3, rng);
    for (std::size_t st = 0; st < s.depth; ++st) {
        const std::string n = "stage" + std::to_string(st);
        for (std::size_t l = 0; l + 1 < s.u_levels; ++l) {
            const std::size_t c = level_channels(s, l);
            build_sab(p, n + ".enc" + std::to_string(l), c, s.heads, rng);
            add_conv(p, n + ".down" + std::to_string(l), 4 * c, 2 * c, 1, rng);
        }
        build_sab(p, n + ".bottleneck", level_channels(s, s.u_levels - 1), s.heads, rng);
        for (std::size_t l = s.u_levels - 1; l-- > 0;) {
            const std::size_t c = level_channels(s, l);
            add_conv(p, n + ".up" + std::to_string(l), 2 * c, 4 * c, 1, rng);
            add_conv(p, n + ".merge" + std::to_string(l), 2 * c, c, 1, rng);
            build_sab(p, n + ".dec" + std::to_string(l), c, s.heads, rng);
        }
    }
    add_conv(p, "mapping", s.base_channels, s.out_bands, 3, rng);
}

// Single-stage U-shaped transformer with a residual around the whole stage.
Tensor sst_forward(const ModelSpec& s, const ad::ParamSet& p, Tape& t, const std::string& n, const Tensor& x,
                   ForwardTrace* trace) {
    std::vector<Tensor> skips;
    Tensor h = x;
    for (std::size_t l = 0; l + 1 < s.u_levels; ++l) {
        h = spectral_attention_block(t, p, n + ".enc" + std::to_string(l), s.heads, h, trace);
        skips.push_back(h);
        h = conv(t, p, n + ".down" + std::to_string(l), ad::pixel_unshuffle(t, h, 2));
    }
    h = spectral_attention_block(t, p, n + ".bottleneck", s.heads, h, trace);
    for (std::size_t l = s.u_levels - 1; l-- > 0;) {
        Tensor up = ad::pixel_shuffle(t, conv(t, p, n + ".up" + std::to_string(l), h), 2);
        h = conv(t, p, n + ".merge" + std::to_string(l), ad::concat_channels(t, {up, skips[l]}));
        h = spectral_attention_block(t, p, n + ".dec" + std::to_string(l), s.heads, h, trace);
    }
    return ad::add(t, h, x);
}

Tensor mst_forward(const ModelSpec& s, const ad::ParamSet& p, Tape& t, const Tensor& rgb, ForwardTrace* trace) {
    const std::size_t m = s.spatial_multiple();
    if (rgb.dim(1) % m != 0 || rgb.dim(2) % m != 0) {
        throw Error("MST++ input height and width must be divisible by " + std::to_string(m));
    }
    const Tensor embedded = conv(t, p, "embed", rgb);
    Tensor h = embedded;
    for (std::size_t st = 0; st < s.depth; ++st) h = sst_forward(s, p, t, "stage" + std::to_string(st), h, trace);
    return conv(t, p, "mapping", ad::add(t, h, embedded));
}

}  // namespace

SmsaParams make_smsa_params(ad::ParamSet& params, const std::string& prefix, std::size_t channels, std::size_t heads,
                            Rng& rng) {
    if (heads == 0 || channels % heads != 0) throw Error("S-MSA channels must be divisible by the head count");
    add_conv(params, prefix + ".q", channels, channels, 1, rng, false);
    add_conv(params, prefix + ".k", channels, channels, 1, rng, false);
    add_conv(params, prefix + ".v", channels, channels, 1, rng, false);
    for (std::size_t j = 0; j < heads; ++j) params.add_constant(prefix + ".rescale" + std::to_string(j), {1}, 1.0);
    add_conv(params, prefix + ".proj", channels, channels, 1, rng);
    params.add_glorot(prefix + ".pos.w", {channels, 1, 3, 3}, 9, 9, rng);
    params.add_constant(prefix + ".pos.b", {channels}, 0.0);
    return lookup_smsa_params(params, prefix, heads);
}

SmsaParams lookup_smsa_params(const ad::ParamSet& params, const std::string& prefix, std::size_t heads) {
    SmsaParams sp;
    sp.wq = params.get(prefix + ".q.w");
    sp.wk = params.get(prefix + ".k.w");
    sp.wv = params.get(prefix + ".v.w");
    for (std::size_t j = 0; j < heads; ++j) sp.rescale.push_back(params.get(prefix + ".rescale" + std::to_string(j)));
    sp.proj_w = params.get(prefix + ".proj.w");
    sp.proj_b = params.get(prefix + ".proj.b");
    sp.pos_w = params.get(prefix + ".pos.w");
    sp.pos_b = params.get(prefix + ".pos.b");
    return sp;
}

Tensor s_msa(Tape& t, const Tensor& x, const SmsaParams& p, std::vector<Tensor>* attention) {
    if (x.rank() != 3) throw Error("S-MSA input must be [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t heads = p.rescale.size();
    if (heads == 0 || c % heads != 0) {
        throw Error("S-MSA: " + std::to_string(c) + " channels not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t d = c / heads;
    // Channel-major [C, HW] is the transpose of the token matrix: each row is one spectral token.
    const Tensor q = ad::reshape(t, ad::conv2d(t, x, p.wq, Tensor()), {c, h * w});
    const Tensor k = ad::reshape(t, ad::conv2d(t, x, p.wk, Tensor()), {c, h * w});
    const Tensor v3 = ad::conv2d(t, x, p.wv, Tensor());
    const Tensor v = ad::reshape(t, v3, {c, h * w});

    std::vector<Tensor> head_out;
    for (std::size_t j = 0; j < heads; ++j) {
        const Tensor qj = ad::l2_normalize_last_axis(t, ad::slice_channels(t, q, j * d, d));
        const Tensor kj = ad::l2_normalize_last_axis(t, ad::slice_channels(t, k, j * d, d));
        const Tensor vj = ad::slice_channels(t, v, j * d, d);
        Tensor gram = ad::scale_by(t, ad::matmul(t, kj, ad::transpose(t, qj)), p.rescale[j]);  // d x d
        Tensor attn = ad::softmax_last_axis(t, gram);
        if (attention) attention->push_back(attn);
        head_out.push_back(ad::matmul(t, attn, vj));
    }
    const Tensor merged = ad::reshape(t, ad::concat_channels(t, head_out), {c, h, w});
    const Tensor projected = ad::conv2d(t, merged, p.proj_w, p.proj_b);
    const Tensor position = ad::depthwise_conv2d(t, v3, p.pos_w, p.pos_b);
    return ad::add(t, projected, position);
}

ReconNetwork::ReconNetwork(ModelSpec spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    switch (spec_.architecture) {
        case Architecture::HscnnD: build_hscnn_d(spec_, params_, rng); break;
        case Architecture::Hrnet: build_hrnet(spec_, params_, rng); break;
        case Architecture::MstPlusPlus: build_mst(spec_, params_, rng); break;
    }
}

Tensor ReconNetwork::forward(Tape& tape, const Tensor& rgb, ForwardTrace* trace, const ForwardOptions& options) const {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw Error("reconstruction input must be [3,H,W], got " + ad::to_string(rgb.shape()));
    switch (spec_.architecture) {
        case Architecture::HscnnD: return hscnn_d_forward(spec_, params_, tape, rgb, trace);
        case Architecture::Hrnet: return hrnet_forward(spec_, params_, tape, rgb, trace, options);
        case Architecture::MstPlusPlus: return mst_forward(spec_, params_, tape, rgb, trace);
    }
    throw Error("unknown architecture");
}

Cost count_params_flops(const ModelSpec& spec, std::size_t height, std::size_t width) {
    const ReconNetwork net(spec, 0);
    Tape tape(/*shape_only=*/true);
    net.forward(tape, Tensor::placeholder({3, height, width}));
    return {net.params().scalar_count(), tape.macs()};
}

}  // namespace hsr
