#include <doctest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "hsr/recon_nets.hpp"

using namespace hsr;
using namespace hsr::ad;
using gradcases::randv;

namespace {

Tensor run(const ReconNetwork& net, std::size_t h, std::size_t w, ForwardTrace* trace = nullptr,
           const ForwardOptions& opt = {}) {
    Tape t;
    return net.forward(t, Tensor::constant({3, h, w}, randv(3 * h * w, 42, 0.0, 1.0)), trace, opt);
}

const std::array<Architecture, 3> kAll{Architecture::HscnnD, Architecture::Hrnet, Architecture::MstPlusPlus};

}  // namespace

TEST_CASE("architecture names") {
    for (auto a : kAll) CHECK(parse_architecture(to_string(a)) == a);
    CHECK(parse_architecture("hscnn-d") == Architecture::HscnnD);
    CHECK(parse_architecture("MST++") == Architecture::MstPlusPlus);
    CHECK(parse_architecture("mstpp") == Architecture::MstPlusPlus);
    CHECK_THROWS_AS(parse_architecture("unet"), Error);
}

TEST_CASE("every network maps [3,H,W] to [bands,H,W]") {
    for (auto a : kAll) {
        CAPTURE(to_string(a));
        const ReconNetwork net(ModelSpec::toy(a, 7), 1);
        CHECK(run(net, 16, 16).shape() == Shape{7, 16, 16});
        CHECK(run(net, 8, 24).shape() == Shape{7, 8, 24});
        const ReconNetwork wide(ModelSpec::toy(a, 31), 1);
        CHECK(run(wide, 8, 8).shape() == Shape{31, 8, 8});
        Tape t;
        CHECK_THROWS_AS(net.forward(t, Tensor::zeros({4, 8, 8})), Error);
    }
}

TEST_CASE("zeroed final layer yields the bias everywhere") {
    const std::array<std::pair<Architecture, const char*>, 3> finals{
        {{Architecture::HscnnD, "recon"}, {Architecture::Hrnet, "out"}, {Architecture::MstPlusPlus, "mapping"}}};
    for (const auto& [a, name] : finals) {
        ReconNetwork net(ModelSpec::toy(a, 5), 2);
        auto& w = net.params().get(std::string(name) + ".w").values();
        std::fill(w.begin(), w.end(), 0.0);
        auto& b = net.params().get(std::string(name) + ".b").values();
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.1 * static_cast<double>(i) - 0.2;
        const Tensor y = run(net, 8, 8);
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t p = 0; p < 64; ++p) CHECK(y.values()[c * 64 + p] == b[c]);
    }
}

TEST_CASE("HSCNN-D dense connectivity and parameter count") {
    ModelSpec s = ModelSpec::toy(Architecture::HscnnD, 7);
    const ReconNetwork net(s, 3);
    ForwardTrace trace;
    run(net, 8, 8, &trace);
    REQUIRE(trace.dense_block_inputs.size() == s.depth);
    for (std::size_t k = 0; k < s.depth; ++k) CHECK(trace.dense_block_inputs[k] == s.base_channels + k * s.growth);

    // stem 3x3 + per block (1x1 and 3x3 paths) + 1x1 reconstruction, all with bias
    const std::size_t c = s.base_channels, g = s.growth;
    std::size_t expect = 27 * c + c;
    for (std::size_t k = 0; k < s.depth; ++k) {
        const std::size_t cin = c + k * g;
        expect += cin * g + g + 9 * cin * g + g;
    }
    expect += (c + s.depth * g) * 7 + 7;
    CHECK(net.params().scalar_count() == expect);
    CHECK(count_params_flops(s, 8, 8).parameters == expect);
}

TEST_CASE("HRNET levels and global shortcut") {
    const ReconNetwork net(ModelSpec::toy(Architecture::Hrnet, 7), 4);
    ForwardTrace trace;
    const Tensor with = run(net, 16, 24, &trace);
    REQUIRE(trace.level_inputs.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t r = std::size_t{1} << i;
        CHECK(trace.level_inputs[i] == Shape{3 * r * r, 16 / r, 24 / r});
    }
    CHECK(trace.level_inputs[3][1] == 2);
    CHECK(trace.level_inputs[3][2] == 3);

    ForwardOptions ablate;
    ablate.global_shortcut = false;
    const Tensor without = run(net, 16, 24, nullptr, ablate);
    double diff = 0;
    for (std::size_t i = 0; i < with.numel(); ++i) diff = std::max(diff, std::abs(with.values()[i] - without.values()[i]));
    CHECK(diff > 1e-6);
    CHECK(run(net, 16, 24).values() == with.values());

    Tape t;
    CHECK_THROWS_AS(net.forward(t, Tensor::zeros({3, 12, 12})), Error);
}

TEST_CASE("MST++ stages add identical parameter blocks") {
    ModelSpec s = ModelSpec::toy(Architecture::MstPlusPlus, 7);
    std::vector<std::size_t> counts;
    for (std::size_t d = 1; d <= 3; ++d) {
        s.depth = d;
        counts.push_back(ReconNetwork(s, 0).params().scalar_count());
    }
    const std::size_t stage = counts[1] - counts[0];
    CHECK(counts[2] - counts[1] == stage);
    const std::size_t c = s.base_channels;
    CHECK(counts[0] - stage == (27 * c + c) + (9 * c * 7 + 7));  // embedding and mapping convs
}

TEST_CASE("S-MSA attention is spectral and row-stochastic") {
    for (std::size_t heads : {std::size_t{1}, std::size_t{2}}) {
        ModelSpec s = ModelSpec::toy(Architecture::MstPlusPlus, 7);
        s.heads = heads;
        const ReconNetwork net(s, 5);
        for (std::size_t hw : {std::size_t{4}, std::size_t{8}}) {
            ForwardTrace trace;
            run(net, hw, hw, &trace);
            REQUIRE(!trace.attention.empty());
            for (const auto& a : trace.attention) {
                REQUIRE(a.rank() == 2);
                CHECK(a.dim(0) == a.dim(1));
                const std::size_t d = a.dim(0);
                CHECK(d * heads >= s.base_channels);
                for (std::size_t r = 0; r < d; ++r) {
                    double total = 0;
                    for (std::size_t q = 0; q < d; ++q) {
                        CHECK(a.values()[r * d + q] >= 0.0);
                        total += a.values()[r * d + q];
                    }
                    CHECK(std::abs(total - 1.0) < 1e-12);
                }
            }
        }
    }
    // one head on C channels: the attention matrix is C x C
    ParamSet p;
    Rng rng(1);
    const SmsaParams sp = make_smsa_params(p, "m", 6, 1, rng);
    std::vector<Tensor> att;
    Tape t;
    s_msa(t, Tensor::constant({6, 3, 5}, randv(90, 2)), sp, &att);
    REQUIRE(att.size() == 1);
    CHECK(att[0].shape() == Shape{6, 6});
}

TEST_CASE("S-MSA against a term-by-term evaluation") {
    const std::size_t C = 4, H = 2, W = 3, P = H * W, heads = 2, d = C / heads;
    ParamSet params;
    Rng rng(8);
    SmsaParams sp = make_smsa_params(params, "t", C, heads, rng);
    sp.rescale[0].values()[0] = 0.7;
    sp.rescale[1].values()[0] = 1.9;
    sp.proj_b.values() = randv(C, 3);
    sp.pos_b.values() = randv(C, 4);
    const auto x = randv(C * P, 5);

    auto proj1x1 = [&](const Tensor& w, std::size_t o, std::size_t p) {
        double acc = 0;
        for (std::size_t c = 0; c < C; ++c) acc += w.values()[o * C + c] * x[c * P + p];
        return acc;
    };
    std::vector<double> Q(C * P), K(C * P), V(C * P);
    for (std::size_t o = 0; o < C; ++o)
        for (std::size_t p = 0; p < P; ++p) {
            Q[o * P + p] = proj1x1(sp.wq, o, p);
            K[o * P + p] = proj1x1(sp.wk, o, p);
            V[o * P + p] = proj1x1(sp.wv, o, p);
        }
    auto norm = [&](const std::vector<double>& M, std::size_t row) {
        double s = 0;
        for (std::size_t p = 0; p < P; ++p) s += M[row * P + p] * M[row * P + p];
        return std::sqrt(s);
    };
    std::vector<double> merged(C * P, 0.0);
    for (std::size_t j = 0; j < heads; ++j) {
        const double scale = sp.rescale[j].values()[0];
        for (std::size_t a = 0; a < d; ++a) {
            const std::size_t ra = j * d + a;
            std::vector<double> logits(d);
            for (std::size_t b = 0; b < d; ++b) {
                const std::size_t rb = j * d + b;
                double dot = 0;
                for (std::size_t p = 0; p < P; ++p) dot += K[ra * P + p] * Q[rb * P + p];
                logits[b] = scale * dot / (norm(K, ra) * norm(Q, rb));
            }
            double z = 0;
            for (double l : logits) z += std::exp(l);
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t b = 0; b < d; ++b) merged[ra * P + p] += std::exp(logits[b]) / z * V[(j * d + b) * P + p];
        }
    }
    std::vector<double> expect(C * P);
    for (std::size_t o = 0; o < C; ++o)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t jj = 0; jj < W; ++jj) {
                double acc = sp.proj_b.values()[o] + sp.pos_b.values()[o];
                for (std::size_t c = 0; c < C; ++c) acc += sp.proj_w.values()[o * C + c] * merged[c * P + i * W + jj];
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const int r = static_cast<int>(i) + di, s = static_cast<int>(jj) + dj;
                        if (r < 0 || s < 0 || r >= static_cast<int>(H) || s >= static_cast<int>(W)) continue;
                        acc += sp.pos_w.values()[o * 9 + static_cast<std::size_t>((di + 1) * 3 + dj + 1)] *
                               V[o * P + static_cast<std::size_t>(r) * W + static_cast<std::size_t>(s)];
                    }
                expect[o * P + i * W + jj] = acc;
            }
    Tape t;
    const Tensor y = s_msa(t, Tensor::constant({C, H, W}, x), sp);
    for (std::size_t k = 0; k < C * P; ++k) CHECK(std::abs(y.values()[k] - expect[k]) < 1e-12);
}

TEST_CASE("S-MSA with zero values and position filter") {
    ParamSet p;
    Rng rng(9);
    SmsaParams sp = make_smsa_params(p, "z", 4, 1, rng);
    std::fill(sp.wv.values().begin(), sp.wv.values().end(), 0.0);
    std::fill(sp.pos_w.values().begin(), sp.pos_w.values().end(), 0.0);
    Tape t;
    const Tensor y = s_msa(t, Tensor::constant({4, 3, 3}, randv(36, 10)), sp);
    for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("cost counting") {
    ParamSet p;
    Rng rng(1);
    p.add_glorot("c.w", {8, 3, 3, 3}, 27, 72, rng);
    p.add_constant("c.b", {8}, 0.0);
    CHECK(p.scalar_count() == 224);

    const ModelSpec h = ModelSpec::toy(Architecture::HscnnD, 7);
    const Cost small = count_params_flops(h, 16, 16), big = count_params_flops(h, 32, 32);
    CHECK(big.macs == 4 * small.macs);
    CHECK(big.parameters == small.parameters);

    std::size_t params[3];
    for (std::size_t i = 0; i < 3; ++i) {
        params[i] = count_params_flops(ModelSpec::toy(kAll[i], 7), 64, 64).parameters;
        CHECK(params[i] == ReconNetwork(ModelSpec::toy(kAll[i], 7), 0).params().scalar_count());
    }
    CHECK(params[2] < params[0]);
    CHECK(params[2] < params[1]);
}

TEST_CASE("full networks pass a finite-difference check") {
    for (auto a : kAll) {
        const auto c = gradcases::network_case(a, 120);
        CAPTURE(c.name);
        const auto r = grad_check(c.fn, c.params, 1e-5, c.max_coords, 7);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("spec validation") {
    ModelSpec s = ModelSpec::toy(Architecture::MstPlusPlus, 7);
    s.heads = 5;
    CHECK_THROWS_AS(s.validate(), Error);
    s = ModelSpec::toy(Architecture::HscnnD, 0);
    CHECK_THROWS_AS(s.validate(), Error);
    CHECK(ModelSpec::toy(Architecture::Hrnet, 7).spatial_multiple() == 8);
}
