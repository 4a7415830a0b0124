#include <doctest.h>

#include <filesystem>

#include "hsr/segmentation.hpp"

using namespace hsr;

namespace {

// 4x4 cube on {452, 602}; the 2x2 block at rows 1-2, cols 1-2 is foreground.
Hypercube two_band_scene() {
    Hypercube c(4, 4, {452, 602});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t s = 0; s < 4; ++s) {
            const bool fg = r >= 1 && r <= 2 && s >= 1 && s <= 2;
            c.at(r, s, 0) = fg ? 0.1 : 0.05;
            c.at(r, s, 1) = fg ? 0.5 : 0.05;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("band difference mask with explicit threshold") {
    const Hypercube c = two_band_scene();
    MaskOptions opt;
    opt.threshold = 0.1;
    const Mask m = band_difference_mask(c, 602, 452, opt);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t s = 0; s < 4; ++s) CHECK(m.at(r, s) == (r >= 1 && r <= 2 && s >= 1 && s <= 2));
    CHECK(m.count() == 4);

    opt.threshold = 1.0;
    CHECK_THROWS_AS(band_difference_mask(c, 602, 452, opt), DegenerateMaskError);
}

TEST_CASE("uniform cube with negative threshold selects everything") {
    Hypercube c(3, 3, {452, 602});
    std::fill(c.data().begin(), c.data().end(), 0.3);
    MaskOptions opt;
    opt.threshold = -1.0;
    CHECK(band_difference_mask(c, 602, 452, opt).count() == 9);
}

TEST_CASE("otsu separates a bimodal set") {
    std::vector<double> v;
    for (int i = 0; i < 50; ++i) v.push_back(0.1 + 0.001 * i);
    for (int i = 0; i < 50; ++i) v.push_back(0.8 + 0.001 * i);
    const double t = otsu_threshold(v);
    CHECK(t > 0.149);
    CHECK(t < 0.8);
    const Mask m = band_difference_mask(two_band_scene(), 602, 452);
    CHECK(m.count() == 4);
}

TEST_CASE("largest component") {
    Mask m(5, 5);
    m.set(0, 0, true);
    for (std::size_t r = 2; r < 5; ++r)
        for (std::size_t c = 2; c < 5; ++c) m.set(r, c, true);
    m.set(1, 1, true);  // diagonal neighbour of (2,2): not 4-connected
    const Mask l = largest_component(m);
    CHECK(l.count() == 9);
    CHECK_FALSE(l.at(1, 1));
    CHECK_FALSE(l.at(0, 0));
}

TEST_CASE("apply mask") {
    Hypercube c(2, 2, {400, 500});
    std::fill(c.data().begin(), c.data().end(), 0.4);
    CHECK(apply_mask(c, Mask(2, 2, true)) == c);

    Mask single(2, 2);
    single.set(1, 0, true);
    const Hypercube one = apply_mask(c, single);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t b = 0; b < 2; ++b) CHECK(one.at(r, s, b) == ((r == 1 && s == 0) ? 0.4 : 0.0));

    Hypercube big(4, 4, {400, 500, 600});
    std::fill(big.data().begin(), big.data().end(), 0.4);
    Mask checker(4, 4);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t s = 0; s < 4; ++s) checker.set(r, s, (r + s) % 2 == 0);
    const Hypercube masked = apply_mask(big, checker);
    double total = 0;
    for (double v : masked.data()) total += v;
    CHECK(total / static_cast<double>(masked.data().size()) == doctest::Approx(0.2).epsilon(1e-15));

    CHECK_THROWS_AS(apply_mask(c, Mask(3, 2, true)), Error);
}

TEST_CASE("mean spectrum") {
    SUBCASE("uniform cube") {
        Hypercube c(3, 3, {400, 500});
        std::fill(c.data().begin(), c.data().end(), 0.7);
        Mask m(3, 3);
        m.set(2, 1, true);
        for (double v : mean_spectrum(c, m).values) CHECK(v == doctest::Approx(0.7));
    }
    SUBCASE("two pixels") {
        Hypercube c(1, 2, {400});
        c.at(0, 0, 0) = 0.2;
        c.at(0, 1, 0) = 0.4;
        CHECK(mean_spectrum(c, Mask(1, 2, true)).values[0] == doctest::Approx(0.3));
    }
    SUBCASE("brute force oracle") {
        Hypercube c(3, 3, {400, 500});
        for (std::size_t k = 0; k < c.data().size(); ++k) c.data()[k] = 0.01 * static_cast<double>(k * k % 17);
        Mask m(3, 3);
        m.set(0, 0, true);
        m.set(1, 2, true);
        m.set(2, 1, true);
        const Spectrum s = mean_spectrum(c, m);
        for (std::size_t b = 0; b < 2; ++b) {
            double sum = 0;
            int n = 0;
            for (std::size_t r = 0; r < 3; ++r)
                for (std::size_t col = 0; col < 3; ++col)
                    if (m.at(r, col)) {
                        sum += c.at(r, col, b);
                        ++n;
                    }
            CHECK(s.values[b] == doctest::Approx(sum / n).epsilon(1e-15));
        }
        CHECK(s.wavelengths == c.wavelengths());
    }
    SUBCASE("empty mask") { CHECK_THROWS_AS(mean_spectrum(Hypercube(2, 2, {400}), Mask(2, 2)), DegenerateMaskError); }
}

TEST_CASE("average views") {
    const Spectrum a{{400, 500}, {0.2, 0.4}};
    const Spectrum b{{400, 500}, {0.4, 0.8}};
    const Spectrum z{{400, 500}, {0.0, 0.0}};
    CHECK(average_views(a, a).values == a.values);
    const auto half = average_views(z, b).values;
    CHECK(half[0] == doctest::Approx(0.2));
    CHECK(half[1] == doctest::Approx(0.4));
    const auto ab = average_views(a, b).values;
    CHECK(ab[0] == doctest::Approx(0.3));
    CHECK(ab[1] == doctest::Approx(0.6));
    CHECK_THROWS_AS(average_views(a, Spectrum{{400, 600}, {0, 0}}), Error);
}

TEST_CASE("PBM and spectra CSV round trips") {
    const auto dir = std::filesystem::temp_directory_path() / "hsr_test_segmentation";
    Mask m(3, 11);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 11; ++c) m.set(r, c, (r * 7 + c) % 3 == 0);
    write_pbm(m, dir / "m.pbm");
    CHECK(read_pbm(dir / "m.pbm") == m);

    const std::vector<Spectrum> spectra{{{400, 500}, {0.1, 1.0 / 3.0}}, {{400, 500}, {0.25, 0.5}}};
    write_spectra_csv({"a", "b"}, spectra, dir / "s.csv");
    const auto back = read_spectra_csv(dir / "s.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "a");
    CHECK(back[0].second.values == spectra[0].values);
    CHECK(back[1].second.wavelengths == spectra[1].wavelengths);
}
