#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hsr/ga_select.hpp"
#include "hsr/synth.hpp"

using namespace hsr;

namespace {

Genome genome_of(std::size_t bands, std::initializer_list<std::size_t> on) {
    Genome g(bands, 0);
    for (auto i : on) g[i] = 1;
    return g;
}

}  // namespace

TEST_CASE("fitness on planted and noise bands") {
    PlantedSelection setup;
    setup.noise_sd = 0.0;
    const SpectraTable t = planted_selection_table(setup, 5);
    CHECK(fitness(genome_of(20, {3, 9, 15}), t, 5, 10) < 1e-6);

    PlantedSelection noisy;
    noisy.samples = 200;
    const SpectraTable n = planted_selection_table(noisy, 6);
    // bands 0..2 carry nothing: the best CV predictor is close to the mean
    const double f = fitness(genome_of(20, {0, 1, 2}), n, 5, 3);
    const double sd = sample_sd(n.y) * std::sqrt(static_cast<double>(n.samples() - 1) / static_cast<double>(n.samples()));
    CHECK(f == doctest::Approx(sd).epsilon(0.2));

    CHECK(fitness(genome_of(20, {1, 4}), t, 5, 10) == fitness(genome_of(20, {1, 4}), t, 5, 10));
    CHECK_THROWS_AS(fitness(Genome(20, 0), t, 5, 10), Error);
    CHECK_THROWS_AS(fitness(Genome(19, 1), t, 5, 10), Error);
}

TEST_CASE("fitness cache memoises") {
    const SpectraTable t = planted_selection_table({}, 3);
    FitnessCache cache(t, 5, 10);
    const Genome g = genome_of(20, {2, 3});
    const double a = cache(g);
    CHECK(cache(g) == a);
    CHECK(cache.evaluations() == 1);
    CHECK(a == fitness(g, t, 5, 10));
}

TEST_CASE("tournament selection") {
    std::vector<Individual> pop;
    for (double f : {3.0, 1.0, 4.0, 2.0}) pop.push_back({Genome{1}, f});
    Rng rng(1);
    CHECK(*tournament_select(pop, 4, rng).fitness == 1.0);

    // k = 2: the best wins every pair containing it, 3 of the 6 pairs
    int wins = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) wins += *tournament_select(pop, 2, rng).fitness == 1.0;
    CHECK(static_cast<double>(wins) / draws == doctest::Approx(0.5).epsilon(0.04));

    // k = 1: uniform over members
    std::array<int, 4> counts{};
    for (int i = 0; i < 8000; ++i) {
        const double f = *tournament_select(pop, 1, rng).fitness;
        ++counts[static_cast<std::size_t>(f) - 1];
    }
    for (int c : counts) CHECK(c / 8000.0 == doctest::Approx(0.25).epsilon(0.1));

    std::vector<Individual> unevaluated{{Genome{1}, std::nullopt}, {Genome{0}, 1.0}};
    CHECK_THROWS_AS(tournament_select(unevaluated, 2, rng), Error);
}

TEST_CASE("single point crossover") {
    const Genome a{1, 1, 0, 0}, b{0, 0, 1, 1};
    const auto [c1, c2] = single_point_crossover(a, b, 2);
    CHECK(c1 == Genome{1, 1, 1, 1});
    CHECK(c2 == Genome{0, 0, 0, 0});
    const auto [s1, s2] = single_point_crossover(a, a, 1);
    CHECK(s1 == a);
    CHECK(s2 == a);
    const auto [l1, l2] = single_point_crossover(a, b, 3);
    CHECK(std::equal(l1.begin(), l1.end() - 1, a.begin()));
    CHECK(std::equal(l2.begin(), l2.end() - 1, b.begin()));
    CHECK_THROWS_AS(single_point_crossover(a, b, 0), Error);
    CHECK_THROWS_AS(single_point_crossover(a, b, 4), Error);
}

TEST_CASE("mutation") {
    Rng rng(2);
    const Genome g = genome_of(10, {1, 5});
    CHECK(mutate(g, 0.0, rng) == g);
    const Genome all = mutate(g, 1.0, rng);
    for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == 1 - g[i]);

    const Genome zero(200, 0);
    double flips = 0;
    for (int t = 0; t < 1000; ++t) flips += static_cast<double>(popcount(mutate(zero, 0.03, rng)));
    CHECK(flips / 1000 == doctest::Approx(6.0).epsilon(0.5 / 6.0));
}

TEST_CASE("repair reaches the band bounds") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        Genome g = mutate(Genome(20, 0), 0.5, rng);
        repair(g, 7, 7, rng);
        CHECK(popcount(g) == 7);
    }
    Genome none(20, 0);
    repair(none, 3, 15, rng);
    CHECK(popcount(none) == 3);
    Genome full(20, 1);
    repair(full, 3, 15, rng);
    CHECK(popcount(full) == 15);
    CHECK_THROWS_AS(repair(full, 5, 4, rng), Error);
}

TEST_CASE("GA run invariants") {
    PlantedSelection setup;
    setup.samples = 100;
    const SpectraTable t = planted_selection_table(setup, 12);
    GaConfig cfg;
    cfg.generations = 30;
    cfg.seed = 3;
    const GaResult r = run_ga(t, cfg);
    REQUIRE(r.history.size() == 30);
    for (std::size_t g = 1; g < r.history.size(); ++g) CHECK(r.history[g] <= r.history[g - 1]);
    CHECK(r.best_fitness == r.history.back());
    CHECK(popcount(r.best_genome) >= cfg.min_bands);
    CHECK(popcount(r.best_genome) <= cfg.max_bands);
    for (auto i : {3, 9, 15}) CHECK(r.best_genome[i] == 1);
    CHECK(r.selected_wavelengths.size() == popcount(r.best_genome));

    const GaResult again = run_ga(t, cfg);
    CHECK(again.best_genome == r.best_genome);
    CHECK(again.history == r.history);

    cfg.generations = 0;
    const GaResult init = run_ga(t, cfg);
    CHECK(init.history.empty());
    // best of the initial population, drawn from the same stream
    FitnessCache cache(t, cfg.cv_folds, cfg.max_lv);
    CHECK(init.best_fitness == cache(init.best_genome));

    GaConfig bad;
    bad.min_bands = 8;
    bad.max_bands = 4;
    CHECK_THROWS_AS(run_ga(t, bad), Error);
}

TEST_CASE("GA output files") {
    const auto dir = std::filesystem::temp_directory_path() / "hsr_test_ga";
    GaResult r;
    r.history = {0.5, 0.25};
    r.selected_wavelengths = {420.5, 700};
    write_ga_result(r, dir / "h.csv", dir / "w.txt");
    CHECK(read_wavelength_list(dir / "w.txt") == r.selected_wavelengths);
}
