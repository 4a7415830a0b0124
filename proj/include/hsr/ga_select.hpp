#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "hsr/chemometrics.hpp"
#include "hsr/common.hpp"

namespace hsr {

struct GaConfig {
    std::size_t population_size = 50;
    std::size_t generations = 100;
    std::size_t tournament_size = 3;
    double mutation_rate = 0.03;
    double elitism_rate = 0.50;
    std::size_t min_bands = 3;
    std::size_t max_bands = 15;
    std::size_t cv_folds = 5;
    std::size_t max_lv = 10;
    std::uint64_t seed = 1;

    /// Throws on out-of-range settings for a table with `bands` columns.
    void validate(std::size_t bands) const;
};

using Genome = std::vector<std::uint8_t>;

struct Individual {
    Genome genome;
    std::optional<double> fitness;  // lower is better
};

struct GaResult {
    Genome best_genome;
    double best_fitness = 0.0;
    std::vector<double> selected_wavelengths;
    std::vector<double> history;  // best fitness after each generation
};

std::size_t popcount(const Genome& genome);
std::vector<std::size_t> selected_indices(const Genome& genome);

/// k-fold CV RMSE of PLSR on the genome's bands, minimised over 1..max_lv latent variables.
double fitness(const Genome& genome, const SpectraTable& table, std::size_t cv_folds, std::size_t max_lv);

/// Best of `k` members drawn uniformly without replacement. Members must be evaluated.
const Individual& tournament_select(const std::vector<Individual>& population, std::size_t k, Rng& rng);

/// Children swap suffixes starting at gene `point` (1 <= point <= B-1).
std::pair<Genome, Genome> single_point_crossover(const Genome& a, const Genome& b, std::size_t point);

/// Flips each gene independently with probability `rate`.
Genome mutate(const Genome& genome, double rate, Rng& rng);

/// Random flips toward feasibility until min <= popcount <= max.
void repair(Genome& genome, std::size_t min_bands, std::size_t max_bands, Rng& rng);

/// Memoising fitness evaluator; results are a pure function of the genome.
class FitnessCache {
public:
    FitnessCache(const SpectraTable& table, std::size_t cv_folds, std::size_t max_lv)
        : table_(table), cv_folds_(cv_folds), max_lv_(max_lv) {}
    double operator()(const Genome& genome);
    std::size_t evaluations() const { return cache_.size(); }

private:
    const SpectraTable& table_;
    std::size_t cv_folds_;
    std::size_t max_lv_;
    std::map<Genome, double> cache_;
};

GaResult run_ga(const SpectraTable& table, const GaConfig& config);

/// history CSV (generation,best_fitness) plus a text list of selected wavelengths.
void write_ga_result(const GaResult& result, const std::filesystem::path& history_csv,
                     const std::filesystem::path& wavelengths_txt);
std::vector<double> read_wavelength_list(const std::filesystem::path& path);

}  // namespace hsr
