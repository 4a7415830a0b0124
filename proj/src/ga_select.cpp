#include "hsr/ga_select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hsr/csv.hpp"

namespace hsr {

void GaConfig::validate(std::size_t bands) const {
    if (population_size < 2) throw Error("GA population must have at least 2 members");
    if (tournament_size < 2 || tournament_size > population_size) throw Error("GA tournament size must be in [2, population]");
    if (mutation_rate < 0.0 || mutation_rate > 1.0) throw Error("GA mutation rate must be in [0,1]");
    if (elitism_rate < 0.0 || elitism_rate > 1.0) throw Error("GA elitism rate must be in [0,1]");
    if (min_bands < 1 || min_bands > max_bands || max_bands > bands) {
        throw Error("GA band bounds infeasible: need 1 <= min (" + std::to_string(min_bands) + ") <= max (" +
                    std::to_string(max_bands) + ") <= bands (" + std::to_string(bands) + ")");
    }
    if (cv_folds < 2) throw Error("GA cross-validation needs at least 2 folds");
    if (max_lv < 1) throw Error("GA max_lv must be >= 1");
}

std::size_t popcount(const Genome& genome) {
    return static_cast<std::size_t>(std::count(genome.begin(), genome.end(), std::uint8_t{1}));
}

std::vector<std::size_t> selected_indices(const Genome& genome) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < genome.size(); ++i)
        if (genome[i]) idx.push_back(i);
    return idx;
}

double fitness(const Genome& genome, const SpectraTable& table, std::size_t cv_folds, std::size_t max_lv) {
    if (genome.size() != table.features()) throw Error("genome length differs from band count");
    const auto bands = selected_indices(genome);
    if (bands.empty()) throw Error("fitness of an empty genome");
    const std::size_t n = table.samples();
    const std::size_t folds = std::min(cv_folds, n);
    // smallest training fold has n - ceil(n/folds) rows
    const std::size_t train_rows = n - (n + folds - 1) / folds;
    const std::size_t lv = std::min({max_lv, bands.size(), train_rows - 1});
    const Eigen::MatrixXd X = table.X(Eigen::all, std::vector<Eigen::Index>(bands.begin(), bands.end()));
    const Eigen::MatrixXd pred = cross_val_predictions(X, table.y, lv, folds);
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < pred.cols(); ++k) {
        best = std::min(best, std::sqrt((pred.col(k) - table.y).squaredNorm() / static_cast<double>(n)));
    }
    return best;
}

double FitnessCache::operator()(const Genome& genome) {
    auto it = cache_.find(genome);
    if (it != cache_.end()) return it->second;
    const double f = fitness(genome, table_, cv_folds_, max_lv_);
    cache_.emplace(genome, f);
    return f;
}

const Individual& tournament_select(const std::vector<Individual>& population, std::size_t k, Rng& rng) {
    if (k < 1 || k > population.size()) throw Error("tournament size out of range");
    std::vector<std::size_t> idx(population.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // partial Fisher-Yates: the first k slots become a uniform k-subset
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::size_t best = idx[0];
    for (std::size_t i = 1; i < k; ++i) {
        const auto& cand = population[idx[i]];
        if (!cand.fitness || !population[best].fitness) throw Error("tournament over unevaluated individuals");
        if (*cand.fitness < *population[best].fitness) best = idx[i];
    }
    return population[best];
}

std::pair<Genome, Genome> single_point_crossover(const Genome& a, const Genome& b, std::size_t point) {
    if (a.size() != b.size()) throw Error("crossover of genomes with different lengths");
    if (point < 1 || point >= a.size()) throw Error("crossover point must be in [1, B-1]");
    Genome c1 = a, c2 = b;
    for (std::size_t i = point; i < a.size(); ++i) std::swap(c1[i], c2[i]);
    return {std::move(c1), std::move(c2)};
}

Genome mutate(const Genome& genome, double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0) throw Error("mutation rate must be in [0,1]");
    Genome out = genome;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& g : out)
        if (u(rng) < rate) g ^= 1u;
    return out;
}

void repair(Genome& genome, std::size_t min_bands, std::size_t max_bands, Rng& rng) {
    if (min_bands > max_bands || max_bands > genome.size()) throw Error("repair bounds infeasible");
    std::size_t count = popcount(genome);
    while (count < min_bands) {
        std::uniform_int_distribution<std::size_t> pick(0, genome.size() - count - 1);
        std::size_t target = pick(rng);
        for (auto& g : genome) {
            if (g) continue;
            if (target-- == 0) {
                g = 1;
                break;
            }
        }
        ++count;
    }
    while (count > max_bands) {
        std::uniform_int_distribution<std::size_t> pick(0, count - 1);
        std::size_t target = pick(rng);
        for (auto& g : genome) {
            if (!g) continue;
            if (target-- == 0) {
                g = 0;
                break;
            }
        }
        --count;
    }
}

namespace {

void rank(std::vector<Individual>& population) {
    std::stable_sort(population.begin(), population.end(),
                     [](const Individual& a, const Individual& b) { return *a.fitness < *b.fitness; });
}

}  // namespace

GaResult run_ga(const SpectraTable& table, const GaConfig& config) {
    table.validate();
    const std::size_t bands = table.features();
    config.validate(bands);
    if (bands < 2) throw Error("GA needs at least 2 bands");

    Rng rng(config.seed);
    FitnessCache eval(table, config.cv_folds, config.max_lv);

    std::vector<Individual> population(config.population_size);
    std::uniform_int_distribution<std::size_t> count_dist(config.min_bands, config.max_bands);
    for (auto& ind : population) {
        // random feasible genome with a uniformly drawn band count
        ind.genome.assign(bands, 0);
        const std::size_t k = count_dist(rng);
        repair(ind.genome, k, k, rng);
    }
    for (auto& ind : population) ind.fitness = eval(ind.genome);
    rank(population);

    GaResult result;
    const auto elite_count = static_cast<std::size_t>(
        std::lround(config.elitism_rate * static_cast<double>(config.population_size)));
    std::uniform_int_distribution<std::size_t> point_dist(1, bands - 1);

    for (std::size_t gen = 0; gen < config.generations; ++gen) {
        std::vector<Individual> next(population.begin(), population.begin() + static_cast<std::ptrdiff_t>(elite_count));
        while (next.size() < config.population_size) {
            const Individual& pa = tournament_select(population, config.tournament_size, rng);
            const Individual& pb = tournament_select(population, config.tournament_size, rng);
            auto [c1, c2] = single_point_crossover(pa.genome, pb.genome, point_dist(rng));
            for (Genome* child : {&c1, &c2}) {
                if (next.size() == config.population_size) break;
                Genome g = mutate(*child, config.mutation_rate, rng);
                repair(g, config.min_bands, config.max_bands, rng);
                next.push_back({std::move(g), std::nullopt});
            }
        }
        for (auto& ind : next)
            if (!ind.fitness) ind.fitness = eval(ind.genome);
        rank(next);
        population = std::move(next);
        result.history.push_back(*population.front().fitness);
    }

    result.best_genome = population.front().genome;
    result.best_fitness = *population.front().fitness;
    for (auto i : selected_indices(result.best_genome)) result.selected_wavelengths.push_back(table.wavelengths[i]);
    return result;
}

void write_ga_result(const GaResult& result, const std::filesystem::path& history_csv,
                     const std::filesystem::path& wavelengths_txt) {
    {
        CsvWriter csv(history_csv);
        csv.row({"generation", "best_fitness"});
        for (std::size_t g = 0; g < result.history.size(); ++g)
            csv.row({std::to_string(g + 1), format_number(result.history[g])});
    }
    if (wavelengths_txt.has_parent_path()) std::filesystem::create_directories(wavelengths_txt.parent_path());
    std::ofstream out(wavelengths_txt, std::ios::binary);
    if (!out) throw Error("cannot write " + wavelengths_txt.string());
    for (double wl : result.selected_wavelengths) out << format_number(wl) << "\n";
}

std::vector<double> read_wavelength_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open wavelength list " + path.string());
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(parse_number(line));
    if (out.empty()) throw Error("wavelength list " + path.string() + " is empty");
    return out;
}

}  // namespace hsr
