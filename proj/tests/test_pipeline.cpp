#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hsr/pipeline.hpp"

using namespace hsr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "hsr_test_pipeline" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

const char* kTinyConfig = R"(
[synth]
scenes = 20
seed = 3
[ga]
population = 12
generations = 3
[plsr]
max_lv = 5
[train]
epochs = 1
iterations = 2
batch = 1
patch = 16
[hscnnd]
depth = 2
[hrnet]
depth = 1
[mstpp]
channels = 8
)";

}  // namespace

TEST_CASE("config parsing") {
    const Config c = Config::parse("top = 1\n# comment\n[a]\nx = 2.5\n; other\nname = otsu\nlist = 1, 2,3\nflag = yes\n");
    CHECK(c.get_int("", "top", 0) == 1);
    CHECK(c.get_double("a", "x", 0) == 2.5);
    CHECK(c.get_string("a", "name", "") == "otsu");
    CHECK(c.get_doubles("a", "list", {}) == std::vector<double>{1, 2, 3});
    CHECK(c.get_bool("a", "flag", false));
    CHECK(c.get_size("a", "absent", 7) == 7);
    CHECK_FALSE(c.has("b", "x"));
    CHECK_THROWS_AS(c.get_double("a", "name", 0), Error);
    CHECK_THROWS_AS(Config::parse("[a\nx=1\n"), Error);
    CHECK_THROWS_AS(Config::parse("[a]\njunk\n"), Error);
}

TEST_CASE("environment overrides") {
    CHECK(Config::env_name("ga", "mutation_rate") == "GA_MUTATION_RATE");
    CHECK(Config::env_name("map", "range-min") == "MAP_RANGE_MIN");
    Config c = Config::parse("[ga]\npopulation = 20\n");
    std::string a = "GA_POPULATION=44", b = "UNRELATED=1";
    char* env[] = {a.data(), b.data(), nullptr};
    c.apply_environment(env);
    CHECK(c.get_size("ga", "population", 0) == 44);
}

TEST_CASE("seeds") {
    PipelineContext ctx;
    ctx.config = Config::parse("[ga]\nseed = 12\n");
    CHECK(ctx.seed("ga", 1) == 12);
    CHECK(ctx.seed("synth", 5) == 5);
    ctx.seed_override = 99;
    CHECK(ctx.seed("ga", 1) == ctx.seed("ga", 2));
    CHECK(ctx.seed("ga", 1) != ctx.seed("synth", 1));
}

TEST_CASE("missing artifacts name their producer") {
    PipelineContext ctx;
    ctx.out = fresh_dir("missing");
    try {
        run_subcommand("calibrate", ctx);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("missing") == 0);
        CHECK(msg.find("run `hsr_cli synth` first") != std::string::npos);
    }
    CHECK_THROWS_WITH_AS(run_subcommand("fit-plsr", ctx), doctest::Contains("synth"), Error);
    // with a manifest present the next missing input is the spectra table
    std::ofstream(ctx.out / "manifest.csv") << "id,attribute\ns000,20\n";
    CHECK_THROWS_WITH_AS(run_subcommand("fit-plsr", ctx), doctest::Contains("extract-spectra"), Error);
    CHECK_THROWS_AS(run_subcommand("no-such-stage", ctx), Error);
}

TEST_CASE("subcommand order") {
    const auto& s = subcommands();
    REQUIRE(s.size() == 13);
    CHECK(s.front() == "synth");
    CHECK(s.back() == "report");
}

TEST_CASE("model spec round trip") {
    const ModelSpec spec = ModelSpec::toy(Architecture::MstPlusPlus, 31);
    const fs::path p = fresh_dir("spec") / "spec.txt";
    std::vector<double> grid;
    for (int i = 0; i < 31; ++i) grid.push_back(400.0 + 20.0 * i);
    write_model_spec(spec, grid, p);
    std::vector<double> wl;
    const ModelSpec back = read_model_spec(p, &wl);
    CHECK(back.architecture == spec.architecture);
    CHECK(back.base_channels == spec.base_channels);
    CHECK(back.heads == spec.heads);
    CHECK(back.out_bands == 31);
    CHECK(wl == grid);
    std::vector<double> shortgrid{400, 500};
    write_model_spec(spec, shortgrid, p);
    CHECK_THROWS_AS(read_model_spec(p, &wl), Error);
}

TEST_CASE("small end-to-end run") {
    PipelineContext ctx;
    ctx.config = Config::parse(kTinyConfig);
    ctx.out = fresh_dir("e2e");
    for (const auto& s : subcommands()) {
        CAPTURE(s);
        REQUIRE_NOTHROW(run_subcommand(s, ctx));
    }
    CHECK(first_line(ctx.out / "manifest.csv") == "id,attribute");
    CHECK(first_line(ctx.out / "plsr/full_metrics.csv") == kPlsrHeader);
    CHECK(first_line(ctx.out / "plsr/ga_metrics.csv") == kPlsrHeader);
    CHECK(first_line(ctx.out / "report/table2.csv") == "Method,MRAE_val,RMSE_val,MRAE_test,RMSE_test,PSNR_test");
    CHECK(first_line(ctx.out / "report/cost.csv") == "Method,Params,MACs_64,MACs_512,PSNR_test");
    CHECK(fs::exists(ctx.out / "raw/s019.hdr"));
    CHECK(fs::exists(ctx.out / "masks/s000.pbm"));
    CHECK(fs::exists(ctx.out / "shap/importance.svg"));
    CHECK(fs::exists(ctx.out / "maps/range.txt"));
    for (const char* slug : {"hscnn-d", "hrnet", "mst-pp"}) {
        CHECK(fs::exists(ctx.out / "models" / slug / "params.txt"));
        CHECK(fs::exists(ctx.out / "spectra" / (std::string("recon_") + slug + ".csv")));
    }

    // split sizes
    std::ifstream split(ctx.out / "split.csv");
    std::string line;
    std::getline(split, line);
    std::map<std::string, int> counts;
    while (std::getline(split, line)) ++counts[line.substr(line.find(',') + 1)];
    CHECK(counts["train"] == 12);
    CHECK(counts["validation"] == 4);
    CHECK(counts["test"] == 4);

    // seven selected wavelengths
    std::istringstream wl(slurp(ctx.out / "ga/wavelengths.txt"));
    int n = 0;
    for (double w; wl >> w;) ++n;
    CHECK(n == 7);

    // rerunning a stage reproduces its output
    const std::string before = slurp(ctx.out / "plsr/ga_metrics.csv");
    run_subcommand("fit-plsr", ctx);
    CHECK(slurp(ctx.out / "plsr/ga_metrics.csv") == before);
}

TEST_CASE("command-line tool") {
    const char* cli = std::getenv("HSR_CLI");
    if (!cli) {
        MESSAGE("HSR_CLI not set; skipping");
        return;
    }
    const fs::path dir = fresh_dir("cli");
    const fs::path log = dir / "log.txt";
    const std::string base = std::string("\"") + cli + "\" --out \"" + (dir / "out").string() + "\" ";
    CHECK(std::system((base + "--help > \"" + log.string() + "\" 2>&1").c_str()) == 0);
    for (const auto& s : subcommands()) CHECK(slurp(log).find(s) != std::string::npos);
    const int rc = std::system((base + "calibrate > \"" + log.string() + "\" 2>&1").c_str());
    CHECK(rc != 0);
    CHECK(slurp(log).find("run `hsr_cli synth` first") != std::string::npos);
    CHECK(std::system((base + "--config /nonexistent.ini synth > \"" + log.string() + "\" 2>&1").c_str()) != 0);
}
