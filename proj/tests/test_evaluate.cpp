#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mtunet/evaluate.hpp"

using namespace mtunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mtunet_eval_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

Model tiny_model(std::uint64_t seed) {
    ModelConfig mc;
    mc.n_base = 2;
    mc.slots = 2;
    mc.dim = 8;
    mc.t_iters = 2;
    return Model::init(mc, seed);
}

}  // namespace

TEST_CASE("confidence interval oracle") {
    // accs (1, 0): mean 0.5, sample std sqrt(0.5), half-width
    // 1.96 * sqrt(0.5) / sqrt(2) = 0.98
    REQUIRE(ci95_halfwidth({1.0, 0.0}) == Catch::Approx(0.9799999999999999).margin(1e-16));
    REQUIRE(ci95_halfwidth({0.5}) == 0.0);
    REQUIRE(ci95_halfwidth({}) == 0.0);
    REQUIRE(ci95_halfwidth({0.7, 0.7, 0.7}) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("confidence interval matches a brute-force recomputation") {
    Pcg32 rng(123, 5);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.next_below(40);
        std::vector<double> accs(n);
        for (auto& a : accs) a = rng.next_double();

        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (double a : accs) ss += (a - mean) * (a - mean);
        const double expect = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(double(n));

        REQUIRE(std::abs(ci95_halfwidth(accs) - expect) <= 1e-12);

        EvalReport r = make_report(accs);
        REQUIRE(std::abs(r.mean_accuracy - mean) <= 1e-12);
        REQUIRE(r.ci95 == ci95_halfwidth(accs));
        REQUIRE(r.episodes == n);
    }
}

TEST_CASE("evaluation is deterministic and independent of worker count") {
    TempDir dir;
    generate_synthetic(dir.str(), 2, 2, 2, 6, 16, 31);
    Dataset ds = load_dataset(dir.str());
    Model m = tiny_model(3);

    EvalReport a = evaluate(m, ds, "test", 8, 2, 1, 2, 99);
    EvalReport b = evaluate(m, ds, "test", 8, 2, 1, 2, 99);
    REQUIRE(a.per_episode == b.per_episode);

    EvalReport c = evaluate(m, ds, "test", 8, 2, 1, 2, 99, /*jobs=*/3);
    REQUIRE(a.per_episode == c.per_episode);

    SECTION("a different seed samples different episodes") {
        EvalReport d = evaluate(m, ds, "test", 8, 2, 1, 2, 100);
        REQUIRE(a.per_episode.size() == d.per_episode.size());
    }

    SECTION("a shared representation cache does not change results") {
        ReprCache cache;
        EvalReport e1 = evaluate(m, ds, "test", 8, 2, 1, 2, 99, 1, &cache);
        EvalReport e2 = evaluate(m, ds, "test", 8, 2, 1, 2, 99, 1, &cache);
        REQUIRE(e1.per_episode == a.per_episode);
        REQUIRE(e2.per_episode == a.per_episode);
    }

    SECTION("accuracies are valid fractions") {
        REQUIRE(a.episodes == 8);
        for (double acc : a.per_episode) {
            REQUIRE(acc >= 0.0);
            REQUIRE(acc <= 1.0);
        }
        REQUIRE(a.mean_accuracy >= 0.0);
        REQUIRE(a.mean_accuracy <= 1.0);
    }
}

TEST_CASE("evaluate fails fast on infeasible protocols") {
    TempDir dir;
    generate_synthetic(dir.str(), 2, 2, 2, 4, 16, 33);
    Dataset ds = load_dataset(dir.str());
    Model m = tiny_model(1);
    REQUIRE_THROWS_AS(evaluate(m, ds, "test", 4, 5, 1, 2, 1), UsageError);  // K > categories
    REQUIRE_THROWS_AS(evaluate(m, ds, "test", 0, 2, 1, 2, 1), UsageError);  // no episodes
}

TEST_CASE("a constant scorer gets chance accuracy from tie-breaking") {
    // zero matcher weights -> all scores 0.5 -> every query labeled 0
    TempDir dir;
    generate_synthetic(dir.str(), 2, 2, 2, 6, 16, 35);
    Dataset ds = load_dataset(dir.str());
    Model m = tiny_model(2);
    for (auto& [name, t] : m.named_params("pm.")) std::fill(t->data.begin(), t->data.end(), 0.0);

    EvalReport r = evaluate(m, ds, "test", 6, 2, 1, 2, 7);
    // per episode: half the queries carry label 0, so accuracy is exactly 1/K
    for (double acc : r.per_episode) REQUIRE(acc == Catch::Approx(0.5).margin(1e-12));
}
