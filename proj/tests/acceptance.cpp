// Acceptance gate: ten release checks, each printing one
//   criterion <n> PASS|FAIL [-- note]
// line. The binary exits nonzero if any check fails. argv[1] must be the
// path to the mtunet CLI executable; the pipeline checks (5-8) drive it on a
// synthetic dataset under a scratch directory and compare the artifacts it
// writes byte for byte.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mtunet/mtunet.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace mtunet;

namespace {

int g_failures = 0;
std::string g_cli;
fs::path g_scratch;

void report(int n, bool pass, const std::string& note = "") {
    if (!pass) ++g_failures;
    std::printf("criterion %d %s%s%s\n", n, pass ? "PASS" : "FAIL", note.empty() ? "" : " -- ",
                note.c_str());
    std::fflush(stdout);
}

/// Runs one check; an escaped exception fails the criterion instead of
/// aborting the whole gate.
template <typename Fn>
void criterion(int n, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        report(n, false, std::string("exception: ") + e.what());
    }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool files_equal(const fs::path& a, const fs::path& b) {
    return fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b);
}

/// Runs the CLI with stdout+stderr captured to `log`; throws on a nonzero
/// exit, quoting the tail of the log.
void run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = g_cli + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    const int code = (rc != -1 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
    if (code != 0) {
        std::string tail;
        if (fs::exists(log)) {
            tail = slurp(log);
            if (tail.size() > 300) tail = "..." + tail.substr(tail.size() - 300);
            std::replace(tail.begin(), tail.end(), '\n', ' ');
        }
        throw IoError("`mtunet " + args + "` exited " + std::to_string(code) + ": " + tail);
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient suite
// ---------------------------------------------------------------------------

struct GradCase {
    std::vector<TensorPtr> leaves;
    std::function<TensorPtr(Graph&)> forward;
};

/// Weighted sum with fixed coefficients: keeps per-element gradients alive
/// where a plain sum would cancel (softmax rows always sum to one).
TensorPtr weighted_sum(Graph& g, const TensorPtr& x, const TensorPtr& w) {
    return sum_all(g, hadamard(g, x, w));
}

TensorPtr coeffs(const Shape& shape, Pcg32& rng) {
    auto w = Tensor::make(shape);
    gradcheck::randomize(w, rng, 0.5, 1.5);
    return w;
}

/// Worst relative gradient error over `reps` fresh instances of one case.
double worst_of(const std::function<GradCase(Pcg32&)>& make, int reps, Pcg32& rng) {
    double worst = 0.0;
    for (int i = 0; i < reps; ++i) {
        auto c = make(rng);
        worst = std::max(worst, gradcheck::max_rel_error(c.leaves, c.forward));
    }
    return worst;
}

GradCase case_matmul(Pcg32& rng) {
    auto a = Tensor::make({3, 4}), b = Tensor::make({4, 2});
    gradcheck::randomize(a, rng);
    gradcheck::randomize(b, rng);
    auto w = coeffs({3, 2}, rng);
    return {{a, b}, [=](Graph& g) { return weighted_sum(g, matmul(g, a, b), w); }};
}

GradCase case_elementwise(Pcg32& rng) {
    auto x = Tensor::make({2, 3}), y = Tensor::make({2, 3});
    gradcheck::randomize(x, rng);
    gradcheck::randomize(y, rng);
    // Keep x away from the ReLU kink so finite differences stay valid.
    for (auto& v : x->data) v += v >= 0 ? 0.25 : -0.25;
    auto w = coeffs({2, 3}, rng);
    return {{x, y}, [=](Graph& g) {
                auto mixed = add(g, hadamard(g, relu(g, x), sigmoid(g, y)),
                                 scale(g, tanh(g, x), 0.5));
                return weighted_sum(g, mixed, w);
            }};
}

GradCase case_softmax(Pcg32& rng) {
    auto x = Tensor::make({3, 4});
    gradcheck::randomize(x, rng, -2.0, 2.0);
    auto w = coeffs({3, 4}, rng);
    return {{x}, [=](Graph& g) { return weighted_sum(g, softmax_rows(g, x), w); }};
}

GradCase case_conv_s1(Pcg32& rng) {
    auto in = Tensor::make({2, 5, 5}), k = Tensor::make({3, 2, 3, 3}), b = Tensor::make({3});
    gradcheck::randomize(in, rng);
    gradcheck::randomize(k, rng);
    gradcheck::randomize(b, rng);
    auto w = coeffs({3, 5, 5}, rng);
    return {{in, k, b}, [=](Graph& g) {
                return weighted_sum(g, bias_channels(g, conv2d(g, in, k, 1, 1), b), w);
            }};
}

GradCase case_conv_s2(Pcg32& rng) {
    auto in = Tensor::make({2, 5, 5}), k = Tensor::make({3, 2, 3, 3});
    gradcheck::randomize(in, rng);
    gradcheck::randomize(k, rng);
    auto w = coeffs({3, 2, 2}, rng);
    return {{in, k}, [=](Graph& g) { return weighted_sum(g, conv2d(g, in, k, 2, 0), w); }};
}

GradCase case_pool_avg(Pcg32& rng) {
    auto in = Tensor::make({2, 4, 4});
    gradcheck::randomize(in, rng);
    auto w = coeffs({2, 2, 2}, rng);
    return {{in}, [=](Graph& g) {
                return weighted_sum(g, pool2d(g, PoolKind::avg, in, 2, 2), w);
            }};
}

GradCase case_gru(Pcg32& rng) {
    auto x = Tensor::make({2, 3}), h = Tensor::make({2, 3});
    gradcheck::randomize(x, rng);
    gradcheck::randomize(h, rng);
    auto cell = std::make_shared<GruCell>();
    for (auto* m : {&cell->w_r, &cell->u_r, &cell->w_u, &cell->u_u, &cell->w_h, &cell->u_h}) {
        *m = Tensor::make({3, 3});
        gradcheck::randomize(*m, rng);
    }
    for (auto* b : {&cell->b_r, &cell->b_u, &cell->b_h}) {
        *b = Tensor::make({3});
        gradcheck::randomize(*b, rng);
    }
    std::vector<TensorPtr> leaves = {x,          h,          cell->w_r, cell->u_r,
                                     cell->b_r,  cell->w_u,  cell->u_u, cell->b_u,
                                     cell->w_h,  cell->u_h,  cell->b_h};
    auto w = coeffs({2, 3}, rng);
    return {leaves, [=](Graph& g) { return weighted_sum(g, gru_cell(g, x, h, *cell), w); }};
}

GradCase case_modulate(Pcg32& rng) {
    auto abar = Tensor::make({2, 4});
    gradcheck::randomize(abar, rng, -3.0, 3.0);
    auto w = coeffs({2, 4}, rng);
    return {{abar}, [=](Graph& g) { return weighted_sum(g, modulate(g, abar), w); }};
}

GradCase case_extract_overall(Pcg32& rng) {
    auto fmap = Tensor::make({3, 2, 3}), abar = Tensor::make({2, 6});
    gradcheck::randomize(fmap, rng);
    gradcheck::randomize(abar, rng, -2.0, 2.0);
    auto w = coeffs({3}, rng);
    return {{fmap, abar}, [=](Graph& g) {
                return weighted_sum(g, extract_overall(g, fmap, modulate(g, abar)), w);
            }};
}

/// Zero-initialized biases can park a ReLU pre-activation exactly on the
/// kink when a whole layer goes dead at these tiny widths; random biases put
/// the instance in general position where the loss is differentiable.
void randomize_biases(MatcherParams& pm, Pcg32& rng) {
    for (auto& b : {pm.fc1_bias, pm.fc2_bias, pm.fc3_bias})
        gradcheck::randomize(b, rng, -0.3, 0.3);
}

GradCase case_match_score(Pcg32& rng) {
    Pcg32 init_rng(rng.next(), 3);
    auto pm = std::make_shared<MatcherParams>(MatcherParams::init(4, init_rng));
    randomize_biases(*pm, rng);
    auto vq = Tensor::make({4}), vk = Tensor::make({4});
    gradcheck::randomize(vq, rng);
    gradcheck::randomize(vk, rng);
    std::vector<TensorPtr> leaves = {vq,            vk,           pm->fc1_weight, pm->fc1_bias,
                                     pm->fc2_weight, pm->fc2_bias, pm->fc3_weight, pm->fc3_bias};
    return {leaves, [=](Graph& g) { return match_score(g, vq, vk, *pm); }};
}

GradCase case_episode_loss(Pcg32& rng) {
    Pcg32 init_rng(rng.next(), 3);
    auto pm = std::make_shared<MatcherParams>(MatcherParams::init(4, init_rng));
    randomize_biases(*pm, rng);
    std::vector<TensorPtr> vs;
    for (int i = 0; i < 4; ++i) {
        vs.push_back(Tensor::make({4}));
        gradcheck::randomize(vs.back(), rng);
    }
    std::vector<TensorPtr> leaves = vs;
    for (auto& t : {pm->fc1_weight, pm->fc1_bias, pm->fc2_weight, pm->fc2_bias, pm->fc3_weight,
                    pm->fc3_bias})
        leaves.push_back(t);
    return {leaves, [=](Graph& g) {
                // two queries vs two centroids: q0 belongs to cat 0, q1 to cat 1
                std::vector<TensorPtr> scores = {
                    match_score(g, vs[0], vs[2], *pm), match_score(g, vs[0], vs[3], *pm),
                    match_score(g, vs[1], vs[2], *pm), match_score(g, vs[1], vs[3], *pm)};
                return episode_loss(g, scores, {1.0, 0.0, 0.0, 1.0});
            }};
}

GradCase case_scouter(Pcg32& rng) {
    auto abar = Tensor::make({3, 6});
    gradcheck::randomize(abar, rng, -2.0, 2.0);
    const std::size_t label = rng.next_below(3);
    const double sign = (rng.next() & 1u) ? 1.0 : -1.0;
    const std::string norm = (rng.next() & 1u) ? "zl" : "l";
    return {{abar}, [=](Graph& g) {
                return scouter_loss(g, modulate(g, abar), label, 0.7, sign, norm);
            }};
}

GradCase case_pe_forward(Pcg32& rng) {
    // z=2, d=4, l=6 (2x3 grid), T=3, channels c=3.
    Pcg32 init_rng(rng.next(), 3);
    auto pe = std::make_shared<PeParams>(PeParams::init(3, 4, 2, 3, init_rng));
    // same general-position trick: no zero bias may sit a dead ReLU layer on
    // its kink (the projection MLPs have two ReLU stages each)
    for (auto& b : {pe->squeeze_bias, pe->pos_bias, pe->gq.b1, pe->gq.b2, pe->gq.b3, pe->gk.b1,
                    pe->gk.b2, pe->gk.b3, pe->gru.b_r, pe->gru.b_u, pe->gru.b_h})
        gradcheck::randomize(b, rng, -0.3, 0.3);
    auto fmap = Tensor::make({3, 2, 3});
    gradcheck::randomize(fmap, rng);
    std::vector<TensorPtr> leaves = {fmap,         pe->squeeze_weight, pe->squeeze_bias,
                                     pe->pos_weight, pe->pos_bias,     pe->patterns};
    for (const auto* mlp : {&pe->gq, &pe->gk})
        for (const auto& t : {mlp->w1, mlp->b1, mlp->w2, mlp->b2, mlp->w3, mlp->b3})
            leaves.push_back(t);
    for (const auto& t : {pe->gru.w_r, pe->gru.u_r, pe->gru.b_r, pe->gru.w_u, pe->gru.u_u,
                          pe->gru.b_u, pe->gru.w_h, pe->gru.u_h, pe->gru.b_h})
        leaves.push_back(t);
    auto wa = coeffs({2, 6}, rng);
    auto wv = coeffs({3}, rng);
    return {leaves, [=](Graph& g) {
                auto out = pe_forward(g, fmap, *pe);
                return add(g, weighted_sum(g, out.attention, wa), weighted_sum(g, out.v, wv));
            }};
}

void check_gradients() {
    const auto t0 = Clock::now();
    Pcg32 rng(0xACCE97, 12);
    struct Entry {
        const char* name;
        std::function<GradCase(Pcg32&)> make;
        int reps;
    };
    const std::vector<Entry> suite = {
        {"matmul", case_matmul, 20},
        {"elementwise", case_elementwise, 20},
        {"softmax_rows", case_softmax, 20},
        {"conv2d s1p1", case_conv_s1, 10},
        {"conv2d s2p0", case_conv_s2, 10},
        {"pool2d avg", case_pool_avg, 20},
        {"gru_cell", case_gru, 20},
        {"modulate", case_modulate, 20},
        {"extract_overall", case_extract_overall, 20},
        {"match_score", case_match_score, 20},
        {"episode_loss", case_episode_loss, 20},
        {"scouter_loss", case_scouter, 20},
        {"pe_forward", case_pe_forward, 20},
    };
    double worst = 0.0;
    std::string worst_name = "-";
    for (const auto& entry : suite) {
        const double err = worst_of(entry.make, entry.reps, rng);
        if (err > worst) {
            worst = err;
            worst_name = entry.name;
        }
    }
    const double secs = seconds_since(t0);
    char note[160];
    std::snprintf(note, sizeof note, "max rel err %.3g (%s), %.1f s", worst, worst_name.c_str(),
                  secs);
    report(1, worst < 1e-5 && secs < 30.0, note);
}

// ---------------------------------------------------------------------------
// Criterion 2: modulation invariants
// ---------------------------------------------------------------------------

void check_modulate_invariants() {
    Pcg32 rng(0xACCE97, 22);
    bool ok = true;
    for (int rep = 0; rep < 1000 && ok; ++rep) {
        auto abar = Tensor::make({3, 4});
        gradcheck::randomize(abar, rng, -6.0, 6.0);
        Graph g;
        auto m = modulate(g, abar);
        for (std::size_t r = 0; r < 3 && ok; ++r) {
            double row_sum = 0.0, soft_denom = 0.0;
            for (std::size_t c = 0; c < 4; ++c) soft_denom += std::exp(abar->at(r, c));
            for (std::size_t c = 0; c < 4; ++c) {
                const double v = m->at(r, c);
                const double sig = 1.0 / (1.0 + std::exp(-abar->at(r, c)));
                const double soft = std::exp(abar->at(r, c)) / soft_denom;
                ok = ok && v > 0.0 && v < 1.0 && v <= sig && v <= soft;
                row_sum += v;
            }
            ok = ok && row_sum < 1.0;
        }
    }
    // Exact spot value: sigma(0)*softmax = 1/2 * 1/4 and 3/4 * 3/4.
    auto abar = Tensor::make({1, 2});
    abar->data = {0.0, std::log(3.0)};
    Graph g;
    auto m = modulate(g, abar);
    const bool exact =
        std::abs(m->data[0] - 0.125) <= 1e-12 && std::abs(m->data[1] - 0.5625) <= 1e-12;
    report(2, ok && exact, ok ? (exact ? "" : "exact-value check failed")
                              : "bound violated on random matrices");
}

// ---------------------------------------------------------------------------
// Criterion 3: episodic protocol
// ---------------------------------------------------------------------------

void check_episode_protocol() {
    const fs::path root = g_scratch / "episodes";
    generate_synthetic(root.string(), 6, 2, 2, 20, 16, 7);
    auto ds = load_dataset(root.string());
    Pcg32 rng(9001, 1);
    const auto t0 = Clock::now();
    bool ok = true;
    for (int i = 0; i < 10000 && ok; ++i) {
        auto ep = sample_episode(ds, "base", 5, 1, 15, rng);
        ok = ok && ep.support.size() == 5 && ep.query.size() == 75 && ep.categories.size() == 5;
        std::unordered_set<std::size_t> support_ids;
        std::vector<std::size_t> s_count(5, 0), q_count(5, 0);
        for (auto [id, label] : ep.support) {
            support_ids.insert(id);
            ok = ok && label < 5 && ds.record(id).category == ep.categories[label];
            ++s_count[label];
        }
        for (auto [id, label] : ep.query) {
            ok = ok && !support_ids.count(id);
            ok = ok && label < 5 && ds.record(id).category == ep.categories[label];
            ++q_count[label];
        }
        for (std::size_t k = 0; k < 5; ++k) ok = ok && s_count[k] == 1 && q_count[k] == 15;
    }
    const double secs = seconds_since(t0);
    char note[96];
    std::snprintf(note, sizeof note, "10000 episodes in %.2f s", secs);
    report(3, ok && secs < 10.0, note);
}

// ---------------------------------------------------------------------------
// Criterion 4: confidence-interval oracle
// ---------------------------------------------------------------------------

void check_ci_oracle() {
    Pcg32 rng(0xACCE97, 44);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.next_below(399);
        std::vector<double> accs(n);
        for (auto& a : accs) a = rng.next_double();
        const auto r = make_report(accs);
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        var /= static_cast<double>(n - 1);
        const double expect = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
        worst = std::max(worst, std::abs(r.ci95 - expect));
        worst = std::max(worst, std::abs(r.mean_accuracy - mean));
    }
    // Frozen hand value: accuracies {1, 0} -> 1.96 * sqrt(1/2) / sqrt(2) = 0.98.
    const double hand = ci95_halfwidth({1.0, 0.0});
    const bool exact = hand == 0.9799999999999999;
    char note[96];
    std::snprintf(note, sizeof note, "max |diff| %.3g", worst);
    report(4, worst <= 1e-12 && exact, note);
}

// ---------------------------------------------------------------------------
// Criteria 5-8: end-to-end CLI pipeline
// ---------------------------------------------------------------------------

struct PipelineRun {
    fs::path data, backbone, pe, matcher, report1, report5, explain_dir;
    double acc1 = 0.0, acc5 = 0.0;
    double timed_seconds = 0.0;  // gen-data through the 1-shot eval
};

double read_accuracy(const fs::path& report) {
    auto j = nlohmann::json::parse(slurp(report));
    return j.at("mean_accuracy").get<double>();
}

PipelineRun run_pipeline(const fs::path& root) {
    fs::create_directories(root);
    PipelineRun r;
    r.data = root / "data";
    r.backbone = root / "backbone.mtck";
    r.pe = root / "pe.mtck";
    r.matcher = root / "matcher.mtck";
    r.report1 = root / "report_1shot.json";
    r.report5 = root / "report_5shot.json";
    r.explain_dir = root / "explain";
    const std::string data = r.data.string();

    const auto t0 = Clock::now();
    run_cli("gen-data --out " + data + " --base 10 --val 5 --test 5 --per-class 60 --size 32"
            " --seed 1",
            root / "gen.log");
    // lr 2e-3 (vs the stage default 1e-3) compensates the short 15-epoch
    // budget: conv+ReLU homogeneity lets kernels grow into an O(1) feature
    // scale, which the attention and matcher stages need to train.
    run_cli("train-backbone --data " + data + " --out " + r.backbone.string() +
                " --seed 1 --epochs 15 --lr 0.002 --val-episodes 100",
            root / "backbone.log");
    run_cli("train-pe --data " + data + " --model " + r.backbone.string() + " --out " +
                r.pe.string() + " --seed 1 --epochs 15 --pe-stride 2",
            root / "pe.log");
    run_cli("train-matcher --data " + data + " --model " + r.pe.string() + " --out " +
                r.matcher.string() + " --seed 1 --epochs 5 --episodes 200 --query 5"
                " --val-episodes 200",
            root / "matcher.log");
    run_cli("eval --data " + data + " --model " + r.matcher.string() +
                " --split test --way 5 --shot 1 --query 15 --episodes 500 --seed 1 --out " +
                r.report1.string(),
            root / "eval1.log");
    r.timed_seconds = seconds_since(t0);

    run_cli("eval --data " + data + " --model " + r.matcher.string() +
                " --split test --way 5 --shot 5 --query 15 --episodes 500 --seed 1 --out " +
                r.report5.string(),
            root / "eval5.log");
    run_cli("explain --data " + data + " --model " + r.matcher.string() +
                " --split test --way 5 --shot 1 --query 1 --seed 1 --out " +
                r.explain_dir.string(),
            root / "explain.log");
    r.acc1 = read_accuracy(r.report1);
    r.acc5 = read_accuracy(r.report5);
    return r;
}

void check_pipeline(std::optional<PipelineRun>& out) {
    auto r = run_pipeline(g_scratch / "run1");
    char note[160];
    std::snprintf(note, sizeof note, "1-shot %.4f, 5-shot %.4f, %.1f min", r.acc1, r.acc5,
                  r.timed_seconds / 60.0);
    report(5, r.acc1 >= 0.45 && r.acc5 >= r.acc1 && r.timed_seconds < 15.0 * 60.0, note);
    out = std::move(r);
}

void check_determinism(const PipelineRun& run1, std::optional<PipelineRun>& out) {
    auto run2 = run_pipeline(g_scratch / "run2");
    std::vector<std::string> bad;
    auto compare = [&](const fs::path& a, const fs::path& b) {
        if (!files_equal(a, b)) bad.push_back(a.filename().string());
    };
    compare(run1.backbone, run2.backbone);
    compare(run1.pe, run2.pe);
    compare(run1.matcher, run2.matcher);
    compare(run1.report1, run2.report1);
    compare(run1.report5, run2.report5);
    std::size_t exported = 0;
    for (const auto& entry : fs::directory_iterator(run1.explain_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension();
        if (ext != ".ppm" && ext != ".csv") continue;  // run manifests may carry wall time
        ++exported;
        compare(entry.path(), run2.explain_dir / entry.path().filename());
    }
    std::string note = std::to_string(exported) + " explanation files compared";
    if (!bad.empty()) {
        note = "differs: ";
        for (const auto& name : bad) note += name + " ";
    }
    report(6, bad.empty() && exported > 0, note);
    out = std::move(run2);
}

std::map<std::string, TensorPtr> state_map(const StateDict& s) {
    std::map<std::string, TensorPtr> m;
    for (const auto& [name, t] : s) m.emplace(name, t);
    return m;
}

bool same_bytes(const TensorPtr& a, const TensorPtr& b) {
    return a->shape == b->shape &&
           std::memcmp(a->data.data(), b->data.data(), a->data.size() * sizeof(double)) == 0;
}

void check_stage_freezing(const PipelineRun& run) {
    auto backbone = state_map(load_checkpoint(run.backbone.string()));
    auto pe = state_map(load_checkpoint(run.pe.string()));
    auto matcher = state_map(load_checkpoint(run.matcher.string()));
    bool ok = !backbone.empty();
    std::string why;
    // train_pe must keep every backbone tensor bit-identical and add only pe.*
    for (const auto& [name, t] : backbone) {
        auto it = pe.find(name);
        if (it == pe.end() || !same_bytes(t, it->second)) {
            ok = false;
            why = "pe stage changed " + name;
        }
    }
    for (const auto& [name, t] : pe)
        if (!backbone.count(name) && name.rfind("pe.", 0) != 0) {
            ok = false;
            why = "pe stage added " + name;
        }
    // train_matcher must keep backbone+pe tensors and add only pm.*
    for (const auto& [name, t] : pe) {
        auto it = matcher.find(name);
        if (it == matcher.end() || !same_bytes(t, it->second)) {
            ok = false;
            why = "matcher stage changed " + name;
        }
    }
    for (const auto& [name, t] : matcher)
        if (!pe.count(name) && name.rfind("pm.", 0) != 0) {
            ok = false;
            why = "matcher stage added " + name;
        }
    report(7, ok, ok ? std::to_string(backbone.size()) + " -> " + std::to_string(pe.size()) +
                           " -> " + std::to_string(matcher.size()) + " tensors"
                     : why);
}

/// Parses matrix.csv (header row, then one category per row) into raw scores.
std::vector<std::vector<double>> read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // category name
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

void check_explanations(const PipelineRun& run) {
    std::size_t support_maps = 0, query_maps = 0;
    for (const auto& entry : fs::directory_iterator(run.explain_dir)) {
        const std::string name = entry.path().filename().string();
        if (!name.ends_with(".ppm")) continue;
        if (name.rfind("support_", 0) == 0) ++support_maps;
        if (name.rfind("query_", 0) == 0) ++query_maps;
    }
    // K=5 categories, z=5 patterns: K*(z+1) overlays per side.
    bool ok = support_maps == 30 && query_maps == 30;
    std::string why;
    if (!ok) why = std::to_string(support_maps) + "/" + std::to_string(query_maps) + " maps";

    auto matrix = read_matrix_csv(run.explain_dir / "matrix.csv");
    ok = ok && matrix.size() == 5;
    for (const auto& row : matrix) {
        ok = ok && row.size() == 5;
        for (double v : row) ok = ok && v >= 0.0 && v <= 100.0;
    }
    if (why.empty() && !ok) why = "matrix.csv out of range";

    // Zero matcher weights force sigma(0): every matrix entry becomes 50.0.
    auto state = load_checkpoint(run.matcher.string());
    for (auto& [name, t] : state)
        if (name.rfind("pm.", 0) == 0) std::fill(t->data.begin(), t->data.end(), 0.0);
    const fs::path zero_ckpt = g_scratch / "zero_pm.mtck";
    const fs::path zero_dir = g_scratch / "explain_zero";
    save_checkpoint(zero_ckpt.string(), state);
    run_cli("explain --data " + run.data.string() + " --model " + zero_ckpt.string() +
                " --split test --way 5 --shot 1 --query 1 --seed 1 --out " + zero_dir.string(),
            g_scratch / "explain_zero.log");
    auto zeroed = read_matrix_csv(zero_dir / "matrix.csv");
    ok = ok && zeroed.size() == 5;
    for (const auto& row : zeroed)
        for (double v : row) ok = ok && v == 50.0;
    if (why.empty() && !ok) why = "zero-weight matrix is not all 50.0";
    report(8, ok, why);
}

// ---------------------------------------------------------------------------
// Criterion 9: PCG32 reference sequence
// ---------------------------------------------------------------------------

void check_pcg32() {
    // Frozen before the build from the PCG reference implementation,
    // seed 42 / stream 54.
    static constexpr std::uint32_t kExpected[10] = {
        0xa15c02b7u, 0x7b47f409u, 0xba1d3330u, 0x83d2f293u, 0xbfa4784bu,
        0xcbed606eu, 0xbfc6a3adu, 0x812fff6du, 0xe61f305au, 0xf9384b90u,
    };
    Pcg32 rng(42, 54);
    bool ok = true;
    for (auto expected : kExpected) ok = ok && rng.next() == expected;
    report(9, ok);
}

// ---------------------------------------------------------------------------
// Criterion 10: pattern-permutation property
// ---------------------------------------------------------------------------

void check_permutation() {
    Pcg32 rng(0xACCE97, 1010);
    bool ok = true;
    for (int rep = 0; rep < 50 && ok; ++rep) {
        const std::size_t z = 3, d = 3, c = 2;
        Pcg32 init_rng(rng.next(), 5);
        auto pe = PeParams::init(c, d, z, 2 + rep % 2, init_rng);
        auto fmap = Tensor::make({c, 2, 2});
        gradcheck::randomize(fmap, rng);

        // Random permutation of the pattern rows.
        std::vector<std::size_t> perm = {0, 1, 2};
        for (std::size_t i = 0; i < z; ++i)
            std::swap(perm[i], perm[i + rng.next_below(static_cast<std::uint32_t>(z - i))]);
        auto permuted = PeParams(pe);
        permuted.patterns = Tensor::make({z, d});
        for (std::size_t i = 0; i < z; ++i)
            for (std::size_t j = 0; j < d; ++j)
                permuted.patterns->at(i, j) = pe.patterns->at(perm[i], j);

        Graph g1, g2;
        auto out1 = pe_forward(g1, fmap, pe);
        auto out2 = pe_forward(g2, fmap, permuted);
        for (std::size_t i = 0; i < c; ++i)
            ok = ok && std::abs(out1.v->data[i] - out2.v->data[i]) <= 1e-10;
        for (std::size_t i = 0; i < z && ok; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                ok = ok && std::abs(out2.attention->at(i, j) -
                                    out1.attention->at(perm[i], j)) <= 1e-10;

        // Classification downstream of V must not move either.
        Pcg32 pm_rng(rng.next(), 9);
        auto pm = MatcherParams::init(c, pm_rng);
        std::vector<TensorPtr> centroids;
        for (int k = 0; k < 3; ++k) {
            centroids.push_back(Tensor::make({c}));
            gradcheck::randomize(centroids.back(), rng);
        }
        auto classify = [&](const TensorPtr& v) {
            Graph g;
            std::vector<double> scores;
            for (const auto& vk : centroids)
                scores.push_back(match_score(g, v, vk, pm)->data[0]);
            return classify_query(scores);
        };
        ok = ok && classify(out1.v) == classify(out2.v);
    }
    report(10, ok);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path-to-mtunet-cli>\n");
        return 2;
    }
    g_cli = argv[1];
    g_scratch = fs::temp_directory_path() / "mtunet_acceptance";
    std::error_code ec;
    fs::remove_all(g_scratch, ec);
    fs::create_directories(g_scratch);

    criterion(1, check_gradients);
    criterion(2, check_modulate_invariants);
    criterion(3, check_episode_protocol);
    criterion(4, check_ci_oracle);

    std::optional<PipelineRun> run1, run2;
    criterion(5, [&] { check_pipeline(run1); });
    criterion(6, [&] {
        if (!run1) throw IoError("pipeline run unavailable");
        check_determinism(*run1, run2);
    });
    criterion(7, [&] {
        if (!run1) throw IoError("pipeline run unavailable");
        check_stage_freezing(*run1);
    });
    criterion(8, [&] {
        if (!run1) throw IoError("pipeline run unavailable");
        check_explanations(*run1);
    });

    criterion(9, check_pcg32);
    criterion(10, check_permutation);

    if (g_failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criteria failed\n", g_failures);
    return 1;
}
