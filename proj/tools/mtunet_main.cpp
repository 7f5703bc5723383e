// mtunet command-line front end: data generation, the three training
// stages, episodic evaluation, and explanation export.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtunet/mtunet.hpp"

namespace {

using namespace mtunet;

/// Flag values for one invocation. TrainConfig fields stay unset unless the
/// flag was passed, so config-file values and defaults can fill the gaps.
struct Options {
    TrainConfig cfg;
    std::string data, config_path, out, model, split = "test";
    bool json = false;
    bool global_norm = false;
    // gen-data sizes
    std::size_t n_base = 10, n_val = 5, n_test = 5, per_class = 60, size = 32;
};

void add_config_flags(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config_path, "INI config file")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.cfg.seed, "master seed (also settable via MTUNET_SEED)");
    sub->add_option("--way", o.cfg.way, "categories per episode (K)");
    sub->add_option("--shot", o.cfg.shot, "support images per category (N)");
    sub->add_option("--query", o.cfg.query, "query images per category (M)");
}

void add_train_flags(CLI::App* sub, Options& o) {
    sub->add_option("--epochs", o.cfg.epochs, "training epochs");
    sub->add_option("--lr", o.cfg.lr, "base learning rate");
    sub->add_option("--lr-step", o.cfg.lr_step, "epochs per learning-rate decay");
    sub->add_option("--lr-factor", o.cfg.lr_factor, "learning-rate decay factor");
    sub->add_option("--batch", o.cfg.batch, "mini-batch size");
    sub->add_option("--val-episodes", o.cfg.val_episodes, "validation episodes per epoch");
    sub->add_option("--flip-prob", o.cfg.flip_prob, "augmentation: horizontal flip probability");
    sub->add_option("--max-rotate", o.cfg.max_rotate, "augmentation: max rotation (degrees)");
    sub->add_option("--max-translate", o.cfg.max_translate,
                    "augmentation: max translation (fraction)");
    sub->add_option("--max-scale-delta", o.cfg.max_scale_delta,
                    "augmentation: max scale deviation from 1");
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("MTUNET_SEED");
    if (!s || !*s) return std::nullopt;
    return detail::parse_u64(s, "MTUNET_SEED");
}

/// CLI flags > config file > env seed > stage defaults.
StageConfig resolve(const Options& o, const std::string& stage) {
    TrainConfig merged = o.cfg;
    if (!o.config_path.empty()) merged = merge_config(o.cfg, parse_config(o.config_path));
    return resolve_config(merged, stage, env_seed());
}

RunManifest make_manifest(const std::string& stage, const StageConfig& cfg,
                          std::map<std::string, std::string> paths) {
    RunManifest m;
    m.stage = stage;
    m.seed = cfg.seed;
    m.config = config_map(cfg);
    m.paths = std::move(paths);
    return m;
}

Model load_model(const std::string& path, std::size_t slots_override = 0) {
    StateDict ckpt = load_checkpoint(path);
    ModelConfig mc = infer_config(ckpt);
    if (slots_override) mc.slots = slots_override;
    Model model = Model::init(mc, 0);  // weights are overwritten by load
    model.load(ckpt);
    return model;
}

int run_gen_data(const Options& o) {
    StageConfig cfg = resolve(o, "gen-data");
    RunManifest man = make_manifest("gen-data", cfg, {{"out", o.out}});
    man.config["base-categories"] = std::to_string(o.n_base);
    man.config["val-categories"] = std::to_string(o.n_val);
    man.config["test-categories"] = std::to_string(o.n_test);
    man.config["per-class"] = std::to_string(o.per_class);
    man.config["size"] = std::to_string(o.size);
    ManifestWriter writer(man, manifest_path(o.out, true));
    generate_synthetic(o.out, o.n_base, o.n_val, o.n_test, o.per_class, o.size, cfg.seed);
    writer.finish();
    std::cout << "wrote " << (o.n_base + o.n_val + o.n_test) * o.per_class << " images under "
              << o.out << "\n";
    return 0;
}

int run_train_backbone(const Options& o) {
    StageConfig cfg = resolve(o, "backbone");
    Dataset ds = load_dataset(o.data);
    const std::size_t n_base = ds.categories("base").size();
    ModelConfig mc;
    mc.n_base = n_base;
    mc.slots = cfg.slots ? cfg.slots : std::max<std::size_t>(1, n_base / 10);

    ManifestWriter writer(make_manifest("train-backbone", cfg, {{"data", o.data}, {"out", o.out}}),
                          manifest_path(o.out, false));
    Model model = Model::init(mc, cfg.seed);
    StageResult r = train_backbone(ds, model, cfg, std::cout);
    save_checkpoint(o.out, filter_state(model.state(), {"backbone."}));
    writer.finish();
    std::cout << "best epoch " << r.best_epoch << " val_acc " << r.best_val << "; saved "
              << o.out << "\n";
    return 0;
}

int run_train_pe(const Options& o) {
    StageConfig cfg = resolve(o, "pe");
    Dataset ds = load_dataset(o.data);
    StateDict ckpt = load_checkpoint(o.model);

    auto categories = select_pe_categories(ds, cfg);
    const std::size_t z = cfg.slots ? cfg.slots : categories.size();
    if (z != categories.size())
        throw UsageError("--slots " + std::to_string(z) + " does not match the " +
                         std::to_string(categories.size()) + " selected pe categories");

    ModelConfig mc = infer_config(ckpt);
    mc.slots = z;
    Model model = Model::init(mc, cfg.seed);
    model.load(ckpt);

    ManifestWriter writer(
        make_manifest("train-pe", cfg, {{"data", o.data}, {"model", o.model}, {"out", o.out}}),
        manifest_path(o.out, false));
    StageResult r = train_pe(ds, model, categories, cfg, std::cout);
    save_checkpoint(o.out, filter_state(model.state(), {"backbone.", "pe."}));
    writer.finish();
    std::cout << "best epoch " << r.best_epoch << " val_acc " << r.best_val << "; saved "
              << o.out << "\n";
    return 0;
}

int run_train_matcher(const Options& o) {
    StageConfig cfg = resolve(o, "matcher");
    Dataset ds = load_dataset(o.data);
    // the matcher weights are fresh here, so shape from the checkpoint but
    // draw the new pm.* initialization from this run's seed
    StateDict ckpt = load_checkpoint(o.model);
    Model model = Model::init(infer_config(ckpt), cfg.seed);
    model.load(ckpt);

    ManifestWriter writer(
        make_manifest("train-matcher", cfg, {{"data", o.data}, {"model", o.model}, {"out", o.out}}),
        manifest_path(o.out, false));
    StageResult r = train_matcher(ds, model, cfg, std::cout);
    save_checkpoint(o.out, model.state());
    writer.finish();
    std::cout << "best epoch " << r.best_epoch << " val_acc " << r.best_val << "; saved "
              << o.out << "\n";
    return 0;
}

int run_eval(const Options& o) {
    StageConfig cfg = resolve(o, "eval");
    Dataset ds = load_dataset(o.data);
    Model model = load_model(o.model);

    std::optional<ManifestWriter> writer;
    if (!o.out.empty())
        writer.emplace(make_manifest("eval", cfg,
                                     {{"data", o.data}, {"model", o.model}, {"out", o.out}}),
                       manifest_path(o.out, false));

    EvalReport rep = evaluate(model, ds, o.split, cfg.episodes, cfg.way, cfg.shot, cfg.query,
                              cfg.seed, cfg.jobs);

    nlohmann::json j{{"mean_accuracy", rep.mean_accuracy},
                     {"ci95", rep.ci95},
                     {"episodes", rep.episodes},
                     {"way", cfg.way},
                     {"shot", cfg.shot},
                     {"query", cfg.query},
                     {"split", o.split}};
    if (o.json)
        std::cout << j.dump() << "\n";
    else
        std::printf("ACC %.2f \xc2\xb1 %.2f\n", 100.0 * rep.mean_accuracy, 100.0 * rep.ci95);
    if (!o.out.empty()) {
        std::ofstream os(o.out, std::ios::binary);
        if (!os) throw IoError("cannot write report: " + o.out);
        os << j.dump() << "\n";
        writer->finish();
    }
    return 0;
}

int run_explain(const Options& o) {
    StageConfig cfg = resolve(o, "explain");
    Dataset ds = load_dataset(o.data);
    Model model = load_model(o.model);

    ManifestWriter writer(
        make_manifest("explain", cfg, {{"data", o.data}, {"model", o.model}, {"out", o.out}}),
        manifest_path(o.out, true));
    Pcg32 rng(mix_seed(cfg.seed, 0xE9), 1);
    Episode ep = sample_episode(ds, o.split, cfg.way, cfg.shot, cfg.query, rng);
    MatchMatrix m = export_explanation(model, ds, ep, o.out, o.global_norm);
    writer.finish();

    if (o.json) {
        nlohmann::json j{{"out", o.out}, {"categories", m.categories}, {"scores", m.scores}};
        std::cout << j.dump() << "\n";
    } else {
        std::cout << "wrote " << m.categories.size() * 2 * (model.pe.slots() + 1)
                  << " overlays and matrix.csv under " << o.out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mtunet: explainable few-shot image classification"};
    app.set_version_flag("--version", mtunet::version_string());
    app.require_subcommand(1);

    Options o;

    auto* gen = app.add_subcommand("gen-data", "write a synthetic shape/hue/frequency dataset");
    gen->add_option("--out", o.out, "output dataset directory")->required();
    gen->add_option("--base", o.n_base, "base (training) category count");
    gen->add_option("--val", o.n_val, "validation category count");
    gen->add_option("--test", o.n_test, "test category count");
    gen->add_option("--per-class", o.per_class, "images per category");
    gen->add_option("--size", o.size, "image height and width in pixels");
    add_config_flags(gen, o);

    auto* tb = app.add_subcommand("train-backbone", "pretrain the feature backbone");
    tb->add_option("--data", o.data, "dataset root")->required();
    tb->add_option("--out", o.out, "checkpoint to write")->required();
    tb->add_option("--slots", o.cfg.slots, "pattern count to preallocate");
    add_config_flags(tb, o);
    add_train_flags(tb, o);

    auto* tp = app.add_subcommand("train-pe", "fit the pattern extractor on a frozen backbone");
    tp->add_option("--data", o.data, "dataset root")->required();
    tp->add_option("--model", o.model, "backbone checkpoint")->required();
    tp->add_option("--out", o.out, "checkpoint to write")->required();
    tp->add_option("--slots", o.cfg.slots, "pattern count z (must match selected categories)");
    tp->add_option("--pe-stride", o.cfg.pe_stride, "use every I-th base category");
    tp->add_option("--pe-cats", o.cfg.pe_cats, "explicit comma-separated category list");
    tp->add_option("--lambda", o.cfg.lambda, "area-loss weight");
    tp->add_option("--e", o.cfg.expl_sign, "explanation sign (+1 positive, -1 negative)");
    tp->add_option("--area-norm", o.cfg.area_norm, "area-loss normalization: zl or l");
    add_config_flags(tp, o);
    add_train_flags(tp, o);

    auto* tm = app.add_subcommand("train-matcher", "fit the matcher on frozen backbone + PE");
    tm->add_option("--data", o.data, "dataset root")->required();
    tm->add_option("--model", o.model, "pattern-extractor checkpoint")->required();
    tm->add_option("--out", o.out, "checkpoint to write")->required();
    tm->add_option("--episodes", o.cfg.episodes, "training episodes per epoch");
    tm->add_option("--loss", o.cfg.loss, "episode loss: bce or softmax_ce");
    tm->add_option("--jobs", o.cfg.jobs, "validation worker threads");
    add_config_flags(tm, o);
    add_train_flags(tm, o);

    auto* ev = app.add_subcommand("eval", "episodic evaluation of a trained model");
    ev->add_option("--data", o.data, "dataset root")->required();
    ev->add_option("--model", o.model, "full model checkpoint")->required();
    ev->add_option("--out", o.out, "also write the report as JSON");
    ev->add_option("--episodes", o.cfg.episodes, "number of evaluation episodes");
    ev->add_option("--split", o.split, "dataset split to evaluate on");
    ev->add_option("--jobs", o.cfg.jobs, "worker threads");
    ev->add_flag("--json", o.json, "print the final metrics as single-line JSON");
    add_config_flags(ev, o);

    auto* ex = app.add_subcommand("explain", "export attention overlays and a matching matrix");
    ex->add_option("--data", o.data, "dataset root")->required();
    ex->add_option("--model", o.model, "full model checkpoint")->required();
    ex->add_option("--out", o.out, "output directory")->required();
    ex->add_option("--split", o.split, "dataset split to sample the episode from");
    ex->add_flag("--global-norm", o.global_norm,
                 "normalize all maps of an image on a shared scale");
    ex->add_flag("--json", o.json, "print the matrix as single-line JSON");
    add_config_flags(ex, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return run_gen_data(o);
        if (tb->parsed()) return run_train_backbone(o);
        if (tp->parsed()) return run_train_pe(o);
        if (tm->parsed()) return run_train_matcher(o);
        if (ev->parsed()) return run_eval(o);
        if (ex->parsed()) return run_explain(o);
    } catch (const mtunet::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const mtunet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
