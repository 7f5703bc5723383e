#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "mtunet/config.hpp"
#include "mtunet/errors.hpp"
#include "mtunet/version.hpp"

namespace mtunet {

/// Every stage records what it is about to do before running and fills in
/// the wall time afterwards, so a crashed run is still diagnosable and a
/// finished one is reconstructible from the manifest alone. Two runs with
/// the same inputs differ only in wall_seconds.
struct RunManifest {
    std::string stage;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;  // resolved values, sorted keys
    std::map<std::string, std::string> paths;   // named inputs and outputs
    std::string status = "running";
    double wall_seconds = -1.0;  // -1 until finalized
};

/// The resolved stage settings as the flat key/value view the manifest
/// stores; keys match the config-file schema.
inline std::map<std::string, std::string> config_map(const StageConfig& c) {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", v);
        return std::string(buf);
    };
    std::map<std::string, std::string> m;
    m["seed"] = std::to_string(c.seed);
    m["way"] = std::to_string(c.way);
    m["shot"] = std::to_string(c.shot);
    m["query"] = std::to_string(c.query);
    m["epochs"] = std::to_string(c.epochs);
    m["lr"] = num(c.lr);
    m["lr-step"] = std::to_string(c.lr_step);
    m["lr-factor"] = num(c.lr_factor);
    m["episodes"] = std::to_string(c.episodes);
    m["val-episodes"] = std::to_string(c.val_episodes);
    m["batch"] = std::to_string(c.batch);
    m["slots"] = std::to_string(c.slots);
    m["pe-stride"] = std::to_string(c.pe_stride);
    m["jobs"] = std::to_string(c.jobs);
    m["lambda"] = num(c.lambda);
    m["e"] = num(c.expl_sign);
    m["loss"] = c.loss;
    m["area-norm"] = c.area_norm;
    m["flip-prob"] = num(c.aug.flip_prob);
    m["max-rotate"] = num(c.aug.max_rotate_deg);
    m["max-translate"] = num(c.aug.max_translate);
    m["max-scale-delta"] = num(c.aug.max_scale_delta);
    if (!c.pe_cats.empty()) {
        std::string joined;
        for (const auto& cat : c.pe_cats) joined += (joined.empty() ? "" : ",") + cat;
        m["pe-cats"] = joined;
    }
    return m;
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["stage"] = m.stage;
    j["seed"] = m.seed;
    j["version"] = version_string();
    j["config"] = m.config;
    j["paths"] = m.paths;
    j["status"] = m.status;
    j["wall_seconds"] = m.wall_seconds;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

/// Where a stage's manifest lives: inside `out` when it is a directory
/// target, as a `.manifest.json` sibling when it is a file.
inline std::string manifest_path(const std::string& out, bool out_is_dir) {
    return out_is_dir ? out + "/manifest.json" : out + ".manifest.json";
}

/// RAII wrapper: writes the "running" manifest on construction and the
/// finalized one (status + wall time) in finish().
class ManifestWriter {
public:
    ManifestWriter(RunManifest m, std::string path)
        : manifest_(std::move(m)), path_(std::move(path)),
          start_(std::chrono::steady_clock::now()) {
        const auto parent = std::filesystem::path(path_).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        write_manifest(manifest_, path_);
    }

    void finish() {
        manifest_.status = "complete";
        manifest_.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_manifest(manifest_, path_);
    }

private:
    RunManifest manifest_;
    std::string path_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace mtunet
