#ifndef POSEDIFF_CONFIG_HPP
#define POSEDIFF_CONFIG_HPP

// CLI-facing configuration: a versioned JSON schema with defaults, whole-file
// validation (every violation reported at once), and the per-run manifest.

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "autoencoder.hpp"
#include "diffusion.hpp"
#include "nets.hpp"
#include "training.hpp"

namespace posediff {

struct CliConfig {
    int schema_version = 1;
    int64_t resolution = 64;
    AutoencoderConfig autoencoder;
    UNetConfig unet;
    Stage0Config stage0;
    TrainConfig train;
    SamplerConfig sampler;  // num_steps defaults to 20
    int64_t schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

inline nlohmann::json dump_config(const CliConfig& c) {
    return {
        {"schema_version", c.schema_version},
        {"resolution", c.resolution},
        {"autoencoder", c.autoencoder.to_json()},
        {"unet", c.unet.to_json()},
        {"stage0",
         {{"steps", c.stage0.steps},
          {"batch", c.stage0.batch},
          {"lr", c.stage0.lr},
          {"seed", c.stage0.seed},
          {"kl_weight", c.stage0.kl_weight},
          {"sem_weight", c.stage0.sem_weight}}},
        {"train",
         {{"stage", c.train.stage},
          {"steps", c.train.steps},
          {"batch", c.train.batch},
          {"lr", c.train.lr},
          {"clip_length", c.train.clip_length},
          {"seed", c.train.seed}}},
        {"sampler",
         {{"num_steps", c.sampler.num_steps}, {"eta", c.sampler.eta}, {"seed", c.sampler.seed}}},
        {"schedule",
         {{"steps", c.schedule_steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
    };
}

namespace detail {

template <typename V>
void take(const nlohmann::json& j, const char* key, V& out) {
    if (j.contains(key)) {
        out = j.at(key).get<V>();
    }
}

}  // namespace detail

// Parse + fill defaults + validate. Collects every violated field before
// throwing, so a bad file reports all its problems at once.
inline CliConfig parse_config(const nlohmann::json& j) {
    CliConfig c;
    std::vector<std::string> bad;

    static const std::vector<std::string> known = {
        "schema_version", "resolution", "autoencoder", "unet",
        "stage0",         "train",      "sampler",     "schedule"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            bad.push_back("unknown field: " + it.key());
        }
    }

    try {
        detail::take(j, "schema_version", c.schema_version);
        detail::take(j, "resolution", c.resolution);
        if (j.contains("autoencoder")) {
            auto a = j.at("autoencoder");
            detail::take(a, "channels_lat", c.autoencoder.channels_lat);
            detail::take(a, "widths", c.autoencoder.widths);
            detail::take(a, "sem_n_tok", c.autoencoder.sem_n_tok);
            detail::take(a, "sem_d_emb", c.autoencoder.sem_d_emb);
            detail::take(a, "sem_width", c.autoencoder.sem_width);
            detail::take(a, "sem_input", c.autoencoder.sem_input);
            detail::take(a, "sem_thumb", c.autoencoder.sem_thumb);
        }
        if (j.contains("unet")) {
            auto u = j.at("unet");
            detail::take(u, "latent_channels", c.unet.latent_channels);
            detail::take(u, "base_channels", c.unet.base_channels);
            detail::take(u, "mults", c.unet.mults);
            detail::take(u, "heads", c.unet.heads);
            detail::take(u, "t_emb_dim", c.unet.t_emb_dim);
            detail::take(u, "d_emb", c.unet.d_emb);
            detail::take(u, "n_tok", c.unet.n_tok);
        }
        if (j.contains("stage0")) {
            auto s = j.at("stage0");
            detail::take(s, "steps", c.stage0.steps);
            detail::take(s, "batch", c.stage0.batch);
            detail::take(s, "lr", c.stage0.lr);
            detail::take(s, "seed", c.stage0.seed);
            detail::take(s, "kl_weight", c.stage0.kl_weight);
            detail::take(s, "sem_weight", c.stage0.sem_weight);
        }
        if (j.contains("train")) {
            auto t = j.at("train");
            detail::take(t, "stage", c.train.stage);
            detail::take(t, "steps", c.train.steps);
            detail::take(t, "batch", c.train.batch);
            detail::take(t, "lr", c.train.lr);
            detail::take(t, "clip_length", c.train.clip_length);
            detail::take(t, "seed", c.train.seed);
        }
        if (j.contains("sampler")) {
            auto s = j.at("sampler");
            detail::take(s, "num_steps", c.sampler.num_steps);
            detail::take(s, "eta", c.sampler.eta);
            detail::take(s, "seed", c.sampler.seed);
        }
        if (j.contains("schedule")) {
            auto s = j.at("schedule");
            detail::take(s, "steps", c.schedule_steps);
            detail::take(s, "beta_start", c.beta_start);
            detail::take(s, "beta_end", c.beta_end);
        }
    } catch (const nlohmann::json::exception& e) {
        bad.push_back(std::string("malformed value: ") + e.what());
    }

    if (c.schema_version != 1) {
        bad.push_back("schema_version: must be 1");
    }
    if (c.resolution < 16 || c.resolution % AutoencoderConfig::factor != 0) {
        bad.push_back("resolution: must be >= 16 and divisible by 8");
    }
    if (c.autoencoder.channels_lat < 1) {
        bad.push_back("autoencoder.channels_lat: must be >= 1");
    }
    if (c.autoencoder.widths.size() != 4) {
        bad.push_back("autoencoder.widths: need exactly 4 stage widths");
    }
    if (c.unet.latent_channels != c.autoencoder.channels_lat) {
        bad.push_back("unet.latent_channels: must equal autoencoder.channels_lat");
    }
    if (c.unet.mults.empty()) {
        bad.push_back("unet.mults: need at least one level");
    }
    if (c.unet.d_emb != c.autoencoder.sem_d_emb || c.unet.n_tok != c.autoencoder.sem_n_tok) {
        bad.push_back("unet.d_emb/n_tok: must match autoencoder semantic token config");
    }
    if (c.train.stage != 1 && c.train.stage != 2) {
        bad.push_back("train.stage: must be 1 or 2");
    }
    if (c.train.steps < 0) {
        bad.push_back("train.steps: must be >= 0");
    }
    if (c.train.batch < 1) {
        bad.push_back("train.batch: must be >= 1");
    }
    if (c.train.lr <= 0) {
        bad.push_back("train.lr: must be > 0");
    }
    if (c.train.stage == 2 && c.train.clip_length < 2) {
        bad.push_back("train.clip_length: stage 2 requires >= 2");
    }
    if (c.stage0.steps < 0) {
        bad.push_back("stage0.steps: must be >= 0");
    }
    if (c.stage0.batch < 1) {
        bad.push_back("stage0.batch: must be >= 1");
    }
    if (c.sampler.num_steps < 1 || c.sampler.num_steps > c.schedule_steps) {
        bad.push_back("sampler.num_steps: must be in [1, schedule.steps]");
    }
    if (c.sampler.eta < 0) {
        bad.push_back("sampler.eta: must be >= 0");
    }
    if (!(0.0 < c.beta_start && c.beta_start <= c.beta_end && c.beta_end < 1.0)) {
        bad.push_back("schedule: need 0 < beta_start <= beta_end < 1");
    }

    if (!bad.empty()) {
        throw ConfigError(bad);
    }
    return c;
}

inline CliConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open config", path);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({std::string("invalid JSON: ") + e.what()});
    }
    return parse_config(j);
}

// ------------------------------------------------------------- manifest

inline std::string iso_utc_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot hash file", path);
    }
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
    }
    return h;
}

struct RunManifest {
    std::string command;
    nlohmann::json resolved_config;
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string started_at;
    std::string finished_at;

    // Hashes every listed output file and writes atomically (tmp + rename).
    void write(const std::string& path) const {
        nlohmann::json hashes = nlohmann::json::object();
        for (const auto& out : outputs) {
            if (std::filesystem::is_regular_file(out)) {
                char hex[24];
                std::snprintf(hex, sizeof(hex), "%016llx",
                              static_cast<unsigned long long>(file_hash(out)));
                hashes[out] = hex;
            }
        }
        nlohmann::json j = {{"command", command},     {"config", resolved_config},
                            {"seed", seed},           {"inputs", inputs},
                            {"outputs", outputs},     {"artifact_hashes", hashes},
                            {"started_at", started_at}, {"finished_at", finished_at}};
        std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp);
            if (!f) {
                throw IoError("cannot write manifest", tmp);
            }
            f << j.dump(1);
        }
        std::filesystem::rename(tmp, path);
    }
};

}  // namespace posediff

#endif  // POSEDIFF_CONFIG_HPP
