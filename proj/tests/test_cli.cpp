#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "posediff/config.hpp"

using namespace posediff;
namespace fs = std::filesystem;

#ifndef POSEDIFF_CLI_PATH
#define POSEDIFF_CLI_PATH "posediff"
#endif

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(POSEDIFF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path scratch() {
    auto p = fs::temp_directory_path() / "posediff_cli_test";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("load_config: minimal file gets defaults filled") {
    auto dir = scratch();
    auto path = (dir / "minimal.json").string();
    {
        std::ofstream f(path);
        f << "{}";
    }
    auto cfg = load_config(path);
    CHECK(cfg.sampler.num_steps == 20);  // DDIM default
    CHECK(cfg.schedule_steps == 1000);
    CHECK(cfg.resolution == 64);
    CHECK(cfg.unet.base_channels == 32);
    CHECK(cfg.unet.mults == std::vector<int64_t>{1, 2});
}

TEST_CASE("load_config: violations are all reported with field names") {
    auto dir = scratch();
    auto path = (dir / "bad.json").string();
    {
        std::ofstream f(path);
        f << R"({"train": {"stage": 3, "lr": -1}, "resolution": 30, "bogus": 1})";
    }
    try {
        load_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        bool has_stage = false, has_lr = false, has_res = false, has_unknown = false;
        for (const auto& v : e.violations()) {
            has_stage = has_stage || v.find("train.stage") != std::string::npos;
            has_lr = has_lr || v.find("train.lr") != std::string::npos;
            has_res = has_res || v.find("resolution") != std::string::npos;
            has_unknown = has_unknown || v.find("bogus") != std::string::npos;
        }
        CHECK(has_stage);
        CHECK(has_lr);
        CHECK(has_res);
        CHECK(has_unknown);
    }
}

TEST_CASE("load_config round-trip: dump(load(cfg)) is canonical") {
    auto dir = scratch();
    auto path = (dir / "rt.json").string();
    {
        std::ofstream f(path);
        f << R"({"resolution": 32, "train": {"steps": 5}})";
    }
    auto cfg = load_config(path);
    auto canonical = dump_config(cfg);
    auto path2 = (dir / "rt2.json").string();
    {
        std::ofstream f(path2);
        f << canonical.dump();
    }
    auto cfg2 = load_config(path2);
    CHECK(dump_config(cfg2) == canonical);
}

TEST_CASE("cli: gen-data writes the requested clip count and a run manifest") {
    auto dir = scratch() / "ds";
    fs::remove_all(dir);
    int rc = run_cli("gen-data --clips 3 --frames 4 --seed 1 --out " + dir.string() +
                     " --resolution 32");
    CHECK(rc == 0);
    int count = 0;
    for (const auto& e : fs::directory_iterator(dir / "clips")) {
        count += e.is_directory() ? 1 : 0;
    }
    CHECK(count == 3);
    CHECK(fs::exists(dir / "run_manifest.json"));

    std::ifstream mf(dir / "run_manifest.json");
    auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest.at("command") == "gen-data");
    CHECK(manifest.at("artifact_hashes").size() == 3);
}

TEST_CASE("cli: missing checkpoint maps to the io-error exit code") {
    auto dir = scratch() / "ds";
    int rc = run_cli("animate --ckpt missing.bin --vae also_missing.bin --ref r.png --poses " +
                     (dir / "clips/00000/clip.json").string() + " --out " +
                     (scratch() / "v").string());
    CHECK(rc == 4);
}

TEST_CASE("cli: unknown subcommand and bad flags map to the usage exit code") {
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("gen-data --no-such-flag 1") == 2);
}

TEST_CASE("cli: identity eval reports ssim 1 and the psnr cap") {
    auto dir = scratch() / "ds";
    auto report = scratch() / "report.json";
    int rc = run_cli("eval --pred " + (dir / "clips/00000").string() + " --gt " +
                     (dir / "clips/00000").string() + " --out " + report.string());
    CHECK(rc == 0);
    std::ifstream f(report);
    auto j = nlohmann::json::parse(f);
    CHECK(j.at("ssim").get<double>() == doctest::Approx(1.0));
    CHECK(j.at("psnr").get<double>() == 100.0);
}

TEST_CASE("cli: reruns with the same arguments reproduce the artifact hashes") {
    auto a = scratch() / "repro_a";
    auto b = scratch() / "repro_b";
    fs::remove_all(a);
    fs::remove_all(b);
    CHECK(run_cli("gen-data --clips 2 --frames 3 --seed 9 --out " + a.string() +
                  " --resolution 32") == 0);
    CHECK(run_cli("gen-data --clips 2 --frames 3 --seed 9 --out " + b.string() +
                  " --resolution 32") == 0);
    std::ifstream fa(a / "run_manifest.json"), fb(b / "run_manifest.json");
    auto ma = nlohmann::json::parse(fa);
    auto mb = nlohmann::json::parse(fb);
    std::vector<std::string> ha, hb;
    for (const auto& [path, hash] : ma.at("artifact_hashes").items()) {
        ha.push_back(hash.get<std::string>());
    }
    for (const auto& [path, hash] : mb.at("artifact_hashes").items()) {
        hb.push_back(hash.get<std::string>());
    }
    std::sort(ha.begin(), ha.end());
    std::sort(hb.begin(), hb.end());
    CHECK(ha == hb);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("cli: bad config file maps to the config exit code") {
    auto dir = scratch();
    auto cfg = dir / "bad_cli.json";
    {
        std::ofstream f(cfg);
        f << R"({"train": {"stage": 7}})";
    }
    auto ds = dir / "ds";
    int rc = run_cli("train-vae --data " + ds.string() + " --out " + (dir / "x.pdck").string() +
                     " --config " + cfg.string());
    CHECK(rc == 3);
}
