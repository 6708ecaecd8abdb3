// posediff: pose-guided sprite animation with reference-conditioned latent
// diffusion. Subcommands cover the full pipeline: dataset generation, the
// three training stages, animation, and evaluation.

#include <omp.h>

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "posediff/config.hpp"
#include "posediff/metrics.hpp"
#include "posediff/pipeline.hpp"
#include "posediff/training.hpp"

namespace fs = std::filesystem;
using namespace posediff;

namespace {

// exit codes, documented in --help and the README
constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;
constexpr int kExitInvalidArgument = 5;
constexpr int kExitPrecondition = 6;

void apply_env() {
    if (const char* dev = std::getenv("POSEDIFF_DEVICE")) {
        std::string d = dev;
        if (d != "cpu") {
            throw ConfigError({"POSEDIFF_DEVICE: only 'cpu' is available, got '" + d + "'"});
        }
    }
    if (const char* th = std::getenv("POSEDIFF_THREADS")) {
        int n = std::atoi(th);
        if (n > 0) {
            omp_set_num_threads(n);
        }
    }
}

std::string clip_dir_name(int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05lld", static_cast<long long>(i));
    return buf;
}

std::vector<ClipRecord> load_dataset(const std::string& root) {
    fs::path clips = fs::path(root) / "clips";
    if (!fs::is_directory(clips)) {
        throw IoError("dataset has no clips/ directory", root);
    }
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(clips)) {
        if (e.is_directory()) {
            dirs.push_back(e.path().string());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw IoError("dataset is empty", clips.string());
    }
    std::vector<ClipRecord> out;
    for (const auto& d : dirs) {
        out.push_back(load_clip(d));
    }
    return out;
}

void write_loss_csv(const std::string& path, const LossRecord& rec) {
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write loss csv", path);
    }
    f << "step,loss\n";
    for (const auto& [step, loss] : rec.entries) {
        f << step << "," << loss << "\n";
    }
}

struct ManifestScope {
    RunManifest m;
    std::string path;

    ManifestScope(std::string command, std::string manifest_path)
        : path(std::move(manifest_path)) {
        m.command = std::move(command);
        m.started_at = iso_utc_now();
    }
    void finish() {
        m.finished_at = iso_utc_now();
        m.write(path);
    }
};

// ------------------------------------------------------------- gen-data

struct GenDataArgs {
    int64_t clips = 5;
    int64_t frames = 24;
    uint64_t seed = 0;
    std::string out;
    int64_t resolution = 64;
    double amplitude = 0.04;
    double fps = 12.0;
    int64_t ref_index = -1;  // -1: seeded random per clip
};

int cmd_gen_data(const GenDataArgs& a) {
    fs::create_directories(fs::path(a.out) / "clips");
    ManifestScope ms("gen-data", (fs::path(a.out) / "run_manifest.json").string());
    ms.m.seed = a.seed;
    ms.m.resolved_config = {{"clips", a.clips},   {"frames", a.frames},
                            {"seed", a.seed},     {"resolution", a.resolution},
                            {"amplitude", a.amplitude}, {"fps", a.fps}};
    for (int64_t i = 0; i < a.clips; i++) {
        uint64_t clip_seed = a.seed + static_cast<uint64_t>(i);
        auto character = gen_character(clip_seed);
        auto poses = gen_pose_sequence(clip_seed, a.frames, a.amplitude, a.fps);
        int64_t ref = a.ref_index >= 0
                          ? a.ref_index
                          : Rng::stream(clip_seed, 0x52454649u).uniform_int(0, a.frames - 1);
        std::string dir = (fs::path(a.out) / "clips" / clip_dir_name(i)).string();
        emit_clip(character, poses, dir, ref, a.resolution);
        ms.m.outputs.push_back(dir + "/clip.json");
    }
    ms.finish();
    std::cout << "wrote " << a.clips << " clips under " << a.out << "/clips\n";
    return kExitOk;
}

// ------------------------------------------------------------- training

struct TrainArgs {
    std::string data;
    std::string out;
    std::string config_path;
    std::string vae_path;   // stage 1/2
    std::string ckpt_path;  // stage 2
    int64_t steps = -1;     // flag overrides; -1 keeps the config value
    int64_t batch = -1;
    double lr = -1;
    int64_t seed = -1;
    int64_t clip_length = -1;
};

CliConfig resolve_config(const TrainArgs& a) {
    CliConfig cfg = a.config_path.empty() ? CliConfig{} : load_config(a.config_path);
    if (a.steps >= 0) {
        cfg.stage0.steps = a.steps;
        cfg.train.steps = a.steps;
    }
    if (a.batch >= 0) {
        cfg.stage0.batch = a.batch;
        cfg.train.batch = a.batch;
    }
    if (a.lr > 0) {
        cfg.stage0.lr = a.lr;
        cfg.train.lr = a.lr;
    }
    if (a.seed >= 0) {
        cfg.stage0.seed = static_cast<uint64_t>(a.seed);
        cfg.train.seed = static_cast<uint64_t>(a.seed);
    }
    if (a.clip_length >= 2) {
        cfg.train.clip_length = a.clip_length;
    }
    return cfg;
}

int cmd_train_vae(const TrainArgs& a) {
    CliConfig cfg = resolve_config(a);
    auto clips = load_dataset(a.data);
    std::vector<ImageF> frames;
    for (const auto& clip : clips) {
        for (const auto& p : clip.frame_paths) {
            frames.push_back(read_png(p));
        }
    }
    AutoencoderBundle<float> bundle(cfg.autoencoder, cfg.stage0.seed);
    auto rec = train_autoencoder(frames, bundle, cfg.stage0);
    bundle.save(a.out);
    write_loss_csv(a.out + ".loss.csv", rec);

    ManifestScope ms("train-vae", a.out + ".manifest.json");
    ms.m.seed = cfg.stage0.seed;
    ms.m.resolved_config = dump_config(cfg);
    ms.m.inputs.push_back(a.data);
    ms.m.outputs = {a.out, a.out + ".loss.csv"};
    ms.finish();
    std::cout << "stage-0 done: " << rec.entries.size() << " steps, final loss "
              << (rec.entries.empty() ? 0.0 : rec.entries.back().second) << "\n";
    return kExitOk;
}

int cmd_train_stage(const TrainArgs& a, int stage) {
    CliConfig cfg = resolve_config(a);
    cfg.train.stage = stage;
    if (!fs::exists(a.vae_path)) {
        throw PreconditionError("frozen autoencoder checkpoint not found: " + a.vae_path);
    }
    auto ae = AutoencoderBundle<float>::load(a.vae_path);
    auto clips = prepare_clips(load_dataset(a.data), ae);

    ModelBundle<float> mb;
    if (stage == 1) {
        if (ae.vae.cfg.channels_lat != cfg.unet.latent_channels ||
            ae.sem.cfg.sem_d_emb != cfg.unet.d_emb || ae.sem.cfg.sem_n_tok != cfg.unet.n_tok) {
            throw std::invalid_argument(
                "autoencoder checkpoint does not match the unet config");
        }
        mb = ModelBundle<float>(cfg.unet, cfg.train.seed);
        mb.schedule_steps = cfg.schedule_steps;
        mb.beta_start = cfg.beta_start;
        mb.beta_end = cfg.beta_end;
    } else {
        if (!fs::exists(a.ckpt_path)) {
            throw PreconditionError("stage-1 checkpoint not found: " + a.ckpt_path);
        }
        mb = ModelBundle<float>::load(a.ckpt_path);
    }

    uint64_t ae_hash = ae.weights_hash();
    LossRecord rec = stage == 1 ? train_stage1(clips, mb, cfg.train)
                                : train_stage2(clips, mb, cfg.train);
    if (ae.weights_hash() != ae_hash) {
        throw std::logic_error("frozen-encoder contract violated");
    }
    mb.save(a.out);
    write_loss_csv(a.out + ".loss.csv", rec);

    ManifestScope ms(stage == 1 ? "train-stage1" : "train-stage2", a.out + ".manifest.json");
    ms.m.seed = cfg.train.seed;
    ms.m.resolved_config = dump_config(cfg);
    ms.m.inputs = {a.data, a.vae_path};
    if (stage == 2) {
        ms.m.inputs.push_back(a.ckpt_path);
    }
    ms.m.outputs = {a.out, a.out + ".loss.csv"};
    ms.finish();
    std::cout << "stage-" << stage << " done: " << rec.entries.size() << " steps, final loss "
              << (rec.entries.empty() ? 0.0 : rec.entries.back().second) << "\n";
    return kExitOk;
}

// ------------------------------------------------------------- animate

struct AnimateArgs {
    std::string ckpt, vae, ref, poses, out;
    std::string ref_poses;
    int64_t ref_pose_index = -1;
    uint64_t seed = 0;
    int64_t steps = 20;  // DDIM default
    double eta = 0.0;
    int64_t window = 24;
    int64_t overlap = 8;
    int64_t resolution = 64;
};

PoseSequence load_pose_file(const std::string& path, int64_t* reference_index) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open pose file", path);
    }
    auto j = nlohmann::json::parse(f);
    if (reference_index != nullptr) {
        *reference_index = j.value("reference_index", 0);
    }
    return pose_sequence_from_json(j.at("poses"));
}

int cmd_animate(const AnimateArgs& a) {
    if (!fs::exists(a.ckpt)) {
        throw IoError("checkpoint not found", a.ckpt);
    }
    if (!fs::exists(a.vae)) {
        throw IoError("autoencoder checkpoint not found", a.vae);
    }
    auto mb = ModelBundle<float>::load(a.ckpt);
    auto ae = AutoencoderBundle<float>::load(a.vae);

    AnimationRequest req;
    req.reference_image_path = a.ref;
    int64_t driving_ref_index = 0;
    req.driving = load_pose_file(a.poses, &driving_ref_index);
    if (!a.ref_poses.empty()) {
        int64_t idx = 0;
        PoseSequence rp = load_pose_file(a.ref_poses, &idx);
        if (a.ref_pose_index >= 0) {
            idx = a.ref_pose_index;
        }
        if (idx < 0 || idx >= static_cast<int64_t>(rp.frames.size())) {
            throw std::invalid_argument("animate: reference pose index out of range");
        }
        req.reference_pose = rp.frames[static_cast<size_t>(idx)];
    } else {
        int64_t idx = a.ref_pose_index >= 0 ? a.ref_pose_index : driving_ref_index;
        if (idx < 0 || idx >= static_cast<int64_t>(req.driving.frames.size())) {
            throw std::invalid_argument("animate: reference pose index out of range");
        }
        req.reference_pose = req.driving.frames[static_cast<size_t>(idx)];
    }
    req.seed = a.seed;
    req.resolution = a.resolution;
    req.window = a.window;
    req.overlap = a.overlap;

    SamplerConfig sc{a.steps, a.eta, a.seed};
    auto result = animate(req, mb, ae, sc);
    write_video_result(a.out, result);

    ManifestScope ms("animate", (fs::path(a.out) / "run_manifest.json").string());
    ms.m.seed = a.seed;
    ms.m.resolved_config = {{"steps", a.steps},   {"eta", a.eta},
                            {"window", a.window}, {"overlap", a.overlap},
                            {"resolution", a.resolution}};
    ms.m.inputs = {a.ckpt, a.vae, a.ref, a.poses};
    ms.m.outputs.push_back((fs::path(a.out) / "result.json").string());
    for (size_t i = 0; i < result.frames.size(); i++) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu.png", i);
        ms.m.outputs.push_back((fs::path(a.out) / "frames" / name).string());
    }
    ms.finish();
    std::cout << "animated " << result.frames.size() << " frames -> " << a.out << "\n";
    return kExitOk;
}

// ------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred, gt, vae, out;
};

std::vector<std::string> frame_files(const std::string& dir) {
    fs::path p(dir);
    if (fs::is_directory(p / "frames")) {
        p /= "frames";
    }
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".png") {
            files.push_back(e.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw IoError("no frames found", dir);
    }
    return files;
}

std::vector<std::vector<std::string>> clip_sets(const std::string& dir) {
    fs::path clips = fs::path(dir) / "clips";
    std::vector<std::vector<std::string>> sets;
    if (fs::is_directory(clips)) {
        std::vector<std::string> dirs;
        for (const auto& e : fs::directory_iterator(clips)) {
            if (e.is_directory()) {
                dirs.push_back(e.path().string());
            }
        }
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) {
            sets.push_back(frame_files(d));
        }
    } else {
        sets.push_back(frame_files(dir));
    }
    return sets;
}

int cmd_eval(const EvalArgs& a) {
    auto pred_sets = clip_sets(a.pred);
    auto gt_sets = clip_sets(a.gt);
    if (pred_sets.size() != gt_sets.size()) {
        throw std::invalid_argument("eval: clip count mismatch between pred and gt");
    }

    std::optional<AutoencoderBundle<float>> ae;
    if (!a.vae.empty()) {
        if (!fs::exists(a.vae)) {
            throw IoError("autoencoder checkpoint not found", a.vae);
        }
        ae = AutoencoderBundle<float>::load(a.vae);
    }

    double ssim_sum = 0, psnr_sum = 0, lp_sum = 0;
    int64_t frame_count = 0;
    std::vector<std::vector<ImageF>> pred_clips, gt_clips;
    nlohmann::json per_clip = nlohmann::json::array();
    for (size_t c = 0; c < pred_sets.size(); c++) {
        if (pred_sets[c].size() != gt_sets[c].size()) {
            throw std::invalid_argument("eval: frame count mismatch in clip " +
                                        std::to_string(c));
        }
        std::vector<ImageF> pf, gf;
        for (size_t i = 0; i < pred_sets[c].size(); i++) {
            pf.push_back(read_png(pred_sets[c][i]));
            gf.push_back(read_png(gt_sets[c][i]));
        }
        nlohmann::json clip_entry = {{"frames", pf.size()}};
        double cs = 0, cp = 0, cl = 0;
        for (size_t i = 0; i < pf.size(); i++) {
            cs += ssim(pf[i], gf[i]);
            cp += psnr(pf[i], gf[i]);
            if (ae) {
                cl += perceptual_dist(pf[i], gf[i], ae->sem);
            }
        }
        clip_entry["ssim"] = cs / pf.size();
        clip_entry["psnr"] = cp / pf.size();
        if (ae) {
            clip_entry["perceptual_dist"] = cl / pf.size();
        }
        per_clip.push_back(clip_entry);
        ssim_sum += cs;
        psnr_sum += cp;
        lp_sum += cl;
        frame_count += static_cast<int64_t>(pf.size());
        pred_clips.push_back(std::move(pf));
        gt_clips.push_back(std::move(gf));
    }

    nlohmann::json report = {{"ssim", ssim_sum / frame_count},
                             {"psnr", psnr_sum / frame_count},
                             {"clips", per_clip},
                             {"frame_count", frame_count}};
    if (ae) {
        report["perceptual_dist"] = lp_sum / frame_count;
        if (pred_clips.size() >= 2) {
            report["fvd_proxy"] = fvd_proxy(pred_clips, gt_clips, ae->sem);
        }
    }
    report["note"] = "perceptual_dist and fvd_proxy use this repo's frozen encoder; "
                     "not comparable to published LPIPS/FVD numbers";

    {
        std::ofstream f(a.out);
        if (!f) {
            throw IoError("cannot write report", a.out);
        }
        f << report.dump(1);
    }
    ManifestScope ms("eval", a.out + ".manifest.json");
    ms.m.resolved_config = {{"pred", a.pred}, {"gt", a.gt}};
    ms.m.inputs = {a.pred, a.gt};
    ms.m.outputs = {a.out};
    ms.finish();
    std::cout << "ssim " << report["ssim"].get<double>() << "  psnr "
              << report["psnr"].get<double>() << " dB  (" << frame_count << " frames) -> "
              << a.out << "\n";
    return kExitOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        apply_env();
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const PreconditionError& e) {
        std::cerr << "precondition error: " << e.what() << "\n";
        return kExitPrecondition;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitInvalidArgument;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "posediff: pose-guided sprite animation with reference-conditioned latent diffusion\n"
        "exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 invalid argument, 6 missing "
        "precondition, 1 other"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "generate synthetic sprite clips");
    gen->add_option("--clips", gd.clips, "number of clips")->default_val(5);
    gen->add_option("--frames", gd.frames, "frames per clip")->default_val(24);
    gen->add_option("--seed", gd.seed, "base seed")->default_val(0);
    gen->add_option("--out", gd.out, "output dataset root")->required();
    gen->add_option("--resolution", gd.resolution)->default_val(64);
    gen->add_option("--amplitude", gd.amplitude, "max per-frame joint displacement")
        ->default_val(0.04);
    gen->add_option("--fps", gd.fps)->default_val(12.0);
    gen->add_option("--ref-index", gd.ref_index, "fixed reference frame (-1: seeded random)")
        ->default_val(-1);

    TrainArgs tv, t1, t2;
    auto add_train_opts = [](CLI::App* cmd, TrainArgs& a, bool vae, bool ckpt) {
        cmd->add_option("--data", a.data, "dataset root")->required();
        cmd->add_option("--out", a.out, "output checkpoint path")->required();
        cmd->add_option("--config", a.config_path, "JSON config file");
        if (vae) {
            cmd->add_option("--vae", a.vae_path, "frozen autoencoder checkpoint")->required();
        }
        if (ckpt) {
            cmd->add_option("--ckpt", a.ckpt_path, "stage-1 checkpoint")->required();
        }
        cmd->add_option("--steps", a.steps, "override steps");
        cmd->add_option("--batch", a.batch, "override batch size");
        cmd->add_option("--lr", a.lr, "override learning rate");
        cmd->add_option("--seed", a.seed, "override seed");
        cmd->add_option("--clip-length", a.clip_length, "override stage-2 clip length");
    };
    add_train_opts(app.add_subcommand("train-vae", "stage 0: autoencoder + semantic encoder"),
                   tv, false, false);
    add_train_opts(app.add_subcommand("train-stage1", "stage 1: denoiser on single frames"),
                   t1, true, false);
    add_train_opts(app.add_subcommand("train-stage2", "stage 2: temporal layers on clips"),
                   t2, true, true);

    AnimateArgs an;
    auto* ani = app.add_subcommand("animate", "animate a reference image with a pose sequence");
    ani->add_option("--ckpt", an.ckpt, "model checkpoint")->required();
    ani->add_option("--vae", an.vae, "autoencoder checkpoint")->required();
    ani->add_option("--ref", an.ref, "reference image (png)")->required();
    ani->add_option("--poses", an.poses, "driving poses (clip.json)")->required();
    ani->add_option("--out", an.out, "output directory")->required();
    ani->add_option("--ref-poses", an.ref_poses, "pose file for the reference skeleton");
    ani->add_option("--ref-pose-index", an.ref_pose_index, "reference pose frame index");
    ani->add_option("--seed", an.seed)->default_val(0);
    ani->add_option("--steps", an.steps, "DDIM steps")->default_val(20);
    ani->add_option("--eta", an.eta)->default_val(0.0);
    ani->add_option("--window", an.window)->default_val(24);
    ani->add_option("--overlap", an.overlap)->default_val(8);
    ani->add_option("--resolution", an.resolution)->default_val(64);

    EvalArgs ev;
    auto* evc = app.add_subcommand("eval", "compare generated frames against ground truth");
    evc->add_option("--pred", ev.pred, "prediction directory")->required();
    evc->add_option("--gt", ev.gt, "ground-truth directory")->required();
    evc->add_option("--vae", ev.vae, "autoencoder checkpoint (enables proxy metrics)");
    evc->add_option("--out", ev.out, "report path")->default_val("report.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (gen->parsed()) {
        return guarded([&] { return cmd_gen_data(gd); });
    }
    if (app.get_subcommand("train-vae")->parsed()) {
        return guarded([&] { return cmd_train_vae(tv); });
    }
    if (app.get_subcommand("train-stage1")->parsed()) {
        return guarded([&] { return cmd_train_stage(t1, 1); });
    }
    if (app.get_subcommand("train-stage2")->parsed()) {
        return guarded([&] { return cmd_train_stage(t2, 2); });
    }
    if (ani->parsed()) {
        return guarded([&] { return cmd_animate(an); });
    }
    if (evc->parsed()) {
        return guarded([&] { return cmd_eval(ev); });
    }
    return kExitUsage;
}
