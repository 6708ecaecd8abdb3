#ifndef POSEDIFF_PIPELINE_HPP
#define POSEDIFF_PIPELINE_HPP

// End-to-end animation: rescale the driving poses to the reference skeleton,
// split long sequences into overlapping windows, run reference-conditioned
// DDIM per window, blend overlapped latents, decode.

#include <filesystem>
#include <fstream>

#include "autoencoder.hpp"
#include "datagen.hpp"
#include "diffusion.hpp"
#include "nets.hpp"

namespace posediff {

struct AnimationRequest {
    std::string reference_image_path;
    PoseSequence driving;
    PoseFrame reference_pose;  // drives the skeleton-height rescale
    uint64_t seed = 0;
    int64_t resolution = 64;
    int64_t window = 24;
    int64_t overlap = 8;
};

struct AggregationPlan {
    int64_t window = 0;
    int64_t overlap = 0;
    struct Span {
        int64_t start, end;  // [start, end)
    };
    std::vector<Span> windows;
    // per frame: (window index, blend weight); weights sum to exactly 1.0
    std::vector<std::vector<std::pair<int, double>>> weights;

    nlohmann::json to_json() const {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : windows) {
            spans.push_back({s.start, s.end});
        }
        nlohmann::json w = nlohmann::json::array();
        for (const auto& fw : weights) {
            nlohmann::json row = nlohmann::json::array();
            for (const auto& [wi, wt] : fw) {
                row.push_back({wi, wt});
            }
            w.push_back(row);
        }
        return {{"window", window}, {"overlap", overlap}, {"spans", spans}, {"weights", w}};
    }
};

// ------------------------------------------------------------- rescaling

inline double skeleton_height(const PoseFrame& f) {
    double lo = f.joints[0].y, hi = f.joints[0].y;
    for (const auto& j : f.joints) {
        lo = std::min(lo, j.y);
        hi = std::max(hi, j.y);
    }
    return hi - lo;
}

// Uniform scale s = reference height / driving frame-0 height, applied about
// the frame-0 pelvis root, so that root stays put and every bone length
// scales by exactly s.
inline PoseSequence rescale_pose(const PoseSequence& driving, const PoseFrame& reference_pose) {
    if (driving.frames.empty()) {
        throw std::invalid_argument("rescale_pose: empty driving sequence");
    }
    double drive_h = skeleton_height(driving.frames[0]);
    double ref_h = skeleton_height(reference_pose);
    if (drive_h < 1e-9 || ref_h < 1e-9) {
        throw std::invalid_argument("rescale_pose: degenerate zero-height skeleton");
    }
    double s = ref_h / drive_h;
    if (s == 1.0) {
        return driving;
    }
    Vec2 anchor = driving.frames[0].joints[J_PELVIS];
    PoseSequence out = driving;
    for (auto& frame : out.frames) {
        for (auto& j : frame.joints) {
            j.x = anchor.x + s * (j.x - anchor.x);
            j.y = anchor.y + s * (j.y - anchor.y);
        }
    }
    return out;
}

// ------------------------------------------------------------- windowing

// Windows at stride W-V; the last window is right-aligned to end at N. Blend
// weights are per-window tents normalized per frame; the last contribution is
// computed as one minus the rest, so each frame's weights sum to exactly 1.
inline AggregationPlan plan_windows(int64_t n_frames, int64_t window, int64_t overlap) {
    if (n_frames < 1) {
        throw std::invalid_argument("plan_windows: need at least one frame");
    }
    if (window < 2 || overlap < 0 || overlap >= window) {
        throw std::invalid_argument("plan_windows: need W >= 2 and 0 <= V < W");
    }
    AggregationPlan plan;
    plan.window = window;
    plan.overlap = overlap;
    if (n_frames <= window) {
        plan.windows.push_back({0, n_frames});
    } else {
        int64_t stride = window - overlap;
        for (int64_t start = 0; start + window < n_frames; start += stride) {
            plan.windows.push_back({start, start + window});
        }
        plan.windows.push_back({n_frames - window, n_frames});
    }

    plan.weights.resize(static_cast<size_t>(n_frames));
    for (int64_t i = 0; i < n_frames; i++) {
        auto& fw = plan.weights[static_cast<size_t>(i)];
        double tent_sum = 0;
        std::vector<std::pair<int, double>> tents;
        for (size_t w = 0; w < plan.windows.size(); w++) {
            const auto& span = plan.windows[w];
            if (i >= span.start && i < span.end) {
                double tent = static_cast<double>(
                    std::min(i - span.start + 1, span.end - i));
                tents.push_back({static_cast<int>(w), tent});
                tent_sum += tent;
            }
        }
        double acc = 0;
        for (size_t k = 0; k < tents.size(); k++) {
            double wt = (k + 1 == tents.size()) ? 1.0 - acc : tents[k].second / tent_sum;
            acc += wt;
            fw.push_back({tents[k].first, wt});
        }
    }
    return plan;
}

// ------------------------------------------------------------- animate

struct VideoResult {
    std::vector<ImageF> frames;
    std::vector<Tensor<float>> latents;  // blended latents, one per frame
    AggregationPlan plan;
    uint64_t seed = 0;
    int64_t reference_net_runs = 0;
};

template <typename T>
VideoResult animate(const AnimationRequest& req, const ModelBundle<T>& mb,
                    const AutoencoderBundle<T>& ae, const SamplerConfig& sampler) {
    if (req.driving.frames.empty()) {
        throw std::invalid_argument("animate: empty driving pose sequence");
    }
    if (req.resolution % AutoencoderConfig::factor != 0) {
        throw std::invalid_argument("animate: resolution must be divisible by 8");
    }
    if (ae.vae.cfg.channels_lat != mb.cfg.latent_channels) {
        throw std::invalid_argument("animate: autoencoder/model latent channel mismatch");
    }
    if (ae.sem.cfg.sem_d_emb != mb.cfg.d_emb || ae.sem.cfg.sem_n_tok != mb.cfg.n_tok) {
        throw std::invalid_argument("animate: semantic token config mismatch");
    }
    ag::NoGradGuard ng;

    VideoResult result;
    result.seed = req.seed;

    // reference image -> latent + semantic tokens; reference features are
    // extracted exactly once per call
    ImageF ref_img = read_png(req.reference_image_path);
    if (ref_img.shape[0] != req.resolution || ref_img.shape[1] != req.resolution) {
        ref_img = resize_area(ref_img, req.resolution, req.resolution);
    }
    Tensor<T> ref_batch({1, req.resolution, req.resolution, 3});
    for (int64_t i = 0; i < ref_img.numel(); i++) {
        ref_batch[i] = static_cast<T>(ref_img[i]);
    }
    Tensor<T> ref_latent = ae.vae.encode(ref_batch);
    Tensor<T> tokens_t = ae.sem.encode_semantic(ref_img);
    tokens_t.shape = {1, ae.sem.cfg.sem_n_tok, ae.sem.cfg.sem_d_emb};
    auto tokens = ag::Var<T>::leaf(std::move(tokens_t));
    auto cache = mb.refnet.reference_forward(ag::Var<T>::leaf(std::move(ref_latent)), tokens);
    result.reference_net_runs++;

    // rescale driving poses to the reference skeleton, render, pose-encode
    PoseSequence poses = rescale_pose(req.driving, req.reference_pose);
    int64_t n = static_cast<int64_t>(poses.frames.size());
    int64_t hl = req.resolution / AutoencoderConfig::factor;
    int64_t wl = hl;
    int64_t cl = mb.cfg.latent_channels;
    Tensor<T> skels({n, req.resolution, req.resolution, 3});
    for (int64_t i = 0; i < n; i++) {
        ImageF sk = render_skeleton(poses.frames[static_cast<size_t>(i)], req.resolution);
        for (int64_t j = 0; j < sk.numel(); j++) {
            skels[i * sk.numel() + j] = static_cast<T>(sk[j]);
        }
    }
    Tensor<T> pose_feats = mb.pose_guider.forward(ag::Var<T>::leaf(std::move(skels))).value();

    result.plan = plan_windows(n, req.window, req.overlap);
    const auto& plan = result.plan;
    DiffusionSchedule sched = mb.schedule();
    bool use_temporal = mb.stage >= 2;

    // per-window DDIM in latent space
    std::vector<Tensor<T>> window_latents;
    for (size_t w = 0; w < plan.windows.size(); w++) {
        const auto& span = plan.windows[w];
        int64_t len = span.end - span.start;
        Tensor<T> pose_win({1, len, hl, wl, cl});
        std::memcpy(pose_win.data(), pose_feats.data() + span.start * hl * wl * cl,
                    static_cast<size_t>(len * hl * wl * cl) * sizeof(T));
        auto pose_var = ag::Var<T>::leaf(std::move(pose_win));

        auto eps_model = [&](const Tensor<T>& z, int64_t t) {
            auto pred = mb.unet.forward(ag::Var<T>::leaf(z), {t}, &cache, tokens, &pose_var,
                                        use_temporal);
            return pred.value();
        };
        Rng init = Rng::stream(req.seed, 0x57494e00u + static_cast<uint64_t>(w));
        Tensor<T> z = init.normal_tensor<T>({1, len, hl, wl, cl});
        SamplerConfig cfg = sampler;
        cfg.seed = req.seed + w;  // only used when eta > 0
        window_latents.push_back(ddim_sample_from(eps_model, std::move(z), cfg, sched));
    }

    // blend overlapped latents (convex combination; single-window frames take
    // that window's latent exactly)
    Tensor<T> blended({n, hl, wl, cl});
    int64_t per = hl * wl * cl;
    for (int64_t i = 0; i < n; i++) {
        for (const auto& [wi, wt] : plan.weights[static_cast<size_t>(i)]) {
            const auto& span = plan.windows[static_cast<size_t>(wi)];
            const T* src = window_latents[static_cast<size_t>(wi)].data() +
                           (i - span.start) * per;
            T* dst = blended.data() + i * per;
            if (wt == 1.0 && plan.weights[static_cast<size_t>(i)].size() == 1) {
                std::memcpy(dst, src, static_cast<size_t>(per) * sizeof(T));
            } else {
                for (int64_t j = 0; j < per; j++) {
                    dst[j] += static_cast<T>(wt) * src[j];
                }
            }
        }
    }

    // decode and split
    Tensor<T> decoded = ae.vae.decode(blended);
    for (int64_t i = 0; i < n; i++) {
        ImageF frame({req.resolution, req.resolution, 3});
        for (int64_t j = 0; j < frame.numel(); j++) {
            frame[j] = static_cast<float>(decoded[i * frame.numel() + j]);
        }
        result.frames.push_back(std::move(frame));
        Tensor<float> lat({hl, wl, cl});
        for (int64_t j = 0; j < per; j++) {
            lat[j] = static_cast<float>(blended[i * per + j]);
        }
        result.latents.push_back(std::move(lat));
    }
    return result;
}

// Write frames/%05d.png plus result.json (seed, plan, provenance).
inline void write_video_result(const std::string& out_dir, const VideoResult& result) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "frames", ec);
    if (ec) {
        throw IoError("cannot create output directory", out_dir);
    }
    for (size_t i = 0; i < result.frames.size(); i++) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu.png", i);
        write_png((fs::path(out_dir) / "frames" / name).string(), result.frames[i]);
    }
    nlohmann::json j = {{"seed", result.seed},
                        {"frame_count", result.frames.size()},
                        {"plan", result.plan.to_json()},
                        {"reference_net_runs", result.reference_net_runs}};
    std::ofstream f((fs::path(out_dir) / "result.json").string());
    if (!f) {
        throw IoError("cannot write result.json", out_dir);
    }
    f << j.dump(1);
}

}  // namespace posediff

#endif  // POSEDIFF_PIPELINE_HPP
