#ifndef POSEDIFF_NETS_HPP
#define POSEDIFF_NETS_HPP

// Network assembly: the denoising UNet, the reference encoder (identical
// topology, run once per animation to cache per-block features), and the
// pose guider that maps skeleton renderings to latent resolution.

#include <optional>
#include <vector>

#include "attention.hpp"
#include "checkpoint.hpp"
#include "diffusion.hpp"

namespace posediff {

struct UNetConfig {
    int64_t latent_channels = 4;
    int64_t base_channels = 32;
    std::vector<int64_t> mults = {1, 2};  // one per downsample level
    int heads = 4;
    int64_t t_emb_dim = 128;
    int64_t d_emb = 64;   // semantic token dim
    int64_t n_tok = 8;

    int64_t levels() const { return static_cast<int64_t>(mults.size()); }
    int64_t fusion_sites() const { return 2 * levels() + 1; }

    nlohmann::json to_json() const {
        return {{"latent_channels", latent_channels}, {"base_channels", base_channels},
                {"mults", mults},                     {"heads", heads},
                {"t_emb_dim", t_emb_dim},             {"d_emb", d_emb},
                {"n_tok", n_tok}};
    }
    static UNetConfig from_json(const nlohmann::json& j) {
        UNetConfig c;
        c.latent_channels = j.at("latent_channels").get<int64_t>();
        c.base_channels = j.at("base_channels").get<int64_t>();
        c.mults = j.at("mults").get<std::vector<int64_t>>();
        c.heads = j.at("heads").get<int>();
        c.t_emb_dim = j.at("t_emb_dim").get<int64_t>();
        c.d_emb = j.at("d_emb").get<int64_t>();
        c.n_tok = j.at("n_tok").get<int64_t>();
        return c;
    }
};

// One reference feature per fusion site, ordered [down..., mid, up...].
template <typename T>
struct ReferenceCache {
    std::vector<ag::Var<T>> features;  // each (b, h_site, w_site, c_site)
};

// Sinusoidal embedding of integer timesteps, one row per sample.
template <typename T>
Tensor<T> timestep_embedding(const std::vector<int64_t>& t, int64_t dim) {
    Tensor<T> out({static_cast<int64_t>(t.size()), dim});
    for (size_t i = 0; i < t.size(); i++) {
        for (int64_t j = 0; j < dim; j++) {
            double div = std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
            double a = static_cast<double>(t[i]) / div;
            out.at(static_cast<int64_t>(i), j) =
                static_cast<T>((j % 2 == 0) ? std::sin(a) : std::cos(a));
        }
    }
    return out;
}

template <typename T>
struct DenoiseUNet {
    UNetConfig cfg;
    Linear<T> t_lin1, t_lin2;
    Conv2dLayer<T> conv_in;
    std::vector<ResAttnBlock<T>> down_blocks;
    std::vector<Conv2dLayer<T>> down_samples;
    ResAttnBlock<T> mid;
    std::vector<Conv2dLayer<T>> up_samples;  // indexed by level
    std::vector<ResAttnBlock<T>> up_blocks;  // indexed by level
    GroupNormLayer<T> out_gn;
    Conv2dLayer<T> conv_out;

    DenoiseUNet() = default;
    DenoiseUNet(UNetConfig c, Rng& rng) : cfg(std::move(c)) {
        int64_t L = cfg.levels();
        t_lin1 = Linear<T>(cfg.t_emb_dim, cfg.t_emb_dim, rng);
        t_lin2 = Linear<T>(cfg.t_emb_dim, cfg.t_emb_dim, rng);
        conv_in = Conv2dLayer<T>(3, 3, cfg.latent_channels, cfg.base_channels,
                                 ag::ConvSpec::same3x3(), rng);
        int64_t ch = cfg.base_channels;
        for (int64_t l = 0; l < L; l++) {
            int64_t out = cfg.base_channels * cfg.mults[static_cast<size_t>(l)];
            down_blocks.emplace_back(ch, out, cfg.t_emb_dim, cfg.d_emb, cfg.heads, rng);
            down_samples.emplace_back(3, 3, out, out, ag::ConvSpec::padded(2, 1), rng);
            ch = out;
        }
        mid = ResAttnBlock<T>(ch, ch, cfg.t_emb_dim, cfg.d_emb, cfg.heads, rng);
        up_samples.resize(static_cast<size_t>(L));
        up_blocks.resize(static_cast<size_t>(L));
        int64_t cur = ch;
        for (int64_t l = L - 1; l >= 0; l--) {
            int64_t out = cfg.base_channels * cfg.mults[static_cast<size_t>(l)];
            up_samples[static_cast<size_t>(l)] =
                Conv2dLayer<T>(3, 3, cur, cur, ag::ConvSpec::same3x3(), rng);
            up_blocks[static_cast<size_t>(l)] =
                ResAttnBlock<T>(cur + out, out, cfg.t_emb_dim, cfg.d_emb, cfg.heads, rng);
            cur = out;
        }
        out_gn = GroupNormLayer<T>(norm_groups_for(cfg.base_channels), cfg.base_channels);
        conv_out = Conv2dLayer<T>(3, 3, cfg.base_channels, cfg.latent_channels,
                                  ag::ConvSpec::same3x3(), rng);
    }

    ag::Var<T> time_embed(const std::vector<int64_t>& t) const {
        auto emb = ag::Var<T>::leaf(timestep_embedding<T>(t, cfg.t_emb_dim));
        return t_lin2.forward(ag::silu(t_lin1.forward(emb)));
    }

    // noisy (b, frames, h, w, latent_channels); one timestep per sample.
    // cache, when present, must hold fusion_sites() features; capture, when
    // set, receives this pass's per-site normalized features (the reference
    // encoder path). pose is added to the noisy latent before the first conv.
    ag::Var<T> forward(const ag::Var<T>& noisy, const std::vector<int64_t>& t_batch,
                       const ReferenceCache<T>* cache, const ag::Var<T>& tokens,
                       const ag::Var<T>* pose, bool use_temporal,
                       ReferenceCache<T>* capture = nullptr) const {
        const Shape& s = noisy.shape();
        if (s.size() != 5 || s[4] != cfg.latent_channels) {
            throw std::invalid_argument("denoise forward: expected (b,t,h,w," +
                                        std::to_string(cfg.latent_channels) + "), got " +
                                        shape_str(s));
        }
        int64_t b = s[0], t = s[1], h = s[2], w = s[3];
        if (static_cast<int64_t>(t_batch.size()) != b) {
            throw std::invalid_argument("denoise forward: one timestep per sample required");
        }
        if (cache != nullptr &&
            static_cast<int64_t>(cache->features.size()) != cfg.fusion_sites()) {
            throw std::invalid_argument("denoise forward: cache entry count mismatch");
        }
        ag::Var<T> x = noisy;
        if (pose != nullptr) {
            if (pose->shape() != s) {
                throw std::invalid_argument("denoise forward: pose feature shape mismatch");
            }
            x = ag::add(x, *pose);
        }
        auto t_emb = time_embed(t_batch);

        auto per_frame = [&](const ag::Var<T>& v, const Conv2dLayer<T>& conv, bool up) {
            const Shape& vs = v.shape();
            auto flat = ag::reshape(v, {vs[0] * vs[1], vs[2], vs[3], vs[4]});
            auto y = up ? conv.forward(ag::upsample_nearest2(flat)) : conv.forward(flat);
            const Shape& ys = y.value().shape;
            return ag::reshape(y, {vs[0], vs[1], ys[1], ys[2], ys[3]});
        };

        x = per_frame(x, conv_in, false);

        int site = 0;
        auto site_ref = [&](int idx) -> std::optional<ag::Var<T>> {
            if (cache == nullptr) {
                return std::nullopt;
            }
            return cache->features[static_cast<size_t>(idx)];
        };
        auto run_block = [&](const ResAttnBlock<T>& blk, const ag::Var<T>& v) {
            ag::Var<T> normed;
            auto out = blk.forward(v, t_emb, site_ref(site), tokens, use_temporal,
                                   capture ? &normed : nullptr);
            if (capture != nullptr) {
                const Shape& ns = normed.shape();  // (b,t,h,w,c); reference pass has t=1
                capture->features.push_back(
                    ag::reshape(normed, {ns[0], ns[2], ns[3], ns[4]}));
            }
            site++;
            return out;
        };

        std::vector<ag::Var<T>> skips;
        for (size_t l = 0; l < down_blocks.size(); l++) {
            x = run_block(down_blocks[l], x);
            skips.push_back(x);
            x = per_frame(x, down_samples[l], false);
        }
        x = run_block(mid, x);
        for (int64_t l = cfg.levels() - 1; l >= 0; l--) {
            x = per_frame(x, up_samples[static_cast<size_t>(l)], true);
            x = ag::concat(x, skips[static_cast<size_t>(l)], 4);
            x = run_block(up_blocks[static_cast<size_t>(l)], x);
        }

        const Shape& xs = x.shape();
        auto flat = ag::reshape(x, {xs[0] * xs[1], xs[2], xs[3], xs[4]});
        auto out = conv_out.forward(ag::silu(out_gn.forward(flat)));
        return ag::reshape(out, {b, t, h, w, cfg.latent_channels});
    }

    // Reference pass: clean latent (b,h,w,c_lat), constant t=0 embedding, no
    // temporal layers, captures one feature per fusion site.
    ReferenceCache<T> reference_forward(const ag::Var<T>& ref_latent,
                                        const ag::Var<T>& tokens) const {
        const Shape& s = ref_latent.shape();
        if (s.size() != 4 || s[3] != cfg.latent_channels) {
            throw std::invalid_argument("reference_forward: expected (b,h,w,c_lat), got " +
                                        shape_str(s));
        }
        auto video = ag::reshape(ref_latent, {s[0], 1, s[1], s[2], s[3]});
        ReferenceCache<T> cache;
        std::vector<int64_t> t0(static_cast<size_t>(s[0]), 0);
        forward(video, t0, nullptr, tokens, nullptr, false, &cache);
        return cache;
    }

    void zero_temporal() {
        auto zero = [](AttentionParams<T>& a) {
            for (auto& x : a.o.w.value().v) {
                x = T(0);
            }
            for (auto& x : a.o.b.value().v) {
                x = T(0);
            }
        };
        for (auto& blk : down_blocks) {
            zero(blk.attn_temporal);
        }
        zero(mid.attn_temporal);
        for (auto& blk : up_blocks) {
            zero(blk.attn_temporal);
        }
    }

    void params(ParamMap<T>& m, const std::string& prefix, bool include_temporal) const {
        t_lin1.params(m, prefix + ".t_emb.l1");
        t_lin2.params(m, prefix + ".t_emb.l2");
        conv_in.params(m, prefix + ".conv_in");
        for (size_t l = 0; l < down_blocks.size(); l++) {
            down_blocks[l].params(m, prefix + ".down" + std::to_string(l), include_temporal);
            down_samples[l].params(m, prefix + ".ds" + std::to_string(l));
        }
        mid.params(m, prefix + ".mid", include_temporal);
        for (size_t l = 0; l < up_blocks.size(); l++) {
            up_samples[l].params(m, prefix + ".us" + std::to_string(l));
            up_blocks[l].params(m, prefix + ".up" + std::to_string(l), include_temporal);
        }
        out_gn.params(m, prefix + ".out_gn");
        conv_out.params(m, prefix + ".conv_out");
    }
};

// Four 4x4 convs (stride 2,2,2,1 -> total /8) over the skeleton image, then a
// zero-initialised 3x3 projection to latent channels: at initialization the
// pose branch contributes exactly nothing.
template <typename T>
struct PoseGuider {
    static constexpr int64_t total_stride = 8;
    Conv2dLayer<T> c1, c2, c3, c4, proj;

    PoseGuider() = default;
    PoseGuider(int64_t latent_channels, Rng& rng) {
        double std = 0.02;  // Gaussian init for the non-final layers
        c1 = Conv2dLayer<T>(4, 4, 3, 16, ag::ConvSpec::padded(2, 1), rng, std);
        c2 = Conv2dLayer<T>(4, 4, 16, 32, ag::ConvSpec::padded(2, 1), rng, std);
        c3 = Conv2dLayer<T>(4, 4, 32, 64, ag::ConvSpec::padded(2, 1), rng, std);
        c4 = Conv2dLayer<T>(4, 4, 64, 128, ag::ConvSpec{1, 1, 1, 2, 2}, rng, std);
        proj = Conv2dLayer<T>(3, 3, 128, latent_channels, ag::ConvSpec::same3x3(), rng);
        proj.zero_init();
    }

    // skeletons (n, H, W, 3) -> (n, H/8, W/8, latent_channels)
    ag::Var<T> forward(const ag::Var<T>& skeletons) const {
        const Shape& s = skeletons.shape();
        if (s.size() != 4 || s[3] != 3) {
            throw std::invalid_argument("pose_guider: expected (n,H,W,3)");
        }
        if (s[1] % total_stride != 0 || s[2] % total_stride != 0) {
            throw std::invalid_argument("pose_guider: resolution must be divisible by " +
                                        std::to_string(total_stride));
        }
        auto h = ag::silu(c1.forward(skeletons));
        h = ag::silu(c2.forward(h));
        h = ag::silu(c3.forward(h));
        h = ag::silu(c4.forward(h));
        return proj.forward(h);
    }

    int64_t param_count() const {
        ParamMap<T> m;
        params(m, "pg");
        return params_count(m);
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        c1.params(m, prefix + ".c1");
        c2.params(m, prefix + ".c2");
        c3.params(m, prefix + ".c3");
        c4.params(m, prefix + ".c4");
        proj.params(m, prefix + ".proj");
    }
};

// The trainable diffusion-side networks plus the schedule description; what a
// stage-1/stage-2 checkpoint stores.
template <typename T>
struct ModelBundle {
    UNetConfig cfg;
    DenoiseUNet<T> unet;
    DenoiseUNet<T> refnet;
    PoseGuider<T> pose_guider;
    int stage = 1;
    int64_t schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    ModelBundle() = default;
    ModelBundle(const UNetConfig& c, uint64_t seed) : cfg(c) {
        Rng rng = Rng::stream(seed, 0x4e455453u);
        unet = DenoiseUNet<T>(cfg, rng);
        refnet = DenoiseUNet<T>(cfg, rng);
        pose_guider = PoseGuider<T>(cfg.latent_channels, rng);
    }

    DiffusionSchedule schedule() const {
        return build_schedule(schedule_steps, beta_start, beta_end);
    }

    // The reference encoder has no temporal layers, so its temporal tensors
    // are never part of the parameter set.
    void params(ParamMap<T>& m) const {
        unet.params(m, "unet", true);
        refnet.params(m, "refnet", false);
        pose_guider.params(m, "pose_guider");
    }

    void temporal_params(ParamMap<T>& m) const {
        ParamMap<T> all;
        params(all);
        for (auto& [name, p] : all) {
            if (name.find(".temporal.") != std::string::npos) {
                m[name] = p;
            }
        }
    }

    void non_temporal_params(ParamMap<T>& m) const {
        ParamMap<T> all;
        params(all);
        for (auto& [name, p] : all) {
            if (name.find(".temporal.") == std::string::npos) {
                m[name] = p;
            }
        }
    }

    uint64_t weights_hash() const {
        ParamMap<T> m;
        params(m);
        return params_hash(m);
    }
    uint64_t non_temporal_hash() const {
        ParamMap<T> m;
        non_temporal_params(m);
        return params_hash(m);
    }
    uint64_t temporal_hash() const {
        ParamMap<T> m;
        temporal_params(m);
        return params_hash(m);
    }

    void save(const std::string& path) const {
        ParamMap<T> m;
        params(m);
        nlohmann::json header = {{"kind", "diffusion_model"},
                                 {"config", cfg.to_json()},
                                 {"stage", stage},
                                 {"schedule", {{"steps", schedule_steps},
                                               {"beta_start", beta_start},
                                               {"beta_end", beta_end}}},
                                 {"version", kCheckpointVersion}};
        save_checkpoint(path, m, header);
    }

    static ModelBundle load(const std::string& path) {
        std::map<std::string, Tensor<T>> raw;
        nlohmann::json header = read_checkpoint(path, raw);
        ModelBundle b(UNetConfig::from_json(header.at("config")), 0);
        ParamMap<T> m;
        b.params(m);
        load_checkpoint(path, m);
        b.stage = header.at("stage").get<int>();
        b.schedule_steps = header.at("schedule").at("steps").get<int64_t>();
        b.beta_start = header.at("schedule").at("beta_start").get<double>();
        b.beta_end = header.at("schedule").at("beta_end").get<double>();
        return b;
    }
};

// Stage-2 preparation: temporal output projections are zeroed so the video
// model's per-frame behaviour starts exactly at the stage-1 image model.
template <typename T>
void init_temporal_zero(ModelBundle<T>& bundle) {
    bundle.unet.zero_temporal();
    bundle.stage = 2;
}

}  // namespace posediff

#endif  // POSEDIFF_NETS_HPP
