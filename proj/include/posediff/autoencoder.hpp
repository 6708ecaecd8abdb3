#ifndef POSEDIFF_AUTOENCODER_HPP
#define POSEDIFF_AUTOENCODER_HPP

// The latent autoencoder (three stride-2 stages, /8 spatial factor) and the
// small semantic image encoder. Both are trained once on sprite images in
// stage 0 and frozen for all diffusion training afterwards.

#include <vector>

#include "attention.hpp"
#include "checkpoint.hpp"
#include "image.hpp"
#include "nn.hpp"
#include "optim.hpp"

namespace posediff {

struct AutoencoderConfig {
    int64_t channels_lat = 4;
    std::vector<int64_t> widths = {16, 32, 48, 64};  // full res, /2, /4, /8
    int64_t sem_n_tok = 8;
    int64_t sem_d_emb = 64;
    int64_t sem_width = 16;
    int64_t sem_input = 32;  // fixed internal resolution of the semantic encoder
    int64_t sem_thumb = 16;  // training-only reconstruction head target size

    static constexpr int64_t factor = 8;  // three stride-2 stages

    nlohmann::json to_json() const {
        return {{"channels_lat", channels_lat}, {"widths", widths},
                {"sem_n_tok", sem_n_tok},       {"sem_d_emb", sem_d_emb},
                {"sem_width", sem_width},       {"sem_input", sem_input},
                {"sem_thumb", sem_thumb}};
    }
    static AutoencoderConfig from_json(const nlohmann::json& j) {
        AutoencoderConfig c;
        c.channels_lat = j.at("channels_lat").get<int64_t>();
        c.widths = j.at("widths").get<std::vector<int64_t>>();
        c.sem_n_tok = j.at("sem_n_tok").get<int64_t>();
        c.sem_d_emb = j.at("sem_d_emb").get<int64_t>();
        c.sem_width = j.at("sem_width").get<int64_t>();
        c.sem_input = j.at("sem_input").get<int64_t>();
        c.sem_thumb = j.at("sem_thumb").get<int64_t>();
        return c;
    }
};

template <typename T>
struct Autoencoder {
    AutoencoderConfig cfg;
    double latent_scale = 1.0;  // set after stage-0 training; encode multiplies, decode divides

    // encoder: conv-in, three stride-2 stages, projection to (mu, logvar)
    Conv2dLayer<T> e_in;
    GroupNormLayer<T> e_gn1, e_gn2, e_gn3, e_gn4;
    Conv2dLayer<T> e_down1, e_down2, e_down3, e_out;

    // decoder: conv-in, three upsample stages, projection to RGB
    Conv2dLayer<T> d_in;
    GroupNormLayer<T> d_gn3, d_gn2, d_gn1, d_gn0;
    Conv2dLayer<T> d_up3, d_up2, d_up1, d_out;

    Autoencoder() = default;
    Autoencoder(AutoencoderConfig c, Rng& rng) : cfg(std::move(c)) {
        const auto& w = cfg.widths;
        e_in = Conv2dLayer<T>(3, 3, 3, w[0], ag::ConvSpec::same3x3(), rng);
        e_gn1 = GroupNormLayer<T>(norm_groups_for(w[0]), w[0]);
        e_down1 = Conv2dLayer<T>(3, 3, w[0], w[1], ag::ConvSpec::padded(2, 1), rng);
        e_gn2 = GroupNormLayer<T>(norm_groups_for(w[1]), w[1]);
        e_down2 = Conv2dLayer<T>(3, 3, w[1], w[2], ag::ConvSpec::padded(2, 1), rng);
        e_gn3 = GroupNormLayer<T>(norm_groups_for(w[2]), w[2]);
        e_down3 = Conv2dLayer<T>(3, 3, w[2], w[3], ag::ConvSpec::padded(2, 1), rng);
        e_gn4 = GroupNormLayer<T>(norm_groups_for(w[3]), w[3]);
        e_out = Conv2dLayer<T>(3, 3, w[3], 2 * cfg.channels_lat, ag::ConvSpec::same3x3(), rng);

        d_in = Conv2dLayer<T>(3, 3, cfg.channels_lat, w[3], ag::ConvSpec::same3x3(), rng);
        d_gn3 = GroupNormLayer<T>(norm_groups_for(w[3]), w[3]);
        d_up3 = Conv2dLayer<T>(3, 3, w[3], w[2], ag::ConvSpec::same3x3(), rng);
        d_gn2 = GroupNormLayer<T>(norm_groups_for(w[2]), w[2]);
        d_up2 = Conv2dLayer<T>(3, 3, w[2], w[1], ag::ConvSpec::same3x3(), rng);
        d_gn1 = GroupNormLayer<T>(norm_groups_for(w[1]), w[1]);
        d_up1 = Conv2dLayer<T>(3, 3, w[1], w[0], ag::ConvSpec::same3x3(), rng);
        d_gn0 = GroupNormLayer<T>(norm_groups_for(w[0]), w[0]);
        d_out = Conv2dLayer<T>(3, 3, w[0], 3, ag::ConvSpec::same3x3(), rng);
    }

    // x (n,H,W,3) -> mu, logvar at (n,H/8,W/8,channels_lat)
    std::pair<ag::Var<T>, ag::Var<T>> encode_dist(const ag::Var<T>& x) const {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[3] != 3) {
            throw std::invalid_argument("encode: expected (n,H,W,3), got " + shape_str(s));
        }
        if (s[1] % cfg.factor != 0 || s[2] % cfg.factor != 0) {
            throw std::invalid_argument("encode: image dims must be divisible by " +
                                        std::to_string(cfg.factor));
        }
        auto h = e_in.forward(x);
        h = e_down1.forward(ag::silu(e_gn1.forward(h)));
        h = e_down2.forward(ag::silu(e_gn2.forward(h)));
        h = e_down3.forward(ag::silu(e_gn3.forward(h)));
        h = e_out.forward(ag::silu(e_gn4.forward(h)));
        auto mu = ag::slice(h, 3, 0, cfg.channels_lat);
        auto logvar = ag::slice(h, 3, cfg.channels_lat, cfg.channels_lat);
        return {mu, logvar};
    }

    // z (n,h,w,channels_lat) -> (n,8h,8w,3) in [0,1]
    ag::Var<T> decode_var(const ag::Var<T>& z) const {
        const Shape& s = z.shape();
        if (s.size() != 4 || s[3] != cfg.channels_lat) {
            throw std::invalid_argument("decode: latent channel mismatch, got " + shape_str(s));
        }
        auto h = d_in.forward(z);
        h = d_up3.forward(ag::upsample_nearest2(ag::silu(d_gn3.forward(h))));
        h = d_up2.forward(ag::upsample_nearest2(ag::silu(d_gn2.forward(h))));
        h = d_up1.forward(ag::upsample_nearest2(ag::silu(d_gn1.forward(h))));
        return ag::sigmoid(d_out.forward(ag::silu(d_gn0.forward(h))));
    }

    // Deterministic inference path: posterior mean, scaled to unit-ish range.
    Tensor<T> encode(const Tensor<T>& x) const {
        ag::NoGradGuard ng;
        auto [mu, logvar] = encode_dist(ag::Var<T>::leaf(x));
        Tensor<T> z = mu.value();
        for (auto& v : z.v) {
            v = static_cast<T>(v * latent_scale);
        }
        return z;
    }

    Tensor<T> decode(const Tensor<T>& z) const {
        ag::NoGradGuard ng;
        Tensor<T> raw = z;
        for (auto& v : raw.v) {
            v = static_cast<T>(v / latent_scale);
        }
        return decode_var(ag::Var<T>::leaf(std::move(raw))).value();
    }

    void params(ParamMap<T>& m, const std::string& prefix = "vae") const {
        e_in.params(m, prefix + ".e_in");
        e_gn1.params(m, prefix + ".e_gn1");
        e_gn2.params(m, prefix + ".e_gn2");
        e_gn3.params(m, prefix + ".e_gn3");
        e_gn4.params(m, prefix + ".e_gn4");
        e_down1.params(m, prefix + ".e_down1");
        e_down2.params(m, prefix + ".e_down2");
        e_down3.params(m, prefix + ".e_down3");
        e_out.params(m, prefix + ".e_out");
        d_in.params(m, prefix + ".d_in");
        d_gn3.params(m, prefix + ".d_gn3");
        d_gn2.params(m, prefix + ".d_gn2");
        d_gn1.params(m, prefix + ".d_gn1");
        d_gn0.params(m, prefix + ".d_gn0");
        d_up3.params(m, prefix + ".d_up3");
        d_up2.params(m, prefix + ".d_up2");
        d_up1.params(m, prefix + ".d_up1");
        d_out.params(m, prefix + ".d_out");
    }
};

// Small conv tower to semantic tokens. Everything is resampled to one fixed
// low resolution first, which keeps tokens nearly invariant to the caller's
// image size.
template <typename T>
struct SemanticEncoder {
    AutoencoderConfig cfg;
    Conv2dLayer<T> s0, s1, s2;
    GroupNormLayer<T> gn0, gn1;
    ag::Var<T> token_mix;  // (n_tok, cells)
    Linear<T> head;        // training-only thumbnail reconstruction

    SemanticEncoder() = default;
    SemanticEncoder(AutoencoderConfig c, Rng& rng) : cfg(std::move(c)) {
        int64_t w = cfg.sem_width;
        s0 = Conv2dLayer<T>(3, 3, 3, w, ag::ConvSpec::padded(2, 1), rng);
        gn0 = GroupNormLayer<T>(norm_groups_for(w), w);
        s1 = Conv2dLayer<T>(3, 3, w, 2 * w, ag::ConvSpec::padded(2, 1), rng);
        gn1 = GroupNormLayer<T>(norm_groups_for(2 * w), 2 * w);
        s2 = Conv2dLayer<T>(3, 3, 2 * w, cfg.sem_d_emb, ag::ConvSpec::padded(2, 1), rng);
        int64_t cells = (cfg.sem_input / 8) * (cfg.sem_input / 8);
        token_mix = ag::Var<T>::leaf(
            rng.normal_tensor<T>({cfg.sem_n_tok, cells}, 0.0, 1.0 / std::sqrt(double(cells))),
            true);
        head = Linear<T>(cfg.sem_n_tok * cfg.sem_d_emb, cfg.sem_thumb * cfg.sem_thumb * 3, rng);
    }

    // x (n, sem_input, sem_input, 3) -> tokens (n, n_tok, d_emb)
    ag::Var<T> tokens_var(const ag::Var<T>& x) const {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[1] != cfg.sem_input || s[2] != cfg.sem_input || s[3] != 3) {
            throw std::invalid_argument("semantic tokens: expected (n," +
                                        std::to_string(cfg.sem_input) + "," +
                                        std::to_string(cfg.sem_input) + ",3)");
        }
        int64_t n = s[0];
        auto h = ag::silu(gn0.forward(s0.forward(x)));
        h = ag::silu(gn1.forward(s1.forward(h)));
        h = s2.forward(h);  // (n, g, g, d)
        int64_t cells = h.shape()[1] * h.shape()[2];
        auto flat = ag::reshape(h, {n, cells, cfg.sem_d_emb});
        // tokens = token_mix @ cells, shared across the batch
        auto cellsT = ag::reshape(ag::permute(flat, {1, 0, 2}), {cells, n * cfg.sem_d_emb});
        auto mixed = ag::matmul(token_mix, cellsT);  // (n_tok, n*d)
        return ag::permute(ag::reshape(mixed, {cfg.sem_n_tok, n, cfg.sem_d_emb}), {1, 0, 2});
    }

    ag::Var<T> thumb_head(const ag::Var<T>& tokens) const {
        int64_t n = tokens.shape()[0];
        auto flat = ag::reshape(tokens, {n, cfg.sem_n_tok * cfg.sem_d_emb});
        return ag::sigmoid(
            ag::reshape(head.forward(flat), {n, cfg.sem_thumb, cfg.sem_thumb, 3}));
    }

    // Any-size RGB image -> deterministic tokens (n_tok, d_emb).
    Tensor<T> encode_semantic(const ImageF& image) const {
        ag::NoGradGuard ng;
        ImageF small = resize_area(image, cfg.sem_input, cfg.sem_input);
        Tensor<T> batch({1, cfg.sem_input, cfg.sem_input, 3});
        for (int64_t i = 0; i < small.numel(); i++) {
            batch[i] = static_cast<T>(small[i]);
        }
        Tensor<T> out = tokens_var(ag::Var<T>::leaf(std::move(batch))).value();
        out.shape = {cfg.sem_n_tok, cfg.sem_d_emb};
        return out;
    }

    // Stage activations for the perceptual-distance proxy.
    std::vector<Tensor<T>> feature_maps(const ImageF& image) const {
        ag::NoGradGuard ng;
        ImageF small = resize_area(image, cfg.sem_input, cfg.sem_input);
        Tensor<T> batch({1, cfg.sem_input, cfg.sem_input, 3});
        for (int64_t i = 0; i < small.numel(); i++) {
            batch[i] = static_cast<T>(small[i]);
        }
        auto x = ag::Var<T>::leaf(std::move(batch));
        std::vector<Tensor<T>> feats;
        auto h = ag::silu(gn0.forward(s0.forward(x)));
        feats.push_back(h.value());
        h = ag::silu(gn1.forward(s1.forward(h)));
        feats.push_back(h.value());
        h = s2.forward(h);
        feats.push_back(h.value());
        return feats;
    }

    void params(ParamMap<T>& m, const std::string& prefix = "sem") const {
        s0.params(m, prefix + ".s0");
        s1.params(m, prefix + ".s1");
        s2.params(m, prefix + ".s2");
        gn0.params(m, prefix + ".gn0");
        gn1.params(m, prefix + ".gn1");
        m[prefix + ".token_mix"] = token_mix;
        head.params(m, prefix + ".head");
    }
};

// ------------------------------------------------------------- training

struct Stage0Config {
    int64_t steps = 1500;
    int64_t batch = 4;
    double lr = 1e-3;
    uint64_t seed = 0;
    double kl_weight = 1e-6;
    double sem_weight = 1.0;
};

template <typename T>
struct AutoencoderBundle {
    Autoencoder<T> vae;
    SemanticEncoder<T> sem;

    AutoencoderBundle() = default;
    AutoencoderBundle(const AutoencoderConfig& cfg, uint64_t seed) {
        Rng rng = Rng::stream(seed, 0x56414530u);
        vae = Autoencoder<T>(cfg, rng);
        sem = SemanticEncoder<T>(cfg, rng);
    }

    void params(ParamMap<T>& m) const {
        vae.params(m, "vae");
        sem.params(m, "sem");
    }

    uint64_t weights_hash() const {
        ParamMap<T> m;
        params(m);
        return params_hash(m);
    }

    void save(const std::string& path) const {
        ParamMap<T> m;
        params(m);
        nlohmann::json header = {{"kind", "autoencoder"},
                                 {"config", vae.cfg.to_json()},
                                 {"latent_scale", vae.latent_scale}};
        save_checkpoint(path, m, header);
    }

    static AutoencoderBundle load(const std::string& path) {
        std::map<std::string, Tensor<T>> raw;
        nlohmann::json header = read_checkpoint(path, raw);
        AutoencoderBundle b(AutoencoderConfig::from_json(header.at("config")), 0);
        ParamMap<T> m;
        b.params(m);
        nlohmann::json h2 = load_checkpoint(path, m);
        b.vae.latent_scale = h2.at("latent_scale").get<double>();
        return b;
    }
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<ImageF>& images, const std::vector<int64_t>& idx) {
    int64_t h = images[0].shape[0], w = images[0].shape[1];
    Tensor<T> out({static_cast<int64_t>(idx.size()), h, w, 3});
    for (size_t i = 0; i < idx.size(); i++) {
        const ImageF& img = images[static_cast<size_t>(idx[i])];
        if (img.shape[0] != h || img.shape[1] != w) {
            throw std::invalid_argument("stack_images: mixed resolutions");
        }
        for (int64_t j = 0; j < img.numel(); j++) {
            out[static_cast<int64_t>(i) * img.numel() + j] = static_cast<T>(img[j]);
        }
    }
    return out;
}

}  // namespace detail

// Stage 0: joint training of the autoencoder (reconstruction + small KL) and
// the semantic encoder (thumbnail reconstruction head). Both are frozen
// afterwards; the latent scale is calibrated from the trained encoder.
template <typename T>
LossRecord train_autoencoder(const std::vector<ImageF>& dataset, AutoencoderBundle<T>& bundle,
                             const Stage0Config& cfg) {
    if (dataset.empty()) {
        throw std::invalid_argument("train_autoencoder: empty dataset");
    }
    LossRecord record;
    if (cfg.steps == 0) {
        return record;  // parameters stay at initialization, scale stays 1
    }

    ParamMap<T> params;
    bundle.params(params);
    Adam<T> opt(params, cfg.lr);
    Rng rng = Rng::stream(cfg.seed, 0x53544730u);

    for (int64_t step = 0; step < cfg.steps; step++) {
        std::vector<int64_t> idx(static_cast<size_t>(cfg.batch));
        for (auto& i : idx) {
            i = rng.uniform_int(0, static_cast<int64_t>(dataset.size()) - 1);
        }
        Tensor<T> x = detail::stack_images<T>(dataset, idx);
        auto xv = ag::Var<T>::leaf(x);

        auto [mu, logvar] = bundle.vae.encode_dist(xv);
        // z = mu + exp(0.5*logvar) * eps
        Tensor<T> noise = rng.normal_tensor<T>(mu.value().shape);
        auto z = ag::add(mu, ag::mul(ag::exp_(ag::scale(logvar, 0.5)),
                                     ag::Var<T>::leaf(std::move(noise))));
        auto recon = bundle.vae.decode_var(z);
        auto recon_loss = ag::mse(recon, xv);

        // KL(N(mu, sigma^2) || N(0,1)) per element
        auto kl = ag::scale(
            ag::mean_all(ag::sub(ag::add(ag::mul(mu, mu), ag::exp_(logvar)),
                                 ag::add_scalar(logvar, 1.0))),
            0.5);

        // semantic thumbnail reconstruction
        Tensor<T> sem_in({cfg.batch, bundle.sem.cfg.sem_input, bundle.sem.cfg.sem_input, 3});
        Tensor<T> sem_target({cfg.batch, bundle.sem.cfg.sem_thumb, bundle.sem.cfg.sem_thumb, 3});
        for (int64_t i = 0; i < cfg.batch; i++) {
            const ImageF& img = dataset[static_cast<size_t>(idx[static_cast<size_t>(i)])];
            ImageF small = resize_area(img, bundle.sem.cfg.sem_input, bundle.sem.cfg.sem_input);
            ImageF thumb = resize_area(img, bundle.sem.cfg.sem_thumb, bundle.sem.cfg.sem_thumb);
            for (int64_t j = 0; j < small.numel(); j++) {
                sem_in[i * small.numel() + j] = static_cast<T>(small[j]);
            }
            for (int64_t j = 0; j < thumb.numel(); j++) {
                sem_target[i * thumb.numel() + j] = static_cast<T>(thumb[j]);
            }
        }
        auto tokens = bundle.sem.tokens_var(ag::Var<T>::leaf(std::move(sem_in)));
        auto sem_loss =
            ag::mse(bundle.sem.thumb_head(tokens), ag::Var<T>::leaf(std::move(sem_target)));

        auto loss = ag::add(recon_loss,
                            ag::add(ag::scale(kl, cfg.kl_weight), ag::scale(sem_loss, cfg.sem_weight)));
        opt.zero_grad();
        ag::backward(loss);
        opt.step();
        record.add(step, loss.value()[0]);
    }

    // latent scale: unit std over a sample of encoded training images
    {
        ag::NoGradGuard ng;
        size_t n = std::min<size_t>(dataset.size(), 64);
        std::vector<int64_t> idx(n);
        for (size_t i = 0; i < n; i++) {
            idx[i] = static_cast<int64_t>(i);
        }
        Tensor<T> x = detail::stack_images<T>(dataset, idx);
        auto [mu, logvar] = bundle.vae.encode_dist(ag::Var<T>::leaf(std::move(x)));
        double sum = 0, sum2 = 0;
        for (auto v : mu.value().v) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
        }
        double m = sum / mu.value().numel();
        double var = sum2 / mu.value().numel() - m * m;
        bundle.vae.latent_scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return record;
}

}  // namespace posediff

#endif  // POSEDIFF_AUTOENCODER_HPP
