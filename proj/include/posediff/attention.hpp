#ifndef POSEDIFF_ATTENTION_HPP
#define POSEDIFF_ATTENTION_HPP

// The three attention primitives of the denoiser block:
//   - fused spatial attention: reference features are tiled across frames,
//     concatenated along the width axis, self-attended, first half kept
//   - cross attention over semantic tokens
//   - temporal attention: per-location self-attention along the frame axis
//     with a residual connection and a zero-initialised output projection
//
// Video feature maps are (b, t, h, w, c); reference features are (b, h, w, c).

#include <optional>

#include "nn.hpp"

namespace posediff {

template <typename T>
struct AttentionParams {
    Linear<T> q, k, v, o;
    int heads = 1;
    Tensor<T> pos_enc;  // (max_t, c) sinusoidal table; only the temporal kind sets it

    AttentionParams() = default;
    AttentionParams(int64_t c_q, int64_t c_kv, int heads_, Rng& rng, bool zero_out = false)
        : heads(heads_) {
        if (c_q % heads != 0) {
            throw std::invalid_argument("AttentionParams: heads must divide channels");
        }
        q = Linear<T>(c_q, c_q, rng);
        k = Linear<T>(c_kv, c_q, rng);
        v = Linear<T>(c_kv, c_q, rng);
        o = Linear<T>(c_q, c_q, rng);
        if (zero_out) {
            for (auto& x : o.w.value().v) {
                x = T(0);
            }
            for (auto& x : o.b.value().v) {
                x = T(0);
            }
        }
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        q.params(m, prefix + ".q");
        k.params(m, prefix + ".k");
        v.params(m, prefix + ".v");
        o.params(m, prefix + ".o");
    }
};

// Sinusoidal positional table over positions [0, n).
template <typename T>
Tensor<T> sinusoidal_table(int64_t n, int64_t c) {
    Tensor<T> pe({n, c});
    for (int64_t p = 0; p < n; p++) {
        for (int64_t i = 0; i < c; i++) {
            double div = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(c));
            double a = static_cast<double>(p) / div;
            pe.at(p, i) = static_cast<T>((i % 2 == 0) ? std::sin(a) : std::cos(a));
        }
    }
    return pe;
}

// Multi-head scaled dot-product attention over token sequences.
// q_tokens (B,S,Cq), kv_tokens (B,S2,Ckv); optional additive key bias (S2)
// applied to every query row (used only by the test-side reference mask).
template <typename T>
ag::Var<T> attend(const AttentionParams<T>& p, const ag::Var<T>& q_tokens,
                  const ag::Var<T>& kv_tokens, const Tensor<T>* key_bias = nullptr) {
    int64_t bsz = q_tokens.shape()[0];
    int64_t s = q_tokens.shape()[1];
    int64_t s2 = kv_tokens.shape()[1];
    int64_t c = p.q.w.shape()[1];
    int64_t heads = p.heads;
    int64_t dh = c / heads;

    auto split = [&](const ag::Var<T>& x, int64_t sl) {
        // (B,S,C) -> (B*H, S, dh)
        auto r = ag::reshape(x, {bsz, sl, heads, dh});
        auto pm = ag::permute(r, {0, 2, 1, 3});
        return ag::reshape(pm, {bsz * heads, sl, dh});
    };

    auto qh = split(p.q.forward(q_tokens), s);
    auto kh = split(p.k.forward(kv_tokens), s2);
    auto vh = split(p.v.forward(kv_tokens), s2);

    auto scores = ag::scale(ag::bmm(qh, ag::permute(kh, {0, 2, 1})),
                            1.0 / std::sqrt(static_cast<double>(dh)));
    if (key_bias != nullptr) {
        Tensor<T> bias({bsz * heads, s, s2});
        for (int64_t r = 0; r < bsz * heads * s; r++) {
            std::memcpy(bias.data() + r * s2, key_bias->data(),
                        static_cast<size_t>(s2) * sizeof(T));
        }
        scores = ag::add(scores, ag::Var<T>::leaf(std::move(bias)));
    }
    auto attn = ag::softmax_lastdim(scores);
    auto mixed = ag::bmm(attn, vh);  // (B*H, S, dh)
    auto merged = ag::reshape(ag::permute(ag::reshape(mixed, {bsz, heads, s, dh}), {0, 2, 1, 3}),
                              {bsz, s, c});
    return p.o.forward(merged);
}

namespace detail {

template <typename T>
void check_video_shape(const ag::Var<T>& x, const char* what) {
    if (x.shape().size() != 5) {
        throw std::invalid_argument(std::string(what) + ": expected (b,t,h,w,c), got " +
                                    shape_str(x.shape()));
    }
}

}  // namespace detail

// Plain self-attention over each frame's h*w tokens.
template <typename T>
ag::Var<T> self_attention(const ag::Var<T>& x, const AttentionParams<T>& p) {
    detail::check_video_shape(x, "self_attention");
    auto s = x.shape();
    int64_t b = s[0], t = s[1], h = s[2], w = s[3], c = s[4];
    auto tokens = ag::reshape(x, {b * t, h * w, c});
    auto out = attend(p, tokens, tokens);
    return ag::reshape(out, {b, t, h, w, c});
}

// Fused spatial attention: copy the reference feature t times, concatenate
// along w (2*h*w tokens per frame), self-attend, keep the first half.
// mask_reference is test-only: it forbids attention into the reference half.
template <typename T>
ag::Var<T> spatial_attention_fuse(const ag::Var<T>& x1, const ag::Var<T>& x2,
                                  const AttentionParams<T>& p, bool mask_reference = false) {
    detail::check_video_shape(x1, "spatial_attention_fuse");
    auto s = x1.shape();
    int64_t b = s[0], t = s[1], h = s[2], w = s[3], c = s[4];
    if (x2.shape() != Shape{b, h, w, c}) {
        throw std::invalid_argument("spatial_attention_fuse: reference shape " +
                                    shape_str(x2.shape()) + " does not match " +
                                    shape_str(x1.shape()));
    }
    auto ref_tiled = ag::repeat_dim(ag::reshape(x2, {b, 1, h, w, c}), 1, t);
    auto cat = ag::concat(x1, ref_tiled, 3);  // (b,t,h,2w,c)
    auto tokens = ag::reshape(cat, {b * t, h * 2 * w, c});

    ag::Var<T> out;
    if (mask_reference) {
        Tensor<T> bias({h * 2 * w});
        for (int64_t y = 0; y < h; y++) {
            for (int64_t xw = 0; xw < 2 * w; xw++) {
                bias[y * 2 * w + xw] = xw >= w ? -std::numeric_limits<T>::infinity() : T(0);
            }
        }
        out = attend(p, tokens, tokens, &bias);
    } else {
        out = attend(p, tokens, tokens);
    }
    auto grid = ag::reshape(out, {b, t, h, 2 * w, c});
    return ag::slice(grid, 3, 0, w);  // first half along w
}

// Cross attention: every spatial position attends over the semantic tokens
// of its batch entry. tokens (b, n_tok, d).
template <typename T>
ag::Var<T> cross_attention(const ag::Var<T>& x, const ag::Var<T>& tokens,
                           const AttentionParams<T>& p) {
    detail::check_video_shape(x, "cross_attention");
    auto s = x.shape();
    int64_t b = s[0], t = s[1], h = s[2], w = s[3], c = s[4];
    if (tokens.shape().size() != 3 || tokens.shape()[0] != b) {
        throw std::invalid_argument("cross_attention: tokens must be (b,n_tok,d)");
    }
    if (tokens.shape()[2] != p.k.w.shape()[0]) {
        throw std::invalid_argument("cross_attention: token dim does not match params");
    }
    int64_t n_tok = tokens.shape()[1], d = tokens.shape()[2];
    auto q_tokens = ag::reshape(x, {b * t, h * w, c});
    auto kv = ag::reshape(ag::repeat_dim(ag::reshape(tokens, {b, 1, n_tok, d}), 1, t),
                          {b * t, n_tok, d});
    auto out = attend(p, q_tokens, kv);
    return ag::reshape(out, {b, t, h, w, c});
}

// Temporal attention: self-attention along t independently per spatial
// location, added residually. With the output projection at zero this is an
// exact identity, which is what makes stage-2 start from the stage-1 model.
template <typename T>
ag::Var<T> temporal_attention(const ag::Var<T>& x, const AttentionParams<T>& p,
                              bool use_pos_enc = true) {
    detail::check_video_shape(x, "temporal_attention");
    auto s = x.shape();
    int64_t b = s[0], t = s[1], h = s[2], w = s[3], c = s[4];
    auto tokens = ag::reshape(ag::permute(x, {0, 2, 3, 1, 4}), {b * h * w, t, c});
    ag::Var<T> u = tokens;
    if (use_pos_enc) {
        Tensor<T> pe = sinusoidal_table<T>(t, c);
        Tensor<T> full({b * h * w, t, c});
        for (int64_t r = 0; r < b * h * w; r++) {
            std::memcpy(full.data() + r * t * c, pe.data(), static_cast<size_t>(t * c) * sizeof(T));
        }
        u = ag::add(tokens, ag::Var<T>::leaf(std::move(full)));
    }
    auto att = attend(p, u, u);
    auto back = ag::permute(ag::reshape(att, {b, h, w, t, c}), {0, 3, 1, 2, 4});
    return ag::add(x, back);
}

// ---------------------------------------------------------------- block

// The repeating denoiser unit: residual conv pair with timestep injection,
// then spatial attention (fused with a reference feature when given), cross
// attention over semantic tokens, and the optional temporal layer.
template <typename T>
struct ResAttnBlock {
    int64_t c_in = 0, c_out = 0;
    GroupNormLayer<T> gn1, gn2;
    Conv2dLayer<T> conv1, conv2, skip;
    bool has_skip = false;
    Linear<T> t_proj;
    LayerNormLayer<T> ln_spatial, ln_cross;
    AttentionParams<T> attn_spatial, attn_cross, attn_temporal;

    ResAttnBlock() = default;
    ResAttnBlock(int64_t cin, int64_t cout, int64_t t_emb_dim, int64_t d_emb, int heads, Rng& rng)
        : c_in(cin), c_out(cout) {
        gn1 = GroupNormLayer<T>(norm_groups_for(cin), cin);
        gn2 = GroupNormLayer<T>(norm_groups_for(cout), cout);
        conv1 = Conv2dLayer<T>(3, 3, cin, cout, ag::ConvSpec::same3x3(), rng);
        conv2 = Conv2dLayer<T>(3, 3, cout, cout, ag::ConvSpec::same3x3(), rng);
        has_skip = cin != cout;
        if (has_skip) {
            skip = Conv2dLayer<T>(1, 1, cin, cout, ag::ConvSpec{1, 0, 0, 0, 0}, rng);
        }
        t_proj = Linear<T>(t_emb_dim, cout, rng);
        ln_spatial = LayerNormLayer<T>(cout);
        ln_cross = LayerNormLayer<T>(cout);
        attn_spatial = AttentionParams<T>(cout, cout, heads, rng);
        attn_cross = AttentionParams<T>(cout, d_emb, heads, rng);
        attn_temporal = AttentionParams<T>(cout, cout, heads, rng, /*zero_out=*/true);
    }

    // x (b,t,h,w,c_in); t_emb (b, t_emb_dim); ref (b,h,w,c_out) or empty;
    // tokens (b,n_tok,d_emb). Returns (b,t,h,w,c_out) plus, via out param,
    // the normalized pre-attention tokens (what a reference pass caches).
    ag::Var<T> forward(const ag::Var<T>& x, const ag::Var<T>& t_emb,
                       const std::optional<ag::Var<T>>& ref, const ag::Var<T>& tokens,
                       bool use_temporal, ag::Var<T>* normed_out = nullptr) const {
        auto s = x.shape();
        int64_t b = s[0], t = s[1], h = s[2], w = s[3];
        auto xc = ag::reshape(x, {b * t, h, w, c_in});

        auto h1 = conv1.forward(ag::silu(gn1.forward(xc)));
        // timestep bias, one vector per sample, broadcast over frames and space
        auto tb = t_proj.forward(ag::silu(t_emb));  // (b, c_out)
        auto tb_bt = ag::reshape(ag::repeat_dim(ag::reshape(tb, {b, 1, c_out}), 1, t),
                                 {b * t, 1, 1, c_out});
        auto tb_full = ag::repeat_dim(ag::repeat_dim(tb_bt, 1, h), 2, w);
        h1 = ag::add(h1, tb_full);
        auto h2 = conv2.forward(ag::silu(gn2.forward(h1)));
        auto res = ag::add(has_skip ? skip.forward(xc) : xc, h2);
        auto xv = ag::reshape(res, {b, t, h, w, c_out});

        // spatial attention, fused when a reference feature is present
        auto normed = ln_spatial.forward(xv);
        if (normed_out != nullptr) {
            *normed_out = normed;
        }
        ag::Var<T> att;
        if (ref.has_value()) {
            att = spatial_attention_fuse(normed, *ref, attn_spatial);
        } else {
            att = self_attention(normed, attn_spatial);
        }
        xv = ag::add(xv, att);

        // cross attention over semantic tokens
        xv = ag::add(xv, cross_attention(ln_cross.forward(xv), tokens, attn_cross));

        if (use_temporal) {
            xv = temporal_attention(xv, attn_temporal);
        }
        return xv;
    }

    void params(ParamMap<T>& m, const std::string& prefix, bool include_temporal) const {
        gn1.params(m, prefix + ".gn1");
        gn2.params(m, prefix + ".gn2");
        conv1.params(m, prefix + ".conv1");
        conv2.params(m, prefix + ".conv2");
        if (has_skip) {
            skip.params(m, prefix + ".skip");
        }
        t_proj.params(m, prefix + ".t_proj");
        ln_spatial.params(m, prefix + ".ln_spatial");
        ln_cross.params(m, prefix + ".ln_cross");
        attn_spatial.params(m, prefix + ".attn_spatial");
        attn_cross.params(m, prefix + ".attn_cross");
        if (include_temporal) {
            attn_temporal.params(m, prefix + ".temporal");
        }
    }
};

}  // namespace posediff

#endif  // POSEDIFF_ATTENTION_HPP
