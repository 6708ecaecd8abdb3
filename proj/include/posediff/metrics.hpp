#ifndef POSEDIFF_METRICS_HPP
#define POSEDIFF_METRICS_HPP

// Image metrics (SSIM, PSNR), the frozen-encoder perceptual distance, and a
// Frechet video distance over pooled semantic features. The perceptual and
// video metrics are desk-scale proxies backed by this repo's own frozen
// encoder and are labelled as such in every report.

#include <cmath>
#include <optional>
#include <vector>

#include "autoencoder.hpp"
#include "image.hpp"

namespace posediff {

inline constexpr double kPsnrCapDb = 100.0;

// SSIM with the standard constants: K1=0.01, K2=0.03, 11x11 Gaussian window
// with sigma 1.5, dynamic range 1. Statistics are averaged over the valid
// (fully covered) region, per channel, then across channels.
inline double ssim(const ImageF& a, const ImageF& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("ssim: shape mismatch");
    }
    if (a.rank() != 3 || a.shape[2] != 3) {
        throw std::invalid_argument("ssim: expected (H,W,3)");
    }
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    int64_t h = a.shape[0], w = a.shape[1];
    if (h < kWin || w < kWin) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }

    double kernel[kWin];
    double ksum = 0;
    for (int i = 0; i < kWin; i++) {
        double d = i - (kWin - 1) / 2.0;
        kernel[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        ksum += kernel[i];
    }
    for (auto& k : kernel) {
        k /= ksum;
    }

    int64_t oh = h - kWin + 1, ow = w - kWin + 1;
    double total = 0;
    for (int ch = 0; ch < 3; ch++) {
        // separable horizontal pass over the five products
        std::vector<double> ax(static_cast<size_t>(h * ow)), bx(static_cast<size_t>(h * ow)),
            axx(static_cast<size_t>(h * ow)), bxx(static_cast<size_t>(h * ow)),
            abx(static_cast<size_t>(h * ow));
        for (int64_t y = 0; y < h; y++) {
            for (int64_t x = 0; x < ow; x++) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int k = 0; k < kWin; k++) {
                    double va = a[(y * w + x + k) * 3 + ch];
                    double vb = b[(y * w + x + k) * 3 + ch];
                    sa += kernel[k] * va;
                    sb += kernel[k] * vb;
                    saa += kernel[k] * (va * va);
                    sbb += kernel[k] * (vb * vb);
                    sab += kernel[k] * (va * vb);  // associativity keeps ssim exactly symmetric
                }
                ax[static_cast<size_t>(y * ow + x)] = sa;
                bx[static_cast<size_t>(y * ow + x)] = sb;
                axx[static_cast<size_t>(y * ow + x)] = saa;
                bxx[static_cast<size_t>(y * ow + x)] = sbb;
                abx[static_cast<size_t>(y * ow + x)] = sab;
            }
        }
        for (int64_t y = 0; y < oh; y++) {
            for (int64_t x = 0; x < ow; x++) {
                double mu_a = 0, mu_b = 0, raw_aa = 0, raw_bb = 0, raw_ab = 0;
                for (int k = 0; k < kWin; k++) {
                    size_t idx = static_cast<size_t>((y + k) * ow + x);
                    mu_a += kernel[k] * ax[idx];
                    mu_b += kernel[k] * bx[idx];
                    raw_aa += kernel[k] * axx[idx];
                    raw_bb += kernel[k] * bxx[idx];
                    raw_ab += kernel[k] * abx[idx];
                }
                double var_a = raw_aa - mu_a * mu_a;
                double var_b = raw_bb - mu_b * mu_b;
                double cov = raw_ab - mu_a * mu_b;
                double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
                double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
                total += num / den;
            }
        }
    }
    return total / static_cast<double>(3 * oh * ow);
}

// 10*log10(1/MSE) for values in [0,1]; capped at kPsnrCapDb, which is also
// the sentinel for identical inputs.
inline double psnr(const ImageF& a, const ImageF& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("psnr: shape mismatch");
    }
    double mse = image_mse(a, b);
    if (mse <= 0.0) {
        return kPsnrCapDb;
    }
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// Mean squared distance between frozen semantic-encoder feature maps,
// averaged over encoder stages. A desk-scale stand-in for a learned
// perceptual metric; not comparable to published LPIPS numbers.
template <typename T>
double perceptual_dist(const ImageF& a, const ImageF& b, const SemanticEncoder<T>& enc) {
    auto fa = enc.feature_maps(a);
    auto fb = enc.feature_maps(b);
    double total = 0;
    for (size_t s = 0; s < fa.size(); s++) {
        double acc = 0;
        for (int64_t i = 0; i < fa[s].numel(); i++) {
            double d = static_cast<double>(fa[s][i]) - fb[s][i];
            acc += d * d;
        }
        total += acc / static_cast<double>(fa[s].numel());
    }
    return total / static_cast<double>(fa.size());
}

// ------------------------------------------------------------- Frechet

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
// Returns eigenvalues; eigenvectors as columns of V when requested.
inline std::vector<double> jacobi_eig(std::vector<double> m, int64_t n,
                                      std::vector<double>* vecs = nullptr) {
    std::vector<double> v;
    if (vecs != nullptr) {
        v.assign(static_cast<size_t>(n * n), 0.0);
        for (int64_t i = 0; i < n; i++) {
            v[static_cast<size_t>(i * n + i)] = 1.0;
        }
    }
    for (int sweep = 0; sweep < 100; sweep++) {
        double off = 0;
        for (int64_t i = 0; i < n; i++) {
            for (int64_t j = i + 1; j < n; j++) {
                off += m[static_cast<size_t>(i * n + j)] * m[static_cast<size_t>(i * n + j)];
            }
        }
        if (off < 1e-24) {
            break;
        }
        for (int64_t p = 0; p < n; p++) {
            for (int64_t q = p + 1; q < n; q++) {
                double apq = m[static_cast<size_t>(p * n + q)];
                if (std::abs(apq) < 1e-18) {
                    continue;
                }
                double app = m[static_cast<size_t>(p * n + p)];
                double aqq = m[static_cast<size_t>(q * n + q)];
                double theta = (aqq - app) / (2 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1));
                double c = 1.0 / std::sqrt(t * t + 1);
                double s = t * c;
                for (int64_t k = 0; k < n; k++) {
                    double mkp = m[static_cast<size_t>(k * n + p)];
                    double mkq = m[static_cast<size_t>(k * n + q)];
                    m[static_cast<size_t>(k * n + p)] = c * mkp - s * mkq;
                    m[static_cast<size_t>(k * n + q)] = s * mkp + c * mkq;
                }
                for (int64_t k = 0; k < n; k++) {
                    double mpk = m[static_cast<size_t>(p * n + k)];
                    double mqk = m[static_cast<size_t>(q * n + k)];
                    m[static_cast<size_t>(p * n + k)] = c * mpk - s * mqk;
                    m[static_cast<size_t>(q * n + k)] = s * mpk + c * mqk;
                }
                if (vecs != nullptr) {
                    for (int64_t k = 0; k < n; k++) {
                        double vkp = v[static_cast<size_t>(k * n + p)];
                        double vkq = v[static_cast<size_t>(k * n + q)];
                        v[static_cast<size_t>(k * n + p)] = c * vkp - s * vkq;
                        v[static_cast<size_t>(k * n + q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    std::vector<double> evals(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; i++) {
        evals[static_cast<size_t>(i)] = m[static_cast<size_t>(i * n + i)];
    }
    if (vecs != nullptr) {
        *vecs = std::move(v);
    }
    return evals;
}

// Symmetric PSD square root via eigendecomposition.
inline std::vector<double> sym_sqrt(const std::vector<double>& m, int64_t n) {
    std::vector<double> vecs;
    auto evals = jacobi_eig(m, n, &vecs);
    std::vector<double> out(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; i++) {
        for (int64_t j = 0; j < n; j++) {
            double acc = 0;
            for (int64_t k = 0; k < n; k++) {
                double lam = std::max(0.0, evals[static_cast<size_t>(k)]);
                acc += vecs[static_cast<size_t>(i * n + k)] * std::sqrt(lam) *
                       vecs[static_cast<size_t>(j * n + k)];
            }
            out[static_cast<size_t>(i * n + j)] = acc;
        }
    }
    return out;
}

inline std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                                   int64_t n) {
    std::vector<double> c(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; i++) {
        for (int64_t k = 0; k < n; k++) {
            double av = a[static_cast<size_t>(i * n + k)];
            for (int64_t j = 0; j < n; j++) {
                c[static_cast<size_t>(i * n + j)] += av * b[static_cast<size_t>(k * n + j)];
            }
        }
    }
    return c;
}

}  // namespace detail

struct GaussianFit {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major d*d, unbiased estimate
    int64_t dim = 0;
};

inline GaussianFit fit_gaussian(const std::vector<std::vector<double>>& samples) {
    if (samples.size() < 2) {
        throw std::invalid_argument("fit_gaussian: need at least 2 samples");
    }
    int64_t n = static_cast<int64_t>(samples.size());
    int64_t d = static_cast<int64_t>(samples[0].size());
    GaussianFit g;
    g.dim = d;
    g.mean.assign(static_cast<size_t>(d), 0.0);
    for (const auto& s : samples) {
        for (int64_t i = 0; i < d; i++) {
            g.mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
        }
    }
    for (auto& m : g.mean) {
        m /= static_cast<double>(n);
    }
    g.cov.assign(static_cast<size_t>(d * d), 0.0);
    for (const auto& s : samples) {
        for (int64_t i = 0; i < d; i++) {
            double di = s[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)];
            for (int64_t j = 0; j < d; j++) {
                double dj = s[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)];
                g.cov[static_cast<size_t>(i * d + j)] += di * dj;
            }
        }
    }
    for (auto& c : g.cov) {
        c /= static_cast<double>(n - 1);
    }
    return g;
}

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), computed through the
// symmetric form sqrt(S1) S2 sqrt(S1).
inline double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    if (a.dim != b.dim) {
        throw std::invalid_argument("frechet_distance: dim mismatch");
    }
    int64_t d = a.dim;
    double mean_term = 0;
    for (int64_t i = 0; i < d; i++) {
        double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }
    double tr = 0;
    for (int64_t i = 0; i < d; i++) {
        tr += a.cov[static_cast<size_t>(i * d + i)] + b.cov[static_cast<size_t>(i * d + i)];
    }
    auto s1_sqrt = detail::sym_sqrt(a.cov, d);
    auto inner = detail::mat_mul(detail::mat_mul(s1_sqrt, b.cov, d), s1_sqrt, d);
    // symmetrize against accumulated round-off before the eigensolve
    for (int64_t i = 0; i < d; i++) {
        for (int64_t j = i + 1; j < d; j++) {
            double m = 0.5 * (inner[static_cast<size_t>(i * d + j)] +
                              inner[static_cast<size_t>(j * d + i)]);
            inner[static_cast<size_t>(i * d + j)] = m;
            inner[static_cast<size_t>(j * d + i)] = m;
        }
    }
    auto evals = detail::jacobi_eig(inner, d);
    double tr_sqrt = 0;
    for (double lam : evals) {
        tr_sqrt += std::sqrt(std::max(0.0, lam));
    }
    return mean_term + tr - 2.0 * tr_sqrt;
}

// Pooled clip feature: the frame-mean of per-frame token means concatenated
// with the mean absolute temporal difference of those means, so motion
// discontinuities move the score.
template <typename T>
std::vector<double> clip_feature(const std::vector<ImageF>& frames,
                                 const SemanticEncoder<T>& enc) {
    if (frames.empty()) {
        throw std::invalid_argument("clip_feature: empty clip");
    }
    int64_t d = enc.cfg.sem_d_emb;
    std::vector<std::vector<double>> per_frame;
    for (const auto& f : frames) {
        Tensor<T> tok = enc.encode_semantic(f);  // (n_tok, d)
        std::vector<double> mean(static_cast<size_t>(d), 0.0);
        for (int64_t t = 0; t < tok.shape[0]; t++) {
            for (int64_t i = 0; i < d; i++) {
                mean[static_cast<size_t>(i)] += tok.at(t, i);
            }
        }
        for (auto& m : mean) {
            m /= static_cast<double>(tok.shape[0]);
        }
        per_frame.push_back(std::move(mean));
    }
    std::vector<double> out(static_cast<size_t>(2 * d), 0.0);
    for (const auto& f : per_frame) {
        for (int64_t i = 0; i < d; i++) {
            out[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
        }
    }
    for (int64_t i = 0; i < d; i++) {
        out[static_cast<size_t>(i)] /= static_cast<double>(per_frame.size());
    }
    if (per_frame.size() > 1) {
        for (size_t k = 1; k < per_frame.size(); k++) {
            for (int64_t i = 0; i < d; i++) {
                out[static_cast<size_t>(d + i)] +=
                    std::abs(per_frame[k][static_cast<size_t>(i)] -
                             per_frame[k - 1][static_cast<size_t>(i)]);
            }
        }
        for (int64_t i = 0; i < d; i++) {
            out[static_cast<size_t>(d + i)] /= static_cast<double>(per_frame.size() - 1);
        }
    }
    return out;
}

// Frechet distance between Gaussian fits of pooled clip features.
template <typename T>
double fvd_proxy(const std::vector<std::vector<ImageF>>& set_a,
                 const std::vector<std::vector<ImageF>>& set_b,
                 const SemanticEncoder<T>& enc) {
    if (set_a.size() < 2 || set_b.size() < 2) {
        throw std::invalid_argument("fvd_proxy: need at least 2 clips per set");
    }
    std::vector<std::vector<double>> fa, fb;
    for (const auto& clip : set_a) {
        fa.push_back(clip_feature(clip, enc));
    }
    for (const auto& clip : set_b) {
        fb.push_back(clip_feature(clip, enc));
    }
    return frechet_distance(fit_gaussian(fa), fit_gaussian(fb));
}

// ------------------------------------------------------------- reports

struct MetricReport {
    double ssim_mean = 0;
    double psnr_mean = 0;
    double perceptual_mean = 0;
    std::optional<double> fvd = std::nullopt;  // needs >= 2 clips per side
    std::vector<double> ssim_per_frame;
    std::vector<double> psnr_per_frame;
    std::vector<double> perceptual_per_frame;

    nlohmann::json to_json() const {
        nlohmann::json j = {
            {"ssim", ssim_mean},
            {"psnr", psnr_mean},
            {"perceptual_dist", perceptual_mean},
            {"per_frame",
             {{"ssim", ssim_per_frame},
              {"psnr", psnr_per_frame},
              {"perceptual_dist", perceptual_per_frame}}},
            {"config",
             {{"ssim_window", 11},
              {"ssim_sigma", 1.5},
              {"psnr_cap_db", kPsnrCapDb},
              {"encoder", "frozen stage-0 semantic encoder (proxy metrics)"}}},
        };
        if (fvd.has_value()) {
            j["fvd_proxy"] = *fvd;
        }
        return j;
    }
};

template <typename T>
MetricReport evaluate_frames(const std::vector<ImageF>& pred, const std::vector<ImageF>& gt,
                             const SemanticEncoder<T>& enc) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw std::invalid_argument("evaluate_frames: frame count mismatch");
    }
    MetricReport r;
    for (size_t i = 0; i < pred.size(); i++) {
        r.ssim_per_frame.push_back(ssim(pred[i], gt[i]));
        r.psnr_per_frame.push_back(psnr(pred[i], gt[i]));
        r.perceptual_per_frame.push_back(perceptual_dist(pred[i], gt[i], enc));
        r.ssim_mean += r.ssim_per_frame.back();
        r.psnr_mean += r.psnr_per_frame.back();
        r.perceptual_mean += r.perceptual_per_frame.back();
    }
    r.ssim_mean /= static_cast<double>(pred.size());
    r.psnr_mean /= static_cast<double>(pred.size());
    r.perceptual_mean /= static_cast<double>(pred.size());
    return r;
}

}  // namespace posediff

#endif  // POSEDIFF_METRICS_HPP
