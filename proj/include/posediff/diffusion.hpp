#ifndef POSEDIFF_DIFFUSION_HPP
#define POSEDIFF_DIFFUSION_HPP

// Noise schedule, forward diffusion, the eps-prediction training objective,
// and the deterministic DDIM sampler.

#include <cmath>
#include <functional>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace posediff {

struct DiffusionSchedule {
    int64_t total_steps = 0;              // T
    std::vector<double> betas;            // betas[t-1] is beta_t, t in [1,T]
    std::vector<double> alphas;           // 1 - beta
    std::vector<double> alpha_bars;       // alpha_bars[t] is the cumprod; [0] = 1

    double alpha_bar(int64_t t) const { return alpha_bars[static_cast<size_t>(t)]; }
};

enum class ScheduleKind { Linear };

inline DiffusionSchedule build_schedule(int64_t total_steps, double beta_start, double beta_end,
                                        ScheduleKind kind = ScheduleKind::Linear) {
    if (total_steps < 1) {
        throw std::invalid_argument("build_schedule: T must be >= 1");
    }
    if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
    }
    (void)kind;  // only linear exists
    DiffusionSchedule s;
    s.total_steps = total_steps;
    s.betas.resize(static_cast<size_t>(total_steps));
    s.alphas.resize(static_cast<size_t>(total_steps));
    s.alpha_bars.resize(static_cast<size_t>(total_steps) + 1);
    s.alpha_bars[0] = 1.0;
    for (int64_t t = 1; t <= total_steps; t++) {
        double beta =
            total_steps == 1
                ? beta_start
                : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) /
                                   static_cast<double>(total_steps - 1);
        s.betas[static_cast<size_t>(t - 1)] = beta;
        s.alphas[static_cast<size_t>(t - 1)] = 1.0 - beta;
        s.alpha_bars[static_cast<size_t>(t)] =
            s.alpha_bars[static_cast<size_t>(t - 1)] * (1.0 - beta);
    }
    return s;
}

// z_t = sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps, with one t per leading-dim
// sample. t = 0 is the identity (alpha_bar = 1 convention).
template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, const std::vector<int64_t>& t, const Tensor<T>& eps,
                   const DiffusionSchedule& sched) {
    if (!same_shape(z0, eps)) {
        throw std::invalid_argument("q_sample: z0/eps shape mismatch");
    }
    int64_t b = z0.shape[0];
    if (static_cast<int64_t>(t.size()) != b) {
        throw std::invalid_argument("q_sample: need one timestep per sample");
    }
    int64_t per = z0.numel() / b;
    Tensor<T> out(z0.shape);
    for (int64_t i = 0; i < b; i++) {
        if (t[static_cast<size_t>(i)] < 0 || t[static_cast<size_t>(i)] > sched.total_steps) {
            throw std::invalid_argument("q_sample: timestep out of range");
        }
        double ab = sched.alpha_bar(t[static_cast<size_t>(i)]);
        T c0 = static_cast<T>(std::sqrt(ab));
        T c1 = static_cast<T>(std::sqrt(1.0 - ab));
        const T* z = z0.data() + i * per;
        const T* e = eps.data() + i * per;
        T* o = out.data() + i * per;
        for (int64_t j = 0; j < per; j++) {
            o[j] = c0 * z[j] + c1 * e[j];
        }
    }
    return out;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, int64_t t, const Tensor<T>& eps,
                   const DiffusionSchedule& sched) {
    return q_sample(z0, std::vector<int64_t>(static_cast<size_t>(z0.shape[0]), t), eps, sched);
}

// Eq-style objective: draw per-sample t and unit-Gaussian eps, diffuse, and
// score the model's noise prediction with mean squared error. The model
// callable owns all conditioning; it maps (z_t leaf, t batch) to a Var.
template <typename T, typename ModelFn>
ag::Var<T> diffusion_training_loss(const Tensor<T>& z0, const DiffusionSchedule& sched, Rng& rng,
                                   ModelFn&& model) {
    int64_t b = z0.shape[0];
    std::vector<int64_t> t(static_cast<size_t>(b));
    for (auto& ti : t) {
        ti = rng.uniform_int(1, sched.total_steps);
    }
    Tensor<T> eps = rng.normal_tensor<T>(z0.shape);
    Tensor<T> zt = q_sample(z0, t, eps, sched);
    ag::Var<T> pred = model(ag::Var<T>::leaf(std::move(zt)), t);
    if (pred.shape() != z0.shape) {
        throw std::invalid_argument("diffusion_training_loss: prediction shape mismatch");
    }
    return ag::mse(pred, ag::Var<T>::leaf(std::move(eps)));
}

struct SamplerConfig {
    int64_t num_steps = 20;
    double eta = 0.0;
    uint64_t seed = 0;
};

// Descending timestep subsequence with uniform stride over [1, T], closing at
// 0 (alpha_bar = 1).
inline std::vector<int64_t> ddim_timesteps(int64_t total_steps, int64_t num_steps) {
    if (num_steps < 1 || num_steps > total_steps) {
        throw std::invalid_argument("ddim_timesteps: need 1 <= num_steps <= T");
    }
    std::vector<int64_t> ts;
    for (int64_t i = 0; i < num_steps; i++) {
        ts.push_back(total_steps - (i * total_steps) / num_steps);
    }
    ts.push_back(0);
    return ts;
}

// DDIM sampling from caller-provided initial noise. eps_model maps
// (z_t, t) -> predicted noise; eta = 0 is fully deterministic.
template <typename T, typename EpsFn>
Tensor<T> ddim_sample_from(EpsFn&& eps_model, Tensor<T> z, const SamplerConfig& cfg,
                           const DiffusionSchedule& sched) {
    auto ts = ddim_timesteps(sched.total_steps, cfg.num_steps);
    Rng noise_rng = Rng::stream(cfg.seed, 0x5344494du);
    for (size_t k = 0; k + 1 < ts.size(); k++) {
        int64_t t = ts[k];
        int64_t t_prev = ts[k + 1];
        double ab = sched.alpha_bar(t);
        double ab_prev = sched.alpha_bar(t_prev);
        Tensor<T> eps = eps_model(z, t);
        if (!same_shape(eps, z)) {
            throw std::invalid_argument("ddim_sample: model prediction shape mismatch");
        }
        double sigma = 0.0;
        if (cfg.eta > 0.0) {
            sigma = cfg.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) *
                    std::sqrt(1.0 - ab / ab_prev);
        }
        double c_z0 = std::sqrt(ab_prev) / std::sqrt(ab);
        double c_eps = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)) -
                       std::sqrt(ab_prev) * std::sqrt(1.0 - ab) / std::sqrt(ab);
        for (int64_t i = 0; i < z.numel(); i++) {
            double zi = c_z0 * z[i] + c_eps * eps[i];
            if (sigma > 0.0) {
                zi += sigma * noise_rng.normal();
            }
            z[i] = static_cast<T>(zi);
        }
    }
    return z;
}

template <typename T, typename EpsFn>
Tensor<T> ddim_sample(EpsFn&& eps_model, const SamplerConfig& cfg, const DiffusionSchedule& sched,
                      const Shape& latent_shape) {
    Rng init_rng = Rng::stream(cfg.seed, 0x494e4954u);
    Tensor<T> z = init_rng.normal_tensor<T>(latent_shape);
    return ddim_sample_from(eps_model, std::move(z), cfg, sched);
}

}  // namespace posediff

#endif  // POSEDIFF_DIFFUSION_HPP
