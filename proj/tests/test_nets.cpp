#include <doctest.h>

#include <filesystem>

#include "posediff/gradcheck.hpp"
#include "posediff/nets.hpp"

using namespace posediff;
namespace ag = posediff::ag;
namespace fs = std::filesystem;

namespace {

UNetConfig tiny_config() {
    UNetConfig c;
    c.latent_channels = 2;
    c.base_channels = 4;
    c.mults = {1};
    c.heads = 1;
    c.t_emb_dim = 8;
    c.d_emb = 4;
    c.n_tok = 2;
    return c;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double worst = 0;
    for (int64_t i = 0; i < a.numel(); i++) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("reference cache: determinism and per-level shape contract") {
    UNetConfig cfg;  // base 32, mults {1,2}
    ModelBundle<float> mb(cfg, 1);
    Rng rng(2);
    auto ref = ag::Var<float>::leaf(rng.normal_tensor<float>({2, 8, 8, 4}));
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({2, 8, 64}));

    auto c1 = mb.refnet.reference_forward(ref, tok);
    auto c2 = mb.refnet.reference_forward(ref, tok);
    CHECK(c1.features.size() == 5);  // 2 levels: down0, down1, mid, up1, up0
    for (size_t i = 0; i < c1.features.size(); i++) {
        CHECK(c1.features[i].value().v == c2.features[i].value().v);
    }

    // level l entries have spatial dims (H/f)/2^l
    CHECK(c1.features[0].shape() == Shape{2, 8, 8, 32});
    CHECK(c1.features[1].shape() == Shape{2, 4, 4, 64});
    CHECK(c1.features[2].shape() == Shape{2, 2, 2, 64});  // middle
    CHECK(c1.features[3].shape() == Shape{2, 4, 4, 64});
    CHECK(c1.features[4].shape() == Shape{2, 8, 8, 32});
}

TEST_CASE("denoising with one cache equals recomputing the cache per frame") {
    UNetConfig cfg = tiny_config();
    ModelBundle<float> mb(cfg, 3);
    Rng rng(4);
    int64_t frames = 8;
    auto ref = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 4, 4, 2}));
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4}));
    auto noisy = rng.normal_tensor<float>({1, frames, 4, 4, 2});

    ag::NoGradGuard ng;
    auto cache_once = mb.refnet.reference_forward(ref, tok);
    auto all = mb.unet.forward(ag::Var<float>::leaf(noisy), {500}, &cache_once, tok, nullptr,
                               false);

    for (int64_t f = 0; f < frames; f++) {
        auto cache_again = mb.refnet.reference_forward(ref, tok);  // recompute per frame
        Tensor<float> one({1, 1, 4, 4, 2});
        std::memcpy(one.data(), noisy.data() + f * 32, 32 * sizeof(float));
        auto out = mb.unet.forward(ag::Var<float>::leaf(std::move(one)), {500}, &cache_again, tok,
                                   nullptr, false);
        for (int64_t i = 0; i < 32; i++) {
            CHECK(out.value()[i] == all.value()[f * 32 + i]);  // bitwise
        }
    }
}

TEST_CASE("pose guider: zero output at init and latent-resolution alignment") {
    Rng rng(5);
    PoseGuider<float> pg(4, rng);
    auto skel = ag::Var<float>::leaf(rng.uniform_tensor<float>({2, 64, 64, 3}));
    auto out = pg.forward(skel);
    CHECK(out.shape() == Shape{2, 8, 8, 4});
    for (auto v : out.value().v) {
        CHECK(v == 0.0f);
    }
    auto bad = ag::Var<float>::leaf(rng.uniform_tensor<float>({1, 60, 60, 3}));
    CHECK_THROWS_AS(pg.forward(bad), std::invalid_argument);
}

TEST_CASE("pose guider parameter count matches the closed-form conv formula") {
    Rng rng(6);
    int64_t c_lat = 4;
    PoseGuider<float> pg(c_lat, rng);
    int64_t chans[] = {3, 16, 32, 64, 128};
    int64_t want = 0;
    for (int i = 0; i < 4; i++) {
        want += 4 * 4 * chans[i] * chans[i + 1] + chans[i + 1];
    }
    want += 3 * 3 * 128 * c_lat + c_lat;
    CHECK(pg.param_count() == want);
}

TEST_CASE("zero-conditioning invariance: different skeletons, identical outputs at init") {
    UNetConfig cfg = tiny_config();
    ModelBundle<float> mb(cfg, 7);
    Rng rng(8);
    ag::NoGradGuard ng;
    auto noisy = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4, 4, 2}));
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4}));

    auto skel_a = ag::Var<float>::leaf(rng.uniform_tensor<float>({2, 32, 32, 3}));
    auto skel_b = ag::Var<float>::leaf(rng.uniform_tensor<float>({2, 32, 32, 3}));
    auto pa = ag::reshape(mb.pose_guider.forward(skel_a), {1, 2, 4, 4, 2});
    auto pb = ag::reshape(mb.pose_guider.forward(skel_b), {1, 2, 4, 4, 2});

    auto ya = mb.unet.forward(noisy, {10}, nullptr, tok, &pa, false);
    auto yb = mb.unet.forward(noisy, {10}, nullptr, tok, &pb, false);
    CHECK(ya.value().v == yb.value().v);
}

TEST_CASE("denoise forward: shape preservation and error paths") {
    UNetConfig cfg = tiny_config();
    ModelBundle<float> mb(cfg, 9);
    Rng rng(10);
    ag::NoGradGuard ng;
    auto noisy = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 4, 4, 8, 2}));
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4}));
    auto out = mb.unet.forward(noisy, {3}, nullptr, tok, nullptr, true);
    CHECK(out.shape() == noisy.shape());

    auto badpose = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 4, 4, 4, 2}));
    CHECK_THROWS_AS(mb.unet.forward(noisy, {3}, nullptr, tok, &badpose, false),
                    std::invalid_argument);
    CHECK_THROWS_AS(mb.unet.forward(noisy, {3, 4}, nullptr, tok, nullptr, false),
                    std::invalid_argument);

    auto badlat = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 4, 4, 8, 3}));
    CHECK_THROWS_AS(mb.unet.forward(badlat, {3}, nullptr, tok, nullptr, false),
                    std::invalid_argument);
}

TEST_CASE("pure image denoiser: identical frames give identical outputs") {
    UNetConfig cfg = tiny_config();
    ModelBundle<float> mb(cfg, 11);
    Rng rng(12);
    ag::NoGradGuard ng;
    Tensor<float> frame = rng.normal_tensor<float>({1, 1, 4, 4, 2});
    Tensor<float> video({1, 3, 4, 4, 2});
    for (int f = 0; f < 3; f++) {
        std::memcpy(video.data() + f * 32, frame.data(), 32 * sizeof(float));
    }
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4}));
    auto out = mb.unet.forward(ag::Var<float>::leaf(std::move(video)), {77}, nullptr, tok,
                               nullptr, false);
    for (int f = 1; f < 3; f++) {
        for (int64_t i = 0; i < 32; i++) {
            CHECK(out.value()[f * 32 + i] == out.value()[i]);
        }
    }
}

TEST_CASE("init_temporal_zero restores stage-1 behaviour and touches nothing else") {
    UNetConfig cfg = tiny_config();
    ModelBundle<float> mb(cfg, 13);
    Rng rng(14);

    uint64_t non_temporal_before = mb.non_temporal_hash();

    // simulate stage-2 training having moved the temporal projections
    for (auto& blk : mb.unet.down_blocks) {
        blk.attn_temporal.o.w.value()[0] = 0.5f;
    }
    mb.unet.mid.attn_temporal.o.w.value()[0] = 0.5f;

    ag::NoGradGuard ng;
    auto noisy = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 3, 4, 4, 2}));
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4}));
    auto stage1 = mb.unet.forward(noisy, {40}, nullptr, tok, nullptr, false);
    auto perturbed = mb.unet.forward(noisy, {40}, nullptr, tok, nullptr, true);
    CHECK(max_abs_diff(stage1.value(), perturbed.value()) > 0.0);

    init_temporal_zero(mb);
    CHECK(mb.stage == 2);
    auto after = mb.unet.forward(noisy, {40}, nullptr, tok, nullptr, true);
    CHECK(after.value().v == stage1.value().v);  // exact residual identity

    CHECK(mb.non_temporal_hash() == non_temporal_before);

    // temporal projections hash like zero tensors
    ParamMap<float> tp;
    mb.temporal_params(tp);
    for (auto& [name, p] : tp) {
        if (name.ends_with(".o.w") || name.ends_with(".o.b")) {
            CHECK(tensor_hash(p.value()) == tensor_hash(Tensor<float>::zeros(p.value().shape)));
        }
    }
}

TEST_CASE("model bundle checkpoint round-trip is bit-identical") {
    UNetConfig cfg = tiny_config();
    ModelBundle<float> mb(cfg, 15);
    mb.stage = 1;
    auto dir = fs::temp_directory_path() / "posediff_nets_ckpt";
    fs::create_directories(dir);
    auto path = (dir / "model.pdck").string();
    mb.save(path);
    auto loaded = ModelBundle<float>::load(path);
    CHECK(loaded.weights_hash() == mb.weights_hash());
    CHECK(loaded.stage == 1);
    CHECK(loaded.schedule_steps == mb.schedule_steps);

    Rng rng(16);
    ag::NoGradGuard ng;
    auto noisy = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4, 4, 2}));
    auto tok = ag::Var<float>::leaf(rng.normal_tensor<float>({1, 2, 4}));
    auto a = mb.unet.forward(noisy, {9}, nullptr, tok, nullptr, false);
    auto b = loaded.unet.forward(noisy, {9}, nullptr, tok, nullptr, false);
    CHECK(a.value().v == b.value().v);
    fs::remove_all(dir);
}

TEST_CASE("full tiny model gradients (unet + reference encoder) vs finite differences") {
    UNetConfig cfg = tiny_config();
    Rng rng(17);
    ModelBundle<double> mb(cfg, 18);
    auto noisy = ag::Var<double>::leaf(rng.normal_tensor<double>({1, 2, 2, 2, 2}));
    auto ref = ag::Var<double>::leaf(rng.normal_tensor<double>({1, 2, 2, 2}));
    auto tok = ag::Var<double>::leaf(rng.normal_tensor<double>({1, 2, 4}));
    Rng probe(19);
    auto pw = probe.normal_tensor<double>({1, 2, 2, 2, 2});

    ParamMap<double> params;
    mb.unet.params(params, "unet", true);
    mb.refnet.params(params, "refnet", false);

    auto loss_fn = [&]() {
        auto cache = mb.refnet.reference_forward(ref, tok);
        auto out = mb.unet.forward(noisy, {25}, &cache, tok, nullptr, true);
        return ag::sum_all(ag::mul(out, ag::Var<double>::leaf(pw)));
    };
    auto rep = grad_check(params, loss_fn, 1e-5, 6);
    INFO(rep.worst_param, "[", rep.worst_index, "] analytic=", rep.analytic,
         " numeric=", rep.numeric);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("pose guider gradients vs finite differences (sampled elements)") {
    Rng rng(20);
    PoseGuider<double> pg(2, rng);
    // zero projection blocks all gradient flow; move it off zero first
    Rng prng(21);
    pg.proj.w = ag::Var<double>::leaf(prng.normal_tensor<double>({3, 3, 128, 2}, 0.0, 0.05), true);
    auto skel = ag::Var<double>::leaf(rng.uniform_tensor<double>({1, 16, 16, 3}));
    Rng probe(22);
    auto pw = probe.normal_tensor<double>({1, 2, 2, 2});
    ParamMap<double> params;
    pg.params(params, "pg");
    auto rep = grad_check(params,
                          [&]() {
                              return ag::sum_all(
                                  ag::mul(pg.forward(skel), ag::Var<double>::leaf(pw)));
                          },
                          1e-5, 8);
    INFO(rep.worst_param, " analytic=", rep.analytic, " numeric=", rep.numeric);
    CHECK(rep.max_rel_err < 1e-4);
}
