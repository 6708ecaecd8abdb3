#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "posediff/pipeline.hpp"

using namespace posediff;
namespace fs = std::filesystem;

namespace {

double bone_len(const PoseFrame& f, const Bone& b) {
    double dx = f.joints[static_cast<size_t>(b.a)].x - f.joints[static_cast<size_t>(b.b)].x;
    double dy = f.joints[static_cast<size_t>(b.a)].y - f.joints[static_cast<size_t>(b.b)].y;
    return std::sqrt(dx * dx + dy * dy);
}

PoseFrame scaled_about_pelvis(const PoseFrame& f, double s) {
    PoseFrame out = f;
    Vec2 root = f.joints[J_PELVIS];
    for (auto& j : out.joints) {
        j.x = root.x + s * (j.x - root.x);
        j.y = root.y + s * (j.y - root.y);
    }
    return out;
}

struct AnimFixture {
    AutoencoderBundle<float> ae;
    ModelBundle<float> mb;
    fs::path dir;
    std::string ref_path;
    PoseSequence driving;
    PoseFrame ref_pose;

    AnimFixture()
        : ae(AutoencoderConfig{}, 1001),
          mb(
              [] {
                  UNetConfig c;
                  c.latent_channels = 4;
                  c.base_channels = 8;
                  c.mults = {1, 2};
                  c.heads = 2;
                  c.t_emb_dim = 16;
                  c.d_emb = 64;
                  c.n_tok = 8;
                  return c;
              }(),
              1002) {
        dir = fs::temp_directory_path() / "posediff_pipeline_fixture";
        fs::create_directories(dir);
        auto character = gen_character(31);
        driving = gen_pose_sequence(31, 6, 0.04);
        ref_pose = driving.frames[0];
        ref_path = (dir / "ref.png").string();
        write_png(ref_path, render_frame(character, ref_pose, 32));
    }

    AnimationRequest request(uint64_t seed) const {
        AnimationRequest r;
        r.reference_image_path = ref_path;
        r.driving = driving;
        r.reference_pose = ref_pose;
        r.seed = seed;
        r.resolution = 32;
        r.window = 4;
        r.overlap = 1;
        return r;
    }
};

AnimFixture& anim_fixture() {
    static AnimFixture f;
    return f;
}

}  // namespace

TEST_CASE("rescale: equal heights return the input exactly") {
    auto seq = gen_pose_sequence(3, 5, 0.05);
    auto out = rescale_pose(seq, seq.frames[0]);
    for (size_t k = 0; k < seq.frames.size(); k++) {
        for (int j = 0; j < JOINT_COUNT; j++) {
            CHECK(out.frames[k].joints[j].x == seq.frames[k].joints[j].x);
            CHECK(out.frames[k].joints[j].y == seq.frames[k].joints[j].y);
        }
    }
}

TEST_CASE("rescale: 2x driving height halves every bone length") {
    auto driving = gen_pose_sequence(5, 6, 0.05);
    PoseFrame ref = scaled_about_pelvis(driving.frames[0], 0.5);
    auto out = rescale_pose(driving, ref);
    for (size_t k = 0; k < driving.frames.size(); k++) {
        for (const auto& b : skeleton_bones()) {
            double orig = bone_len(driving.frames[k], b);
            double got = bone_len(out.frames[k], b);
            CHECK(got / orig == doctest::Approx(0.5).epsilon(1e-9));
        }
    }
    // frame-0 pelvis anchored
    CHECK(out.frames[0].joints[J_PELVIS].x == doctest::Approx(driving.frames[0].joints[J_PELVIS].x));
    CHECK(out.frames[0].joints[J_PELVIS].y == doctest::Approx(driving.frames[0].joints[J_PELVIS].y));
}

TEST_CASE("rescale rejects degenerate skeletons") {
    auto seq = gen_pose_sequence(7, 2, 0.05);
    PoseFrame flat;
    for (auto& j : flat.joints) {
        j = {0.5, 0.5};
    }
    CHECK_THROWS_AS(rescale_pose(seq, flat), std::invalid_argument);
    PoseSequence flat_seq;
    flat_seq.frames = {flat};
    CHECK_THROWS_AS(rescale_pose(flat_seq, seq.frames[0]), std::invalid_argument);
}

TEST_CASE("plan_windows: short video collapses to a single window") {
    auto plan = plan_windows(8, 24, 8);
    CHECK(plan.windows.size() == 1);
    CHECK(plan.windows[0].start == 0);
    CHECK(plan.windows[0].end == 8);
    for (const auto& fw : plan.weights) {
        CHECK(fw.size() == 1);
        CHECK(fw[0].second == 1.0);
    }
}

TEST_CASE("plan_windows: N=48 W=24 V=8 gives the documented spans with exact weight sums") {
    auto plan = plan_windows(48, 24, 8);
    REQUIRE(plan.windows.size() == 3);
    CHECK(plan.windows[0].start == 0);
    CHECK(plan.windows[0].end == 24);
    CHECK(plan.windows[1].start == 16);
    CHECK(plan.windows[1].end == 40);
    CHECK(plan.windows[2].start == 24);
    CHECK(plan.windows[2].end == 48);
    for (int64_t i = 0; i < 48; i++) {
        double sum = 0;
        for (const auto& [wi, wt] : plan.weights[static_cast<size_t>(i)]) {
            CHECK(wt >= 0.0);
            sum += wt;
        }
        CHECK(sum == 1.0);  // exact
    }
    // the ramp hands over monotonically inside the first overlap
    for (int64_t i = 17; i < 24; i++) {
        double prev = plan.weights[static_cast<size_t>(i - 1)][1].second;
        double cur = plan.weights[static_cast<size_t>(i)][1].second;
        CHECK(cur > prev);
    }
}

TEST_CASE("plan_windows: W=N keeps every weight at exactly 1") {
    auto plan = plan_windows(24, 24, 8);
    CHECK(plan.windows.size() == 1);
    for (const auto& fw : plan.weights) {
        CHECK(fw[0].second == 1.0);
    }
}

TEST_CASE("plan_windows input validation") {
    CHECK_THROWS_AS(plan_windows(0, 24, 8), std::invalid_argument);
    CHECK_THROWS_AS(plan_windows(10, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(plan_windows(10, 8, 8), std::invalid_argument);
}

TEST_CASE("animate: determinism, frame count, and single reference pass") {
    auto& f = anim_fixture();
    SamplerConfig sc{4, 0.0, 0};
    auto a = animate(f.request(99), f.mb, f.ae, sc);
    auto b = animate(f.request(99), f.mb, f.ae, sc);
    CHECK(a.frames.size() == 6);
    CHECK(a.latents.size() == 6);
    CHECK(a.reference_net_runs == 1);
    for (size_t i = 0; i < a.frames.size(); i++) {
        CHECK(a.frames[i].v == b.frames[i].v);
        CHECK(a.latents[i].v == b.latents[i].v);
    }
    auto c = animate(f.request(100), f.mb, f.ae, sc);
    CHECK(a.latents[0].v != c.latents[0].v);  // seed matters
}

TEST_CASE("animate: zero-conditioning invariance at initialization") {
    auto& f = anim_fixture();
    SamplerConfig sc{4, 0.0, 0};
    auto req_a = f.request(7);
    auto req_b = f.request(7);
    req_b.driving = gen_pose_sequence(77, 6, 0.05);  // different poses
    req_b.reference_pose = req_b.driving.frames[0];
    auto a = animate(req_a, f.mb, f.ae, sc);
    auto b = animate(req_b, f.mb, f.ae, sc);
    for (size_t i = 0; i < a.latents.size(); i++) {
        CHECK(a.latents[i].v == b.latents[i].v);  // bitwise: pose guider is zero-init
    }
}

TEST_CASE("animate: W >= N bypasses blending and equals single-window sampling") {
    auto& f = anim_fixture();
    SamplerConfig sc{4, 0.0, 0};
    auto req1 = f.request(5);
    req1.window = 6;  // == N
    req1.overlap = 2;
    auto req2 = f.request(5);
    req2.window = 30;  // > N
    req2.overlap = 8;
    auto a = animate(req1, f.mb, f.ae, sc);
    auto b = animate(req2, f.mb, f.ae, sc);
    CHECK(a.plan.windows.size() == 1);
    CHECK(b.plan.windows.size() == 1);
    for (size_t i = 0; i < a.latents.size(); i++) {
        CHECK(a.latents[i].v == b.latents[i].v);
    }
}

TEST_CASE("animate: stage-2 model at zero temporal init matches stage 1 bitwise") {
    auto& f = anim_fixture();
    SamplerConfig sc{3, 0.0, 0};
    auto a = animate(f.request(11), f.mb, f.ae, sc);
    ModelBundle<float> stage2 = f.mb;
    init_temporal_zero(stage2);
    auto b = animate(f.request(11), stage2, f.ae, sc);
    for (size_t i = 0; i < a.latents.size(); i++) {
        CHECK(a.latents[i].v == b.latents[i].v);
    }
}

TEST_CASE("animate validates configuration compatibility") {
    auto& f = anim_fixture();
    SamplerConfig sc{2, 0.0, 0};
    UNetConfig bad = f.mb.cfg;
    bad.latent_channels = 2;
    ModelBundle<float> wrong(bad, 1);
    CHECK_THROWS_AS(animate(f.request(1), wrong, f.ae, sc), std::invalid_argument);

    auto req = f.request(1);
    req.driving.frames.clear();
    CHECK_THROWS_AS(animate(req, f.mb, f.ae, sc), std::invalid_argument);

    auto req2 = f.request(1);
    req2.resolution = 30;
    CHECK_THROWS_AS(animate(req2, f.mb, f.ae, sc), std::invalid_argument);
}

TEST_CASE("write_video_result emits frames and a manifest") {
    auto& f = anim_fixture();
    SamplerConfig sc{2, 0.0, 0};
    auto res = animate(f.request(42), f.mb, f.ae, sc);
    auto out = fs::temp_directory_path() / "posediff_video_out";
    fs::remove_all(out);
    write_video_result(out.string(), res);
    CHECK(fs::exists(out / "frames" / "00000.png"));
    CHECK(fs::exists(out / "frames" / "00005.png"));
    CHECK(fs::exists(out / "result.json"));
    std::ifstream jf(out / "result.json");
    auto j = nlohmann::json::parse(jf);
    CHECK(j.at("seed").get<uint64_t>() == 42);
    CHECK(j.at("frame_count").get<int>() == 6);
    CHECK(j.at("reference_net_runs").get<int>() == 1);
    fs::remove_all(out);
}
