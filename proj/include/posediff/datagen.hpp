#ifndef POSEDIFF_DATAGEN_HPP
#define POSEDIFF_DATAGEN_HPP

// Procedural sprite dataset: seeded characters, forward-kinematics pose
// sequences, an RGB renderer, and a skeleton renderer in the OpenPose
// colour convention. Everything here is a pure function of its arguments,
// so clips can be regenerated file-by-file.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace posediff {

struct Vec2 {
    double x = 0, y = 0;
};

// 13-joint topology: head, neck, shoulders, elbows, wrists, hips, knees,
// pelvis root. Constant across the entire dataset.
enum Joint : int {
    J_HEAD = 0,
    J_NECK,
    J_L_SHOULDER,
    J_R_SHOULDER,
    J_L_ELBOW,
    J_R_ELBOW,
    J_L_WRIST,
    J_R_WRIST,
    J_L_HIP,
    J_R_HIP,
    J_L_KNEE,
    J_R_KNEE,
    J_PELVIS,
    JOINT_COUNT
};

struct Bone {
    int a, b;  // joint indices
};

inline const std::vector<Bone>& skeleton_bones() {
    static const std::vector<Bone> bones = {
        {J_PELVIS, J_NECK},       // torso
        {J_NECK, J_HEAD},         // neck
        {J_NECK, J_L_SHOULDER},   {J_L_SHOULDER, J_L_ELBOW}, {J_L_ELBOW, J_L_WRIST},
        {J_NECK, J_R_SHOULDER},   {J_R_SHOULDER, J_R_ELBOW}, {J_R_ELBOW, J_R_WRIST},
        {J_PELVIS, J_L_HIP},      {J_L_HIP, J_L_KNEE},
        {J_PELVIS, J_R_HIP},      {J_R_HIP, J_R_KNEE},
    };
    return bones;
}

inline int bone_count() { return static_cast<int>(skeleton_bones().size()); }

struct Rgb {
    float r = 0, g = 0, b = 0;
};

struct CharacterSpec {
    uint64_t seed = 0;
    std::vector<Rgb> limb_colors;      // one per bone
    std::vector<double> proportions;   // per-bone length scalars, relative to torso
    double head_radius = 0.07;         // fraction of image height
};

struct PoseFrame {
    std::array<Vec2, JOINT_COUNT> joints;  // normalized [0,1] image coordinates
};

struct PoseSequence {
    std::vector<PoseFrame> frames;
    double fps = 12.0;
};

struct ClipRecord {
    CharacterSpec character;
    PoseSequence poses;
    std::vector<std::string> frame_paths;
    std::vector<std::string> skeleton_paths;
    int64_t reference_index = 0;
    int64_t resolution = 64;
};

// ------------------------------------------------------------- characters

inline CharacterSpec gen_character(uint64_t seed) {
    Rng rng = Rng::stream(seed, 0x43484152);  // character stream
    CharacterSpec c;
    c.seed = seed;
    int nb = bone_count();
    c.limb_colors.resize(static_cast<size_t>(nb));
    for (auto& col : c.limb_colors) {
        // bright, saturated palette; sprites should be easy to tell apart
        double h = rng.uniform(0.0, 6.0);
        double s = rng.uniform(0.55, 1.0);
        double v = rng.uniform(0.55, 1.0);
        int hi = static_cast<int>(h) % 6;
        double f = h - std::floor(h);
        double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        double r = 0, g = 0, b = 0;
        switch (hi) {
            case 0: r = v; g = t; b = p; break;
            case 1: r = q; g = v; b = p; break;
            case 2: r = p; g = v; b = t; break;
            case 3: r = p; g = q; b = v; break;
            case 4: r = t; g = p; b = v; break;
            default: r = v; g = p; b = q; break;
        }
        col = {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
    }
    c.proportions.resize(static_cast<size_t>(nb));
    for (auto& p : c.proportions) {
        p = rng.uniform(0.8, 1.2);
    }
    c.head_radius = rng.uniform(0.055, 0.085);
    return c;
}

// ------------------------------------------------------------- pose model

namespace detail {

// Base bone lengths in normalized units, scaled by per-bone proportions.
inline std::vector<double> bone_lengths(const CharacterSpec& c) {
    static const double base[] = {
        0.22,  // torso
        0.05,  // neck
        0.07, 0.11, 0.10,  // left shoulder offset, upper arm, forearm
        0.07, 0.11, 0.10,  // right
        0.05, 0.13,        // left hip offset, thigh
        0.05, 0.13,        // right
    };
    std::vector<double> out(static_cast<size_t>(bone_count()));
    for (size_t i = 0; i < out.size(); i++) {
        out[i] = base[i] * c.proportions[i];
    }
    return out;
}

struct MotionParams {
    // One oscillator per articulated degree of freedom.
    struct Osc {
        double base, amp, freq, phase;
        double eval(double t) const { return base + amp * std::sin(2.0 * M_PI * freq * t + phase); }
        double max_step(double dt) const { return amp * 2.0 * M_PI * freq * dt; }
    };
    Osc lean, root_x, root_y;
    Osc l_upper_arm, l_forearm, r_upper_arm, r_forearm;
    Osc l_thigh, r_thigh;
};

inline MotionParams motion_params(uint64_t seed, double unit) {
    Rng rng = Rng::stream(seed, 0x4d4f5450);  // motion stream
    auto osc = [&](double base, double amp, double flo, double fhi) {
        MotionParams::Osc o;
        o.base = base;
        o.amp = amp * unit;
        o.freq = rng.uniform(flo, fhi);
        o.phase = rng.uniform(0.0, 2.0 * M_PI);
        return o;
    };
    MotionParams m;
    m.lean = osc(rng.uniform(-0.06, 0.06), 0.10, 0.2, 0.6);
    m.root_x = osc(0.0, 0.05, 0.2, 0.5);
    m.root_y = osc(0.0, 0.03, 0.4, 0.9);
    m.l_upper_arm = osc(rng.uniform(0.25, 0.6), 0.8, 0.3, 1.0);
    m.l_forearm = osc(rng.uniform(0.1, 0.5), 0.7, 0.3, 1.0);
    m.r_upper_arm = osc(rng.uniform(-0.6, -0.25), 0.8, 0.3, 1.0);
    m.r_forearm = osc(rng.uniform(-0.5, -0.1), 0.7, 0.3, 1.0);
    m.l_thigh = osc(rng.uniform(0.05, 0.25), 0.5, 0.3, 0.8);
    m.r_thigh = osc(rng.uniform(-0.25, -0.05), 0.5, 0.3, 0.8);
    return m;
}

inline Vec2 polar(const Vec2& from, double len, double angle) {
    // angle measured clockwise from straight down (screen y grows downward)
    return {from.x + len * std::sin(angle), from.y + len * std::cos(angle)};
}

inline PoseFrame pose_at(const MotionParams& m, const std::vector<double>& len, double t) {
    PoseFrame f;
    double lean = m.lean.eval(t);
    Vec2 root{0.5 + m.root_x.eval(t), 0.58 + m.root_y.eval(t)};
    f.joints[J_PELVIS] = root;
    // torso up: straight up is angle pi from "down"
    Vec2 neck = polar(root, len[0], M_PI + lean);
    f.joints[J_NECK] = neck;
    f.joints[J_HEAD] = polar(neck, len[1], M_PI + lean);
    // shoulder and hip offsets are perpendicular to the torso axis
    double perp = M_PI / 2.0;
    f.joints[J_L_SHOULDER] = polar(neck, len[2], M_PI + lean + perp);
    f.joints[J_R_SHOULDER] = polar(neck, len[5], M_PI + lean - perp);
    f.joints[J_L_ELBOW] = polar(f.joints[J_L_SHOULDER], len[3], m.l_upper_arm.eval(t) + lean);
    f.joints[J_L_WRIST] =
        polar(f.joints[J_L_ELBOW], len[4], m.l_upper_arm.eval(t) + m.l_forearm.eval(t) + lean);
    f.joints[J_R_ELBOW] = polar(f.joints[J_R_SHOULDER], len[6], m.r_upper_arm.eval(t) + lean);
    f.joints[J_R_WRIST] =
        polar(f.joints[J_R_ELBOW], len[7], m.r_upper_arm.eval(t) + m.r_forearm.eval(t) + lean);
    f.joints[J_L_HIP] = polar(root, len[8], M_PI + lean + perp);
    f.joints[J_R_HIP] = polar(root, len[10], M_PI + lean - perp);
    f.joints[J_L_KNEE] = polar(f.joints[J_L_HIP], len[9], m.l_thigh.eval(t));
    f.joints[J_R_KNEE] = polar(f.joints[J_R_HIP], len[11], m.r_thigh.eval(t));
    return f;
}

// Worst-case per-frame joint displacement for a unit oscillation scale:
// |dpos| <= |droot| + sum over the kinematic chain of len_i * |dtheta_i|.
inline double max_step_bound(const MotionParams& m, const std::vector<double>& len, double dt) {
    double root_step = m.root_x.max_step(dt) + m.root_y.max_step(dt);
    double lean_step = m.lean.max_step(dt);
    double chain_torso = len[0] * lean_step;
    double worst = 0.0;
    // arms: root -> neck -> shoulder -> elbow -> wrist
    double arm_l = chain_torso + (len[2] + len[3] + len[4]) * lean_step +
                   len[3] * m.l_upper_arm.max_step(dt) +
                   len[4] * (m.l_upper_arm.max_step(dt) + m.l_forearm.max_step(dt));
    double arm_r = chain_torso + (len[5] + len[6] + len[7]) * lean_step +
                   len[6] * m.r_upper_arm.max_step(dt) +
                   len[7] * (m.r_upper_arm.max_step(dt) + m.r_forearm.max_step(dt));
    double head = chain_torso + (len[1]) * lean_step;
    double leg_l = (len[8]) * lean_step + len[9] * m.l_thigh.max_step(dt);
    double leg_r = (len[10]) * lean_step + len[11] * m.r_thigh.max_step(dt);
    for (double v : {arm_l, arm_r, head, leg_l, leg_r}) {
        worst = std::max(worst, v);
    }
    return root_step + worst;
}

}  // namespace detail

inline PoseSequence gen_pose_sequence(uint64_t seed, int64_t length, double motion_amplitude,
                                      double fps = 12.0) {
    if (length < 1) {
        throw std::invalid_argument("gen_pose_sequence: length must be >= 1");
    }
    if (motion_amplitude < 0) {
        throw std::invalid_argument("gen_pose_sequence: amplitude must be >= 0");
    }
    CharacterSpec c = gen_character(seed);
    auto len = detail::bone_lengths(c);
    double dt = 1.0 / fps;

    // Scale unit oscillations so the analytic per-frame displacement bound
    // equals the requested amplitude.
    detail::MotionParams unit = detail::motion_params(seed, 1.0);
    double bound = detail::max_step_bound(unit, len, dt);
    double unit_scale = bound > 0 ? motion_amplitude / bound : 0.0;
    detail::MotionParams m = detail::motion_params(seed, unit_scale);

    PoseSequence seq;
    seq.fps = fps;
    seq.frames.resize(static_cast<size_t>(length));
    for (int64_t k = 0; k < length; k++) {
        seq.frames[static_cast<size_t>(k)] = detail::pose_at(m, len, k * dt);
    }
    return seq;
}

// ------------------------------------------------------------- rendering

namespace detail {

inline void draw_capsule(ImageF& img, Vec2 p0, Vec2 p1, double radius_px, Rgb color) {
    int64_t h = img.shape[0], w = img.shape[1];
    double x0 = p0.x * w, y0 = p0.y * h;
    double x1 = p1.x * w, y1 = p1.y * h;
    double r = radius_px;
    int64_t ylo = static_cast<int64_t>(std::floor(std::min(y0, y1) - r - 1));
    int64_t yhi = static_cast<int64_t>(std::ceil(std::max(y0, y1) + r + 1));
    int64_t xlo = static_cast<int64_t>(std::floor(std::min(x0, x1) - r - 1));
    int64_t xhi = static_cast<int64_t>(std::ceil(std::max(x0, x1) + r + 1));
    ylo = std::max<int64_t>(ylo, 0);
    xlo = std::max<int64_t>(xlo, 0);
    yhi = std::min<int64_t>(yhi, h - 1);
    xhi = std::min<int64_t>(xhi, w - 1);
    double dx = x1 - x0, dy = y1 - y0;
    double len2 = dx * dx + dy * dy;
    for (int64_t y = ylo; y <= yhi; y++) {
        for (int64_t x = xlo; x <= xhi; x++) {
            double px = x + 0.5, py = y + 0.5;
            double tt = 0.0;
            if (len2 > 0) {
                tt = ((px - x0) * dx + (py - y0) * dy) / len2;
                tt = std::clamp(tt, 0.0, 1.0);
            }
            double cx = x0 + tt * dx, cy = y0 + tt * dy;
            double d = std::sqrt((px - cx) * (px - cx) + (py - cy) * (py - cy));
            double cov = std::clamp(r + 0.5 - d, 0.0, 1.0);  // one-pixel soft edge
            if (cov <= 0) {
                continue;
            }
            float* p = img.data() + (y * w + x) * 3;
            p[0] = static_cast<float>(p[0] * (1 - cov) + color.r * cov);
            p[1] = static_cast<float>(p[1] * (1 - cov) + color.g * cov);
            p[2] = static_cast<float>(p[2] * (1 - cov) + color.b * cov);
        }
    }
}

inline void draw_disc(ImageF& img, Vec2 c, double radius_px, Rgb color) {
    draw_capsule(img, c, c, radius_px, color);
}

}  // namespace detail

inline ImageF render_frame(const CharacterSpec& c, const PoseFrame& pose, int64_t resolution) {
    if (resolution < 16) {
        throw std::invalid_argument("render_frame: resolution must be >= 16");
    }
    ImageF img = make_image(resolution, resolution, 0.92f, 0.92f, 0.92f);
    const auto& bones = skeleton_bones();
    // painter order: legs, arms, torso, neck, head; torso index 0 drawn late so
    // its colour reads clearly
    static const int order[] = {8, 9, 10, 11, 2, 3, 4, 5, 6, 7, 0, 1};
    double res = static_cast<double>(resolution);
    for (int oi : order) {
        const Bone& b = bones[static_cast<size_t>(oi)];
        double thick = (oi == 0) ? 0.040 : (oi == 1 ? 0.022 : 0.028);
        detail::draw_capsule(img, pose.joints[static_cast<size_t>(b.a)],
                             pose.joints[static_cast<size_t>(b.b)], thick * res,
                             c.limb_colors[static_cast<size_t>(oi)]);
    }
    // head disc in the neck-bone colour
    detail::draw_disc(img, pose.joints[J_HEAD], c.head_radius * res, c.limb_colors[1]);
    return img;
}

// OpenPose-style limb palette (first bone_count() entries of the standard
// 18-colour wheel), scaled to [0,1].
inline const std::vector<Rgb>& openpose_palette() {
    static const std::vector<Rgb> pal = [] {
        const int raw[][3] = {
            {255, 0, 0},   {255, 85, 0},  {255, 170, 0}, {255, 255, 0}, {170, 255, 0},
            {85, 255, 0},  {0, 255, 0},   {0, 255, 85},  {0, 255, 170}, {0, 255, 255},
            {0, 170, 255}, {0, 85, 255},  {0, 0, 255},   {85, 0, 255},  {170, 0, 255},
            {255, 0, 255}, {255, 0, 170}, {255, 0, 85},
        };
        std::vector<Rgb> v;
        for (const auto& c : raw) {
            v.push_back({c[0] / 255.0f, c[1] / 255.0f, c[2] / 255.0f});
        }
        return v;
    }();
    return pal;
}

inline ImageF render_skeleton(const PoseFrame& pose, int64_t resolution) {
    if (resolution < 16) {
        throw std::invalid_argument("render_skeleton: resolution must be >= 16");
    }
    ImageF img = make_image(resolution, resolution, 0.0f, 0.0f, 0.0f);
    const auto& bones = skeleton_bones();
    const auto& pal = openpose_palette();
    double res = static_cast<double>(resolution);
    double thick = std::max(1.0, 0.018 * res);
    for (int i = 0; i < bone_count(); i++) {
        const Bone& b = bones[static_cast<size_t>(i)];
        detail::draw_capsule(img, pose.joints[static_cast<size_t>(b.a)],
                             pose.joints[static_cast<size_t>(b.b)], thick,
                             pal[static_cast<size_t>(i)]);
    }
    return img;
}

// ------------------------------------------------------------- clip I/O

namespace detail {

inline std::string frame_name(int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05lld.png", static_cast<long long>(i));
    return buf;
}

}  // namespace detail

inline nlohmann::json pose_sequence_to_json(const PoseSequence& seq) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : seq.frames) {
        nlohmann::json joints = nlohmann::json::array();
        for (const auto& j : f.joints) {
            joints.push_back({j.x, j.y});
        }
        frames.push_back(joints);
    }
    return {{"fps", seq.fps}, {"frames", frames}};
}

inline PoseSequence pose_sequence_from_json(const nlohmann::json& j) {
    PoseSequence seq;
    seq.fps = j.at("fps").get<double>();
    for (const auto& fj : j.at("frames")) {
        if (fj.size() != JOINT_COUNT) {
            throw std::invalid_argument("pose_sequence_from_json: wrong joint count");
        }
        PoseFrame f;
        for (size_t i = 0; i < JOINT_COUNT; i++) {
            f.joints[i] = {fj[i][0].get<double>(), fj[i][1].get<double>()};
        }
        seq.frames.push_back(f);
    }
    if (seq.frames.empty()) {
        throw std::invalid_argument("pose_sequence_from_json: empty sequence");
    }
    return seq;
}

inline ClipRecord emit_clip(const CharacterSpec& character, const PoseSequence& poses,
                            const std::string& out_dir, int64_t reference_index,
                            int64_t resolution = 64) {
    namespace fs = std::filesystem;
    int64_t n = static_cast<int64_t>(poses.frames.size());
    if (reference_index < 0 || reference_index >= n) {
        throw std::invalid_argument("emit_clip: reference_index out of range");
    }
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "frames", ec);
    fs::create_directories(fs::path(out_dir) / "skeletons", ec);
    if (ec) {
        throw IoError("cannot create clip directories", out_dir);
    }

    ClipRecord rec;
    rec.character = character;
    rec.poses = poses;
    rec.reference_index = reference_index;
    rec.resolution = resolution;
    for (int64_t i = 0; i < n; i++) {
        ImageF frame = render_frame(character, poses.frames[static_cast<size_t>(i)], resolution);
        ImageF skel = render_skeleton(poses.frames[static_cast<size_t>(i)], resolution);
        std::string fp = (fs::path(out_dir) / "frames" / detail::frame_name(i)).string();
        std::string sp = (fs::path(out_dir) / "skeletons" / detail::frame_name(i)).string();
        write_png(fp, frame);
        write_png(sp, skel);
        rec.frame_paths.push_back(fp);
        rec.skeleton_paths.push_back(sp);
        if (i == reference_index) {
            write_png((fs::path(out_dir) / "ref.png").string(), frame);
        }
    }

    nlohmann::json manifest = {
        {"seed", character.seed},
        {"length", n},
        {"fps", poses.fps},
        {"reference_index", reference_index},
        {"resolution", resolution},
        {"poses", pose_sequence_to_json(poses)},
    };
    std::string mpath = (fs::path(out_dir) / "clip.json").string();
    std::ofstream f(mpath);
    if (!f) {
        throw IoError("cannot write manifest", mpath);
    }
    f << manifest.dump(1);
    f.close();
    return rec;
}

inline ClipRecord load_clip(const std::string& dir) {
    namespace fs = std::filesystem;
    std::string mpath = (fs::path(dir) / "clip.json").string();
    std::ifstream f(mpath);
    if (!f) {
        throw IoError("cannot read manifest", mpath);
    }
    nlohmann::json manifest = nlohmann::json::parse(f);
    ClipRecord rec;
    rec.character = gen_character(manifest.at("seed").get<uint64_t>());
    rec.poses = pose_sequence_from_json(manifest.at("poses"));
    rec.reference_index = manifest.at("reference_index").get<int64_t>();
    rec.resolution = manifest.at("resolution").get<int64_t>();
    int64_t n = manifest.at("length").get<int64_t>();
    if (n != static_cast<int64_t>(rec.poses.frames.size())) {
        throw std::invalid_argument("load_clip: manifest length mismatch");
    }
    for (int64_t i = 0; i < n; i++) {
        rec.frame_paths.push_back((fs::path(dir) / "frames" / detail::frame_name(i)).string());
        rec.skeleton_paths.push_back(
            (fs::path(dir) / "skeletons" / detail::frame_name(i)).string());
    }
    return rec;
}

}  // namespace posediff

#endif  // POSEDIFF_DATAGEN_HPP
