#include "farpose/hand.hpp"

#include <algorithm>
#include <cmath>

namespace farpose::hand {

namespace {

struct DigitSpec {
    Vec3 mcp_offset;   // wrist -> MCP at rest, meters
    Vec3 dir;          // finger direction at rest, unit
    double bones[3];   // MCP->PIP, PIP->DIP, DIP->TIP
};

// Right-hand template, palm in the x-y plane, fingers along +y, thumb side +x.
// Middle finger: wrist->tip = 0.09 + 0.045 + 0.027 + 0.018 = 0.18 m.
const std::array<DigitSpec, 5> kDigits = {{
    {{0.035, 0.030, 0.0}, Vec3(1, 1, 0).normalized(), {0.045, 0.032, 0.025}},  // thumb
    {{0.025, 0.085, 0.0}, Vec3(0, 1, 0), {0.040, 0.024, 0.016}},               // index
    {{0.000, 0.090, 0.0}, Vec3(0, 1, 0), {0.045, 0.027, 0.018}},               // middle
    {{-0.020, 0.085, 0.0}, Vec3(0, 1, 0), {0.042, 0.025, 0.017}},              // ring
    {{-0.040, 0.075, 0.0}, Vec3(0, 1, 0), {0.032, 0.019, 0.013}},              // pinky
}};

double clamp_beta(double b) { return std::clamp(b, -5.0, 5.0); }

// Axis-angle with angle folded into [0, pi].
Vec3 canonical_axis_angle(const Vec3& aa) {
    double angle = aa.norm();
    if (angle <= kPi) return aa;
    double wrapped = std::fmod(angle, 2 * kPi);
    if (wrapped > kPi) wrapped -= 2 * kPi;  // in (-pi, pi]
    return aa * (wrapped / angle);
}

}  // namespace

const std::array<DigitTemplate, 5>& digit_templates() {
    static const std::array<DigitTemplate, 5> t = [] {
        std::array<DigitTemplate, 5> a;
        for (int d = 0; d < 5; ++d)
            a[d] = {kDigits[d].mcp_offset, kDigits[d].dir,
                    {kDigits[d].bones[0], kDigits[d].bones[1], kDigits[d].bones[2]}};
        return a;
    }();
    return t;
}

const std::array<int, kNumJoints>& joint_parents() {
    static const std::array<int, kNumJoints> parents = {
        -1,                // wrist
        0, 1, 2, 3,        // thumb
        0, 5, 6, 7,        // index
        0, 9, 10, 11,      // middle
        0, 13, 14, 15,     // ring
        0, 17, 18, 19,     // pinky
    };
    return parents;
}

Joints template_joints(const HandShape& shape) {
    HandPose rest;
    return forward_kinematics(shape, rest);
}

Joints forward_kinematics(const HandShape& shape, const HandPose& pose) {
    const double mirror = shape.handedness == Handedness::Left ? -1.0 : 1.0;
    const double global = 1.0 + 0.05 * clamp_beta(shape.beta[0]);

    Joints joints;
    joints[0] = Vec3::Zero();
    for (int d = 0; d < 5; ++d) {
        const DigitSpec& spec = kDigits[d];
        const double len_scale = global * (1.0 + 0.05 * clamp_beta(shape.beta[d]));
        Vec3 offset = spec.mcp_offset * len_scale;
        Vec3 dir = spec.dir;
        offset.x() *= mirror;
        dir.x() *= mirror;

        Vec3 p = offset;
        joints[1 + 4 * d] = p;
        Mat3 R = Mat3::Identity();
        for (int b = 0; b < 3; ++b) {
            const int joint15 = 3 * d + b;
            Vec3 aa(pose.theta[3 * joint15], pose.theta[3 * joint15 + 1],
                    pose.theta[3 * joint15 + 2]);
            R = R * geom::axis_angle_to_matrix(canonical_axis_angle(aa));
            p += R * (spec.bones[b] * len_scale * dir);
            joints[2 + 4 * d + b] = p;
        }
    }
    return joints;
}

Joints place(const Joints& joints, const HandPlacement& placement) {
    Joints out;
    for (int i = 0; i < kNumJoints; ++i)
        out[i] = placement.orientation * joints[i] + placement.wrist;
    return out;
}

double hand_length(const Joints& joints) {
    return (joints[kMiddleTip] - joints[0]).norm();
}

Joints scale_to_physical(const Joints& joints, double measured_hand_length) {
    if (measured_hand_length <= 0)
        throw DegenerateInput("scale_to_physical: measured length must be positive");
    double cur = hand_length(joints);
    if (cur < 1e-12) throw DegenerateInput("scale_to_physical: zero-length hand");
    double s = measured_hand_length / cur;
    Joints out;
    for (int i = 0; i < kNumJoints; ++i) out[i] = joints[i] * s;
    return out;
}

}  // namespace farpose::hand
