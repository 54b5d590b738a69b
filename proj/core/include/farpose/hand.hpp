#pragma once

#include <array>

#include "farpose/geom.hpp"

namespace farpose::hand {

using geom::Mat3;
using geom::Vec3;

inline constexpr int kNumJoints = 21;      // wrist + 4 per finger
inline constexpr int kNumArticulated = 15; // 3 rotating joints per finger
inline constexpr int kShapeDim = 10;

enum class Handedness { Left, Right };

struct HandShape {
    std::array<double, kShapeDim> beta{};  // clamped to [-5, 5]
    Handedness handedness = Handedness::Right;
};

/// 15 axis-angle joint rotations, thumb->pinky, proximal->distal,
/// flattened to 45 scalars.
struct HandPose {
    std::array<double, 3 * kNumArticulated> theta{};
};

struct HandPlacement {
    Mat3 orientation = Mat3::Identity();
    Vec3 wrist = Vec3::Zero();  // world, meters
};

using Joints = std::array<Vec3, kNumJoints>;

/// Joint index of the tip of the middle finger.
inline constexpr int kMiddleTip = 12;

/// Parent joint index for each of the 21 joints (wrist = -1).
const std::array<int, kNumJoints>& joint_parents();

/// Rest-pose template of one finger: wrist->MCP offset, finger direction,
/// and the three bone lengths (right hand, before shape scaling).
struct DigitTemplate {
    Vec3 mcp_offset;
    Vec3 dir;
    std::array<double, 3> bones;
};

const std::array<DigitTemplate, 5>& digit_templates();

/// Rest-pose skeleton for the given shape at theta = 0.
Joints template_joints(const HandShape& shape);

/// Wrist-local joint positions for the articulated hand.
Joints forward_kinematics(const HandShape& shape, const HandPose& pose);

/// Rigidly transforms wrist-local joints into the world frame.
Joints place(const Joints& joints, const HandPlacement& placement);

/// Uniform scale so the wrist to middle-fingertip distance equals
/// measured_hand_length (meters).
Joints scale_to_physical(const Joints& joints, double measured_hand_length);

double hand_length(const Joints& joints);

}  // namespace farpose::hand
