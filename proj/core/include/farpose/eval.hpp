#pragma once

#include <array>
#include <string>
#include <vector>

#include "farpose/geom.hpp"
#include "farpose/hand.hpp"

namespace farpose::eval {

using geom::Mat3;
using geom::Vec3;

/// Mean per-joint position error, millimeters (inputs in meters).
double mpjpe_mm(const hand::Joints& pred, const hand::Joints& gt);

/// MPJPE after similarity (Procrustes) alignment of pred onto gt.
double pa_mpjpe_mm(const hand::Joints& pred, const hand::Joints& gt);

/// Mean geodesic error over the 15 articulated joints, degrees.
double joint_angle_error_deg(const std::array<double, 3 * hand::kNumArticulated>& pred,
                             const std::array<double, 3 * hand::kNumArticulated>& gt);

/// Mean per-frame, per-joint geodesic change over a theta sequence, deg/frame.
double angular_velocity_deg(
    const std::vector<std::array<double, 3 * hand::kNumArticulated>>& thetas);

enum class DistanceBin { Near, Medium, Distant };

/// Near: d < 4 m. Medium: 4 m <= d <= 8 m. Distant: d > 8 m.
DistanceBin bin_of(double distance_m);

const char* bin_name(DistanceBin b);

struct FrameMetrics {
    int t = 0;
    int hand = 0;
    double mpjpe_mm = 0;
    double pa_mpjpe_mm = 0;
    double joint_angle_deg = 0;
    double min_view_dist_m = 0;  // wrist to nearest used camera center
    DistanceBin bin = DistanceBin::Near;
};

struct Aggregate {
    int count = 0;
    double mean = 0;
    double stddev = 0;
    double stderr_ = 0;
};

struct MetricReport {
    std::vector<FrameMetrics> frames;
    Aggregate mpjpe, pa_mpjpe, joint_angle;
    std::array<Aggregate, 3> pa_mpjpe_by_bin;  // Near, Medium, Distant
    double angular_velocity_deg_per_frame = 0;
};

/// Fixed-order aggregation of per-frame metrics.
MetricReport make_report(std::vector<FrameMetrics> frames,
                         double angular_velocity_deg_per_frame);

std::string report_csv(const MetricReport& r);
std::string report_json(const MetricReport& r);

}  // namespace farpose::eval
