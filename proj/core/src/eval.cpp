#include "farpose/eval.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace farpose::eval {

double mpjpe_mm(const hand::Joints& pred, const hand::Joints& gt) {
    double sum = 0;
    for (int i = 0; i < hand::kNumJoints; ++i) sum += (pred[i] - gt[i]).norm();
    return 1000.0 * sum / hand::kNumJoints;
}

double pa_mpjpe_mm(const hand::Joints& pred, const hand::Joints& gt) {
    std::vector<Vec3> src(pred.begin(), pred.end());
    std::vector<Vec3> dst(gt.begin(), gt.end());
    geom::SimilarityTransform T = geom::umeyama(src, dst);
    hand::Joints aligned;
    for (int i = 0; i < hand::kNumJoints; ++i) aligned[i] = T.apply(pred[i]);
    return mpjpe_mm(aligned, gt);
}

namespace {
Mat3 joint_rotation(const std::array<double, 3 * hand::kNumArticulated>& theta, int j) {
    return geom::axis_angle_to_matrix(
        Vec3(theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]));
}
}  // namespace

double joint_angle_error_deg(const std::array<double, 3 * hand::kNumArticulated>& pred,
                             const std::array<double, 3 * hand::kNumArticulated>& gt) {
    double sum = 0;
    for (int j = 0; j < hand::kNumArticulated; ++j)
        sum += geom::geodesic_deg(joint_rotation(pred, j), joint_rotation(gt, j));
    return sum / hand::kNumArticulated;
}

double angular_velocity_deg(
    const std::vector<std::array<double, 3 * hand::kNumArticulated>>& thetas) {
    if (thetas.size() < 2)
        throw ShapeMismatch("angular_velocity: need at least 2 frames");
    double sum = 0;
    for (size_t t = 1; t < thetas.size(); ++t)
        for (int j = 0; j < hand::kNumArticulated; ++j)
            sum += geom::geodesic_deg(joint_rotation(thetas[t - 1], j),
                                      joint_rotation(thetas[t], j));
    return sum / (static_cast<double>(thetas.size() - 1) * hand::kNumArticulated);
}

DistanceBin bin_of(double distance_m) {
    if (distance_m < 4.0) return DistanceBin::Near;
    if (distance_m <= 8.0) return DistanceBin::Medium;
    return DistanceBin::Distant;
}

const char* bin_name(DistanceBin b) {
    switch (b) {
        case DistanceBin::Near: return "near";
        case DistanceBin::Medium: return "medium";
        default: return "distant";
    }
}

namespace {
Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    a.count = static_cast<int>(xs.size());
    if (a.count == 0) return a;
    double sum = 0;
    for (double x : xs) sum += x;
    a.mean = sum / a.count;
    double sq = 0;
    for (double x : xs) sq += (x - a.mean) * (x - a.mean);
    a.stddev = a.count > 1 ? std::sqrt(sq / (a.count - 1)) : 0.0;
    a.stderr_ = a.count > 0 ? a.stddev / std::sqrt(static_cast<double>(a.count)) : 0.0;
    return a;
}
}  // namespace

MetricReport make_report(std::vector<FrameMetrics> frames,
                         double angular_velocity_deg_per_frame) {
    MetricReport r;
    r.frames = std::move(frames);
    r.angular_velocity_deg_per_frame = angular_velocity_deg_per_frame;
    std::vector<double> m, pa, ja;
    std::array<std::vector<double>, 3> pa_bin;
    for (const FrameMetrics& f : r.frames) {
        m.push_back(f.mpjpe_mm);
        pa.push_back(f.pa_mpjpe_mm);
        ja.push_back(f.joint_angle_deg);
        pa_bin[static_cast<int>(f.bin)].push_back(f.pa_mpjpe_mm);
    }
    r.mpjpe = aggregate(m);
    r.pa_mpjpe = aggregate(pa);
    r.joint_angle = aggregate(ja);
    for (int b = 0; b < 3; ++b) r.pa_mpjpe_by_bin[b] = aggregate(pa_bin[b]);
    return r;
}

std::string report_csv(const MetricReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "t,hand,mpjpe_mm,pa_mpjpe_mm,joint_angle_deg,min_view_dist_m,bin\n";
    for (const FrameMetrics& f : r.frames)
        os << f.t << ',' << f.hand << ',' << f.mpjpe_mm << ',' << f.pa_mpjpe_mm
           << ',' << f.joint_angle_deg << ',' << f.min_view_dist_m << ','
           << bin_name(f.bin) << '\n';
    return os.str();
}

namespace {
nlohmann::ordered_json agg_json(const Aggregate& a) {
    return {{"count", a.count},
            {"mean", a.mean},
            {"stddev", a.stddev},
            {"stderr", a.stderr_}};
}
}  // namespace

std::string report_json(const MetricReport& r) {
    nlohmann::ordered_json root;
    root["schema"] = "farpose-report/1";
    root["frames"] = r.frames.size();
    root["mpjpe_mm"] = agg_json(r.mpjpe);
    root["pa_mpjpe_mm"] = agg_json(r.pa_mpjpe);
    root["joint_angle_deg"] = agg_json(r.joint_angle);
    root["angular_velocity_deg_per_frame"] = r.angular_velocity_deg_per_frame;
    for (int b = 0; b < 3; ++b)
        root["pa_mpjpe_mm_by_bin"][bin_name(static_cast<DistanceBin>(b))] =
            agg_json(r.pa_mpjpe_by_bin[b]);
    return root.dump(2);
}

}  // namespace farpose::eval
