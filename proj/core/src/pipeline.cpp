#include "farpose/pipeline.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace farpose::pipeline {

synth::SceneConfig scene_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene config parse error: ") + e.what());
    }
    synth::SceneConfig cfg;
    try {
        if (j.contains("room_x")) cfg.room_x = j["room_x"];
        if (j.contains("room_y")) cfg.room_y = j["room_y"];
        if (j.contains("room_z")) cfg.room_z = j["room_z"];
        if (j.contains("num_cameras")) cfg.num_cameras = j["num_cameras"];
        if (j.contains("frames")) cfg.frames = j["frames"];
        if (j.contains("fps")) cfg.fps = j["fps"];
        if (j.contains("marker_count")) cfg.marker_count = j["marker_count"];
        if (j.contains("marker_height")) cfg.marker_height = j["marker_height"];
        if (j.contains("keypoint_sigma_px")) cfg.keypoint_sigma_px = j["keypoint_sigma_px"];
        if (j.contains("occlusion_prob")) cfg.occlusion_prob = j["occlusion_prob"];
        if (j.contains("occlusion_mean_frames"))
            cfg.occlusion_mean_frames = j["occlusion_mean_frames"];
        if (j.contains("marker_dropout_prob"))
            cfg.marker_dropout_prob = j["marker_dropout_prob"];
        if (j.contains("stub_pose_sigma")) cfg.stub_pose_sigma = j["stub_pose_sigma"];
        if (j.contains("max_hand_speed")) cfg.max_hand_speed = j["max_hand_speed"];
        if (j.contains("division_ratio_gt")) cfg.division_ratio_gt = j["division_ratio_gt"];
        if (j.contains("seed")) cfg.seed = j["seed"];
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string scene_config_json(const synth::SceneConfig& cfg) {
    nlohmann::ordered_json j;
    j["room_x"] = cfg.room_x;
    j["room_y"] = cfg.room_y;
    j["room_z"] = cfg.room_z;
    j["num_cameras"] = cfg.num_cameras;
    j["frames"] = cfg.frames;
    j["fps"] = cfg.fps;
    j["marker_count"] = cfg.marker_count;
    j["marker_height"] = cfg.marker_height;
    j["keypoint_sigma_px"] = cfg.keypoint_sigma_px;
    j["occlusion_prob"] = cfg.occlusion_prob;
    j["occlusion_mean_frames"] = cfg.occlusion_mean_frames;
    j["marker_dropout_prob"] = cfg.marker_dropout_prob;
    j["stub_pose_sigma"] = cfg.stub_pose_sigma;
    j["max_hand_speed"] = cfg.max_hand_speed;
    j["division_ratio_gt"] = cfg.division_ratio_gt;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

synth::SceneRecording simulate(const synth::SceneConfig& cfg) {
    synth::SceneRecording scene = synth::generate_scene(cfg);
    synth::render_observations(scene, cfg);
    return scene;
}

namespace {

hand::Joints gt_world_joints(const synth::HandGt& gt) {
    return hand::place(hand::forward_kinematics(gt.shape, gt.pose), gt.placement);
}

double min_view_distance(const synth::SceneRecording& scene, const geom::Vec3& wrist) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& cam : scene.rig) best = std::min(best, (wrist - cam.center()).norm());
    return best;
}

}  // namespace

eval::MetricReport evaluate_model(reachnet::Model& model,
                                  const synth::SceneRecording& scene,
                                  const reachnet::AblationFlags& abl) {
    const int T = static_cast<int>(scene.gt.size());
    const size_t nviews = abl.no_multiview ? 1 : scene.rig.size();
    std::vector<std::vector<reachnet::ViewInput>> frames(T);
    for (int t = 0; t < T; ++t)
        for (size_t v = 0; v < nviews; ++v)
            frames[t].push_back({&scene.frames[t][v], &scene.rig[v]});

    std::vector<eval::FrameMetrics> metrics;
    std::array<std::vector<std::array<double, 3 * hand::kNumArticulated>>, 2> theta_seq;
    const reachnet::StepOutput* prev = nullptr;
    reachnet::StepOutput step;
    for (int t = 0; t < T; ++t) {
        step = model.forward_step(frames[t], prev, abl);
        // Break the graph between frames: evaluation never backpropagates, and
        // carrying values only keeps memory flat over long sequences.
        for (auto& h : step.hands) h.queries = tensornet::detach(h.queries);
        auto preds = model.predict(step, frames[t]);
        for (int h = 0; h < 2; ++h) {
            const synth::HandGt& gt = scene.gt[t].hands[h];
            hand::HandShape shape;
            shape.beta = preds[h].beta;
            shape.handedness = gt.shape.handedness;
            hand::HandPose pose;
            pose.theta = preds[h].theta;
            hand::HandPlacement place{preds[h].fused_world, preds[h].wrist_world};
            hand::Joints pj = hand::place(hand::forward_kinematics(shape, pose), place);
            hand::Joints gj = gt_world_joints(gt);

            eval::FrameMetrics m;
            m.t = t;
            m.hand = h;
            m.mpjpe_mm = eval::mpjpe_mm(pj, gj);
            m.pa_mpjpe_mm = eval::pa_mpjpe_mm(pj, gj);
            m.joint_angle_deg = eval::joint_angle_error_deg(preds[h].theta,
                                                            gt.pose.theta);
            m.min_view_dist_m = min_view_distance(scene, gt.placement.wrist);
            m.bin = eval::bin_of(m.min_view_dist_m);
            metrics.push_back(m);
            theta_seq[h].push_back(preds[h].theta);
        }
        prev = &step;
    }
    double av = 0;
    if (T >= 2)
        av = 0.5 * (eval::angular_velocity_deg(theta_seq[0]) +
                    eval::angular_velocity_deg(theta_seq[1]));
    return eval::make_report(std::move(metrics), av);
}

eval::MetricReport evaluate_annotation(const synth::SceneRecording& scene,
                                       const annot::SceneAnnotation& ann) {
    std::vector<eval::FrameMetrics> metrics;
    std::array<std::vector<std::array<double, 3 * hand::kNumArticulated>>, 2> theta_seq;
    for (const annot::FrameAnnotation& fa : ann.frames) {
        for (int h = 0; h < 2; ++h) {
            const annot::HandAnnotation& ha = fa.hands[h];
            if (!ha.ok) continue;
            const synth::HandGt& gt = scene.gt[fa.t].hands[h];
            hand::HandShape shape;
            shape.beta = ha.beta;
            shape.handedness = gt.shape.handedness;
            hand::HandPose pose;
            pose.theta = ha.theta;
            hand::HandPlacement place{ha.orientation_world, ha.wrist_world};
            hand::Joints pj = hand::place(hand::forward_kinematics(shape, pose), place);
            hand::Joints gj = gt_world_joints(gt);

            eval::FrameMetrics m;
            m.t = fa.t;
            m.hand = h;
            m.mpjpe_mm = eval::mpjpe_mm(pj, gj);
            m.pa_mpjpe_mm = eval::pa_mpjpe_mm(pj, gj);
            m.joint_angle_deg = eval::joint_angle_error_deg(ha.theta, gt.pose.theta);
            m.min_view_dist_m = min_view_distance(scene, gt.placement.wrist);
            m.bin = eval::bin_of(m.min_view_dist_m);
            metrics.push_back(m);
            theta_seq[h].push_back(ha.theta);
        }
    }
    double av = 0;
    if (theta_seq[0].size() >= 2 && theta_seq[1].size() >= 2)
        av = 0.5 * (eval::angular_velocity_deg(theta_seq[0]) +
                    eval::angular_velocity_deg(theta_seq[1]));
    return eval::make_report(std::move(metrics), av);
}

std::string plot_csv_svg(const std::string& csv_text, int width, int height) {
    std::istringstream in(csv_text);
    std::string line;
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (header) {
            names = cells;
            cols.assign(cells.size(), {});
            header = false;
            continue;
        }
        for (size_t i = 0; i < cells.size() && i < cols.size(); ++i) {
            try {
                size_t pos = 0;
                double v = std::stod(cells[i], &pos);
                if (pos == cells[i].size()) cols[i].push_back(v);
            } catch (const std::exception&) {
            }
        }
    }
    size_t rows = 0;
    for (const auto& c : cols) rows = std::max(rows, c.size());
    if (rows == 0) throw ConfigError("plot: CSV has no numeric data rows");

    static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::ostringstream svg;
    svg.precision(6);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double margin = 40;
    int color = 0;
    for (size_t i = 0; i < cols.size(); ++i) {
        if (cols[i].size() < 1) continue;
        double lo = cols[i][0], hi = cols[i][0];
        for (double v : cols[i]) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo < 1e-12) hi = lo + 1;
        svg << "<polyline fill=\"none\" stroke=\"" << kColors[color % 8]
            << "\" stroke-width=\"1\" data-name=\""
            << (i < names.size() ? names[i] : "") << "\" points=\"";
        for (size_t r = 0; r < cols[i].size(); ++r) {
            double x = margin + (width - 2 * margin) *
                                    (cols[i].size() == 1
                                         ? 0.0
                                         : static_cast<double>(r) / (cols[i].size() - 1));
            double y = height - margin -
                       (height - 2 * margin) * (cols[i][r] - lo) / (hi - lo);
            svg << x << ',' << y << ' ';
        }
        svg << "\"/>\n";
        ++color;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace farpose::pipeline
