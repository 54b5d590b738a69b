#pragma once

#include <string>

#include "farpose/annot.hpp"
#include "farpose/eval.hpp"
#include "farpose/reachnet.hpp"
#include "farpose/synth.hpp"

namespace farpose::pipeline {

synth::SceneConfig scene_config_from_json(const std::string& text);
std::string scene_config_json(const synth::SceneConfig& cfg);

/// Scene generation plus observation rendering.
synth::SceneRecording simulate(const synth::SceneConfig& cfg);

/// Autoregressive rollout over every frame with the full rig; per-frame,
/// per-hand metrics against ground truth.
eval::MetricReport evaluate_model(reachnet::Model& model,
                                  const synth::SceneRecording& scene,
                                  const reachnet::AblationFlags& abl = {});

/// Metrics of annotation-pipeline outputs against scene ground truth.
/// Frames the pipeline skipped are excluded.
eval::MetricReport evaluate_annotation(const synth::SceneRecording& scene,
                                       const annot::SceneAnnotation& ann);

/// Line plot of every numeric CSV column (vs row index) as a standalone SVG.
/// Throws ConfigError when the CSV has no data rows.
std::string plot_csv_svg(const std::string& csv_text, int width = 800, int height = 400);

}  // namespace farpose::pipeline
