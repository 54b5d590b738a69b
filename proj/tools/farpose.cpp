#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "farpose/pipeline.hpp"

namespace fs = std::filesystem;
using namespace farpose;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

uint64_t default_seed() {
    if (const char* env = std::getenv("FARPOSE_SEED"))
        return std::strtoull(env, nullptr, 10);
    return 1;
}

std::string scene_path(const std::string& arg) {
    if (fs::is_directory(arg)) return (fs::path(arg) / "scene.json").string();
    return arg;
}

int run_simulate(const std::string& config, const std::string& out, uint64_t seed,
                 bool seed_set) {
    synth::SceneConfig cfg = pipeline::scene_config_from_json(read_file(config));
    if (seed_set) cfg.seed = seed;
    fs::create_directories(out);
    synth::SceneRecording scene = pipeline::simulate(cfg);
    synth::save_scene(scene, (fs::path(out) / "scene.json").string());
    write_file((fs::path(out) / "config.json").string(), pipeline::scene_config_json(cfg));

    nlohmann::ordered_json summary;
    summary["frames"] = scene.gt.size();
    summary["cameras"] = scene.rig.size();
    summary["markers"] = scene.markers.size();
    summary["seed"] = cfg.seed;
    write_file((fs::path(out) / "summary.json").string(), summary.dump(2));
    return 0;
}

int run_annotate(const std::string& scene_arg, const std::string& out,
                 const annot::AnnotationConfig& acfg) {
    synth::SceneRecording scene = synth::load_scene(scene_path(scene_arg));
    fs::create_directories(out);
    annot::SceneAnnotation ann = annot::annotate_scene(scene, acfg);
    int ok = 0;
    for (const auto& fa : ann.frames)
        for (const auto& ha : fa.hands) ok += ha.ok ? 1 : 0;
    if (ok == 0) {
        std::cerr << "annotate: every frame failed\n";
        return 3;
    }
    write_file((fs::path(out) / "annotation.json").string(), annot::to_json(ann));
    eval::MetricReport rep = pipeline::evaluate_annotation(scene, ann);
    write_file((fs::path(out) / "annotation_metrics.json").string(),
               eval::report_json(rep));
    return 0;
}

std::vector<synth::SceneRecording> load_scene_dir(const std::string& dir) {
    std::vector<std::string> paths;
    if (fs::is_directory(dir)) {
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().filename() == "scene.json")
                paths.push_back(e.path().string());
        std::sort(paths.begin(), paths.end());
    } else {
        paths.push_back(dir);
    }
    if (paths.empty()) throw ConfigError("no scene.json found under " + dir);
    std::vector<synth::SceneRecording> scenes;
    scenes.reserve(paths.size());
    for (const auto& p : paths) scenes.push_back(synth::load_scene(p));
    return scenes;
}

int run_train(const std::string& scenes_dir, const std::string& config,
              const std::string& out, const reachnet::AblationFlags& abl,
              uint64_t seed, bool seed_set) {
    reachnet::TrainConfig cfg = config.empty()
                                    ? reachnet::TrainConfig{}
                                    : reachnet::train_config_from_json(read_file(config));
    cfg.ablation.no_multiview |= abl.no_multiview;
    cfg.ablation.no_body |= abl.no_body;
    cfg.ablation.no_autoregressive |= abl.no_autoregressive;
    cfg.ablation.no_ray_embedding |= abl.no_ray_embedding;
    if (seed_set) cfg.seed = seed;

    auto scenes = load_scene_dir(scenes_dir);
    std::vector<const synth::SceneRecording*> ptrs;
    for (const auto& s : scenes) ptrs.push_back(&s);

    fs::create_directories(out);
    write_file((fs::path(out) / "train_config.json").string(),
               reachnet::train_config_json(cfg));
    reachnet::Model model(cfg.features, cfg.seed);
    reachnet::TrainResult res = reachnet::train_two_stage(model, ptrs, cfg);
    model.params().save((fs::path(out) / "checkpoint.fpkt").string());
    write_file((fs::path(out) / "loss.csv").string(), res.csv);

    nlohmann::ordered_json summary;
    summary["initial_loss"] = res.initial_loss;
    summary["final_loss"] = res.final_loss;
    write_file((fs::path(out) / "train_summary.json").string(), summary.dump(2));
    return 0;
}

int run_eval(const std::string& scene_arg, const std::string& checkpoint,
             const std::string& config, const std::string& out) {
    reachnet::TrainConfig cfg = config.empty()
                                    ? reachnet::TrainConfig{}
                                    : reachnet::train_config_from_json(read_file(config));
    synth::SceneRecording scene = synth::load_scene(scene_path(scene_arg));
    reachnet::Model model(cfg.features, cfg.seed);
    model.params().load(checkpoint);
    fs::create_directories(out);
    eval::MetricReport rep = pipeline::evaluate_model(model, scene, cfg.ablation);
    write_file((fs::path(out) / "report.csv").string(), eval::report_csv(rep));
    write_file((fs::path(out) / "report.json").string(), eval::report_json(rep));
    return 0;
}

int run_fuse(const std::string& input, const std::string& out) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(input));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("fuse input parse error: ") + e.what());
    }
    std::vector<geom::Mat3> O, RF;
    std::vector<double> c;
    for (const auto& v : j) {
        auto mat = [](const nlohmann::json& a) {
            if (a.size() != 9) throw ConfigError("fuse: rotation needs 9 entries");
            geom::Mat3 m;
            for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = a[i].get<double>();
            return m;
        };
        O.push_back(mat(v.at("O")));
        RF.push_back(mat(v.at("R")));
        c.push_back(v.at("c").get<double>());
    }
    geom::Mat3 fused = reachnet::mvu_fuse(O, c, RF);
    nlohmann::ordered_json res;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) res["fused"].push_back(fused(r, k));
    if (out.empty())
        std::cout << res.dump(2) << '\n';
    else
        write_file(out, res.dump(2));
    return 0;
}

int run_plot(const std::string& report, const std::string& out) {
    std::string svg = pipeline::plot_csv_svg(read_file(report));
    write_file(out, svg);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"far-view multiview hand pose toolkit"};
    app.require_subcommand(1);

    uint64_t seed = default_seed();
    int threads = 8;
    app.add_option("--threads", threads, "worker thread cap");

    std::string config, out, scene, scenes_dir, checkpoint, report, input;
    bool seed_set = false;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic scene");
    sim->add_option("--config", config, "scene config JSON")->required();
    sim->add_option("--out", out, "output directory")->required();
    sim->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) {
        seed_set = true;
    });

    annot::AnnotationConfig acfg;
    auto* ann = app.add_subcommand("annotate", "run the annotation pipeline");
    ann->add_option("--scene", scene, "scene dir or scene.json")->required();
    ann->add_option("--out", out, "output directory")->required();
    ann->add_option("--slam-sigma-t", acfg.slam_sigma_t, "simulated SLAM noise, m");
    ann->add_option("--slam-sigma-r", acfg.slam_sigma_r, "simulated SLAM noise, rad");
    ann->add_option("--slam-seed", acfg.slam_seed, "simulated SLAM seed");

    reachnet::AblationFlags abl;
    auto* train = app.add_subcommand("train", "two-stage training");
    train->add_option("--scenes", scenes_dir, "directory of scenes")->required();
    train->add_option("--config", config, "training config JSON");
    train->add_option("--out", out, "output directory")->required();
    train->add_flag("--no-multiview", abl.no_multiview, "train with a single view");
    train->add_flag("--no-body", abl.no_body, "zero out body features");
    train->add_flag("--no-autoregressive", abl.no_autoregressive,
                    "reset queries every frame");
    train->add_flag("--no-ray-embedding", abl.no_ray_embedding,
                    "drop query ray embeddings after the first frame");
    train->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* ev = app.add_subcommand("eval", "rollout and metric report");
    ev->add_option("--scene", scene, "scene dir or scene.json")->required();
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--config", config, "training config JSON (model dims)");
    ev->add_option("--out", out, "output directory")->required();

    auto* fu = app.add_subcommand("fuse", "multiview rotation fusion");
    fu->add_option("--input", input, "JSON list of {O, c, R}")->required();
    fu->add_option("--out", out, "output file (default stdout)");

    auto* pl = app.add_subcommand("plot", "CSV line plot as SVG");
    pl->add_option("--report", report, "input CSV")->required();
    pl->add_option("--out", out, "output SVG")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return run_simulate(config, out, seed, seed_set);
        if (ann->parsed()) return run_annotate(scene, out, acfg);
        if (train->parsed()) return run_train(scenes_dir, config, out, abl, seed, seed_set);
        if (ev->parsed()) return run_eval(scene, checkpoint, config, out);
        if (fu->parsed()) return run_fuse(input, out);
        if (pl->parsed()) return run_plot(report, out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ShapeMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NoConvergence& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const DegenerateInput& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const AllZeroConfidence& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
