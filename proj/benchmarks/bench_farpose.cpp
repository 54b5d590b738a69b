#include <benchmark/benchmark.h>

#include <vector>

#include "farpose/geom.hpp"
#include "farpose/reachnet.hpp"
#include "farpose/rng.hpp"
#include "farpose/synth.hpp"

using namespace farpose;
using geom::Mat3;
using geom::Vec3;

namespace {

Mat3 random_rotation(Rng& rng) {
    Vec3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
    while (axis.norm() < 1e-6)
        axis = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
    return geom::axis_angle_to_matrix(axis.normalized() * rng.uniform() * kPi);
}

}  // namespace

static void BM_Rot6dRoundTrip(benchmark::State& state) {
    Rng rng(1);
    Mat3 R = random_rotation(rng);
    for (auto _ : state) {
        Mat3 back = geom::matrix_from_rot6d(geom::rot6d_from_matrix(R));
        benchmark::DoNotOptimize(back);
    }
}
BENCHMARK(BM_Rot6dRoundTrip);

static void BM_Triangulate(benchmark::State& state) {
    Rng rng(2);
    Vec3 p(4, 4, 1.2);
    std::vector<geom::Ray> rays;
    for (int i = 0; i < state.range(0); ++i) {
        Vec3 o(8 * rng.uniform(), 8 * rng.uniform(), 2.5);
        rays.push_back({o, (p - o).normalized()});
    }
    for (auto _ : state) {
        auto tri = geom::triangulate(rays);
        benchmark::DoNotOptimize(tri);
    }
}
BENCHMARK(BM_Triangulate)->Arg(2)->Arg(4)->Arg(8);

static void BM_MvuFuse(benchmark::State& state) {
    Rng rng(3);
    const int n = static_cast<int>(state.range(0));
    std::vector<Mat3> O, RF;
    std::vector<double> c;
    for (int i = 0; i < n; ++i) {
        O.push_back(random_rotation(rng));
        RF.push_back(random_rotation(rng));
        c.push_back(0.1 + rng.uniform());
    }
    for (auto _ : state) {
        Mat3 fused = reachnet::mvu_fuse(O, c, RF);
        benchmark::DoNotOptimize(fused);
    }
}
BENCHMARK(BM_MvuFuse)->Arg(2)->Arg(4)->Arg(8);

static void BM_ForwardStep(benchmark::State& state) {
    synth::SceneConfig cfg;
    cfg.frames = 2;
    synth::SceneRecording scene = synth::generate_scene(cfg);
    synth::render_observations(scene, cfg);
    reachnet::Model model(reachnet::FeatureConfig::desk_scale(), 4);
    std::vector<reachnet::ViewInput> views;
    for (size_t c = 0; c < scene.rig.size(); ++c)
        views.push_back({&scene.frames[0][c], &scene.rig[c]});
    for (auto _ : state) {
        auto out = model.forward_step(views, nullptr);
        benchmark::DoNotOptimize(out.hands[0].r6.val()(0));
    }
}
BENCHMARK(BM_ForwardStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
