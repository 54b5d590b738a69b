#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string farpose_bin() {
    const char* env = std::getenv("FARPOSE_BIN");
    REQUIRE_MESSAGE(env != nullptr, "FARPOSE_BIN not set");
    return env;
}

int run(const std::string& args) {
    std::string cmd = farpose_bin() + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("simulate is deterministic and validates input") {
    fs::path dir = fresh_dir("farpose_cli_sim");
    std::ofstream(dir / "cfg.json") << "{\"frames\": 12, \"seed\": 4}";

    CHECK(run("simulate --config " + (dir / "cfg.json").string() + " --out " +
              (dir / "a").string()) == 0);
    CHECK(run("simulate --config " + (dir / "cfg.json").string() + " --out " +
              (dir / "b").string()) == 0);
    CHECK(slurp(dir / "a" / "scene.json") == slurp(dir / "b" / "scene.json"));

    CHECK(run("simulate --config " + (dir / "missing.json").string() + " --out " +
              (dir / "c").string()) == 2);
    std::ofstream(dir / "bad.json") << "{\"frames\": 1}";
    CHECK(run("simulate --config " + (dir / "bad.json").string() + " --out " +
              (dir / "d").string()) == 2);
}

TEST_CASE("annotate emits annotation and metrics") {
    fs::path dir = fresh_dir("farpose_cli_ann");
    std::ofstream(dir / "cfg.json")
        << "{\"frames\": 10, \"seed\": 6, \"keypoint_sigma_px\": 0}";
    REQUIRE(run("simulate --config " + (dir / "cfg.json").string() + " --out " +
                (dir / "scene").string()) == 0);
    CHECK(run("annotate --scene " + (dir / "scene").string() + " --out " +
              (dir / "ann").string()) == 0);
    CHECK(fs::exists(dir / "ann" / "annotation.json"));
    std::string metrics = slurp(dir / "ann" / "annotation_metrics.json");
    CHECK(metrics.find("pa_mpjpe_mm") != std::string::npos);
}

TEST_CASE("fuse applies the single-view conversion") {
    fs::path dir = fresh_dir("farpose_cli_fuse");
    // O = identity, camera R = 90 degrees about z: fused = R^T O.
    std::ofstream(dir / "in.json")
        << "[{\"O\": [1,0,0,0,1,0,0,0,1], \"c\": 1.0,"
           " \"R\": [0,1,0,-1,0,0,0,0,1]}]";
    CHECK(run("fuse --input " + (dir / "in.json").string() + " --out " +
              (dir / "out.json").string()) == 0);
    std::string out = slurp(dir / "out.json");
    CHECK(out.find("fused") != std::string::npos);
    // Row-major R^T of the 90-degree rotation starts with 0, -1, 0.
    CHECK(out.find("-1.0") != std::string::npos);
}

TEST_CASE("plot renders CSV columns and rejects empty input") {
    fs::path dir = fresh_dir("farpose_cli_plot");
    std::ofstream(dir / "r.csv") << "iter,loss\n0,2.5\n1,1.5\n2,1.0\n";
    CHECK(run("plot --report " + (dir / "r.csv").string() + " --out " +
              (dir / "r.svg").string()) == 0);
    std::string svg = slurp(dir / "r.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);

    std::ofstream(dir / "empty.csv") << "iter,loss\n";
    CHECK(run("plot --report " + (dir / "empty.csv").string() + " --out " +
              (dir / "e.svg").string()) == 2);
}
