#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "cli.hpp"
#include "dipir/evalkit.hpp"
#include "dipir/guidance.hpp"

using namespace dipir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run dipir_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "dipir");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "dipir_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Toy scene shared by the tests: 24x36 plate, 4 lobes.
const fs::path &toy_dir() {
    static const fs::path dir = [] {
        const fs::path d = work_dir() / "toy";
        const Run r = dipir_cli({"toy", "--seed", "2", "--spp", "16", "--resolution", "24x36", "--env", "16x32",
                                 "--out-dir", d.string()});
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

std::vector<std::string> small_optimize(const fs::path &out) {
    const fs::path t = toy_dir();
    return {"optimize",  "--scene", (t / "scene.json").string(), "--guidance", "oracle", "--reference",
            (t / "reference.pfm").string(), "--iters", "6", "--spp", "2", "--lobes", "4", "--env", "8x16",
            "--out-dir", out.string()};
}

class NanProvider : public GuidanceProvider {
public:
    GuidanceResult guidance(const GuidanceRequest &req) override {
        GuidanceResult r;
        r.grad = Image(req.crop.rows(), req.crop.cols(), req.crop.channels(), std::numeric_limits<double>::quiet_NaN());
        r.rect = req.rect;
        return r;
    }
    std::string name() const override { return "nan"; }
};

}  // namespace

TEST_CASE("toy writes a loadable scene") {
    for (const char *f : {"scene.json", "object.obj", "background.pfm", "env_gt.pfm", "reference.png", "manifest.json"})
        CHECK(fs::exists(toy_dir() / f));
    const Scene s = load_scene(toy_dir() / "scene.json");
    CHECK(s.object.has_value());
    CHECK(s.camera.rows == 24);
}

TEST_CASE("optimize writes every output and a manifest") {
    const fs::path out = work_dir() / "opt";
    const Run r = dipir_cli(small_optimize(out));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char *f : {"composite.png", "env_fused.pfm", "tone_curves.json", "diagnostics.csv", "params.bin",
                          "manifest.json"})
        CHECK(fs::exists(out / f));
    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m["command"] == "optimize");
    CHECK(m["config"]["iterations"] == 6);
    CHECK(m["config"]["fusion_start"] == 2);
    CHECK(m["config"]["fusion_end"] == 6);
    CHECK(m["config"]["render"]["rows"] == 24);
    CHECK(m["inputs"].contains("scene"));
    CHECK(m["inputs"].contains("reference"));
    CHECK(m["outputs"]["composite.png"].get<std::string>().size() == 64);
    const auto tone = nlohmann::json::parse(slurp(out / "tone_curves.json"));
    CHECK(tone["shadow"].size() == 3);
    CHECK(read_png(out / "composite.png").rows() == 24);
}

TEST_CASE("manifest reruns and thread counts reproduce outputs bitwise") {
    const fs::path a = work_dir() / "rep_a", b = work_dir() / "rep_b", c = work_dir() / "rep_c";
    auto args = small_optimize(a);
    args.insert(args.end(), {"--threads", "1"});
    REQUIRE(dipir_cli(args).code == 0);
    REQUIRE(dipir_cli({"optimize", "--manifest", (a / "manifest.json").string(), "--out-dir", b.string(),
                       "--threads", "4"})
                .code == 0);
    auto args4 = small_optimize(c);
    args4.insert(args4.end(), {"--threads", "4"});
    REQUIRE(dipir_cli(args4).code == 0);
    for (const char *f : {"composite.png", "env_fused.pfm", "tone_curves.json", "diagnostics.csv", "params.bin"}) {
        CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
        CHECK_MESSAGE(slurp(a / f) == slurp(c / f), f);
    }
}

TEST_CASE("manifest rerun rejects modified inputs") {
    const fs::path t = work_dir() / "toy_mod";
    fs::copy(toy_dir(), t, fs::copy_options::recursive);
    const fs::path a = work_dir() / "mod_a";
    auto args = small_optimize(a);
    args[2] = (t / "scene.json").string();
    args[6] = (t / "reference.pfm").string();
    REQUIRE(dipir_cli(args).code == 0);
    std::ofstream(t / "object.obj", std::ios::app) << "# edited\n";
    const Run r = dipir_cli({"optimize", "--manifest", (a / "manifest.json").string(), "--out-dir",
                             (work_dir() / "mod_b").string()});
    CHECK(r.code == cli::kFailure);
    CHECK(r.err.find("changed") != std::string::npos);
}

TEST_CASE("optimize usage errors") {
    CHECK(dipir_cli({"optimize", "--iters", "3"}).code == cli::kUsage);
    auto args = small_optimize(work_dir() / "bad");
    args[4] = "psychic";
    CHECK(dipir_cli(args).code == cli::kUsage);
    args = small_optimize(work_dir() / "bad");
    args.erase(args.begin() + 5, args.begin() + 7);
    CHECK(dipir_cli(args).code == cli::kUsage);  // oracle without --reference
    args = small_optimize(work_dir() / "bad");
    args.insert(args.end(), {"--mode", "sculpt"});
    CHECK(dipir_cli(args).code == cli::kUsage);
    CHECK(dipir_cli({"optimize", "--iters", "many"}).code == cli::kUsage);
    CHECK(dipir_cli({}).code == cli::kUsage);
    CHECK(dipir_cli({"--help"}).code == cli::kOk);
}

TEST_CASE("optimize: unreachable remote guidance exits 3") {
    GuidanceServer server(std::make_shared<ZeroProvider>());
    server.start();
    const std::string url = server.url();
    server.stop();
    const Run r = dipir_cli({"optimize", "--scene", (toy_dir() / "scene.json").string(), "--guidance", "remote",
                             "--endpoint", url, "--iters", "2", "--out-dir", (work_dir() / "remote").string()});
    CHECK(r.code == cli::kRemoteUnavailable);
}

TEST_CASE("optimize: non-finite replies from remote guidance count as unavailable") {
    GuidanceServer server(std::make_shared<NanProvider>());
    server.start();
    const Run r = dipir_cli({"optimize", "--scene", (toy_dir() / "scene.json").string(), "--guidance", "remote",
                             "--endpoint", server.url(), "--iters", "3", "--spp", "1", "--lobes", "2", "--env",
                             "8x16", "--out-dir", (work_dir() / "nan").string()});
    server.stop();
    CHECK_MESSAGE(r.code == cli::kRemoteUnavailable, r.err);
}

TEST_CASE("optimize: diverging parameters exit 4") {
    const fs::path a = work_dir() / "div_a";
    REQUIRE(dipir_cli(small_optimize(a)).code == 0);
    auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
    m["config"]["lr_sg"] = 1e300;
    m["config"]["lr_tone"] = 1e300;
    std::ofstream(a / "edited.json") << m.dump();
    const Run r = dipir_cli({"optimize", "--manifest", (a / "edited.json").string(), "--out-dir",
                             (work_dir() / "div_b").string()});
    CHECK_MESSAGE(r.code == cli::kNumericalFailure, r.err);
}

TEST_CASE("render") {
    const fs::path t = toy_dir();
    SUBCASE("black map gives a black foreground") {
        write_pfm(work_dir() / "black.pfm", Image(8, 16, 3));
        const fs::path out = work_dir() / "render_black";
        REQUIRE(dipir_cli({"render", "--scene", (t / "scene.json").string(), "--env",
                           (work_dir() / "black.pfm").string(), "--spp", "2", "--out-dir", out.string()})
                    .code == 0);
        const Image fg = read_png(out / "foreground.png");
        for (double v : fg.data()) CHECK(v == 0.0);
    }
    SUBCASE("no object gives a unit shadow ratio") {
        auto doc = nlohmann::json::parse(slurp(t / "scene.json"));
        doc.erase("mesh");
        doc["background"]["path"] = (t / "background.pfm").string();
        std::ofstream(work_dir() / "empty_scene.json") << doc.dump();
        const fs::path out = work_dir() / "render_empty";
        REQUIRE(dipir_cli({"render", "--scene", (work_dir() / "empty_scene.json").string(), "--env",
                           (t / "env_gt.pfm").string(), "--spp", "2", "--out-dir", out.string()})
                    .code == 0);
        const Image beta = read_pfm(out / "beta.pfm");
        for (double v : beta.data()) CHECK(v == 1.0);
    }
    SUBCASE("same seed twice gives identical bytes") {
        const fs::path a = work_dir() / "render_a", b = work_dir() / "render_b";
        for (const auto &out : {a, b})
            REQUIRE(dipir_cli({"render", "--scene", (t / "scene.json").string(), "--env", (t / "env_gt.pfm").string(),
                               "--spp", "2", "--seed", "9", "--out-dir", out.string()})
                        .code == 0);
        for (const char *f : {"foreground.png", "beta.pfm", "composite.png"}) CHECK(slurp(a / f) == slurp(b / f));
    }
    CHECK(dipir_cli({"render", "--scene", (t / "scene.json").string()}).code == cli::kUsage);
    CHECK(dipir_cli({"render", "--scene", (t / "scene.json").string(), "--env", (t / "missing.pfm").string()}).code ==
          cli::kFailure);
}

TEST_CASE("benchmark") {
    const fs::path maps = work_dir() / "maps";
    fs::create_directories(maps);
    fs::copy_file(toy_dir() / "env_gt.pfm", maps / "one.pfm", fs::copy_options::overwrite_existing);
    const fs::path out = work_dir() / "bench";
    const Run r = dipir_cli({"benchmark", "--dir", maps.string(), "--resolution", "24x36", "--iters", "3", "--spp", "2",
                             "--eval-spp", "4", "--lobes", "4", "--env", "8x16", "--out-dir", out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const std::string csv = slurp(out / "benchmark.csv");
    CHECK(csv.rfind("name,initial_rmse", 0) == 0);
    CHECK(csv.find("\none,") != std::string::npos);
    CHECK(csv.find("\nmean,") != std::string::npos);
    CHECK(fs::exists(out / "manifest.json"));

    fs::create_directories(work_dir() / "no_maps");
    CHECK(dipir_cli({"benchmark", "--dir", (work_dir() / "no_maps").string()}).code == cli::kUsage);
    CHECK(dipir_cli({"benchmark"}).code == cli::kUsage);
    CHECK(dipir_cli({"benchmark", "--dir", (work_dir() / "absent").string()}).code == cli::kUsage);
}

TEST_CASE("gradcheck") {
    const Run ok = dipir_cli({"gradcheck", "--seed", "3"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("full_chain: PASS") != std::string::npos);
    const Run strict = dipir_cli({"gradcheck", "--seed", "3", "--tolerance", "1e-15"});
    CHECK(strict.code == cli::kFailure);
    CHECK(strict.out.find("FAILED") != std::string::npos);
}
