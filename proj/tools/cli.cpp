#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <tuple>

#include "dipir/errors.hpp"
#include "dipir/evalkit.hpp"
#include "dipir/gradcheck.hpp"
#include "dipir/guidance.hpp"
#include "dipir/optimizer.hpp"
#include "dipir/parallel.hpp"
#include "dipir/pathtracer.hpp"
#include "dipir/tonemap.hpp"

#ifndef DIPIR_VERSION
#define DIPIR_VERSION "0.0.0"
#endif

namespace dipir::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kManifestFormat = 1;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read '" + path.string() + "'");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return hex.str();
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out << text;
}

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw LoadError("invalid JSON in '" + path.string() + "': " + e.what());
    }
}

std::pair<int, int> parse_size(const std::string &s, const char *flag) {
    int a = 0, b = 0;
    char x = 0, extra = 0;
    if (std::sscanf(s.c_str(), "%d%c%d%c", &a, &x, &b, &extra) != 3 || (x != 'x' && x != 'X') || a < 1 || b < 1)
        throw UsageError(std::string(flag) + " expects ROWSxCOLS, got '" + s + "'");
    return {a, b};
}

void apply_threads(int requested) {
    const char *env = std::getenv("DIPIR_THREADS");
    if (env && *env) {
        set_thread_count(std::atoi(env));
        return;
    }
    set_thread_count(requested);
}

json vec_json(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }

json render_to_json(const RenderSettings &r) {
    return {{"spp", r.spp}, {"mis_rays", r.mis_rays}, {"max_depth", r.max_depth},
            {"rows", r.rows}, {"cols", r.cols},       {"seed", r.seed}};
}

RenderSettings render_from_json(const json &j) {
    RenderSettings r;
    r.spp = j.at("spp").get<int>();
    r.mis_rays = j.at("mis_rays").get<int>();
    r.max_depth = j.at("max_depth").get<int>();
    r.rows = j.at("rows").get<int>();
    r.cols = j.at("cols").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

json optim_to_json(const OptimConfig &c) {
    const GuidanceConfig &g = c.guidance;
    return {{"iterations", c.iterations},
            {"lambda_consistency", c.lambda_consistency},
            {"lambda_reg", c.lambda_reg},
            {"lr_sg", c.lr_sg},
            {"lr_tone", c.lr_tone},
            {"lr_material", c.lr_material},
            {"fusion_start", c.fusion_start},
            {"fusion_end", c.fusion_end},
            {"seed", c.seed},
            {"mode", mode_name(c.mode)},
            {"optimize_emission", c.optimize_emission},
            {"num_lobes", c.num_lobes},
            {"env_height", c.env_height},
            {"env_width", c.env_width},
            {"init_sharpness", c.init_sharpness},
            {"frozen_fusion", c.frozen_fusion},
            {"prompt", c.prompt},
            {"render", render_to_json(c.render)},
            {"guidance",
             {{"weight", "uniform"},
              {"cfg_scale", g.cfg_scale},
              {"strength_start", g.strength_start},
              {"strength_end", g.strength_end},
              {"t_min", g.t_min},
              {"crop_min", g.crop_min},
              {"crop_max", g.crop_max},
              {"crop_resolution", g.crop_resolution}}}};
}

OptimConfig optim_from_json(const json &j) {
    OptimConfig c;
    c.iterations = j.at("iterations").get<int>();
    c.lambda_consistency = j.at("lambda_consistency").get<double>();
    c.lambda_reg = j.at("lambda_reg").get<double>();
    c.lr_sg = j.at("lr_sg").get<double>();
    c.lr_tone = j.at("lr_tone").get<double>();
    c.lr_material = j.at("lr_material").get<double>();
    c.fusion_start = j.at("fusion_start").get<int>();
    c.fusion_end = j.at("fusion_end").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.optimize_emission = j.at("optimize_emission").get<bool>();
    c.num_lobes = j.at("num_lobes").get<int>();
    c.env_height = j.at("env_height").get<int>();
    c.env_width = j.at("env_width").get<int>();
    c.init_sharpness = j.at("init_sharpness").get<double>();
    c.frozen_fusion = j.at("frozen_fusion").get<double>();
    c.prompt = j.at("prompt").get<std::string>();
    c.render = render_from_json(j.at("render"));
    const json &g = j.at("guidance");
    if (g.at("weight").get<std::string>() != "uniform") throw LoadError("manifest: unsupported guidance weight");
    c.guidance.cfg_scale = g.at("cfg_scale").get<double>();
    c.guidance.strength_start = g.at("strength_start").get<double>();
    c.guidance.strength_end = g.at("strength_end").get<double>();
    c.guidance.t_min = g.at("t_min").get<double>();
    c.guidance.crop_min = g.at("crop_min").get<double>();
    c.guidance.crop_max = g.at("crop_max").get<double>();
    c.guidance.crop_resolution = g.at("crop_resolution").get<int>();
    return c;
}

json spline_json(const RqSpline &s) {
    const RqSplineEval ev(s);
    json samples = json::array();
    for (int i = 0; i <= 16; ++i) {
        const double x = i / 16.0;
        samples.push_back({x, ev(x)});
    }
    const auto p = s.to_array();
    return {{"params", std::vector<double>(p.begin(), p.end())},
            {"knots_x", ev.knots_x()},
            {"knots_y", ev.knots_y()},
            {"knot_derivatives", ev.knot_derivatives()},
            {"samples", samples}};
}

json tone_json(const ToneParams &t) {
    return {{"fg", spline_json(t.fg)},
            {"shadow", json::array({spline_json(t.shadow[0]), spline_json(t.shadow[1]), spline_json(t.shadow[2])})}};
}

/// Background or reference plate at the render resolution (bilinear resize when needed).
Image load_plate(const fs::path &path, int rows, int cols) {
    Image img = read_image(path);
    if (img.channels() != 3) throw LoadError("'" + path.string() + "' must be RGB");
    if (img.rows() != rows || img.cols() != cols) img = resize_bilinear(img, rows, cols);
    return img;
}

/// Scene config, mesh and background files referenced by a scene, with content hashes.
json scene_inputs(const fs::path &scene_path) {
    json inputs;
    inputs["scene"] = {{"path", fs::absolute(scene_path).string()}, {"sha256", sha256_file(scene_path)}};
    const json doc = read_json(scene_path);
    const fs::path base = scene_path.parent_path();
    if (doc.contains("mesh") && doc["mesh"].is_string()) {
        const fs::path p = base / doc["mesh"].get<std::string>();
        inputs["mesh"] = {{"path", fs::absolute(p).string()}, {"sha256", sha256_file(p)}};
    }
    if (doc.contains("background") && doc["background"].contains("path")) {
        const fs::path p = base / doc["background"]["path"].get<std::string>();
        inputs["background"] = {{"path", fs::absolute(p).string()}, {"sha256", sha256_file(p)}};
    }
    return inputs;
}

void add_input(json &inputs, const std::string &key, const std::string &path) {
    if (path.empty()) return;
    inputs[key] = {{"path", fs::absolute(path).string()}, {"sha256", sha256_file(path)}};
}

void check_inputs(const json &recorded) {
    for (const auto &[key, entry] : recorded.items()) {
        const std::string path = entry.at("path").get<std::string>();
        if (!fs::exists(path)) throw LoadError("manifest input '" + key + "' is missing: " + path);
        if (sha256_file(path) != entry.at("sha256").get<std::string>())
            throw LoadError("manifest input '" + key + "' changed since the recorded run: " + path);
    }
}

json output_hashes(const fs::path &dir, const std::vector<std::string> &names) {
    json out;
    for (const auto &n : names) out[n] = sha256_file(dir / n);
    return out;
}

void write_manifest(const fs::path &dir, const std::string &command, std::uint64_t seed, const json &flags,
                    const json &config, const json &inputs, const json &outputs) {
    json m;
    m["format"] = kManifestFormat;
    m["command"] = command;
    m["seed"] = seed;
    m["flags"] = flags;
    m["config"] = config;
    m["versions"] = {{"dipir", DIPIR_VERSION}, {"wire_protocol", "DPG1"}, {"manifest", kManifestFormat}};
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["threads"] = thread_count();
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Scene load_scene_at(const std::string &path, const std::string &resolution) {
    if (path.empty()) throw UsageError("--scene is required");
    Scene scene = load_scene(path);
    if (!resolution.empty()) {
        const auto [r, c] = parse_size(resolution, "--resolution");
        scene.camera.rows = r;
        scene.camera.cols = c;
    }
    return scene;
}

struct CommonFlags {
    std::uint64_t seed = 0;
    int threads = 0;
    int spp = 128;
    std::string resolution;
    std::string out_dir = ".";
};

void add_common(CLI::App *cmd, CommonFlags &f) {
    cmd->add_option("--seed", f.seed, "Base seed");
    cmd->add_option("--threads", f.threads, "Worker threads (0: hardware count; DIPIR_THREADS overrides)");
    cmd->add_option("--spp", f.spp, "Samples per pixel");
    cmd->add_option("--resolution", f.resolution, "Render size ROWSxCOLS (default: scene camera)");
    cmd->add_option("--out-dir", f.out_dir, "Output directory");
}

json common_json(const CommonFlags &f) {
    return {{"seed", f.seed}, {"spp", f.spp}, {"resolution", f.resolution}, {"out_dir", f.out_dir}};
}

// optimize

struct OptimizeFlags {
    CommonFlags common;
    std::string scene;
    int iters = 600;
    std::string guidance = "remote";
    std::string reference;
    std::string endpoint = "http://127.0.0.1:8750";
    std::string prompt = OptimConfig{}.prompt;
    std::string mode = "insertion";
    int lobes = 64;
    std::string env = "128x256";
    int fusion_start = -1;
    int fusion_end = -1;
    std::string init;
    std::string manifest;
};

json optimize_flags_json(const OptimizeFlags &f) {
    json j = common_json(f.common);
    j["scene"] = fs::absolute(f.scene).string();
    j["iters"] = f.iters;
    j["guidance"] = f.guidance;
    j["reference"] = f.reference.empty() ? "" : fs::absolute(f.reference).string();
    j["endpoint"] = f.endpoint;
    j["prompt"] = f.prompt;
    j["mode"] = f.mode;
    j["lobes"] = f.lobes;
    j["env"] = f.env;
    j["fusion_start"] = f.fusion_start;
    j["fusion_end"] = f.fusion_end;
    j["init"] = f.init.empty() ? "" : fs::absolute(f.init).string();
    return j;
}

void optimize_flags_from_json(const json &j, OptimizeFlags &f) {
    f.common.seed = j.at("seed").get<std::uint64_t>();
    f.common.spp = j.at("spp").get<int>();
    f.common.resolution = j.at("resolution").get<std::string>();
    f.scene = j.at("scene").get<std::string>();
    f.iters = j.at("iters").get<int>();
    f.guidance = j.at("guidance").get<std::string>();
    f.reference = j.at("reference").get<std::string>();
    f.endpoint = j.at("endpoint").get<std::string>();
    f.prompt = j.at("prompt").get<std::string>();
    f.mode = j.at("mode").get<std::string>();
    f.lobes = j.at("lobes").get<int>();
    f.env = j.at("env").get<std::string>();
    f.fusion_start = j.at("fusion_start").get<int>();
    f.fusion_end = j.at("fusion_end").get<int>();
    f.init = j.at("init").get<std::string>();
}

OptimConfig optimize_config(const OptimizeFlags &f, const Scene &scene) {
    OptimConfig c;
    if (f.iters < 0) throw UsageError("--iters must be non-negative");
    c.iterations = f.iters;
    // default window 200..600 scaled to the iteration count
    c.fusion_start = f.fusion_start >= 0 ? f.fusion_start : f.iters / 3;
    c.fusion_end = f.fusion_end >= 0 ? f.fusion_end : f.iters;
    c.seed = f.common.seed;
    try {
        c.mode = parse_mode(f.mode);
    } catch (const InvalidArgument &e) {
        throw UsageError(e.what());
    }
    c.num_lobes = f.lobes;
    const auto [eh, ew] = parse_size(f.env, "--env");
    c.env_height = eh;
    c.env_width = ew;
    c.prompt = f.prompt;
    c.render.spp = f.common.spp;
    c.render.seed = f.common.seed;
    c.render.rows = scene.camera.rows;
    c.render.cols = scene.camera.cols;
    try {
        c.validate();
    } catch (const InvalidArgument &e) {
        throw UsageError(e.what());
    }
    return c;
}

std::unique_ptr<GuidanceProvider> make_provider(const OptimizeFlags &f, const OptimConfig &c) {
    if (f.guidance == "remote") return std::make_unique<RemoteProvider>(f.endpoint, f.prompt);
    if (f.guidance != "oracle" && f.guidance != "stub")
        throw UsageError("--guidance must be oracle, remote or stub");
    if (f.reference.empty()) throw UsageError("--guidance " + f.guidance + " needs --reference");
    Image ref = load_plate(f.reference, c.render.rows, c.render.cols);
    if (f.guidance == "oracle") return std::make_unique<PhotometricOracle>(std::move(ref));
    return std::make_unique<StubDenoiserProvider>(std::move(ref), NoiseSchedule(), c.guidance);
}

int cmd_optimize(OptimizeFlags f, std::ostream &out) {
    const std::string out_dir = f.common.out_dir;
    std::optional<OptimConfig> recorded;
    if (!f.manifest.empty()) {
        const json m = read_json(f.manifest);
        if (m.value("command", "") != "optimize") throw UsageError("manifest was not written by 'optimize'");
        if (m.value("format", 0) != kManifestFormat) throw LoadError("unsupported manifest format");
        optimize_flags_from_json(m.at("flags"), f);
        check_inputs(m.at("inputs"));
        recorded = optim_from_json(m.at("config"));
    }
    apply_threads(f.common.threads);
    const Scene scene = load_scene_at(f.scene, f.common.resolution);
    const OptimConfig config = recorded ? *recorded : optimize_config(f, scene);
    if (recorded && (config.render.rows != scene.camera.rows || config.render.cols != scene.camera.cols))
        throw LoadError("manifest resolution does not match the scene camera");
    if (scene.background_path.empty()) throw UsageError("scene has no background image");
    const Image background = load_plate(scene.background_path, config.render.rows, config.render.cols);

    json inputs = scene_inputs(f.scene);
    add_input(inputs, "reference", f.reference);
    add_input(inputs, "init", f.init);
    if (!f.init.empty()) add_input(inputs, "init_table", f.init + ".json");

    auto provider = make_provider(f, config);
    PipelineParams init = initial_params(scene, background, config);
    if (!f.init.empty()) init = init.unpacked(load_checkpoint(f.init));

    const OptimResult result = run_optimization(scene, background, init, config, *provider);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_png(dir / "composite.png", result.composite);
    write_pfm(dir / "env_fused.pfm", result.fused_map.image());
    write_text(dir / "tone_curves.json", tone_json(result.params.tone).dump(2) + "\n");
    write_diagnostics_csv(dir / "diagnostics.csv", result.state.diagnostics);
    save_checkpoint(dir / "params.bin", result.state.params, config.iterations);
    const json outputs =
        output_hashes(dir, {"composite.png", "env_fused.pfm", "tone_curves.json", "diagnostics.csv", "params.bin"});
    json flags = optimize_flags_json(f);
    flags["out_dir"] = out_dir;
    write_manifest(dir, "optimize", config.seed, flags, optim_to_json(config), inputs, outputs);
    out << "optimize: " << config.iterations << " iterations (" << mode_name(config.mode) << ", "
        << provider->name() << "), skipped " << result.state.skipped << ", outputs in " << out_dir << "\n";
    return kOk;
}

// render

struct RenderFlags {
    CommonFlags common;
    std::string scene;
    std::string env;
};

int cmd_render(const RenderFlags &f, std::ostream &out) {
    if (f.env.empty()) throw UsageError("--env is required");
    apply_threads(f.common.threads);
    const Scene scene = load_scene_at(f.scene, f.common.resolution);
    const EnvironmentMap env(read_pfm(f.env));
    RenderSettings rs;
    rs.spp = f.common.spp;
    rs.seed = f.common.seed;
    rs.rows = scene.camera.rows;
    rs.cols = scene.camera.cols;
    rs.validate();

    const Image background = scene.background_path.empty()
                                 ? render_background(scene, env, rs.rows, rs.cols)
                                 : load_plate(scene.background_path, rs.rows, rs.cols);
    const ForegroundImage fg = render_foreground(scene, env, rs);
    const ShadowImage sh = render_shadow_ratio(scene, env, rs);
    const ToneParams tone;
    const Image fg_toned = apply_fg_tone(fg.radiance, tone.fg);
    const Image beta_toned = apply_shadow_tone(sh.beta, tone.shadow);
    const Image comp = composite(background, fg_toned, beta_toned, fg.mask);

    fs::create_directories(f.common.out_dir);
    const fs::path dir(f.common.out_dir);
    write_png(dir / "foreground.png", fg_toned);
    write_pfm(dir / "foreground.pfm", fg.radiance);
    write_png(dir / "beta.png", sh.beta);
    write_pfm(dir / "beta.pfm", sh.beta);
    write_png(dir / "composite.png", comp);
    write_pfm(dir / "composite.pfm", comp);

    json flags = common_json(f.common);
    flags["scene"] = fs::absolute(f.scene).string();
    flags["env"] = fs::absolute(f.env).string();
    json inputs = scene_inputs(f.scene);
    add_input(inputs, "env", f.env);
    const json outputs = output_hashes(dir, {"foreground.png", "foreground.pfm", "beta.png", "beta.pfm",
                                             "composite.png", "composite.pfm"});
    write_manifest(dir, "render", f.common.seed, flags, {{"render", render_to_json(rs)}}, inputs, outputs);
    out << "render: " << rs.rows << "x" << rs.cols << " at " << rs.spp << " spp, floored shadow pixels "
        << sh.floored_pixels << ", outputs in " << f.common.out_dir << "\n";
    return kOk;
}

// benchmark

struct BenchmarkFlags {
    CommonFlags common;
    std::string dir;
    std::string scene;
    int iters = 600;
    int eval_spp = 256;
    int lobes = 64;
    std::string env = "128x256";
};

int cmd_benchmark(BenchmarkFlags f, std::ostream &out) {
    if (f.dir.empty()) throw UsageError("--dir is required");
    if (!fs::is_directory(f.dir)) throw UsageError("'" + f.dir + "' is not a directory");
    std::vector<fs::path> maps;
    for (const auto &e : fs::directory_iterator(f.dir))
        if (e.is_regular_file() && e.path().extension() == ".pfm") maps.push_back(e.path());
    std::sort(maps.begin(), maps.end());
    if (maps.empty()) throw UsageError("no .pfm maps in '" + f.dir + "'");
    apply_threads(f.common.threads);

    Scene scene = f.scene.empty() ? make_toy_scene(f.common.seed).scene : load_scene_at(f.scene, "");
    if (!f.common.resolution.empty()) {
        const auto [r, c] = parse_size(f.common.resolution, "--resolution");
        scene.camera.rows = r;
        scene.camera.cols = c;
    }
    OptimizeFlags of;
    of.common = f.common;
    of.iters = f.iters;
    of.lobes = f.lobes;
    of.env = f.env;
    BenchmarkConfig bc;
    bc.optim = optimize_config(of, scene);
    bc.eval_spp = f.eval_spp;

    std::ostringstream csv;
    csv << std::setprecision(9) << "name,initial_rmse,initial_ssim,initial_si_rmse,rmse,ssim,si_rmse\n";
    MetricsReport initial, final;
    json inputs;
    if (!f.scene.empty()) inputs = scene_inputs(f.scene);
    for (const auto &p : maps) {
        const BenchmarkResult r = synth_benchmark(p, scene, bc);
        const std::string name = p.stem().string();
        csv << name << "," << r.initial.rmse << "," << r.initial.ssim << "," << r.initial.si_rmse << ","
            << r.final.rmse << "," << r.final.ssim << "," << r.final.si_rmse << "\n";
        initial.add({name, r.initial.rmse, r.initial.ssim, r.initial.si_rmse});
        final.add({name, r.final.rmse, r.final.ssim, r.final.si_rmse});
        add_input(inputs, name, p.string());
        out << name << ": rmse " << r.initial.rmse << " -> " << r.final.rmse << "\n";
    }
    csv << "mean," << initial.rmse << "," << initial.ssim << "," << initial.si_rmse << "," << final.rmse << ","
        << final.ssim << "," << final.si_rmse << "\n";

    fs::create_directories(f.common.out_dir);
    const fs::path dir(f.common.out_dir);
    write_text(dir / "benchmark.csv", csv.str());
    json flags = common_json(f.common);
    flags["dir"] = fs::absolute(f.dir).string();
    flags["scene"] = f.scene.empty() ? "" : fs::absolute(f.scene).string();
    flags["iters"] = f.iters;
    flags["eval_spp"] = f.eval_spp;
    json config = optim_to_json(bc.optim);
    config["eval_spp"] = bc.eval_spp;
    config["plane_albedo"] = bc.plane_albedo;
    write_manifest(dir, "benchmark", f.common.seed, flags, config, inputs, output_hashes(dir, {"benchmark.csv"}));
    out << "benchmark: " << maps.size() << " maps, mean rmse " << initial.rmse << " -> " << final.rmse << "\n";
    return kOk;
}

// gradcheck

struct GradcheckFlags {
    std::uint64_t seed = 0;
    int threads = 0;
    double tolerance = 0.0;
};

int cmd_gradcheck(const GradcheckFlags &f, std::ostream &out) {
    apply_threads(f.threads);
    const GradCheckSuite suite = run_gradcheck(f.seed);
    out << suite.text();
    bool ok = suite.passed();
    if (f.tolerance > 0.0) {
        ok = true;
        for (const auto &e : suite.entries) {
            const bool pass = e.report.max_rel_error <= f.tolerance;
            ok = ok && pass;
            out << (pass ? "PASS " : "FAIL ") << e.name << " at tolerance " << f.tolerance << "\n";
        }
        out << (ok ? "gradcheck: all passed at the override tolerance\n" : "gradcheck: FAILED at the override tolerance\n");
    }
    return ok ? kOk : kFailure;
}

// toy

struct ToyFlags {
    CommonFlags common;
    int lobes = 4;
    std::string env = "64x128";
};

void write_obj(const fs::path &path, const Mesh &mesh) {
    std::ostringstream s;
    s << std::setprecision(17);
    for (const auto &v : mesh.vertices()) s << "v " << v.x << " " << v.y << " " << v.z << "\n";
    const bool normals = mesh.normals().size() == mesh.vertices().size();
    if (normals)
        for (const auto &n : mesh.normals()) s << "vn " << n.x << " " << n.y << " " << n.z << "\n";
    for (const auto &t : mesh.triangles()) {
        s << "f";
        for (int k : t) {
            s << " " << k + 1;
            if (normals) s << "//" << k + 1;
        }
        s << "\n";
    }
    write_text(path, s.str());
}

int cmd_toy(const ToyFlags &f, std::ostream &out) {
    apply_threads(f.common.threads);
    ToySceneConfig tc;
    if (!f.common.resolution.empty()) std::tie(tc.rows, tc.cols) = parse_size(f.common.resolution, "--resolution");
    std::tie(tc.env_height, tc.env_width) = parse_size(f.env, "--env");
    tc.num_lobes = f.lobes;
    const ToyScene toy = make_toy_scene(f.common.seed, tc);

    fs::create_directories(f.common.out_dir);
    const fs::path dir(f.common.out_dir);
    write_obj(dir / "object.obj", *toy.scene.object);
    write_pfm(dir / "background.pfm", toy.background);
    write_png(dir / "background.png", toy.background);
    write_pfm(dir / "env_gt.pfm", toy.gt_map.image());

    const Camera &cam = toy.scene.camera;
    const Scene &sc = toy.scene;
    json doc = {{"mesh", "object.obj"},
                {"material",
                 {{"base_color", vec_json(sc.material.base_color)},
                  {"metallic", sc.material.metallic},
                  {"roughness", sc.material.roughness},
                  {"emission", vec_json(sc.material.emission)}}},
                {"plane",
                 {{"point", vec_json(sc.plane.point)},
                  {"normal", vec_json(sc.plane.normal)},
                  {"half_extent", json::array({sc.plane.half_extent_u, sc.plane.half_extent_v})}}},
                {"camera",
                 {{"position", vec_json(cam.position)},
                  {"look_at", vec_json(cam.position + cam.orientation * Vec3{0, 0, -1})},
                  {"up", vec_json(cam.orientation * Vec3{0, 1, 0})},
                  {"fov_deg", cam.vertical_fov * 180.0 / kPi},
                  {"resolution", json::array({cam.rows, cam.cols})}}},
                {"background", {{"path", "background.pfm"}}}};
    write_text(dir / "scene.json", doc.dump(2) + "\n");

    // reference is rendered from the reloaded files
    const Scene loaded = load_scene(dir / "scene.json");
    RenderSettings rs;
    rs.spp = f.common.spp;
    rs.seed = f.common.seed;
    rs.rows = tc.rows;
    rs.cols = tc.cols;
    const Image ref = render_reference(loaded, read_pfm(dir / "background.pfm"), toy.gt_map, rs);
    write_pfm(dir / "reference.pfm", ref);
    write_png(dir / "reference.png", ref);

    json flags = common_json(f.common);
    flags["lobes"] = f.lobes;
    flags["env"] = f.env;
    const json outputs = output_hashes(dir, {"object.obj", "background.pfm", "background.png", "env_gt.pfm",
                                             "scene.json", "reference.pfm", "reference.png"});
    write_manifest(dir, "toy", f.common.seed, flags, {{"reference_render", render_to_json(rs)}}, json::object(),
                   outputs);
    out << "toy: scene " << f.common.seed << " written to " << f.common.out_dir << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"dipir: differentiable object insertion"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DIPIR_VERSION);

    OptimizeFlags opt;
    auto *c_opt = app.add_subcommand("optimize", "Recover lighting and tone curves (or material) for a scene");
    add_common(c_opt, opt.common);
    c_opt->add_option("--scene", opt.scene, "Scene JSON");
    c_opt->add_option("--iters", opt.iters, "Iterations");
    c_opt->add_option("--guidance", opt.guidance, "oracle | remote | stub");
    c_opt->add_option("--reference", opt.reference, "Reference image for oracle/stub guidance");
    c_opt->add_option("--endpoint", opt.endpoint, "Guidance service URL");
    c_opt->add_option("--prompt", opt.prompt, "Text prompt sent to the guidance service");
    c_opt->add_option("--mode", opt.mode, "insertion | material | tone");
    c_opt->add_option("--lobes", opt.lobes, "Spherical Gaussian lobes per map");
    c_opt->add_option("--env", opt.env, "Environment map size ROWSxCOLS");
    c_opt->add_option("--fusion-start", opt.fusion_start, "First fusion iteration (default iters/3)");
    c_opt->add_option("--fusion-end", opt.fusion_end, "Last fusion iteration (default iters)");
    c_opt->add_option("--init", opt.init, "Checkpoint with initial lighting/tone (params.bin)");
    c_opt->add_option("--manifest", opt.manifest, "Rerun a recorded manifest");

    RenderFlags ren;
    auto *c_ren = app.add_subcommand("render", "Forward render of a scene under an environment map");
    add_common(c_ren, ren.common);
    c_ren->add_option("--scene", ren.scene, "Scene JSON");
    c_ren->add_option("--env", ren.env, "Environment map (PFM, equirectangular)");

    BenchmarkFlags ben;
    auto *c_ben = app.add_subcommand("benchmark", "Synthetic recovery benchmark over a directory of PFM maps");
    add_common(c_ben, ben.common);
    c_ben->add_option("--dir", ben.dir, "Directory of PFM environment maps");
    c_ben->add_option("--scene", ben.scene, "Scene JSON (default: toy sphere)");
    c_ben->add_option("--iters", ben.iters, "Iterations per map");
    c_ben->add_option("--eval-spp", ben.eval_spp, "Samples per pixel for reference and scoring");
    c_ben->add_option("--lobes", ben.lobes, "Spherical Gaussian lobes per map");
    c_ben->add_option("--env", ben.env, "Environment map size ROWSxCOLS");

    GradcheckFlags gc;
    auto *c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    c_gc->add_option("--seed", gc.seed, "Seed");
    c_gc->add_option("--threads", gc.threads, "Worker threads");
    c_gc->add_option("--tolerance", gc.tolerance, "Override every tolerance");

    ToyFlags toy;
    auto *c_toy = app.add_subcommand("toy", "Write a synthetic toy scene with its reference");
    add_common(c_toy, toy.common);
    c_toy->add_option("--lobes", toy.lobes, "Ground-truth lobes");
    c_toy->add_option("--env", toy.env, "Environment map size ROWSxCOLS");

    std::vector<const char *> argv;
    for (const auto &a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    const auto restore = [] { set_thread_count(0); };
    try {
        int code = kOk;
        if (c_opt->parsed()) code = cmd_optimize(opt, out);
        if (c_ren->parsed()) code = cmd_render(ren, out);
        if (c_ben->parsed()) code = cmd_benchmark(ben, out);
        if (c_gc->parsed()) code = cmd_gradcheck(gc, out);
        if (c_toy->parsed()) code = cmd_toy(toy, out);
        restore();
        return code;
    } catch (const UsageError &e) {
        err << "usage error: " << e.what() << "\n";
        restore();
        return kUsage;
    } catch (const GuidanceUnavailable &e) {
        err << "guidance unavailable: " << e.what() << "\n";
        restore();
        return kRemoteUnavailable;
    } catch (const NumericalFailure &e) {
        err << "numerical failure: " << e.what() << "\n";
        restore();
        return kNumericalFailure;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        restore();
        return kFailure;
    }
}

}  // namespace dipir::cli
