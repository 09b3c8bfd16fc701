#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dipir/image.hpp"
#include "dipir/lightfield.hpp"
#include "dipir/optimizer.hpp"
#include "dipir/scene.hpp"

namespace dipir {

double rmse(const Image &a, const Image &b);
/// min over alpha of rmse(alpha * a, b), alpha* = <a,b> / <a,a> (0 when a is all zero).
double si_rmse(const Image &a, const Image &b);
/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03, range 1), averaged over channels.
double ssim(const Image &a, const Image &b);

struct MetricsEntry {
    std::string name;
    double rmse = 0.0;
    double ssim = 0.0;
    double si_rmse = 0.0;
};

struct MetricsReport {
    double rmse = 0.0;
    double ssim = 0.0;
    double si_rmse = 0.0;
    std::vector<MetricsEntry> per_image;

    /// Appends an entry and recomputes the means.
    void add(MetricsEntry e);
    std::string to_csv() const;
    std::string to_text() const;
};

MetricsEntry measure(const std::string &name, const Image &estimate, const Image &reference);

/// Portable float map: "PF" (RGB) or "Pf" (gray, expanded to RGB) with rows stored bottom to top.
Image read_pfm(const std::filesystem::path &path);
/// Writes "PF" with scale -1 (little-endian).
void write_pfm(const std::filesystem::path &path, const Image &img);
/// 8-bit RGB, gamma 2.2 encoded from linear values.
void write_png(const std::filesystem::path &path, const Image &linear);
/// 8-bit PNG decoded to linear RGB.
Image read_png(const std::filesystem::path &path);
/// Loads a background by extension (.pfm is read as-is, .png is decoded to linear).
Image read_image(const std::filesystem::path &path);

/// Displayable plate of a scene lit by `env` without the object: Lambertian plane and
/// visible sky, Reinhard-compressed per channel. One ray per pixel center.
Image render_background(const Scene &scene, const EnvironmentMap &env, int rows, int cols,
                        double plane_albedo = 0.5);

/// Composite of the object lit by `env` with identity tone curves.
Image render_reference(const Scene &scene, const Image &background, const EnvironmentMap &env,
                       const RenderSettings &settings);

struct ToySceneConfig {
    int rows = 64;
    int cols = 96;
    int num_lobes = 4;
    int env_height = 64;
    int env_width = 128;
};

struct ToyScene {
    Scene scene;
    SgLightingParams gt;
    EnvironmentMap gt_map;
    Image background;
};

/// Sphere resting on a ground plane, lit by randomly drawn lobes above the horizon.
ToyScene make_toy_scene(std::uint64_t seed, const ToySceneConfig &config = {});

struct BenchmarkConfig {
    OptimConfig optim;
    int eval_spp = 256;  // spp of the reference and of the scored renders
    double plane_albedo = 0.5;
};

struct BenchmarkResult {
    MetricsEntry initial;
    MetricsEntry final;
    Image reference;
    Image initial_composite;
    OptimResult optim;
};

/// Renders background and reference from `gt`, optimizes with the photometric oracle,
/// and scores initial and final composites against the reference.
BenchmarkResult synth_benchmark(const EnvironmentMap &gt, const Scene &scene, const BenchmarkConfig &config,
                                const Image *background = nullptr);
BenchmarkResult synth_benchmark(const std::filesystem::path &hdr_env_path, const Scene &scene,
                                const BenchmarkConfig &config);

}  // namespace dipir
