#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dipir/adjoint.hpp"
#include "dipir/guidance.hpp"

namespace dipir {

enum class OptimMode { Insertion, Material, ToneAdjust };

const char *mode_name(OptimMode m);
OptimMode parse_mode(const std::string &s);

struct OptimConfig {
    int iterations = 600;
    double lambda_consistency = 0.03;
    double lambda_reg = 0.01;
    double lr_sg = 0.01;
    double lr_tone = 0.005;
    double lr_material = 0.01;
    int fusion_start = 200;
    int fusion_end = 600;
    std::uint64_t seed = 0;
    OptimMode mode = OptimMode::Insertion;
    bool optimize_emission = false;  // material mode only

    int num_lobes = 64;
    int env_height = 128;
    int env_width = 256;
    double init_sharpness = 0.7;
    double frozen_fusion = 1.0;  // blend used when the lighting is frozen
    std::string prompt = "a photo of an object in a scene in the style of sks rendering";

    RenderSettings render;
    GuidanceConfig guidance;

    void validate() const;
};

struct IterationDiagnostics {
    int iteration = 0;
    double total = 0.0;
    double lds = 0.0;
    double consistency = 0.0;
    double reg = 0.0;
    int t_used = 0;
    bool skipped = false;
    double fusion = 0.0;
    double map_gap = 0.0;  // RMS difference between the two blended maps
};

struct OptimState {
    ParamVector params;
    std::vector<double> m;
    std::vector<double> v;
    int iteration = 0;   // 1-based index of the current step; schedules are evaluated here
    int adam_steps = 0;  // accepted updates, for bias correction
    double fusion = 0.0;
    long skipped = 0;
    long rejected = 0;
    std::vector<IterationDiagnostics> diagnostics;
};

/// Linear ramp from 0 at fusion_start to 1 at fusion_end, clamped.
double fusion_progress(int iteration, const OptimConfig &config);

/// Initial parameters for a scene: Fibonacci gray lobes matched to the mean
/// luminance of the (linear) background, identity tone curves.
PipelineParams initial_params(const Scene &scene, const Image &background, const OptimConfig &config);

struct LossGrad {
    ParamVector grad;
    IterationDiagnostics diag;
};

/// Everything the loop needs besides the evolving state.
struct OptimProblem {
    const Scene *scene = nullptr;
    Image background;      // linear, render resolution
    PipelineParams base;   // values for segments that are not optimized
    Image mask;            // object visibility at render resolution (for crops)
    NoiseSchedule schedule;
};

OptimProblem make_problem(const Scene &scene, const Image &background, const PipelineParams &base,
                          const OptimConfig &config);

OptimState make_state(const PipelineParams &params, const OptimConfig &config);

/// One evaluation of the total loss gradient at the state's current parameters.
LossGrad total_loss_grad(const OptimState &state, const OptimProblem &problem, const OptimConfig &config,
                         GuidanceProvider &provider);

/// Bias-corrected Adam update with per-segment learning rates. Returns false and
/// counts a rejection, leaving the state untouched, if the gradient or the updated
/// parameters are not finite (or a lobe color overflows).
bool adam_step(OptimState &state, const ParamVector &grad, const OptimConfig &config);

struct OptimResult {
    PipelineParams params;
    EnvironmentMap fused_map;
    Image composite;  // linear, full frame, fusion endpoint
    RenderOutputs outputs;
    OptimState state;
};

/// Runs config.iterations steps from `init` (segments are selected by config.mode).
OptimResult run_optimization(const Scene &scene, const Image &background, const PipelineParams &init,
                             const OptimConfig &config, GuidanceProvider &provider);
OptimResult run_optimization(const Scene &scene, const Image &background, const OptimConfig &config,
                             GuidanceProvider &provider);

/// Material and emission only; lighting and tone taken from `lighting`.
OptimResult run_material_mode(const Scene &scene, const Image &background, const PipelineParams &lighting,
                              const OptimConfig &config, GuidanceProvider &provider);
/// Tone curves only; lighting frozen.
OptimResult run_tone_adjust_mode(const Scene &scene, const Image &background, const PipelineParams &lighting,
                                 const OptimConfig &config, GuidanceProvider &provider);

/// Full-frame forward render of a parameter set at a fixed blend.
PipelineForward render_final(const Scene &scene, const Image &background, const PipelineParams &params,
                             const OptimConfig &config, double fusion);

void write_diagnostics_csv(const std::filesystem::path &path, const std::vector<IterationDiagnostics> &diag);

/// Flat float32 little-endian values plus a JSON sidecar (path + ".json") with the segment table.
void save_checkpoint(const std::filesystem::path &path, const ParamVector &params, int iteration);
ParamVector load_checkpoint(const std::filesystem::path &path);

}  // namespace dipir
