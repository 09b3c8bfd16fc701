#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dipir/image.hpp"

namespace dipir {

/// Variance-preserving schedule: alpha_t^2 + sigma_t^2 = 1 with a scaled-linear
/// alpha-bar (betas linear in sqrt space).
class NoiseSchedule {
public:
    explicit NoiseSchedule(int steps = 1000, double beta_start = 0.00085, double beta_end = 0.012);

    int steps() const { return static_cast<int>(alpha_.size()); }
    double alpha(int t) const { return alpha_.at(static_cast<std::size_t>(t)); }
    double sigma(int t) const { return sigma_.at(static_cast<std::size_t>(t)); }

private:
    std::vector<double> alpha_;
    std::vector<double> sigma_;
};

struct GuidanceConfig {
    std::function<double(int)> weight = [](int) { return 1.0; };  // w(t)
    double cfg_scale = 7.5;
    double strength_start = 0.6;  // t_max fraction at the first iteration
    double strength_end = 0.3;    // t_max fraction at the last iteration
    double t_min = 0.02;
    double crop_min = 1.2;  // crop side as a multiple of the object's bounding box
    double crop_max = 2.5;
    int crop_resolution = 512;

    void validate() const;
};

/// Denoiser callable: predicted noise for a noisy input at integer timestep t.
using Denoiser = std::function<Image(const Image &z_t, int t)>;

/// w(t) * alpha_t * ((1 + s) eps_cond - s eps_uncond - noise) at z_t = alpha_t z + sigma_t noise.
Image sds_grad_image(const Image &z, const Denoiser &eps_cond, const Denoiser &eps_uncond, int t, const Image &noise,
                     const NoiseSchedule &schedule, const GuidanceConfig &config);

/// w(t) * alpha_t * (eps_adapted(z_t) - eps_base(z_t)).
Image lds_grad_image(const Image &z, const Denoiser &eps_adapted, const Denoiser &eps_base, int t, const Image &noise,
                     const NoiseSchedule &schedule, const GuidanceConfig &config);

/// Maximum timestep fraction, linear from strength_start to strength_end.
double strength_schedule(int iteration, int total_iterations, const GuidanceConfig &config);

/// Timestep drawn uniformly in [t_min, t_max] * steps for this iteration.
int sample_timestep(int iteration, int total_iterations, std::uint64_t seed, const NoiseSchedule &schedule,
                    const GuidanceConfig &config);

/// Bounding box of mask > 0, or nullopt if empty.
std::optional<PixelRect> mask_bbox(const Image &mask);

/// Square crop around the object (shrunk to the image where it does not fit).
PixelRect sample_crop(const Image &mask, int iteration, std::uint64_t seed, const GuidanceConfig &config);
/// Same with an explicit multiple of the bounding-box side.
PixelRect crop_with_multiple(const PixelRect &bbox, int rows, int cols, double multiple);

/// Standard-normal noise image from the guidance stream.
Image gaussian_noise(int rows, int cols, int channels, std::uint64_t seed, std::uint32_t iteration);

struct GuidanceRequest {
    Image crop;  // linear RGB in [0, 1] at crop resolution
    int timestep = 0;
    int total_steps = 1000;
    std::uint64_t seed = 0;
    PixelRect rect;  // crop rectangle in the source image
    std::string prompt;
};

struct GuidanceResult {
    Image grad;  // d(loss)/d(crop pixels)
    std::optional<double> loss;
    PixelRect rect;
};

class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;
    virtual GuidanceResult guidance(const GuidanceRequest &request) = 0;
    virtual std::string name() const = 0;
};

/// Mean L1 against the matching crop of a fixed reference image.
class PhotometricOracle : public GuidanceProvider {
public:
    explicit PhotometricOracle(Image reference);
    GuidanceResult guidance(const GuidanceRequest &request) override;
    std::string name() const override { return "oracle"; }
    const Image &reference() const { return reference_; }

private:
    Image reference_;
};

/// Gradient of mean |a - b| with respect to a (sign / count).
double l1_loss(const Image &a, const Image &b, Image *grad);

/// Score distillation with affine stand-in denoisers: the adapted model denoises
/// toward the reference crop and the base model predicts the injected noise.
class StubDenoiserProvider : public GuidanceProvider {
public:
    StubDenoiserProvider(Image reference, NoiseSchedule schedule = NoiseSchedule(), GuidanceConfig config = {});
    GuidanceResult guidance(const GuidanceRequest &request) override;
    std::string name() const override { return "stub"; }

private:
    Image reference_;
    NoiseSchedule schedule_;
    GuidanceConfig config_;
};

/// Always returns a zero gradient.
class ZeroProvider : public GuidanceProvider {
public:
    GuidanceResult guidance(const GuidanceRequest &request) override;
    std::string name() const override { return "zero"; }
};

// Wire format: "DPG1", u32 height, u32 width, u32 channels (little-endian), then float32 pixels.
std::string encode_dpg1(const Image &img);
/// Throws InvalidArgument on malformed payloads.
Image decode_dpg1(const std::string &payload);

std::string format_crop_header(const PixelRect &rect);
std::optional<PixelRect> parse_crop_header(const std::string &value);

/// HTTP client for a guidance service. The constructor performs the health
/// check and throws GuidanceUnavailable if it fails.
class RemoteProvider : public GuidanceProvider {
public:
    RemoteProvider(const std::string &endpoint, std::string prompt, double timeout_seconds = 30.0);
    ~RemoteProvider() override;
    GuidanceResult guidance(const GuidanceRequest &request) override;
    std::string name() const override { return "remote"; }
    bool health();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string prompt_;
};

/// In-process HTTP server speaking the guidance protocol, backed by a provider.
class GuidanceServer {
public:
    explicit GuidanceServer(std::shared_ptr<GuidanceProvider> provider);
    ~GuidanceServer();
    /// Binds to 127.0.0.1 on a free port and serves on a background thread.
    int start();
    void stop();
    std::string url() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace dipir
