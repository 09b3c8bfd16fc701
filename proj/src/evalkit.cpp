#include "dipir/evalkit.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "dipir/errors.hpp"
#include "dipir/guidance.hpp"
#include "dipir/rng.hpp"
#include "dipir/tonemap.hpp"

namespace dipir {

double rmse(const Image &a, const Image &b) {
    require_same_shape(a, b, "rmse");
    if (a.empty()) throw InvalidArgument("rmse: empty image");
    double s = 0.0;
    const auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) s += (da[i] - db[i]) * (da[i] - db[i]);
    return std::sqrt(s / static_cast<double>(da.size()));
}

double si_rmse(const Image &a, const Image &b) {
    require_same_shape(a, b, "si_rmse");
    if (a.empty()) throw InvalidArgument("si_rmse: empty image");
    double ab = 0.0, aa = 0.0;
    const auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        ab += da[i] * db[i];
        aa += da[i] * da[i];
    }
    const double alpha = aa > 0.0 ? ab / aa : 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) s += (alpha * da[i] - db[i]) * (alpha * da[i] - db[i]);
    return std::sqrt(s / static_cast<double>(da.size()));
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
    std::array<double, kWin> w{};
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - kWin / 2;
        w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        sum += w[i];
    }
    for (double &v : w) v /= sum;
    return w;
}

// Valid-mode separable filter of one channel.
std::vector<double> filter_valid(const std::vector<double> &img, int rows, int cols) {
    static const auto w = gaussian_window();
    const int oc = cols - kWin + 1, orow = rows - kWin + 1;
    std::vector<double> h(static_cast<std::size_t>(rows) * oc);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < oc; ++c) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) s += w[k] * img[static_cast<std::size_t>(r) * cols + c + k];
            h[static_cast<std::size_t>(r) * oc + c] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(orow) * oc);
    for (int r = 0; r < orow; ++r)
        for (int c = 0; c < oc; ++c) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) s += w[k] * h[static_cast<std::size_t>(r + k) * oc + c];
            out[static_cast<std::size_t>(r) * oc + c] = s;
        }
    return out;
}

}  // namespace

double ssim(const Image &a, const Image &b) {
    require_same_shape(a, b, "ssim");
    if (a.rows() < kWin || a.cols() < kWin) throw InvalidArgument("ssim: image smaller than the 11x11 window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int rows = a.rows(), cols = a.cols(), n = rows * cols;
    double total = 0.0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const int i = r * cols + c;
                x[i] = a.at(r, c, ch);
                y[i] = b.at(r, c, ch);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
        const auto mx = filter_valid(x, rows, cols), my = filter_valid(y, rows, cols);
        const auto sxx = filter_valid(xx, rows, cols), syy = filter_valid(yy, rows, cols),
                   sxy = filter_valid(xy, rows, cols);
        double sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / a.channels();
}

void MetricsReport::add(MetricsEntry e) {
    per_image.push_back(std::move(e));
    rmse = ssim = si_rmse = 0.0;
    for (const auto &p : per_image) {
        rmse += p.rmse;
        ssim += p.ssim;
        si_rmse += p.si_rmse;
    }
    const double n = static_cast<double>(per_image.size());
    rmse /= n;
    ssim /= n;
    si_rmse /= n;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "name,rmse,ssim,si_rmse\n";
    for (const auto &p : per_image) os << p.name << ',' << p.rmse << ',' << p.ssim << ',' << p.si_rmse << '\n';
    os << "mean," << rmse << ',' << ssim << ',' << si_rmse << '\n';
    return os.str();
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(5);
    std::size_t w = 4;
    for (const auto &p : per_image) w = std::max(w, p.name.size());
    auto line = [&](const std::string &name, double r, double s, double si) {
        os << name << std::string(w - name.size() + 2, ' ') << "rmse " << r << "  ssim " << s << "  si-rmse " << si
           << '\n';
    };
    for (const auto &p : per_image) line(p.name, p.rmse, p.ssim, p.si_rmse);
    line("mean", rmse, ssim, si_rmse);
    return os.str();
}

MetricsEntry measure(const std::string &name, const Image &estimate, const Image &reference) {
    return {name, rmse(estimate, reference), ssim(estimate, reference), si_rmse(estimate, reference)};
}

Image read_pfm(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    std::string magic;
    int width = 0, height = 0;
    double scale = 0.0;
    if (!(in >> magic >> width >> height >> scale) || (magic != "PF" && magic != "Pf") || width <= 0 ||
        height <= 0 || scale == 0.0)
        throw LoadError("'" + path.string() + "' is not a valid PFM file");
    in.get();
    const int src_ch = magic == "PF" ? 3 : 1;
    const bool little = scale < 0.0;
    std::vector<unsigned char> buf(static_cast<std::size_t>(width) * height * src_ch * 4);
    if (!in.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw LoadError("'" + path.string() + "': truncated PFM data");
    Image img(height, width, 3);
    std::size_t k = 0;
    for (int r = height - 1; r >= 0; --r)
        for (int c = 0; c < width; ++c)
            for (int ch = 0; ch < src_ch; ++ch, k += 4) {
                const unsigned char *b = &buf[k];
                const std::uint32_t u = little ? (b[0] | b[1] << 8 | b[2] << 16 | std::uint32_t(b[3]) << 24)
                                               : (b[3] | b[2] << 8 | b[1] << 16 | std::uint32_t(b[0]) << 24);
                const double v = std::bit_cast<float>(u);
                if (!std::isfinite(v)) throw LoadError("'" + path.string() + "': non-finite PFM value");
                if (src_ch == 3) {
                    img.at(r, c, ch) = v;
                } else {
                    for (int o = 0; o < 3; ++o) img.at(r, c, o) = v;
                }
            }
    return img;
}

void write_pfm(const std::filesystem::path &path, const Image &img) {
    if (img.channels() != 3) throw InvalidArgument("write_pfm: RGB image required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out << "PF\n" << img.cols() << ' ' << img.rows() << "\n-1.0\n";
    std::vector<unsigned char> buf;
    buf.reserve(img.size() * 4);
    for (int r = img.rows() - 1; r >= 0; --r)
        for (int c = 0; c < img.cols(); ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(r, c, ch)));
                for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<unsigned char>((u >> s) & 0xff));
            }
    out.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_png(const std::filesystem::path &path, const Image &linear) {
    if (linear.channels() != 3) throw InvalidArgument("write_png: RGB image required");
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(linear.cols());
    im.height = static_cast<png_uint_32>(linear.rows());
    im.format = PNG_FORMAT_RGB;
    std::vector<png_byte> px(linear.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = srgb_encode(linear.data()[i]);
    if (!png_image_write_to_file(&im, path.string().c_str(), 0, px.data(), 0, nullptr))
        throw LoadError("cannot write '" + path.string() + "': " + im.message);
}

Image read_png(const std::filesystem::path &path) {
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.string().c_str()))
        throw LoadError("cannot read '" + path.string() + "': " + im.message);
    im.format = PNG_FORMAT_RGB;
    std::vector<png_byte> px(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&im);
        throw LoadError("cannot decode '" + path.string() + "': " + im.message);
    }
    Image img(static_cast<int>(im.height), static_cast<int>(im.width), 3);
    for (std::size_t i = 0; i < px.size(); ++i) img.data()[i] = srgb_decode(px[i]);
    return img;
}

Image read_image(const std::filesystem::path &path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".png") return read_png(path);
    throw LoadError("unsupported image format '" + path.string() + "'");
}

Image render_background(const Scene &scene, const EnvironmentMap &env, int rows, int cols, double plane_albedo) {
    Camera cam = scene.camera;
    cam.rows = rows;
    cam.cols = cols;
    const Vec3 n = normalize(scene.plane.normal);
    Vec3 irradiance{};
    for (int i = 0; i < env.height(); ++i)
        for (int j = 0; j < env.width(); ++j) {
            const double c = dot(direction_from_pixel(i, j, env.height(), env.width()), n);
            if (c > 0.0) irradiance += env.pixel(i, j) * (c * env.solid_angle(i));
        }
    const Vec3 plane_radiance = irradiance * (plane_albedo * kInvPi);
    Image img(rows, cols, 3);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const Ray ray = cam.generate_ray(r + 0.5, c + 0.5);
            const Vec3 L = std::isfinite(scene.plane.intersect(ray)) ? plane_radiance : env.lookup(ray.direction);
            img.at(r, c, 0) = reinhard(std::max(0.0, L.x));
            img.at(r, c, 1) = reinhard(std::max(0.0, L.y));
            img.at(r, c, 2) = reinhard(std::max(0.0, L.z));
        }
    return img;
}

Image render_reference(const Scene &scene, const Image &background, const EnvironmentMap &env,
                       const RenderSettings &settings) {
    const ForegroundImage fg = render_foreground(scene, env, settings);
    const ShadowImage sh = render_shadow_ratio(scene, env, settings);
    const ToneParams identity;
    return composite(background, apply_fg_tone(fg.radiance, identity.fg), apply_shadow_tone(sh.beta, identity.shadow),
                     fg.mask);
}

ToyScene make_toy_scene(std::uint64_t seed, const ToySceneConfig &config) {
    ToyScene t;
    auto rng = rng_stream(seed, 0, 0, 0, Purpose::Init);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.next(); };
    const double radius = 0.5;
    t.scene.object = make_icosphere({0, 0, radius}, radius, 2);
    t.scene.material = MaterialParams::lambertian({uniform(0.5, 0.8), uniform(0.5, 0.8), uniform(0.5, 0.8)});
    t.scene.plane.point = {0, 0, 0};
    t.scene.plane.normal = {0, 0, 1};
    t.scene.plane.half_extent_u = t.scene.plane.half_extent_v = 20.0;
    t.scene.camera = Camera::look_at({0.0, -3.2, 1.5}, {0.0, 0.0, 0.35}, {0, 0, 1}, 40.0, config.rows, config.cols);
    for (int k = 0; k < config.num_lobes; ++k) {
        const double z = uniform(0.35, 0.95), phi = uniform(0.0, 2.0 * kPi);
        const double rxy = std::sqrt(1.0 - z * z);
        SgLobe lobe;
        lobe.axis_raw = {rxy * std::cos(phi), rxy * std::sin(phi), z};
        lobe.log_sharpness = std::log(uniform(0.25, 0.5));
        const double level = std::log(uniform(1.0, 4.0));
        lobe.log_color = {level + uniform(-0.2, 0.2), level + uniform(-0.2, 0.2), level + uniform(-0.2, 0.2)};
        t.gt.lobes.push_back(lobe);
    }
    t.gt_map = envmap_bake(t.gt, config.env_height, config.env_width);
    t.background = render_background(t.scene, t.gt_map, config.rows, config.cols);
    return t;
}

BenchmarkResult synth_benchmark(const EnvironmentMap &gt, const Scene &scene, const BenchmarkConfig &config,
                                const Image *background) {
    const RenderSettings &rs = config.optim.render;
    const Image bg = background ? *background : render_background(scene, gt, rs.rows, rs.cols, config.plane_albedo);
    RenderSettings eval = rs;
    eval.spp = config.eval_spp;
    eval.region.reset();
    eval.seed = derive_seed(rs.seed, 0xe7a1);

    BenchmarkResult out;
    out.reference = render_reference(scene, bg, gt, eval);
    PhotometricOracle oracle(out.reference);
    const PipelineParams init = initial_params(scene, bg, config.optim);
    out.optim = run_optimization(scene, bg, init, config.optim, oracle);

    OptimConfig scored = config.optim;
    scored.render = eval;
    const double s_end = config.optim.mode == OptimMode::Insertion ? fusion_progress(config.optim.iterations, config.optim)
                                                                   : config.optim.frozen_fusion;
    const double s_init = config.optim.mode == OptimMode::Insertion ? 0.0 : config.optim.frozen_fusion;
    out.initial_composite = render_final(scene, bg, init, scored, s_init).comp;
    out.optim.composite = render_final(scene, bg, out.optim.params, scored, s_end).comp;
    out.initial = measure("initial", out.initial_composite, out.reference);
    out.final = measure("final", out.optim.composite, out.reference);
    return out;
}

BenchmarkResult synth_benchmark(const std::filesystem::path &hdr_env_path, const Scene &scene,
                                const BenchmarkConfig &config) {
    return synth_benchmark(EnvironmentMap(read_pfm(hdr_env_path)), scene, config);
}

}  // namespace dipir
