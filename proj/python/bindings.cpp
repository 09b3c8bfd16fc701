#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>

#include "cli.hpp"
#include "dipir/errors.hpp"
#include "dipir/evalkit.hpp"
#include "dipir/gradcheck.hpp"
#include "dipir/guidance.hpp"
#include "dipir/optimizer.hpp"
#include "dipir/pathtracer.hpp"
#include "dipir/tonemap.hpp"

namespace py = pybind11;
using namespace dipir;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array &a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("expected an array of shape (rows, cols[, channels])");
    const int rows = static_cast<int>(a.shape(0)), cols = static_cast<int>(a.shape(1));
    const int ch = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    Image img(rows, cols, ch);
    std::memcpy(img.data().data(), a.data(), img.size() * sizeof(double));
    return img;
}

Array to_array(const Image &img) {
    Array a({img.rows(), img.cols(), img.channels()});
    std::memcpy(a.mutable_data(), img.data().data(), img.size() * sizeof(double));
    return a;
}

SgLightingParams to_lobes(const Array &lobes) {
    if (lobes.ndim() != 2 || lobes.shape(1) != SgLobe::kNumParams)
        throw InvalidArgument("lobes must have shape (K, 7): log_color[3], axis[3], log_sharpness");
    return SgLightingParams::unflatten(std::span<const double>(lobes.data(), static_cast<std::size_t>(lobes.size())));
}

Array from_lobes(const SgLightingParams &p) {
    const auto flat = p.flatten();
    Array a({static_cast<py::ssize_t>(p.lobes.size()), static_cast<py::ssize_t>(SgLobe::kNumParams)});
    std::memcpy(a.mutable_data(), flat.data(), flat.size() * sizeof(double));
    return a;
}

RenderSettings settings_for(const Scene &scene, int spp, std::uint64_t seed) {
    RenderSettings rs;
    rs.spp = spp;
    rs.seed = seed;
    rs.rows = scene.camera.rows;
    rs.cols = scene.camera.cols;
    return rs;
}

py::dict render(const std::string &scene_path, const Array &env, int spp, std::uint64_t seed) {
    const Scene scene = load_scene(scene_path);
    const EnvironmentMap map(to_image(env));
    const RenderSettings rs = settings_for(scene, spp, seed);
    ForegroundImage fg;
    ShadowImage sh;
    {
        py::gil_scoped_release release;
        fg = render_foreground(scene, map, rs);
        sh = render_shadow_ratio(scene, map, rs);
    }
    py::dict out;
    out["foreground"] = to_array(fg.radiance);
    out["mask"] = to_array(fg.mask);
    out["beta"] = to_array(sh.beta);
    return out;
}

py::dict optimize(const std::string &scene_path, const Array &reference, int iterations, int spp, int num_lobes,
                  int env_height, int env_width, std::uint64_t seed) {
    const Scene scene = load_scene(scene_path);
    if (scene.background_path.empty()) throw InvalidArgument("scene has no background image");
    const Image background = read_image(scene.background_path);
    OptimConfig c;
    c.iterations = iterations;
    c.fusion_start = iterations / 3;
    c.fusion_end = iterations;
    c.seed = seed;
    c.num_lobes = num_lobes;
    c.env_height = env_height;
    c.env_width = env_width;
    c.render = settings_for(scene, spp, seed);
    PhotometricOracle oracle(to_image(reference));
    OptimResult r;
    {
        py::gil_scoped_release release;
        r = run_optimization(scene, background, c, oracle);
    }
    py::list total;
    for (const auto &d : r.state.diagnostics) total.append(d.total);
    py::dict out;
    out["composite"] = to_array(r.composite);
    out["fused_map"] = to_array(r.fused_map.image());
    out["sg_fg"] = from_lobes(r.params.sg_fg);
    out["sg_shadow"] = from_lobes(r.params.sg_shadow);
    out["loss"] = total;
    out["skipped"] = r.state.skipped;
    return out;
}

py::tuple gradcheck(std::uint64_t seed) {
    GradCheckSuite s;
    {
        py::gil_scoped_release release;
        s = run_gradcheck(seed);
    }
    return py::make_tuple(s.passed(), s.text());
}

py::tuple run_cli(const std::vector<std::string> &args) {
    std::vector<std::string> full{"dipir"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code;
    {
        py::gil_scoped_release release;
        code = cli::run(full, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_dipir, m) {
    m.doc() = "Differentiable object insertion engine";
    m.attr("__version__") = DIPIR_VERSION;

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
    py::register_exception<ObjectNotVisible>(m, "ObjectNotVisible");
    py::register_exception<GuidanceUnavailable>(m, "GuidanceUnavailable");
    py::register_exception<NumericalFailure>(m, "NumericalFailure");

    m.def("rmse", [](const Array &a, const Array &b) { return rmse(to_image(a), to_image(b)); });
    m.def("si_rmse", [](const Array &a, const Array &b) { return si_rmse(to_image(a), to_image(b)); });
    m.def("ssim", [](const Array &a, const Array &b) { return ssim(to_image(a), to_image(b)); });

    m.def("read_pfm", [](const std::string &p) { return to_array(read_pfm(p)); });
    m.def("write_pfm", [](const std::string &p, const Array &a) { write_pfm(p, to_image(a)); });
    m.def("read_png", [](const std::string &p) { return to_array(read_png(p)); });
    m.def("write_png", [](const std::string &p, const Array &a) { write_png(p, to_image(a)); });

    m.def("envmap_bake", [](const Array &lobes, int h, int w) { return to_array(envmap_bake(to_lobes(lobes), h, w).image()); },
          py::arg("lobes"), py::arg("height"), py::arg("width"));
    m.def("fuse", [](const Array &fg, const Array &shadow) {
        return to_array(fuse(EnvironmentMap(to_image(fg)), EnvironmentMap(to_image(shadow))).image());
    });
    m.def(
        "toy_scene",
        [](std::uint64_t seed) {
            const ToyScene t = make_toy_scene(seed);
            py::dict out;
            out["lobes"] = from_lobes(t.gt);
            out["env"] = to_array(t.gt_map.image());
            out["background"] = to_array(t.background);
            return out;
        },
        py::arg("seed"));

    m.def("strength_schedule", [](int it, int total) { return strength_schedule(it, total, GuidanceConfig{}); });
    m.def(
        "fusion_progress",
        [](int it, int start, int end) {
            OptimConfig c;
            c.iterations = end;
            c.fusion_start = start;
            c.fusion_end = end;
            return fusion_progress(it, c);
        },
        py::arg("iteration"), py::arg("start") = 200, py::arg("end") = 600);

    m.def("render", &render, py::arg("scene"), py::arg("env"), py::arg("spp") = 16, py::arg("seed") = 0);
    m.def("optimize", &optimize, py::arg("scene"), py::arg("reference"), py::arg("iterations") = 600,
          py::arg("spp") = 16, py::arg("num_lobes") = 64, py::arg("env_height") = 128, py::arg("env_width") = 256,
          py::arg("seed") = 0);
    m.def("gradcheck", &gradcheck, py::arg("seed") = 0);
    m.def("cli", &run_cli, py::arg("args"), "Runs the dipir command line in-process; returns (code, stdout, stderr).");
}
