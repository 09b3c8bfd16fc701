#include "dipir/pathtracer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dipir/errors.hpp"
#include "dipir/parallel.hpp"
#include "dipir/rng.hpp"

namespace dipir {

namespace {

constexpr int kTileSize = 8;
constexpr int kMaxLanes = 16;
constexpr std::uint32_t kShadowBounce = 64;
constexpr double kShadowFloor = 1e-7;

struct Tile {
    int row0, col0, rows, cols;
};

std::vector<Tile> make_tiles(const RenderSettings &s) {
    const PixelRect r = s.region.value_or(PixelRect{0, 0, s.rows, s.cols});
    std::vector<Tile> tiles;
    for (int r0 = r.row0; r0 < r.row0 + r.rows; r0 += kTileSize)
        for (int c0 = r.col0; c0 < r.col0 + r.cols; c0 += kTileSize)
            tiles.push_back({r0, c0, std::min(kTileSize, r.row0 + r.rows - r0), std::min(kTileSize, r.col0 + r.cols - c0)});
    return tiles;
}

Camera render_camera(const Scene &scene, const RenderSettings &s) {
    Camera cam = scene.camera;
    cam.rows = s.rows;
    cam.cols = s.cols;
    return cam;
}

Vec3 spawn_origin(const Vec3 &p, const Vec3 &n) {
    const double scale = std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z), 1.0});
    return p + n * (1e-6 * scale);
}

Ray primary_ray(const Camera &cam, const RenderSettings &s, int row, int col, std::uint32_t sample) {
    auto rng = rng_stream(s.seed, static_cast<std::uint32_t>(row * s.cols + col), sample, 0, Purpose::Camera);
    const double du = rng.next(), dv = rng.next();
    return cam.generate_ray(row + du, col + dv);
}

std::size_t light_texel(const EnvironmentMap &light, const Vec3 &wi) {
    const auto [i, j] = pixel_from_direction(wi, light.height(), light.width());
    return static_cast<std::size_t>(i) * light.width() + j;
}

std::size_t light_index(const EnvironmentMap &light, const Vec3 &wi) { return light_texel(light, wi) * 3; }

bool same_grid(const EnvSampler &sampler, const EnvironmentMap &light) {
    return sampler.height() == light.height() && sampler.width() == light.width();
}

// Map data offset of an emitter sample, reusing the sampler's texel when the grids agree.
std::size_t emitter_index(const EnvironmentMap &light, const EnvSampler &sampler, const EnvSample &es) {
    return same_grid(sampler, light) ? es.texel * 3 : light_index(light, es.direction);
}

// Texel offset and emitter pdf of a BSDF-sampled direction with one pixel lookup.
std::pair<std::size_t, double> bsdf_lookup(const EnvironmentMap &light, const SamplingContext &ctx, const Vec3 &wi) {
    const std::size_t texel = light_texel(light, wi);
    if (!ctx.emitter) return {texel * 3, 0.0};
    const double pe = same_grid(*ctx.emitter, light) ? ctx.emitter->texel_pdf(texel) : ctx.emitter->pdf(wi);
    return {texel * 3, pe};
}

Vec3 light_at(const EnvironmentMap &light, std::size_t idx) {
    const auto d = light.image().data();
    return {d[idx], d[idx + 1], d[idx + 2]};
}

struct FgGrad {
    double *light = nullptr;
    std::array<double, kBsdfGradDim> *material = nullptr;
    Vec3 *emission = nullptr;
    Vec3 upstream;
};

// One path sample of the foreground estimator, starting at a primary object hit.
template <bool kGrad>
Vec3 trace_foreground(const Scene &scene, const EnvironmentMap &light, const SamplingContext &ctx,
                      const RenderSettings &s, std::uint32_t pixel, std::uint32_t sample, Hit hit, Vec3 wo,
                      FgGrad *grad, std::vector<ForegroundTape::Entry> *tape = nullptr) {
    const MaterialParams &mat = scene.material;
    const Vec3 emission{std::max(0.0, mat.emission.x), std::max(0.0, mat.emission.y), std::max(0.0, mat.emission.z)};
    const double inv_m = 1.0 / s.mis_rays;
    Vec3 radiance;
    Vec3 thr = Vec3::splat(1.0);
    std::array<Vec3, kBsdfGradDim> dthr{};
    BsdfJacobian jac;

    auto add_light = [&](std::size_t idx, const Vec3 &f, double scale) {
        const Vec3 le = light_at(light, idx);
        radiance += thr * f * le * scale;
        if (tape) tape->push_back({pixel, static_cast<std::uint32_t>(idx), thr * f * scale});
        if constexpr (kGrad) {
            const Vec3 g = grad->upstream * thr * f * scale;
            grad->light[idx] += g.x;
            grad->light[idx + 1] += g.y;
            grad->light[idx + 2] += g.z;
            for (int k = 0; k < kBsdfGradDim; ++k)
                (*grad->material)[k] += dot(grad->upstream, (dthr[k] * f + thr * jac[k]) * le * scale);
        }
    };

    for (int depth = 0; depth < s.max_depth; ++depth) {
        radiance += thr * emission;
        if constexpr (kGrad) {
            for (int c = 0; c < 3; ++c)
                if (mat.emission[c] > 0.0) (*grad->emission)[c] += grad->upstream[c] * thr[c];
            for (int k = 0; k < kBsdfGradDim; ++k) (*grad->material)[k] += dot(grad->upstream, dthr[k] * emission);
        }
        const Vec3 n = hit.normal, ng = hit.geometric_normal;
        const Vec3 origin = spawn_origin(hit.position, ng);

        if (ctx.emitter) {
            auto rng = rng_stream(s.seed, pixel, sample, depth, Purpose::Emitter);
            for (int j = 0; j < s.mis_rays; ++j) {
                const double u1 = rng.next(), u2 = rng.next();
                const EnvSample es = ctx.emitter->sample(u1, u2);
                const Vec3 wi = es.direction;
                const double cos_i = dot(wi, n);
                if (cos_i <= 0.0 || dot(wi, ng) <= 0.0) continue;
                if (ray_occluded(scene, {origin, wi}, HitSubset::ObjectOnly)) continue;
                const double pb = bsdf_pdf(ctx.material, n, wi, wo);
                const Vec3 f = bsdf_eval_grad(mat, n, wi, wo, jac);
                add_light(emitter_index(light, *ctx.emitter, es), f, cos_i * inv_m / (es.pdf + pb));
            }
        }

        std::optional<Hit> next;
        Vec3 next_thr, next_wo;
        std::array<Vec3, kBsdfGradDim> next_dthr{};
        auto rng = rng_stream(s.seed, pixel, sample, depth, Purpose::Bsdf);
        for (int j = 0; j < s.mis_rays; ++j) {
            const double u1 = rng.next(), u2 = rng.next();
            const BsdfSample bs = bsdf_sample(ctx.material, n, wo, u1, u2);
            if (bs.pdf <= 0.0) continue;
            const Vec3 wi = bs.wi;
            const double cos_i = dot(wi, n);
            if (cos_i <= 0.0 || dot(wi, ng) <= 0.0) continue;
            const Ray ray{origin, wi};
            if (j == 0 && depth + 1 < s.max_depth) {
                if (auto h = ray_intersect(scene, ray, HitSubset::ObjectOnly)) {
                    const Vec3 f = bsdf_eval_grad(mat, n, wi, wo, jac);
                    const double w = cos_i / bs.pdf;
                    next = *h;
                    next_wo = -wi;
                    next_thr = thr * f * w;
                    if constexpr (kGrad)
                        for (int k = 0; k < kBsdfGradDim; ++k) next_dthr[k] = (dthr[k] * f + thr * jac[k]) * w;
                    continue;
                }
            } else if (ray_occluded(scene, ray, HitSubset::ObjectOnly)) {
                continue;
            }
            const auto [idx, pe] = bsdf_lookup(light, ctx, wi);
            const Vec3 f = bsdf_eval_grad(mat, n, wi, wo, jac);
            add_light(idx, f, cos_i * inv_m / (pe + bs.pdf));
        }
        if (!next) break;
        wo = next_wo;
        hit = *next;
        thr = next_thr;
        dthr = next_dthr;
    }
    return radiance;
}

}  // namespace

void RenderSettings::validate() const {
    if (spp < 1) throw InvalidArgument("RenderSettings: spp must be >= 1");
    if (mis_rays < 1) throw InvalidArgument("RenderSettings: mis_rays must be >= 1");
    if (max_depth < 1) throw InvalidArgument("RenderSettings: max_depth must be >= 1");
    if (rows < 1 || cols < 1) throw InvalidArgument("RenderSettings: resolution must be positive");
    if (region) {
        const PixelRect &r = *region;
        if (r.rows < 0 || r.cols < 0 || r.row0 < 0 || r.col0 < 0 || r.row0 + r.rows > rows || r.col0 + r.cols > cols)
            throw InvalidArgument("RenderSettings: region outside the image");
    }
}

SamplingContext SamplingContext::build(const EnvironmentMap &map, const MaterialParams &material) {
    SamplingContext ctx;
    ctx.material = material.clamped();
    try {
        ctx.emitter.emplace(map);
    } catch (const DegenerateDistribution &) {
        ctx.emitter.reset();
    }
    return ctx;
}

double mis_weight(double pdf_a, double pdf_b) {
    if (!(pdf_a >= 0.0 && pdf_b >= 0.0)) throw InvalidArgument("mis_weight: pdfs must be nonnegative");
    if (pdf_a + pdf_b == 0.0) throw InvalidArgument("mis_weight: both pdfs are zero");
    return pdf_a / (pdf_a + pdf_b);
}

namespace {

// Primary samples of one pixel that hit the object.
struct PrimaryHits {
    std::vector<std::pair<std::uint32_t, Hit>> hits;  // (sample index, hit)
    std::vector<Vec3> wo;
};

void primary_object_hits(const Scene &scene, const Camera &cam, const RenderSettings &s, int row, int col,
                         PrimaryHits &out) {
    out.hits.clear();
    out.wo.clear();
    if (!scene.has_object()) return;
    for (int k = 0; k < s.spp; ++k) {
        const Ray ray = primary_ray(cam, s, row, col, static_cast<std::uint32_t>(k));
        if (auto h = ray_intersect(scene, ray, HitSubset::ObjectOnly)) {
            out.hits.emplace_back(static_cast<std::uint32_t>(k), *h);
            out.wo.push_back(-ray.direction);
        }
    }
}

}  // namespace

ForegroundImage render_foreground(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings) {
    return render_foreground(scene, light, settings, SamplingContext::build(light, scene.material));
}

ForegroundImage render_foreground(const Scene &scene, const EnvironmentMap &light, const RenderSettings &s,
                                  const SamplingContext &ctx, ForegroundTape *tape) {
    s.validate();
    const Camera cam = render_camera(scene, s);
    ForegroundImage out{Image(s.rows, s.cols, 3), Image(s.rows, s.cols, 1)};
    const auto tiles = make_tiles(s);
    std::vector<std::vector<ForegroundTape::Entry>> chunks(tape ? tiles.size() : 0);
    parallel_for(tiles.size(), [&](std::size_t t) {
        const Tile &tile = tiles[t];
        PrimaryHits ph;
        std::vector<ForegroundTape::Entry> *chunk = tape ? &chunks[t] : nullptr;
        for (int r = tile.row0; r < tile.row0 + tile.rows; ++r) {
            for (int c = tile.col0; c < tile.col0 + tile.cols; ++c) {
                primary_object_hits(scene, cam, s, r, c, ph);
                if (ph.hits.empty()) continue;
                const auto pixel = static_cast<std::uint32_t>(r * s.cols + c);
                Vec3 sum;
                const std::size_t first = chunk ? chunk->size() : 0;
                for (std::size_t k = 0; k < ph.hits.size(); ++k)
                    sum += trace_foreground<false>(scene, light, ctx, s, pixel, ph.hits[k].first, ph.hits[k].second,
                                                   ph.wo[k], nullptr, chunk);
                const double inv = 1.0 / static_cast<double>(ph.hits.size());
                if (chunk)
                    for (std::size_t e = first; e < chunk->size(); ++e) (*chunk)[e].weight *= inv;
                for (int ch = 0; ch < 3; ++ch) out.radiance.at(r, c, ch) = sum[ch] * inv;
                out.mask.at(r, c) = static_cast<double>(ph.hits.size()) / s.spp;
            }
        }
    });
    if (tape) {
        tape->entries.clear();
        for (const auto &c : chunks) tape->entries.insert(tape->entries.end(), c.begin(), c.end());
    }
    return out;
}

Image visibility_mask(const Scene &scene, const RenderSettings &s) {
    s.validate();
    const Camera cam = render_camera(scene, s);
    Image mask(s.rows, s.cols, 1);
    if (!scene.has_object()) return mask;
    const auto tiles = make_tiles(s);
    parallel_for(tiles.size(), [&](std::size_t t) {
        const Tile &tile = tiles[t];
        for (int r = tile.row0; r < tile.row0 + tile.rows; ++r)
            for (int c = tile.col0; c < tile.col0 + tile.cols; ++c) {
                int hits = 0;
                for (int k = 0; k < s.spp; ++k)
                    hits += scene.object->occluded(primary_ray(cam, s, r, c, static_cast<std::uint32_t>(k)));
                mask.at(r, c) = static_cast<double>(hits) / s.spp;
            }
    });
    return mask;
}

namespace {

struct ShadowTerm {
    std::size_t light_index;
    double coeff;  // multiplies the map radiance
    bool visible;
};

// Runs the shadow-ratio estimator for one pixel, recording every lighting term.
// Returns false if no primary sample hits the plane.
bool shadow_pixel(const Scene &scene, const Camera &cam, const EnvironmentMap &light, const SamplingContext &ctx,
                  const RenderSettings &s, int row, int col, Vec3 &num, Vec3 &den, std::vector<ShadowTerm> &terms) {
    num = den = Vec3{};
    terms.clear();
    const auto pixel = static_cast<std::uint32_t>(row * s.cols + col);
    const double inv_m = kInvPi / s.mis_rays;
    const bool has_object = scene.has_object();
    bool any = false;
    for (int k = 0; k < s.spp; ++k) {
        const auto sample = static_cast<std::uint32_t>(k);
        const Ray ray = primary_ray(cam, s, row, col, sample);
        const double t = scene.plane.intersect(ray);
        if (t == INFINITY) continue;
        any = true;
        const Vec3 p = ray.origin + ray.direction * t;
        const Vec3 n = dot(scene.plane.normal, ray.direction) > 0.0 ? -scene.plane.normal : scene.plane.normal;
        const Vec3 origin = spawn_origin(p, n);
        auto add = [&](std::size_t idx, const Vec3 &wi, double coeff) {
            const Vec3 term = light_at(light, idx) * coeff;
            const bool visible = !has_object || !scene.object->occluded({origin, wi});
            den += term;
            if (visible) num += term;
            terms.push_back({idx, coeff, visible});
        };
        if (ctx.emitter) {
            auto rng = rng_stream(s.seed, pixel, sample, kShadowBounce, Purpose::Emitter);
            for (int j = 0; j < s.mis_rays; ++j) {
                const double u1 = rng.next(), u2 = rng.next();
                const EnvSample es = ctx.emitter->sample(u1, u2);
                const double cos_i = dot(es.direction, n);
                if (cos_i <= 0.0) continue;
                add(emitter_index(light, *ctx.emitter, es), es.direction, cos_i * inv_m / (es.pdf + cos_i * kInvPi));
            }
        }
        const Frame frame(n);
        auto rng = rng_stream(s.seed, pixel, sample, kShadowBounce, Purpose::Bsdf);
        for (int j = 0; j < s.mis_rays; ++j) {
            const double u1 = rng.next(), u2 = rng.next();
            const double r = std::sqrt(u1), phi = 2.0 * kPi * u2;
            const double cos_i = std::sqrt(std::max(0.0, 1.0 - u1));
            if (cos_i <= 0.0) continue;
            const Vec3 wi = normalize(frame.to_world({r * std::cos(phi), r * std::sin(phi), cos_i}));
            const auto [idx, pe] = bsdf_lookup(light, ctx, wi);
            add(idx, wi, cos_i * inv_m / (pe + cos_i * kInvPi));
        }
    }
    return any;
}

// Ratio with the degenerate-denominator rules. Returns false if the pixel is floored.
bool shadow_ratio(const Vec3 &num, const Vec3 &den, int hits, Vec3 &beta) {
    if (luminance(den) / hits < kShadowFloor) {
        beta = Vec3::splat(1.0);
        return false;
    }
    for (int c = 0; c < 3; ++c) beta[c] = den[c] > 0.0 ? num[c] / den[c] : 1.0;
    return true;
}

}  // namespace

ShadowImage render_shadow_ratio(const Scene &scene, const EnvironmentMap &light, const RenderSettings &settings) {
    return render_shadow_ratio(scene, light, settings, SamplingContext::build(light, scene.material));
}

ShadowImage render_shadow_ratio(const Scene &scene, const EnvironmentMap &light, const RenderSettings &s,
                                const SamplingContext &ctx, ShadowTape *tape) {
    s.validate();
    scene.plane.validate();
    const Camera cam = render_camera(scene, s);
    ShadowImage out{Image(s.rows, s.cols, 3, 1.0), 0};
    const auto tiles = make_tiles(s);
    std::vector<long> floored(tiles.size(), 0);
    std::vector<ShadowTape> chunks(tape ? tiles.size() : 0);
    parallel_for(tiles.size(), [&](std::size_t t) {
        const Tile &tile = tiles[t];
        std::vector<ShadowTerm> terms;
        for (int r = tile.row0; r < tile.row0 + tile.rows; ++r)
            for (int c = tile.col0; c < tile.col0 + tile.cols; ++c) {
                Vec3 num, den, beta;
                if (!shadow_pixel(scene, cam, light, ctx, s, r, c, num, den, terms)) continue;
                const bool valid = shadow_ratio(num, den, s.spp, beta);
                if (!valid) ++floored[t];
                for (int ch = 0; ch < 3; ++ch) out.beta.at(r, c, ch) = beta[ch];
                if (tape && valid) {
                    ShadowTape &chunk = chunks[t];
                    chunk.pixels.push_back({static_cast<std::uint32_t>(r * s.cols + c),
                                            static_cast<std::uint32_t>(chunk.terms.size()),
                                            static_cast<std::uint32_t>(terms.size()), den, beta});
                    for (const ShadowTerm &term : terms)
                        chunk.terms.push_back({static_cast<std::uint32_t>(term.light_index), term.coeff, term.visible});
                }
            }
    });
    for (long f : floored) out.floored_pixels += f;
    if (tape) {
        tape->pixels.clear();
        tape->terms.clear();
        for (const ShadowTape &c : chunks) {
            const auto offset = static_cast<std::uint32_t>(tape->terms.size());
            for (ShadowTape::Pixel p : c.pixels) {
                p.first += offset;
                tape->pixels.push_back(p);
            }
            tape->terms.insert(tape->terms.end(), c.terms.begin(), c.terms.end());
        }
    }
    return out;
}

Image composite(const Image &background, const Image &fg, const Image &beta, const Image &mask) {
    require_same_shape(background, fg, "composite");
    require_same_shape(background, beta, "composite");
    if (background.channels() != 3 || mask.rows() != background.rows() || mask.cols() != background.cols() ||
        mask.channels() != 1)
        throw InvalidArgument("composite: image shape mismatch");
    Image out(background.rows(), background.cols(), 3);
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) {
            const double v = mask.at(r, c);
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = (1.0 - v) * beta.at(r, c, ch) * background.at(r, c, ch) + v * fg.at(r, c, ch);
        }
    return out;
}

CompositeVjp composite_vjp(const Image &background, const Image &fg, const Image &beta, const Image &mask,
                           const Image &upstream) {
    require_same_shape(background, upstream, "composite_vjp");
    composite(background, fg, beta, mask);  // shape checks
    CompositeVjp out{Image(background.rows(), background.cols(), 3), Image(background.rows(), background.cols(), 3),
                     Image(background.rows(), background.cols(), 3)};
    for (int r = 0; r < background.rows(); ++r)
        for (int c = 0; c < background.cols(); ++c) {
            const double v = mask.at(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double u = upstream.at(r, c, ch);
                out.d_background.at(r, c, ch) = u * (1.0 - v) * beta.at(r, c, ch);
                out.d_beta.at(r, c, ch) = u * (1.0 - v) * background.at(r, c, ch);
                out.d_fg.at(r, c, ch) = u * v;
            }
        }
    return out;
}

namespace {

bool pixel_has_upstream(const Image &upstream, int r, int c) {
    return upstream.at(r, c, 0) != 0.0 || upstream.at(r, c, 1) != 0.0 || upstream.at(r, c, 2) != 0.0;
}

// Tiles are dealt round-robin to a fixed number of lanes. Each lane owns a
// private accumulator and walks its tiles in order, and lanes are merged in
// lane order, so the sum is independent of the thread count.
template <class Lane, class Work, class Merge>
void run_lanes(std::size_t num_tiles, const std::function<Lane()> &make_lane, Work work, Merge merge) {
    const std::size_t lanes = std::min<std::size_t>(kMaxLanes, std::max<std::size_t>(1, num_tiles));
    std::vector<Lane> acc;
    acc.reserve(lanes);
    for (std::size_t l = 0; l < lanes; ++l) acc.push_back(make_lane());
    parallel_for(lanes, [&](std::size_t l) {
        for (std::size_t t = l; t < num_tiles; t += lanes) work(acc[l], t);
    });
    for (auto &lane : acc) merge(lane);
}

}  // namespace

ForegroundGrad render_foreground_vjp(const Scene &scene, const EnvironmentMap &light, const RenderSettings &s,
                                     const SamplingContext &ctx, const Image &upstream) {
    s.validate();
    if (upstream.rows() != s.rows || upstream.cols() != s.cols || upstream.channels() != 3)
        throw InvalidArgument("render_foreground_vjp: upstream shape mismatch");
    const Camera cam = render_camera(scene, s);
    ForegroundGrad out;
    out.light = Image(light.height(), light.width(), 3);
    if (!scene.has_object()) return out;
    const auto tiles = make_tiles(s);
    run_lanes<ForegroundGrad>(
        tiles.size(),
        [&] {
            ForegroundGrad g;
            g.light = Image(light.height(), light.width(), 3);
            return g;
        },
        [&](ForegroundGrad &lane, std::size_t t) {
            const Tile &tile = tiles[t];
            PrimaryHits ph;
            FgGrad grad{lane.light.data().data(), &lane.material, &lane.emission, {}};
            for (int r = tile.row0; r < tile.row0 + tile.rows; ++r)
                for (int c = tile.col0; c < tile.col0 + tile.cols; ++c) {
                    if (!pixel_has_upstream(upstream, r, c)) continue;
                    primary_object_hits(scene, cam, s, r, c, ph);
                    if (ph.hits.empty()) continue;
                    const double inv = 1.0 / static_cast<double>(ph.hits.size());
                    grad.upstream = Vec3{upstream.at(r, c, 0), upstream.at(r, c, 1), upstream.at(r, c, 2)} * inv;
                    const auto pixel = static_cast<std::uint32_t>(r * s.cols + c);
                    for (std::size_t k = 0; k < ph.hits.size(); ++k)
                        trace_foreground<true>(scene, light, ctx, s, pixel, ph.hits[k].first, ph.hits[k].second,
                                               ph.wo[k], &grad);
                }
        },
        [&](const ForegroundGrad &lane) {
            auto dst = out.light.data();
            auto src = lane.light.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            for (int k = 0; k < kBsdfGradDim; ++k) out.material[k] += lane.material[k];
            out.emission += lane.emission;
        });
    return out;
}

Image render_shadow_ratio_vjp(const Scene &scene, const EnvironmentMap &light, const RenderSettings &s,
                              const SamplingContext &ctx, const Image &upstream) {
    s.validate();
    if (upstream.rows() != s.rows || upstream.cols() != s.cols || upstream.channels() != 3)
        throw InvalidArgument("render_shadow_ratio_vjp: upstream shape mismatch");
    const Camera cam = render_camera(scene, s);
    Image out(light.height(), light.width(), 3);
    const auto tiles = make_tiles(s);
    run_lanes<Image>(
        tiles.size(), [&] { return Image(light.height(), light.width(), 3); },
        [&](Image &lane, std::size_t t) {
            const Tile &tile = tiles[t];
            std::vector<ShadowTerm> terms;
            auto g = lane.data();
            for (int r = tile.row0; r < tile.row0 + tile.rows; ++r)
                for (int c = tile.col0; c < tile.col0 + tile.cols; ++c) {
                    if (!pixel_has_upstream(upstream, r, c)) continue;
                    Vec3 num, den, beta;
                    if (!shadow_pixel(scene, cam, light, ctx, s, r, c, num, den, terms)) continue;
                    if (!shadow_ratio(num, den, s.spp, beta)) continue;
                    Vec3 u_num, u_den;
                    for (int ch = 0; ch < 3; ++ch) {
                        if (!(den[ch] > 0.0)) continue;
                        const double u = upstream.at(r, c, ch);
                        u_num[ch] = u / den[ch];
                        u_den[ch] = -u * beta[ch] / den[ch];
                    }
                    for (const ShadowTerm &term : terms) {
                        const Vec3 w = ((term.visible ? u_num : Vec3{}) + u_den) * term.coeff;
                        g[term.light_index] += w.x;
                        g[term.light_index + 1] += w.y;
                        g[term.light_index + 2] += w.z;
                    }
                }
        },
        [&](const Image &lane) {
            auto dst = out.data();
            auto src = lane.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        });
    return out;
}

Image foreground_tape_vjp(const ForegroundTape &tape, const Image &upstream, int map_height, int map_width) {
    if (upstream.channels() != 3) throw InvalidArgument("foreground_tape_vjp: RGB upstream required");
    Image out(map_height, map_width, 3);
    auto g = out.data();
    const auto u = upstream.data();
    for (const auto &e : tape.entries) {
        const std::size_t p = static_cast<std::size_t>(e.pixel) * 3;
        if (p + 2 >= u.size() || e.light_index + 2 >= g.size())
            throw InvalidArgument("foreground_tape_vjp: tape does not match the upstream or map shape");
        g[e.light_index] += u[p] * e.weight.x;
        g[e.light_index + 1] += u[p + 1] * e.weight.y;
        g[e.light_index + 2] += u[p + 2] * e.weight.z;
    }
    return out;
}

Image shadow_tape_vjp(const ShadowTape &tape, const Image &upstream, int map_height, int map_width) {
    if (upstream.channels() != 3) throw InvalidArgument("shadow_tape_vjp: RGB upstream required");
    Image out(map_height, map_width, 3);
    auto g = out.data();
    const auto u = upstream.data();
    for (const auto &px : tape.pixels) {
        const std::size_t p = static_cast<std::size_t>(px.pixel) * 3;
        if (p + 2 >= u.size()) throw InvalidArgument("shadow_tape_vjp: tape does not match the upstream shape");
        if (u[p] == 0.0 && u[p + 1] == 0.0 && u[p + 2] == 0.0) continue;
        Vec3 u_num, u_den;
        for (int ch = 0; ch < 3; ++ch) {
            if (!(px.den[ch] > 0.0)) continue;
            u_num[ch] = u[p + ch] / px.den[ch];
            u_den[ch] = -u[p + ch] * px.beta[ch] / px.den[ch];
        }
        for (std::uint32_t k = px.first; k < px.first + px.count; ++k) {
            const auto &term = tape.terms[k];
            if (term.light_index + 2 >= g.size()) throw InvalidArgument("shadow_tape_vjp: tape does not match the map");
            const Vec3 w = ((term.visible ? u_num : Vec3{}) + u_den) * term.coeff;
            g[term.light_index] += w.x;
            g[term.light_index + 1] += w.y;
            g[term.light_index + 2] += w.z;
        }
    }
    return out;
}

}  // namespace dipir
