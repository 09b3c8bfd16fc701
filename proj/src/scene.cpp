#include "dipir/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dipir/errors.hpp"

namespace dipir {

namespace {

constexpr int kLeafSize = 4;

Vec3 vmin(const Vec3 &a, const Vec3 &b) { return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)}; }
Vec3 vmax(const Vec3 &a, const Vec3 &b) { return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)}; }

}  // namespace

void Aabb::expand(const Vec3 &p) {
    lo = vmin(lo, p);
    hi = vmax(hi, p);
}

void Aabb::expand(const Aabb &b) {
    lo = vmin(lo, b.lo);
    hi = vmax(hi, b.hi);
}

double Aabb::intersect(const Ray &r, const Vec3 &inv_dir, double tmax) const {
    double t0 = 0.0, t1 = tmax;
    for (int a = 0; a < 3; ++a) {
        double tn = (lo[a] - r.origin[a]) * inv_dir[a];
        double tf = (hi[a] - r.origin[a]) * inv_dir[a];
        if (tn > tf) std::swap(tn, tf);
        // NaN from 0 * inf keeps the previous bound.
        t0 = tn > t0 ? tn : t0;
        t1 = tf < t1 ? tf : t1;
        if (t0 > t1 * (1 + 4e-16)) return INFINITY;
    }
    return t0;
}

Mesh::Mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles, std::vector<Vec3> normals)
    : vertices_(std::move(vertices)), normals_(std::move(normals)) {
    const int nv = static_cast<int>(vertices_.size());
    if (!normals_.empty() && normals_.size() != vertices_.size())
        throw LoadError("Mesh: per-vertex normal count does not match vertex count");
    for (const auto &v : vertices_)
        if (!isfinite(v)) throw LoadError("Mesh: non-finite vertex");
    for (const auto &tri : triangles) {
        for (int idx : tri)
            if (idx < 0 || idx >= nv) throw LoadError("Mesh: triangle index out of range");
        const Vec3 e1 = vertices_[tri[1]] - vertices_[tri[0]];
        const Vec3 e2 = vertices_[tri[2]] - vertices_[tri[0]];
        if (length(cross(e1, e2)) > 1e-14) triangles_.push_back(tri);
    }
    for (auto &n : normals_) {
        const double len = length(n);
        n = len > 0.0 ? n / len : Vec3{};
    }
    if (triangles_.empty()) return;
    std::vector<Vec3> centroids;
    centroids.reserve(triangles_.size());
    for (const auto &tri : triangles_)
        centroids.push_back((vertices_[tri[0]] + vertices_[tri[1]] + vertices_[tri[2]]) / 3.0);
    nodes_.reserve(2 * triangles_.size());
    build(0, static_cast<int>(triangles_.size()), centroids);
    bounds_ = nodes_.front().box;
}

int Mesh::build(int begin, int end, std::vector<Vec3> &centroids) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Aabb box, cbox;
    for (int t = begin; t < end; ++t) {
        for (int k : triangles_[t]) box.expand(vertices_[k]);
        cbox.expand(centroids[t]);
    }
    nodes_[index].box = box;
    if (end - begin <= kLeafSize) {
        nodes_[index].first = begin;
        nodes_[index].count = end - begin;
        return index;
    }
    const Vec3 extent = cbox.hi - cbox.lo;
    const int axis = extent.x >= extent.y && extent.x >= extent.z ? 0 : (extent.y >= extent.z ? 1 : 2);
    const int mid = (begin + end) / 2;
    std::vector<int> order(end - begin);
    std::iota(order.begin(), order.end(), begin);
    std::nth_element(order.begin(), order.begin() + (mid - begin), order.end(),
                     [&](int a, int b) { return centroids[a][axis] < centroids[b][axis]; });
    std::vector<std::array<int, 3>> tris;
    std::vector<Vec3> cents;
    for (int t : order) {
        tris.push_back(triangles_[t]);
        cents.push_back(centroids[t]);
    }
    std::copy(tris.begin(), tris.end(), triangles_.begin() + begin);
    std::copy(cents.begin(), cents.end(), centroids.begin() + begin);
    build(begin, mid, centroids);
    const int right = build(mid, end, centroids);
    nodes_[index].first = right;
    nodes_[index].count = 0;
    return index;
}

bool Mesh::hit_triangle(int tri, const Ray &ray, double tmin, double tmax, TriHit &hit) const {
    // Moller-Trumbore.
    const auto &t = triangles_[tri];
    const Vec3 &p0 = vertices_[t[0]];
    const Vec3 e1 = vertices_[t[1]] - p0, e2 = vertices_[t[2]] - p0;
    const Vec3 pv = cross(ray.direction, e2);
    const double det = dot(e1, pv);
    if (det == 0.0) return false;
    const double inv = 1.0 / det;
    const Vec3 tv = ray.origin - p0;
    const double b1 = dot(tv, pv) * inv;
    if (b1 < 0.0 || b1 > 1.0) return false;
    const Vec3 qv = cross(tv, e1);
    const double b2 = dot(ray.direction, qv) * inv;
    if (b2 < 0.0 || b1 + b2 > 1.0) return false;
    const double dist = dot(e2, qv) * inv;
    if (!(dist > tmin && dist < tmax)) return false;
    hit = {dist, tri, b1, b2};
    return true;
}

Mesh::TriHit Mesh::intersect(const Ray &ray, double tmin) const {
    TriHit best;
    best.t = ray.tmax;
    if (nodes_.empty()) return {INFINITY, -1, 0, 0};
    const Vec3 inv{1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z};
    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node &node = nodes_[stack[--top]];
        if (node.box.intersect(ray, inv, best.t) == INFINITY) continue;
        if (node.count > 0) {
            for (int k = node.first; k < node.first + node.count; ++k) {
                TriHit h;
                if (hit_triangle(k, ray, tmin, best.t, h)) best = h;
            }
        } else {
            const int left = static_cast<int>(&node - nodes_.data()) + 1;
            const int right = node.first;
            const double tl = nodes_[left].box.intersect(ray, inv, best.t);
            const double tr = nodes_[right].box.intersect(ray, inv, best.t);
            if (tl <= tr) {
                if (tr != INFINITY) stack[top++] = right;
                if (tl != INFINITY) stack[top++] = left;
            } else {
                if (tl != INFINITY) stack[top++] = left;
                if (tr != INFINITY) stack[top++] = right;
            }
        }
    }
    if (best.triangle < 0) best.t = INFINITY;
    return best;
}

bool Mesh::occluded(const Ray &ray, double tmin) const {
    if (nodes_.empty()) return false;
    const Vec3 inv{1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z};
    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node &node = nodes_[stack[--top]];
        if (node.box.intersect(ray, inv, ray.tmax) == INFINITY) continue;
        if (node.count > 0) {
            for (int k = node.first; k < node.first + node.count; ++k) {
                TriHit h;
                if (hit_triangle(k, ray, tmin, ray.tmax, h)) return true;
            }
        } else {
            stack[top++] = node.first;
            stack[top++] = static_cast<int>(&node - nodes_.data()) + 1;
        }
    }
    return false;
}

Mesh::TriHit Mesh::intersect_brute_force(const Ray &ray, double tmin) const {
    TriHit best;
    best.t = ray.tmax;
    for (int k = 0; k < static_cast<int>(triangles_.size()); ++k) {
        TriHit h;
        if (hit_triangle(k, ray, tmin, best.t, h)) best = h;
    }
    if (best.triangle < 0) best.t = INFINITY;
    return best;
}

Vec3 Mesh::geometric_normal(int tri) const {
    const auto &t = triangles_[tri];
    return normalize(cross(vertices_[t[1]] - vertices_[t[0]], vertices_[t[2]] - vertices_[t[0]]));
}

Vec3 Mesh::shading_normal(int tri, double b1, double b2) const {
    if (normals_.empty()) return geometric_normal(tri);
    const auto &t = triangles_[tri];
    const Vec3 n = normals_[t[0]] * (1.0 - b1 - b2) + normals_[t[1]] * b1 + normals_[t[2]] * b2;
    const double len = length(n);
    return len > 0.0 ? n / len : geometric_normal(tri);
}

Mesh load_obj(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw LoadError("load_obj: cannot open '" + path.string() + "'");
    std::vector<Vec3> positions, normals_in;
    // Each output vertex is a (position, normal) index pair.
    std::map<std::pair<int, int>, int> remap;
    std::vector<Vec3> vertices, normals;
    std::vector<std::array<int, 3>> triangles;
    bool any_normals = false;
    std::string line;
    int line_no = 0;

    auto resolve = [&](int idx, std::size_t count) -> int {
        const int n = static_cast<int>(count);
        const int r = idx > 0 ? idx - 1 : n + idx;
        if (idx == 0 || r < 0 || r >= n)
            throw LoadError("load_obj: index out of range at line " + std::to_string(line_no));
        return r;
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z)) throw LoadError("load_obj: malformed vertex at line " + std::to_string(line_no));
            positions.push_back(p);
        } else if (tag == "vn") {
            Vec3 n;
            if (!(ls >> n.x >> n.y >> n.z)) throw LoadError("load_obj: malformed normal at line " + std::to_string(line_no));
            normals_in.push_back(n);
        } else if (tag == "f") {
            std::vector<int> face;
            std::string tok;
            while (ls >> tok) {
                int vi = 0, ni = 0;
                const auto s1 = tok.find('/');
                try {
                    vi = std::stoi(tok.substr(0, s1));
                    if (s1 != std::string::npos) {
                        const auto s2 = tok.find('/', s1 + 1);
                        if (s2 != std::string::npos && s2 + 1 < tok.size()) ni = std::stoi(tok.substr(s2 + 1));
                    }
                } catch (const std::exception &) {
                    throw LoadError("load_obj: malformed face at line " + std::to_string(line_no));
                }
                const int p = resolve(vi, positions.size());
                const int n = ni != 0 ? resolve(ni, normals_in.size()) : -1;
                any_normals |= n >= 0;
                const auto key = std::make_pair(p, n);
                auto it = remap.find(key);
                if (it == remap.end()) {
                    it = remap.emplace(key, static_cast<int>(vertices.size())).first;
                    vertices.push_back(positions[p]);
                    normals.push_back(n >= 0 ? normals_in[n] : Vec3{});
                }
                face.push_back(it->second);
            }
            if (face.size() < 3) throw LoadError("load_obj: face with fewer than 3 vertices at line " + std::to_string(line_no));
            for (std::size_t k = 1; k + 1 < face.size(); ++k) triangles.push_back({face[0], face[k], face[k + 1]});
        }
    }
    if (triangles.empty()) throw LoadError("load_obj: no faces in '" + path.string() + "'");
    if (!any_normals) normals.clear();
    return Mesh(std::move(vertices), std::move(triangles), std::move(normals));
}

Mesh make_icosphere(const Vec3 &center, double radius, int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto &p : v) p = normalize(p);
    std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                         {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                         {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                         {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7}, {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            v.push_back(normalize(v[a] + v[b]));
            return mid[key] = static_cast<int>(v.size()) - 1;
        };
        std::vector<std::array<int, 3>> next;
        for (const auto &tri : f) {
            const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
            next.push_back({tri[0], a, c});
            next.push_back({tri[1], b, a});
            next.push_back({tri[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    std::vector<Vec3> normals = v;
    for (auto &p : v) p = center + p * radius;
    return Mesh(std::move(v), std::move(f), std::move(normals));
}

Mesh make_box(const Vec3 &lo, const Vec3 &hi) {
    std::vector<Vec3> v;
    for (int k = 0; k < 8; ++k) v.push_back({k & 1 ? hi.x : lo.x, k & 2 ? hi.y : lo.y, k & 4 ? hi.z : lo.z});
    std::vector<std::array<int, 3>> f = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                         {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return Mesh(std::move(v), std::move(f));
}

Mesh make_disk(const Vec3 &center, const Vec3 &normal, double radius, int segments) {
    const Frame frame(normalize(normal));
    std::vector<Vec3> v{center};
    std::vector<std::array<int, 3>> f;
    for (int k = 0; k < segments; ++k) {
        const double phi = 2.0 * kPi * k / segments;
        v.push_back(center + frame.to_world({radius * std::cos(phi), radius * std::sin(phi), 0.0}));
    }
    for (int k = 0; k < segments; ++k) f.push_back({0, 1 + k, 1 + (k + 1) % segments});
    return Mesh(std::move(v), std::move(f));
}

Mat3 Placement::rotation() const {
    const Vec3 r = rotation_euler_xyz_deg * (kPi / 180.0);
    const double cx = std::cos(r.x), sx = std::sin(r.x), cy = std::cos(r.y), sy = std::sin(r.y);
    const double cz = std::cos(r.z), sz = std::sin(r.z);
    Mat3 rx, ry, rz;
    rx.m = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
    ry.m = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    rz.m = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    return rz * ry * rx;
}

Mesh Placement::apply(const Mesh &mesh) const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw LoadError("Placement: scale must be positive (transform not invertible)");
    if (!isfinite(translation) || !isfinite(rotation_euler_xyz_deg)) throw LoadError("Placement: non-finite transform");
    const Mat3 rot = rotation();
    std::vector<Vec3> v, n;
    for (const auto &p : mesh.vertices()) v.push_back(rot * (p * scale) + translation);
    for (const auto &q : mesh.normals()) n.push_back(rot * q);
    return Mesh(std::move(v), mesh.triangles(), std::move(n));
}

Camera Camera::look_at(const Vec3 &position, const Vec3 &target, const Vec3 &up, double fov_deg, int rows, int cols) {
    const Vec3 fwd = target - position;
    if (!(length(fwd) > 0.0)) throw InvalidArgument("Camera: look_at equals position");
    const Vec3 f = normalize(fwd);
    const Vec3 side = cross(f, up);
    if (!(length(side) > 1e-12)) throw InvalidArgument("Camera: up is parallel to the view direction");
    const Vec3 right = normalize(side);
    const Vec3 true_up = cross(right, f);
    Camera cam;
    cam.position = position;
    cam.orientation = Mat3::from_columns(right, true_up, -f);
    cam.vertical_fov = fov_deg * kPi / 180.0;
    cam.rows = rows;
    cam.cols = cols;
    cam.validate();
    return cam;
}

void Camera::validate() const {
    if (!(vertical_fov > 0.0 && vertical_fov < kPi)) throw InvalidArgument("Camera: field of view must lie in (0, pi)");
    if (rows < 1 || cols < 1) throw InvalidArgument("Camera: resolution must be positive");
    const Mat3 rtr = orientation.transposed() * orientation;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (std::abs(rtr.m[3 * i + j] - (i == j ? 1.0 : 0.0)) > 1e-6)
                throw InvalidArgument("Camera: orientation is not orthonormal");
}

Ray Camera::generate_ray(double row, double col) const {
    const double tan_half = std::tan(0.5 * vertical_fov);
    const double aspect = static_cast<double>(cols) / rows;
    const double x = (2.0 * col / cols - 1.0) * tan_half * aspect;
    const double y = (1.0 - 2.0 * row / rows) * tan_half;
    const Vec3 d = orientation * Vec3{x, y, -1.0};
    return {position, normalize(d)};
}

std::optional<std::pair<double, double>> Camera::project(const Vec3 &p) const {
    const Vec3 local = orientation.transposed() * (p - position);
    if (local.z >= 0.0) return std::nullopt;
    const double tan_half = std::tan(0.5 * vertical_fov);
    const double aspect = static_cast<double>(cols) / rows;
    const double x = local.x / -local.z, y = local.y / -local.z;
    const double col = (x / (tan_half * aspect) + 1.0) * 0.5 * cols;
    const double row = (1.0 - y / tan_half) * 0.5 * rows;
    return std::make_pair(row, col);
}

void ProxyPlane::validate() const {
    if (std::abs(length(normal) - 1.0) > 1e-6) throw InvalidArgument("ProxyPlane: normal must be unit length");
    if (!(half_extent_u > 0.0 && half_extent_v > 0.0)) throw InvalidArgument("ProxyPlane: extent must be positive");
}

double ProxyPlane::intersect(const Ray &ray, double tmin) const {
    const double denom = dot(ray.direction, normal);
    if (std::abs(denom) < 1e-12) return INFINITY;
    const double t = dot(point - ray.origin, normal) / denom;
    if (!(t > tmin && t < ray.tmax)) return INFINITY;
    const Frame frame(normal);
    const Vec3 local = frame.to_local(ray.origin + ray.direction * t - point);
    if (std::abs(local.x) > half_extent_u || std::abs(local.y) > half_extent_v) return INFINITY;
    return t;
}

std::optional<Hit> ray_intersect(const Scene &scene, const Ray &ray, HitSubset subset, double tmin) {
    Hit hit;
    double best = ray.tmax;
    bool found = false;
    if (subset != HitSubset::PlaneOnly && scene.has_object()) {
        const auto th = scene.object->intersect(ray, tmin);
        if (th.triangle >= 0 && th.t < best) {
            best = th.t;
            found = true;
            hit.surface = Surface::Object;
            hit.geometric_normal = scene.object->geometric_normal(th.triangle);
            hit.normal = scene.object->shading_normal(th.triangle, th.b1, th.b2);
        }
    }
    if (subset != HitSubset::ObjectOnly) {
        const double tp = scene.plane.intersect(ray, tmin);
        if (tp < best) {
            best = tp;
            found = true;
            hit.surface = Surface::Plane;
            hit.geometric_normal = scene.plane.normal;
            hit.normal = scene.plane.normal;
        }
    }
    if (!found) return std::nullopt;
    hit.distance = best;
    hit.position = ray.origin + ray.direction * best;
    if (dot(hit.geometric_normal, ray.direction) > 0.0) hit.geometric_normal = -hit.geometric_normal;
    if (dot(hit.normal, ray.direction) > 0.0) hit.normal = -hit.normal;
    return hit;
}

bool ray_occluded(const Scene &scene, const Ray &ray, HitSubset subset, double tmin) {
    if (subset != HitSubset::PlaneOnly && scene.has_object() && scene.object->occluded(ray, tmin)) return true;
    if (subset != HitSubset::ObjectOnly && scene.plane.intersect(ray, tmin) < INFINITY) return true;
    return false;
}

namespace {

using nlohmann::json;

void check_keys(const json &obj, std::initializer_list<const char *> allowed, const std::string &where) {
    if (!obj.is_object()) throw LoadError("scene config: '" + where + "' must be an object");
    for (const auto &[key, _] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return key == a; }))
            throw LoadError("scene config: unknown key '" + key + "' in " + where);
    }
}

Vec3 read_vec3(const json &j, const std::string &what) {
    if (!j.is_array() || j.size() != 3) throw LoadError("scene config: '" + what + "' must be a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Scene load_scene(const std::filesystem::path &config_path) {
    std::ifstream in(config_path);
    if (!in) throw LoadError("load_scene: cannot open '" + config_path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception &e) {
        throw LoadError("load_scene: invalid JSON in '" + config_path.string() + "': " + e.what());
    }
    const auto base = config_path.parent_path();
    Scene scene;
    try {
        check_keys(doc, {"mesh", "placement", "material", "plane", "camera", "background"}, "scene");
        if (doc.contains("placement")) {
            const auto &p = doc["placement"];
            check_keys(p, {"translation", "rotation_euler_xyz_deg", "scale"}, "placement");
            if (p.contains("translation")) scene.placement.translation = read_vec3(p["translation"], "translation");
            if (p.contains("rotation_euler_xyz_deg"))
                scene.placement.rotation_euler_xyz_deg = read_vec3(p["rotation_euler_xyz_deg"], "rotation_euler_xyz_deg");
            if (p.contains("scale")) scene.placement.scale = p["scale"].get<double>();
        }
        if (doc.contains("mesh") && !doc["mesh"].is_null()) {
            const auto mesh_path = base / doc["mesh"].get<std::string>();
            if (!std::filesystem::exists(mesh_path)) throw LoadError("load_scene: mesh file not found: '" + mesh_path.string() + "'");
            scene.object = scene.placement.apply(load_obj(mesh_path));
        }
        if (doc.contains("material")) {
            const auto &m = doc["material"];
            check_keys(m, {"base_color", "metallic", "roughness", "emission"}, "material");
            if (m.contains("base_color")) scene.material.base_color = read_vec3(m["base_color"], "base_color");
            if (m.contains("metallic")) scene.material.metallic = m["metallic"].get<double>();
            if (m.contains("roughness")) scene.material.roughness = m["roughness"].get<double>();
            if (m.contains("emission")) scene.material.emission = read_vec3(m["emission"], "emission");
            if (!(scene.material.clamped() == scene.material)) throw LoadError("scene config: material value out of range");
        }
        if (doc.contains("plane")) {
            const auto &p = doc["plane"];
            check_keys(p, {"point", "normal", "half_extent"}, "plane");
            if (p.contains("point")) scene.plane.point = read_vec3(p["point"], "point");
            if (p.contains("normal")) scene.plane.normal = normalize(read_vec3(p["normal"], "normal"));
            if (p.contains("half_extent")) {
                const auto &e = p["half_extent"];
                if (e.is_array()) {
                    if (e.size() != 2) throw LoadError("scene config: half_extent must be a number or 2-element array");
                    scene.plane.half_extent_u = e[0].get<double>();
                    scene.plane.half_extent_v = e[1].get<double>();
                } else {
                    scene.plane.half_extent_u = scene.plane.half_extent_v = e.get<double>();
                }
            }
        }
        scene.plane.validate();
        if (!doc.contains("camera")) throw LoadError("scene config: missing 'camera'");
        const auto &c = doc["camera"];
        check_keys(c, {"position", "look_at", "up", "fov_deg", "resolution"}, "camera");
        const Vec3 up = c.contains("up") ? read_vec3(c["up"], "up") : Vec3{0, 0, 1};
        int rows = 256, cols = 384;
        if (c.contains("resolution")) {
            const auto &r = c["resolution"];
            if (!r.is_array() || r.size() != 2) throw LoadError("scene config: resolution must be [rows, cols]");
            rows = r[0].get<int>();
            cols = r[1].get<int>();
        }
        scene.camera = Camera::look_at(read_vec3(c.at("position"), "position"), read_vec3(c.at("look_at"), "look_at"),
                                       up, c.at("fov_deg").get<double>(), rows, cols);
        if (doc.contains("background")) {
            const auto &b = doc["background"];
            check_keys(b, {"path"}, "background");
            if (b.contains("path")) scene.background_path = (base / b["path"].get<std::string>()).string();
        }
    } catch (const json::exception &e) {
        throw LoadError(std::string("load_scene: ") + e.what());
    } catch (const InvalidArgument &e) {
        throw LoadError(std::string("load_scene: ") + e.what());
    }
    return scene;
}

}  // namespace dipir
