#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dipir/bsdf.hpp"
#include "dipir/vec.hpp"

namespace dipir {

struct Ray {
    Vec3 origin;
    Vec3 direction;
    double tmax = INFINITY;
};

struct Aabb {
    Vec3 lo{INFINITY, INFINITY, INFINITY};
    Vec3 hi{-INFINITY, -INFINITY, -INFINITY};

    void expand(const Vec3 &p);
    void expand(const Aabb &b);
    Vec3 center() const { return (lo + hi) * 0.5; }
    /// Slab test; returns the entry distance or +inf on a miss.
    double intersect(const Ray &r, const Vec3 &inv_dir, double tmax) const;
};

/// Triangle mesh in world space with a bounding-volume hierarchy.
class Mesh {
public:
    Mesh() = default;
    /// Builds the acceleration structure; zero-area triangles are dropped.
    Mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles, std::vector<Vec3> normals = {});

    struct TriHit {
        double t = INFINITY;
        int triangle = -1;
        double b1 = 0, b2 = 0;
    };

    std::size_t num_triangles() const { return triangles_.size(); }
    const std::vector<Vec3> &vertices() const { return vertices_; }
    const std::vector<std::array<int, 3>> &triangles() const { return triangles_; }
    const std::vector<Vec3> &normals() const { return normals_; }
    const Aabb &bounds() const { return bounds_; }

    /// Nearest triangle hit with t in (tmin, tmax).
    TriHit intersect(const Ray &ray, double tmin = 0.0) const;
    bool occluded(const Ray &ray, double tmin = 0.0) const;
    /// Same as intersect() but testing every triangle.
    TriHit intersect_brute_force(const Ray &ray, double tmin = 0.0) const;

    Vec3 geometric_normal(int tri) const;
    Vec3 shading_normal(int tri, double b1, double b2) const;

private:
    struct Node {
        Aabb box;
        int first = 0;  // child index (interior) or first triangle (leaf)
        int count = 0;  // 0 for interior nodes
    };

    int build(int begin, int end, std::vector<Vec3> &centroids);
    bool hit_triangle(int tri, const Ray &ray, double tmin, double tmax, TriHit &hit) const;

    std::vector<Vec3> vertices_;
    std::vector<std::array<int, 3>> triangles_;
    std::vector<Vec3> normals_;
    std::vector<Node> nodes_;
    Aabb bounds_;
};

/// Parses a Wavefront OBJ (v / vn / f records; polygons fan-triangulated).
Mesh load_obj(const std::filesystem::path &path);

Mesh make_icosphere(const Vec3 &center, double radius, int subdivisions);
Mesh make_box(const Vec3 &lo, const Vec3 &hi);
/// Flat disk facing +normal, approximated by a triangle fan.
Mesh make_disk(const Vec3 &center, const Vec3 &normal, double radius, int segments = 64);

/// Rigid placement plus uniform scale: x -> R * (scale * x) + translation.
struct Placement {
    Vec3 translation;
    Vec3 rotation_euler_xyz_deg;
    double scale = 1.0;

    Mat3 rotation() const;
    Mesh apply(const Mesh &mesh) const;
};

struct Camera {
    Vec3 position;
    Mat3 orientation;  // columns: right, up, backward
    double vertical_fov = kPi / 3;
    int rows = 256;
    int cols = 384;

    static Camera look_at(const Vec3 &position, const Vec3 &target, const Vec3 &up, double fov_deg, int rows,
                          int cols);
    void validate() const;
    /// Primary ray through image position (row, col) measured in pixels from the top-left corner.
    Ray generate_ray(double row, double col) const;
    /// Image position of a world point, or nullopt if behind the camera.
    std::optional<std::pair<double, double>> project(const Vec3 &p) const;
};

struct ProxyPlane {
    Vec3 point;
    Vec3 normal{0, 0, 1};
    double half_extent_u = 10.0;
    double half_extent_v = 10.0;

    void validate() const;
    /// Intersection distance in (tmin, tmax), or +inf.
    double intersect(const Ray &ray, double tmin = 0.0) const;
};

enum class Surface { Object, Plane };

enum class HitSubset { ObjectOnly, ObjectAndPlane, PlaneOnly };

struct Hit {
    Vec3 position;
    Vec3 normal;            // shading normal, facing the incoming ray
    Vec3 geometric_normal;  // facing the incoming ray
    Surface surface = Surface::Object;
    double distance = 0.0;
};

struct Scene {
    std::optional<Mesh> object;
    MaterialParams material;
    Placement placement;
    ProxyPlane plane;
    Camera camera;
    std::string background_path;

    bool has_object() const { return object.has_value() && object->num_triangles() > 0; }
};

std::optional<Hit> ray_intersect(const Scene &scene, const Ray &ray, HitSubset subset, double tmin = 0.0);
/// True if anything in the subset blocks the ray before ray.tmax.
bool ray_occluded(const Scene &scene, const Ray &ray, HitSubset subset, double tmin = 0.0);

/// Loads a JSON scene description. Mesh and background paths are relative to the config file.
Scene load_scene(const std::filesystem::path &config_path);

}  // namespace dipir
