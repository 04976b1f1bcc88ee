#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "monofuse/tsdf.h"
#include "test_util.h"

using namespace monofuse;
using testing::small_camera;

namespace {

template <typename F>
ErrorKind error_kind(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Validation;
}

VolumeConfig grid(int n, double voxel, const Vec3& origin) {
    VolumeConfig c;
    c.nx = c.ny = c.nz = n;
    c.voxel_size = voxel;
    c.origin = origin;
    c.delta_min = voxel;
    return c;
}

/// Sphere SDF written straight into the grid, positive outside.
TsdfVolume sphere_volume(int n, double voxel, const Vec3& center, double radius, double band) {
    TsdfVolume vol(grid(n, voxel, Vec3::Zero()));
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const double r = (vol.voxel_center(i, j, k) - center).norm();
                vol.set_voxel(vol.index(i, j, k), std::clamp((r - radius) / band, -1.0, 1.0), 0.1 * voxel,
                              Color(0.2f, 0.4f, 0.6f));
            }
    return vol;
}

/// Depth of a sphere seen from `pose`; pixels missing it are invalid.
DepthMap render_sphere(const CameraIntrinsics& k, const Pose& pose, const Vec3& center, double radius,
                       double rel_std, bool from_inside = false) {
    DepthMap d(k.width, k.height);
    const Vec3 o = pose.translation();
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u) {
            const Vec3 ray_cam = unproject(u, v, 1.0, k);
            const Vec3 dir = pose.rotation() * ray_cam;
            // |o + s·dir - c|² = R², s scales the unit-depth ray.
            const Vec3 oc = o - center;
            const double a = dir.squaredNorm(), b = 2.0 * dir.dot(oc), c = oc.squaredNorm() - radius * radius;
            const double disc = b * b - 4 * a * c;
            if (disc < 0) continue;
            const double s = (-b + (from_inside ? 1.0 : -1.0) * std::sqrt(disc)) / (2 * a);
            if (s > 0) d.set(u, v, s, rel_std * s);
        }
    return d;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 z = (target - eye).normalized();
    Vec3 x = Vec3::UnitY().cross(z);
    if (x.norm() < 1e-6) x = Vec3::UnitX();
    x.normalize();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r << x, y, z;
    return Pose(Eigen::Quaterniond(r), eye);
}

}  // namespace

TEST_CASE("blend ratio examples") {
    CHECK(blend_ratio(0.3, 0.3, 0.1, 0.8) == 0.5);
    CHECK(blend_ratio(0.3, 0.0, 0.1, 0.8) == 0.8);
    CHECK(blend_ratio(0.0, 0.3, 0.1, 0.8) == 0.1);
    CHECK(blend_ratio(0.0, 0.0, 0.1, 0.8) == 0.5);
    const auto f = fuse_observation(1.0, 0.2, 0.0, 0.2, 0.1, 0.8);
    CHECK(f.ratio == 0.5);
    CHECK(f.distance == 0.5);
    CHECK(f.uncertainty == doctest::Approx(0.2));
    const auto g = fuse_observation(1.0, 0.0, 0.0, 0.4, 0.1, 0.8);
    CHECK(g.distance == doctest::Approx(0.8));
    const auto h = fuse_observation(1.0, 0.4, 0.0, 0.0, 0.1, 0.8);
    CHECK(h.distance == doctest::Approx(0.1));
}

TEST_CASE("config validation") {
    VolumeConfig c;
    CHECK_NOTHROW(c.validate());
    c.c1 = 0.9;
    CHECK_THROWS_AS(c.validate(), Error);
    c = VolumeConfig{};
    c.voxel_size = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = VolumeConfig{};
    c.delta_min = -1.0;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("fusion rule properties over random sequences") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(-1.0, 1.0), sd(0.0, 1.0);
    for (int trial = 0; trial < 10000; ++trial) {
        double D = dist(rng), S = sd(rng) + 1e-3;
        double lo = D, hi = D;
        for (int n = 0; n < 10; ++n) {
            const double d = dist(rng), s = sd(rng);
            const double r = blend_ratio(s, S, 0.1, 0.8);
            REQUIRE(r >= 0.1);
            REQUIRE(r <= 0.8);
            const auto f = fuse_observation(D, S, d, s, 0.1, 0.8);
            lo = std::min(lo, d);
            hi = std::max(hi, d);
            D = f.distance;
            S = f.uncertainty;
            REQUIRE(D >= lo - 1e-15);
            REQUIRE(D <= hi + 1e-15);
        }
    }
    for (int trial = 0; trial < 10000; ++trial) {
        const double d0 = dist(rng), d_new = dist(rng), s_new = sd(rng);
        double D = d0, S = sd(rng) + 1e-3;
        for (int n = 1; n <= 20; ++n) {
            const auto f = fuse_observation(D, S, d_new, s_new, 0.1, 0.8);
            D = f.distance;
            S = f.uncertainty;
            REQUIRE(std::abs(D - d_new) <= std::pow(0.8, n) * std::abs(d0 - d_new) + 1e-15);
        }
    }
}

TEST_CASE("integration of a fronto-parallel plane") {
    const auto k = small_camera(32, 32, 30.0);
    const double z = 1.0;
    const auto depth = testing::constant_depth(k, z, 0.01);
    // Voxel size 0.02 with a voxel row exactly on z = 1.
    TsdfVolume vol(grid(20, 0.02, Vec3(-0.19, -0.19, 0.8)));
    integrate_frame(vol, depth, nullptr, Pose::identity(), k);
    CHECK(vol.observed_count() > 0);
    const auto& c = vol.config();
    for (int kk = 0; kk < c.nz; ++kk)
        for (int j = 0; j < c.ny; ++j)
            for (int i = 0; i < c.nx; ++i) {
                const size_t idx = vol.index(i, j, kk);
                if (!vol.observed(idx)) continue;
                CHECK(vol.distance(idx) >= -1.0);
                CHECK(vol.distance(idx) <= 1.0);
                CHECK(vol.uncertainty(idx) > 0.0);
                CHECK(vol.color(idx).isApprox(Color(0.5f, 0.5f, 0.5f)));
                const double sdf = z - vol.voxel_center(i, j, kk).z();
                CHECK(sdf >= -0.02 - 1e-12);
                if (kk == 10) CHECK(std::abs(vol.distance(idx)) < 1e-12);
            }
    CHECK(vol.observed(vol.index(10, 10, 10)));
    CHECK_FALSE(vol.observed(vol.index(10, 10, 12)));  // behind the band

    // Re-fusing the same map leaves D unchanged where d == D.
    TsdfVolume twice = vol;
    integrate_frame(twice, depth, nullptr, Pose::identity(), k);
    for (size_t i = 0; i < c.voxel_count(); ++i) {
        CHECK(twice.observed(i) == vol.observed(i));
        if (vol.observed(i)) CHECK(std::abs(twice.distance(i) - vol.distance(i)) < 1e-12);
    }

    ColorImage red(k.width, k.height, Color(1.0f, 0.0f, 0.0f));
    integrate_frame(twice, depth, &red, Pose::identity(), k);
    CHECK(twice.color(vol.index(10, 10, 10)).x() > 0.5f);

    const auto wrong = testing::constant_depth(small_camera(8, 8), z, 0.01);
    CHECK(error_kind([&] { integrate_frame(vol, wrong, nullptr, Pose::identity(), k); }) == ErrorKind::Dimension);
}

TEST_CASE("integration is deterministic") {
    const auto k = small_camera(40, 30, 35.0);
    const Vec3 center(0.5, 0.5, 0.5);
    TsdfVolume a(grid(32, 1.0 / 32, Vec3::Zero())), b = a;
    for (int f = 0; f < 3; ++f) {
        const Pose p = look_at(center + Vec3(0.3 * f, 0.1, -1.2), center);
        const auto d = render_sphere(k, p, center, 0.3, 0.01);
        integrate_frame(a, d, nullptr, p, k);
        integrate_frame(b, d, nullptr, p, k);
    }
    CHECK(a == b);
}

TEST_CASE("raycasting an analytic sphere") {
    const int n = 48;
    const Vec3 center(23.5, 23.5, 23.5);
    const double radius = 10.0;
    const auto vol = sphere_volume(n, 1.0, center, radius, 3.0);
    const auto k = small_camera(33, 33, 40.0);
    const double L = 20.0;
    const Pose pose = look_at(center - Vec3(0, 0, L), center);
    // Camera outside the grid: the ray enters the box at z = -0.5.
    const auto sim = simulate_depth(vol, pose, k);
    REQUIRE(sim.valid(16, 16));
    CHECK(std::abs(sim.depth(16, 16) - (L - radius)) <= 0.25);

    const Pose away = look_at(center - Vec3(0, 0, L), center - Vec3(0, 0, 2 * L));
    const auto none = simulate_depth(vol, away, k);
    CHECK(none.valid_count() == 0);

    TsdfVolume empty(grid(8, 1.0, Vec3::Zero()));
    CHECK(error_kind([&] { simulate_depth(empty, pose, k); }) == ErrorKind::EmptyReconstruction);
}

TEST_CASE("simulate_depth round-trip on noise-free fusion") {
    const auto k = small_camera(64, 48, 55.0);
    const Vec3 center(0.5, 0.5, 0.5);
    const double voxel = 1.0 / 64;
    TsdfVolume vol(grid(64, voxel, Vec3::Zero()));
    // Camera inside a spherical cavity: every pixel sees the wall, many at
    // oblique angles.
    const Pose p = look_at(center + Vec3(0.12, -0.05, -0.2), center + Vec3(0.3, 0.1, 0.3));
    const auto d = render_sphere(k, p, center, 0.4, 0.005, true);
    integrate_frame(vol, d, nullptr, p, k);
    const auto sim = simulate_depth(vol, p, k);
    size_t good = 0, total = 0;
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u) {
            if (!d.is_valid(u, v)) continue;
            ++total;
            if (sim.valid(u, v) && std::abs(sim.depth(u, v) - d.mean(u, v)) <= voxel) ++good;
        }
    REQUIRE(total > 500);
    CHECK(double(good) >= 0.95 * double(total));
}

namespace {

struct MeshTopology {
    long vertices = 0;
    long edges = 0;
    long faces = 0;
    bool manifold = true;
};

MeshTopology topology(const TriangleMesh& m) {
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& t : m.triangles)
        for (int e = 0; e < 3; ++e) {
            int a = t[e], b = t[(e + 1) % 3];
            if (a > b) std::swap(a, b);
            ++edge_count[{a, b}];
        }
    MeshTopology out;
    out.vertices = long(m.vertices.size());
    out.faces = long(m.triangles.size());
    out.edges = long(edge_count.size());
    for (const auto& [e, c] : edge_count)
        if (c != 2) out.manifold = false;
    return out;
}

}  // namespace

TEST_CASE("marching cubes on an analytic sphere") {
    const Vec3 center(31.5, 31.5, 31.5);
    const double radius = 16.0;
    const auto vol = sphere_volume(64, 1.0, center, radius, 3.0);
    const auto mesh = extract_mesh(vol);
    CHECK_NOTHROW(mesh.validate());
    REQUIRE(mesh.vertices.size() > 1000);
    double worst = 0.0;
    for (const auto& v : mesh.vertices) worst = std::max(worst, std::abs((v - center).norm() - radius));
    CHECK(worst <= 0.5);
    const auto t = topology(mesh);
    CHECK(t.manifold);
    CHECK(t.vertices - t.edges + t.faces == 2);
    // Normals face positive distance, i.e. away from the sphere center.
    int inward = 0;
    for (const auto& tri : mesh.triangles) {
        const Vec3 a = mesh.vertices[tri[0]], b = mesh.vertices[tri[1]], c = mesh.vertices[tri[2]];
        if ((b - a).cross(c - a).dot((a + b + c) / 3.0 - center) <= 0) ++inward;
    }
    CHECK(inward == 0);
    CHECK(mesh.colors.size() == mesh.vertices.size());
    CHECK(mesh.uncertainty.size() == mesh.vertices.size());
    CHECK(mesh.colors[0].isApprox(Color(0.2f, 0.4f, 0.6f)));
    CHECK(mesh.uncertainty[0] == doctest::Approx(0.1));

    const auto cloud = mesh_to_pointcloud(mesh, 1000, 3);
    CHECK(cloud.size() >= 900);
    CHECK(cloud.size() <= 1100);
    for (const auto& p : cloud.points) CHECK(std::abs((p - center).norm() - radius) <= 0.5);
}

TEST_CASE("marching cubes on a hollow shell and a torus keeps topology") {
    // Shell between radii 8 and 16: two closed surfaces, χ = 4.
    const Vec3 c(20, 20, 20);
    TsdfVolume shell(grid(41, 1.0, Vec3::Zero()));
    TsdfVolume torus(grid(41, 1.0, Vec3::Zero()));
    for (int k = 0; k < 41; ++k)
        for (int j = 0; j < 41; ++j)
            for (int i = 0; i < 41; ++i) {
                const Vec3 x = shell.voxel_center(i, j, k) - c + Vec3(0.31, 0.17, 0.23);
                const double r = x.norm();
                const double s = std::max(r - 16.0, 8.0 - r);
                shell.set_voxel(shell.index(i, j, k), std::clamp(s / 3.0, -1.0, 1.0), 1.0, Color::Zero());
                const double ring = std::hypot(std::hypot(x.x(), x.y()) - 11.0, x.z()) - 4.5;
                torus.set_voxel(torus.index(i, j, k), std::clamp(ring / 3.0, -1.0, 1.0), 1.0, Color::Zero());
            }
    const auto ts = topology(extract_mesh(shell));
    CHECK(ts.manifold);
    CHECK(ts.vertices - ts.edges + ts.faces == 4);
    const auto tt = topology(extract_mesh(torus));
    CHECK(tt.manifold);
    CHECK(tt.vertices - tt.edges + tt.faces == 0);
}

TEST_CASE("marching cubes single corner and no surface") {
    TsdfVolume vol(grid(2, 1.0, Vec3::Zero()));
    for (size_t i = 0; i < 8; ++i) vol.set_voxel(i, 1.0, 0.1, Color::Ones());
    CHECK(error_kind([&] { extract_mesh(vol); }) == ErrorKind::NoSurface);
    vol.set_voxel(vol.index(0, 0, 0), -1.0, 0.1, Color::Ones());
    const auto mesh = extract_mesh(vol);
    REQUIRE(mesh.triangles.size() == 1);
    std::set<std::tuple<double, double, double>> got;
    for (const auto& v : mesh.vertices) got.insert({v.x(), v.y(), v.z()});
    const std::set<std::tuple<double, double, double>> want = {{0.5, 0, 0}, {0, 0.5, 0}, {0, 0, 0.5}};
    CHECK(got == want);
    const auto& t = mesh.triangles[0];
    const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    CHECK(n.dot(Vec3(1, 1, 1)) > 0);

    // Cubes with an unobserved corner are skipped.
    vol.clear_voxel(vol.index(1, 1, 1));
    CHECK(error_kind([&] { extract_mesh(vol); }) == ErrorKind::NoSurface);
}

TEST_CASE("point cloud sampling") {
    TriangleMesh tri;
    tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    tri.triangles = {Eigen::Vector3i(0, 1, 2)};
    const auto one = mesh_to_pointcloud(tri, 1, 0);
    REQUIRE(one.size() == 1);
    const Vec3 p = one.points[0];
    CHECK(p.z() == 0.0);
    CHECK(p.x() >= 0.0);
    CHECK(p.y() >= 0.0);
    CHECK(p.x() + p.y() <= 1.0 + 1e-12);

    const auto a = mesh_to_pointcloud(tri, 1000, 9);
    CHECK(a.size() >= 900);
    CHECK(a.size() <= 1100);
    const auto b = mesh_to_pointcloud(tri, 1000, 9);
    CHECK(a.points == b.points);

    CHECK_THROWS_AS(mesh_to_pointcloud(TriangleMesh{}, 10, 0), Error);
}

TEST_CASE("fit_volume encloses the back-projected depth") {
    const auto k = small_camera(40, 30, 35.0);
    const Vec3 center(0.5, 0.5, 0.5);
    std::vector<DepthMap> depths;
    std::vector<Pose> poses;
    for (int f = 0; f < 2; ++f) {
        poses.push_back(look_at(center + Vec3(0.4 * f, 0.0, -1.2), center));
        depths.push_back(render_sphere(k, poses.back(), center, 0.3, 0.01));
    }
    VolumeFit fit;
    fit.resolution = 32;
    const auto cfg = fit_volume(VolumeConfig{}, fit, depths, poses, k);
    CHECK(cfg.nx <= 32);
    CHECK(cfg.ny <= 32);
    CHECK(cfg.nz <= 32);
    CHECK(std::max({cfg.nx, cfg.ny, cfg.nz}) == 32);
    const Vec3 hi = cfg.origin + cfg.voxel_size * Vec3(cfg.nx - 1, cfg.ny - 1, cfg.nz - 1);
    for (size_t f = 0; f < depths.size(); ++f)
        for (int v = 0; v < k.height; ++v)
            for (int u = 0; u < k.width; ++u) {
                if (!depths[f].is_valid(u, v)) continue;
                const Vec3 x = poses[f] * unproject(u, v, depths[f].mean(u, v), k);
                CHECK((x.array() >= cfg.origin.array()).all());
                CHECK((x.array() <= hi.array()).all());
            }
    CHECK(cfg.delta_min == doctest::Approx(cfg.voxel_size));
}
