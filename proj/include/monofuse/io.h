#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "monofuse/bundle.h"
#include "monofuse/geometry.h"
#include "monofuse/synthetic.h"
#include "monofuse/tsdf.h"

namespace monofuse::io {

namespace fs = std::filesystem;

// DMAP raster: "DMAP", u32 LE width, u32 LE height, then width*height f32 LE
// values in row-major order. Non-positive values mark invalid pixels.
void write_dmap(const fs::path& path, const Image<double>& values, const Mask& valid);
/// Returns values and the validity mask (value > 0).
std::pair<Image<double>, Mask> read_dmap(const fs::path& path);

void write_depth_map(const fs::path& mean_path, const fs::path& std_path, const DepthMap& depth);
/// A missing std file yields std = default_std_fraction * mean.
DepthMap read_depth_map(const fs::path& mean_path, const fs::path& std_path, double default_std_fraction = 0.05);

void write_json(const fs::path& path, const nlohmann::json& value);
nlohmann::json read_json(const fs::path& path);

void write_camera(const fs::path& path, const CameraIntrinsics& camera);
CameraIntrinsics read_camera(const fs::path& path);

/// One line per frame: id tx ty tz qx qy qz qw (camera-to-world).
void write_trajectory(const fs::path& path, const std::vector<int>& ids, const std::vector<Pose>& poses);
std::pair<std::vector<int>, std::vector<Pose>> read_trajectory(const fs::path& path);

/// frame,u,v,depth
void write_sparse_depth(const fs::path& path, const std::vector<int>& ids, const std::vector<SparseDepth>& sparse);
/// Fills `sparse` (already sized per frame) from the table; ids index frames.
void read_sparse_depth(const fs::path& path, const std::vector<int>& ids, std::vector<SparseDepth>& sparse);

/// frame_a,u_a,v_a,frame_b,u_b,v_b
void write_matches(const fs::path& path, const FeatureMatchSet& matches);
FeatureMatchSet read_matches(const fs::path& path);

/// Binary 8-bit PPM (P6).
void write_ppm(const fs::path& path, const ColorImage& image);
ColorImage read_ppm(const fs::path& path);

/// Binary little-endian PLY with x,y,z (float), red,green,blue (uchar),
/// uncertainty (float) and triangle faces.
void write_ply(const fs::path& path, const TriangleMesh& mesh);
void write_ply(const fs::path& path, const PointCloud& cloud);
/// Reads ascii or binary little-endian PLY; polygons are fan-triangulated.
TriangleMesh read_ply(const fs::path& path);
/// Whitespace-separated "x y z" per line.
void write_xyz(const fs::path& path, const std::vector<Vec3>& points);
std::vector<Vec3> read_xyz(const fs::path& path);
/// Vertices of a .ply or .xyz file.
std::vector<Vec3> read_points(const fs::path& path);

void write_scene(const fs::path& path, const SceneSpec& scene);
SceneSpec read_scene(const fs::path& path);

// Bundle directory:
//   camera.json, trajectory.txt, depth/{id:06d}_mean.dmap, depth/{id:06d}_std.dmap,
//   sparse_depth.csv, matches.csv, color/{id:06d}.ppm (optional),
//   ground_truth/ (optional: trajectory.txt, depth/{id:06d}.dmap, scene.json)
void write_bundle(const fs::path& dir, const Bundle& bundle);
Bundle read_bundle(const fs::path& dir, double default_std_fraction = 0.05);
void write_ground_truth(const fs::path& bundle_dir, const GroundTruth& truth, const std::vector<int>& ids);
bool has_ground_truth(const fs::path& bundle_dir);
GroundTruth read_ground_truth(const fs::path& bundle_dir);

/// Binary dump of a fused volume.
void write_volume(const fs::path& path, const TsdfVolume& volume);
TsdfVolume read_volume(const fs::path& path);

std::string frame_name(int id);

}  // namespace monofuse::io
