#include "monofuse/io.h"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "monofuse/error.h"

namespace monofuse::io {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
    throw Error(ErrorKind::Io, path.string() + ": " + what);
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) fail(path, "cannot open for writing");
    return out;
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) fail(path, "cannot open for reading");
    return in;
}

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, std::uint32_t(v));
    put_u32(out, std::uint32_t(v >> 32));
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) fail(path, "truncated file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& in, const fs::path& path) {
    const std::uint64_t lo = get_u32(in, path);
    return lo | std::uint64_t(get_u32(in, path)) << 32;
}

float get_f32(std::istream& in, const fs::path& path) { return std::bit_cast<float>(get_u32(in, path)); }
double get_f64(std::istream& in, const fs::path& path) { return std::bit_cast<double>(get_u64(in, path)); }

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

double parse_double(const std::string& s, const fs::path& path, size_t line) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (s.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(path, "line " + std::to_string(line) + ": bad number '" + s + "'");
    }
}

int parse_int(const std::string& s, const fs::path& path, size_t line) {
    const double v = parse_double(s, path, line);
    if (v != std::floor(v)) fail(path, "line " + std::to_string(line) + ": expected an integer");
    return static_cast<int>(v);
}

std::vector<std::vector<std::string>> read_table(const fs::path& path, const std::string& header) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) fail(path, "empty table");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) fail(path, "expected header '" + header + "'");
    const size_t columns = split_csv(header).size();
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto row = split_csv(line);
        if (row.size() != columns) fail(path, "line " + std::to_string(rows.size() + 2) + ": wrong column count");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::uint8_t to_byte(float c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f)); }

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

}  // namespace

std::string frame_name(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", id);
    return buf;
}

void write_dmap(const fs::path& path, const Image<double>& values, const Mask& valid) {
    if (!values.same_shape(valid)) throw Error(ErrorKind::Dimension, "raster and mask differ in size");
    auto out = open_out(path, true);
    out.write("DMAP", 4);
    put_u32(out, std::uint32_t(values.width));
    put_u32(out, std::uint32_t(values.height));
    for (size_t i = 0; i < values.size(); ++i) put_f32(out, valid.data[i] ? float(values.data[i]) : 0.0f);
    if (!out) fail(path, "write failed");
}

std::pair<Image<double>, Mask> read_dmap(const fs::path& path) {
    auto in = open_in(path, true);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "DMAP", 4) != 0) fail(path, "not a DMAP file");
    const std::uint32_t w = get_u32(in, path), h = get_u32(in, path);
    if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15) fail(path, "implausible raster size");
    Image<double> values(int(w), int(h), 0.0);
    Mask valid(int(w), int(h), 0);
    for (size_t i = 0; i < values.size(); ++i) {
        const float f = get_f32(in, path);
        if (f > 0.0f && std::isfinite(f)) {
            values.data[i] = f;
            valid.data[i] = 1;
        }
    }
    return {std::move(values), std::move(valid)};
}

void write_depth_map(const fs::path& mean_path, const fs::path& std_path, const DepthMap& depth) {
    write_dmap(mean_path, depth.mean, depth.valid);
    write_dmap(std_path, depth.std, depth.valid);
}

DepthMap read_depth_map(const fs::path& mean_path, const fs::path& std_path, double default_std_fraction) {
    auto [mean, valid] = read_dmap(mean_path);
    DepthMap d(mean.width, mean.height);
    std::optional<std::pair<Image<double>, Mask>> std_raster;
    if (fs::exists(std_path)) {
        std_raster = read_dmap(std_path);
        if (!std_raster->first.same_shape(mean)) fail(std_path, "std raster size differs from mean");
    }
    for (size_t i = 0; i < mean.size(); ++i) {
        if (!valid.data[i]) continue;
        double s = default_std_fraction * mean.data[i];
        if (std_raster) {
            if (!std_raster->second.data[i]) continue;  // no usable std: treat pixel as invalid
            s = std_raster->first.data[i];
        }
        d.mean.data[i] = mean.data[i];
        d.std.data[i] = s;
        d.valid.data[i] = 1;
    }
    return d;
}

void write_json(const fs::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
    auto in = open_in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(path, e.what());
    }
}

void write_camera(const fs::path& path, const CameraIntrinsics& k) {
    json j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

CameraIntrinsics read_camera(const fs::path& path) {
    auto in = open_in(path);
    CameraIntrinsics k;
    try {
        const json j = json::parse(in);
        k.fx = j.at("fx").get<double>();
        k.fy = j.at("fy").get<double>();
        k.cx = j.at("cx").get<double>();
        k.cy = j.at("cy").get<double>();
        k.width = j.at("width").get<int>();
        k.height = j.at("height").get<int>();
    } catch (const json::exception& e) {
        fail(path, e.what());
    }
    k.validate();
    return k;
}

void write_trajectory(const fs::path& path, const std::vector<int>& ids, const std::vector<Pose>& poses) {
    if (ids.size() != poses.size()) throw Error(ErrorKind::Dimension, "id and pose counts differ");
    auto out = open_out(path);
    for (size_t i = 0; i < ids.size(); ++i) {
        const auto& t = poses[i].translation();
        const auto& q = poses[i].quaternion();
        out << ids[i];
        for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) out << ' ' << format_double(v);
        out << '\n';
    }
    if (!out) fail(path, "write failed");
}

std::pair<std::vector<int>, std::vector<Pose>> read_trajectory(const fs::path& path) {
    auto in = open_in(path);
    std::vector<int> ids;
    std::vector<Pose> poses;
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        std::stringstream ss(line);
        std::vector<std::string> tok;
        std::string s;
        while (ss >> s) tok.push_back(s);
        if (tok.size() != 8) fail(path, "line " + std::to_string(n) + ": expected 8 fields");
        double v[7];
        for (int i = 0; i < 7; ++i) v[i] = parse_double(tok[size_t(i + 1)], path, n);
        Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
        const double norm = q.norm();
        if (!(std::abs(norm - 1.0) < 1e-3)) fail(path, "line " + std::to_string(n) + ": quaternion is not unit length");
        ids.push_back(parse_int(tok[0], path, n));
        poses.emplace_back(q, Vec3(v[0], v[1], v[2]));
    }
    return {ids, poses};
}

void write_sparse_depth(const fs::path& path, const std::vector<int>& ids, const std::vector<SparseDepth>& sparse) {
    auto out = open_out(path);
    out << "frame,u,v,depth\n";
    for (size_t f = 0; f < ids.size(); ++f) {
        const auto& s = sparse[f];
        for (int v = 0; v < s.mask.height; ++v)
            for (int u = 0; u < s.mask.width; ++u)
                if (s.mask(u, v)) out << ids[f] << ',' << u << ',' << v << ',' << format_double(s.values(u, v)) << '\n';
    }
    if (!out) fail(path, "write failed");
}

void read_sparse_depth(const fs::path& path, const std::vector<int>& ids, std::vector<SparseDepth>& sparse) {
    std::map<int, size_t> index;
    for (size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    const auto rows = read_table(path, "frame,u,v,depth");
    for (size_t r = 0; r < rows.size(); ++r) {
        const int id = parse_int(rows[r][0], path, r + 2);
        const auto it = index.find(id);
        if (it == index.end()) fail(path, "line " + std::to_string(r + 2) + ": unknown frame " + std::to_string(id));
        auto& s = sparse[it->second];
        const int u = parse_int(rows[r][1], path, r + 2), v = parse_int(rows[r][2], path, r + 2);
        const double d = parse_double(rows[r][3], path, r + 2);
        if (u < 0 || v < 0 || u >= s.mask.width || v >= s.mask.height) fail(path, "sparse pixel outside the image");
        if (!(d > 0.0)) fail(path, "sparse depth must be positive");
        s.mask(u, v) = 1;
        s.values(u, v) = d;
    }
}

void write_matches(const fs::path& path, const FeatureMatchSet& matches) {
    auto out = open_out(path);
    out << "frame_a,u_a,v_a,frame_b,u_b,v_b\n";
    for (const auto& m : matches) {
        out << m.frame_a << ',' << format_double(m.pixel_a.x()) << ',' << format_double(m.pixel_a.y()) << ','
            << m.frame_b << ',' << format_double(m.pixel_b.x()) << ',' << format_double(m.pixel_b.y()) << '\n';
    }
    if (!out) fail(path, "write failed");
}

FeatureMatchSet read_matches(const fs::path& path) {
    FeatureMatchSet out;
    const auto rows = read_table(path, "frame_a,u_a,v_a,frame_b,u_b,v_b");
    for (size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        FeatureMatch m;
        m.frame_a = parse_int(row[0], path, r + 2);
        m.pixel_a = Vec2(parse_double(row[1], path, r + 2), parse_double(row[2], path, r + 2));
        m.frame_b = parse_int(row[3], path, r + 2);
        m.pixel_b = Vec2(parse_double(row[4], path, r + 2), parse_double(row[5], path, r + 2));
        out.push_back(m);
    }
    return out;
}

void write_ppm(const fs::path& path, const ColorImage& image) {
    auto out = open_out(path, true);
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    for (const auto& c : image.data) {
        const char px[3] = {char(to_byte(c.x())), char(to_byte(c.y())), char(to_byte(c.z()))};
        out.write(px, 3);
    }
    if (!out) fail(path, "write failed");
}

ColorImage read_ppm(const fs::path& path) {
    auto in = open_in(path, true);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic;
    auto skip_comments = [&] {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string line;
            std::getline(in, line);
            in >> std::ws;
        }
    };
    skip_comments();
    in >> w;
    skip_comments();
    in >> h;
    skip_comments();
    in >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) fail(path, "only 8-bit binary PPM (P6) is supported");
    in.get();
    ColorImage img(w, h);
    std::vector<unsigned char> buf(size_t(w) * size_t(h) * 3);
    if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()))) fail(path, "truncated image");
    for (size_t i = 0; i < img.size(); ++i)
        img.data[i] = Color(buf[3 * i] / 255.0f, buf[3 * i + 1] / 255.0f, buf[3 * i + 2] / 255.0f);
    return img;
}

namespace {

void write_ply_impl(const fs::path& path, const std::vector<Vec3>& vertices, const std::vector<Color>& colors,
                    const std::vector<double>& uncertainty, const std::vector<Eigen::Vector3i>* faces) {
    auto out = open_out(path, true);
    out << "ply\nformat binary_little_endian 1.0\ncomment monofuse\n"
        << "element vertex " << vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "property float uncertainty\n";
    if (faces) out << "element face " << faces->size() << "\nproperty list uchar int vertex_indices\n";
    out << "end_header\n";
    const Color gray(0.5f, 0.5f, 0.5f);
    for (size_t i = 0; i < vertices.size(); ++i) {
        for (int a = 0; a < 3; ++a) put_f32(out, float(vertices[i][a]));
        const Color& c = i < colors.size() ? colors[i] : gray;
        const char rgb[3] = {char(to_byte(c.x())), char(to_byte(c.y())), char(to_byte(c.z()))};
        out.write(rgb, 3);
        put_f32(out, i < uncertainty.size() ? float(uncertainty[i]) : 0.0f);
    }
    if (faces) {
        for (const auto& t : *faces) {
            out.put(char(3));
            for (int a = 0; a < 3; ++a) put_u32(out, std::uint32_t(t[a]));
        }
    }
    if (!out) fail(path, "write failed");
}

struct PlyProperty {
    std::string name;
    std::string type;
    bool list = false;
    std::string count_type;
};

struct PlyElement {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> properties;
};

int type_size(const std::string& t) {
    static const std::map<std::string, int> sizes = {
        {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},   {"ushort", 2},
        {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},   {"uint32", 4},
        {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
    const auto it = sizes.find(t);
    return it == sizes.end() ? 0 : it->second;
}

double read_binary_value(std::istream& in, const std::string& t, const fs::path& path) {
    unsigned char b[8];
    const int n = type_size(t);
    if (!in.read(reinterpret_cast<char*>(b), n)) fail(path, "truncated PLY body");
    std::uint64_t raw = 0;
    for (int i = n - 1; i >= 0; --i) raw = raw << 8 | b[i];
    if (t == "char" || t == "int8") return double(std::int8_t(raw));
    if (t == "uchar" || t == "uint8") return double(std::uint8_t(raw));
    if (t == "short" || t == "int16") return double(std::int16_t(raw));
    if (t == "ushort" || t == "uint16") return double(std::uint16_t(raw));
    if (t == "int" || t == "int32") return double(std::int32_t(raw));
    if (t == "uint" || t == "uint32") return double(std::uint32_t(raw));
    if (t == "float" || t == "float32") return double(std::bit_cast<float>(std::uint32_t(raw)));
    return std::bit_cast<double>(raw);
}

}  // namespace

void write_ply(const fs::path& path, const TriangleMesh& mesh) {
    mesh.validate();
    write_ply_impl(path, mesh.vertices, mesh.colors, mesh.uncertainty, &mesh.triangles);
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
    write_ply_impl(path, cloud.points, cloud.colors, cloud.uncertainty, nullptr);
}

TriangleMesh read_ply(const fs::path& path) {
    auto in = open_in(path, true);
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply") fail(path, "not a PLY file");
    std::string format;
    std::vector<PlyElement> elements;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::stringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "format") {
            ss >> format;
        } else if (key == "element") {
            PlyElement e;
            ss >> e.name >> e.count;
            elements.push_back(e);
        } else if (key == "property") {
            if (elements.empty()) fail(path, "property before element");
            PlyProperty p;
            ss >> p.type;
            if (p.type == "list") {
                p.list = true;
                ss >> p.count_type >> p.type;
            }
            ss >> p.name;
            if (type_size(p.type) == 0 || (p.list && type_size(p.count_type) == 0)) {
                fail(path, "unsupported property type in '" + line + "'");
            }
            elements.back().properties.push_back(p);
        } else if (key == "end_header") {
            break;
        }
    }
    if (format != "ascii" && format != "binary_little_endian") fail(path, "unsupported PLY format '" + format + "'");
    const bool ascii = format == "ascii";
    auto value = [&](const std::string& type) {
        if (!ascii) return read_binary_value(in, type, path);
        double v;
        if (!(in >> v)) fail(path, "truncated PLY body");
        return v;
    };

    TriangleMesh mesh;
    for (const auto& e : elements) {
        const bool is_vertex = e.name == "vertex";
        const bool is_face = e.name == "face";
        bool has_color = false, has_unc = false;
        for (const auto& p : e.properties) {
            has_color |= p.name == "red";
            has_unc |= p.name == "uncertainty";
        }
        for (size_t i = 0; i < e.count; ++i) {
            Vec3 pos = Vec3::Zero();
            Color color(0.5f, 0.5f, 0.5f);
            double unc = 0.0;
            for (const auto& p : e.properties) {
                if (p.list) {
                    const auto n = static_cast<long>(value(p.count_type));
                    std::vector<int> idx;
                    for (long k = 0; k < n; ++k) idx.push_back(static_cast<int>(value(p.type)));
                    if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index")) {
                        for (size_t k = 1; k + 1 < idx.size(); ++k)
                            mesh.triangles.emplace_back(idx[0], idx[k], idx[k + 1]);
                    }
                    continue;
                }
                const double v = value(p.type);
                if (!is_vertex) continue;
                if (p.name == "x") pos.x() = v;
                else if (p.name == "y") pos.y() = v;
                else if (p.name == "z") pos.z() = v;
                else if (p.name == "red") color.x() = float(v / 255.0);
                else if (p.name == "green") color.y() = float(v / 255.0);
                else if (p.name == "blue") color.z() = float(v / 255.0);
                else if (p.name == "uncertainty") unc = v;
            }
            if (is_vertex) {
                mesh.vertices.push_back(pos);
                if (has_color) mesh.colors.push_back(color);
                if (has_unc) mesh.uncertainty.push_back(unc);
            }
        }
    }
    mesh.validate();
    return mesh;
}

void write_xyz(const fs::path& path, const std::vector<Vec3>& points) {
    auto out = open_out(path);
    for (const auto& p : points)
        out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
    if (!out) fail(path, "write failed");
}

std::vector<Vec3> read_xyz(const fs::path& path) {
    auto in = open_in(path);
    std::vector<Vec3> out;
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        std::stringstream ss(line);
        double x, y, z;
        if (!(ss >> x >> y >> z)) fail(path, "line " + std::to_string(n) + ": expected x y z");
        out.emplace_back(x, y, z);
    }
    return out;
}

std::vector<Vec3> read_points(const fs::path& path) {
    if (path.extension() == ".xyz") return read_xyz(path);
    if (path.extension() == ".ply") return read_ply(path).vertices;
    fail(path, "point sets must be .ply or .xyz");
}

void write_scene(const fs::path& path, const SceneSpec& scene) {
    json prims = json::array();
    for (const auto& p : scene.primitives) {
        json j = {{"kind", p.kind == Primitive::Kind::Sphere ? "sphere" : "capsule"},
                  {"a", vec_json(p.a)},
                  {"radius", p.radius}};
        if (p.kind == Primitive::Kind::Capsule) j["b"] = vec_json(p.b);
        prims.push_back(j);
    }
    json axis = json::array();
    for (const auto& a : scene.axis) axis.push_back(vec_json(a));
    const json j = {{"primitives", prims}, {"cavity", scene.cavity}, {"blend", scene.blend}, {"axis", axis}, {"seed", scene.seed}};
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

SceneSpec read_scene(const fs::path& path) {
    auto in = open_in(path);
    SceneSpec s;
    try {
        const json j = json::parse(in);
        for (const auto& p : j.at("primitives")) {
            Primitive prim;
            const auto kind = p.at("kind").get<std::string>();
            if (kind == "sphere") prim.kind = Primitive::Kind::Sphere;
            else if (kind == "capsule") prim.kind = Primitive::Kind::Capsule;
            else fail(path, "unknown primitive kind '" + kind + "'");
            prim.a = json_vec(p.at("a"));
            if (prim.kind == Primitive::Kind::Capsule) prim.b = json_vec(p.at("b"));
            prim.radius = p.at("radius").get<double>();
            s.primitives.push_back(prim);
        }
        s.cavity = j.at("cavity").get<bool>();
        s.blend = j.value("blend", 0.0);
        for (const auto& a : j.at("axis")) s.axis.push_back(json_vec(a));
        s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        fail(path, e.what());
    }
    s.validate();
    return s;
}

void write_bundle(const fs::path& dir, const Bundle& bundle) {
    bundle.validate();
    fs::create_directories(dir / "depth");
    write_camera(dir / "camera.json", bundle.camera);
    std::vector<int> ids;
    std::vector<SparseDepth> sparse;
    for (const auto& f : bundle.frames) {
        ids.push_back(f.id);
        sparse.push_back(f.sparse);
        const std::string name = frame_name(f.id);
        write_depth_map(dir / "depth" / (name + "_mean.dmap"), dir / "depth" / (name + "_std.dmap"), f.depth);
        if (f.color) write_ppm(dir / "color" / (name + ".ppm"), *f.color);
    }
    write_trajectory(dir / "trajectory.txt", ids, bundle.poses());
    write_sparse_depth(dir / "sparse_depth.csv", ids, sparse);
    write_matches(dir / "matches.csv", bundle.matches);
}

Bundle read_bundle(const fs::path& dir, double default_std_fraction) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, dir.string() + ": not a bundle directory");
    Bundle b;
    b.camera = read_camera(dir / "camera.json");
    auto [ids, poses] = read_trajectory(dir / "trajectory.txt");
    if (ids.empty()) throw Error(ErrorKind::Validation, "trajectory is empty");
    std::vector<SparseDepth> sparse(ids.size(), SparseDepth(b.camera.width, b.camera.height));
    if (fs::exists(dir / "sparse_depth.csv")) read_sparse_depth(dir / "sparse_depth.csv", ids, sparse);
    for (size_t i = 0; i < ids.size(); ++i) {
        FrameBundle f;
        f.id = ids[i];
        f.pose = poses[i];
        const std::string name = frame_name(f.id);
        const fs::path mean = dir / "depth" / (name + "_mean.dmap");
        if (!fs::exists(mean)) fail(mean, "missing mean depth raster for frame " + std::to_string(f.id));
        f.depth = read_depth_map(mean, dir / "depth" / (name + "_std.dmap"), default_std_fraction);
        f.sparse = std::move(sparse[i]);
        const fs::path color = dir / "color" / (name + ".ppm");
        if (fs::exists(color)) f.color = read_ppm(color);
        b.frames.push_back(std::move(f));
    }
    if (fs::exists(dir / "matches.csv")) b.matches = read_matches(dir / "matches.csv");
    b.validate();
    return b;
}

void write_ground_truth(const fs::path& bundle_dir, const GroundTruth& truth, const std::vector<int>& ids) {
    const fs::path gt = bundle_dir / "ground_truth";
    fs::create_directories(gt / "depth");
    write_trajectory(gt / "trajectory.txt", ids, truth.poses);
    for (size_t i = 0; i < ids.size() && i < truth.depths.size(); ++i) {
        write_dmap(gt / "depth" / (frame_name(ids[i]) + ".dmap"), truth.depths[i].mean, truth.depths[i].valid);
    }
    write_scene(gt / "scene.json", truth.scene);
}

bool has_ground_truth(const fs::path& bundle_dir) {
    return fs::exists(bundle_dir / "ground_truth" / "trajectory.txt");
}

GroundTruth read_ground_truth(const fs::path& bundle_dir) {
    const fs::path gt = bundle_dir / "ground_truth";
    GroundTruth t;
    auto [ids, poses] = read_trajectory(gt / "trajectory.txt");
    t.poses = std::move(poses);
    for (int id : ids) {
        const fs::path p = gt / "depth" / (frame_name(id) + ".dmap");
        if (!fs::exists(p)) continue;
        auto [mean, valid] = read_dmap(p);
        DepthMap d(mean.width, mean.height);
        d.mean = std::move(mean);
        d.valid = std::move(valid);
        t.depths.push_back(std::move(d));
    }
    if (fs::exists(gt / "scene.json")) t.scene = read_scene(gt / "scene.json");
    return t;
}

void write_volume(const fs::path& path, const TsdfVolume& volume) {
    const auto& c = volume.config();
    auto out = open_out(path, true);
    out.write("TSDF", 4);
    put_u32(out, 1);
    put_u32(out, std::uint32_t(c.nx));
    put_u32(out, std::uint32_t(c.ny));
    put_u32(out, std::uint32_t(c.nz));
    for (double v : {c.voxel_size, c.origin.x(), c.origin.y(), c.origin.z(), c.c1, c.c2, c.sigma_scale, c.delta_min})
        put_f64(out, v);
    for (size_t i = 0; i < c.voxel_count(); ++i) {
        out.put(char(volume.observed(i) ? 1 : 0));
        if (!volume.observed(i)) continue;
        put_f64(out, volume.distance(i));
        put_f64(out, volume.uncertainty(i));
        for (int a = 0; a < 3; ++a) put_f32(out, volume.color(i)[a]);
    }
    if (!out) fail(path, "write failed");
}

TsdfVolume read_volume(const fs::path& path) {
    auto in = open_in(path, true);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TSDF", 4) != 0) fail(path, "not a volume file");
    if (get_u32(in, path) != 1) fail(path, "unsupported volume version");
    VolumeConfig c;
    c.nx = int(get_u32(in, path));
    c.ny = int(get_u32(in, path));
    c.nz = int(get_u32(in, path));
    c.voxel_size = get_f64(in, path);
    const double ox = get_f64(in, path), oy = get_f64(in, path), oz = get_f64(in, path);
    c.origin = Vec3(ox, oy, oz);
    c.c1 = get_f64(in, path);
    c.c2 = get_f64(in, path);
    c.sigma_scale = get_f64(in, path);
    c.delta_min = get_f64(in, path);
    c.validate();
    TsdfVolume vol(c);
    for (size_t i = 0; i < c.voxel_count(); ++i) {
        const int flag = in.get();
        if (flag == EOF) fail(path, "truncated volume");
        if (!flag) continue;
        const double d = get_f64(in, path);
        const double s = get_f64(in, path);
        Color col;
        for (int a = 0; a < 3; ++a) col[a] = get_f32(in, path);
        vol.set_voxel(i, d, s, col);
    }
    return vol;
}

}  // namespace monofuse::io
