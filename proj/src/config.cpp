#include "monofuse/config.h"

#include <set>
#include <string>

#include "monofuse/error.h"
#include "monofuse/io.h"

namespace monofuse {

namespace {

using nlohmann::json;

template <typename E>
struct EnumNames {
    std::vector<std::pair<E, const char*>> names;

    const char* name(E e) const {
        for (const auto& [v, n] : names)
            if (v == e) return n;
        return "";
    }
    E parse(const std::string& s, const std::string& key) const {
        for (const auto& [v, n] : names)
            if (s == n) return v;
        throw Error(ErrorKind::Validation, "config: unknown value '" + s + "' for " + key);
    }
};

const EnumNames<GradientMode> kGradientModes{
    {{GradientMode::Analytic, "analytic"}, {GradientMode::FiniteDifference, "finite_difference"}}};
const EnumNames<OptimizerMethod> kMethods{
    {{OptimizerMethod::LevenbergMarquardt, "levenberg_marquardt"}, {OptimizerMethod::Lbfgs, "lbfgs"}}};
const EnumNames<NoiseSpec::StdMode> kStdModes{{{NoiseSpec::StdMode::Exact, "exact"},
                                               {NoiseSpec::StdMode::Inflated, "inflated"},
                                               {NoiseSpec::StdMode::Misreported, "misreported"}}};

/// Writes named fields into a JSON object.
class Writer {
public:
    json doc = json::object();

    template <typename T>
    void operator()(const char* key, T& value) {
        doc[key] = encode(value);
    }
    template <typename E>
    void operator()(const char* key, E& value, const EnumNames<E>& names) {
        doc[key] = names.name(value);
    }
    template <typename S, typename Fields>
    void section(const char* key, S& value, Fields&& fields) {
        Writer inner;
        fields(inner, value);
        doc[key] = std::move(inner.doc);
    }

private:
    static json encode(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
    static json encode(const Eigen::Matrix4d& m) {
        json rows = json::array();
        for (int i = 0; i < 4; ++i) rows.push_back({m(i, 0), m(i, 1), m(i, 2), m(i, 3)});
        return rows;
    }
    template <typename T>
    static json encode(const T& v) {
        return json(v);
    }
};

/// Reads named fields from a JSON object, keeping defaults for missing keys
/// and rejecting keys no field claims.
class Reader {
public:
    Reader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw Error(ErrorKind::Validation, "config: " + where() + " must be an object");
    }

    template <typename T>
    void operator()(const char* key, T& value) {
        seen_.insert(key);
        if (!doc_.contains(key)) return;
        try {
            decode(doc_.at(key), value);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Validation, "config: bad value for " + qualified(key) + ": " + e.what());
        }
    }
    template <typename E>
    void operator()(const char* key, E& value, const EnumNames<E>& names) {
        seen_.insert(key);
        if (!doc_.contains(key)) return;
        if (!doc_.at(key).is_string()) throw Error(ErrorKind::Validation, "config: " + qualified(key) + " must be a string");
        value = names.parse(doc_.at(key).get<std::string>(), qualified(key));
    }
    template <typename S, typename Fields>
    void section(const char* key, S& value, Fields&& fields) {
        seen_.insert(key);
        if (!doc_.contains(key)) return;
        Reader inner(doc_.at(key), qualified(key));
        fields(inner, value);
        inner.finish();
    }

    void finish() const {
        for (const auto& [key, _] : doc_.items())
            if (!seen_.count(key)) throw Error(ErrorKind::Validation, "config: unknown key " + qualified(key));
    }

private:
    static void decode(const json& j, Vec3& v) { v = Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }
    static void decode(const json& j, Eigen::Matrix4d& m) {
        for (int i = 0; i < 4; ++i)
            for (int k = 0; k < 4; ++k) m(i, k) = j.at(size_t(i)).at(size_t(k)).get<double>();
    }
    template <typename T>
    static void decode(const json& j, T& v) {
        v = j.get<T>();
    }

    std::string where() const { return path_.empty() ? "document" : path_; }
    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename V>
void volume_fields(V& v, VolumeConfig& c) {
    v("c1", c.c1);
    v("c2", c.c2);
    v("sigma_scale", c.sigma_scale);
}

template <typename V>
void fit_fields(V& v, VolumeFit& c) {
    v("resolution", c.resolution);
    v("padding_voxels", c.padding_voxels);
    v("delta_min_voxels", c.delta_min_voxels);
    v("pixel_stride", c.pixel_stride);
}

template <typename V>
void raycast_fields(V& v, RaycastSettings& c) {
    v("step_fraction", c.step_fraction);
    v("bisection_iterations", c.bisection_iterations);
    v("min_observed_weight", c.min_observed_weight);
}

template <typename V>
void failure_fields(V& v, FailureConfig& c) {
    v.section("thresholds", c.thresholds, [](auto& w, FailureThresholds& t) {
        w("sim", t.sim);
        w("flow", t.flow);
        w("consistency", t.consistency);
    });
    v("interval", c.interval);
    v("min_coverage", c.min_coverage);
    v("epsilon", c.epsilon);
    v.section("raycast", c.raycast, [](auto& w, RaycastSettings& r) { raycast_fields(w, r); });
}

template <typename V>
void pose_graph_fields(V& v, PoseGraphConfig& c) {
    v("intervals", c.intervals);
    v("w_consistency", c.w_consistency);
    v("w_flow", c.w_flow);
    v("epsilon", c.epsilon);
}

template <typename V>
void optimizer_fields(V& v, OptimizerSettings& c) {
    v("method", c.method, kMethods);
    v("max_iterations", c.max_iterations);
    v("tolerance", c.tolerance);
    v("patience", c.patience);
    v("gradient", c.gradient, kGradientModes);
    v("fd_step", c.fd_step);
    v("initial_step", c.initial_step);
    v("memory", c.memory);
    v("backtrack", c.backtrack);
    v("max_backtracks", c.max_backtracks);
    v("armijo", c.armijo);
    v("rms_decay", c.rms_decay);
    v("initial_damping", c.initial_damping);
    v("damping_increase", c.damping_increase);
    v("damping_decrease", c.damping_decrease);
    v("max_damping", c.max_damping);
    v("max_expansions", c.max_expansions);
}

template <typename V>
void registration_fields(V& v, RegistrationConfig& c) {
    v("target_count", c.target_count);
    v("max_iterations", c.max_iterations);
    v("tolerance", c.tolerance);
    v("divergence_window", c.divergence_window);
    v("estimate_scale", c.estimate_scale);
    v("initial", c.initial);
    v("seed", c.seed);
}

template <typename V>
void synthetic_fields(V& v, SequenceSpec& c) {
    v("frames", c.frames);
    v.section("camera", c.camera, [](auto& w, CameraIntrinsics& k) {
        w("fx", k.fx);
        w("fy", k.fy);
        w("cx", k.cx);
        w("cy", k.cy);
        w("width", k.width);
        w("height", k.height);
    });
    v.section("trajectory", c.trajectory, [](auto& w, TrajectorySpec& t) {
        w("start", t.start);
        w("end", t.end);
        w("sway_deg", t.sway_deg);
        w("sway_period", t.sway_period);
        w("offset", t.offset);
    });
    v.section("noise", c.noise, [](auto& w, NoiseSpec& n) {
        w("depth_noise", n.depth_noise);
        w("std_mode", n.std_mode, kStdModes);
        w("std_factor", n.std_factor);
        w("std_floor", n.std_floor);
        w("rotation_deg", n.rotation_deg);
        w("translation_fraction", n.translation_fraction);
        w("match_pixel_noise", n.match_pixel_noise);
        w("outlier_fraction", n.outlier_fraction);
    });
    v("sparse_points", c.sparse_points);
    v("matches_per_pair", c.matches_per_pair);
    v("max_match_offset", c.max_match_offset);
    v("color", c.color);
    v("seed", c.seed);
}

template <typename V>
void app_fields(V& v, AppConfig& c) {
    v.section("volume", c.pipeline.volume, [](auto& w, VolumeConfig& x) { volume_fields(w, x); });
    v.section("fit", c.pipeline.fit, [](auto& w, VolumeFit& x) { fit_fields(w, x); });
    v.section("failure", c.pipeline.failure, [](auto& w, FailureConfig& x) { failure_fields(w, x); });
    v.section("pose_graph", c.pipeline.pose_graph, [](auto& w, PoseGraphConfig& x) { pose_graph_fields(w, x); });
    v.section("optimizer", c.pipeline.optimizer, [](auto& w, OptimizerSettings& x) { optimizer_fields(w, x); });
    v.section("registration", c.pipeline.registration,
              [](auto& w, RegistrationConfig& x) { registration_fields(w, x); });
    v.section("synthetic", c.synthetic, [](auto& w, SequenceSpec& x) { synthetic_fields(w, x); });
    v("default_std_fraction", c.pipeline.default_std_fraction);
}

}  // namespace

void AppConfig::validate() const {
    pipeline.validate();
    synthetic.validate();
}

json to_json(const AppConfig& config) {
    Writer w;
    AppConfig copy = config;
    app_fields(w, copy);
    return w.doc;
}

AppConfig config_from_json(const json& document) {
    AppConfig c;
    Reader r(document, "");
    app_fields(r, c);
    r.finish();
    c.validate();
    return c;
}

AppConfig load_config(const std::filesystem::path& path) { return config_from_json(io::read_json(path)); }

}  // namespace monofuse
