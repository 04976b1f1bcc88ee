#include "monofuse/bundle.h"

#include <set>
#include <string>

#include "monofuse/error.h"

namespace monofuse {

void Bundle::validate() const {
    camera.validate();
    if (frames.empty()) throw Error(ErrorKind::Validation, "bundle has no frames");
    std::set<int> ids;
    for (const auto& f : frames) {
        if (!ids.insert(f.id).second) {
            throw Error(ErrorKind::Validation, "duplicate frame id " + std::to_string(f.id));
        }
        f.depth.require_shape(camera);
        f.depth.validate();
        if (!f.sparse.mask.same_shape(camera.width, camera.height) ||
            !f.sparse.values.same_shape(camera.width, camera.height)) {
            throw Error(ErrorKind::Dimension, "sparse depth of frame " + std::to_string(f.id) + " has wrong size");
        }
        if (f.color && !f.color->same_shape(camera.width, camera.height)) {
            throw Error(ErrorKind::Dimension, "color image of frame " + std::to_string(f.id) + " has wrong size");
        }
    }
    for (const auto& m : matches) {
        if (m.frame_a == m.frame_b) throw Error(ErrorKind::Validation, "match joins a frame to itself");
        if (!ids.count(m.frame_a) || !ids.count(m.frame_b)) {
            throw Error(ErrorKind::Validation, "match references a missing frame");
        }
        if (!camera.inside(m.pixel_a.x(), m.pixel_a.y()) || !camera.inside(m.pixel_b.x(), m.pixel_b.y())) {
            throw Error(ErrorKind::Validation, "match pixel outside the image");
        }
    }
}

int Bundle::index_of(int id) const {
    for (size_t i = 0; i < frames.size(); ++i)
        if (frames[i].id == id) return static_cast<int>(i);
    return -1;
}

std::vector<Pose> Bundle::poses() const {
    std::vector<Pose> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.pose);
    return out;
}

}  // namespace monofuse
