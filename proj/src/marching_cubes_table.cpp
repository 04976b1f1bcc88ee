#include "marching_cubes_table.h"

#include <map>
#include <stdexcept>

namespace monofuse::detail {

namespace {

// Faces listed counter-clockwise as seen from outside the cube.
constexpr int kFaces[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                              {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5}};

int edge_between(int a, int b) {
    for (int e = 0; e < 12; ++e) {
        if ((kEdgeCorners[e][0] == a && kEdgeCorners[e][1] == b) ||
            (kEdgeCorners[e][0] == b && kEdgeCorners[e][1] == a)) {
            return e;
        }
    }
    throw std::logic_error("corners are not adjacent");
}

// The table is built rather than transcribed. On every face the zero crossings
// are joined into oriented segments that keep the inside corners on their
// left; faces with four crossings always separate the two inside corners, so
// neighbouring cubes agree on the shared face. Segments chain into closed
// loops on the cube surface, each of which is fan-triangulated.
CubeCase build_case(int config) {
    auto inside = [config](int corner) { return (config >> corner) & 1; };
    std::map<int, int> next;  // start edge -> end edge
    for (const auto& face : kFaces) {
        int crossing_edge[4];
        bool enters[4];  // true: outside -> inside when walking the face
        bool has[4] = {false, false, false, false};
        for (int i = 0; i < 4; ++i) {
            const int a = face[i];
            const int b = face[(i + 1) % 4];
            if (inside(a) != inside(b)) {
                has[i] = true;
                crossing_edge[i] = edge_between(a, b);
                enters[i] = !inside(a);
            }
        }
        for (int i = 0; i < 4; ++i) {
            if (!has[i] || enters[i]) continue;
            for (int back = 1; back < 4; ++back) {
                const int j = (i - back + 4) % 4;
                if (has[j] && enters[j]) {
                    next[crossing_edge[i]] = crossing_edge[j];
                    break;
                }
            }
        }
    }

    CubeCase out;
    std::map<int, bool> used;
    for (const auto& [start, unused] : next) {
        if (used[start]) continue;
        std::vector<int> loop;
        int e = start;
        while (!used[e]) {
            used[e] = true;
            loop.push_back(e);
            e = next.at(e);
        }
        // Loops run counter-clockwise around the inside region; reversing the
        // fan makes normals face outward from it.
        for (size_t k = 1; k + 1 < loop.size(); ++k) {
            out.triangles.push_back({loop[0], loop[k + 1], loop[k]});
        }
    }
    return out;
}

}  // namespace

const std::array<CubeCase, 256>& marching_cubes_cases() {
    static const std::array<CubeCase, 256> table = [] {
        std::array<CubeCase, 256> t;
        for (int c = 0; c < 256; ++c) t[c] = build_case(c);
        return t;
    }();
    return table;
}

}  // namespace monofuse::detail
