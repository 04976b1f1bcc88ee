#pragma once

#include <array>
#include <vector>

namespace monofuse::detail {

// Corner numbering: 0 (0,0,0), 1 (1,0,0), 2 (1,1,0), 3 (0,1,0),
//                   4 (0,0,1), 5 (1,0,1), 6 (1,1,1), 7 (0,1,1).
// Edge e joins kEdgeCorners[e][0] and kEdgeCorners[e][1].
inline constexpr int kCubeCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                          {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
inline constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                                            {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

/// Triangles (as edge triples) for one of the 256 inside/outside corner
/// configurations. Bit c of the case index is set when corner c is inside
/// (distance < 0).
struct CubeCase {
    std::vector<std::array<int, 3>> triangles;
};

const std::array<CubeCase, 256>& marching_cubes_cases();

}  // namespace monofuse::detail
