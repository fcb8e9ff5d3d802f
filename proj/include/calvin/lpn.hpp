#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "calvin/env.hpp"
#include "calvin/graph.hpp"
#include "calvin/maze.hpp"
#include "calvin/rng.hpp"
#include "calvin/tensor.hpp"

namespace calvin {

// One synthetic depth "image": per-ray pixel coordinates, depth, validity and
// a feature vector, plus the camera pose. World coordinates recover as
// [x,y,z,1] = c + R·K·[p1,p2,d,1]^T.
struct CameraFrame {
    std::vector<float> p1, p2, depth; // per point
    std::vector<uint8_t> valid;
    std::vector<float> features; // P × feat_dim row-major
    int feat_dim = 0;

    float c[3] = {0, 0, 0};
    float rot[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};    // row-major 3×3
    float intrinsics[16] = {1, 0, 0, 0, 0, 1, 0, 0, // row-major 4×4
                            0, 0, 1, 0, 0, 0, 0, 1};

    size_t point_count() const { return depth.size(); }
};

struct PointBatch {
    std::vector<float> xyz; // P × 3
    std::vector<float> features;
    int feat_dim = 0;
    size_t point_count() const { return xyz.size() / 3; }
};

// Projects valid pixels to world space. Throws on singular intrinsics or a
// non-orthonormal rotation.
PointBatch project_pixels(const CameraFrame& frame);

// Inverse of project_pixels for one world point; used by round-trip tests.
void unproject_point(const CameraFrame& frame, const float world[3], float* p1, float* p2,
                     float* d);

// Running per-cell feature sums and point counts; the pooled map is e/n where
// n > 0 and zero elsewhere. Memory is constant in trajectory length.
struct LatticeMap {
    float tau = 1.0f;
    Tensor e; // C×H×W sums
    Tensor n; // H×W counts
    int64_t dropped = 0;

    static LatticeMap make(int channels, int height, int width, float tau);
    Tensor pooled() const;
    Tensor observed_mask() const; // H×W, 1 where n > 0
    uint64_t hash() const;
};

struct ZBand {
    float z_min = -INFINITY;
    float z_max = INFINITY;
};

struct BinnedFrame {
    Tensor e; // C×H×W
    Tensor n; // H×W
    int64_t dropped = 0;
};

// Half-open binning floor(coord/tau); the height axis is collapsed onto the
// 2D lattice after the optional z-band filter. Row index comes from y,
// column from x.
BinnedFrame bin_and_pool(const PointBatch& points, float tau, int height, int width,
                         const ZBand& band = {});

// map.e += frame.e, map.n += frame.n.
void update_map(LatticeMap& map, const BinnedFrame& frame);

struct ScanConfig {
    int n_rays = 9;
    float fov_deg = 90.0f;
    float range = 4.0f;
    float noise_sigma = 0.05f;
};

constexpr int kScanClasses = 3; // wall, free, target
constexpr int kScanClassWall = 0;
constexpr int kScanClassFree = 1;
constexpr int kScanClassTarget = 2;

// Casts rays in a 90°-style fan around heading `theta` across the maze's 2D
// slice at z = 0.5. Each ray stops at the first wall or target cell (or at
// the range limit on a free cell) and reports the distance to that cell's
// centre plus a noisy one-hot class feature. The emitted frame round-trips
// through project_pixels.
CameraFrame synthetic_scan(const Maze& maze, Cell pos, int theta, Rng& rng,
                           const ScanConfig& cfg = {});

// Full surround coverage for positional agents: four 90° scans facing
// N, E, S, W.
std::vector<CameraFrame> synthetic_scan_panorama(const Maze& maze, Cell pos, Rng& rng,
                                                 const ScanConfig& cfg = {});

// Learnable map head: linear per-cell feature projection (commutes with mean
// pooling) followed by the two-block map-encoder CNN, masked so never-observed
// cells stay zero; the observed mask is appended as the first channel so the
// output matches the planners' observation layout.
struct LpnParams {
    int feat_dim = kScanClasses;
    int emb_dim = 8;
    int map_hidden = 16;

    Tensor phi_w, phi_b;   // emb_dim×feat_dim×1×1
    Tensor map_w1, map_b1; // map_hidden×emb_dim×3×3
    Tensor map_w2, map_b2; // 2×map_hidden×3×3

    static LpnParams init(uint64_t seed, int emb_dim = 8, int map_hidden = 16);
    std::vector<std::pair<std::string, Tensor*>> named();
};

struct LpnLeaves {
    Val phi_w, phi_b, map_w1, map_b1, map_w2, map_b2;
    std::vector<std::pair<std::string, Val>> named() const;
};

LpnLeaves register_leaves(Graph& g, LpnParams& p);

// pooled: C×H×W raw pooled features, mask: H×W observed mask. Returns a
// 3×H×W observation-compatible map {mask, f1·mask, f2·mask}.
Val lpn_encode(Graph& g, const LpnLeaves& p, const Tensor& pooled, const Tensor& mask);

// Map snapshot export: the running sums/counts in the checkpoint tensor
// format ("lpn.e", "lpn.n") with cell size and extents in a JSON sidecar at
// path + ".json".
void save_map_snapshot(const LatticeMap& map, const std::string& path);
LatticeMap load_map_snapshot(const std::string& path);

}  // namespace calvin
