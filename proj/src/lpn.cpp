#include "calvin/lpn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "calvin/checkpoint.hpp"

namespace calvin {

namespace {

void mat4_mul_vec(const float m[16], const float v[4], float out[4]) {
    for (int r = 0; r < 4; ++r) {
        double acc = 0.0;
        for (int c = 0; c < 4; ++c) acc += static_cast<double>(m[r * 4 + c]) * v[c];
        out[r] = static_cast<float>(acc);
    }
}

// Gauss-Jordan 4×4 inverse; returns false when singular.
bool mat4_invert(const float m[16], float out[16]) {
    double a[4][8];
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            a[r][c] = m[r * 4 + c];
            a[r][c + 4] = r == c ? 1.0 : 0.0;
        }
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12) return false;
        if (pivot != col)
            for (int c = 0; c < 8; ++c) std::swap(a[pivot][c], a[col][c]);
        const double inv = 1.0 / a[col][col];
        for (int c = 0; c < 8; ++c) a[col][c] *= inv;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (int c = 0; c < 8; ++c) a[r][c] -= f * a[col][c];
        }
    }
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) out[r * 4 + c] = static_cast<float>(a[r][c + 4]);
    return true;
}

void check_rotation(const float rot[9]) {
    // R^T R = I within 1e-5.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k)
                acc += static_cast<double>(rot[k * 3 + i]) * rot[k * 3 + j];
            const double expect = i == j ? 1.0 : 0.0;
            if (std::abs(acc - expect) > 1e-5)
                throw std::invalid_argument("project_pixels: rotation is not orthonormal");
        }
}

}  // namespace

PointBatch project_pixels(const CameraFrame& frame) {
    check_rotation(frame.rot);
    float inv[16];
    if (!mat4_invert(frame.intrinsics, inv))
        throw std::invalid_argument("project_pixels: singular intrinsics");

    // Homogeneous composition [R 0; 0 1]·K once.
    float rk[16];
    float r4[16] = {frame.rot[0], frame.rot[1], frame.rot[2], 0,
                    frame.rot[3], frame.rot[4], frame.rot[5], 0,
                    frame.rot[6], frame.rot[7], frame.rot[8], 0,
                    0,            0,            0,            1};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k)
                acc += static_cast<double>(r4[r * 4 + k]) * frame.intrinsics[k * 4 + c];
            rk[r * 4 + c] = static_cast<float>(acc);
        }

    PointBatch out;
    out.feat_dim = frame.feat_dim;
    for (size_t i = 0; i < frame.point_count(); ++i) {
        if (!frame.valid.empty() && !frame.valid[i]) continue;
        if (frame.depth[i] < 0.0f)
            throw std::invalid_argument("project_pixels: negative depth");
        const float ph[4] = {frame.p1[i], frame.p2[i], frame.depth[i], 1.0f};
        float w[4];
        mat4_mul_vec(rk, ph, w);
        out.xyz.push_back(frame.c[0] + w[0]);
        out.xyz.push_back(frame.c[1] + w[1]);
        out.xyz.push_back(frame.c[2] + w[2]);
        for (int f = 0; f < frame.feat_dim; ++f)
            out.features.push_back(frame.features[i * frame.feat_dim + f]);
    }
    return out;
}

void unproject_point(const CameraFrame& frame, const float world[3], float* p1, float* p2,
                     float* d) {
    float inv_k[16];
    if (!mat4_invert(frame.intrinsics, inv_k))
        throw std::invalid_argument("unproject_point: singular intrinsics");
    // R^T·(world - c), then K^{-1}.
    const float diff[3] = {world[0] - frame.c[0], world[1] - frame.c[1], world[2] - frame.c[2]};
    float cam[4] = {0, 0, 0, 1};
    for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += static_cast<double>(frame.rot[k * 3 + r]) * diff[k];
        cam[r] = static_cast<float>(acc);
    }
    float ph[4];
    mat4_mul_vec(inv_k, cam, ph);
    *p1 = ph[0];
    *p2 = ph[1];
    *d = ph[2];
}

LatticeMap LatticeMap::make(int channels, int height, int width, float tau) {
    LatticeMap m;
    m.tau = tau;
    m.e = Tensor({channels, height, width});
    m.n = Tensor({height, width});
    return m;
}

Tensor LatticeMap::pooled() const {
    const int C = e.extent(0), H = e.extent(1), W = e.extent(2);
    Tensor out({C, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < plane; ++i) {
        if (n[i] <= 0.0f) continue;
        for (int c = 0; c < C; ++c) out[c * plane + i] = e[c * plane + i] / n[i];
    }
    return out;
}

Tensor LatticeMap::observed_mask() const {
    Tensor out(n.shape());
    for (size_t i = 0; i < n.numel(); ++i) out[i] = n[i] > 0.0f ? 1.0f : 0.0f;
    return out;
}

uint64_t LatticeMap::hash() const {
    uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const Tensor& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (size_t i = 0; i < t.numel() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    feed(e);
    feed(n);
    return h;
}

BinnedFrame bin_and_pool(const PointBatch& points, float tau, int height, int width,
                         const ZBand& band) {
    if (tau <= 0.0f) throw std::invalid_argument("bin_and_pool: tau must be positive");
    BinnedFrame out;
    out.e = Tensor({points.feat_dim, height, width});
    out.n = Tensor({height, width});
    const size_t plane = static_cast<size_t>(height) * width;
    for (size_t p = 0; p < points.point_count(); ++p) {
        const float x = points.xyz[p * 3 + 0];
        const float y = points.xyz[p * 3 + 1];
        const float z = points.xyz[p * 3 + 2];
        if (z < band.z_min || z >= band.z_max) {
            ++out.dropped;
            continue;
        }
        const int col = static_cast<int>(std::floor(x / tau));
        const int row = static_cast<int>(std::floor(y / tau));
        if (row < 0 || row >= height || col < 0 || col >= width) {
            ++out.dropped;
            continue;
        }
        const size_t cell = static_cast<size_t>(row) * width + col;
        out.n[cell] += 1.0f;
        for (int f = 0; f < points.feat_dim; ++f)
            out.e[f * plane + cell] += points.features[p * points.feat_dim + f];
    }
    return out;
}

void update_map(LatticeMap& map, const BinnedFrame& frame) {
    if (!map.e.same_shape(frame.e) || !map.n.same_shape(frame.n))
        throw std::invalid_argument("update_map: shape mismatch");
    for (size_t i = 0; i < map.e.numel(); ++i) map.e[i] += frame.e[i];
    for (size_t i = 0; i < map.n.numel(); ++i) map.n[i] += frame.n[i];
    map.dropped += frame.dropped;
}

CameraFrame synthetic_scan(const Maze& maze, Cell pos, int theta, Rng& rng,
                           const ScanConfig& cfg) {
    if (!maze.free_cell(pos.row, pos.col))
        throw std::invalid_argument("synthetic_scan: pose must be on a free cell");

    // World axes: x = columns, y = rows, z = height. Camera basis: forward
    // along the heading, p1 to the right of it, p2 straight up.
    const float hr = static_cast<float>(kHeadings[theta][0]);
    const float hc = static_cast<float>(kHeadings[theta][1]);
    const float norm = std::sqrt(hr * hr + hc * hc);
    const float fwd[3] = {hc / norm, hr / norm, 0.0f};
    const float right[3] = {-fwd[1], fwd[0], 0.0f};
    const float up[3] = {0.0f, 0.0f, 1.0f};

    CameraFrame frame;
    frame.feat_dim = kScanClasses;
    frame.c[0] = pos.col + 0.5f;
    frame.c[1] = pos.row + 0.5f;
    frame.c[2] = 0.5f;
    // Columns of R are the camera axes expressed in world coordinates.
    for (int i = 0; i < 3; ++i) {
        frame.rot[i * 3 + 0] = right[i];
        frame.rot[i * 3 + 1] = up[i];
        frame.rot[i * 3 + 2] = fwd[i];
    }

    const float heading_angle = std::atan2(fwd[1], fwd[0]);
    const float fov = cfg.fov_deg * 3.14159265358979323846f / 180.0f;
    for (int i = 0; i < cfg.n_rays; ++i) {
        const float frac = cfg.n_rays > 1 ? static_cast<float>(i) / (cfg.n_rays - 1) : 0.5f;
        const float ang = heading_angle + (frac - 0.5f) * fov;
        const float dx = std::cos(ang), dy = std::sin(ang);

        // March cells with a DDA until a wall or the target is hit, or the
        // range runs out on a free cell.
        int cr = pos.row, cc = pos.col;
        int hit_class = maze.obstacle(cr, cc) ? kScanClassWall : kScanClassFree;
        if (Cell{cr, cc} == maze.target) hit_class = kScanClassTarget;
        Cell hit{cr, cc};
        if (hit_class == kScanClassFree) {
            const float ox = frame.c[0], oy = frame.c[1];
            const int step_c = dx > 1e-9f ? 1 : (dx < -1e-9f ? -1 : 0);
            const int step_r = dy > 1e-9f ? 1 : (dy < -1e-9f ? -1 : 0);
            auto t_next = [](float origin, int cell, int stp, float dir) {
                if (stp == 0) return INFINITY;
                const float boundary = stp > 0 ? cell + 1.0f : static_cast<float>(cell);
                return (boundary - origin) / dir;
            };
            float tc = t_next(ox, cc, step_c, dx);
            float tr = t_next(oy, cr, step_r, dy);
            while (true) {
                if (std::abs(tc - tr) < 1e-7f && step_c != 0 && step_r != 0) {
                    cc += step_c; // exact corner: step diagonally
                    cr += step_r;
                    tc = t_next(ox, cc, step_c, dx);
                    tr = t_next(oy, cr, step_r, dy);
                } else if (tc < tr) {
                    cc += step_c;
                    tc = t_next(ox, cc, step_c, dx);
                } else {
                    cr += step_r;
                    tr = t_next(oy, cr, step_r, dy);
                }
                if (!maze.in_bounds(cr, cc)) break; // border walls make this unreachable
                const float cdx = (cc + 0.5f) - ox, cdy = (cr + 0.5f) - oy;
                const float dist = std::sqrt(cdx * cdx + cdy * cdy);
                if (maze.obstacle(cr, cc)) {
                    hit = {cr, cc};
                    hit_class = kScanClassWall;
                    break;
                }
                if (Cell{cr, cc} == maze.target) {
                    hit = {cr, cc};
                    hit_class = kScanClassTarget;
                    break;
                }
                if (dist > cfg.range) break; // previous free cell stands
                hit = {cr, cc};
                hit_class = kScanClassFree;
            }
        }

        // Distance to the hit cell's centre, encoded in camera coordinates.
        const float wx = hit.col + 0.5f, wy = hit.row + 0.5f;
        const float rx = wx - frame.c[0], ry = wy - frame.c[1];
        frame.p1.push_back(rx * right[0] + ry * right[1]);
        frame.p2.push_back(0.0f);
        frame.depth.push_back(rx * fwd[0] + ry * fwd[1]);
        frame.valid.push_back(1);
        for (int k = 0; k < kScanClasses; ++k) {
            const float onehot = k == hit_class ? 1.0f : 0.0f;
            frame.features.push_back(onehot +
                                     static_cast<float>(rng.normal()) * cfg.noise_sigma);
        }
    }
    return frame;
}

std::vector<CameraFrame> synthetic_scan_panorama(const Maze& maze, Cell pos, Rng& rng,
                                                 const ScanConfig& cfg) {
    std::vector<CameraFrame> frames;
    for (int theta : {0, 2, 4, 6}) // N, E, S, W
        frames.push_back(synthetic_scan(maze, pos, theta, rng, cfg));
    return frames;
}

LpnParams LpnParams::init(uint64_t seed, int emb_dim, int map_hidden) {
    Rng rng(seed);
    LpnParams p;
    p.emb_dim = emb_dim;
    p.map_hidden = map_hidden;
    auto uniform = [&rng](std::vector<int> shape, size_t fan_in) {
        Tensor t(std::move(shape));
        const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
        for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_pm(bound);
        return t;
    };
    p.phi_w = uniform({emb_dim, p.feat_dim, 1, 1}, p.feat_dim);
    p.phi_b = Tensor({emb_dim});
    p.map_w1 = uniform({map_hidden, emb_dim, 3, 3}, static_cast<size_t>(emb_dim) * 9);
    p.map_b1 = Tensor({map_hidden});
    p.map_w2 = uniform({2, map_hidden, 3, 3}, static_cast<size_t>(map_hidden) * 9);
    p.map_b2 = Tensor({2});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> LpnParams::named() {
    return {{"lpn.phi.w", &phi_w},       {"lpn.phi.b", &phi_b},
            {"lpn.map.conv1.w", &map_w1}, {"lpn.map.conv1.b", &map_b1},
            {"lpn.map.conv2.w", &map_w2}, {"lpn.map.conv2.b", &map_b2}};
}

std::vector<std::pair<std::string, Val>> LpnLeaves::named() const {
    return {{"lpn.phi.w", phi_w},       {"lpn.phi.b", phi_b},
            {"lpn.map.conv1.w", map_w1}, {"lpn.map.conv1.b", map_b1},
            {"lpn.map.conv2.w", map_w2}, {"lpn.map.conv2.b", map_b2}};
}

LpnLeaves register_leaves(Graph& g, LpnParams& p) {
    LpnLeaves l;
    l.phi_w = g.leaf(p.phi_w);
    l.phi_b = g.leaf(p.phi_b);
    l.map_w1 = g.leaf(p.map_w1);
    l.map_b1 = g.leaf(p.map_b1);
    l.map_w2 = g.leaf(p.map_w2);
    l.map_b2 = g.leaf(p.map_b2);
    return l;
}

void save_map_snapshot(const LatticeMap& map, const std::string& path) {
    checkpoint_save(path, {{"lpn.e", map.e}, {"lpn.n", map.n}});
    nlohmann::json side;
    side["tau"] = map.tau;
    side["channels"] = map.e.extent(0);
    side["height"] = map.e.extent(1);
    side["width"] = map.e.extent(2);
    side["dropped"] = map.dropped;
    std::ofstream os(path + ".json", std::ios::trunc);
    if (!os) throw std::runtime_error("save_map_snapshot: cannot open '" + path + ".json'");
    os << side.dump(2) << "\n";
}

LatticeMap load_map_snapshot(const std::string& path) {
    const auto tensors = checkpoint_load(path);
    std::ifstream is(path + ".json");
    if (!is) throw std::runtime_error("load_map_snapshot: missing sidecar '" + path + ".json'");
    nlohmann::json side;
    is >> side;
    LatticeMap map;
    map.tau = side.at("tau").get<float>();
    map.dropped = side.value("dropped", 0);
    map.e = tensors.at("lpn.e");
    map.n = tensors.at("lpn.n");
    if (map.e.rank() != 3 || map.n.rank() != 2 ||
        map.e.extent(1) != map.n.extent(0) || map.e.extent(2) != map.n.extent(1))
        throw std::runtime_error("load_map_snapshot: inconsistent map tensors");
    return map;
}

Val lpn_encode(Graph& g, const LpnLeaves& p, const Tensor& pooled, const Tensor& mask) {
    const int H = pooled.extent(1), W = pooled.extent(2);
    Val x = g.input(pooled);
    Val emb = g.conv2d(x, p.phi_w, p.phi_b);
    Val hid = g.relu(g.conv2d(emb, p.map_w1, p.map_b1));
    Val feat = g.conv2d(hid, p.map_w2, p.map_b2); // 2×H×W
    Tensor mask_flat({H, W}, mask.vec());
    Val masked = g.mul_const(feat, mask_flat); // suffix broadcast over channels
    Val mask_channel = g.input(Tensor({1, H, W}, mask.vec()));
    return g.concat0({mask_channel, masked});
}

}  // namespace calvin
