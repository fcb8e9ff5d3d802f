#include "calvin/render.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace calvin {

std::vector<float> normalize_image(const std::vector<float>& vals) {
    float lo = INFINITY, hi = -INFINITY;
    for (float v : vals) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<float> out(vals.size(), 0.5f);
    if (hi - lo < 1e-12f) return out;
    for (size_t i = 0; i < vals.size(); ++i) out[i] = (vals[i] - lo) / (hi - lo);
    return out;
}

void write_pgm(const std::string& path, const std::vector<float>& pixels, int height, int width) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
    os << "P5\n" << width << " " << height << "\n255\n";
    for (float v : pixels) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        os.put(static_cast<char>(std::lround(c * 255.0f)));
    }
    if (!os) throw std::runtime_error("write_pgm: write failed for '" + path + "'");
}

std::vector<float> render_plane(const Tensor& map, int height, int width, int cell_px) {
    std::vector<float> img(static_cast<size_t>(height) * cell_px * width * cell_px);
    for (int r = 0; r < height * cell_px; ++r)
        for (int c = 0; c < width * cell_px; ++c)
            img[static_cast<size_t>(r) * width * cell_px + c] =
                map[static_cast<size_t>(r / cell_px) * width + c / cell_px];
    return img;
}

std::vector<float> render_radial(const Tensor& map, int cell_px) {
    const int M = map.extent(0), H = map.extent(1), W = map.extent(2);
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<float> img(static_cast<size_t>(H) * cell_px * W * cell_px);
    const float ctr = (cell_px - 1) / 2.0f;
    for (int r = 0; r < H * cell_px; ++r) {
        for (int c = 0; c < W * cell_px; ++c) {
            const int cr = r / cell_px, cc = c / cell_px;
            const float oy = (r % cell_px) - ctr;
            const float ox = (c % cell_px) - ctr;
            // Closest heading sector to this pixel's direction from the cell
            // centre (ties to the lowest orientation index).
            int best = 0;
            float best_dot = -INFINITY;
            const float norm = std::sqrt(ox * ox + oy * oy);
            for (int m = 0; m < M; ++m) {
                const float hx = static_cast<float>(kHeadings[m][1]);
                const float hy = static_cast<float>(kHeadings[m][0]);
                const float hn = std::sqrt(hx * hx + hy * hy);
                const float dot = norm > 1e-6f ? (ox * hx + oy * hy) / (norm * hn) : (m == 0);
                if (dot > best_dot + 1e-7f) {
                    best_dot = dot;
                    best = m;
                }
            }
            img[static_cast<size_t>(r) * W * cell_px + c] =
                map[static_cast<size_t>(best) * plane + static_cast<size_t>(cr) * W + cc];
        }
    }
    return img;
}

namespace {

Tensor orientation_mean(const Tensor& map) { // M×H×W -> H×W
    const int M = map.extent(0), H = map.extent(1), W = map.extent(2);
    Tensor out({H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int m = 0; m < M; ++m) acc += map[m * plane + i];
        out[i] = static_cast<float>(acc / M);
    }
    return out;
}

}  // namespace

std::vector<std::string> render_maps(Model& model, const Maze& maze, const std::string& out_dir,
                                     int cell_px) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> files;
    auto emit = [&](const std::string& name, const std::vector<float>& img, int h, int w) {
        const std::string path = out_dir + "/" + name;
        write_pgm(path, normalize_image(img), h, w);
        files.push_back(path);
    };

    Graph g;
    SnapshotInput in;
    if (model.cfg.obs == ObsKind::kLpn) {
        LatticeMap map = LatticeMap::make(kScanClasses, maze.height, maze.width, 1.0f);
        Rng rng(maze.seed ^ 0xFULL);
        for (const Cell& c : maze.free_cells())
            for (const CameraFrame& f : synthetic_scan_panorama(maze, c, rng, model.cfg.scan))
                update_map(map, bin_and_pool(project_pixels(f), map.tau, maze.height, maze.width));
        in.pooled = map.pooled();
        in.mask = map.observed_mask();
    } else {
        in.obs = encode_full_observation(maze);
    }
    const ModelRun run = run_model(g, model, in, model.cfg.k, nullptr);

    const Tensor& v = run.v.value(); // M×H×W
    const int M = v.extent(0), H = v.extent(1), W = v.extent(2);
    const int img_h = H * cell_px, img_w = W * cell_px;

    if (M == 1) {
        emit("value.pgm", render_plane(Tensor({H, W}, v.vec()), H, W, cell_px), img_h, img_w);
    } else {
        emit("value_radial.pgm", render_radial(v, cell_px), img_h, img_w);
        emit("value_mean.pgm", render_plane(orientation_mean(v), H, W, cell_px), img_h, img_w);
    }

    const Tensor& reward = run.reward.value();
    if (model.cfg.planner == PlannerKind::kVin) {
        emit("reward.pgm", render_plane(Tensor({H, W}, reward.vec()), H, W, cell_px), img_h,
             img_w);
    } else {
        const int A = reward.extent(0);
        const size_t block = reward.numel() / A;
        for (int a = 0; a < A; ++a) {
            Tensor slice({M, H, W},
                         std::vector<float>(reward.vec().begin() + a * block,
                                            reward.vec().begin() + (a + 1) * block));
            const std::string name = "reward_a" + std::to_string(a);
            if (M == 1) {
                emit(name + ".pgm", render_plane(Tensor({H, W}, slice.vec()), H, W, cell_px),
                     img_h, img_w);
            } else {
                emit(name + "_radial.pgm", render_radial(slice, cell_px), img_h, img_w);
                emit(name + "_mean.pgm", render_plane(orientation_mean(slice), H, W, cell_px),
                     img_h, img_w);
            }
        }
    }
    return files;
}

}  // namespace calvin
