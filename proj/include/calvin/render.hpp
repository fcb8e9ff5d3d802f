#pragma once

#include <string>
#include <vector>

#include "calvin/training.hpp"

namespace calvin {

// Min-max normalization to [0,1]; constant images map to 0.5.
std::vector<float> normalize_image(const std::vector<float>& vals);

// Binary PGM (P5), one byte per pixel, values clamped to [0,1].
void write_pgm(const std::string& path, const std::vector<float>& pixels, int height, int width);

// H×W map scaled up to (H·cell_px)×(W·cell_px).
std::vector<float> render_plane(const Tensor& map, int height, int width, int cell_px);

// M×H×W map with the 8 orientations drawn as radial sectors inside each cell.
std::vector<float> render_radial(const Tensor& map, int cell_px);

// Writes value (and per-action reward) maps for a model on one maze under
// `out_dir`; embodied models additionally get orientation-averaged and radial
// layouts. Returns the files written.
std::vector<std::string> render_maps(Model& model, const Maze& maze, const std::string& out_dir,
                                     int cell_px = 16);

}  // namespace calvin
