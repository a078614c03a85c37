#pragma once

#include <filesystem>
#include <vector>

#include "motarfuse/network.hpp"

namespace motarfuse {

// Per motion query, attention over the input patches on the patch grid.
struct AttentionMaps {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::vector<double>> maps;  // Q rows of grid_h * grid_w weights, row-major
};

AttentionMaps motion_attention_maps(const Network& net, const ImageFrame& frame);

// Nearest-neighbour upsampling of one grid map to height x width, scaled so
// the largest weight is white.
std::vector<double> upsample_map(const std::vector<double>& map, std::size_t grid_h, std::size_t grid_w,
                                 std::size_t height, std::size_t width);

// Writes query_XX.pgm for every map plus attention.csv with the raw weights.
// Returns the written image paths.
std::vector<std::filesystem::path> write_attention_maps(const AttentionMaps& maps, std::size_t height,
                                                        std::size_t width, const std::filesystem::path& out_dir);

}  // namespace motarfuse
