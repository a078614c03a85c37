#include "motarfuse/viz.hpp"

#include <algorithm>
#include <fstream>

#include "motarfuse/error.hpp"

namespace motarfuse {

AttentionMaps motion_attention_maps(const Network& net, const ImageFrame& frame) {
  Tape tape(false);
  Binder b(tape, net.params(), false);
  AdapterTrace trace;
  Tensor motion_weights;
  net.forward_encoded(b, {net.encode_frame(b, frame)}, false, &trace, &motion_weights);
  const Tensor per_patch = patch_attention_map(mean_over_heads(motion_weights), trace);

  const ModelConfig& cfg = net.config();
  AttentionMaps out;
  out.grid_h = cfg.image_height / cfg.patch_size;
  out.grid_w = cfg.image_width / cfg.patch_size;
  const std::size_t n = per_patch.dim(1);
  if (n != out.grid_h * out.grid_w) {
    throw ShapeError("attention map has " + std::to_string(n) + " columns for a " + std::to_string(out.grid_h) +
                     "x" + std::to_string(out.grid_w) + " grid");
  }
  for (std::size_t q = 0; q < per_patch.dim(0); ++q) {
    out.maps.emplace_back(per_patch.data().begin() + static_cast<std::ptrdiff_t>(q * n),
                          per_patch.data().begin() + static_cast<std::ptrdiff_t>((q + 1) * n));
  }
  return out;
}

std::vector<double> upsample_map(const std::vector<double>& map, std::size_t grid_h, std::size_t grid_w,
                                 std::size_t height, std::size_t width) {
  if (map.size() != grid_h * grid_w) throw ShapeError("upsample_map: map size does not match the grid");
  const double peak = *std::max_element(map.begin(), map.end());
  std::vector<double> out(height * width, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double v = map[(y * grid_h / height) * grid_w + x * grid_w / width];
      out[y * width + x] = peak > 0.0 ? v / peak : 0.0;
    }
  return out;
}

std::vector<std::filesystem::path> write_attention_maps(const AttentionMaps& maps, std::size_t height,
                                                        std::size_t width, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  std::ofstream csv(out_dir / "attention.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "attention.csv").string());
  csv << "query,row,col,weight\n";
  char buf[64];
  for (std::size_t q = 0; q < maps.maps.size(); ++q) {
    std::snprintf(buf, sizeof buf, "query_%02zu.pgm", q);
    const auto path = out_dir / buf;
    write_pgm(path, height, width, upsample_map(maps.maps[q], maps.grid_h, maps.grid_w, height, width));
    written.push_back(path);
    for (std::size_t i = 0; i < maps.maps[q].size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", maps.maps[q][i]);
      csv << q << ',' << i / maps.grid_w << ',' << i % maps.grid_w << ',' << buf << '\n';
    }
  }
  return written;
}

}  // namespace motarfuse
