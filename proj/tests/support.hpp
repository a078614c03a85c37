#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "motarfuse/config.hpp"
#include "motarfuse/image.hpp"
#include "motarfuse/random.hpp"
#include "motarfuse/tensor.hpp"

namespace motarfuse::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("motarfuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

inline ImageFrame random_frame(std::size_t h, std::size_t w, Rng& rng) {
  ImageFrame f(h, w);
  for (double& v : f.pixels) v = rng.uniform();
  return f;
}

// 16x8 frames, 4x4 patches, width 8: small enough for exhaustive checks.
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.image_height = 16;
  m.image_width = 8;
  m.patch_size = 4;
  m.d_model = 8;
  m.heads = 2;
  m.encoder_depth = 1;
  m.adapter_depth = 1;
  m.motion_depth = 1;
  m.fusion_depth = 1;
  m.mlp_ratio = 2;
  m.n_visual_tokens = 4;
  m.max_frames = 8;
  m.query_count = 3;
  m.init_std = 0.3;
  return m;
}

}  // namespace motarfuse::testing
