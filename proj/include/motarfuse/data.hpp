#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "motarfuse/config.hpp"
#include "motarfuse/image.hpp"
#include "motarfuse/random.hpp"

namespace motarfuse {

// One identity-labelled observation: a single frame in image mode, a track or
// clip in video mode.
struct Sample {
  int identity_id = 0;
  int camera_id = 0;
  int track_id = 0;
  std::vector<ImageFrame> frames;
  std::vector<int> frame_ids;
};

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
  int area() const { return w * h; }
  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct FrameName {
  int identity_id = 0;
  int camera_id = 0;
  int track_id = 0;
  int frame_id = 0;
};

// `<IIII>_c<C>_t<TT>_f<FFF>.ppm`
std::string format_frame_name(const FrameName& name);
FrameName parse_frame_name(const std::string& filename);

// ---- synthetic generator ----

struct ManifestEntry {
  std::string split;  // train | query | gallery | occluded/query | occluded/gallery
  std::string file;   // relative to the dataset root
  FrameName name;
  bool occluded = false;
  Rect occluder;
  Rect sprite_box;
};

struct SynthManifest {
  std::vector<ManifestEntry> entries;
  std::size_t count(const std::string& split) const;
};

// Everything needed to draw one frame of one track.
struct SpriteState {
  int identity_id = 0;
  int camera_id = 0;
  int track_id = 0;
  int frame_id = 0;
};

struct RenderedFrame {
  ImageFrame image;
  std::vector<std::uint8_t> sprite_mask;    // [h x w], 1 where the figure is drawn
  std::vector<std::uint8_t> occluder_mask;  // [h x w], 1 where an occluder is drawn
  Rect sprite_box;
  std::optional<Rect> occluder;
};

// Deterministic in (cfg.seed, state). With `occlude` set an occluder covering
// 20-50% of the sprite box is drawn over the otherwise identical frame.
RenderedFrame render_frame(const SynthConfig& cfg, const SpriteState& state, bool occlude, Rng* occluder_rng);

// Writes train/, query/, gallery/, occluded/{query,gallery}/, manifest.csv and
// synth.cfg under out_dir. Train holds track 0 of every camera; query holds
// track 1 on camera 1 and gallery track 1 on the other cameras.
SynthManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

void write_synth_config(const SynthConfig& cfg, const std::filesystem::path& path);
SynthConfig read_synth_config(const std::filesystem::path& path);

// ---- loading ----

// Image mode: one Sample per file. Video mode: one Sample per
// (identity, camera, track) with frames sorted by frame index. Files sort by
// name, so the result order is stable. A missing or empty folder yields an
// empty list.
std::vector<Sample> load_folder(const std::filesystem::path& path, SampleMode mode);

// Sliding windows of `length` consecutive frames (stride 1) over each track.
// Tracks shorter than `length` contribute one clip with all their frames.
std::vector<Sample> make_clips(const std::vector<Sample>& tracks, std::size_t length);

std::array<double, 3> channel_means(const std::vector<Sample>& samples);

// ---- augmentation ----

struct AugmentFlags {
  bool flip = true;
  bool erase = true;
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  double erase_min_area = 0.02;
  double erase_max_area = 0.20;
  std::array<double, 3> fill{0.5, 0.5, 0.5};
};

struct AugmentRecord {
  bool flipped = false;
  std::optional<Rect> erased;
};

ImageFrame augment(const ImageFrame& frame, Rng& rng, const AugmentFlags& flags, AugmentRecord* record = nullptr);
// One flip decision for the whole clip, an independent erase per frame.
std::vector<ImageFrame> augment_clip(const std::vector<ImageFrame>& frames, Rng& rng, const AugmentFlags& flags);

// ---- batching ----

// P distinct identities, K samples each, drawn without replacement. Returns
// indices into `dataset`, identity-major.
std::vector<std::size_t> pk_sample(const std::vector<Sample>& dataset, std::size_t p, std::size_t k, Rng& rng);

struct FramePair {
  ImageFrame single;
  std::array<ImageFrame, 2> pair;
  std::size_t start = 0;  // index of `single` within the sample (video)
  std::size_t delta = 0;  // 0 for the augmented-view fallback
  bool augmented_views = false;
};

// Video samples: delta uniform over {1 .. min(3, n-1)}, start uniform over the
// positions that keep start + delta in range. Single-frame samples: two
// independent augmentations of the frame.
FramePair pair_frames(const Sample& sample, Rng& rng, const AugmentFlags& flags);

}  // namespace motarfuse
