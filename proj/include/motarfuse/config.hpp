#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace motarfuse {

enum class McLossKind { mse_stopgrad, cosine_stopgrad };
enum class FusionMode { self_attention, cross_attention };
enum class SampleMode { image, video };

// Architectural hyperparameters. Defaults are the desk-scale toy profile;
// full_profile() gives the full-size geometry.
struct ModelConfig {
  std::size_t image_height = 64;
  std::size_t image_width = 32;
  std::size_t patch_size = 8;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_depth = 2;
  std::size_t adapter_depth = 1;
  std::size_t motion_depth = 2;
  std::size_t fusion_depth = 2;
  std::size_t mlp_ratio = 2;
  std::size_t n_visual_tokens = 16;
  std::size_t max_frames = 8;
  std::size_t query_count = 10;
  // 0 means "number of identities in the training split".
  std::size_t num_classes = 0;
  double lambda_g = 1.0;
  double lambda_mc = 1.0;
  double margin = 0.3;
  McLossKind mc_loss = McLossKind::mse_stopgrad;
  FusionMode fusion_mode = FusionMode::self_attention;
  double init_std = 0.1;
  double ln_eps = 1e-6;

  std::size_t patches_per_frame() const { return (image_height / patch_size) * (image_width / patch_size); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  void validate() const;

  static ModelConfig full_profile();
};

struct TrainConfig {
  std::size_t epochs = 30;
  // Negative means a quarter of `epochs`.
  int phase1_epochs = -1;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_epochs = 5;
  std::uint64_t seed = 1;
  bool use_mc_task = true;
  bool use_video_pretrain = true;
  std::size_t ids_per_batch = 8;
  std::size_t samples_per_id = 4;
  std::size_t clip_length = 4;
  // 0 means one pass over the phase's samples (rounded down, at least 1).
  std::size_t steps_per_epoch = 0;
  std::size_t checkpoint_every = 0;
  bool augment_flip = true;
  bool augment_erase = true;
  SampleMode eval_mode = SampleMode::image;
  std::size_t max_rank = 10;

  std::size_t effective_phase1_epochs() const;
  void validate() const;
};

struct SynthConfig {
  std::size_t n_identities = 16;
  std::size_t frames_per_track = 8;
  std::size_t cameras = 2;
  std::size_t height = 64;
  std::size_t width = 32;
  double occlusion_probability = 0.5;
  // Comma separated subset of {bar, box}.
  std::string occluder_kinds = "bar,box";
  std::uint64_t seed = 7;
  double walk_speed_min = 0.5;
  double walk_speed_max = 1.5;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
};

enum class ConfigGroup { model, train, synth };

struct ConfigKey {
  std::string name;
  ConfigGroup group;
  std::string help;
};

// Every recognised key with its group and a one-line description.
const std::vector<ConfigKey>& config_keys();

// Applies `key = value` lines on top of `cfg`. '#' starts a comment. Unknown
// keys and malformed values raise ConfigError naming the line number.
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config_file(const std::string& path);

std::string get_config_value(const RunConfig& cfg, const std::string& key);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Serialises the keys of the selected groups, one `key = value` per line.
std::string format_config(const RunConfig& cfg, const std::vector<ConfigGroup>& groups);

std::string to_string(McLossKind k);
std::string to_string(FusionMode m);
std::string to_string(SampleMode m);

}  // namespace motarfuse
