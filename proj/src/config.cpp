#include "motarfuse/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "motarfuse/error.hpp"

namespace motarfuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("expected a non-negative integer, got '" + v + "'");
  return out;
}

int parse_int(const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ParseError("");
    return d;
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("expected true/false, got '" + v + "'");
}

struct KeyHandler {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Field>
KeyHandler size_key(std::string name, ConfigGroup g, std::string help, Field field) {
  return {{name, g, help},
          [field](const RunConfig& c) { return std::to_string(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = parse_size(v); }};
}

template <typename Field>
KeyHandler double_key(std::string name, ConfigGroup g, std::string help, Field field) {
  return {{name, g, help},
          [field](const RunConfig& c) { return fmt_double(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = parse_double(v); }};
}

template <typename Field>
KeyHandler bool_key(std::string name, ConfigGroup g, std::string help, Field field) {
  return {{name, g, help},
          [field](const RunConfig& c) { return std::string(field(c) ? "true" : "false"); },
          [field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); }};
}

const std::vector<KeyHandler>& handlers() {
  using G = ConfigGroup;
  static const std::vector<KeyHandler> table = [] {
    std::vector<KeyHandler> t;
    // model
    t.push_back(size_key("image_height", G::model, "input frame height in pixels",
                         [](auto& c) -> auto& { return c.model.image_height; }));
    t.push_back(size_key("image_width", G::model, "input frame width in pixels",
                         [](auto& c) -> auto& { return c.model.image_width; }));
    t.push_back(size_key("patch_size", G::model, "square patch side",
                         [](auto& c) -> auto& { return c.model.patch_size; }));
    t.push_back(size_key("d_model", G::model, "token width",
                         [](auto& c) -> auto& { return c.model.d_model; }));
    t.push_back(size_key("heads", G::model, "attention heads per layer",
                         [](auto& c) -> auto& { return c.model.heads; }));
    t.push_back(size_key("encoder_depth", G::model, "visual encoder blocks",
                         [](auto& c) -> auto& { return c.model.encoder_depth; }));
    t.push_back(size_key("adapter_depth", G::model, "visual adapter cross-attention blocks",
                         [](auto& c) -> auto& { return c.model.adapter_depth; }));
    t.push_back(size_key("motion_depth", G::model, "self-attention refinement blocks after the motion cross-attention",
                         [](auto& c) -> auto& { return c.model.motion_depth; }));
    t.push_back(size_key("fusion_depth", G::model, "fusion encoder blocks",
                         [](auto& c) -> auto& { return c.model.fusion_depth; }));
    t.push_back(size_key("mlp_ratio", G::model, "feed-forward hidden width as a multiple of d_model",
                         [](auto& c) -> auto& { return c.model.mlp_ratio; }));
    t.push_back(size_key("n_visual_tokens", G::model, "visual tokens emitted by the adapter",
                         [](auto& c) -> auto& { return c.model.n_visual_tokens; }));
    t.push_back(size_key("max_frames", G::model, "largest frame count the adapter accepts",
                         [](auto& c) -> auto& { return c.model.max_frames; }));
    t.push_back(size_key("query_count", G::model, "learnable motion queries Q",
                         [](auto& c) -> auto& { return c.model.query_count; }));
    t.push_back(size_key("num_classes", G::model, "identity classes; 0 infers from training data",
                         [](auto& c) -> auto& { return c.model.num_classes; }));
    t.push_back(double_key("lambda_g", G::model, "weight of the identification loss",
                           [](auto& c) -> auto& { return c.model.lambda_g; }));
    t.push_back(double_key("lambda_mc", G::model, "weight of the motion consistency loss",
                           [](auto& c) -> auto& { return c.model.lambda_mc; }));
    t.push_back(double_key("margin", G::model, "triplet margin",
                           [](auto& c) -> auto& { return c.model.margin; }));
    t.push_back({{"mc_loss", G::model, "motion consistency loss: mse_stopgrad | cosine_stopgrad"},
                 [](const RunConfig& c) { return to_string(c.model.mc_loss); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "mse_stopgrad") c.model.mc_loss = McLossKind::mse_stopgrad;
                   else if (v == "cosine_stopgrad") c.model.mc_loss = McLossKind::cosine_stopgrad;
                   else throw ParseError("unknown mc_loss '" + v + "'");
                 }});
    t.push_back({{"fusion_mode", G::model, "fusion attention: self | cross"},
                 [](const RunConfig& c) { return to_string(c.model.fusion_mode); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "self") c.model.fusion_mode = FusionMode::self_attention;
                   else if (v == "cross") c.model.fusion_mode = FusionMode::cross_attention;
                   else throw ParseError("unknown fusion_mode '" + v + "'");
                 }});
    t.push_back(double_key("init_std", G::model, "stddev of normal weight init",
                           [](auto& c) -> auto& { return c.model.init_std; }));
    t.push_back(double_key("ln_eps", G::model, "layer norm epsilon",
                           [](auto& c) -> auto& { return c.model.ln_eps; }));
    // train
    t.push_back(size_key("epochs", G::train, "total epochs, both phases",
                         [](auto& c) -> auto& { return c.train.epochs; }));
    t.push_back({{"phase1_epochs", G::train, "video stabilization epochs; -1 means epochs/4"},
                 [](const RunConfig& c) { return std::to_string(c.train.phase1_epochs); },
                 [](RunConfig& c, const std::string& v) { c.train.phase1_epochs = parse_int(v); }});
    t.push_back(double_key("lr", G::train, "Adam learning rate",
                           [](auto& c) -> auto& { return c.train.lr; }));
    t.push_back(double_key("beta1", G::train, "Adam first-moment decay",
                           [](auto& c) -> auto& { return c.train.beta1; }));
    t.push_back(double_key("beta2", G::train, "Adam second-moment decay",
                           [](auto& c) -> auto& { return c.train.beta2; }));
    t.push_back(double_key("adam_eps", G::train, "Adam epsilon",
                           [](auto& c) -> auto& { return c.train.adam_eps; }));
    t.push_back(size_key("warmup_epochs", G::train, "linear learning-rate warmup epochs",
                         [](auto& c) -> auto& { return c.train.warmup_epochs; }));
    t.push_back({{"seed", G::train, "training seed: init, sampling, augmentation"},
                 [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64(v); }});
    t.push_back(bool_key("use_mc_task", G::train, "train with the motion consistency loss",
                         [](auto& c) -> auto& { return c.train.use_mc_task; }));
    t.push_back(bool_key("use_video_pretrain", G::train, "run the video stabilization phase",
                         [](auto& c) -> auto& { return c.train.use_video_pretrain; }));
    t.push_back(size_key("ids_per_batch", G::train, "identities per batch P",
                         [](auto& c) -> auto& { return c.train.ids_per_batch; }));
    t.push_back(size_key("samples_per_id", G::train, "samples per identity K",
                         [](auto& c) -> auto& { return c.train.samples_per_id; }));
    t.push_back(size_key("clip_length", G::train, "frames per video clip in phase 1",
                         [](auto& c) -> auto& { return c.train.clip_length; }));
    t.push_back(size_key("steps_per_epoch", G::train, "optimizer steps per epoch; 0 = one pass",
                         [](auto& c) -> auto& { return c.train.steps_per_epoch; }));
    t.push_back(size_key("checkpoint_every", G::train, "write a checkpoint every N epochs; 0 = end only",
                         [](auto& c) -> auto& { return c.train.checkpoint_every; }));
    t.push_back(bool_key("augment_flip", G::train, "random horizontal flip",
                         [](auto& c) -> auto& { return c.train.augment_flip; }));
    t.push_back(bool_key("augment_erase", G::train, "random erasing",
                         [](auto& c) -> auto& { return c.train.augment_erase; }));
    t.push_back({{"eval_mode", G::train, "evaluation samples: image | video"},
                 [](const RunConfig& c) { return to_string(c.train.eval_mode); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "image") c.train.eval_mode = SampleMode::image;
                   else if (v == "video") c.train.eval_mode = SampleMode::video;
                   else throw ParseError("unknown eval_mode '" + v + "'");
                 }});
    t.push_back(size_key("max_rank", G::train, "largest CMC rank reported",
                         [](auto& c) -> auto& { return c.train.max_rank; }));
    // synth
    t.push_back(size_key("n_identities", G::synth, "synthetic identities",
                         [](auto& c) -> auto& { return c.synth.n_identities; }));
    t.push_back(size_key("frames_per_track", G::synth, "frames per synthetic track",
                         [](auto& c) -> auto& { return c.synth.frames_per_track; }));
    t.push_back(size_key("cameras", G::synth, "synthetic cameras",
                         [](auto& c) -> auto& { return c.synth.cameras; }));
    t.push_back(size_key("synth_height", G::synth, "synthetic frame height",
                         [](auto& c) -> auto& { return c.synth.height; }));
    t.push_back(size_key("synth_width", G::synth, "synthetic frame width",
                         [](auto& c) -> auto& { return c.synth.width; }));
    t.push_back(double_key("occlusion_probability", G::synth, "chance a query frame is occluded",
                           [](auto& c) -> auto& { return c.synth.occlusion_probability; }));
    t.push_back({{"occluder_kinds", G::synth, "occluder shapes, comma separated from bar,box"},
                 [](const RunConfig& c) { return c.synth.occluder_kinds; },
                 [](RunConfig& c, const std::string& v) { c.synth.occluder_kinds = v; }});
    t.push_back({{"synth_seed", G::synth, "generator seed"},
                 [](const RunConfig& c) { return std::to_string(c.synth.seed); },
                 [](RunConfig& c, const std::string& v) { c.synth.seed = parse_u64(v); }});
    t.push_back(double_key("walk_speed_min", G::synth, "slowest walk in px/frame",
                           [](auto& c) -> auto& { return c.synth.walk_speed_min; }));
    t.push_back(double_key("walk_speed_max", G::synth, "fastest walk in px/frame",
                           [](auto& c) -> auto& { return c.synth.walk_speed_max; }));
    return t;
  }();
  return table;
}

const KeyHandler* find_handler(const std::string& key) {
  for (const auto& h : handlers()) {
    if (h.key.name == key) return &h;
  }
  return nullptr;
}

}  // namespace

void ModelConfig::validate() const {
  if (patch_size == 0 || image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
  }
  if (query_count < 1) throw ConfigError("query_count must be at least 1");
  if (max_frames < 1) throw ConfigError("max_frames must be at least 1");
  if (n_visual_tokens < 1) throw ConfigError("n_visual_tokens must be at least 1");
  if (adapter_depth < 1) throw ConfigError("adapter_depth must be at least 1");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be at least 1");
  if (lambda_g < 0.0 || lambda_mc < 0.0) throw ConfigError("loss weights must be non-negative");
  if (margin < 0.0) throw ConfigError("margin must be non-negative");
  if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
}

ModelConfig ModelConfig::full_profile() {
  ModelConfig c;
  c.image_height = 256;
  c.image_width = 128;
  c.patch_size = 16;
  c.d_model = 768;
  c.heads = 12;
  c.encoder_depth = 12;
  c.mlp_ratio = 4;
  return c;
}

std::size_t TrainConfig::effective_phase1_epochs() const {
  if (!use_video_pretrain) return 0;
  if (phase1_epochs < 0) return epochs / 4;
  return static_cast<std::size_t>(phase1_epochs);
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (phase1_epochs >= 0 && static_cast<std::size_t>(phase1_epochs) > epochs) {
    throw ConfigError("phase1_epochs exceeds epochs");
  }
  if (ids_per_batch < 2) throw ConfigError("ids_per_batch must be at least 2 for triplet mining");
  if (samples_per_id < 2) throw ConfigError("samples_per_id must be at least 2 for triplet mining");
  if (clip_length < 2) throw ConfigError("clip_length must be at least 2");
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must be in [0, 1)");
  if (max_rank < 1) throw ConfigError("max_rank must be at least 1");
}

void SynthConfig::validate() const {
  if (n_identities < 2) throw ConfigError("n_identities must be at least 2");
  if (frames_per_track < 2) throw ConfigError("frames_per_track must be at least 2");
  if (cameras < 2) throw ConfigError("cameras must be at least 2 (query and gallery views)");
  if (occlusion_probability < 0.0 || occlusion_probability > 1.0) {
    throw ConfigError("occlusion_probability must be in [0, 1]");
  }
  if (height < 16 || width < 8) throw ConfigError("synthetic frames must be at least 16x8");
  if (walk_speed_min < 0.0 || walk_speed_max < walk_speed_min) throw ConfigError("invalid walk speed range");
  std::stringstream ss(occluder_kinds);
  std::string kind;
  bool any = false;
  while (std::getline(ss, kind, ',')) {
    kind = trim(kind);
    if (kind != "bar" && kind != "box") throw ConfigError("unknown occluder kind '" + kind + "'");
    any = true;
  }
  if (!any) throw ConfigError("occluder_kinds is empty");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& h : handlers()) k.push_back(h.key);
    return k;
  }();
  return keys;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeyHandler* h = find_handler(key);
    if (!h) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      h->set(cfg, value);
    } catch (const ParseError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  try {
    apply_config_text(cfg, buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const KeyHandler* h = find_handler(key);
  if (!h) throw ConfigError("unknown key '" + key + "'");
  return h->get(cfg);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeyHandler* h = find_handler(key);
  if (!h) throw ConfigError("unknown key '" + key + "'");
  try {
    h->set(cfg, value);
  } catch (const ParseError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string format_config(const RunConfig& cfg, const std::vector<ConfigGroup>& groups) {
  std::string out;
  for (const auto& h : handlers()) {
    bool wanted = false;
    for (auto g : groups) wanted = wanted || g == h.key.group;
    if (!wanted) continue;
    out += h.key.name + " = " + h.get(cfg) + "\n";
  }
  return out;
}

std::string to_string(McLossKind k) { return k == McLossKind::mse_stopgrad ? "mse_stopgrad" : "cosine_stopgrad"; }
std::string to_string(FusionMode m) { return m == FusionMode::self_attention ? "self" : "cross"; }
std::string to_string(SampleMode m) { return m == SampleMode::image ? "image" : "video"; }

}  // namespace motarfuse
