#include "motarfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

#include "motarfuse/error.hpp"

namespace motarfuse {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// file names

std::string format_frame_name(const FrameName& n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d_c%d_t%02d_f%03d.ppm", n.identity_id, n.camera_id, n.track_id, n.frame_id);
  return buf;
}

FrameName parse_frame_name(const std::string& filename) {
  static const std::regex pattern(R"(^(\d{4,})_c(\d+)_t(\d{2,})_f(\d{3,})\.ppm$)");
  std::smatch m;
  if (!std::regex_match(filename, m, pattern)) throw ParseError("malformed frame file name: " + filename);
  return FrameName{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4])};
}

// ---------------------------------------------------------------------------
// synthetic sprites

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = splitmix(h ^ p);
  return h;
}

using Rgb = std::array<double, 3>;

struct Appearance {
  Rgb shirt, pants, hair, skin, shoes, bag;
  bool has_bag;
  double height_frac, width_frac, omega, phase, stride_frac;
};

struct TrackMotion {
  double direction, speed, x0, y_jitter, phase;
};

struct CameraLook {
  Rgb base;
  int pattern;
  double scale, brightness;
  Rgb tint;
};

Rgb random_rgb(Rng& r, double lo, double hi) { return {r.uniform(lo, hi), r.uniform(lo, hi), r.uniform(lo, hi)}; }

Appearance appearance_of(const SynthConfig& cfg, int identity) {
  Rng r(mix({cfg.seed, 0xA11CEULL, static_cast<std::uint64_t>(identity)}));
  static const Rgb skins[4] = {{0.95, 0.80, 0.69}, {0.87, 0.68, 0.52}, {0.68, 0.48, 0.33}, {0.45, 0.31, 0.21}};
  Appearance a;
  a.shirt = random_rgb(r, 0.05, 0.95);
  a.pants = random_rgb(r, 0.05, 0.85);
  a.hair = random_rgb(r, 0.0, 0.35);
  a.skin = skins[r.uniform_int(0, 3)];
  a.shoes = random_rgb(r, 0.0, 0.3);
  a.has_bag = r.bernoulli(0.4);
  a.bag = random_rgb(r, 0.1, 0.9);
  a.height_frac = r.uniform(0.78, 0.92);
  a.width_frac = r.uniform(0.36, 0.50);
  a.omega = r.uniform(0.6, 1.0);
  a.phase = r.uniform(0.0, 2.0 * std::numbers::pi);
  a.stride_frac = r.uniform(0.06, 0.12);
  return a;
}

TrackMotion motion_of(const SynthConfig& cfg, int identity, int camera, int track) {
  Rng r(mix({cfg.seed, 0x7AC4ULL, static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(camera),
             static_cast<std::uint64_t>(track)}));
  TrackMotion m;
  m.direction = r.bernoulli(0.5) ? 1.0 : -1.0;
  m.speed = r.uniform(cfg.walk_speed_min, cfg.walk_speed_max);
  const double centre = r.uniform(0.42, 0.58) * static_cast<double>(cfg.width);
  m.x0 = centre - m.direction * m.speed * static_cast<double>(cfg.frames_per_track - 1) / 2.0;
  m.y_jitter = r.uniform(-0.03, 0.0) * static_cast<double>(cfg.height);
  m.phase = r.uniform(0.0, 2.0 * std::numbers::pi);
  return m;
}

CameraLook camera_of(const SynthConfig& cfg, int camera) {
  Rng r(mix({cfg.seed, 0xBAC6ULL, static_cast<std::uint64_t>(camera)}));
  CameraLook c;
  c.base = random_rgb(r, 0.25, 0.75);
  c.pattern = camera % 2;
  c.scale = r.uniform(3.0, 6.0);
  c.brightness = camera == 1 ? 1.0 : r.uniform(0.7, 0.9);
  c.tint = random_rgb(r, 0.9, 1.1);
  return c;
}

double hash_noise(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t x,
                  std::uint64_t y) {
  const std::uint64_t h = mix({seed, a, b, c, x, y});
  return static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5;
}

struct Box {
  double x0, y0, x1, y1;
  bool inside(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

}  // namespace

RenderedFrame render_frame(const SynthConfig& cfg, const SpriteState& s, bool occlude, Rng* occluder_rng) {
  const std::size_t H = cfg.height, W = cfg.width;
  const double h = static_cast<double>(H), w = static_cast<double>(W);
  const Appearance a = appearance_of(cfg, s.identity_id);
  const TrackMotion m = motion_of(cfg, s.identity_id, s.camera_id, s.track_id);
  const CameraLook cam = camera_of(cfg, s.camera_id);

  const double t = static_cast<double>(s.frame_id);
  const double cx = m.x0 + m.direction * m.speed * t;
  const double swing = std::sin(a.phase + m.phase + a.omega * t);
  const double bh = a.height_frac * h;
  const double feet = 0.97 * h + m.y_jitter;
  const double top = feet - bh;
  const double r = 0.085 * bh;
  const double sw = a.width_frac * w;
  const double stride = a.stride_frac * w;
  const double torso_top = top + 2.0 * r;
  const double torso_bot = torso_top + 0.38 * bh;
  const double lw = 0.38 * sw;
  const double aw = 0.2 * sw;

  const Box torso{cx - sw / 2, torso_top, cx + sw / 2, torso_bot};
  const double l1 = cx - 0.22 * sw + stride * swing, l2 = cx + 0.22 * sw - stride * swing;
  const Box leg1{l1 - lw / 2, torso_bot, l1 + lw / 2, feet};
  const Box leg2{l2 - lw / 2, torso_bot, l2 + lw / 2, feet};
  const double a1 = cx - sw / 2 - aw / 2 - 0.5 * stride * swing, a2 = cx + sw / 2 + aw / 2 + 0.5 * stride * swing;
  const Box arm1{a1 - aw / 2, torso_top, a1 + aw / 2, torso_top + 0.42 * bh};
  const Box arm2{a2 - aw / 2, torso_top, a2 + aw / 2, torso_top + 0.42 * bh};
  const double bag_x = cx - m.direction * (sw / 2 + 0.12 * sw);
  const Box bag{bag_x - 0.15 * sw, torso_top + 0.05 * bh, bag_x + 0.15 * sw, torso_top + 0.3 * bh};
  const double shoe_top = feet - 0.05 * bh;
  const double head_cy = top + r;

  RenderedFrame out;
  out.image = ImageFrame(H, W);
  out.sprite_mask.assign(H * W, 0);
  out.occluder_mask.assign(H * W, 0);
  int bx0 = static_cast<int>(W), by0 = static_cast<int>(H), bx1 = -1, by1 = -1;

  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double pattern;
      if (cam.pattern == 0) {
        pattern = 0.5 + 0.5 * std::sin(px / cam.scale * std::numbers::pi) * (py > 0.75 * h ? 0.3 : 1.0);
      } else {
        pattern = ((static_cast<int>(px / cam.scale) + static_cast<int>(py / cam.scale)) % 2) ? 1.0 : 0.3;
      }
      const double noise = 0.06 * hash_noise(cfg.seed, static_cast<std::uint64_t>(s.camera_id),
                                             static_cast<std::uint64_t>(s.track_id),
                                             static_cast<std::uint64_t>(s.frame_id), x, y);
      Rgb c;
      for (int k = 0; k < 3; ++k) c[k] = cam.base[k] * (0.75 + 0.25 * pattern) + noise;

      bool sprite = true;
      const double dx = px - cx, dy = py - head_cy;
      if (dx * dx + dy * dy <= r * r) {
        c = py < head_cy ? a.hair : a.skin;
      } else if (arm2.inside(px, py) && m.direction > 0) {
        c = a.shirt;
      } else if (arm1.inside(px, py) && m.direction < 0) {
        c = a.shirt;
      } else if (a.has_bag && bag.inside(px, py)) {
        c = a.bag;
      } else if (torso.inside(px, py)) {
        c = a.shirt;
      } else if (leg1.inside(px, py) || leg2.inside(px, py)) {
        c = py >= shoe_top ? a.shoes : a.pants;
      } else if (arm1.inside(px, py) || arm2.inside(px, py)) {
        for (int k = 0; k < 3; ++k) c[k] = 0.85 * a.shirt[k];
      } else {
        sprite = false;
      }
      for (int k = 0; k < 3; ++k) {
        out.image.at(static_cast<std::size_t>(k), y, x) =
            std::clamp(c[k] * cam.brightness * cam.tint[k], 0.0, 1.0);
      }
      if (sprite) {
        out.sprite_mask[y * W + x] = 1;
        bx0 = std::min(bx0, static_cast<int>(x));
        by0 = std::min(by0, static_cast<int>(y));
        bx1 = std::max(bx1, static_cast<int>(x));
        by1 = std::max(by1, static_cast<int>(y));
      }
    }
  }
  out.sprite_box = bx1 < 0 ? Rect{} : Rect{bx0, by0, bx1 - bx0 + 1, by1 - by0 + 1};

  if (occlude && out.sprite_box.area() > 0) {
    if (!occluder_rng) throw ContractError("render_frame: occlusion requested without a generator");
    Rng& rng = *occluder_rng;
    std::vector<std::string> kinds;
    std::stringstream ss(cfg.occluder_kinds);
    for (std::string k; std::getline(ss, k, ',');) {
      k.erase(std::remove_if(k.begin(), k.end(), ::isspace), k.end());
      if (!k.empty()) kinds.push_back(k);
    }
    const Rect& sb = out.sprite_box;
    const std::string kind = kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kinds.size()) - 1))];
    const double f = rng.uniform(0.2, 0.5);
    const int lo_h = static_cast<int>(std::ceil(0.2 * sb.h)), hi_h = static_cast<int>(std::floor(0.5 * sb.h));
    auto bar = [&]() {
      const int bar_h = std::clamp(static_cast<int>(std::lround(f * sb.h)), lo_h, hi_h);
      const int y = sb.y + static_cast<int>(rng.uniform_int(0, sb.h - bar_h));
      return Rect{0, y, static_cast<int>(W), bar_h};
    };
    Rect occ;
    if (kind == "bar") {
      occ = bar();
    } else {
      bool placed = false;
      for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
        const int bw = std::max(1, static_cast<int>(std::lround(rng.uniform(0.6, 1.0) * sb.w)));
        const int bhh = std::clamp(static_cast<int>(std::lround(f * sb.w * sb.h / bw)), 1, sb.h);
        const double covered = static_cast<double>(bw * bhh) / sb.area();
        if (covered < 0.2 || covered > 0.5) continue;
        const int x = sb.x + static_cast<int>(rng.uniform_int(0, sb.w - bw));
        const int y = sb.y + static_cast<int>(rng.uniform_int(0, sb.h - bhh));
        occ = Rect{x, y, bw, bhh};
        placed = true;
      }
      if (!placed) occ = bar();
    }
    for (int y = occ.y; y < occ.y + occ.h; ++y)
      for (int x = occ.x; x < occ.x + occ.w; ++x) {
        out.occluder_mask[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = 1;
        for (std::size_t k = 0; k < 3; ++k) out.image.at(k, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 0.5;
      }
    out.occluder = occ;
  }
  return out;
}

std::size_t SynthManifest::count(const std::string& split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

void write_synth_config(const SynthConfig& cfg, const fs::path& path) {
  RunConfig rc;
  rc.synth = cfg;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# synthetic dataset parameters\n" << format_config(rc, {ConfigGroup::synth});
}

SynthConfig read_synth_config(const fs::path& path) { return load_config_file(path.string()).synth; }

SynthManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  try {
    for (const char* d : {"train", "query", "gallery", "occluded/query", "occluded/gallery"}) {
      fs::create_directories(out_dir / d);
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directories under " + out_dir.string() + ": " + e.what());
  }
  SynthManifest manifest;
  Rng occ_rng(mix({cfg.seed, 0x0CC1ULL}));
  auto emit = [&](const std::string& split, const RenderedFrame& rf, const FrameName& name) {
    ManifestEntry e;
    e.split = split;
    e.file = split + "/" + format_frame_name(name);
    e.name = name;
    e.occluded = rf.occluder.has_value();
    if (rf.occluder) e.occluder = *rf.occluder;
    e.sprite_box = rf.sprite_box;
    write_ppm(out_dir / e.file, rf.image);
    manifest.entries.push_back(e);
  };

  const int n_ids = static_cast<int>(cfg.n_identities);
  const int n_cams = static_cast<int>(cfg.cameras);
  const int n_frames = static_cast<int>(cfg.frames_per_track);
  for (int id = 1; id <= n_ids; ++id) {
    for (int cam = 1; cam <= n_cams; ++cam) {
      for (int f = 0; f < n_frames; ++f) {
        const SpriteState st{id, cam, 0, f};
        emit("train", render_frame(cfg, st, false, nullptr), FrameName{id, cam, 0, f});
      }
    }
  }
  for (int id = 1; id <= n_ids; ++id) {
    for (int cam = 1; cam <= n_cams; ++cam) {
      for (int f = 0; f < n_frames; ++f) {
        const SpriteState st{id, cam, 1, f};
        const FrameName name{id, cam, 1, f};
        const RenderedFrame clean = render_frame(cfg, st, false, nullptr);
        if (cam == 1) {
          emit("query", clean, name);
          const bool occlude = occ_rng.bernoulli(cfg.occlusion_probability);
          emit("occluded/query", occlude ? render_frame(cfg, st, true, &occ_rng) : clean, name);
        } else {
          emit("gallery", clean, name);
          emit("occluded/gallery", clean, name);
        }
      }
    }
  }

  std::ofstream csv(out_dir / "manifest.csv");
  if (!csv) throw IoError("cannot write manifest under " + out_dir.string());
  csv << "split,file,identity,camera,track,frame,occluded,occ_x,occ_y,occ_w,occ_h,box_x,box_y,box_w,box_h\n";
  for (const auto& e : manifest.entries) {
    csv << e.split << ',' << e.file << ',' << e.name.identity_id << ',' << e.name.camera_id << ','
        << e.name.track_id << ',' << e.name.frame_id << ',' << (e.occluded ? 1 : 0) << ',' << e.occluder.x << ','
        << e.occluder.y << ',' << e.occluder.w << ',' << e.occluder.h << ',' << e.sprite_box.x << ','
        << e.sprite_box.y << ',' << e.sprite_box.w << ',' << e.sprite_box.h << '\n';
  }
  write_synth_config(cfg, out_dir / "synth.cfg");
  return manifest;
}

// ---------------------------------------------------------------------------
// loading

std::vector<Sample> load_folder(const fs::path& path, SampleMode mode) {
  std::vector<Sample> out;
  if (!fs::exists(path)) return out;
  if (!fs::is_directory(path)) throw IoError(path.string() + " is not a directory");
  struct Item {
    FrameName name;
    fs::path file;
  };
  std::vector<Item> items;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    const std::string fname = entry.path().filename().string();
    try {
      items.push_back(Item{parse_frame_name(fname), entry.path()});
    } catch (const ParseError&) {
      throw ParseError("malformed frame file name: " + entry.path().string());
    }
  }
  auto key = [](const FrameName& n) { return std::tuple(n.identity_id, n.camera_id, n.track_id, n.frame_id); };
  std::sort(items.begin(), items.end(), [&](const Item& a, const Item& b) { return key(a.name) < key(b.name); });

  for (const auto& it : items) {
    ImageFrame frame = read_ppm(it.file);
    const bool new_sample = mode == SampleMode::image || out.empty() ||
                            out.back().identity_id != it.name.identity_id ||
                            out.back().camera_id != it.name.camera_id || out.back().track_id != it.name.track_id;
    if (new_sample) {
      Sample s;
      s.identity_id = it.name.identity_id;
      s.camera_id = it.name.camera_id;
      s.track_id = it.name.track_id;
      out.push_back(std::move(s));
    }
    Sample& s = out.back();
    if (!s.frames.empty() && !s.frames.front().same_size(frame)) {
      throw ShapeError("frame size differs within track: " + it.file.string());
    }
    s.frames.push_back(std::move(frame));
    s.frame_ids.push_back(it.name.frame_id);
  }
  return out;
}

std::vector<Sample> make_clips(const std::vector<Sample>& tracks, std::size_t length) {
  if (length == 0) throw ConfigError("make_clips: clip length must be positive");
  std::vector<Sample> clips;
  for (const auto& t : tracks) {
    if (t.frames.size() <= length) {
      clips.push_back(t);
      continue;
    }
    for (std::size_t s = 0; s + length <= t.frames.size(); ++s) {
      Sample c;
      c.identity_id = t.identity_id;
      c.camera_id = t.camera_id;
      c.track_id = t.track_id;
      c.frames.assign(t.frames.begin() + static_cast<std::ptrdiff_t>(s),
                      t.frames.begin() + static_cast<std::ptrdiff_t>(s + length));
      c.frame_ids.assign(t.frame_ids.begin() + static_cast<std::ptrdiff_t>(s),
                         t.frame_ids.begin() + static_cast<std::ptrdiff_t>(s + length));
      clips.push_back(std::move(c));
    }
  }
  return clips;
}

std::array<double, 3> channel_means(const std::vector<Sample>& samples) {
  std::array<double, 3> sum{0, 0, 0};
  double count = 0.0;
  for (const auto& s : samples)
    for (const auto& f : s.frames) {
      const std::size_t plane = f.height * f.width;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) sum[c] += f.pixels[c * plane + i];
      count += static_cast<double>(plane);
    }
  if (count == 0.0) return {0.5, 0.5, 0.5};
  return {sum[0] / count, sum[1] / count, sum[2] / count};
}

// ---------------------------------------------------------------------------
// augmentation

namespace {

std::optional<Rect> draw_erase_rect(std::size_t height, std::size_t width, Rng& rng, const AugmentFlags& flags) {
  const double total = static_cast<double>(height * width);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double area = rng.uniform(flags.erase_min_area, flags.erase_max_area) * total;
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(1.0 / 0.3)));
    const int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (h < 1 || w < 1 || h > static_cast<int>(height) || w > static_cast<int>(width)) continue;
    const double frac = static_cast<double>(h * w) / total;
    if (frac < flags.erase_min_area || frac > flags.erase_max_area) continue;
    const int y = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(height) - h));
    const int x = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(width) - w));
    return Rect{x, y, w, h};
  }
  return std::nullopt;
}

ImageFrame apply_erase(const ImageFrame& frame, Rng& rng, const AugmentFlags& flags, AugmentRecord* record) {
  if (!flags.erase || !rng.bernoulli(flags.erase_probability)) return frame;
  auto rect = draw_erase_rect(frame.height, frame.width, rng, flags);
  if (!rect) return frame;
  ImageFrame out = frame;
  for (int y = rect->y; y < rect->y + rect->h; ++y)
    for (int x = rect->x; x < rect->x + rect->w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = flags.fill[c];
  if (record) record->erased = rect;
  return out;
}

}  // namespace

ImageFrame augment(const ImageFrame& frame, Rng& rng, const AugmentFlags& flags, AugmentRecord* record) {
  if (record) *record = AugmentRecord{};
  ImageFrame out = frame;
  if (flags.flip && rng.bernoulli(flags.flip_probability)) {
    out = flip_horizontal(out);
    if (record) record->flipped = true;
  }
  return apply_erase(out, rng, flags, record);
}

std::vector<ImageFrame> augment_clip(const std::vector<ImageFrame>& frames, Rng& rng, const AugmentFlags& flags) {
  const bool flip = flags.flip && rng.bernoulli(flags.flip_probability);
  std::vector<ImageFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(apply_erase(flip ? flip_horizontal(f) : f, rng, flags, nullptr));
  return out;
}

// ---------------------------------------------------------------------------
// batching

std::vector<std::size_t> pk_sample(const std::vector<Sample>& dataset, std::size_t p, std::size_t k, Rng& rng) {
  if (p == 0 || k == 0) throw SamplingError("pk_sample: P and K must be positive");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_id[dataset[i].identity_id].push_back(i);
  std::vector<int> eligible;
  for (const auto& [id, idx] : by_id) {
    if (idx.size() >= k) eligible.push_back(id);
  }
  if (eligible.size() < p) {
    throw SamplingError("pk_sample: need " + std::to_string(p) + " identities with at least " + std::to_string(k) +
                        " samples, only " + std::to_string(eligible.size()) + " qualify");
  }
  rng.shuffle(eligible.begin(), eligible.end());
  std::vector<std::size_t> batch;
  batch.reserve(p * k);
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::size_t> pool = by_id[eligible[i]];
    rng.shuffle(pool.begin(), pool.end());
    batch.insert(batch.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return batch;
}

FramePair pair_frames(const Sample& sample, Rng& rng, const AugmentFlags& flags) {
  if (sample.frames.empty()) throw ContractError("pair_frames: sample has no frames");
  FramePair fp;
  const std::size_t n = sample.frames.size();
  if (n == 1) {
    ImageFrame first = augment(sample.frames[0], rng, flags);
    ImageFrame second = augment(sample.frames[0], rng, flags);
    fp.single = first;
    fp.pair = {std::move(first), std::move(second)};
    fp.augmented_views = true;
    return fp;
  }
  const std::size_t max_delta = std::min<std::size_t>(3, n - 1);
  fp.delta = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_delta)));
  fp.start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 1 - fp.delta)));
  fp.single = sample.frames[fp.start];
  fp.pair = {sample.frames[fp.start], sample.frames[fp.start + fp.delta]};
  return fp;
}

}  // namespace motarfuse
