#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "motarfuse/data.hpp"
#include "motarfuse/error.hpp"
#include "support.hpp"

namespace motarfuse {
namespace {

namespace fs = std::filesystem;
using testing::random_frame;
using testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SynthConfig small_synth() {
  SynthConfig s;
  s.n_identities = 4;
  s.frames_per_track = 4;
  s.occlusion_probability = 1.0;
  return s;
}

TEST(FrameName, ParsesFields) {
  const FrameName n = parse_frame_name("0003_c1_t02_f005.ppm");
  EXPECT_EQ(n.identity_id, 3);
  EXPECT_EQ(n.camera_id, 1);
  EXPECT_EQ(n.track_id, 2);
  EXPECT_EQ(n.frame_id, 5);
  EXPECT_EQ(format_frame_name(n), "0003_c1_t02_f005.ppm");
}

TEST(FrameName, RejectsMalformedNames) {
  for (const char* bad : {"3_c1_t02_f005.ppm", "0003_c1_t02_f005.png", "0003-c1-t02-f005.ppm", "0003_c1_t02.ppm"}) {
    EXPECT_THROW(parse_frame_name(bad), ParseError) << bad;
  }
}

TEST(Synth, CountsMatchConfiguration) {
  TempDir dir("synth_counts");
  SynthConfig s;  // 16 identities, 8 frames, 2 cameras
  const SynthManifest m = synth_generate(s, dir.path());
  EXPECT_EQ(m.count("train"), 16u * 8u * 2u);
  EXPECT_EQ(m.count("query"), 16u * 8u);
  EXPECT_EQ(m.count("gallery"), 16u * 8u);
  EXPECT_EQ(m.count("occluded/query"), m.count("query"));
  EXPECT_EQ(m.count("occluded/gallery"), m.count("gallery"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "train")) files += e.is_regular_file();
  EXPECT_EQ(files, m.count("train"));
  EXPECT_TRUE(fs::exists(dir / "manifest.csv"));
  EXPECT_EQ(read_synth_config(dir / "synth.cfg").n_identities, 16u);
}

TEST(Synth, SameSeedGivesIdenticalBytes) {
  TempDir a("synth_a"), b("synth_b");
  const SynthConfig s = small_synth();
  const SynthManifest ma = synth_generate(s, a.path());
  synth_generate(s, b.path());
  for (const auto& e : ma.entries) EXPECT_EQ(slurp(a / e.file), slurp(b / e.file)) << e.file;
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
}

TEST(Synth, DifferentSeedsDiffer) {
  TempDir a("synth_s1"), b("synth_s2");
  SynthConfig s = small_synth();
  synth_generate(s, a.path());
  s.seed += 1;
  synth_generate(s, b.path());
  EXPECT_NE(slurp(a / "train/0001_c1_t00_f000.ppm"), slurp(b / "train/0001_c1_t00_f000.ppm"));
}

TEST(Synth, NoOcclusionMeansNoOccluderPixels) {
  SynthConfig s = small_synth();
  s.occlusion_probability = 0.0;
  TempDir dir("synth_noocc");
  const SynthManifest m = synth_generate(s, dir.path());
  for (const auto& e : m.entries) {
    EXPECT_FALSE(e.occluded) << e.file;
    EXPECT_EQ(e.occluder.area(), 0);
  }
  Rng rng(1);
  for (int f = 0; f < 4; ++f) {
    const RenderedFrame r = render_frame(s, SpriteState{1, 1, 1, f}, false, &rng);
    EXPECT_FALSE(r.occluder.has_value());
    for (auto v : r.occluder_mask) EXPECT_EQ(v, 0);
  }
}

TEST(Synth, OccludersCoverTwentyToFiftyPercentOfSprite) {
  for (const char* kinds : {"bar", "box", "bar,box"}) {
    SynthConfig s = small_synth();
    s.occluder_kinds = kinds;
    Rng rng(5);
    for (int id = 1; id <= 4; ++id)
      for (int f = 0; f < 8; ++f) {
        const RenderedFrame r = render_frame(s, SpriteState{id, 1, 1, f}, true, &rng);
        ASSERT_TRUE(r.occluder.has_value());
        const Rect& box = r.sprite_box;
        int covered = 0;
        for (int y = box.y; y < box.y + box.h; ++y)
          for (int x = box.x; x < box.x + box.w; ++x) covered += r.occluder_mask[static_cast<std::size_t>(y) * s.width + x];
        const double frac = static_cast<double>(covered) / box.area();
        EXPECT_GE(frac, 0.2) << kinds;
        EXPECT_LE(frac, 0.5) << kinds;
      }
  }
}

TEST(Synth, OccludedFrameMatchesCleanOutsideOccluder) {
  const SynthConfig s = small_synth();
  Rng rng(9);
  for (int f = 0; f < 4; ++f) {
    const SpriteState st{2, 1, 1, f};
    const RenderedFrame clean = render_frame(s, st, false, nullptr);
    const RenderedFrame occ = render_frame(s, st, true, &rng);
    ASSERT_TRUE(occ.occluder.has_value());
    EXPECT_EQ(clean.sprite_mask, occ.sprite_mask);
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        const bool inside = occ.occluder->contains(static_cast<int>(x), static_cast<int>(y));
        for (std::size_t c = 0; c < 3; ++c) {
          if (inside) {
            EXPECT_EQ(occ.image.at(c, y, x), 0.5);
          } else {
            EXPECT_EQ(occ.image.at(c, y, x), clean.image.at(c, y, x));
          }
        }
      }
  }
}

TEST(Synth, UnwritableRootIsIoError) {
  TempDir dir("synth_io");
  std::ofstream(dir / "blocker") << "x";
  EXPECT_THROW(synth_generate(small_synth(), dir / "blocker"), IoError);
}

TEST(LoadFolder, RoundTripPreservesCountsAndIds) {
  TempDir dir("load_rt");
  const SynthConfig s = small_synth();
  const SynthManifest m = synth_generate(s, dir.path());
  const auto images = load_folder(dir / "train", SampleMode::image);
  EXPECT_EQ(images.size(), m.count("train"));
  const auto tracks = load_folder(dir / "train", SampleMode::video);
  EXPECT_EQ(tracks.size(), s.n_identities * s.cameras);
  std::set<int> ids;
  for (const auto& t : tracks) {
    ids.insert(t.identity_id);
    EXPECT_EQ(t.frames.size(), s.frames_per_track);
    EXPECT_TRUE(std::is_sorted(t.frame_ids.begin(), t.frame_ids.end()));
  }
  EXPECT_EQ(ids, (std::set<int>{1, 2, 3, 4}));
  const ImageFrame direct = read_ppm(dir / "train/0003_c2_t00_f002.ppm");
  const auto it = std::find_if(tracks.begin(), tracks.end(),
                               [](const Sample& t) { return t.identity_id == 3 && t.camera_id == 2; });
  ASSERT_NE(it, tracks.end());
  EXPECT_EQ(it->frames[2], direct);
}

TEST(LoadFolder, EmptyOrMissingFolderGivesEmptyList) {
  TempDir dir("load_empty");
  fs::create_directories(dir / "query");
  EXPECT_TRUE(load_folder(dir / "query", SampleMode::image).empty());
  EXPECT_TRUE(load_folder(dir / "nothing", SampleMode::video).empty());
}

TEST(LoadFolder, MalformedNameIsParseErrorWithPath) {
  TempDir dir("load_bad");
  write_ppm(dir / "0001_c1_t00_f000.ppm", ImageFrame(8, 4, 0.2));
  write_ppm(dir / "person.ppm", ImageFrame(8, 4, 0.2));
  try {
    load_folder(dir.path(), SampleMode::image);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / "person.ppm").string()), std::string::npos) << e.what();
  }
}

TEST(LoadFolder, FrameSizeChangeWithinTrackIsShapeError) {
  TempDir dir("load_size");
  write_ppm(dir / "0001_c1_t00_f000.ppm", ImageFrame(8, 4, 0.2));
  write_ppm(dir / "0001_c1_t00_f001.ppm", ImageFrame(8, 8, 0.2));
  EXPECT_THROW(load_folder(dir.path(), SampleMode::video), ShapeError);
}

TEST(Clips, SlidingWindowsWithStrideOne) {
  Sample t;
  t.identity_id = 3;
  for (int f = 0; f < 6; ++f) {
    t.frames.push_back(ImageFrame(4, 4, f / 10.0));
    t.frame_ids.push_back(f);
  }
  Sample shorter = t;
  shorter.frames.resize(2);
  shorter.frame_ids.resize(2);
  const auto clips = make_clips({t, shorter}, 4);
  ASSERT_EQ(clips.size(), 3u + 1u);
  EXPECT_EQ(clips[2].frame_ids, (std::vector<int>{2, 3, 4, 5}));
  EXPECT_EQ(clips[3].frames.size(), 2u);
}

TEST(Augment, FlagsOffLeaveFrameUnchanged) {
  Rng rng(1);
  const ImageFrame f = random_frame(16, 8, rng);
  AugmentFlags off;
  off.flip = false;
  off.erase = false;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment(f, rng, off), f);
}

TEST(Augment, DoubleFlipIsIdentity) {
  Rng rng(2);
  const ImageFrame f = random_frame(16, 8, rng);
  EXPECT_NE(flip_horizontal(f), f);
  EXPECT_EQ(flip_horizontal(flip_horizontal(f)), f);
}

TEST(Augment, EraseAreaWithinBounds) {
  Rng rng(3);
  const ImageFrame f(64, 32, 0.9);
  AugmentFlags flags;
  flags.flip = false;
  flags.erase_probability = 1.0;
  flags.fill = {0.1, 0.2, 0.3};
  int erased = 0;
  for (int i = 0; i < 1000; ++i) {
    AugmentRecord rec;
    const ImageFrame out = augment(f, rng, flags, &rec);
    if (!rec.erased) continue;
    ++erased;
    const double frac = static_cast<double>(rec.erased->area()) / (64.0 * 32.0);
    EXPECT_GE(frac, 0.02);
    EXPECT_LE(frac, 0.20);
    int filled = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 32; ++x) filled += out.at(1, y, x) == 0.2;
    EXPECT_EQ(filled, rec.erased->area());
  }
  EXPECT_GT(erased, 990);
}

TEST(Augment, FlipAndEraseEachFireAboutHalfTheTime) {
  Rng rng(4);
  const ImageFrame f(16, 8, 0.3);
  int flips = 0, erases = 0;
  for (int i = 0; i < 4000; ++i) {
    AugmentRecord rec;
    augment(f, rng, AugmentFlags{}, &rec);
    flips += rec.flipped;
    erases += rec.erased.has_value();
  }
  EXPECT_NEAR(flips / 4000.0, 0.5, 0.03);
  EXPECT_NEAR(erases / 4000.0, 0.5, 0.03);
}

std::vector<Sample> labelled(const std::vector<std::pair<int, int>>& counts) {
  std::vector<Sample> out;
  for (auto [id, n] : counts)
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.identity_id = id;
      s.frames.push_back(ImageFrame(4, 4, 0.1));
      out.push_back(s);
    }
  return out;
}

TEST(PkSample, PaperBatchShape) {
  std::vector<std::pair<int, int>> counts;
  for (int id = 0; id < 12; ++id) counts.push_back({id, 6});
  const auto data = labelled(counts);
  Rng rng(5);
  const auto batch = pk_sample(data, 8, 4, rng);
  ASSERT_EQ(batch.size(), 32u);
  std::map<int, int> per;
  for (auto i : batch) ++per[data[i].identity_id];
  EXPECT_EQ(per.size(), 8u);
}

TEST(PkSample, EveryBatchHasKPerIdentity) {
  const auto data = labelled({{1, 4}, {2, 9}, {3, 5}, {4, 2}, {5, 7}, {6, 4}});
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto batch = pk_sample(data, 3, 4, rng);
    std::map<int, int> per;
    std::set<std::size_t> unique(batch.begin(), batch.end());
    EXPECT_EQ(unique.size(), batch.size());
    for (auto i : batch) ++per[data[i].identity_id];
    EXPECT_EQ(per.size(), 3u);
    for (auto [id, n] : per) {
      EXPECT_EQ(n, 4);
      EXPECT_NE(id, 4);
    }
  }
}

TEST(PkSample, MinimalBatch) {
  const auto data = labelled({{1, 2}, {2, 2}});
  Rng rng(7);
  EXPECT_EQ(pk_sample(data, 2, 2, rng).size(), 4u);
}

TEST(PkSample, ShortfallIsSamplingError) {
  const auto data = labelled({{1, 4}, {2, 3}, {3, 4}});
  Rng rng(8);
  try {
    pk_sample(data, 3, 4, rng);
    FAIL();
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("only 2"), std::string::npos) << e.what();
  }
}

TEST(PkSample, ReproducibleFromSeed) {
  const auto data = labelled({{1, 5}, {2, 5}, {3, 5}, {4, 5}});
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(pk_sample(data, 2, 3, a), pk_sample(data, 2, 3, b));
}

Sample track_of(std::size_t n) {
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.frames.push_back(ImageFrame(4, 4, static_cast<double>(i) / 10.0));
    s.frame_ids.push_back(static_cast<int>(i));
  }
  return s;
}

TEST(PairFrames, TwoFrameTrackForcesDeltaOne) {
  Rng rng(10);
  const Sample s = track_of(2);
  for (int i = 0; i < 50; ++i) {
    const FramePair p = pair_frames(s, rng, AugmentFlags{});
    EXPECT_EQ(p.delta, 1u);
    EXPECT_EQ(p.start, 0u);
    EXPECT_EQ(p.single, s.frames[0]);
    EXPECT_EQ(p.pair[1], s.frames[1]);
  }
}

TEST(PairFrames, ImageSampleGivesTwoAugmentedViews) {
  Rng rng(11);
  Sample s;
  s.frames.push_back(random_frame(16, 8, rng));
  bool saw_difference = false;
  for (int i = 0; i < 20; ++i) {
    const FramePair p = pair_frames(s, rng, AugmentFlags{});
    EXPECT_TRUE(p.augmented_views);
    EXPECT_EQ(p.delta, 0u);
    EXPECT_EQ(p.single, p.pair[0]);
    saw_difference |= p.pair[0] != p.pair[1];
  }
  EXPECT_TRUE(saw_difference);
}

TEST(PairFrames, DeltaUniformOnAchievableSet) {
  Rng rng(12);
  const Sample s = track_of(8);
  std::map<std::size_t, int> freq;
  const int draws = 3000;
  for (int i = 0; i < draws; ++i) {
    const FramePair p = pair_frames(s, rng, AugmentFlags{});
    ASSERT_GE(p.delta, 1u);
    ASSERT_LE(p.delta, 3u);
    ASSERT_LT(p.start + p.delta, 8u);
    EXPECT_EQ(p.pair[1], s.frames[p.start + p.delta]);
    ++freq[p.delta];
  }
  // Chi-square against uniform over {1,2,3}; 13.8 is the 0.001 quantile at 2 dof.
  double chi2 = 0.0;
  for (std::size_t d = 1; d <= 3; ++d) {
    const double expect = draws / 3.0;
    chi2 += (freq[d] - expect) * (freq[d] - expect) / expect;
  }
  EXPECT_LT(chi2, 13.8);
}

TEST(ChannelMeans, AveragesEveryPixel) {
  Sample s;
  ImageFrame a(2, 2, 0.0), b(2, 2, 1.0);
  a.at(2, 0, 0) = 1.0;
  s.frames = {a, b};
  const auto m = channel_means({s});
  EXPECT_DOUBLE_EQ(m[0], 0.5);
  EXPECT_DOUBLE_EQ(m[2], 5.0 / 8.0);
}

}  // namespace
}  // namespace motarfuse
