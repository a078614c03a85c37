#include "motarfuse/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "motarfuse/error.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::vector<double>& param, const std::vector<double>& grad, AdamMoments& mo, std::uint64_t t,
               const AdamHyper& h) {
  const std::size_t n = param.size();
  if (mo.m.empty() && mo.v.empty()) {
    mo.m.assign(n, 0.0);
    mo.v.assign(n, 0.0);
  }
  if (grad.size() != n || mo.m.size() != n || mo.v.size() != n) {
    throw ContractError("adam_step: sizes differ, param " + std::to_string(n) + ", grad " +
                        std::to_string(grad.size()) + ", moments " + std::to_string(mo.m.size()));
  }
  if (t == 0) throw ContractError("adam_step: step counter starts at 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    mo.m[i] = h.beta1 * mo.m[i] + (1.0 - h.beta1) * grad[i];
    mo.v[i] = h.beta2 * mo.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double mhat = mo.m[i] / c1;
    const double vhat = mo.v[i] / c2;
    param[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

void adam_step(ParameterSet& params, AdamState& state, const AdamHyper& h) {
  auto& entries = params.entries();
  if (state.slots.empty()) state.slots.resize(entries.size());
  if (state.slots.size() != entries.size()) {
    throw ContractError("adam_step: optimizer holds " + std::to_string(state.slots.size()) + " slots for " +
                        std::to_string(entries.size()) + " parameters");
  }
  ++state.t;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].value;
    adam_step(p.storage(), p.grad(), state.slots[i], state.t, h);
  }
}

// ---------------------------------------------------------------------------
// checkpoint IO

namespace {

constexpr char kMagic[4] = {'M', 'T', 'R', 'F'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void record(const std::string& name, const Shape& shape, std::span<const double> data) {
    bytes(name);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) u64(d);
    for (double v : data) f64(v);
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}
  bool done() const { return pos_ == data_.size(); }
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw CheckpointError("truncated checkpoint " + origin_);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  std::vector<char> data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

struct Record {
  Shape shape;
  std::vector<double> data;
};

std::vector<double> encode_text(const std::string& s) {
  std::vector<double> out;
  out.reserve(s.size());
  for (unsigned char c : s) out.push_back(static_cast<double>(c));
  return out;
}

std::string decode_text(const std::vector<double>& v) {
  std::string s;
  s.reserve(v.size());
  for (double d : v) s.push_back(static_cast<char>(static_cast<unsigned char>(d)));
  return s;
}

constexpr std::size_t kLogColumns = 6;

}  // namespace

void save_checkpoint(const fs::path& path, const RunConfig& cfg, const Network& net, const AdamState& adam,
                     const TrainState& state) {
  RunConfig snapshot = cfg;
  snapshot.model = net.config();
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.bytes(format_config(snapshot, {ConfigGroup::model, ConfigGroup::train}));

  const auto& entries = net.params().entries();
  for (const auto& e : entries) w.record(e.name, e.value.shape(), e.value.data());
  for (std::size_t i = 0; i < adam.slots.size() && i < entries.size(); ++i) {
    if (adam.slots[i].m.empty()) continue;
    w.record("adam.m." + entries[i].name, entries[i].value.shape(), adam.slots[i].m);
    w.record("adam.v." + entries[i].name, entries[i].value.shape(), adam.slots[i].v);
  }
  const double t = static_cast<double>(adam.t);
  w.record("adam.t", Shape{1}, std::span<const double>(&t, 1));
  const double epoch = static_cast<double>(state.epoch), step = static_cast<double>(state.step);
  w.record("state.epoch", Shape{1}, std::span<const double>(&epoch, 1));
  w.record("state.step", Shape{1}, std::span<const double>(&step, 1));
  if (!state.rng_state.empty()) {
    const auto rng = encode_text(state.rng_state);
    w.record("state.rng", Shape{rng.size()}, rng);
  }
  if (!state.log.empty()) {
    std::vector<double> rows;
    for (const auto& r : state.log) {
      rows.insert(rows.end(), {static_cast<double>(r.epoch), static_cast<double>(r.phase), r.l_ce, r.l_triplet,
                               r.l_mc, r.total});
    }
    w.record("state.log", Shape{state.log.size(), kLogColumns}, rows);
  }

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.raw(4) != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic): " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  RunConfig cfg;
  apply_config_text(cfg, r.bytes());

  std::map<std::string, Record> records;
  while (!r.done()) {
    std::string name = r.bytes();
    Record rec;
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("corrupt record '" + name + "' in " + path.string());
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.shape.push_back(static_cast<std::size_t>(r.u64()));
      n *= rec.shape.back();
    }
    r.need(n * 8);
    rec.data.resize(n);
    for (auto& v : rec.data) v = r.f64();
    records.emplace(std::move(name), std::move(rec));
  }

  Checkpoint ck{cfg, Network(cfg.model, cfg.model.num_classes, 0), {}, {}};
  auto& entries = ck.net.params().entries();
  ck.adam.slots.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    auto it = records.find(e.name);
    if (it == records.end()) throw CheckpointError("checkpoint lacks parameter '" + e.name + "'");
    if (it->second.shape != e.value.shape()) {
      throw CheckpointError("parameter '" + e.name + "' has shape " + shape_string(it->second.shape) +
                            ", model expects " + shape_string(e.value.shape()));
    }
    e.value.storage() = it->second.data;
    auto m = records.find("adam.m." + e.name), v = records.find("adam.v." + e.name);
    if (m != records.end() && v != records.end()) {
      ck.adam.slots[i].m = m->second.data;
      ck.adam.slots[i].v = v->second.data;
    }
  }
  auto scalar = [&](const char* name) -> double {
    auto it = records.find(name);
    return it == records.end() || it->second.data.empty() ? 0.0 : it->second.data[0];
  };
  ck.adam.t = static_cast<std::uint64_t>(scalar("adam.t"));
  ck.state.epoch = static_cast<std::size_t>(scalar("state.epoch"));
  ck.state.step = static_cast<std::uint64_t>(scalar("state.step"));
  if (auto it = records.find("state.rng"); it != records.end()) ck.state.rng_state = decode_text(it->second.data);
  if (auto it = records.find("state.log"); it != records.end()) {
    const auto& d = it->second.data;
    for (std::size_t i = 0; i + kLogColumns <= d.size(); i += kLogColumns) {
      ck.state.log.push_back(EpochLog{static_cast<std::size_t>(d[i]), static_cast<int>(d[i + 1]), d[i + 2],
                                      d[i + 3], d[i + 4], d[i + 5]});
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// training loop

std::map<int, int> class_map(const std::vector<Sample>& samples) {
  std::map<int, int> m;
  for (const auto& s : samples) m.emplace(s.identity_id, 0);
  int next = 0;
  for (auto& [id, cls] : m) cls = next++;
  return m;
}

void write_log_csv(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,l_ce,l_triplet,l_mc,total\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.l_ce, r.l_triplet, r.l_mc, r.total);
    out << buf;
  }
}

namespace {

struct StepLosses {
  double l_ce = 0.0, l_triplet = 0.0, l_mc = 0.0, total = 0.0;
};

// Motion tokens of a frame pair, computed off the main tape so no gradient
// reaches them.
Tensor pair_motion_target(const Network& net, const Tensor& enc_a, const Tensor& enc_b) {
  Tape tape(false);
  Binder b(tape, net.params(), false);
  std::vector<TokenSequence> seq(2);
  const std::size_t n = enc_a.rows();
  for (int t = 0; t < 2; ++t) {
    seq[t].tokens = tape.constant(t == 0 ? enc_a : enc_b);
    seq[t].roles.assign(n, TokenRole::patch);
    seq[t].frame_index.assign(n, t);
  }
  TokenSequence visual = adapt(b, net.backbone(), seq);
  return motion_tokens(b, net.motion(), visual, SourceMode::frame_pair).tokens.value();
}

Tensor encode_value(const Network& net, const ImageFrame& frame) {
  Tape tape(false);
  Binder b(tape, net.params(), false);
  return net.encode_frame(b, frame).tokens.value();
}

class Loop {
 public:
  Loop(const RunConfig& cfg, const std::vector<Sample>& tracks, Checkpoint& ck, const TrainOptions& opt)
      : cfg_(cfg), ck_(ck), opt_(opt), classes_(class_map(tracks)) {
    clips_ = make_clips(tracks, cfg.train.clip_length);
    for (const auto& c : clips_) labels_.push_back(classes_.at(c.identity_id));
    const std::size_t batch = cfg.train.ids_per_batch * cfg.train.samples_per_id;
    steps_per_epoch_ = cfg.train.steps_per_epoch != 0 ? cfg.train.steps_per_epoch
                                                       : std::max<std::size_t>(1, clips_.size() / batch);
    flags_.flip = cfg.train.augment_flip;
    flags_.erase = cfg.train.augment_erase;
    flags_.fill = channel_means(tracks);
    hyper_ = AdamHyper{cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps};
  }

  void run() {
    const TrainConfig& tc = cfg_.train;
    const std::size_t phase1 = tc.effective_phase1_epochs();
    Rng rng(tc.seed);
    if (!ck_.state.rng_state.empty()) rng.set_state(ck_.state.rng_state);
    if (!opt_.out_dir.empty()) fs::create_directories(opt_.out_dir);

    while (ck_.state.epoch < tc.epochs) {
      if (opt_.stop_after_epoch && ck_.state.epoch >= *opt_.stop_after_epoch) break;
      const std::size_t epoch = ck_.state.epoch + 1;
      const int phase = ck_.state.epoch < phase1 ? 1 : 2;
      StepLosses sum;
      for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
        const StepLosses l = step(rng, phase, epoch, s);
        sum.l_ce += l.l_ce;
        sum.l_triplet += l.l_triplet;
        sum.l_mc += l.l_mc;
        sum.total += l.total;
      }
      const double inv = 1.0 / static_cast<double>(steps_per_epoch_);
      EpochLog row{epoch, phase, sum.l_ce * inv, sum.l_triplet * inv, sum.l_mc * inv, sum.total * inv};
      ck_.state.log.push_back(row);
      ck_.state.epoch = epoch;
      ck_.state.rng_state = rng.state();
      if (!opt_.out_dir.empty()) {
        write_log_csv(opt_.out_dir / "train_log.csv", ck_.state.log);
        if (tc.checkpoint_every != 0 && epoch % tc.checkpoint_every == 0) {
          char name[32];
          std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch);
          save_checkpoint(opt_.out_dir / name, cfg_, ck_.net, ck_.adam, ck_.state);
        }
      }
      if (opt_.on_epoch) opt_.on_epoch(row);
    }
    if (!opt_.out_dir.empty()) save_checkpoint(opt_.out_dir / "model.ckpt", cfg_, ck_.net, ck_.adam, ck_.state);
  }

 private:
  double learning_rate() const {
    const double warmup = static_cast<double>(cfg_.train.warmup_epochs * steps_per_epoch_);
    if (warmup <= 0.0) return cfg_.train.lr;
    return cfg_.train.lr * std::min(1.0, static_cast<double>(ck_.state.step + 1) / warmup);
  }

  StepLosses step(Rng& rng, int phase, std::size_t epoch, std::size_t s) {
    const TrainConfig& tc = cfg_.train;
    const ModelConfig& mc = ck_.net.config();
    const bool use_mc = tc.use_mc_task;
    const Network& net = ck_.net;
    const auto batch = pk_sample(clips_, tc.ids_per_batch, tc.samples_per_id, rng);

    Tape tape;
    Binder b(tape, net.params());
    std::vector<Var> feats, logits, mc_terms;
    std::vector<int> labels;
    AugmentFlags no_erase = flags_;
    no_erase.erase = false;

    for (std::size_t idx : batch) {
      const Sample& clip = clips_[idx];
      labels.push_back(labels_[idx]);
      if (phase == 1) {
        const std::vector<ImageFrame> frames = augment_clip(clip.frames, rng, flags_);
        std::vector<TokenSequence> enc;
        for (std::size_t t = 0; t < frames.size(); ++t) enc.push_back(net.encode_frame(b, frames[t], static_cast<int>(t)));
        const ForwardResult r = net.forward_encoded(b, enc);
        feats.push_back(r.fused.h_m_cls);
        logits.push_back(r.logits);
        // Drawn with or without the motion task so both settings see the same batches.
        Sample view = clip;
        view.frames = frames;
        const FramePair fp = pair_frames(view, rng, no_erase);
        if (use_mc) {
          TokenSequence single = enc[fp.start];
          single.frame_index.assign(single.size(), 0);
          const MotionTokens m_single =
              motion_tokens(b, net.motion(), adapt(b, net.backbone(), {single}), SourceMode::single_frame);
          Var target = tape.constant(
              pair_motion_target(net, enc[fp.start].tokens.value(), enc[fp.start + fp.delta].tokens.value()));
          mc_terms.push_back(motion_consistency_loss(m_single.tokens, target, mc.mc_loss));
        }
      } else {
        const FramePair fp = pair_frames(clip, rng, no_erase);
        const bool flip = flags_.flip && rng.bernoulli(flags_.flip_probability);
        auto view = [&](const ImageFrame& f) { return flip ? flip_horizontal(f) : f; };
        AugmentFlags erase_only = flags_;
        erase_only.flip = false;
        const ImageFrame single = augment(view(fp.single), rng, erase_only);
        const ForwardResult r = net.forward(b, {single});
        feats.push_back(r.fused.h_m_cls);
        logits.push_back(r.logits);
        if (use_mc) {
          Var target = tape.constant(
              pair_motion_target(net, encode_value(net, view(fp.pair[0])), encode_value(net, view(fp.pair[1]))));
          mc_terms.push_back(motion_consistency_loss(r.motion.tokens, target, mc.mc_loss));
        }
      }
    }

    Var f = ops::concat_rows(feats);
    Var l_ce = ops::cross_entropy_logits(ops::concat_rows(logits), labels);
    Var l_t = triplet_loss(f, labels, mc.margin);
    std::optional<Var> l_mc;
    if (use_mc) {
      Var acc = mc_terms.front();
      for (std::size_t i = 1; i < mc_terms.size(); ++i) acc = ops::add(acc, mc_terms[i]);
      l_mc = ops::scale(acc, 1.0 / static_cast<double>(mc_terms.size()));
    }
    Var total = total_loss(l_ce, l_t, l_mc, mc.lambda_g, mc.lambda_mc);
    StepLosses out{l_ce.value().item(), l_t.value().item(), l_mc ? l_mc->value().item() : 0.0, total.value().item()};
    if (!std::isfinite(out.total)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s + 1) +
                          " (global step " + std::to_string(ck_.state.step + 1) + ", phase " +
                          std::to_string(phase) + ")");
    }
    tape.backward(total);
    ck_.net.params().zero_grad();
    b.accumulate_grads(ck_.net.params());
    AdamHyper h = hyper_;
    h.lr = learning_rate();
    adam_step(ck_.net.params(), ck_.adam, h);
    ++ck_.state.step;
    return out;
  }

  const RunConfig& cfg_;
  Checkpoint& ck_;
  const TrainOptions& opt_;
  std::map<int, int> classes_;
  std::vector<Sample> clips_;
  std::vector<int> labels_;
  std::size_t steps_per_epoch_ = 1;
  AugmentFlags flags_;
  AdamHyper hyper_;
};

}  // namespace

Checkpoint train(const RunConfig& cfg, const std::vector<Sample>& tracks, const TrainOptions& opt) {
  cfg.model.validate();
  cfg.train.validate();
  if (tracks.empty()) throw ContractError("train: no training tracks");
  const auto classes = class_map(tracks);
  std::size_t n_classes = cfg.model.num_classes;
  if (n_classes == 0) n_classes = classes.size();
  if (n_classes < classes.size()) {
    throw ConfigError("num_classes " + std::to_string(n_classes) + " is below the " +
                      std::to_string(classes.size()) + " training identities");
  }
  RunConfig run = cfg;
  run.model.num_classes = n_classes;
  Checkpoint ck{run, Network(run.model, n_classes, cfg.train.seed), {}, {}};
  return resume(std::move(ck), tracks, opt);
}

Checkpoint resume(Checkpoint ck, const std::vector<Sample>& tracks, const TrainOptions& opt) {
  if (tracks.empty()) throw ContractError("train: no training tracks");
  const RunConfig cfg = ck.config;
  Loop loop(cfg, tracks, ck, opt);
  loop.run();
  return ck;
}

}  // namespace motarfuse
