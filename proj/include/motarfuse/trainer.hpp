#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "motarfuse/data.hpp"
#include "motarfuse/network.hpp"

namespace motarfuse {

// ---- optimizer ----

struct AdamMoments {
  std::vector<double> m, v;
};

struct AdamState {
  std::vector<AdamMoments> slots;  // one per parameter, in parameter order
  std::uint64_t t = 0;             // completed steps
};

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of a single tensor; `t` is the 1-based step.
void adam_step(std::vector<double>& param, const std::vector<double>& grad, AdamMoments& moments, std::uint64_t t,
               const AdamHyper& h);

// Updates every parameter from its accumulated gradient and advances state.t.
void adam_step(ParameterSet& params, AdamState& state, const AdamHyper& h);

// ---- checkpoints ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  int phase = 2;
  double l_ce = 0.0;
  double l_triplet = 0.0;
  double l_mc = 0.0;
  double total = 0.0;
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<EpochLog> log;
};

struct Checkpoint {
  RunConfig config;
  Network net;
  AdamState adam;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const Network& net,
                     const AdamState& adam, const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- training ----

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  // Stop (and checkpoint) once this many epochs have completed.
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const EpochLog&)> on_epoch;
};

// Class index per identity, in increasing identity order.
std::map<int, int> class_map(const std::vector<Sample>& samples);

// Phase 1 trains on clips of the training tracks (T = clip_length), phase 2 on
// single frames drawn from the same clips. Both phases use PK batches.
Checkpoint train(const RunConfig& cfg, const std::vector<Sample>& tracks, const TrainOptions& opt = {});
Checkpoint resume(Checkpoint ckpt, const std::vector<Sample>& tracks, const TrainOptions& opt = {});

void write_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace motarfuse
