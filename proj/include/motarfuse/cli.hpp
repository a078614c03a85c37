#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "motarfuse/eval.hpp"
#include "motarfuse/gradcheck.hpp"
#include "motarfuse/trainer.hpp"
#include "motarfuse/viz.hpp"

namespace motarfuse {

// Config file (or defaults when empty) with the MOTARFUSE_SEED override applied.
RunConfig resolve_config(const std::string& config_path);

struct TrainArgs {
  std::string config;
  std::filesystem::path data;
  std::filesystem::path out;
  bool no_mc_task = false;
  bool no_video_pretrain = false;
  std::string resume;  // checkpoint to continue from
  std::optional<std::size_t> stop_after_epoch;
};

struct EvalArgs {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  std::filesystem::path out;  // empty: the checkpoint's directory
  std::size_t max_rank = 0;   // 0: the checkpoint's max_rank
};

struct SweepArgs {
  std::string config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::vector<std::size_t> lengths{2, 4, 6, 8, 10, 16, 32};
};

struct SweepRow {
  std::size_t queries = 0;
  double rank1 = 0.0;
  double map = 0.0;
};

struct VizArgs {
  std::filesystem::path ckpt;
  std::filesystem::path image;
  std::filesystem::path out_dir;
};

SynthManifest cmd_synth(const std::string& config, const std::filesystem::path& out, std::ostream& log);
Checkpoint cmd_train(const TrainArgs& args, std::ostream& log);
RankingResult cmd_eval(const EvalArgs& args, std::ostream& log);
std::vector<SweepRow> cmd_sweep_queries(const SweepArgs& args, std::ostream& log);
AttentionMaps cmd_viz(const VizArgs& args, std::ostream& log);
// Returns true when every case passes.
bool cmd_gradcheck(std::ostream& log, const GradCheckOptions& opt = {});

// Full command line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace motarfuse
