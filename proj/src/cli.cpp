#include "motarfuse/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "motarfuse/error.hpp"
#include "motarfuse/viz.hpp"

namespace motarfuse {

namespace fs = std::filesystem;

RunConfig resolve_config(const std::string& config_path) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
  if (const char* env = std::getenv("MOTARFUSE_SEED"); env && *env) {
    set_config_value(cfg, "seed", env);
    set_config_value(cfg, "synth_seed", env);
  }
  return cfg;
}

SynthManifest cmd_synth(const std::string& config, const fs::path& out, std::ostream& log) {
  const RunConfig cfg = resolve_config(config);
  SynthManifest m = synth_generate(cfg.synth, out);
  log << "wrote " << m.entries.size() << " frames to " << out.string() << " (train " << m.count("train")
      << ", query " << m.count("query") << ", gallery " << m.count("gallery") << ")\n";
  return m;
}

Checkpoint cmd_train(const TrainArgs& args, std::ostream& log) {
  const auto tracks = load_folder(args.data / "train", SampleMode::video);
  if (tracks.empty()) throw IoError("no training frames under " + (args.data / "train").string());
  TrainOptions opt;
  opt.out_dir = args.out;
  opt.stop_after_epoch = args.stop_after_epoch;
  opt.on_epoch = [&log](const EpochLog& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3zu  phase %d  l_ce %.4f  l_triplet %.4f  l_mc %.4f  total %.4f\n", r.epoch,
                  r.phase, r.l_ce, r.l_triplet, r.l_mc, r.total);
    log << buf << std::flush;
  };
  if (!args.resume.empty()) {
    Checkpoint ck = load_checkpoint(args.resume);
    log << "resuming from epoch " << ck.state.epoch << "\n";
    return resume(std::move(ck), tracks, opt);
  }
  RunConfig cfg = resolve_config(args.config);
  if (args.no_mc_task) cfg.train.use_mc_task = false;
  if (args.no_video_pretrain) cfg.train.use_video_pretrain = false;
  return train(cfg, tracks, opt);
}

RankingResult cmd_eval(const EvalArgs& args, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(args.ckpt);
  const std::size_t max_rank = args.max_rank != 0 ? args.max_rank : ck.config.train.max_rank;
  const RankingResult r = evaluate_folder(ck.net, args.data, ck.config.train.eval_mode, max_rank);
  const fs::path out = args.out.empty() ? args.ckpt.parent_path() : args.out;
  if (!out.empty()) fs::create_directories(out);
  write_ranking_csv(out / "eval.csv", r);
  log << format_ranking_table(r);
  return r;
}

std::vector<SweepRow> cmd_sweep_queries(const SweepArgs& args, std::ostream& log) {
  if (args.lengths.empty()) throw ConfigError("sweep-queries: no query lengths given");
  const RunConfig base = resolve_config(args.config);
  const auto tracks = load_folder(args.data / "train", SampleMode::video);
  if (tracks.empty()) throw IoError("no training frames under " + (args.data / "train").string());
  fs::create_directories(args.out);
  std::vector<SweepRow> rows;
  for (std::size_t q : args.lengths) {
    RunConfig cfg = base;
    cfg.model.query_count = q;
    TrainOptions opt;
    opt.out_dir = args.out / ("queries_" + std::to_string(q));
    const Checkpoint ck = train(cfg, tracks, opt);
    const RankingResult r = evaluate_folder(ck.net, args.data, cfg.train.eval_mode, cfg.train.max_rank);
    rows.push_back(SweepRow{q, r.cmc.front(), r.map});
    char buf[96];
    std::snprintf(buf, sizeof buf, "Q=%-3zu rank1 %.4f  mAP %.4f\n", q, r.cmc.front(), r.map);
    log << buf << std::flush;
  }
  std::ofstream csv(args.out / "sweep.csv");
  if (!csv) throw IoError("cannot write " + (args.out / "sweep.csv").string());
  csv << "queries,rank1,map\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.queries, r.rank1, r.map);
    csv << buf;
  }
  log << "\n  queries | Rank-1 |  mAP\n  --------+--------+-------\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %7zu | %6.1f | %5.1f\n", r.queries, 100.0 * r.rank1, 100.0 * r.map);
    log << buf;
  }
  return rows;
}

AttentionMaps cmd_viz(const VizArgs& args, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(args.ckpt);
  const ImageFrame frame = read_ppm(args.image);
  const AttentionMaps maps = motion_attention_maps(ck.net, frame);
  const auto files = write_attention_maps(maps, frame.height, frame.width, args.out_dir);
  log << "wrote " << files.size() << " attention maps (" << maps.grid_h << "x" << maps.grid_w << " grid) to "
      << args.out_dir.string() << "\n";
  return maps;
}

bool cmd_gradcheck(std::ostream& log, const GradCheckOptions& opt) {
  const auto results = run_gradcheck_suite(opt);
  bool ok = true;
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-4s %-32s max_rel_err %.3e  entries %zu  trials %zu\n", r.passed ? "ok" : "FAIL",
                  r.name.c_str(), r.max_rel_error, r.checked, r.trials);
    log << buf;
    if (!r.passed) log << "     worst: " << r.worst << "\n";
    ok = ok && r.passed;
  }
  log << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (" << results.size() << " cases, tolerance "
      << opt.tolerance << ", eps " << opt.eps << ")\n";
  return ok;
}

namespace {

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const EvaluationError*>(&e)) return "evaluation";
  if (dynamic_cast<const SamplingError*>(&e)) return "sampling";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const ContractError*>(&e)) return "contract";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string config_footer() {
  const RunConfig defaults;
  std::ostringstream os;
  os << "Config file keys (key = value, '#' comments) and defaults:\n";
  for (const auto& k : config_keys()) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "  %-22s %-12s %s\n", k.name.c_str(), get_config_value(defaults, k.name).c_str(),
                  k.help.c_str());
    os << buf;
  }
  os << "Environment: MOTARFUSE_SEED overrides seed and synth_seed.";
  return os.str();
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Motion-aware fusion network for person re-identification"};
  app.require_subcommand(1);
  app.footer(config_footer());

  std::string synth_config;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic walking-sprite dataset");
  synth->add_option("--config", synth_config, "Config file")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  TrainArgs targs;
  std::size_t stop_after = 0;
  auto* tr = app.add_subcommand("train", "Train a model; writes model.ckpt and train_log.csv under --out");
  tr->add_option("--config", targs.config, "Config file")->capture_default_str();
  tr->add_option("--data", targs.data, "Dataset root holding train/")->required();
  tr->add_option("--out", targs.out, "Output directory")->required();
  tr->add_flag("--no-mc-task", targs.no_mc_task, "Drop the motion consistency loss");
  tr->add_flag("--no-video-pretrain", targs.no_video_pretrain, "Skip the video phase");
  tr->add_option("--resume", targs.resume, "Continue from this checkpoint")->capture_default_str();
  tr->add_option("--stop-after", stop_after, "Stop once this many epochs are done (0 = run to the end)")
      ->capture_default_str();

  EvalArgs eargs;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on <data>/query against <data>/gallery");
  ev->add_option("--ckpt", eargs.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eargs.data, "Root holding query/ and gallery/")->required();
  ev->add_option("--max-rank", eargs.max_rank, "Largest CMC rank (0 = checkpoint's max_rank)")->capture_default_str();
  ev->add_option("--out", eargs.out, "Directory for eval.csv (default: the checkpoint's directory)");

  SweepArgs sargs;
  std::string lengths = "2,4,6,8,10,16,32";
  auto* sw = app.add_subcommand("sweep-queries", "Train and evaluate once per motion query count");
  sw->add_option("--config", sargs.config, "Config file")->capture_default_str();
  sw->add_option("--data", sargs.data, "Dataset root")->required();
  sw->add_option("--out", sargs.out, "Output directory")->capture_default_str();
  sw->add_option("--lengths", lengths, "Comma separated query counts")->capture_default_str();
  sargs.out = "sweep";

  VizArgs vargs;
  auto* vz = app.add_subcommand("viz", "Write one attention map per motion query as PGM");
  vz->add_option("--ckpt", vargs.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  vz->add_option("--image", vargs.image, "Input PPM frame")->required()->check(CLI::ExistingFile);
  vz->add_option("--out-dir", vargs.out_dir, "Output directory")->required();

  GradCheckOptions gopt;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and block");
  gc->add_option("--trials", gopt.trials, "Random instances per case")->capture_default_str();
  gc->add_option("--tolerance", gopt.tolerance, "Largest accepted relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      cmd_synth(synth_config, synth_out, std::cout);
    } else if (tr->parsed()) {
      if (stop_after != 0) targs.stop_after_epoch = stop_after;
      cmd_train(targs, std::cout);
    } else if (ev->parsed()) {
      cmd_eval(eargs, std::cout);
    } else if (sw->parsed()) {
      sargs.lengths.clear();
      std::stringstream ss(lengths);
      for (std::string tok; std::getline(ss, tok, ',');) {
        std::size_t used = 0;
        long v = -1;
        try {
          v = std::stol(tok, &used);
        } catch (const std::exception&) {
        }
        if (v <= 0 || used != tok.size()) throw ConfigError("--lengths: '" + tok + "' is not a positive integer");
        sargs.lengths.push_back(static_cast<std::size_t>(v));
      }
      cmd_sweep_queries(sargs, std::cout);
    } else if (vz->parsed()) {
      cmd_viz(vargs, std::cout);
    } else if (gc->parsed()) {
      return cmd_gradcheck(std::cout, gopt) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "motarfuse: error: " << error_kind(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace motarfuse
