// SPDX-License-Identifier: Apache-2.0
//
// xmc: command-line front end for the low-precision XMC training engine.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmc/dataset.hpp"
#include "xmc/error.hpp"
#include "xmc/memory_plan.hpp"
#include "xmc/metrics.hpp"
#include "xmc/trainer.hpp"

#ifndef XMC_VERSION
#define XMC_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xmc;

namespace {

// Raised for bad flag values after parsing; reported with exit code 2.
struct FlagError : std::runtime_error {
  FlagError(const std::string& flag, const std::string& what) : std::runtime_error(flag + ": " + what) {}
};

CLI::Validator positive(const std::string& what) {
  return CLI::Validator(
      [what](std::string& s) -> std::string {
        try {
          std::size_t pos = 0;
          const double v = std::stod(s, &pos);
          if (pos == s.size() && v > 0) return {};
        } catch (const std::exception&) {
        }
        return what + " must be positive";
      },
      "POSITIVE");
}

CLI::Validator probability(const std::string& what) {
  return CLI::Validator(
      [what](std::string& s) -> std::string {
        try {
          std::size_t pos = 0;
          const double v = std::stod(s, &pos);
          if (pos == s.size() && v >= 0 && v < 1) return {};
        } catch (const std::exception&) {
        }
        return what + " must be in [0, 1)";
      },
      "PROB");
}

FloatFormat parse_format_flag(const std::string& flag, const std::string& value) {
  try {
    return FloatFormat::parse(value);
  } catch (const ConfigError& e) {
    throw FlagError(flag, e.what());
  }
}

Rounding parse_rounding_flag(const std::string& flag, const std::string& value) {
  try {
    return parse_rounding(value);
  } catch (const ConfigError& e) {
    throw FlagError(flag, e.what());
  }
}

// ------------------------------------------------------------------ options

struct ShapeOptions {
  std::uint64_t labels = 0;
  std::uint64_t dim = 768;
  std::uint64_t batch = 128;
  std::uint64_t seq = 128;
  std::uint64_t chunks = 8;
  std::string encoder = "bert-base";

  TrainingShape resolve() const {
    TrainingShape s;
    s.labels = labels;
    s.dim = dim;
    s.batch = batch;
    s.seq = seq;
    s.chunks = chunks;
    try {
      s.encoder = EncoderProfile::by_name(encoder);
    } catch (const ConfigError& e) {
      throw FlagError("--encoder", e.what());
    }
    return s;
  }
};

void add_shape_options(CLI::App* app, ShapeOptions& o, bool with_labels) {
  if (with_labels) {
    app->add_option("--labels", o.labels, "Number of labels L (count)")
        ->required()
        ->check(positive("labels"));
  }
  app->add_option("--dim", o.dim, "Embedding width m (count)")->capture_default_str()->check(positive("dim"));
  app->add_option("--batch", o.batch, "Batch size b (samples)")->capture_default_str()->check(positive("batch"));
  app->add_option("--seq", o.seq, "Sequence length (tokens)")->capture_default_str()->check(positive("seq"));
  app->add_option("--chunks", o.chunks, "Label chunks k (count)")->capture_default_str()->check(positive("chunks"));
  app->add_option("--encoder", o.encoder, "Encoder profile: bert-base or distilbert")->capture_default_str();
}

struct TrainOptions {
  TrainConfig cfg;
  std::string head_format = "fp32";
  std::string head_rounding = "sr";
  std::string encoder_format = "fp32";
  std::string logit_format;
  bool no_encoder_kahan = false;
  bool no_snap_inputs = false;
  bool no_track_memory = false;

  TrainConfig resolve() const {
    TrainConfig c = cfg;
    c.head_format = parse_format_flag("--head-format", head_format);
    c.head_rounding = parse_rounding_flag("--head-rounding", head_rounding);
    c.encoder_format = parse_format_flag("--encoder-format", encoder_format);
    if (!logit_format.empty()) c.logit_format = parse_format_flag("--logit-format", logit_format);
    c.encoder_kahan = !no_encoder_kahan;
    c.snap_inputs = !no_snap_inputs;
    c.track_memory = !no_track_memory;
    c.validate();
    return c;
  }
};

void add_train_options(CLI::App* app, TrainOptions& o) {
  auto& c = o.cfg;
  app->add_option("--encoder-hidden", c.encoder_hidden, "Encoder hidden widths, comma separated (count each)")
      ->delimiter(',');
  app->add_option("--embed-dim", c.embed_dim, "Embedding width m (count)")
      ->capture_default_str()
      ->check(positive("embed dim"));
  app->add_option("--head-format", o.head_format, "Classifier weight format (fp32, bf16, e4m3, e5m2, eXmY)")
      ->capture_default_str();
  app->add_option("--head-rounding", o.head_rounding, "Classifier rounding: rtn or sr")->capture_default_str();
  app->add_option("--encoder-format", o.encoder_format, "Encoder parameter format")->capture_default_str();
  app->add_flag("--no-encoder-kahan", o.no_encoder_kahan, "Disable Kahan compensation in the encoder update");
  app->add_option("--encoder-lr", c.encoder_lr, "Encoder learning rate (per step)")->capture_default_str();
  app->add_option("--head-lr", c.head_lr, "Classifier learning rate (per step)")->capture_default_str();
  app->add_option("--encoder-wd", c.encoder_weight_decay, "Encoder weight decay (per step)")->capture_default_str();
  app->add_option("--head-wd", c.head_weight_decay, "Classifier weight decay (per step)")->capture_default_str();
  app->add_option("--warmup", c.warmup_steps, "Linear warmup length (steps)")->capture_default_str();
  app->add_option("--epochs", c.epochs, "Training epochs (count)")->capture_default_str()->check(positive("epochs"));
  app->add_option("--batch-size", c.batch_size, "Batch size (samples)")
      ->capture_default_str()
      ->check(positive("batch size"));
  app->add_option("--chunks", c.chunks, "Label chunks k (count)")->capture_default_str()->check(positive("chunks"));
  app->add_option("--dropout", c.dropout, "Classifier weight dropout (probability)")
      ->capture_default_str()
      ->check(probability("dropout"));
  app->add_option("--embedding-dropout", c.embedding_dropout, "Embedding dropout (probability)")
      ->capture_default_str()
      ->check(probability("embedding dropout"));
  app->add_flag("--no-snap-inputs", o.no_snap_inputs, "Keep classifier inputs in binary32");
  app->add_option("--logit-format", o.logit_format, "Logit buffer format (default: bf16 for reduced heads)");
  app->add_option("--grad-clip", c.grad_clip, "Encoder gradient norm clip (L2 norm, 0 disables)")
      ->capture_default_str();
  app->add_option("--holdout", c.holdout, "Held-out fraction (probability)")
      ->capture_default_str()
      ->check(probability("holdout"));
  app->add_option("--eval-k", c.eval_ks, "Ranks k for P@k, comma separated (count each)")
      ->delimiter(',')
      ->capture_default_str();
  app->add_option("--eval-batch", c.eval_batch, "Evaluation batch (samples)")->capture_default_str();
  app->add_option("--divergence-threshold", c.divergence_threshold,
                  "Mean |logit gradient| treated as saturated (ratio in (0, 1))")
      ->capture_default_str();
  app->add_option("--divergence-window", c.divergence_window, "Consecutive saturated steps before abort (steps)")
      ->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (count)")->capture_default_str()->check(positive("threads"));
  app->add_flag("--no-track-memory", o.no_track_memory, "Disable the allocation tracker");
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

void add_synth_options(CLI::App* app, SyntheticSpec& s) {
  app->add_option("--samples", s.samples, "Samples N (count)")->capture_default_str()->check(positive("samples"));
  app->add_option("--features", s.features, "Features D (count)")->capture_default_str()->check(positive("features"));
  app->add_option("--labels", s.labels, "Labels L (count)")->capture_default_str()->check(positive("labels"));
  app->add_option("--mean-labels", s.mean_labels, "Poisson mean of labels per sample (count)")
      ->capture_default_str()
      ->check(positive("mean labels"));
  app->add_option("--zipf", s.zipf, "Label frequency exponent (rank^-zipf)")->capture_default_str();
  app->add_option("--min-labels", s.min_labels, "Minimum labels per sample (count)")->capture_default_str();
  app->add_option("--max-labels", s.max_labels, "Maximum labels per sample, 0 for L (count)")->capture_default_str();
  app->add_option("--prototype-nnz", s.prototype_nnz, "Nonzero features per label prototype (count)")
      ->capture_default_str();
  app->add_option("--noise-nnz", s.noise_nnz, "Random extra features per sample (count)")->capture_default_str();
  app->add_option("--noise", s.noise, "Relative feature jitter (ratio)")->capture_default_str();
  app->add_option("--seed", s.seed, "Random seed")->capture_default_str();
}

// ------------------------------------------------------------------ output

struct Output {
  fs::path dir;

  void ensure() const { fs::create_directories(dir); }
  void write(const std::string& name, const std::string& text) const {
    ensure();
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  }
};

void write_manifest(const Output& out, const CLI::App& root, const CLI::App& sub, const json& resolved,
                    std::uint64_t seed) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  // Keep root options and the section of the subcommand that ran.
  std::istringstream all(root.config_to_str(true, false));
  std::string toml, line;
  const std::string prefix = sub.get_name() + ".";
  while (std::getline(all, line)) {
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq);
    const bool empty = eq != std::string::npos && line.substr(eq + 1) == "\"\"";
    if (empty) continue;
    if (key.rfind(prefix, 0) == 0 || key.find('.') == std::string::npos) toml += line + "\n";
  }
  json m = {{"command", sub.get_name()},
            {"version", XMC_VERSION},
            {"seed", seed},
            {"created", stamp},
            {"config", resolved},
            {"config_file", "config.toml"}};
  out.write("config.toml", toml);
  out.write("manifest.json", m.dump(2) + "\n");
}

json shape_json(const TrainingShape& s) {
  return {{"labels", s.labels}, {"dim", s.dim},   {"batch", s.batch},
          {"seq", s.seq},       {"chunks", s.chunks}, {"encoder", s.encoder.name}};
}

json synth_json(const SyntheticSpec& s) {
  return {{"samples", s.samples},     {"features", s.features},           {"labels", s.labels},
          {"mean_labels", s.mean_labels}, {"zipf", s.zipf},               {"min_labels", s.min_labels},
          {"max_labels", s.max_labels}, {"prototype_nnz", s.prototype_nnz}, {"noise_nnz", s.noise_nnz},
          {"noise", s.noise},         {"seed", s.seed}};
}

SparseDataset load_data(const std::string& path) {
  if (path.empty()) throw FlagError("--data", "a dataset path is required");
  if (!fs::exists(path)) throw FlagError("--data", "no such file '" + path + "'");
  return load_dataset(path);
}

std::vector<Recipe> parse_recipes(const std::vector<std::string>& names) {
  std::vector<Recipe> out;
  for (const auto& n : names) {
    try {
      out.push_back(parse_recipe(n));
    } catch (const ConfigError& e) {
      throw FlagError("--recipe", e.what());
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-precision extreme multilabel classification: training, sweeps and memory estimates"};
  app.set_version_flag("--version", XMC_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file of option values; command-line flags take precedence");

  Output out;
  std::string out_dir = "xmc_out";
  app.add_option("-o,--output-dir", out_dir, "Directory for reports, checkpoints and manifests")
      ->envname("XMC_OUTPUT_DIR")
      ->capture_default_str();

  // memest
  ShapeOptions est_shape;
  std::string est_recipe = "elmo_fp8";
  auto* memest = app.add_subcommand("memest", "Analytic memory timeline for one training round (GiB = 2^30 bytes)");
  add_shape_options(memest, est_shape, true);
  memest->add_option("--recipe", est_recipe, "renee, elmo_bf16 or elmo_fp8")->capture_default_str();

  // memsweep
  ShapeOptions sweep_shape;
  std::vector<std::uint64_t> sweep_labels_list{131072, 500000, 1000000, 2812281, 8623847};
  std::vector<std::string> sweep_recipes{"renee", "elmo_bf16", "elmo_fp8"};
  auto* memsweep = app.add_subcommand("memsweep", "Peak memory (GiB) across label counts and recipes");
  add_shape_options(memsweep, sweep_shape, false);
  memsweep->add_option("--labels", sweep_labels_list, "Label counts, comma separated (count each)")
      ->delimiter(',')
      ->capture_default_str();
  memsweep->add_option("--recipe", sweep_recipes, "Recipes, comma separated")->delimiter(',')->capture_default_str();

  // gen-synth
  SyntheticSpec synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic multilabel dataset");
  add_synth_options(gen, synth);
  gen->add_option("--out", synth_out, "Dataset file to write (.gz compresses)")->required();

  // train
  TrainOptions train_opts;
  std::string train_data, resume_dir;
  std::uint64_t max_steps = 0;
  auto* train_cmd = app.add_subcommand("train", "Train encoder and chunked classifier");
  train_cmd->add_option("--data", train_data, "Dataset file")->required();
  add_train_options(train_cmd, train_opts);
  train_cmd->add_option("--resume", resume_dir, "Checkpoint directory to continue from");
  train_cmd->add_option("--max-steps", max_steps, "Stop after this many steps, 0 for no limit (steps)")
      ->capture_default_str();

  // quantsweep
  TrainOptions qs_opts;
  std::string qs_data;
  std::vector<int> qs_exp{2, 3, 4, 5}, qs_man{1, 2, 3};
  std::vector<std::string> qs_extra{"e4m3"}, qs_modes{"rtn", "sr"};
  auto* qs = app.add_subcommand("quantsweep", "P@1 over classifier formats (exponent x mantissa bits) and rounding");
  qs->add_option("--data", qs_data, "Dataset file")->required();
  add_train_options(qs, qs_opts);
  qs->add_option("--exp-bits", qs_exp, "Exponent widths E, comma separated (bits)")->delimiter(',')->capture_default_str();
  qs->add_option("--man-bits", qs_man, "Mantissa widths M, comma separated (bits)")->delimiter(',')->capture_default_str();
  qs->add_option("--extra-formats", qs_extra, "Additional named formats")->delimiter(',')->capture_default_str();
  qs->add_option("--modes", qs_modes, "Rounding modes, comma separated (rtn, sr)")->delimiter(',')->capture_default_str();

  // histprobe
  TrainOptions hp_opts;
  std::string hp_data, hp_reference = "e4m3";
  std::vector<std::uint64_t> hp_steps{1, 10, 100};
  auto* hp = app.add_subcommand("histprobe", "Exponent histograms of logit gradients, weights and inputs");
  hp->add_option("--data", hp_data, "Dataset file")->required();
  add_train_options(hp, hp_opts);
  hp->add_option("--steps", hp_steps, "Steps to sample, comma separated (steps)")->delimiter(',')->capture_default_str();
  hp->add_option("--reference", hp_reference, "Format whose exponent range is reported")->capture_default_str();

  // eval
  std::string ev_data, ev_checkpoint, ev_propensity, ev_split = "test";
  std::vector<std::size_t> ev_ks{1, 3, 5};
  double ev_a = 0.55, ev_b = 1.5;
  bool ev_normalized = false;
  auto* ev = app.add_subcommand("eval", "P@k and PSP@k of a trained checkpoint");
  ev->add_option("--data", ev_data, "Dataset file the checkpoint was trained on")->required();
  ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint directory written by train")->required();
  ev->add_option("--split", ev_split, "test, train or all")->capture_default_str();
  ev->add_option("--k", ev_ks, "Ranks k, comma separated (count each)")->delimiter(',')->capture_default_str();
  ev->add_option("--propensity", ev_propensity, "File of per-label propensities (probability each)");
  ev->add_option("--propensity-a", ev_a, "Propensity model A (exponent)")->capture_default_str();
  ev->add_option("--propensity-b", ev_b, "Propensity model B (count offset)")->capture_default_str();
  ev->add_flag("--normalized", ev_normalized, "Report PSP@k normalised by the best attainable value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  out.dir = out_dir;

  try {
    if (memest->parsed()) {
      const TrainingShape shape = est_shape.resolve();
      const auto recipe = parse_recipes({est_recipe}).front();
      const MemoryPlan p = plan(shape, recipe);
      const std::string csv = p.timeline_csv();
      const std::string summary = p.summary_json();
      std::cout << csv << summary << "\n";
      out.write("timeline.csv", csv);
      out.write("summary.json", summary + "\n");
      json resolved = shape_json(shape);
      resolved["recipe"] = to_string(recipe);
      write_manifest(out, app, *memest, resolved, 0);
    } else if (memsweep->parsed()) {
      const TrainingShape shape = sweep_shape.resolve();
      const auto recipes = parse_recipes(sweep_recipes);
      for (auto l : sweep_labels_list) {
        if (l == 0) throw FlagError("--labels", "labels must be positive");
      }
      const std::string csv = sweep_csv(sweep_labels(shape, sweep_labels_list, recipes));
      std::cout << csv;
      out.write("memsweep.csv", csv);
      json resolved = shape_json(shape);
      resolved["labels"] = sweep_labels_list;
      resolved["recipes"] = sweep_recipes;
      write_manifest(out, app, *memsweep, resolved, 0);
    } else if (gen->parsed()) {
      const auto ds = generate_synthetic(synth);
      save_dataset(synth_out, ds);
      std::cout << "wrote " << ds.size() << " samples, " << ds.num_features() << " features, "
                << ds.num_labels() << " labels to " << synth_out << "\n";
      json resolved = synth_json(synth);
      resolved["out"] = synth_out;
      write_manifest(out, app, *gen, resolved, synth.seed);
    } else if (train_cmd->parsed()) {
      const auto ds = load_data(train_data);
      std::optional<Trainer> trainer;
      if (!resume_dir.empty()) {
        trainer.emplace(Trainer::resume(ds, resume_dir));
      } else {
        trainer.emplace(ds, train_opts.resolve());
      }
      struct Printer : TrainObserver {
        void on_epoch_end(const EpochRecord& r) override { std::cout << to_json_line(r) << "\n" << std::flush; }
      } printer;
      int status = 0;
      try {
        trainer->run(&printer, max_steps);
      } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        status = 1;
      }
      trainer->save(out.dir / "checkpoint");
      std::string history;
      for (const auto& r : trainer->history()) history += to_json_line(r) + "\n";
      out.write("history.jsonl", history);
      out.write("metrics.json", metrics_to_json(trainer->evaluate()) + "\n");
      if (trainer->tracking()) out.write("memory.json", trainer->memory_report_json() + "\n");
      json resolved = json::parse(to_json(trainer->config()));
      resolved["data"] = train_data;
      write_manifest(out, app, *train_cmd, resolved, trainer->config().seed);
      std::cout << metrics_to_text(trainer->evaluate());
      return status;
    } else if (qs->parsed()) {
      const auto ds = load_data(qs_data);
      const TrainConfig base = qs_opts.resolve();
      std::vector<FloatFormat> formats;
      for (int e : qs_exp) {
        for (int m : qs_man) {
          try {
            formats.push_back(FloatFormat::ieee(e, m));
          } catch (const ConfigError& err) {
            throw FlagError("--exp-bits/--man-bits", err.what());
          }
        }
      }
      for (const auto& n : qs_extra) formats.push_back(parse_format_flag("--extra-formats", n));
      std::vector<Rounding> modes;
      for (const auto& m : qs_modes) modes.push_back(parse_rounding_flag("--modes", m));
      const auto result = quant_sweep(ds, base, formats, modes, [](const SweepCell& c) {
        std::cerr << c.format.name() << " " << to_string(c.rounding) << " P@1=" << c.p_at_1
                  << (c.diverged ? " (diverged)" : "") << "\n";
      });
      std::cout << result.csv();
      out.write("quantsweep.csv", result.csv());
      json resolved = json::parse(to_json(base));
      resolved["data"] = qs_data;
      resolved["exp_bits"] = qs_exp;
      resolved["man_bits"] = qs_man;
      resolved["extra_formats"] = qs_extra;
      resolved["modes"] = qs_modes;
      write_manifest(out, app, *qs, resolved, base.seed);
    } else if (hp->parsed()) {
      const auto ds = load_data(hp_data);
      const TrainConfig cfg = hp_opts.resolve();
      const FloatFormat reference = parse_format_flag("--reference", hp_reference);
      const std::set<std::uint64_t> steps(hp_steps.begin(), hp_steps.end());
      if (steps.count(0)) throw FlagError("--steps", "steps are 1-based");
      const auto probes = gradient_histogram_probe(ds, cfg, steps, reference);
      json grads = json::array(), weights = json::array(), inputs = json::array();
      for (const auto& p : probes) {
        grads.push_back({{"step", p.step}, {"histogram", json::parse(to_json(p.logit_gradients))}});
        weights.push_back({{"step", p.step}, {"histogram", json::parse(to_json(p.weights))}});
        inputs.push_back({{"step", p.step}, {"histogram", json::parse(to_json(p.inputs))}});
        std::printf("step %llu: logit gradients underflow %.4f, weights underflow %.4f overflow %.4f, "
                    "inputs underflow %.4f\n",
                    static_cast<unsigned long long>(p.step), p.logit_gradients.underflow_fraction(),
                    p.weights.underflow_fraction(), p.weights.overflow_fraction(),
                    p.inputs.underflow_fraction());
      }
      out.write("hist_logit_gradients.json", grads.dump(2) + "\n");
      out.write("hist_weights.json", weights.dump(2) + "\n");
      out.write("hist_inputs.json", inputs.dump(2) + "\n");
      json resolved = json::parse(to_json(cfg));
      resolved["data"] = hp_data;
      resolved["steps"] = hp_steps;
      resolved["reference"] = reference.name();
      write_manifest(out, app, *hp, resolved, cfg.seed);
    } else if (ev->parsed()) {
      const auto ds = load_data(ev_data);
      const Trainer t = Trainer::resume(ds, ev_checkpoint);
      std::vector<std::size_t> indices;
      if (ev_split == "test") {
        indices = t.split().test.empty() ? t.split().train : t.split().test;
      } else if (ev_split == "train") {
        indices = t.split().train;
      } else if (ev_split == "all") {
        for (std::size_t i = 0; i < ds.size(); ++i) indices.push_back(i);
      } else {
        throw FlagError("--split", "split must be test, train or all");
      }
      for (auto k : ev_ks) {
        if (k == 0 || k > ds.num_labels()) throw FlagError("--k", "k must be in [1, L]");
      }
      PropensityModel prop;
      if (!ev_propensity.empty()) {
        prop = PropensityModel::load(ev_propensity);
      } else {
        const auto train_set = ds.subset(t.split().train);
        prop = propensity_from_frequencies(train_set.label_counts(), train_set.size(), ev_a, ev_b);
      }
      RankingEvaluator evaluator(ev_ks, &prop, ev_normalized);
      for (std::size_t start = 0; start < indices.size(); start += 256) {
        const std::span<const std::size_t> part(indices.data() + start, std::min<std::size_t>(256, indices.size() - start));
        const Matrix s = t.scores(part);
        for (std::size_t r = 0; r < part.size(); ++r) evaluator.add(s.row(r), ds.row(part[r]).labels);
      }
      const auto records = evaluator.results();
      std::cout << metrics_to_text(records);
      out.write("eval.json", metrics_to_json(records) + "\n");
      json resolved = {{"data", ev_data},   {"checkpoint", ev_checkpoint}, {"split", ev_split}, {"k", ev_ks},
                       {"propensity", ev_propensity}, {"propensity_a", ev_a}, {"propensity_b", ev_b},
                       {"normalized", ev_normalized}};
      write_manifest(out, app, *ev, resolved, t.config().seed);
    }
  } catch (const FlagError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
