#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "i2i/dataset.hpp"
#include "i2i/errors.hpp"
#include "i2i/evaluate.hpp"
#include "i2i/gradcheck.hpp"
#include "i2i/image_io.hpp"
#include "i2i/trainer.hpp"

namespace fs = std::filesystem;

namespace i2i::cli {

namespace {

// Command-line flags that map onto keys of a flat config. Values given on
// the command line replace those read from the config file.
class Overrides {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values_[key];
    options_.emplace_back(app->add_option(flag, slot, help + " [" + key + "]"), key);
  }

  void add_generic(CLI::App* app) {
    app->add_option("--set", assignments_, "Override any config key, as key=value (repeatable)");
  }

  void apply(KvConfig& config) const {
    for (const auto& assignment : assignments_) {
      const auto eq = assignment.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
      }
      config.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }
    for (const auto& [option, key] : options_) {
      if (option->count() > 0) config.set(key, values_.at(key));
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> options_;
  std::vector<std::string> assignments_;
};

KvConfig load_or_empty(const std::string& path) { return path.empty() ? KvConfig() : KvConfig::load(path); }

void add_train_overrides(CLI::App* app, Overrides& o, bool with_variant) {
  if (with_variant) o.add(app, "--variant", "variant", "Attention placement: ds, us, ds-us or ds3-us3");
  o.add(app, "--iters", "iterations", "Training iterations");
  o.add(app, "--seed", "seed", "Seed for initialization, sampling and style draws");
  o.add(app, "--out", "output_dir", "Directory for checkpoints and logs");
  o.add(app, "--data1", "domain1_dir", "Image directory of domain one");
  o.add(app, "--data2", "domain2_dir", "Image directory of domain two");
  o.add(app, "--lr", "lr", "Base learning rate");
  o.add(app, "--halve-every", "halve_every", "Iterations between learning-rate halvings");
  o.add(app, "--checkpoint-every", "checkpoint_every", "Iterations between checkpoints (0 = final only)");
  o.add(app, "--beta1", "beta1", "Adam beta1");
  o.add(app, "--image-size", "image_size", "Image side length");
  o.add(app, "--gan-form", "gan_form", "Generator adversarial form: non-saturating or saturating");
  o.add_generic(app);
}

Domain parse_direction(const std::string& direction) {
  if (direction == "1to2") return Domain::One;
  if (direction == "2to1") return Domain::Two;
  throw ConfigError("direction must be 1to2 or 2to1, got '" + direction + "'");
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void require_image_size(const std::vector<Tensor<float>>& images, std::size_t size, const fs::path& dir) {
  if (images.empty()) throw ConfigError("no .png images in " + dir.string());
  for (const auto& img : images) {
    if (img.dim(2) != size) {
      throw ConfigError("images in " + dir.string() + " are " + std::to_string(img.dim(2)) + "x" +
                        std::to_string(img.dim(3)) + " but the model expects " + std::to_string(size) + "x" +
                        std::to_string(size));
    }
  }
}

// Trains with the log written to <output_dir>/train.log and the resolved
// configuration to <output_dir>/config.txt.
TrainingRun train_logged(const TrainConfig& config, const std::optional<fs::path>& resume) {
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.output_dir.string() + ": " + ec.message());
  {
    std::ofstream cfg(config.output_dir / "config.txt");
    if (!cfg) throw IoError("cannot write " + (config.output_dir / "config.txt").string());
    cfg << config.to_config().to_string();
  }
  const fs::path log_path = config.output_dir / "train.log";
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  return run_training(config, &log, resume);
}

int cmd_gen_data(const std::string& spec_path, const Overrides& overrides, bool dump, std::ostream& out) {
  KvConfig kv = load_or_empty(spec_path);
  overrides.apply(kv);
  const DatasetSpec spec = DatasetSpec::from_config(kv);
  if (dump) {
    out << spec.to_config().to_string();
    return kOk;
  }
  generate_dataset(spec);
  for (std::size_t d = 0; d < 2; ++d) {
    out << "wrote " << spec.count << " images of " << spec.size << "x" << spec.size << " to "
        << spec.domain_dir(d).string() << "\n";
  }
  return kOk;
}

int cmd_train(const std::string& config_path, const Overrides& overrides, bool dump, const std::string& resume,
              std::ostream& out) {
  KvConfig kv = load_or_empty(config_path);
  overrides.apply(kv);
  const TrainConfig config = TrainConfig::from_config(kv);
  if (dump) {
    out << config.to_config().to_string();
    return kOk;
  }
  const auto start = std::chrono::steady_clock::now();
  const TrainingRun run = train_logged(config, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "variant " << variant_name(config.model.placement.variant) << ": " << run.reports.size()
      << " steps in " << fixed(seconds) << " s\n";
  if (!run.reports.empty()) {
    const LossReport& last = run.reports.back();
    out << "last step: " << format_log_line(config.iterations - 1, config.schedule.lr(config.iterations - 1), last)
        << "\n";
  }
  out << "final checkpoint " << run.final_checkpoint.string() << "\n";
  return kOk;
}

int cmd_translate(const std::string& checkpoint, const std::string& input, const std::string& output,
                  const std::string& direction, std::size_t n_styles, std::uint64_t seed, bool grid,
                  std::ostream& out) {
  const Domain source = parse_direction(direction);
  const TranslationModel<float> model = load_model(checkpoint);
  const auto paths = list_images(input);
  const auto images = load_images<float>(input);
  require_image_size(images, model.config().image_size, input);
  const auto translated = translate_set(model, images, source, n_styles, seed);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string stem = paths[i].stem().string();
    std::vector<Tensor<float>> row{images[i]};
    for (std::size_t k = 0; k < n_styles; ++k) {
      const Tensor<float>& t = translated[i * n_styles + k];
      save_image(t, fs::path(output) / (stem + "_style" + std::to_string(k) + ".png"));
      row.push_back(t);
    }
    if (grid) save_image(horizontal_strip(row), fs::path(output) / (stem + "_grid.png"));
  }
  out << "translated " << images.size() << " images (" << translated.size() << " outputs, direction " << direction
      << ") into " << output << "\n";
  return kOk;
}

int cmd_eval_fid(const std::string& source_dir, const std::string& target_dir, const std::string& checkpoint,
                 const std::string& direction, std::size_t n_styles, std::uint64_t seed, std::ostream& out,
                 std::ostream& err) {
  const auto source = load_images<float>(source_dir);
  const auto target = load_images<float>(target_dir);
  const FeatureExtractor extractor;
  FidRow row;
  row.dataset = fs::path(source_dir).filename().string() + "->" + fs::path(target_dir).filename().string();
  if (checkpoint.empty()) {
    row.variant = "none";
    row.baseline = fid(extractor.stats(source), extractor.stats(target), &err);
    row.fid = row.baseline;
  } else {
    const TranslationModel<float> model = load_model(checkpoint);
    require_image_size(source, model.config().image_size, source_dir);
    row.variant = variant_name(model.config().placement.variant);
    const TranslationEval r =
        evaluate_translation(model, source, target, parse_direction(direction), n_styles, seed, extractor, &err);
    row.fid = r.fid;
    row.baseline = r.baseline;
  }
  out << format_fid_table({row});
  return kOk;
}

int cmd_ablate(const std::string& config_path, const Overrides& overrides, bool dump, std::size_t n_styles,
               std::ostream& out, std::ostream& err) {
  KvConfig kv = load_or_empty(config_path);
  overrides.apply(kv);
  const TrainConfig base = TrainConfig::from_config(kv);
  if (dump) {
    out << base.to_config().to_string();
    return kOk;
  }
  const auto source = load_images<float>(base.domain1_dir);
  const auto target = load_images<float>(base.domain2_dir);
  const FeatureExtractor extractor;
  const std::string dataset =
      base.domain1_dir.filename().string() + "->" + base.domain2_dir.filename().string();
  std::vector<FidRow> rows;
  for (const Variant variant : kAllVariants) {
    TrainConfig config = base;
    config.model.placement.variant = variant;
    config.output_dir = base.output_dir / variant_name(variant);
    const TrainingRun run = train_logged(config, std::nullopt);
    const TranslationModel<float> model = load_model(run.final_checkpoint);
    const TranslationEval r =
        evaluate_translation(model, source, target, Domain::One, n_styles, config.seed, extractor, &err);
    rows.push_back({dataset, variant_name(variant), r.fid, r.baseline});
    out << "trained " << variant_name(variant) << " (" << run.reports.size() << " steps), FID " << fixed(r.fid)
        << "\n";
  }
  const std::string table = format_fid_table(rows);
  out << table;
  std::ofstream file(base.output_dir / "ablation.txt");
  if (!file) throw IoError("cannot write " + (base.output_dir / "ablation.txt").string());
  file << table;
  return kOk;
}

int cmd_grad_check(std::size_t n_seeds, bool verbose, std::ostream& out) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < n_seeds; ++s) seeds.push_back(s);
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite(seeds);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  struct Summary {
    std::size_t runs = 0, failed = 0;
    double worst = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Summary> by_name;
  std::size_t failed = 0;
  double worst = 0;
  for (const auto& r : results) {
    const std::string name = r.name.substr(0, r.name.find(" (seed"));
    if (!by_name.count(name)) order.push_back(name);
    Summary& s = by_name[name];
    ++s.runs;
    s.worst = std::max(s.worst, r.max_rel_error);
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed()) {
      ++s.failed;
      ++failed;
      out << "FAIL " << r.name << ": max relative error " << r.max_rel_error << " over " << r.checked
          << " coordinates, " << r.skipped_kinks << " skipped at kinks\n";
    }
  }
  if (verbose) {
    for (const auto& name : order) {
      const Summary& s = by_name[name];
      char line[160];
      std::snprintf(line, sizeof line, "%-40s %3zu seeds  max rel err %.3e  %s\n", name.c_str(), s.runs, s.worst,
                    s.failed ? "FAIL" : "ok");
      out << line;
    }
  }
  out << "grad-check: " << results.size() << " checks (" << order.size() << " kinds x " << n_seeds
      << " seeds), " << failed << " failed, worst relative error " << worst << ", " << fixed(seconds) << " s\n";
  return failed == 0 ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised image-to-image translation with self-attention", "i2i"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "i2i 1.0");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic two-domain dataset");
  std::string gen_spec;
  bool gen_dump = false;
  Overrides gen_overrides;
  gen->add_option("spec", gen_spec, "Dataset spec file (key = value)");
  gen_overrides.add(gen, "--root", "root", "Output root directory");
  gen_overrides.add(gen, "--size", "size", "Image side length (16, 32 or 64)");
  gen_overrides.add(gen, "--count", "count", "Images per domain");
  gen_overrides.add(gen, "--seed", "seed", "Dataset seed");
  gen_overrides.add_generic(gen);
  gen->add_flag("--dump-config", gen_dump, "Print the resolved spec and exit");

  // train
  auto* train = app.add_subcommand("train", "Train a translation model");
  std::string train_config, resume;
  bool train_dump = false;
  Overrides train_overrides;
  train->add_option("config", train_config, "Training config file (key = value)");
  add_train_overrides(train, train_overrides, true);
  train->add_option("--resume", resume, "Continue from this checkpoint");
  train->add_flag("--dump-config", train_dump, "Print the resolved config and exit");

  // translate
  auto* translate = app.add_subcommand("translate", "Translate a directory of images with a checkpoint");
  std::string tr_ckpt, tr_in, tr_out, tr_dir = "1to2";
  std::size_t tr_styles = 1;
  std::uint64_t tr_seed = 0;
  bool tr_grid = false;
  translate->add_option("checkpoint", tr_ckpt, "Checkpoint file")->required();
  translate->add_option("input", tr_in, "Directory of input images")->required();
  translate->add_option("output", tr_out, "Directory for translated images")->required();
  translate->add_option("--direction", tr_dir, "1to2 or 2to1")->capture_default_str();
  translate->add_option("--n-styles", tr_styles, "Style draws per input")->capture_default_str()->check(
      CLI::PositiveNumber);
  translate->add_option("--seed", tr_seed, "Seed for the style draws")->capture_default_str();
  translate->add_flag("--grid", tr_grid, "Also write input | translations strips");

  // eval-fid
  auto* eval = app.add_subcommand("eval-fid", "FID between image sets, optionally after translation");
  std::string ev_src, ev_tgt, ev_ckpt, ev_dir = "1to2";
  std::size_t ev_styles = 1;
  std::uint64_t ev_seed = 0;
  eval->add_option("source", ev_src, "Source image directory")->required();
  eval->add_option("target", ev_tgt, "Target image directory")->required();
  eval->add_option("--checkpoint", ev_ckpt, "Translate the source set with this model first");
  eval->add_option("--direction", ev_dir, "1to2 or 2to1")->capture_default_str();
  eval->add_option("--n-styles", ev_styles, "Style draws per source image")->capture_default_str()->check(
      CLI::PositiveNumber);
  eval->add_option("--seed", ev_seed, "Seed for the style draws")->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train all four attention placements and compare FID");
  std::string ab_config;
  bool ab_dump = false;
  std::size_t ab_styles = 1;
  Overrides ab_overrides;
  ablate->add_option("config", ab_config, "Training config file shared by all variants");
  add_train_overrides(ablate, ab_overrides, false);
  ablate->add_option("--n-styles", ab_styles, "Style draws per source image")->capture_default_str()->check(
      CLI::PositiveNumber);
  ablate->add_flag("--dump-config", ab_dump, "Print the resolved config and exit");

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  std::size_t gc_seeds = 10;
  bool gc_verbose = false;
  grad->add_option("--seeds", gc_seeds, "Number of seeds")->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_flag("-v,--verbose", gc_verbose, "Print one summary line per check");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_gen_data(gen_spec, gen_overrides, gen_dump, out);
    if (*train) return cmd_train(train_config, train_overrides, train_dump, resume, out);
    if (*translate) return cmd_translate(tr_ckpt, tr_in, tr_out, tr_dir, tr_styles, tr_seed, tr_grid, out);
    if (*eval) return cmd_eval_fid(ev_src, ev_tgt, ev_ckpt, ev_dir, ev_styles, ev_seed, out, err);
    if (*ablate) return cmd_ablate(ab_config, ab_overrides, ab_dump, ab_styles, out, err);
    if (*grad) return cmd_grad_check(gc_seeds, gc_verbose, out);
  } catch (const ConfigError& e) {
    err << "i2i: configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "i2i: I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const FormatError& e) {
    err << "i2i: I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const NumericError& e) {
    err << "i2i: numeric error, aborting: " << e.what() << "\n";
    return kNumericError;
  } catch (const CheckpointError& e) {
    err << "i2i: checkpoint error: " << e.what() << "\n";
    return kCheckpointError;
  } catch (const std::exception& e) {
    err << "i2i: error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace i2i::cli
