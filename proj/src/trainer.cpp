#include "i2i/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "i2i/errors.hpp"
#include "i2i/image_io.hpp"

namespace fs = std::filesystem;

namespace i2i {

namespace {

// Stream identifiers for seeds derived from TrainConfig::seed.
constexpr std::uint64_t kSamplerStream = 0x73616d70;
constexpr std::uint64_t kStyleStream = 0x7374796c;

std::string gan_form_name(GanForm form) {
  return form == GanForm::NonSaturating ? "non-saturating" : "saturating";
}

// Run-control settings stay out of checkpoints so that two runs writing to
// different directories, or a run stopped early, produce identical files.
bool is_run_control_key(const std::string& key) {
  return key == "iterations" || key == "checkpoint_every" || key == "domain1_dir" || key == "domain2_dir" ||
         key == "output_dir";
}

GanForm parse_gan_form(const std::string& name) {
  if (name == "non-saturating") return GanForm::NonSaturating;
  if (name == "saturating") return GanForm::Saturating;
  throw ConfigError("unknown gan_form '" + name + "' (expected non-saturating or saturating)");
}

std::string sampler_state_text(const UnpairedSampler::State& s) {
  std::ostringstream os;
  os << s.epoch[0] << ' ' << s.position[0] << ' ' << s.epoch[1] << ' ' << s.position[1];
  return os.str();
}

UnpairedSampler::State parse_sampler_state(const std::string& text) {
  UnpairedSampler::State s;
  std::istringstream is(text);
  is >> s.epoch[0] >> s.position[0] >> s.epoch[1] >> s.position[1];
  if (is.fail()) throw CheckpointError("checkpoint: malformed sampler state '" + text + "'");
  return s;
}

void append_optimizer(CheckpointData& out, const std::string& prefix, const Adam<float>& opt) {
  const auto& params = opt.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Shape& shape = params[k].tensor.shape();
    out.tensors.emplace_back(prefix + ".m." + params[k].name, Tensor<float>(shape, opt.first_moments()[k]));
    out.tensors.emplace_back(prefix + ".v." + params[k].name, Tensor<float>(shape, opt.second_moments()[k]));
  }
}

void copy_into(Tensor<float> dst, const Tensor<float>& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + shape_str(src.shape()) +
                          ", model expects " + shape_str(dst.shape()));
  }
  const auto s = src.values();
  std::copy(s.begin(), s.end(), dst.mutable_values().begin());
}

void copy_vector(std::vector<float>& dst, const Tensor<float>& src, const std::string& name) {
  if (dst.size() != src.numel()) throw CheckpointError("checkpoint: tensor '" + name + "' has the wrong size");
  const auto s = src.values();
  std::copy(s.begin(), s.end(), dst.begin());
}

void restore_optimizer(Adam<float>& opt, const CheckpointData& data, const std::string& prefix) {
  const auto& params = opt.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    copy_vector(opt.first_moments()[k], data.tensor(prefix + ".m." + params[k].name), prefix + ".m." + params[k].name);
    copy_vector(opt.second_moments()[k], data.tensor(prefix + ".v." + params[k].name),
                prefix + ".v." + params[k].name);
  }
  opt.set_steps(data.header.get_uint("state." + prefix + ".steps", 0));
}

void restore_model(const TranslationModel<float>& model, const CheckpointData& data) {
  for (const auto& p : model.named_parameters()) copy_into(p.tensor, data.tensor("param." + p.name), p.name);
  for (const auto& b : model.buffers()) copy_into(b.tensor, data.tensor("buffer." + b.name), b.name);
}

}  // namespace

ModelConfig TrainConfig::default_model() {
  ModelConfig m;
  m.image_size = 16;
  return m;
}

TrainConfig TrainConfig::from_config(const KvConfig& c, bool allow_unknown) {
  TrainConfig t;
  ModelConfig& m = t.model;
  m.image_size = c.get_uint("image_size", m.image_size);
  m.image_channels = 3;
  m.base_channels = c.get_uint("base_channels", m.base_channels);
  m.style_dim = c.get_uint("style_dim", m.style_dim);
  m.residual_blocks = c.get_uint("residual_blocks", m.residual_blocks);
  m.mlp_dim = c.get_uint("mlp_dim", m.mlp_dim);
  m.upsample_kernel = c.get_uint("upsample_kernel", m.upsample_kernel);
  m.attention_cap = c.get_uint("attention_cap", m.attention_cap);
  m.attention.reduction = c.get_uint("attention_reduction", m.attention.reduction);
  m.attention.spectral_norm = c.get_bool("spectral_norm", m.attention.spectral_norm);
  m.placement.variant = parse_variant(c.get_string("variant", variant_name(m.placement.variant)));
  m.placement.discriminator_attention = c.get_bool("discriminator_attention", m.placement.discriminator_attention);

  t.weights.image = c.get_double("lambda_x", t.weights.image);
  t.weights.content = c.get_double("lambda_c", t.weights.content);
  t.weights.style = c.get_double("lambda_s", t.weights.style);
  t.gan_form = parse_gan_form(c.get_string("gan_form", gan_form_name(t.gan_form)));

  t.adam.beta1 = c.get_double("beta1", t.adam.beta1);
  t.adam.beta2 = c.get_double("beta2", t.adam.beta2);
  t.adam.epsilon = c.get_double("adam_epsilon", t.adam.epsilon);
  t.schedule.base_lr = c.get_double("lr", t.schedule.base_lr);
  t.schedule.halve_every = c.get_uint("halve_every", t.schedule.halve_every);

  t.iterations = c.get_uint("iterations", t.iterations);
  t.checkpoint_every = c.get_uint("checkpoint_every", t.checkpoint_every);
  t.seed = c.get_uint("seed", t.seed);
  m.seed = t.seed;
  t.domain1_dir = c.get_string("domain1_dir", t.domain1_dir.string());
  t.domain2_dir = c.get_string("domain2_dir", t.domain2_dir.string());
  t.output_dir = c.get_string("output_dir", t.output_dir.string());
  if (!allow_unknown) c.require_all_known();
  t.validate();
  return t;
}

KvConfig TrainConfig::to_config() const {
  KvConfig c;
  const ModelConfig& m = model;
  c.set("image_size", std::to_string(m.image_size));
  c.set("base_channels", std::to_string(m.base_channels));
  c.set("style_dim", std::to_string(m.style_dim));
  c.set("residual_blocks", std::to_string(m.residual_blocks));
  c.set("mlp_dim", std::to_string(m.mlp_dim));
  c.set("upsample_kernel", std::to_string(m.upsample_kernel));
  c.set("attention_cap", std::to_string(m.attention_cap));
  c.set("attention_reduction", std::to_string(m.attention.reduction));
  c.set("spectral_norm", m.attention.spectral_norm ? "true" : "false");
  c.set("variant", variant_name(m.placement.variant));
  c.set("discriminator_attention", m.placement.discriminator_attention ? "true" : "false");
  c.set("lambda_x", format_double(weights.image));
  c.set("lambda_c", format_double(weights.content));
  c.set("lambda_s", format_double(weights.style));
  c.set("gan_form", gan_form_name(gan_form));
  c.set("beta1", format_double(adam.beta1));
  c.set("beta2", format_double(adam.beta2));
  c.set("adam_epsilon", format_double(adam.epsilon));
  c.set("lr", format_double(schedule.base_lr));
  c.set("halve_every", std::to_string(schedule.halve_every));
  c.set("iterations", std::to_string(iterations));
  c.set("checkpoint_every", std::to_string(checkpoint_every));
  c.set("seed", std::to_string(seed));
  c.set("domain1_dir", domain1_dir.string());
  c.set("domain2_dir", domain2_dir.string());
  c.set("output_dir", output_dir.string());
  return c;
}

void TrainConfig::validate() const {
  if (model.seed != seed) throw ConfigError("model seed must equal the run seed");
  model.validate();
  weights.validate();
  adam.validate();
  schedule.validate();
}

const std::vector<std::string>& architecture_keys() {
  static const std::vector<std::string> keys = {
      "image_size",  "base_channels",       "style_dim",     "residual_blocks",
      "mlp_dim",     "upsample_kernel",     "attention_cap", "attention_reduction",
      "spectral_norm", "variant",           "discriminator_attention", "seed"};
  return keys;
}

TrainingData TrainingData::load(const fs::path& domain1, const fs::path& domain2, std::size_t image_size) {
  TrainingData data;
  const std::array<fs::path, 2> dirs = {domain1, domain2};
  for (std::size_t d = 0; d < 2; ++d) {
    data.domains[d] = load_images<float>(dirs[d]);
    if (data.domains[d].empty()) throw ConfigError("domain directory " + dirs[d].string() + " contains no images");
    for (const auto& img : data.domains[d]) {
      if (img.dim(2) != image_size) {
        throw ConfigError("images in " + dirs[d].string() + " are " + std::to_string(img.dim(2)) + "x" +
                          std::to_string(img.dim(3)) + " but image_size is " + std::to_string(image_size));
      }
    }
  }
  return data;
}

double discriminator_update(const TranslationModel<float>& model, const Tensor<float>& x1, const Tensor<float>& x2,
                            const Tensor<float>& s1, const Tensor<float>& s2, Adam<float>& discriminator_opt,
                            double lr) {
  try {
    Tape tape;
    const Tensor<float> loss = named_term("gan_d", [&] {
      Tensor<float> x12, x21;
      {
        NoGradGuard no_grad;
        x12 = model.translate(x1, s2, Domain::One);
        x21 = model.translate(x2, s1, Domain::Two);
      }
      return discriminator_objective(model, x1, x2, x12, x21);
    });
    tape.backward(loss);
    discriminator_opt.step(lr);
    return loss.item();
  } catch (const NumericError& e) {
    throw NumericError(std::string("discriminator update: ") + e.what());
  }
}

LossReport generator_update(const TranslationModel<float>& model, const Tensor<float>& x1, const Tensor<float>& x2,
                            const Tensor<float>& s1, const Tensor<float>& s2, const LossWeights& weights,
                            GanForm form, Adam<float>& generator_opt, double lr) {
  try {
    FreezeGuard<float> freeze(model.discriminator_parameters());
    Tape tape;
    const Objective<float> obj = full_objective(model, x1, x2, s1, s2, weights, form);
    tape.backward(obj.total);
    generator_opt.step(lr);
    return obj.report;
  } catch (const NumericError& e) {
    throw NumericError(std::string("generator update: ") + e.what());
  }
}

LossReport train_step(const TranslationModel<float>& model, const Tensor<float>& x1, const Tensor<float>& x2,
                      const Tensor<float>& s1, const Tensor<float>& s2, const LossWeights& weights, GanForm form,
                      Adam<float>& generator_opt, Adam<float>& discriminator_opt, double lr) {
  const double d_loss = discriminator_update(model, x1, x2, s1, s2, discriminator_opt, lr);
  LossReport report = generator_update(model, x1, x2, s1, s2, weights, form, generator_opt, lr);
  report.discriminator = d_loss;
  return report;
}

std::string format_log_line(std::uint64_t step, double lr, const LossReport& report) {
  std::string line = "step=" + std::to_string(step) + " lr=" + format_double(lr);
  for (const auto& [name, value] : report.fields()) line += " " + name + "=" + format_double(value);
  return line;
}

Trainer::Trainer(TrainConfig config, TrainingData data)
    : config_(std::move(config)),
      data_(std::move(data)),
      model_((config_.validate(), config_.model)),
      generator_opt_(model_.generator_parameters(), config_.adam),
      discriminator_opt_(model_.discriminator_parameters(), config_.adam),
      sampler_(data_.domains[0].size(), data_.domains[1].size(), derive_seed(config_.seed, kSamplerStream)),
      style_rng_(derive_seed(config_.seed, kStyleStream)) {
  for (const auto& set : data_.domains) {
    for (const auto& img : set) {
      if (img.shape() != Shape{1, config_.model.image_channels, config_.model.image_size, config_.model.image_size}) {
        throw ConfigError("training image of shape " + shape_str(img.shape()) + " does not match image_size " +
                          std::to_string(config_.model.image_size));
      }
    }
  }
}

LossReport Trainer::step() {
  const auto [i1, i2] = sampler_.next();
  const Tensor<float> s1 = model_.sample_style(style_rng_);
  const Tensor<float> s2 = model_.sample_style(style_rng_);
  LossReport report;
  try {
    report = train_step(model_, data_.domains[0][i1], data_.domains[1][i2], s1, s2, config_.weights,
                        config_.gan_form, generator_opt_, discriminator_opt_, current_lr());
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_) + ": " + e.what());
  }
  ++step_;
  return report;
}

CheckpointData Trainer::checkpoint() const {
  CheckpointData out;
  const KvConfig config = config_.to_config();
  for (const auto& [key, value] : config.values()) {
    if (!is_run_control_key(key)) out.header.set("config." + key, value);
  }
  out.header.set("state.step", std::to_string(step_));
  out.header.set("state.rng", style_rng_.state());
  out.header.set("state.sampler", sampler_state_text(sampler_.state()));
  out.header.set("state.adam_g.steps", std::to_string(generator_opt_.steps()));
  out.header.set("state.adam_d.steps", std::to_string(discriminator_opt_.steps()));
  for (const auto& p : model_.named_parameters()) out.tensors.emplace_back("param." + p.name, p.tensor);
  for (const auto& b : model_.buffers()) out.tensors.emplace_back("buffer." + b.name, b.tensor);
  append_optimizer(out, "adam_g", generator_opt_);
  append_optimizer(out, "adam_d", discriminator_opt_);
  return out;
}

void Trainer::save(const fs::path& path) const { write_checkpoint(checkpoint(), path); }

void Trainer::restore(const CheckpointData& data) {
  const KvConfig mine = config_.to_config();
  for (const auto& key : architecture_keys()) {
    const std::string stored = data.header.get_string("config." + key, "<missing>");
    const std::string wanted = mine.get_string(key, "");
    if (stored != wanted) {
      throw CheckpointError("checkpoint field config." + key + " is '" + stored + "' but the run uses '" + wanted +
                            "'");
    }
  }
  restore_model(model_, data);
  restore_optimizer(generator_opt_, data, "adam_g");
  restore_optimizer(discriminator_opt_, data, "adam_d");
  try {
    style_rng_.set_state(data.header.get_string("state.rng", ""));
  } catch (const ConfigError&) {
    throw CheckpointError("checkpoint field state.rng is malformed");
  }
  try {
    sampler_.set_state(parse_sampler_state(data.header.get_string("state.sampler", "")));
  } catch (const StateError& e) {
    throw CheckpointError(std::string("checkpoint field state.sampler: ") + e.what());
  }
  step_ = data.header.get_uint("state.step", 0);
}

TrainingRun run_training(const TrainConfig& config, std::ostream* log, const std::optional<fs::path>& resume_from) {
  config.validate();
  std::optional<CheckpointData> resume;
  if (resume_from) resume = read_checkpoint(*resume_from);
  TrainingData data = TrainingData::load(config.domain1_dir, config.domain2_dir, config.model.image_size);
  Trainer trainer(config, std::move(data));
  if (resume) trainer.restore(*resume);

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.output_dir.string() + ": " + ec.message());

  TrainingRun run;
  while (trainer.step_index() < config.iterations) {
    const double lr = trainer.current_lr();
    const std::uint64_t t = trainer.step_index();
    run.reports.push_back(trainer.step());
    if (log) *log << format_log_line(t, lr, run.reports.back()) << '\n';
    if (config.checkpoint_every > 0 && trainer.step_index() % config.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "step_%08llu.ckpt", static_cast<unsigned long long>(trainer.step_index()));
      trainer.save(config.output_dir / name);
    }
  }
  if (log) log->flush();
  run.final_checkpoint = config.output_dir / "final.ckpt";
  trainer.save(run.final_checkpoint);
  return run;
}

TrainConfig checkpoint_config(const CheckpointData& data) {
  KvConfig c;
  for (const auto& [key, value] : data.header.values()) {
    if (key.rfind("config.", 0) == 0) c.set(key.substr(7), value);
  }
  try {
    return TrainConfig::from_config(c);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint configuration is invalid: ") + e.what());
  }
}

TranslationModel<float> load_model(const CheckpointData& data) {
  TranslationModel<float> model(checkpoint_config(data).model);
  restore_model(model, data);
  return model;
}

TranslationModel<float> load_model(const fs::path& path) { return load_model(read_checkpoint(path)); }

}  // namespace i2i
