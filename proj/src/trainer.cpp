#include "outpaint/trainer.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "outpaint/errors.hpp"

namespace outpaint {

using nlohmann::json;
using nlohmann::ordered_json;

WganLosses wgan_losses(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw InvalidBatchError("critic outputs must be nonempty");
  double real = 0.0, fake = 0.0;
  for (double x : d_real) real += x;
  for (double x : d_fake) fake += x;
  real /= static_cast<double>(d_real.size());
  fake /= static_cast<double>(d_fake.size());
  return {fake - real, -fake};
}

double aux_classification_loss(const Tensor& a, const std::vector<CategoryVector>& y) {
  if (a.rank() != 2 || a.dim(0) != static_cast<int>(y.size()))
    throw ShapeError("predictions " + shape_str(a.shape()) + " vs " + std::to_string(y.size()) + " labels");
  const int k = a.dim(1);
  double total = 0.0;
  for (int p = 0; p < a.dim(0); ++p) {
    if (y[p].size() != k) throw ShapeError("label length differs from prediction width");
    for (int c = 0; c < k; ++c) {
      const double q = a[p * k + c];
      if (!(q > 0.0 && q < 1.0)) throw DomainError("prediction outside (0, 1): " + std::to_string(q));
      total -= y[p].bits[c] ? std::log(q) : std::log1p(-q);
    }
  }
  return total / static_cast<double>(a.numel());
}

// ---- config ----------------------------------------------------------------

void TrainingConfig::validate() const {
  if (batch_size < 1 || steps < 0 || dataset_size < 1 || r1_interval < 1 || log_every < 1)
    throw ConfigError("batch size, steps, dataset size and intervals must be positive");
  if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("learning rates must be positive");
  if (r1_gamma < 0 || drift < 0 || ema_rampup < 0) throw ConfigError("penalty weights must be nonnegative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must be in [0, 1)");
  generator.validate();
  discriminator.validate();
}

std::string TrainingConfig::to_json() const {
  ordered_json j;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["lr_g"] = lr_g;
  j["lr_d"] = lr_d;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["r1_gamma"] = r1_gamma;
  j["r1_interval"] = r1_interval;
  j["drift"] = drift;
  j["ema_kimg"] = ema_kimg;
  j["ema_rampup"] = ema_rampup;
  j["categorical"] = categorical;
  j["label_threshold"] = label_threshold;
  j["seed"] = seed;
  j["dataset_size"] = dataset_size;
  j["log_every"] = log_every;
  const auto& g = generator;
  j["generator"] = {{"z_dim", g.z_dim},
                    {"w_dim", g.w_dim},
                    {"num_classes", g.num_classes},
                    {"grid", {{"n", g.grid.n}, {"patch_h", g.grid.patch_h}, {"patch_w", g.grid.patch_w}}},
                    {"mapping_layers", g.mapping_layers},
                    {"mapping_lr_mul", g.mapping_lr_mul},
                    {"base_resolution", g.base_resolution},
                    {"channels", g.channels},
                    {"class_names", g.class_names}};
  const auto& d = discriminator;
  j["discriminator"] = {{"from_rgb", d.from_rgb}, {"channels", d.channels}, {"hidden", d.hidden}};
  return j.dump(2);
}

TrainingConfig TrainingConfig::from_json(const std::string& text) {
  TrainingConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.lr_g = j.value("lr_g", c.lr_g);
    c.lr_d = j.value("lr_d", c.lr_d);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
    c.r1_interval = j.value("r1_interval", c.r1_interval);
    c.drift = j.value("drift", c.drift);
    c.ema_kimg = j.value("ema_kimg", c.ema_kimg);
    c.ema_rampup = j.value("ema_rampup", c.ema_rampup);
    c.categorical = j.value("categorical", c.categorical);
    c.label_threshold = j.value("label_threshold", c.label_threshold);
    c.seed = j.value("seed", c.seed);
    c.dataset_size = j.value("dataset_size", c.dataset_size);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      auto& o = c.generator;
      o.z_dim = g.value("z_dim", o.z_dim);
      o.w_dim = g.value("w_dim", o.w_dim);
      o.num_classes = g.value("num_classes", o.num_classes);
      if (g.contains("grid")) {
        const auto& gr = g.at("grid");
        o.grid.n = gr.value("n", o.grid.n);
        o.grid.patch_h = gr.value("patch_h", o.grid.patch_h);
        o.grid.patch_w = gr.value("patch_w", o.grid.patch_w);
      }
      o.mapping_layers = g.value("mapping_layers", o.mapping_layers);
      o.mapping_lr_mul = g.value("mapping_lr_mul", o.mapping_lr_mul);
      o.base_resolution = g.value("base_resolution", o.base_resolution);
      o.channels = g.value("channels", o.channels);
      o.class_names = g.value("class_names", o.class_names);
    }
    if (j.contains("discriminator")) {
      const auto& d = j.at("discriminator");
      auto& o = c.discriminator;
      o.from_rgb = d.value("from_rgb", o.from_rgb);
      o.channels = d.value("channels", o.channels);
      o.hidden = d.value("hidden", o.hidden);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  // The critic always sees full images on the generator's grid.
  c.generator.categorical = c.categorical;
  c.discriminator.image_h = c.generator.grid.height();
  c.discriminator.image_w = c.generator.grid.width();
  c.discriminator.categorical = c.categorical;
  c.discriminator.num_classes = c.generator.num_classes;
  c.discriminator.grid_n = c.generator.grid.n;
  c.validate();
  return c;
}

TrainingConfig TrainingConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read training config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::string StepMetrics::to_json() const {
  ordered_json j{{"step", step},         {"loss_d", loss_d}, {"loss_g", loss_g},
                 {"d_real", d_real},     {"d_fake", d_fake}, {"r1", r1},
                 {"cls_real", cls_real}, {"cls_fake", cls_fake}};
  return j.dump();
}

// ---- trainer ---------------------------------------------------------------

namespace {

TrainingConfig synced(TrainingConfig c) {
  c.generator.categorical = c.categorical;
  if (c.categorical && c.generator.class_names.empty() &&
      c.generator.num_classes == static_cast<int>(scenery_class_names().size()))
    c.generator.class_names = scenery_class_names();
  c.discriminator.image_h = c.generator.grid.height();
  c.discriminator.image_w = c.generator.grid.width();
  c.discriminator.categorical = c.categorical;
  c.discriminator.num_classes = c.generator.num_classes;
  c.discriminator.grid_n = c.generator.grid.n;
  c.validate();
  return c;
}

ParamSet clone(const ParamSet& params) {
  ParamSet out;
  for (const auto& p : params.items()) out.add(p.name, p.var.value());
  return out;
}

double mean_of(const Tensor& t) { return t.sum() / static_cast<double>(t.numel()); }

}  // namespace

Trainer::Trainer(TrainingConfig config)
    : config_(synced(std::move(config))),
      generator_(config_.generator, config_.seed * 2 + 1),
      ema_(config_.generator, clone(generator_.params())),
      discriminator_(config_.discriminator, config_.seed * 2 + 2),
      opt_g_(generator_.params().vars(), config_.lr_g, config_.beta1, config_.beta2),
      opt_d_(discriminator_.params().vars(), config_.lr_d, config_.beta1, config_.beta2),
      rng_(config_.seed) {}

Tensor Trainer::stack_images(const std::vector<const DatasetRecord*>& batch) const {
  const GridSpec& g = config_.generator.grid;
  std::vector<Tensor> imgs;
  for (const auto* r : batch) {
    if (r->image.shape() != Shape{3, g.height(), g.width()})
      throw ShapeError("record image " + shape_str(r->image.shape()) + " does not match the grid");
    imgs.push_back(r->image);
  }
  return stack0(imgs);
}

Tensor Trainer::stack_labels(const std::vector<const DatasetRecord*>& batch) const {
  const GridSpec& g = config_.generator.grid;
  const int k = config_.generator.num_classes;
  Tensor out({static_cast<int>(batch.size()) * g.cells(), k});
  int row = 0;
  for (const auto* r : batch) {
    if (!r->labeled()) throw PreconditionError("categorical training needs segmentation maps");
    for (const auto& y : derive_patch_labels(r->segmentation, g, k, config_.label_threshold)) {
      for (int c = 0; c < k; ++c) out[row * k + c] = y.bits[c];
      ++row;
    }
  }
  return out;
}

Tensor Trainer::sample_z(int n) { return Tensor::randn({n, config_.generator.z_dim}, rng_); }

// Lazy R1: the parameter gradient of (gamma/2) E|grad_x D(x)|^2 is
// gamma * E[d/dtheta (grad_x D . g)] with g = grad_x D held fixed, which is a
// directional derivative of grad_theta D along g. It is taken by central
// differences in x, so no second-order graph is needed.
double r1_penalty_grad(Discriminator& discriminator, const Tensor& real, double weight) {
  const int n = real.dim(0);
  discriminator.params().set_requires_grad(false);
  ad::Var x = ad::parameter(real);
  ad::backward(ad::sum(discriminator.forward(x).score));
  discriminator.params().set_requires_grad(true);
  const Tensor g = x.grad();
  double sq = 0.0;
  for (double v : g.vec()) sq += v * v;
  const double mean_sq = sq / n;
  const double gmax = g.max_abs();
  if (gmax == 0.0 || weight == 0.0) return mean_sq;

  const double h = 1e-3 / gmax;
  const double scale = weight / (n * 2.0 * h);
  for (double sign : {1.0, -1.0}) {
    Tensor shifted = real;
    for (std::size_t k = 0; k < shifted.numel(); ++k) shifted[k] += sign * h * g[k];
    ad::Var score = discriminator.forward(ad::constant(shifted)).score;
    ad::backward(score, Tensor::full(score.shape(), sign * scale));
  }
  return mean_sq;
}

void Trainer::update_ema(int batch) {
  double beta = 0.0;
  if (config_.ema_kimg > 0) {
    double nimg = config_.ema_kimg * 1000.0;
    const double seen = static_cast<double>(step_ + 1) * batch;
    if (config_.ema_rampup > 0) nimg = std::min(nimg, seen * config_.ema_rampup);
    beta = std::pow(0.5, batch / std::max(nimg, 1e-8));
  }
  const auto& live = generator_.params().items();
  const auto& avg = ema_.params().items();
  for (std::size_t k = 0; k < live.size(); ++k) {
    const Tensor& src = live[k].var.value();
    ad::Var dst = avg[k].var;
    Tensor& d = dst.mutable_value();
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = src[i] + (d[i] - src[i]) * beta;
  }
}

void Trainer::diverged(const StepMetrics& m, const std::string& where) {
  if (!dump_dir_.empty()) {
    std::filesystem::create_directories(dump_dir_);
    ordered_json j;
    j["step"] = m.step;
    j["phase"] = where;
    j["metrics"] = ordered_json::parse(m.to_json(), nullptr, false);
    ordered_json bad = ordered_json::array();
    for (const auto* set : {&generator_.params(), &discriminator_.params()})
      for (const auto& p : set->items())
        if (!p.var.value().all_finite()) bad.push_back(p.name);
    j["non_finite_params"] = bad;
    std::ofstream(dump_dir_ / "divergence.json") << j.dump(2) << '\n';
  }
  throw DivergenceError("non-finite " + where + " at step " + std::to_string(m.step));
}

StepMetrics Trainer::train_step(const std::vector<const DatasetRecord*>& batch) {
  if (batch.empty()) throw InvalidBatchError("empty training batch");
  const int n = static_cast<int>(batch.size());
  const bool cat = config_.categorical;
  const Tensor real = stack_images(batch);
  const Tensor labels = cat ? stack_labels(batch) : Tensor();
  StepMetrics m;
  m.step = step_;

  // critic
  {
    discriminator_.params().zero_grad();
    generator_.params().set_requires_grad(false);
    const Tensor fake = decode_full(generator_, generator_.map(ad::constant(sample_z(n))), labels).value();
    generator_.params().set_requires_grad(true);

    auto out_real = discriminator_.forward(ad::constant(real));
    auto out_fake = discriminator_.forward(ad::constant(fake));
    const auto l = wgan_losses(out_real.score.value().span(), out_fake.score.value().span());
    m.d_real = mean_of(out_real.score.value());
    m.d_fake = mean_of(out_fake.score.value());
    m.loss_d = l.loss_d;
    std::vector<ad::Var> terms{ad::sub(ad::mean(out_fake.score), ad::mean(out_real.score))};
    if (config_.drift > 0)
      terms.push_back(ad::mul_scalar(ad::mean(ad::square(out_real.score)), config_.drift));
    if (cat) {
      ad::Var cls = ad::bce_with_logits(out_real.class_logits, labels);
      m.cls_real = cls.item();
      terms.push_back(cls);
    }
    ad::Var total = ad::add_n(terms);
    if (!std::isfinite(total.item())) diverged(m, "critic loss");
    ad::backward(total);
    if (config_.r1_gamma > 0 && step_ % config_.r1_interval == 0)
      m.r1 = r1_penalty_grad(discriminator_, real, config_.r1_gamma * config_.r1_interval);
    opt_d_.step();
  }

  // generator
  {
    generator_.params().zero_grad();
    discriminator_.params().set_requires_grad(false);
    ad::Var fake = decode_full(generator_, generator_.map(ad::constant(sample_z(n))), labels);
    auto out = discriminator_.forward(fake);
    discriminator_.params().set_requires_grad(true);
    ad::Var loss = ad::mul_scalar(ad::mean(out.score), -1.0);
    m.loss_g = loss.item();
    if (cat) {
      ad::Var cls = ad::bce_with_logits(out.class_logits, labels);
      m.cls_fake = cls.item();
      loss = ad::add(loss, cls);
    }
    if (!std::isfinite(loss.item())) diverged(m, "generator loss");
    ad::backward(loss);
    opt_g_.step();
    update_ema(n);
  }

  if (!generator_.params().all_finite() || !discriminator_.params().all_finite())
    diverged(m, "parameters");
  ++step_;
  return m;
}

std::vector<StepMetrics> Trainer::run(const std::vector<DatasetRecord>& data,
                                      const std::function<void(const StepMetrics&)>& on_log) {
  if (data.empty()) throw InvalidBatchError("empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<StepMetrics> log;
  for (int s = 0; s < config_.steps; ++s) {
    std::vector<const DatasetRecord*> batch;
    for (int b = 0; b < config_.batch_size; ++b) batch.push_back(&data[pick(rng_)]);
    StepMetrics m = train_step(batch);
    if (m.step % config_.log_every == 0 || s + 1 == config_.steps) {
      log.push_back(m);
      if (on_log) on_log(m);
    }
  }
  return log;
}

}  // namespace outpaint
