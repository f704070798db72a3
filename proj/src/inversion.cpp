#include "outpaint/inversion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>

#include "moments.hpp"
#include "outpaint/composer.hpp"
#include "outpaint/errors.hpp"

namespace outpaint {

using nlohmann::ordered_json;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor binary_mask(const Tensor& mask) {
  Tensor out = mask;
  for (auto& x : out.vec()) x = x > 0.5 ? 1.0 : 0.0;
  return out;
}

// Repeats a [3, H, W] tensor N times and optionally multiplies by the mask.
Tensor repeat_image(const Tensor& image, int n, const Tensor* mask) {
  const int c = image.dim(0), hw = image.dim(1) * image.dim(2);
  Tensor out({n, c, image.dim(1), image.dim(2)});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p)
        out[(static_cast<long>(b) * c + ch) * hw + p] = image[ch * hw + p] * (mask ? (*mask)[p] : 1.0);
  return out;
}

void check_image_mask(const ad::Var& composed, const Tensor& reference, const Tensor& mask) {
  const auto& s = composed.shape();
  if (s.size() != 4 || s[1] != 3 || reference.shape() != Shape{3, s[2], s[3]} ||
      mask.shape() != Shape{s[2], s[3]})
    throw ShapeError("image " + shape_str(s) + ", reference " + shape_str(reference.shape()) + ", mask " +
                     shape_str(mask.shape()) + " do not line up");
}

Tensor row(const std::vector<double>& v) { return Tensor({1, static_cast<int>(v.size())}, v); }

Tensor stack_codes(const std::vector<StyleCode>& codes) {
  if (codes.empty()) return Tensor({0, 0});
  const int d = static_cast<int>(codes[0].values.size());
  Tensor out({static_cast<int>(codes.size()), d});
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (static_cast<int>(codes[i].values.size()) != d) throw ShapeError("codes differ in length");
    std::copy(codes[i].values.begin(), codes[i].values.end(), out.data() + i * d);
  }
  return out;
}

ad::Var zero_scalar() { return ad::constant(Tensor({1}, 0.0)); }

ad::Var pair_l1(const ad::Var& x, int i, int j) {
  return ad::sum(ad::abs(ad::sub(ad::rows(x, {i}), ad::rows(x, {j}))));
}

ad::Var mode_seeking_from_images(const ad::Var& w, const ad::Var& images) {
  const int m = w.shape()[0];
  if (m < 2) return zero_scalar();
  std::vector<ad::Var> terms;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      terms.push_back(ad::div(pair_l1(images, i, j), ad::add_scalar(pair_l1(w, i, j), kModeSeekingEps)));
  return ad::add_n(terms);
}

}  // namespace

// ---- prior -----------------------------------------------------------------

namespace {

PriorStats finish_prior(const detail::GaussianFit& fit) {
  const int d = static_cast<int>(fit.mean().size());
  Eigen::MatrixXd sigma = fit.covariance();
  sigma = (0.5 * (sigma + sigma.transpose())).eval();
  const double eps = 1e-4 * sigma.trace() / d;
  sigma += eps * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw DomainError("prior covariance is not positive definite");
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  inv = (0.5 * (inv + inv.transpose())).eval();

  PriorStats s;
  s.sample_count = fit.count();
  s.mu = Tensor({d});
  s.sigma = Tensor({d, d});
  s.sigma_inv = Tensor({d, d});
  for (int i = 0; i < d; ++i) {
    s.mu[i] = fit.mean()[i];
    for (int j = 0; j < d; ++j) {
      s.sigma[i * d + j] = sigma(i, j);
      s.sigma_inv[i * d + j] = inv(i, j);
    }
  }
  return s;
}

void check_sample_count(long n, int d) {
  if (n < 10L * d)
    throw InsufficientSamplesError("prior needs at least " + std::to_string(10L * d) + " samples, got " +
                                   std::to_string(n));
}

}  // namespace

PriorStats prior_from_samples(const Tensor& v) {
  if (v.rank() != 2) throw ShapeError("prior samples must be [N, d]");
  check_sample_count(v.dim(0), v.dim(1));
  detail::GaussianFit fit(v.dim(1));
  fit.add(v.data(), v.dim(0));
  return finish_prior(fit);
}

PriorStats estimate_prior(const LatentDecoder& decoder, long sample_count, std::uint64_t seed) {
  const int d = decoder.style_dim();
  check_sample_count(sample_count, d);
  std::mt19937_64 rng(seed);
  detail::GaussianFit fit(d);
  constexpr long kChunk = 2000;
  for (long done = 0; done < sample_count; done += kChunk) {
    const int n = static_cast<int>(std::min(kChunk, sample_count - done));
    const Tensor z = Tensor::randn({n, decoder.latent_dim()}, rng);
    const Tensor v = gaussianize(decoder.map(ad::constant(z)).value());
    fit.add(v.data(), n);
  }
  return finish_prior(fit);
}

void PriorStats::save(const std::filesystem::path& file) const {
  ordered_json j;
  j["format"] = "outpaint-prior";
  j["version"] = 1;
  j["sample_count"] = sample_count;
  j["d"] = dim();
  j["mu"] = mu.vec();
  j["sigma"] = sigma.vec();
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump() << '\n';
}

PriorStats PriorStats::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read prior stats " + file.string());
  try {
    const auto j = ordered_json::parse(in);
    const int d = j.at("d");
    const auto mu = j.at("mu").get<std::vector<double>>();
    const auto sigma = j.at("sigma").get<std::vector<double>>();
    if (static_cast<int>(mu.size()) != d || static_cast<long>(sigma.size()) != 1L * d * d)
      throw IoError("prior stats sizes disagree with d");
    Eigen::Map<const RowMat> sm(sigma.data(), d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(sm);
    if (llt.info() != Eigen::Success) throw IoError("stored covariance is not positive definite");
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    inv = (0.5 * (inv + inv.transpose())).eval();
    PriorStats s;
    s.sample_count = j.at("sample_count");
    s.mu = Tensor({d}, mu);
    s.sigma = Tensor({d, d}, sigma);
    s.sigma_inv = Tensor({d, d});
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) s.sigma_inv[a * d + b] = inv(a, b);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed prior stats: ") + e.what());
  }
}

double prior_loss(const GaussianizedCode& v, const PriorStats& stats) {
  return prior_loss(ad::constant(row(v.values)), stats).item();
}

ad::Var prior_loss(const ad::Var& v, const PriorStats& stats) {
  if (v.value().rank() != 2 || v.shape()[1] != stats.dim())
    throw ShapeError("prior loss: code " + shape_str(v.shape()) + " vs prior dimension " +
                     std::to_string(stats.dim()));
  return ad::quad_form_rows(v, stats.mu, stats.sigma_inv);
}

// ---- reconstruction --------------------------------------------------------

ad::Var masked_mse(const ad::Var& composed, const Tensor& reference, const Tensor& mask) {
  check_image_mask(composed, reference, mask);
  const Tensor bm = binary_mask(mask);
  const double known = bm.sum();
  if (known == 0) throw DegenerateMaskError("mask selects no pixels");
  const int n = composed.shape()[0];
  const Tensor weights = repeat_image(Tensor::full(reference.shape(), 1.0), n, &bm);
  ad::Var diff = ad::sub(composed, ad::constant(repeat_image(reference, n, nullptr)));
  return ad::mul_scalar(ad::sum(ad::mul_const(ad::square(diff), weights)), 1.0 / (3.0 * known));
}

ad::Var masked_percept(const ad::Var& composed, const Tensor& reference, const Tensor& mask,
                       const PerceptualMetric& metric) {
  check_image_mask(composed, reference, mask);
  const Tensor bm = binary_mask(mask);
  if (bm.sum() == 0) throw DegenerateMaskError("mask selects no pixels");
  const int n = composed.shape()[0];
  const Tensor weights = repeat_image(Tensor::full(reference.shape(), 1.0), n, &bm);
  return ad::sum(
      metric.distance(ad::mul_const(composed, weights), ad::constant(repeat_image(reference, n, &bm))));
}

ReconLosses recon_losses(const Tensor& reference, const Tensor& composed, const Tensor& mask,
                         const PerceptualMetric& metric) {
  if (composed.shape() != reference.shape()) throw ShapeError("composed and reference shapes differ");
  Shape s = composed.shape();
  s.insert(s.begin(), 1);
  const ad::Var c = ad::constant(composed.reshaped(s));
  return {masked_mse(c, reference, mask).item(), masked_percept(c, reference, mask, metric).item()};
}

// ---- diversity -------------------------------------------------------------

ad::Var diversity_loss(const ad::Var& w) {
  if (w.value().rank() != 2) throw ShapeError("codes must be [m, d]");
  const int m = w.shape()[0];
  if (m < 2) return zero_scalar();
  std::vector<ad::Var> terms;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) terms.push_back(pair_l1(w, i, j));
  return ad::mul_scalar(ad::add_n(terms), -1.0);
}

double diversity_loss(const std::vector<StyleCode>& codes) {
  if (codes.empty()) throw ShapeError("diversity loss needs at least one code");
  return diversity_loss(ad::constant(stack_codes(codes))).item();
}

ad::Var mode_seeking_loss(const ad::Var& w, const FullDecodeFn& decode) {
  if (w.value().rank() != 2) throw ShapeError("codes must be [m, d]");
  if (w.shape()[0] < 2) return zero_scalar();
  return mode_seeking_from_images(w, decode(w));
}

double mode_seeking_loss(const std::vector<StyleCode>& codes, const FullDecodeFn& decode) {
  if (codes.empty()) throw ShapeError("mode-seeking loss needs at least one code");
  return mode_seeking_loss(ad::constant(stack_codes(codes)), decode).item();
}

// ---- objective -------------------------------------------------------------

bool InversionProblem::validate(const LatentDecoder& decoder) const {
  const GridSpec& g = decoder.grid();
  if (m < 1) throw PreconditionError("m must be at least 1");
  if (steps < 0) throw PreconditionError("steps must be nonnegative");
  if (!(lr > 0)) throw PreconditionError("learning rate must be positive");
  for (double l : {lambdas.mse, lambdas.percept, lambdas.prior, lambdas.div, lambdas.ms})
    if (!(l >= 0) || !std::isfinite(l)) throw PreconditionError("lambda weights must be finite and >= 0");
  if (reference.shape() != Shape{3, g.height(), g.width()})
    throw PreconditionError("reference " + shape_str(reference.shape()) + " does not match the " +
                            std::to_string(g.height()) + "x" + std::to_string(g.width()) + " canvas");
  if (mask.shape() != Shape{g.height(), g.width()})
    throw PreconditionError("mask " + shape_str(mask.shape()) + " does not match the canvas");
  if (!reference.all_finite() || !mask.all_finite()) throw PreconditionError("non-finite reference or mask");
  const double known = binary_mask(mask).sum();
  if (known == 0) throw DegenerateMaskError("mask selects no pixels");
  if (decoder.categorical()) {
    if (static_cast<int>(categories.size()) != g.cells())
      throw PreconditionError("categorical inversion needs one label per grid cell");
    for (const auto& y : categories)
      if (y.size() != decoder.num_classes()) throw PreconditionError("label length differs from class count");
  } else if (!categories.empty()) {
    throw UnsupportedModeError("category labels given for a non-categorical model");
  }
  return known == static_cast<double>(mask.numel());
}

Tensor problem_labels(const InversionProblem& problem, const LatentDecoder& decoder) {
  if (!decoder.categorical()) return {};
  const int cells = decoder.grid().cells(), k = decoder.num_classes();
  Tensor out({problem.m * cells, k});
  for (int i = 0; i < problem.m; ++i)
    for (int c = 0; c < cells; ++c)
      for (int b = 0; b < k; ++b) out[(i * cells + c) * k + b] = problem.categories[c].bits[b];
  return out;
}

Objective total_objective(const InversionProblem& problem, const ad::Var& w, const LatentDecoder& decoder,
                          const PriorStats& stats, const PerceptualMetric& metric) {
  if (w.value().rank() != 2 || w.shape()[1] != decoder.style_dim())
    throw ShapeError("codes " + shape_str(w.shape()) + " do not match the decoder");
  const Lambdas& l = problem.lambdas;
  Objective obj;
  obj.images = decode_full(decoder, w, problem_labels(problem, decoder));
  const ad::Var mse = masked_mse(obj.images, problem.reference, problem.mask);
  const ad::Var percept = masked_percept(obj.images, problem.reference, problem.mask, metric);
  const ad::Var prior = prior_loss(gaussianize(w), stats);
  const ad::Var div = diversity_loss(w);
  const ad::Var ms = mode_seeking_from_images(w, obj.images);
  obj.total = ad::add_n({ad::mul_scalar(mse, l.mse), ad::mul_scalar(percept, l.percept),
                         ad::mul_scalar(prior, l.prior), ad::mul_scalar(div, l.div), ad::mul_scalar(ms, l.ms)});
  obj.terms = {mse.item(), percept.item(), prior.item(), div.item(), ms.item(), obj.total.item()};
  return obj;
}

// ---- optimisation ----------------------------------------------------------

double lr_schedule(double t) {
  constexpr double kRampDown = 0.25, kRampUp = 0.05;
  double r = std::min(1.0, (1.0 - t) / kRampDown);
  r = 0.5 - 0.5 * std::cos(r * M_PI);
  return r * std::min(1.0, t / kRampUp);
}

InversionResult invert(const InversionProblem& problem, const LatentDecoder& decoder, const PriorStats& stats,
                       const PerceptualMetric& metric, const InversionHooks& hooks) {
  const auto start = std::chrono::steady_clock::now();
  InversionResult result;
  result.full_reconstruction = problem.validate(decoder);
  if (stats.dim() != decoder.style_dim()) throw PreconditionError("prior dimension differs from the decoder");

  std::mt19937_64 rng(problem.seed);
  const Tensor z = Tensor::randn({problem.m, decoder.latent_dim()}, rng);
  ad::Var w = ad::parameter(decoder.map(ad::constant(z)).value());
  Adam opt({w}, problem.lr);

  auto check = [&](const ObjectiveTerms& t, int step) {
    if (!std::isfinite(t.total) || !std::isfinite(t.mse) || !std::isfinite(t.percept) || !std::isfinite(t.prior) ||
        !std::isfinite(t.div) || !std::isfinite(t.ms))
      throw DivergenceError("non-finite inversion objective at step " + std::to_string(step) + " (mse " +
                            std::to_string(t.mse) + ", percept " + std::to_string(t.percept) + ", prior " +
                            std::to_string(t.prior) + ", ms " + std::to_string(t.ms) + ")");
  };

  for (int step = 0; step < problem.steps; ++step) {
    opt.set_lr(problem.lr * lr_schedule(static_cast<double>(step) / problem.steps));
    w.zero_grad();
    Objective obj = total_objective(problem, w, decoder, stats, metric);
    check(obj.terms, step);
    result.trace.push_back(obj.terms);
    ad::backward(obj.total);
    opt.step();
    if (hooks.on_step && !hooks.on_step(step, obj.terms))
      throw CancelledError("inversion cancelled at step " + std::to_string(step));
  }

  const ad::Var final_w = ad::constant(w.value());
  Objective last = total_objective(problem, final_w, decoder, stats, metric);
  check(last.terms, problem.steps);
  result.trace.push_back(last.terms);
  result.initial = result.trace.front();
  result.final = last.terms;

  const int d = decoder.style_dim();
  const Tensor& images = last.images.value();
  for (int i = 0; i < problem.m; ++i) {
    result.codes.push_back({std::vector<double>(w.value().data() + i * d, w.value().data() + (i + 1) * d)});
    result.generated.push_back(images.slice0(i));
    result.composed.push_back(compose(problem.reference, result.generated.back(), problem.mask));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---- gaussianity -----------------------------------------------------------

MomentReport moment_report(const Tensor& samples) {
  if (samples.rank() != 2) throw ShapeError("samples must be [N, d]");
  const long n = samples.dim(0);
  const int d = samples.dim(1);
  if (n < 1000) throw InsufficientSamplesError("gaussianity check needs at least 1000 samples");
  MomentReport r;
  r.mean.assign(d, 0.0);
  r.variance.assign(d, 0.0);
  r.skewness.assign(d, 0.0);
  r.excess_kurtosis.assign(d, 0.0);
  for (int k = 0; k < d; ++k) {
    double mean = 0.0;
    for (long i = 0; i < n; ++i) mean += samples[i * d + k];
    mean /= n;
    double m2 = 0, m3 = 0, m4 = 0;
    for (long i = 0; i < n; ++i) {
      const double c = samples[i * d + k] - mean, c2 = c * c;
      m2 += c2;
      m3 += c2 * c;
      m4 += c2 * c2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    r.mean[k] = mean;
    r.variance[k] = m2;
    if (m2 <= 1e-12 * std::max(1.0, mean * mean)) {
      r.degenerate = true;
      continue;
    }
    r.skewness[k] = m3 / std::pow(m2, 1.5);
    r.excess_kurtosis[k] = m4 / (m2 * m2) - 3.0;
  }
  for (int k = 0; k < d; ++k) {
    r.max_abs_skewness = std::max(r.max_abs_skewness, std::abs(r.skewness[k]));
    r.max_abs_excess_kurtosis = std::max(r.max_abs_excess_kurtosis, std::abs(r.excess_kurtosis[k]));
    r.mean_abs_skewness += std::abs(r.skewness[k]) / d;
    r.mean_abs_excess_kurtosis += std::abs(r.excess_kurtosis[k]) / d;
  }
  return r;
}

GaussianityReport gaussianity_check(const Tensor& w_samples) {
  return {moment_report(w_samples), moment_report(gaussianize(w_samples))};
}

std::string GaussianityReport::to_json() const {
  auto one = [](const MomentReport& r) {
    return ordered_json{{"degenerate", r.degenerate},
                        {"max_abs_skewness", r.max_abs_skewness},
                        {"max_abs_excess_kurtosis", r.max_abs_excess_kurtosis},
                        {"mean_abs_skewness", r.mean_abs_skewness},
                        {"mean_abs_excess_kurtosis", r.mean_abs_excess_kurtosis},
                        {"skewness", r.skewness},
                        {"excess_kurtosis", r.excess_kurtosis}};
  };
  return ordered_json{{"w", one(w)}, {"v", one(v)}}.dump(2);
}

}  // namespace outpaint
