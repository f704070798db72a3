// outpaint: train, invert, outpaint and serve from the command line.
//
// Failures print one JSON object {"error": {"kind", "message"}} on stderr
// and exit with status 2 (library errors) or 1 (anything else).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <csignal>
#include <iostream>
#include <sstream>

#include "outpaint/checkpoint.hpp"
#include "outpaint/composer.hpp"
#include "outpaint/evaluation.hpp"
#include "outpaint/image_io.hpp"
#include "outpaint/inversion.hpp"
#include "outpaint/scenery.hpp"
#include "outpaint/service.hpp"
#include "outpaint/trainer.hpp"

using namespace outpaint;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

service::HttpServer* g_server = nullptr;

service::Model load_model(const fs::path& dir) {
  if (!fs::exists(dir / checkpoint::kManifest)) throw IoError(dir.string() + " is not a checkpoint directory");
  return service::load_models(dir).front();
}

Tensor read_mask(const fs::path& path) {
  const Raster r = read_png(path);
  Tensor mask({r.height, r.width});
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) mask[y * r.width + x] = r.at(y, x, 0) > 127 ? 1.0 : 0.0;
  return mask;
}

std::vector<CategoryVector> read_categories(const std::string& arg, const service::Model& model) {
  const LatentDecoder& dec = *model.decoder;
  if (arg.empty())
    return dec.categorical() ? std::vector<CategoryVector>(dec.grid().cells(), CategoryVector::zeros(dec.num_classes()))
                             : std::vector<CategoryVector>{};
  if (!dec.categorical()) throw UnsupportedModeError("model " + model.name + " is not categorical");
  // inline JSON, or a file holding it
  const std::string text = arg.front() == '{' ? arg : read_file(arg);
  json cells;
  try {
    cells = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("categories: ") + e.what());
  }
  return service::parse_categories(cells, dec.grid(), model.class_names);
}

std::vector<Tensor> read_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png" && e.path().stem().extension() != ".seg") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Tensor> out;
  for (const auto& f : files) out.push_back(read_image(f));
  return out;
}

// {"sets": [{"candidates": ["a.png", ...], "mask": "m.png"}]}, paths
// relative to the manifest.
std::vector<CandidateSet> read_candidate_sets(const fs::path& manifest) {
  const json j = json::parse(read_file(manifest));
  const fs::path base = manifest.parent_path();
  std::vector<CandidateSet> sets;
  for (const auto& s : j.at("sets")) {
    CandidateSet set;
    for (const auto& c : s.at("candidates")) set.candidates.push_back(read_image(base / c.get<std::string>()));
    set.mask = read_mask(base / s.at("mask").get<std::string>());
    sets.push_back(std::move(set));
  }
  return sets;
}

std::vector<int> parse_choices(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("--select expects 'lowest' or a comma list of indices, got '" + text + "'");
    }
  }
  return out;
}

void fail(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-grid GAN outpainting"};
  app.require_subcommand(1);

  // make-dataset
  auto* mk = app.add_subcommand("make-dataset", "Write a synthetic labelled scenery dataset");
  fs::path mk_out;
  int mk_count = 512, mk_size = 64;
  std::uint64_t mk_seed = 0;
  mk->add_option("--out", mk_out, "Output directory")->required();
  mk->add_option("--count", mk_count, "Number of images")->check(CLI::Range(1, 1 << 24));
  mk->add_option("--size", mk_size, "Image side in pixels")->check(CLI::Range(8, 4096));
  mk->add_option("--seed", mk_seed, "Dataset seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a generator and write a checkpoint");
  fs::path tr_config, tr_data, tr_out;
  int tr_steps = -1, tr_batch = -1;
  std::optional<std::uint64_t> tr_seed;
  bool tr_cat = false;
  tr->add_option("--config", tr_config, "TrainingConfig JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", tr_data, "Dataset directory (default: synthetic scenery)");
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();
  tr->add_option("--steps", tr_steps, "Override the step count");
  tr->add_option("--batch", tr_batch, "Override the batch size");
  tr->add_option("--seed", tr_seed, "Override the seed");
  tr->add_flag("--categorical", tr_cat, "Train the category-conditioned variant");

  // estimate-prior
  auto* ep = app.add_subcommand("estimate-prior", "Estimate latent moments into <model>/prior.json");
  fs::path ep_model;
  long ep_samples = 100000;
  std::uint64_t ep_seed = 0;
  ep->add_option("--model", ep_model, "Checkpoint directory")->required();
  ep->add_option("--samples", ep_samples, "Number of latent samples");
  ep->add_option("--seed", ep_seed, "Sampling seed");

  // gaussianity
  auto* ga = app.add_subcommand("gaussianity", "Report moments of w and of the Gaussianized latent");
  fs::path ga_model;
  long ga_samples = 100000;
  std::uint64_t ga_seed = 0;
  ga->add_option("--model", ga_model, "Checkpoint directory")->required();
  ga->add_option("--samples", ga_samples, "Number of latent samples")->check(CLI::Range(1000L, 100000000L));
  ga->add_option("--seed", ga_seed, "Sampling seed");

  // outpaint
  auto* op = app.add_subcommand("outpaint", "Outpaint one image");
  fs::path op_model, op_input, op_mask, op_out = ".";
  std::string op_dir = "right", op_cats;
  int op_m = 1, op_steps = 800;
  double op_lr = 0.05;
  std::uint64_t op_seed = 0;
  bool op_no_blend = false;
  Lambdas op_l;
  op->add_option("--model", op_model, "Checkpoint directory (with prior.json)")->required();
  op->add_option("--input", op_input, "Reference PNG")->required()->check(CLI::ExistingFile);
  op->add_option("--mask", op_mask, "Canvas-sized mask PNG, white = known")->check(CLI::ExistingFile);
  op->add_option("--direction", op_dir, "left, right, up or down");
  op->add_option("-m,--candidates", op_m, "Number of candidates")->check(CLI::Range(1, 64));
  op->add_option("--steps", op_steps, "Optimisation steps");
  op->add_option("--lr", op_lr, "Adam learning rate");
  op->add_option("--seed", op_seed, "Initialisation seed");
  op->add_option("--categories", op_cats, "Per-cell classes as JSON {\"i,j\": [names]} or a file");
  op->add_option("--lambda-mse", op_l.mse);
  op->add_option("--lambda-percept", op_l.percept);
  op->add_option("--lambda-prior", op_l.prior);
  op->add_option("--lambda-div", op_l.div);
  op->add_option("--lambda-ms", op_l.ms);
  op->add_flag("--no-blend", op_no_blend, "Skip the halfway-patch seam blend");
  op->add_option("--out-dir", op_out, "Where candidate_<k>.png go");

  // panorama
  auto* pa = app.add_subcommand("panorama", "Grow a panorama patch column by patch column");
  fs::path pa_model, pa_input, pa_out = "panorama.png", pa_manifest, pa_replay;
  std::string pa_dir = "right", pa_select = "lowest", pa_cats;
  int pa_n = 4, pa_m = 1, pa_steps = 800;
  std::uint64_t pa_seed = 0;
  pa->add_option("--model", pa_model, "Checkpoint directory (with prior.json)")->required();
  pa->add_option("--input", pa_input, "Starting image PNG")->required()->check(CLI::ExistingFile);
  pa->add_option("--extend", pa_n, "Number of patch columns to add")->check(CLI::Range(0, 10000));
  pa->add_option("--direction", pa_dir, "left or right");
  pa->add_option("-m,--candidates", pa_m, "Candidates per step")->check(CLI::Range(1, 64));
  pa->add_option("--select", pa_select, "'lowest' or a comma list of candidate indices");
  pa->add_option("--steps", pa_steps, "Optimisation steps per extension");
  pa->add_option("--seed", pa_seed, "Base seed");
  pa->add_option("--categories", pa_cats, "Per-cell classes as JSON or a file");
  pa->add_option("--out", pa_out, "Output PNG");
  pa->add_option("--manifest", pa_manifest, "Write the replay manifest here");
  pa->add_option("--replay", pa_replay, "Rebuild from a manifest instead")->check(CLI::ExistingFile);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "FID, IS and candidate diversity");
  fs::path ev_real, ev_gen, ev_cands;
  std::uint64_t ev_seed = 0x5eed;
  ev->add_option("--real", ev_real, "Directory of real PNGs");
  ev->add_option("--generated", ev_gen, "Directory of generated PNGs");
  ev->add_option("--candidates", ev_cands, "Candidate-set manifest JSON")->check(CLI::ExistingFile);
  ev->add_option("--seed", ev_seed, "Feature embedder seed");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP job service");
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080, sv_workers = 2;
  fs::path sv_models, sv_run = "runs", sv_static;
  if (const char* env = std::getenv(service::kModelDirEnv)) sv_models = env;
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port)->check(CLI::Range(0, 65535));
  sv->add_option("--workers", sv_workers)->check(CLI::Range(1, 256));
  sv->add_option("--model-dir", sv_models, std::string("Checkpoints to serve (default $") + service::kModelDirEnv + ")");
  sv->add_option("--run-dir", sv_run, "Job storage");
  sv->add_option("--static", sv_static, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("invalid_arguments", e.what());
    return e.get_exit_code();
  }

  try {
    if (*mk) {
      const auto records = synth_scenery_dataset(mk_count, mk_seed, mk_size, mk_size);
      save_dataset(mk_out, records);
      std::cout << json{{"dataset", mk_out.string()}, {"count", mk_count}}.dump() << "\n";
    } else if (*tr) {
      TrainingConfig cfg = tr_config.empty() ? TrainingConfig{} : TrainingConfig::load(tr_config);
      if (tr_steps >= 0) cfg.steps = tr_steps;
      if (tr_batch > 0) cfg.batch_size = tr_batch;
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_cat) {
        cfg.categorical = true;
        cfg = TrainingConfig::from_json(cfg.to_json());  // re-derives the network configs
      }
      cfg.validate();
      const auto data = tr_data.empty() ? synth_scenery_dataset(cfg.dataset_size, cfg.seed, cfg.generator.grid.height(),
                                                                cfg.generator.grid.width())
                                        : load_dataset(tr_data);
      Trainer trainer(cfg);
      trainer.set_dump_dir(tr_out);
      const auto t0 = std::chrono::steady_clock::now();
      trainer.run(data, [&](const StepMetrics& m) {
        json j = json::parse(m.to_json());
        j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << j.dump() << std::endl;
      });
      checkpoint::save(tr_out, trainer.ema_generator(), &trainer.discriminator());
      write_file(tr_out / "training.json", cfg.to_json());
    } else if (*ep) {
      Generator g = checkpoint::load_generator(ep_model);
      g.freeze();
      const PriorStats stats = estimate_prior(g, ep_samples, ep_seed);
      stats.save(ep_model / service::kPriorFile);
      std::cout << json{{"prior", (ep_model / service::kPriorFile).string()}, {"samples", stats.sample_count}}.dump()
                << "\n";
    } else if (*ga) {
      Generator g = checkpoint::load_generator(ga_model);
      g.freeze();
      std::mt19937_64 rng(ga_seed);
      const int chunk = 4096;
      Tensor w({static_cast<int>(ga_samples), g.style_dim()});
      for (long done = 0; done < ga_samples; done += chunk) {
        const int n = static_cast<int>(std::min<long>(chunk, ga_samples - done));
        const Tensor part = g.map(ad::constant(Tensor::randn({n, g.latent_dim()}, rng))).value();
        std::copy(part.data(), part.data() + part.numel(), w.data() + done * g.style_dim());
      }
      std::cout << gaussianity_check(w).to_json() << "\n";
    } else if (*op) {
      const service::Model model = load_model(op_model);
      OutpaintRequest req;
      req.reference = read_image(op_input);
      if (!op_mask.empty()) req.alpha = read_mask(op_mask);
      req.direction = parse_direction(op_dir);
      req.m = op_m;
      req.blend = !op_no_blend;
      req.categories = read_categories(op_cats, model);
      OutpaintOptions opt;
      opt.steps = op_steps;
      opt.lr = op_lr;
      opt.seed = op_seed;
      opt.lambdas = op_l;
      const OutpaintResult out = outpaint::outpaint(req, *model.decoder, model.prior, opt);
      const auto objectives = candidate_objectives(out, *model.decoder, model.prior, op_l, req.categories);
      fs::create_directories(op_out);
      json files = json::array();
      for (std::size_t k = 0; k < out.candidates.size(); ++k) {
        const fs::path f = op_out / ("candidate_" + std::to_string(k) + ".png");
        write_image(f, out.candidates[k]);
        files.push_back(f.string());
      }
      const ObjectiveTerms& t = out.inversion.final;
      std::cout << json{{"candidates", files},
                        {"objectives", objectives},
                        {"final", {{"mse", t.mse}, {"percept", t.percept}, {"prior", t.prior}, {"div", t.div},
                                   {"ms", t.ms}, {"total", t.total}}},
                        {"seconds", out.inversion.seconds}}
                       .dump()
                << "\n";
    } else if (*pa) {
      const service::Model model = load_model(pa_model);
      const Tensor initial = read_image(pa_input);
      PanoramaResult result;
      if (!pa_replay.empty()) {
        result = replay_panorama(initial, PanoramaManifest::from_json(read_file(pa_replay)), *model.decoder,
                                 model.prior);
      } else {
        OutpaintOptions opt;
        opt.steps = pa_steps;
        opt.seed = pa_seed;
        const Selector sel = pa_select == "lowest" ? lowest_objective_selector() : fixed_selector(parse_choices(pa_select));
        result = panorama(initial, pa_n, parse_direction(pa_dir), pa_m, sel, *model.decoder, model.prior, opt,
                          read_categories(pa_cats, model));
      }
      write_image(pa_out, result.image);
      if (!pa_manifest.empty()) write_file(pa_manifest, result.manifest.to_json());
      std::cout << json{{"panorama", pa_out.string()}, {"width", result.image.dim(2)},
                        {"steps", result.manifest.steps.size()}}
                       .dump()
                << "\n";
    } else if (*ev) {
      const std::vector<Tensor> real = ev_real.empty() ? std::vector<Tensor>{} : read_image_dir(ev_real);
      const std::vector<Tensor> gen = ev_gen.empty() ? std::vector<Tensor>{} : read_image_dir(ev_gen);
      const auto sets = ev_cands.empty() ? std::vector<CandidateSet>{} : read_candidate_sets(ev_cands);
      if (real.empty() && gen.empty() && sets.empty()) throw PreconditionError("nothing to evaluate");
      const RandomPyramidEmbedder embedder(ev_seed);
      std::cout << evaluate(real, gen, sets, embedder).to_json() << "\n";
    } else if (*sv) {
      if (sv_models.empty())
        throw ConfigError(std::string("no models: pass --model-dir or set ") + service::kModelDirEnv);
      service::JobManager jobs(service::load_models(sv_models), sv_run, sv_workers);
      service::HttpServer server(jobs, sv_static);
      const int port = server.bind(sv_host, sv_port);
      g_server = &server;
      std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
      std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
      std::cerr << json{{"listening", sv_host + ":" + std::to_string(port)}, {"models", jobs.models().size()}}.dump()
                << std::endl;
      server.listen();
      g_server = nullptr;
    }
  } catch (const Error& e) {
    fail(e.kind(), e.what());
    return 2;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 0;
}
