#include "outpaint/service.hpp"

#include <algorithm>
#include <boost/beast/core/detail/base64.hpp>
#include <cstdio>
#include <fstream>
#include <httplib.h>
#include <iomanip>
#include <random>
#include <sstream>

#include "outpaint/checkpoint.hpp"
#include "outpaint/image_io.hpp"

namespace outpaint::service {

namespace fs = std::filesystem;
using nlohmann::json;
namespace b64 = boost::beast::detail::base64;

namespace {

constexpr std::size_t kTraceTail = 20;
constexpr int kMaxCandidates = 16;

Model load_one(const fs::path& dir) {
  Model m;
  m.name = fs::canonical(dir).filename().string();
  auto gen = std::make_shared<Generator>(checkpoint::load_generator(dir));
  gen->freeze();
  if (!fs::exists(dir / kPriorFile))
    throw IoError("model " + m.name + " has no " + kPriorFile + " (run estimate-prior)");
  m.prior = PriorStats::load(dir / kPriorFile);
  if (m.prior.dim() != gen->style_dim()) throw IoError("prior of " + m.name + " does not match its style width");
  m.class_names = gen->config().class_names;
  if (gen->categorical() && m.class_names.empty())
    for (int k = 0; k < gen->num_classes(); ++k) m.class_names.push_back("class" + std::to_string(k));
  m.decoder = std::move(gen);
  return m;
}

const json& field(const json& body, const char* name) {
  if (!body.contains(name)) throw RequestError(std::string("missing field '") + name + "'");
  return body.at(name);
}

template <class T>
T get_or(const json& body, const char* name, T fallback) {
  if (!body.contains(name)) return fallback;
  try {
    return body.at(name).get<T>();
  } catch (const json::exception&) {
    throw RequestError(std::string("field '") + name + "' has the wrong type");
  }
}

Tensor decode_image(const json& value, const char* what) {
  if (!value.is_string()) throw RequestError(std::string(what) + " must be a base64 PNG string");
  try {
    return to_tensor(decode_png(base64_decode(value.get<std::string>())));
  } catch (const Error& e) {
    throw RequestError(std::string("bad ") + what + ": " + e.what());
  }
}

Tensor decode_mask(const json& value, const GridSpec& g) {
  if (!value.is_string()) throw RequestError("mask must be a base64 PNG string");
  Raster r;
  try {
    r = decode_png(base64_decode(value.get<std::string>()));
  } catch (const Error& e) {
    throw RequestError(std::string("bad mask: ") + e.what());
  }
  if (r.height != g.height() || r.width != g.width())
    throw RequestError("bad mask: " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                       " does not match the " + std::to_string(g.width()) + "x" + std::to_string(g.height()) +
                       " canvas");
  Tensor mask({r.height, r.width});
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) mask[y * r.width + x] = r.at(y, x, 0) > 127 ? 1.0 : 0.0;
  return mask;
}

Lambdas parse_lambdas(const json& body) {
  Lambdas l;
  if (!body.contains("lambdas")) return l;
  const json& j = body.at("lambdas");
  if (!j.is_object()) throw RequestError("lambdas must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw RequestError("lambda '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "mse") l.mse = v;
    else if (key == "percept") l.percept = v;
    else if (key == "prior") l.prior = v;
    else if (key == "div") l.div = v;
    else if (key == "ms") l.ms = v;
    else throw RequestError("unknown lambda '" + key + "'");
  }
  return l;
}

json terms_json(int step, const ObjectiveTerms& t) {
  return {{"step", step},       {"mse", t.mse}, {"percept", t.percept}, {"prior", t.prior},
          {"div", t.div},       {"ms", t.ms},   {"total", t.total}};
}

json error_body(const std::string& kind, const std::string& message) {
  return {{"api_version", kApiVersion}, {"error", {{"kind", kind}, {"message", message}}}};
}

void write_atomic(const fs::path& file, const std::string& text) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, file);
}

}  // namespace

std::vector<Model> load_models(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("model directory " + dir.string() + " does not exist");
  if (fs::exists(dir / checkpoint::kManifest)) return {load_one(dir)};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / checkpoint::kManifest)) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw IoError("no checkpoints under " + dir.string());
  std::vector<Model> out;
  for (const auto& d : subdirs) out.push_back(load_one(d));
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(const std::string& text) {
  // beast stops at the first '=' (or any other non-alphabet byte); only
  // padding may follow
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  const std::size_t rest = text.size() - read;
  if (rest > 2 || text.find_first_not_of('=', read) != std::string::npos || (rest > 0 && text.size() % 4))
    throw PreconditionError("invalid base64 at offset " + std::to_string(read));
  out.resize(written);
  return out;
}

std::string to_string(JobKind k) {
  switch (k) {
    case JobKind::kOutpaint: return "outpaint";
    case JobKind::kPanoramaStep: return "panorama_step";
    case JobKind::kEvaluate: return "evaluate";
  }
  return "outpaint";
}

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "failed";
}

std::vector<CategoryVector> parse_categories(const json& cells, const GridSpec& grid,
                                             const std::vector<std::string>& class_names) {
  if (!cells.is_object()) throw RequestError("categories must be an object keyed by \"i,j\"");
  const int k = static_cast<int>(class_names.size());
  std::vector<CategoryVector> out(grid.cells(), CategoryVector::zeros(k));
  for (const auto& [key, names] : cells.items()) {
    int i = 0, j = 0;
    char comma = 0;
    std::istringstream in(key);
    if (!(in >> i >> comma >> j) || comma != ',' || !in.eof() || i < 1 || j < 1 || i > grid.n || j > grid.n)
      throw RequestError("bad cell key '" + key + "' (expected \"i,j\" with 1 <= i, j <= " +
                         std::to_string(grid.n) + ")");
    if (!names.is_array()) throw RequestError("cell " + key + " must list class names");
    for (const auto& n : names) {
      if (!n.is_string()) throw RequestError("cell " + key + " must list class names");
      const auto it = std::find(class_names.begin(), class_names.end(), n.get<std::string>());
      if (it == class_names.end()) throw RequestError("unknown class '" + n.get<std::string>() + "'");
      out[grid.cell_index(i, j)].bits[it - class_names.begin()] = 1;
    }
  }
  return out;
}

JobRequest parse_request(const json& body, const std::vector<Model>& models) {
  if (!body.is_object()) throw RequestError("request body must be a JSON object");
  if (get_or<int>(body, "api_version", -1) != kApiVersion)
    throw RequestError("api_version must be " + std::to_string(kApiVersion));
  JobRequest r;
  const std::string kind = get_or<std::string>(body, "kind", "outpaint");
  if (kind == "outpaint") r.kind = JobKind::kOutpaint;
  else if (kind == "panorama_step") r.kind = JobKind::kPanoramaStep;
  else if (kind == "evaluate") r.kind = JobKind::kEvaluate;
  else throw RequestError("unknown job kind '" + kind + "'");

  if (models.empty()) throw RequestError("no models loaded");
  if (body.contains("model")) {
    const std::string name = get_or<std::string>(body, "model", "");
    const auto it = std::find_if(models.begin(), models.end(), [&](const Model& m) { return m.name == name; });
    if (it == models.end()) throw RequestError("unknown model '" + name + "'");
    r.model = static_cast<std::size_t>(it - models.begin());
  }
  const Model& model = models[r.model];
  const LatentDecoder& dec = *model.decoder;
  const GridSpec& g = dec.grid();

  if (r.kind == JobKind::kEvaluate) {
    if (body.contains("real"))
      for (const auto& v : field(body, "real")) r.real.push_back(decode_image(v, "real image"));
    if (body.contains("generated"))
      for (const auto& v : field(body, "generated")) r.generated.push_back(decode_image(v, "generated image"));
    if (body.contains("candidate_sets"))
      for (const auto& s : field(body, "candidate_sets")) {
        CandidateSet set;
        for (const auto& v : field(s, "candidates")) set.candidates.push_back(decode_image(v, "candidate"));
        const Tensor& first = set.candidates.empty() ? Tensor() : set.candidates.front();
        if (set.candidates.size() < 2) throw RequestError("candidate sets need m >= 2");
        set.mask = decode_mask(field(s, "mask"), {1, first.dim(1), first.dim(2)});
        r.sets.push_back(std::move(set));
      }
    if (r.real.empty() && r.generated.empty() && r.sets.empty()) throw RequestError("nothing to evaluate");
    r.embedder_seed = get_or<std::uint64_t>(body, "embedder_seed", r.embedder_seed);
    return r;
  }

  OutpaintRequest& o = r.outpaint;
  o.reference = decode_image(field(body, "reference"), "reference");
  try {
    o.direction = parse_direction(get_or<std::string>(body, "direction", "right"));
  } catch (const Error& e) {
    throw RequestError(e.what());
  }
  o.m = get_or<int>(body, "m", 1);
  if (o.m < 1 || o.m > kMaxCandidates)
    throw RequestError("m must be in [1, " + std::to_string(kMaxCandidates) + "], got " + std::to_string(o.m));
  o.blend = get_or<bool>(body, "blend", true);
  if (body.contains("categories")) {
    if (!dec.categorical()) throw RequestError("model " + model.name + " is not categorical");
    o.categories = parse_categories(body.at("categories"), g, model.class_names);
  } else if (dec.categorical()) {
    o.categories.assign(g.cells(), CategoryVector::zeros(dec.num_classes()));
  }
  if (body.contains("mask")) {
    if (r.kind == JobKind::kPanoramaStep) throw RequestError("panorama steps take no mask");
    o.alpha = decode_mask(body.at("mask"), g);
  }

  OutpaintOptions& opt = r.options;
  opt.steps = get_or<int>(body, "steps", opt.steps);
  opt.lr = get_or<double>(body, "lr", opt.lr);
  opt.seed = get_or<std::uint64_t>(body, "seed", opt.seed);
  opt.lambdas = parse_lambdas(body);

  // Everything the workers would reject is rejected here instead.
  try {
    InversionProblem p;
    if (r.kind == JobKind::kPanoramaStep) {
      check_panorama_start(o.reference, o.direction, g);
      // the step inverts only the trailing columns, so probe with that shape
      OutpaintRequest probe = o;
      probe.reference = Tensor({3, g.height(), (g.n - 1) * g.patch_w});
      const GridPlan plan = plan_grid(probe, g);
      p.reference = plan.reference;
      p.mask = plan.mask;
    } else {
      const GridPlan plan = plan_grid(o, g);
      p.reference = plan.reference;
      p.mask = plan.mask;
    }
    p.m = o.m;
    p.lambdas = opt.lambdas;
    p.categories = o.categories;
    p.steps = opt.steps;
    p.lr = opt.lr;
    p.validate(dec);
  } catch (const RequestError&) {
    throw;
  } catch (const Error& e) {
    throw RequestError(e.what());
  }
  return r;
}

// ---- snapshots -------------------------------------------------------------

json JobSnapshot::to_json() const {
  json j;
  j["api_version"] = kApiVersion;
  j["id"] = id;
  j["kind"] = service::to_string(kind);
  j["status"] = service::to_string(status);
  j["model"] = model;
  j["progress"] = progress;
  json links = json::array();
  for (int k = 0; k < result_count; ++k) links.push_back("/jobs/" + id + "/results/" + std::to_string(k));
  j["results"] = links;
  j["objectives"] = objectives;
  j["trace"] = trace;
  j["error"] = error ? json{{"kind", error->first}, {"message", error->second}} : json(nullptr);
  j["report"] = report;
  return j;
}

JobSnapshot JobSnapshot::from_json(const json& j) {
  JobSnapshot s;
  s.id = j.at("id");
  const std::string kind = j.at("kind"), status = j.at("status");
  for (JobKind k : {JobKind::kOutpaint, JobKind::kPanoramaStep, JobKind::kEvaluate})
    if (service::to_string(k) == kind) s.kind = k;
  for (JobStatus st : {JobStatus::kQueued, JobStatus::kRunning, JobStatus::kDone, JobStatus::kFailed})
    if (service::to_string(st) == status) s.status = st;
  s.model = j.value("model", "");
  s.progress = j.value("progress", 0.0);
  s.result_count = static_cast<int>(j.at("results").size());
  s.objectives = j.value("objectives", std::vector<double>{});
  for (const auto& t : j.value("trace", json::array())) s.trace.push_back(t);
  if (j.contains("error") && !j.at("error").is_null())
    s.error = std::make_pair(j.at("error").at("kind").get<std::string>(), j.at("error").at("message").get<std::string>());
  s.report = j.value("report", json());
  return s;
}

// ---- job manager -----------------------------------------------------------

struct JobManager::Job {
  JobRequest request;
  JobSnapshot snap;
  bool cancel = false;
};

JobManager::JobManager(std::vector<Model> models, fs::path run_dir, int workers)
    : models_(std::move(models)), run_dir_(std::move(run_dir)) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  fs::create_directories(run_dir_ / "jobs");
  salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
  load_finished();
  for (int i = 0; i < workers; ++i) workers_.emplace_back([this] { worker(); });
}

JobManager::~JobManager() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  queued_.notify_all();
  for (auto& t : workers_) t.join();
}

fs::path JobManager::job_dir(const std::string& id) const { return run_dir_ / "jobs" / id; }

std::string JobManager::new_id() {
  std::uint64_t x = salt_ + 0x9e3779b97f4a7c15ull * ++counter_;
  x ^= x >> 31;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 29;
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << x;
  return out.str();
}

void JobManager::load_finished() {
  for (const auto& e : fs::directory_iterator(run_dir_ / "jobs")) {
    const fs::path file = e.path() / "status.json";
    if (!fs::exists(file)) continue;
    auto job = std::make_shared<Job>();
    try {
      job->snap = JobSnapshot::from_json(json::parse(read_file(file)));
    } catch (const std::exception&) {
      continue;
    }
    if (job->snap.status == JobStatus::kQueued || job->snap.status == JobStatus::kRunning) {
      job->snap.status = JobStatus::kFailed;
      job->snap.error = std::make_pair(std::string("interrupted"), std::string("service stopped before the job finished"));
      persist(*job);
    }
    jobs_[job->snap.id] = job;
  }
}

void JobManager::persist(const Job& job) const {
  write_atomic(job_dir(job.snap.id) / "status.json", job.snap.to_json().dump(2));
}

std::string JobManager::submit(const json& body) {
  JobRequest req = parse_request(body, models_);
  auto job = std::make_shared<Job>();
  job->request = std::move(req);
  std::lock_guard lock(mu_);
  std::string id;
  do id = new_id();
  while (jobs_.count(id));
  job->snap.id = id;
  job->snap.kind = job->request.kind;
  job->snap.model = models_[job->request.model].name;
  fs::create_directories(job_dir(id));
  write_atomic(job_dir(id) / "request.json", body.dump());
  persist(*job);
  jobs_[id] = job;
  queue_.push_back(job);
  queued_.notify_one();
  return id;
}

std::optional<JobSnapshot> JobManager::status(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->snap;
}

std::optional<std::string> JobManager::result_png(const std::string& id, int k) const {
  {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end() || it->second->snap.status != JobStatus::kDone || k < 0 ||
        k >= it->second->snap.result_count)
      return std::nullopt;
  }
  // written once before the job was marked done
  return read_file(job_dir(id) / ("result_" + std::to_string(k) + ".png"));
}

CancelOutcome JobManager::cancel(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return CancelOutcome::kNotFound;
  const JobStatus s = it->second->snap.status;
  if (s == JobStatus::kDone || s == JobStatus::kFailed) return CancelOutcome::kFinished;
  it->second->cancel = true;
  return CancelOutcome::kCancelling;
}

bool JobManager::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return changed_.wait_for(lock, timeout, [&] {
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return true;
    const JobStatus s = it->second->snap.status;
    return s == JobStatus::kDone || s == JobStatus::kFailed;
  }) && jobs_.count(id);
}

void JobManager::worker() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mu_);
      queued_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      job->snap.status = JobStatus::kRunning;
      persist(*job);
    }
    changed_.notify_all();
    run(*job);
    changed_.notify_all();
  }
}

void JobManager::run(Job& job) {
  const JobRequest& req = job.request;
  const Model& model = models_[req.model];
  std::vector<std::string> pngs;
  std::vector<double> objectives;
  json report;
  try {
    OutpaintOptions opt = req.options;
    opt.hooks.on_step = [&](int step, const ObjectiveTerms& t) {
      std::lock_guard lock(mu_);
      job.snap.progress = opt.steps > 0 ? static_cast<double>(step + 1) / opt.steps : 1.0;
      job.snap.trace.push_back(terms_json(step, t));
      if (job.snap.trace.size() > kTraceTail) job.snap.trace.erase(job.snap.trace.begin());
      return !job.cancel && !stopping_;
    };
    {
      std::lock_guard lock(mu_);
      if (job.cancel) throw CancelledError("cancelled before start");
    }
    switch (req.kind) {
      case JobKind::kOutpaint: {
        const OutpaintResult out = outpaint(req.outpaint, *model.decoder, model.prior, opt);
        objectives = candidate_objectives(out, *model.decoder, model.prior, opt.lambdas, req.outpaint.categories);
        for (const auto& c : out.candidates) pngs.push_back(encode_png(to_raster(c)));
        break;
      }
      case JobKind::kPanoramaStep: {
        const PanoramaStepResult out = panorama_candidates(req.outpaint.reference, req.outpaint.direction,
                                                           req.outpaint.m, *model.decoder, model.prior, opt,
                                                           req.outpaint.categories);
        objectives = out.objectives;
        for (const auto& c : out.images) pngs.push_back(encode_png(to_raster(c)));
        break;
      }
      case JobKind::kEvaluate: {
        const RandomPyramidEmbedder embedder(req.embedder_seed);
        report = json::parse(evaluate(req.real, req.generated, req.sets, embedder).to_json());
        break;
      }
    }
    for (std::size_t k = 0; k < pngs.size(); ++k)
      write_atomic(job_dir(job.snap.id) / ("result_" + std::to_string(k) + ".png"), pngs[k]);
    std::lock_guard lock(mu_);
    job.snap.status = JobStatus::kDone;
    job.snap.progress = 1.0;
    job.snap.result_count = static_cast<int>(pngs.size());
    job.snap.objectives = objectives;
    job.snap.report = report;
    persist(job);
  } catch (const Error& e) {
    std::lock_guard lock(mu_);
    job.snap.status = JobStatus::kFailed;
    job.snap.error = std::make_pair(e.kind(), std::string(e.what()));
    persist(job);
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    job.snap.status = JobStatus::kFailed;
    job.snap.error = std::make_pair(std::string("internal"), std::string(e.what()));
    persist(job);
  }
}

// ---- HTTP ------------------------------------------------------------------

HttpServer::HttpServer(JobManager& jobs, fs::path static_dir)
    : jobs_(jobs), server_(std::make_unique<httplib::Server>()) {
  routes();
  if (!static_dir.empty() && !server_->set_mount_point("/", static_dir.string()))
    throw IoError("static directory " + static_dir.string() + " does not exist");
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

void HttpServer::routes() {
  auto reply = [](httplib::Response& res, int code, const json& body) {
    res.status = code;
    res.set_content(body.dump(), "application/json");
  };

  server_->Get("/models", [this, reply](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& m : jobs_.models()) {
      const GridSpec& g = m.decoder->grid();
      list.push_back({{"name", m.name},
                      {"grid", {{"n", g.n}, {"patch_h", g.patch_h}, {"patch_w", g.patch_w}}},
                      {"categorical", m.decoder->categorical()},
                      {"num_classes", m.decoder->num_classes()},
                      {"style_dim", m.decoder->style_dim()},
                      {"prior_samples", m.prior.sample_count}});
    }
    reply(res, 200, {{"api_version", kApiVersion}, {"models", list}});
  });

  server_->Get("/categories", [this, reply](const httplib::Request& req, httplib::Response& res) {
    const auto& models = jobs_.models();
    const Model* m = models.empty() ? nullptr : &models.front();
    if (req.has_param("model")) {
      const std::string name = req.get_param_value("model");
      m = nullptr;
      for (const auto& c : models)
        if (c.name == name) m = &c;
      if (!m) return reply(res, 404, error_body("not_found", "unknown model '" + name + "'"));
    }
    if (!m) return reply(res, 404, error_body("not_found", "no models loaded"));
    json cats = json::array();
    for (std::size_t k = 0; k < m->class_names.size(); ++k)
      cats.push_back({{"index", k}, {"name", m->class_names[k]}});
    reply(res, 200, {{"api_version", kApiVersion}, {"model", m->name}, {"categories", cats}});
  });

  server_->Post("/jobs", [this, reply](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return reply(res, 422, error_body("invalid_request", std::string("malformed JSON: ") + e.what()));
    }
    try {
      const std::string id = jobs_.submit(body);
      reply(res, 202, {{"api_version", kApiVersion}, {"id", id}, {"status", "queued"}, {"href", "/jobs/" + id}});
    } catch (const RequestError& e) {
      reply(res, 422, error_body(e.kind(), e.what()));
    }
  });

  server_->Get(R"(/jobs/([0-9a-f]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    const auto snap = jobs_.status(req.matches[1]);
    if (!snap) return reply(res, 404, error_body("not_found", "unknown job"));
    reply(res, 200, snap->to_json());
  });

  server_->Get(R"(/jobs/([0-9a-f]+)/results/(\d+))", [this, reply](const httplib::Request& req,
                                                                   httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto snap = jobs_.status(id);
    if (!snap) return reply(res, 404, error_body("not_found", "unknown job"));
    if (snap->status != JobStatus::kDone)
      return reply(res, 409, error_body("not_ready", "job is " + to_string(snap->status)));
    const auto png = jobs_.result_png(id, std::stoi(req.matches[2]));
    if (!png) return reply(res, 404, error_body("not_found", "no such result"));
    res.status = 200;
    res.set_content(*png, "image/png");
  });

  server_->Post(R"(/jobs/([0-9a-f]+)/cancel)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    switch (jobs_.cancel(req.matches[1])) {
      case CancelOutcome::kNotFound: return reply(res, 404, error_body("not_found", "unknown job"));
      case CancelOutcome::kFinished: return reply(res, 409, error_body("conflict", "job already finished"));
      case CancelOutcome::kCancelling:
        return reply(res, 202, {{"api_version", kApiVersion}, {"id", std::string(req.matches[1])}, {"cancelling", true}});
    }
  });
}

}  // namespace outpaint::service
