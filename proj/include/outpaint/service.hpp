#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "outpaint/composer.hpp"
#include "outpaint/errors.hpp"
#include "outpaint/evaluation.hpp"
#include "outpaint/generator.hpp"
#include "outpaint/inversion.hpp"

namespace httplib {
class Server;
}

namespace outpaint::service {

inline constexpr int kApiVersion = 1;
inline constexpr const char* kModelDirEnv = "OUTPAINT_MODEL_DIR";
inline constexpr const char* kPriorFile = "prior.json";

struct Model {
  std::string name;
  std::shared_ptr<const LatentDecoder> decoder;
  PriorStats prior;
  std::vector<std::string> class_names;
};

// `dir` is either a checkpoint directory holding prior.json, or a directory
// of such checkpoints (one model per subdirectory, named after it).
std::vector<Model> load_models(const std::filesystem::path& dir);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);  // throws PreconditionError

// Raised for requests that are well-formed HTTP but semantically invalid.
class RequestError : public Error {
 public:
  explicit RequestError(const std::string& what) : Error("invalid_request", what) {}
};

enum class JobKind { kOutpaint, kPanoramaStep, kEvaluate };
enum class JobStatus { kQueued, kRunning, kDone, kFailed };
std::string to_string(JobKind k);
std::string to_string(JobStatus s);

// Parsed and validated form of a POST /jobs body.
struct JobRequest {
  JobKind kind = JobKind::kOutpaint;
  std::size_t model = 0;
  OutpaintRequest outpaint;
  OutpaintOptions options;
  std::vector<Tensor> real, generated;
  std::vector<CandidateSet> sets;
  std::uint64_t embedder_seed = 0x5eed;
};

// Throws RequestError naming the offending field or class.
JobRequest parse_request(const nlohmann::json& body, const std::vector<Model>& models);

// Category payload {"i,j": [class names]} -> one label per cell (row-major).
std::vector<CategoryVector> parse_categories(const nlohmann::json& cells, const GridSpec& grid,
                                             const std::vector<std::string>& class_names);

struct JobSnapshot {
  std::string id;
  JobKind kind = JobKind::kOutpaint;
  JobStatus status = JobStatus::kQueued;
  std::string model;
  double progress = 0.0;
  int result_count = 0;
  std::vector<double> objectives;
  std::vector<nlohmann::json> trace;  // tail of the per-step loss terms
  std::optional<std::pair<std::string, std::string>> error;  // kind, message
  nlohmann::json report;  // evaluate jobs

  nlohmann::json to_json() const;
  static JobSnapshot from_json(const nlohmann::json& j);
};

enum class CancelOutcome { kNotFound, kFinished, kCancelling };

// Bounded worker pool over a FIFO queue. Each job lives in
// run_dir/jobs/<id>/ (request.json, status.json, result_<k>.png); finished
// jobs found there are served again after a restart.
class JobManager {
 public:
  JobManager(std::vector<Model> models, std::filesystem::path run_dir, int workers = 2);
  ~JobManager();
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  const std::vector<Model>& models() const { return models_; }

  std::string submit(const nlohmann::json& body);
  std::optional<JobSnapshot> status(const std::string& id) const;
  std::optional<std::string> result_png(const std::string& id, int k) const;
  CancelOutcome cancel(const std::string& id);
  // Blocks until the job is done or failed; false on timeout or unknown id.
  bool wait(const std::string& id, std::chrono::milliseconds timeout) const;

 private:
  struct Job;
  void worker();
  void run(Job& job);
  void persist(const Job& job) const;
  void load_finished();
  std::filesystem::path job_dir(const std::string& id) const;
  std::string new_id();

  std::vector<Model> models_;
  std::filesystem::path run_dir_;
  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::condition_variable queued_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_ = 0;
};

// HTTP front end. Handlers only parse, enqueue and read snapshots.
class HttpServer {
 public:
  explicit HttpServer(JobManager& jobs, std::filesystem::path static_dir = {});
  ~HttpServer();

  // Binds to `port` (0 = any free port) and returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  void routes();
  JobManager& jobs_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace outpaint::service
