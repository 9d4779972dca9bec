#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "sketchfill/inference.hpp"

namespace sketchfill {

class ServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// What the service needs from a loaded model.
class EditEngine {
 public:
  virtual ~EditEngine() = default;
  virtual Image run(const EditRequest& req) = 0;
  virtual int image_size() const = 0;
  virtual int reference_size() const = 0;
  virtual int default_steps() const = 0;
  virtual int max_steps() const = 0;
  virtual std::string checkpoint_id() const = 0;
};

/// EditEngine over a checkpointed Model; compose runs concurrently on shared weights.
class ModelEngine final : public EditEngine {
 public:
  ModelEngine(Model model, std::string checkpoint_id);
  static std::shared_ptr<ModelEngine> load(const std::filesystem::path& checkpoint);

  Image run(const EditRequest& req) override;
  int image_size() const override { return model_.config.image_size; }
  int reference_size() const override { return model_.config.reference_size; }
  int default_steps() const override { return model_.config.sample_steps; }
  int max_steps() const override { return model_.schedule.T; }
  std::string checkpoint_id() const override { return id_; }

 private:
  Model model_;
  std::string id_;
};

enum class JobState { queued, running, done, failed };
const char* to_string(JobState s);

struct EditJob {
  using Clock = std::chrono::system_clock;

  std::string id;
  JobState state = JobState::queued;
  EditRequest request;
  std::optional<std::filesystem::path> result_path;
  std::optional<std::string> error;
  Clock::time_point created_at;
  std::optional<Clock::time_point> started_at;
  std::optional<Clock::time_point> finished_at;
  uint64_t sequence = 0;  // submission order
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int workers = 1;
  std::filesystem::path result_dir = "results";
  size_t max_part_bytes = 4u << 20;
};

/// Async edit service: a FIFO job queue drained by `workers` threads plus the /v1 HTTP API.
///   POST /v1/edits              multipart image, mask, sketch, reference | self_ref_bbox,
///                               rho, steps, seed (optional: mode, sketch_phase, feather)
///   GET  /v1/edits/{id}         job status JSON
///   GET  /v1/edits/{id}/result  PNG once done
///   GET  /v1/health             {status, checkpoint_id}, 503 until an engine is set
class EditService {
 public:
  explicit EditService(ServiceOptions opts);
  ~EditService();
  EditService(const EditService&) = delete;
  EditService& operator=(const EditService&) = delete;

  void set_engine(std::shared_ptr<EditEngine> engine);
  bool ready() const;

  /// Enqueues a validated request; throws ContractError for invalid ones.
  std::string submit(EditRequest req);
  std::optional<EditJob> job(const std::string& id) const;
  /// Blocks until the job is done or failed, or the timeout passes.
  bool wait(const std::string& id, std::chrono::milliseconds timeout) const;

  /// Binds the listening socket; throws ServiceError when the port is unavailable.
  void bind();
  int port() const;
  /// Serves until stop(). Requires bind().
  void listen();
  /// bind() + listen() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Parses "x0,y0,x1,y1".
Box parse_box(const std::string& s);

}  // namespace sketchfill
