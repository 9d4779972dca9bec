#include "sketchfill/service.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sketchfill/png_io.hpp"

namespace sketchfill {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

ModelEngine::ModelEngine(Model model, std::string checkpoint_id)
    : model_(std::move(model)), id_(std::move(checkpoint_id)) {}

std::shared_ptr<ModelEngine> ModelEngine::load(const fs::path& checkpoint) {
  return std::make_shared<ModelEngine>(load_checkpoint(checkpoint), sketchfill::checkpoint_id(checkpoint));
}

Image ModelEngine::run(const EditRequest& req) { return compose(req, model_); }

Box parse_box(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size() && item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ContractError("bbox: expected four numbers x0,y0,x1,y1");
    }
  }
  if (v.size() != 4) throw ContractError("bbox: expected four numbers x0,y0,x1,y1");
  return Box{v[0], v[1], v[2], v[3]};
}

namespace {

std::string iso_time(EditJob::Clock::time_point t) {
  const std::time_t tt = EditJob::Clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json job_json(const EditJob& j) {
  json out = {{"id", j.id}, {"state", to_string(j.state)}, {"created_at", iso_time(j.created_at)}};
  if (j.started_at) out["started_at"] = iso_time(*j.started_at);
  if (j.finished_at) out["finished_at"] = iso_time(*j.finished_at);
  if (j.error) out["error"] = *j.error;
  if (j.state == JobState::done) out["result_url"] = "/v1/edits/" + j.id + "/result";
  out["width"] = j.request.image.width();
  out["height"] = j.request.image.height();
  out["rho"] = j.request.rho;
  out["steps"] = j.request.steps;
  out["seed"] = j.request.seed;
  return out;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, {{"error", msg}});
}

/// 400-class problem found while parsing a submission.
struct BadRequest {
  int status;
  std::string message;
};

}  // namespace

struct EditService::Impl {
  ServiceOptions opts;
  httplib::Server server;
  int bound_port = -1;
  std::thread http_thread;

  mutable std::mutex mu;
  mutable std::condition_variable cv;
  std::shared_ptr<EditEngine> engine;
  std::map<std::string, EditJob> jobs;
  std::deque<std::string> queue;
  uint64_t next_sequence = 0;
  bool stopping = false;
  std::vector<std::thread> workers;
  std::mt19937_64 id_rng{std::random_device{}()};

  explicit Impl(ServiceOptions o) : opts(std::move(o)) {
    if (opts.workers < 1) throw ContractError("service: workers must be >= 1");
    fs::create_directories(opts.result_dir);
    for (int i = 0; i < opts.workers; ++i) workers.emplace_back([this] { worker_loop(); });
    routes();
  }

  ~Impl() {
    {
      std::lock_guard lock(mu);
      stopping = true;
    }
    cv.notify_all();
    server.stop();
    if (http_thread.joinable()) http_thread.join();
    for (auto& w : workers) w.join();
  }

  std::string new_id() {
    static const char* hex = "0123456789abcdef";
    std::string id;
    do {
      uint64_t v = id_rng();
      id.clear();
      for (int i = 0; i < 16; ++i, v >>= 4) id += hex[v & 15];
    } while (jobs.count(id));
    return id;
  }

  // Caller holds mu.
  void transition(EditJob& j, JobState from, JobState to) {
    const bool legal = j.state == from && ((from == JobState::queued && to == JobState::running) ||
                                           (from == JobState::running && (to == JobState::done || to == JobState::failed)));
    if (!legal) throw std::logic_error("job " + j.id + ": illegal transition");
    j.state = to;
    if (to == JobState::running) j.started_at = EditJob::Clock::now();
    else j.finished_at = EditJob::Clock::now();
  }

  fs::path store_result(const Image& img) {
    const auto png = encode_png(img);
    const std::string name = sha256_hex(png) + ".png";
    const fs::path path = opts.result_dir / name;
    if (!fs::exists(path)) {
      const fs::path tmp = opts.result_dir / (name + "." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + ".tmp");
      write_file(tmp, png);
      fs::rename(tmp, path);
    }
    return path;
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      EditRequest req;
      std::shared_ptr<EditEngine> eng;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [this] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        auto& j = jobs.at(id);
        transition(j, JobState::queued, JobState::running);
        req = j.request;
        eng = engine;
      }
      std::optional<fs::path> path;
      std::optional<std::string> error;
      try {
        path = store_result(eng->run(req));
      } catch (const std::exception& e) {
        error = e.what();
      }
      {
        std::lock_guard lock(mu);
        auto& j = jobs.at(id);
        if (path) {
          j.result_path = path;
          transition(j, JobState::running, JobState::done);
        } else {
          j.error = error;
          transition(j, JobState::running, JobState::failed);
        }
      }
      cv.notify_all();
    }
  }

  std::string submit(EditRequest req) {
    std::shared_ptr<EditEngine> eng;
    {
      std::lock_guard lock(mu);
      eng = engine;
    }
    if (!eng) throw ServiceError("no checkpoint loaded");
    validate(req, *eng);
    std::string id;
    {
      std::lock_guard lock(mu);
      id = new_id();
      EditJob j;
      j.id = id;
      j.request = std::move(req);
      j.created_at = EditJob::Clock::now();
      j.sequence = next_sequence++;
      jobs.emplace(id, std::move(j));
      queue.push_back(id);
    }
    cv.notify_all();
    return id;
  }

  static void validate(EditRequest& req, const EditEngine& eng) {
    const int size = eng.image_size();
    if (req.image.width() != size || req.image.height() != size) {
      throw ContractError("image must be " + std::to_string(size) + "x" + std::to_string(size));
    }
    if (!req.mask.same_shape(req.image)) throw ContractError("mask size differs from image");
    if (!req.sketch.same_shape(req.image)) throw ContractError("sketch size differs from image");
    if (!req.mask.any()) throw ContractError("mask empty");
    if (req.steps < 1 || req.steps > eng.max_steps()) {
      throw ContractError("steps must be in [1, " + std::to_string(eng.max_steps()) + "]");
    }
    if (!(req.rho >= 0.0 && req.rho <= 1.0)) throw ContractError("rho must be in [0, 1]");
    if (req.feather < 0) throw ContractError("feather must be >= 0");
    req.sketch = req.sketch & req.mask;
  }

  EditRequest parse_submission(const httplib::Request& r, const EditEngine& eng) const {
    if (!r.is_multipart_form_data()) throw BadRequest{400, "expected multipart/form-data"};
    for (const auto& [name, part] : r.files) {
      if (part.content.size() > opts.max_part_bytes) {
        throw BadRequest{413, "part '" + name + "' exceeds " + std::to_string(opts.max_part_bytes) + " bytes"};
      }
    }
    auto bytes = [&](const char* name) -> const std::string& {
      if (!r.has_file(name)) throw BadRequest{400, std::string("missing field '") + name + "'"};
      return r.files.find(name)->second.content;
    };
    auto span_of = [](const std::string& s) {
      return std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size());
    };
    auto text = [&](const char* name) -> std::optional<std::string> {
      if (!r.has_file(name)) return std::nullopt;
      return r.files.find(name)->second.content;
    };
    auto number = [&](const char* name, auto fallback) {
      using T = decltype(fallback);
      auto v = text(name);
      if (!v) return fallback;
      try {
        size_t used = 0;
        T out{};
        if constexpr (std::is_floating_point_v<T>) out = static_cast<T>(std::stod(*v, &used));
        else out = static_cast<T>(std::stoull(*v, &used));
        if (used != v->size()) throw std::invalid_argument("");
        return out;
      } catch (const std::exception&) {
        throw BadRequest{400, std::string("field '") + name + "' is not a number"};
      }
    };

    EditRequest req;
    auto decode = [&](const char* name, auto fn) {
      try {
        return fn(span_of(bytes(name)));
      } catch (const IoError& e) {
        throw BadRequest{400, std::string("field '") + name + "' is not a PNG image"};
      }
    };
    req.image = decode("image", [](auto s) { return decode_png_rgb(s); });
    req.mask = decode("mask", [](auto s) { return decode_png_binary(s); });
    req.sketch = decode("sketch", [](auto s) { return decode_png_binary(s); });

    const bool has_ref = r.has_file("reference");
    const bool has_box = r.has_file("self_ref_bbox");
    if (has_ref == has_box) throw BadRequest{400, "exactly one of 'reference' and 'self_ref_bbox' is required"};
    try {
      if (has_ref) {
        req.reference = resize_reference(decode("reference", [](auto s) { return decode_png_rgb(s); }),
                                         eng.reference_size());
      } else {
        req.reference = self_reference(req.image, parse_box(*text("self_ref_bbox")), eng.reference_size());
      }
    } catch (const ContractError& e) {
      throw BadRequest{400, e.what()};
    }
    req.rho = number("rho", 1.0);
    req.steps = number("steps", static_cast<long long>(eng.default_steps()));
    req.seed = number("seed", uint64_t{0});
    req.feather = static_cast<int>(number("feather", 0LL));
    try {
      if (auto m = text("mode")) req.mode = parse_sampler_mode(*m);
      if (auto p = text("sketch_phase")) req.sketch_phase = parse_sketch_phase(*p);
    } catch (const std::exception& e) {
      throw BadRequest{400, e.what()};
    }
    return req;
  }

  void routes() {
    server.set_payload_max_length(opts.max_part_bytes * 8 + (1u << 20));
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    // SO_REUSEADDR only: SO_REUSEPORT would let a second server share an occupied port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      std::shared_ptr<EditEngine> eng;
      {
        std::lock_guard lock(mu);
        eng = engine;
      }
      if (!eng) return send_json(res, 503, {{"status", "loading"}, {"checkpoint_id", nullptr}});
      send_json(res, 200, {{"status", "ok"}, {"checkpoint_id", eng->checkpoint_id()}});
    });

    server.Post("/v1/edits", [this](const httplib::Request& r, httplib::Response& res) {
      std::shared_ptr<EditEngine> eng;
      {
        std::lock_guard lock(mu);
        eng = engine;
      }
      if (!eng) return send_error(res, 503, "no checkpoint loaded");
      try {
        auto id = submit(parse_submission(r, *eng));
        send_json(res, 202, {{"job_id", id}});
      } catch (const BadRequest& e) {
        send_error(res, e.status, e.message);
      } catch (const ContractError& e) {
        send_error(res, 400, e.what());
      } catch (const ServiceError& e) {
        send_error(res, 503, e.what());
      }
    });

    server.Get(R"(/v1/edits/([0-9A-Za-z]+))", [this](const httplib::Request& r, httplib::Response& res) {
      std::lock_guard lock(mu);
      auto it = jobs.find(r.matches[1]);
      if (it == jobs.end()) return send_error(res, 404, "unknown job");
      send_json(res, 200, job_json(it->second));
    });

    server.Get(R"(/v1/edits/([0-9A-Za-z]+)/result)", [this](const httplib::Request& r, httplib::Response& res) {
      std::optional<fs::path> path;
      {
        std::lock_guard lock(mu);
        auto it = jobs.find(r.matches[1]);
        if (it == jobs.end()) return send_error(res, 404, "unknown job");
        if (it->second.state != JobState::done) {
          return send_error(res, 404, std::string("job is ") + to_string(it->second.state));
        }
        path = it->second.result_path;
      }
      const auto data = read_file(*path);
      res.status = 200;
      res.set_content(std::string(data.begin(), data.end()), "image/png");
    });
  }
};

EditService::EditService(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

EditService::~EditService() = default;

void EditService::set_engine(std::shared_ptr<EditEngine> engine) {
  std::lock_guard lock(impl_->mu);
  impl_->engine = std::move(engine);
}

bool EditService::ready() const {
  std::lock_guard lock(impl_->mu);
  return impl_->engine != nullptr;
}

std::string EditService::submit(EditRequest req) { return impl_->submit(std::move(req)); }

std::optional<EditJob> EditService::job(const std::string& id) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->jobs.find(id);
  if (it == impl_->jobs.end()) return std::nullopt;
  return it->second;
}

bool EditService::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(impl_->mu);
  return impl_->cv.wait_for(lock, timeout, [&] {
    auto it = impl_->jobs.find(id);
    return it == impl_->jobs.end() || it->second.state == JobState::done || it->second.state == JobState::failed;
  });
}

void EditService::bind() {
  auto& s = impl_->server;
  const auto& o = impl_->opts;
  if (o.port == 0) {
    impl_->bound_port = s.bind_to_any_port(o.host);
    if (impl_->bound_port < 0) throw ServiceError("cannot bind " + o.host);
  } else {
    if (!s.bind_to_port(o.host, o.port)) {
      throw ServiceError("cannot bind " + o.host + ":" + std::to_string(o.port) + " (port in use?)");
    }
    impl_->bound_port = o.port;
  }
}

int EditService::port() const { return impl_->bound_port; }

void EditService::listen() {
  if (impl_->bound_port < 0) throw ServiceError("listen before bind");
  impl_->server.listen_after_bind();
}

void EditService::start() {
  bind();
  impl_->http_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void EditService::stop() {
  impl_->server.stop();
  if (impl_->http_thread.joinable()) impl_->http_thread.join();
}

}  // namespace sketchfill
