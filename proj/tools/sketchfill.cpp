#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sketchfill/config.hpp"
#include "sketchfill/data_pipeline.hpp"
#include "sketchfill/evaluation.hpp"
#include "sketchfill/inference.hpp"
#include "sketchfill/model.hpp"
#include "sketchfill/png_io.hpp"
#include "sketchfill/service.hpp"
#include "sketchfill/tensor_util.hpp"
#include "sketchfill/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sketchfill;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string g_command_line;

json config_json(const RunConfig& c) {
  json out = json::object();
  for (const auto& [k, v] : c.to_key_values()) out[k] = v;
  return out;
}

void write_run_record(const fs::path& path, json record) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  record["command_line"] = g_command_line;
  std::ofstream out(path, std::ios::trunc);
  out << record.dump(2) << '\n';
  if (!out) throw IoError("cannot write run record " + path.string());
}

KeyValues parse_overrides(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  int n = 2200;
  int size = 64;
  uint64_t seed = 1234;
  int test_every = 11;
  std::string out;
  bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.n < 1) throw UsageError("--n must be >= 1");
  CorpusOptions opts;
  opts.test_every = a.test_every;
  opts.overwrite = a.force;
  const auto manifest = synth_corpus(a.n, a.size, a.seed, a.out, opts);
  write_run_record(fs::path(a.out) / "run_record.json",
                   {{"command", "gen-data"}, {"n", a.n}, {"size", a.size}, {"seed", a.seed},
                    {"test_every", a.test_every}, {"train", manifest.count(Split::train)},
                    {"test", manifest.count(Split::test)}});
  std::printf("wrote %zu train / %zu test images to %s\n", manifest.count(Split::train),
              manifest.count(Split::test), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train

struct ConfigArgs {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
};

struct TrainArgs {
  ConfigArgs cfg;
  int phase = 0;
  std::string init_from;
  std::string corpus;
  std::string out;
  int steps = -1;
  bool print_config = false;
};

int cmd_train(const TrainArgs& a) {
  auto overrides = parse_overrides(a.cfg.sets);
  if (a.phase != 0) overrides["phase"] = std::to_string(a.phase);
  if (!a.corpus.empty()) overrides["corpus"] = a.corpus;
  RunConfig cfg = resolve_config(a.cfg.preset, a.cfg.config, overrides);
  if (a.print_config) {
    std::cout << format_key_values(cfg.to_key_values());
    return 0;
  }
  if (a.out.empty()) throw UsageError("train: --out is required");
  if (cfg.corpus.empty()) throw UsageError("train: no corpus (use --corpus or the corpus key)");
  if (cfg.phase == 2 && a.init_from.empty()) throw UsageError("train: phase 2 requires --init-from <phase-1 checkpoint>");

  const fs::path out = a.out;
  json record = {{"command", "train"}, {"phase", cfg.phase}, {"config", config_json(cfg)}, {"status", "running"}};
  const fs::path record_path = out / ("run_record_phase" + std::to_string(cfg.phase) + ".json");
  write_run_record(record_path, record);

  const auto t0 = std::chrono::steady_clock::now();
  Corpus corpus = Corpus::load(cfg.corpus);
  if (corpus.train.empty()) throw UsageError("train: corpus has no training images");
  if (corpus.train.front().width() != cfg.image_size) {
    throw UsageError("train: corpus images are " + std::to_string(corpus.train.front().width()) +
                     " px but image_size is " + std::to_string(cfg.image_size));
  }

  Model model;
  if (cfg.phase == 1) {
    model = Model::create(cfg, false, derive_seed(cfg.seed, 0x1417));
    if (auto* conv = dynamic_cast<ConvCodec*>(model.codec.get())) {
      const double l1 = conv->train(stack_images(corpus.train), cfg.codec_train_steps, cfg.batch_size,
                                    cfg.learning_rate, derive_seed(cfg.seed, 0xc0dec));
      std::fprintf(stderr, "codec trained, final L1 %.4f\n", l1);
      record["codec_final_l1"] = l1;
    }
  } else {
    Model base = load_checkpoint(a.init_from);
    if (base.has_sketch_channel()) throw UsageError("train: --init-from must be a phase-1 (sketch-free) checkpoint");
    if (!(base.unet->spec() == UNetSpec::from_config(cfg, false)) ||
        !(base.encoder->spec() == EncoderSpec::from_config(cfg)) || base.codec->name() != cfg.codec) {
      throw UsageError("train: --init-from architecture does not match the requested config");
    }
    model = base;
    model.unet = extend_for_sketch(base.unet);
    model.config = cfg;
    record["init_from"] = a.init_from;
    record["init_checkpoint_id"] = checkpoint_id(a.init_from);
  }

  TrainOptions opts;
  opts.steps = a.steps >= 0 ? a.steps : cfg.steps_for_phase(cfg.phase, corpus.train.size());
  opts.out_dir = out;
  double window = 0;
  int window_n = 0;
  opts.on_step = [&](int step, double loss) {
    window += loss;
    ++window_n;
    if (step == 0 || (step + 1) % cfg.log_every == 0 || step + 1 == opts.steps) {
      std::fprintf(stderr, "phase %d step %d/%d loss %.5f (window mean %.5f) %.0fs\n", cfg.phase, step + 1,
                   opts.steps, loss, window / window_n, elapsed_seconds(t0));
      window = 0;
      window_n = 0;
    }
  };
  record["steps"] = opts.steps;
  write_run_record(record_path, record);

  TrainResult result;
  try {
    result = train_model(model, corpus.train, opts);
  } catch (const TrainingFault& e) {
    record["status"] = "failed";
    record["error"] = e.what();
    write_run_record(record_path, record);
    throw;
  }
  record["status"] = "done";
  record["final_checkpoint"] = result.final_checkpoint.string();
  record["checkpoint_id"] = checkpoint_id(result.final_checkpoint);
  record["first_loss"] = result.losses.empty() ? 0.0 : result.losses.front();
  record["final_loss"] = result.losses.empty() ? 0.0 : result.losses.back();
  record["seconds"] = elapsed_seconds(t0);
  write_run_record(record_path, record);
  std::printf("%s\n", result.final_checkpoint.c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt_e, ckpt_es, corpus, out = "eval_out";
  std::vector<uint64_t> seeds;
  int n = 100;
  int steps = 0;
  int batch = 50;
  bool whole_image = false;
};

int cmd_eval(const EvalArgs& a) {
  Model e = load_checkpoint(a.ckpt_e);
  Model es = load_checkpoint(a.ckpt_es);
  const std::string corpus_path = a.corpus.empty() ? e.config.corpus : a.corpus;
  if (corpus_path.empty()) throw UsageError("eval: no corpus (use --corpus)");
  Corpus corpus = Corpus::load(corpus_path);

  BenchmarkOptions opts;
  opts.n_examples = a.n;
  if (!a.seeds.empty()) opts.seeds = a.seeds;
  opts.steps = a.steps > 0 ? a.steps : e.config.sample_steps;
  opts.mode = parse_sampler_mode(e.config.sampler);
  opts.batch = a.batch;
  opts.region = a.whole_image ? MetricRegion::whole : MetricRegion::masked;
  opts.progress = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };

  const auto t0 = std::chrono::steady_clock::now();
  auto [re, rs] = run_benchmark(e, es, corpus, opts);
  const fs::path out = a.out;
  fs::create_directories(out);
  {
    std::ofstream jl(out / "report.jsonl", std::ios::trunc);
    jl << to_json(re).dump() << '\n' << to_json(rs).dump() << '\n';
  }
  const auto table = format_table({re, rs});
  {
    std::ofstream txt(out / "report.txt", std::ios::trunc);
    txt << table;
  }
  write_run_record(out / "run_record.json",
                   {{"command", "eval"}, {"ckpt_e", a.ckpt_e}, {"ckpt_es", a.ckpt_es},
                    {"ckpt_e_id", checkpoint_id(a.ckpt_e)}, {"ckpt_es_id", checkpoint_id(a.ckpt_es)},
                    {"corpus", corpus_path}, {"seeds", opts.seeds}, {"n_examples", opts.n_examples},
                    {"steps", opts.steps}, {"region", a.whole_image ? "whole" : "masked"},
                    {"config", config_json(e.config)}, {"seconds", elapsed_seconds(t0)}});
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string ckpt, image, mask, sketch, reference, self_ref_bbox, out;
  double rho = 1.0;
  uint64_t seed = 0;
  int steps = 0;
  std::string mode;
  std::string sketch_phase = "early";
  int feather = 0;
};

int cmd_infer(const InferArgs& a) {
  if (a.reference.empty() == a.self_ref_bbox.empty()) {
    throw UsageError("infer: give exactly one of --reference and --self-ref-bbox");
  }
  Model model = load_checkpoint(a.ckpt);
  EditRequest req;
  req.image = read_png_rgb(a.image);
  req.mask = read_png_binary(a.mask);
  req.sketch = a.sketch.empty() ? Bitmap(req.image.width(), req.image.height()) : read_png_binary(a.sketch);
  if (!req.sketch.same_shape(req.mask)) throw ContractError("infer: sketch size differs from mask");
  req.sketch = req.sketch & req.mask;
  req.reference = a.reference.empty()
                      ? self_reference(req.image, parse_box(a.self_ref_bbox), model.config.reference_size)
                      : resize_reference(read_png_rgb(a.reference), model.config.reference_size);
  req.rho = a.rho;
  req.seed = a.seed;
  req.steps = a.steps > 0 ? a.steps : model.config.sample_steps;
  req.mode = parse_sampler_mode(a.mode.empty() ? model.config.sampler : a.mode);
  req.sketch_phase = parse_sketch_phase(a.sketch_phase);
  req.feather = a.feather;

  const Image result = compose(req, model);
  write_png(a.out, result);

  json record = {{"command", "infer"}, {"ckpt", a.ckpt}, {"checkpoint_id", checkpoint_id(a.ckpt)},
                 {"image", a.image}, {"mask", a.mask}, {"sketch", a.sketch}, {"reference", a.reference},
                 {"self_ref_bbox", a.self_ref_bbox}, {"rho", req.rho}, {"seed", req.seed}, {"steps", req.steps},
                 {"mode", to_string(req.mode)}, {"sketch_phase", to_string(req.sketch_phase)},
                 {"feather", req.feather}, {"out", a.out}};
  std::string agreement = "n/a";
  if (req.sketch.any()) {
    try {
      char buf[32];
      const double s = sketch_agreement(result, req.sketch, req.mask);
      std::snprintf(buf, sizeof buf, "%.4f", s);
      agreement = buf;
      record["sketch_agreement"] = s;
    } catch (const ContractError&) {
    }
  }
  write_run_record(a.out + ".run_record.json", record);
  std::printf("sketch_agreement %s\n", agreement.c_str());
  return 0;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string ckpt;
  std::string config;
  std::string host;
  int port = -1;
  int workers = -1;
  std::string result_dir;
  double max_part_mb = -1;
};

ServiceOptions resolve_service_options(const ServeArgs& a) {
  ServiceOptions o;
  KeyValues kv;
  if (!a.config.empty()) {
    for (const auto& [k, v] : read_key_values(a.config)) {
      if (k.rfind("service.", 0) == 0) kv[k.substr(8)] = v;
    }
  }
  for (const char* key : {"host", "port", "workers", "result_dir", "max_part_mb"}) {
    std::string env = std::string("SKETCHFILL_") + key;
    for (auto& ch : env) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const char* v = std::getenv(env.c_str())) kv[key] = v;
  }
  if (!a.host.empty()) kv["host"] = a.host;
  if (a.port >= 0) kv["port"] = std::to_string(a.port);
  if (a.workers >= 0) kv["workers"] = std::to_string(a.workers);
  if (!a.result_dir.empty()) kv["result_dir"] = a.result_dir;
  if (a.max_part_mb > 0) kv["max_part_mb"] = std::to_string(a.max_part_mb);
  for (const auto& [k, v] : kv) {
    try {
      if (k == "host") o.host = v;
      else if (k == "port") o.port = std::stoi(v);
      else if (k == "workers") o.workers = std::stoi(v);
      else if (k == "result_dir") o.result_dir = v;
      else if (k == "max_part_mb") o.max_part_bytes = static_cast<size_t>(std::stod(v) * 1024 * 1024);
      else throw UsageError("unknown service key '" + k + "'");
    } catch (const std::invalid_argument&) {
      throw UsageError("bad value for service key '" + k + "': " + v);
    }
  }
  if (o.port < 0 || o.port > 65535) throw UsageError("port must be in [0, 65535]");
  if (o.workers < 1) throw UsageError("workers must be >= 1");
  return o;
}

int cmd_serve(const ServeArgs& a) {
  const ServiceOptions opts = resolve_service_options(a);
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  EditService service(opts);
  service.bind();
  write_run_record(opts.result_dir / "run_record.json",
                   {{"command", "serve"}, {"ckpt", a.ckpt}, {"host", opts.host}, {"port", service.port()},
                    {"workers", opts.workers}, {"result_dir", opts.result_dir.string()},
                    {"max_part_bytes", opts.max_part_bytes}});
  std::fprintf(stderr, "listening on http://%s:%d\n", opts.host.c_str(), service.port());

  std::thread loader([&] {
    try {
      service.set_engine(ModelEngine::load(a.ckpt));
      std::fprintf(stderr, "checkpoint %s loaded\n", a.ckpt.c_str());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: cannot load checkpoint: %s\n", e.what());
      service.stop();
    }
  });
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  waiter.detach();
  service.listen();
  loader.join();
  return service.ready() ? 0 : 1;
}

void add_config_flags(CLI::App* sub, ConfigArgs& c) {
  sub->add_option("--preset", c.preset, "Named preset: desk (default) or paper");
  sub->add_option("--config", c.config, "Key-value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override one config key (key=value), repeatable");
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Sketch- and reference-guided diffusion image completion"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the procedural shape corpus");
  g->add_option("--n", gen.n, "Number of images");
  g->add_option("--size", gen.size, "Image side in pixels");
  g->add_option("--seed", gen.seed, "Corpus seed");
  g->add_option("--test-every", gen.test_every, "Every k-th image goes to the test split");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train phase 1 (reference inpainting) or phase 2 (sketch)");
  add_config_flags(t, train.cfg);
  t->add_option("--phase", train.phase, "Training phase")->check(CLI::IsMember({1, 2}));
  t->add_option("--init-from", train.init_from, "Phase-1 checkpoint (required for phase 2)");
  t->add_option("--corpus", train.corpus, "Corpus directory");
  t->add_option("--out", train.out, "Output directory for logs and checkpoints");
  t->add_option("--steps", train.steps, "Override the step count of this phase");
  t->add_flag("--print-config", train.print_config, "Print the resolved config and exit");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Benchmark the E and E+S checkpoints on the test split");
  e->add_option("--ckpt-e", ev.ckpt_e, "Phase-1 checkpoint")->required();
  e->add_option("--ckpt-es", ev.ckpt_es, "Phase-2 checkpoint")->required();
  e->add_option("--corpus", ev.corpus, "Corpus directory (default: the one in the checkpoint)");
  e->add_option("--seed", ev.seeds, "Benchmark seed, repeatable (default 0 1 2)");
  e->add_option("--n", ev.n, "Test examples per seed");
  e->add_option("--steps", ev.steps, "Sampling steps (default: config)");
  e->add_option("--batch", ev.batch, "Edits sampled together");
  e->add_flag("--whole-image", ev.whole_image, "Measure L1/L2 over the whole image instead of the mask");
  e->add_option("--out", ev.out, "Report directory");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Run one edit");
  i->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
  i->add_option("--image", inf.image, "Input PNG")->required();
  i->add_option("--mask", inf.mask, "Mask PNG (white = regenerate)")->required();
  i->add_option("--sketch", inf.sketch, "Sketch PNG (white strokes)");
  i->add_option("--reference", inf.reference, "Reference PNG");
  i->add_option("--self-ref-bbox", inf.self_ref_bbox, "Use the crop x0,y0,x1,y1 of the input as reference");
  i->add_option("--rho", inf.rho, "Fraction of reverse steps that see the sketch")->check(CLI::Range(0.0, 1.0));
  i->add_option("--seed", inf.seed, "Sampling seed");
  i->add_option("--steps", inf.steps, "Sampling steps (default: config)");
  i->add_option("--mode", inf.mode, "ddim or ddpm (default: config)");
  i->add_option("--sketch-phase", inf.sketch_phase, "early (default) or late");
  i->add_option("--feather", inf.feather, "Feather the paste over this many pixels (0 = hard)");
  i->add_option("--out", inf.out, "Output PNG")->required();

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "Serve the /v1 HTTP API");
  s->add_option("--ckpt", sv.ckpt, "Checkpoint")->required();
  s->add_option("--config", sv.config, "Config file with service.* keys")->check(CLI::ExistingFile);
  s->add_option("--host", sv.host, "Bind address (default 127.0.0.1)");
  s->add_option("--port", sv.port, "Port (default 8080, 0 = any free port)");
  s->add_option("--workers", sv.workers, "Worker threads (default 1)");
  s->add_option("--result-dir", sv.result_dir, "Result directory (default results)");
  s->add_option("--max-part-mb", sv.max_part_mb, "Per-part upload limit in MB (default 4)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(ev);
    if (i->parsed()) return cmd_infer(inf);
    if (s->parsed()) return cmd_serve(sv);
  } catch (const UsageError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const ContractError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const TrainingFault& ex) {
    std::fprintf(stderr, "training aborted: %s\n", ex.what());
    return 3;
  } catch (const ServiceError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 4;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
