#include "sketchfill/evaluation.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include "sketchfill/tensor_util.hpp"
#include "sketchfill/training.hpp"

namespace sketchfill {

namespace {

void check_pairs(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Bitmap>* masks) {
  if (a.size() != b.size()) throw ContractError("metric: image sets are not paired");
  if (a.empty()) throw ContractError("metric: empty image set");
  if (masks && masks->size() != a.size()) throw ContractError("metric: mask count differs from image count");
  for (size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_shape(b[i])) throw ContractError("metric: paired images differ in shape");
    if (masks && !(*masks)[i].same_shape(a[i])) throw ContractError("metric: mask shape differs from image");
  }
}

template <typename F>
double mean_error(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Bitmap>* masks, F f) {
  check_pairs(a, b, masks);
  double total = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const Image& x = a[i];
    const Image& y = b[i];
    double sum = 0.0;
    size_t n = 0;
    for (int r = 0; r < x.height(); ++r) {
      for (int c = 0; c < x.width(); ++c) {
        if (masks && !(*masks)[i].at(r, c)) continue;
        for (int k = 0; k < x.channels(); ++k) {
          const double d = (double(x.at(r, c, k)) - double(y.at(r, c, k))) * 0.5;
          sum += f(d);
          ++n;
        }
      }
    }
    if (n == 0) throw ContractError("metric: empty mask");
    total += sum / double(n);
  }
  return total / double(a.size());
}

double abs_d(double d) { return std::abs(d); }
double sq_d(double d) { return d * d; }

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::VectorXd& mean) {
  mean = x.colwise().mean().transpose();
  Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  return centered.transpose() * centered / double(x.rows() - 1);
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double l1_error(const std::vector<Image>& a, const std::vector<Image>& b) { return mean_error(a, b, nullptr, abs_d); }
double l2_error(const std::vector<Image>& a, const std::vector<Image>& b) { return mean_error(a, b, nullptr, sq_d); }
double l1_error(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Bitmap>& masks) {
  return mean_error(a, b, &masks, abs_d);
}
double l2_error(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Bitmap>& masks) {
  return mean_error(a, b, &masks, sq_d);
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 2 || b.rows() < 2) throw ContractError("frechet_distance: need at least 2 samples per set");
  if (a.cols() != b.cols() || a.cols() == 0) throw ContractError("frechet_distance: feature dims differ");
  constexpr double kEps = 1e-6;
  Eigen::VectorXd mu1, mu2;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(a.cols(), a.cols());
  const Eigen::MatrixXd s1 = covariance(a, mu1) + kEps * eye;
  const Eigen::MatrixXd s2 = covariance(b, mu2) + kEps * eye;
  const Eigen::MatrixXd r1 = sqrt_psd(s1);
  const Eigen::MatrixXd inner = r1 * s2 * r1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

Eigen::MatrixXd extract_features(const std::vector<Image>& images, ReferenceEncoder& encoder) {
  if (images.empty()) throw ContractError("extract_features: no images");
  const int size = encoder->spec().input_size;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), encoder->spec().cond_dim);
  constexpr size_t kChunk = 64;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    std::vector<ReferenceImage> refs;
    for (size_t i = start; i < std::min(images.size(), start + kChunk); ++i) {
      refs.push_back(resize_reference(images[i], size));
    }
    auto f = encode_references(refs, encoder).to(torch::kDouble).contiguous();
    for (int64_t r = 0; r < f.size(0); ++r) {
      for (int64_t c = 0; c < f.size(1); ++c) {
        out(static_cast<Eigen::Index>(start + r), c) = f[r][c].item<double>();
      }
    }
  }
  return out;
}

EditSample benchmark_example(const Image& x_p, const RunConfig& cfg, uint64_t seed, uint64_t image_seed) {
  Rng rng(derive_seed(seed, image_seed, 0xbe9c));
  return make_training_example(x_p, rng, sample_options(cfg));
}

void check_benchmark_pair(const Model& e, const Model& es) {
  if (e.has_sketch_channel()) throw ContractError("benchmark: the E checkpoint must not have a sketch channel");
  if (!es.has_sketch_channel()) throw ContractError("benchmark: the E+S checkpoint must have a sketch channel");
  auto a = e.config.to_key_values();
  auto b = es.config.to_key_values();
  a.erase("phase");
  b.erase("phase");
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || it->second != v) {
      throw ContractError("benchmark: checkpoints disagree on config key '" + k + "'");
    }
  }
  if (a.size() != b.size()) throw ContractError("benchmark: checkpoints carry different config keys");
}

std::pair<MetricReport, MetricReport> run_benchmark(Model& e, Model& es, const Corpus& corpus,
                                                    const BenchmarkOptions& opts) {
  check_benchmark_pair(e, es);
  if (opts.seeds.empty()) throw ContractError("benchmark: no seeds");
  if (opts.batch < 1) throw ContractError("benchmark: batch must be >= 1");

  std::set<std::string> train_paths;
  std::vector<const ManifestEntry*> test_entries;
  for (const auto& entry : corpus.manifest.entries) {
    if (entry.split == Split::train) train_paths.insert(entry.path);
    else test_entries.push_back(&entry);
  }
  if (test_entries.size() != corpus.test.size()) throw ContractError("benchmark: corpus test images disagree with manifest");
  if (opts.n_examples < 2 || static_cast<size_t>(opts.n_examples) > corpus.test.size()) {
    throw ContractError("benchmark: n_examples must be in [2, " + std::to_string(corpus.test.size()) + "]");
  }
  for (int i = 0; i < opts.n_examples; ++i) {
    if (test_entries[i]->split != Split::test || train_paths.count(test_entries[i]->path)) {
      throw ContractError("benchmark: image " + test_entries[i]->path + " is not a held-out test image");
    }
  }

  MetricReport re{"E"}, rs{"E+S"};
  for (auto* r : {&re, &rs}) {
    r->n_examples = opts.n_examples;
    r->seeds = opts.seeds;
  }

  for (uint64_t seed : opts.seeds) {
    std::vector<EditRequest> reqs;
    std::vector<Image> truth, truth_crops;
    std::vector<Bitmap> masks;
    std::vector<Box> boxes;
    for (int i = 0; i < opts.n_examples; ++i) {
      const Image& x = corpus.test[i];
      EditSample ex = benchmark_example(x, e.config, seed, corpus.test_seeds[i]);
      EditRequest req;
      req.image = x;
      req.mask = ex.mask;
      req.sketch = ex.sketch;
      req.reference = ex.reference;
      req.rho = 1.0;
      req.steps = opts.steps;
      req.mode = opts.mode;
      req.seed = derive_seed(seed, static_cast<uint64_t>(i), 0x5a3e);
      reqs.push_back(std::move(req));
      truth.push_back(x);
      truth_crops.push_back(crop(x, ex.bbox));
      masks.push_back(ex.mask);
      boxes.push_back(ex.bbox);
    }
    const auto truth_features = extract_features(truth_crops, e.encoder);

    for (auto [model, report] : {std::pair{&e, &re}, std::pair{&es, &rs}}) {
      std::vector<Image> results;
      for (size_t start = 0; start < reqs.size(); start += opts.batch) {
        std::vector<EditRequest> chunk(reqs.begin() + start,
                                       reqs.begin() + std::min(reqs.size(), start + opts.batch));
        for (auto& img : compose_batch(chunk, *model)) results.push_back(std::move(img));
        if (opts.progress) {
          opts.progress(report->variant + " seed " + std::to_string(seed) + ": " +
                        std::to_string(results.size()) + "/" + std::to_string(reqs.size()));
        }
      }
      std::vector<Image> crops;
      for (size_t i = 0; i < results.size(); ++i) crops.push_back(crop(results[i], boxes[i]));
      const bool masked = opts.region == MetricRegion::masked;
      report->l1_per_seed.push_back(masked ? l1_error(results, truth, masks) : l1_error(results, truth));
      report->l2_per_seed.push_back(masked ? l2_error(results, truth, masks) : l2_error(results, truth));
      report->fid_per_seed.push_back(frechet_distance(extract_features(crops, e.encoder), truth_features));
    }
  }
  for (auto* r : {&re, &rs}) {
    const double k = double(r->seeds.size());
    for (size_t i = 0; i < r->seeds.size(); ++i) {
      r->l1 += r->l1_per_seed[i] / k;
      r->l2 += r->l2_per_seed[i] / k;
      r->fid += r->fid_per_seed[i] / k;
    }
  }
  return {re, rs};
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"variant", r.variant}, {"l1", r.l1}, {"l2", r.l2}, {"fid", r.fid}, {"n_examples", r.n_examples},
          {"seeds", r.seeds}, {"l1_per_seed", r.l1_per_seed}, {"l2_per_seed", r.l2_per_seed},
          {"fid_per_seed", r.fid_per_seed}};
}

std::string format_table(const std::vector<MetricReport>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %10s %10s %10s %6s\n", "Variant", "L1", "L2", "toy-FID", "n");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f %10.4f %6d\n", r.variant.c_str(), r.l1, r.l2, r.fid,
                  r.n_examples * static_cast<int>(r.seeds.size()));
    out << line;
  }
  return out.str();
}

}  // namespace sketchfill
