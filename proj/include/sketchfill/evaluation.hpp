#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sketchfill/data_pipeline.hpp"
#include "sketchfill/image.hpp"
#include "sketchfill/inference.hpp"
#include "sketchfill/model.hpp"

namespace sketchfill {

/// Images are RGB in [-1, 1]; errors are measured after mapping to [0, 1].
/// Per-image mean over pixels and channels, then averaged over the set.
double l1_error(const std::vector<Image>& a, const std::vector<Image>& b);
double l2_error(const std::vector<Image>& a, const std::vector<Image>& b);

/// Same, restricted to the pixels where masks[i] is set.
double l1_error(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Bitmap>& masks);
double l2_error(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Bitmap>& masks);

/// Frechet distance between Gaussian fits of two feature sets (rows are samples).
/// Covariances get 1e-6 * I added; the result is clamped at 0.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Projected reference-encoder embedding of each image, one row per image.
Eigen::MatrixXd extract_features(const std::vector<Image>& images, ReferenceEncoder& encoder);

struct MetricReport {
  std::string variant;  // "E" or "E+S"
  double l1 = 0;
  double l2 = 0;
  double fid = 0;
  int n_examples = 0;  // per seed
  std::vector<uint64_t> seeds;
  std::vector<double> l1_per_seed, l2_per_seed, fid_per_seed;
};

enum class MetricRegion { masked, whole };

struct BenchmarkOptions {
  int n_examples = 100;
  std::vector<uint64_t> seeds{0, 1, 2};
  int steps = 50;
  SamplerMode mode = SamplerMode::ddim;
  MetricRegion region = MetricRegion::masked;
  int batch = 50;
  std::function<void(const std::string&)> progress;
};

/// One benchmark edit: the self-supervised example built from a test image.
EditSample benchmark_example(const Image& x_p, const RunConfig& cfg, uint64_t seed, uint64_t image_seed);

/// Throws ContractError unless `e` is a sketch-free model and `es` a sketch model trained
/// with the same configuration.
void check_benchmark_pair(const Model& e, const Model& es);

/// Runs both variants on the same edits built from the first n_examples test-split images
/// for each seed. Toy-FID compares bbox crops of results and ground truth using the
/// E model's encoder.
std::pair<MetricReport, MetricReport> run_benchmark(Model& e, Model& es, const Corpus& corpus,
                                                    const BenchmarkOptions& opts = {});

nlohmann::json to_json(const MetricReport& r);
std::string format_table(const std::vector<MetricReport>& rows);

}  // namespace sketchfill
