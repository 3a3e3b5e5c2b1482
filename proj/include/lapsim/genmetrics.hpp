#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "lapsim/image_io.hpp"
#include "lapsim/math.hpp"

namespace lapsim {

/// A set of feature embeddings, one row per image, as produced by whatever
/// external extractor the evaluation uses. The metrics only see these
/// matrices; no feature extraction happens here.
struct EmbeddingSet {
  Eigen::MatrixXd vectors;  // n x d
  std::string source;       // "real" | "generated" (free-form tag)

  Eigen::Index count() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }
  void validate() const;  // all entries finite, d >= 1
};

/// Binary embedding file: magic "SEMB", then n and d as unsigned 32-bit
/// little-endian, then n*d row-major float32 samples.
EmbeddingSet load_embeddings(const std::filesystem::path& path, const std::string& source);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

/// Mean intersection-over-union in percent across classes, accumulated over
/// all mask pairs. A class joins the mean when it appears in either the
/// prediction or the ground truth; classes absent from both are skipped (a
/// prediction-only class contributes IoU 0, it is not ignored).
/// Throws ConfigError on shape mismatch or labels >= n_classes.
double miou(std::span<const ImageU16> pred, std::span<const ImageU16> gt, int n_classes);

/// Frechet distance between Gaussian fits of the two sets:
///   |mu_x - mu_y|^2 + Tr(C_x + C_y - 2 (C_x C_y)^{1/2})
/// with unbiased covariances. The matrix square root comes from the
/// symmetric eigendecomposition of the symmetrized product, negative
/// eigenvalues clamped to zero (small sets make the product slightly
/// indefinite). Requires n >= 2 on both sides; throws SolverError when the
/// result is non-finite (ill-conditioned covariances).
double fid(const EmbeddingSet& real, const EmbeddingSet& gen);

/// MMD^2 between the rows of X and Y under kernel (x.y/d + 1)^degree.
/// The unbiased form drops the diagonal terms and needs >= 2 rows per side;
/// the biased form is the plain V-statistic, defined from one row up.
double polynomial_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int degree,
                       bool unbiased);

/// MMD^2 under the Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)).
double rbf_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double sigma, bool unbiased);

/// Kernel Inception Distance: the unbiased polynomial-kernel MMD^2 averaged
/// over n_subsets random subsets of subset_size rows from each side,
/// sampled without replacement from a generator seeded with `seed` (reruns
/// with equal arguments agree bit-for-bit).
double kid(const EmbeddingSet& real, const EmbeddingSet& gen, int kernel_degree, int subset_size,
           int n_subsets, uint64_t seed = 0);

/// Median pairwise Euclidean distance of the pooled rows, the usual RBF
/// bandwidth heuristic. Throws ConfigError when the median is zero (all
/// points identical).
double median_bandwidth(const EmbeddingSet& real, const EmbeddingSet& gen);

/// Unbiased RBF-MMD^2 over the full sets (biased fallback when a side has a
/// single row). bandwidth must be positive; use median_bandwidth for the
/// data-driven rule.
double mmd_rbf(const EmbeddingSet& real, const EmbeddingSet& gen, double bandwidth);

struct DensityCoverage {
  double density = 0.0;   // >= 0, unbounded above
  double coverage = 0.0;  // in [0, 1]
};

/// Manifold density/coverage with closed Euclidean balls of radius
/// NND_k(real_j), the distance from real_j to its k-th nearest other real
/// sample (self excluded):
///   density  = 1/(k n_gen) * sum_i |{j : gen_i in B_j}|
///   coverage = fraction of real balls containing at least one gen point.
/// Throws ConfigError when k >= n_real.
DensityCoverage density_coverage(const EmbeddingSet& real, const EmbeddingSet& gen, int k);

/// Flat result document; unset metrics stay out of the JSON. Parameters are
/// echoed so a report is self-describing.
struct MetricReport {
  std::optional<double> miou;
  std::optional<double> fid;
  std::optional<double> kid;
  std::optional<double> mmd_rbf;
  std::optional<double> density;
  std::optional<double> coverage;

  int knn_k = 0;
  int kid_degree = 3;
  int kid_subset_size = 0;
  int kid_subsets = 0;
  uint64_t kid_seed = 0;
  double rbf_bandwidth = 0.0;
  int n_classes = 0;

  std::string to_json() const;
};

}  // namespace lapsim
