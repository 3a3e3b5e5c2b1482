#include "lapsim/genmetrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include "json.hpp"

namespace lapsim {

void EmbeddingSet::validate() const {
  if (vectors.cols() < 1) throw ConfigError("embedding set '" + source + "' has no columns");
  if (!vectors.allFinite())
    throw ConfigError("embedding set '" + source + "' contains non-finite values");
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, const std::string& source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  uint32_t n = 0, d = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || std::string_view(magic, 4) != "SEMB")
    throw IoError(path.string() + " is not an SEMB embedding file");
  std::vector<float> buf(static_cast<std::size_t>(n) * d);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!in) throw IoError(path.string() + " truncated: expected " + std::to_string(n) + "x" +
                         std::to_string(d) + " float32 samples");

  EmbeddingSet set;
  set.source = source;
  set.vectors.resize(n, d);
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t j = 0; j < d; ++j) set.vectors(i, j) = buf[std::size_t(i) * d + j];
  set.validate();
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const uint32_t n = static_cast<uint32_t>(set.vectors.rows());
  const uint32_t d = static_cast<uint32_t>(set.vectors.cols());
  out.write("SEMB", 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  std::vector<float> buf(static_cast<std::size_t>(n) * d);
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t j = 0; j < d; ++j) buf[std::size_t(i) * d + j] = static_cast<float>(set.vectors(i, j));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw IoError("short write to " + path.string());
}

double miou(std::span<const ImageU16> pred, std::span<const ImageU16> gt, int n_classes) {
  if (pred.size() != gt.size())
    throw ConfigError("miou: " + std::to_string(pred.size()) + " predictions vs " +
                      std::to_string(gt.size()) + " ground-truth masks");
  if (n_classes < 1) throw ConfigError("miou: n_classes must be at least 1");

  std::vector<uint64_t> inter(n_classes, 0), uni(n_classes, 0);
  for (std::size_t m = 0; m < pred.size(); ++m) {
    const auto& p = pred[m];
    const auto& g = gt[m];
    if (p.width != g.width || p.height != g.height)
      throw ConfigError("miou: mask " + std::to_string(m) + " shape mismatch (" +
                        std::to_string(p.width) + "x" + std::to_string(p.height) + " vs " +
                        std::to_string(g.width) + "x" + std::to_string(g.height) + ")");
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const uint16_t a = p.data[i];
      const uint16_t b = g.data[i];
      if (a >= n_classes || b >= n_classes)
        throw ConfigError("miou: label " + std::to_string(std::max(a, b)) +
                          " outside the " + std::to_string(n_classes) + "-class range");
      if (a == b) {
        ++inter[a];
        ++uni[a];
      } else {
        ++uni[a];
        ++uni[b];
      }
    }
  }

  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (uni[c] == 0) continue;  // absent from both sides everywhere
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++present;
  }
  if (present == 0) return 0.0;
  return 100.0 * sum / present;
}

namespace {

Eigen::MatrixXd unbiased_covariance(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace

double fid(const EmbeddingSet& real, const EmbeddingSet& gen) {
  real.validate();
  gen.validate();
  if (real.count() < 2 || gen.count() < 2)
    throw ConfigError("fid needs at least 2 samples per side (unbiased covariance)");
  if (real.dim() != gen.dim())
    throw ConfigError("fid: dimension mismatch " + std::to_string(real.dim()) + " vs " +
                      std::to_string(gen.dim()));

  const Eigen::RowVectorXd mu_x = real.vectors.colwise().mean();
  const Eigen::RowVectorXd mu_y = gen.vectors.colwise().mean();
  const Eigen::MatrixXd c_x = unbiased_covariance(real.vectors);
  const Eigen::MatrixXd c_y = unbiased_covariance(gen.vectors);

  const Eigen::MatrixXd product = c_x * c_y;
  const Eigen::MatrixXd sym = 0.5 * (product + product.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success)
    throw SolverError("fid: eigendecomposition failed; covariance product is ill-conditioned");
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    trace_sqrt += std::sqrt(std::max(0.0, eig.eigenvalues()[i]));

  const double value =
      (mu_x - mu_y).squaredNorm() + c_x.trace() + c_y.trace() - 2.0 * trace_sqrt;
  if (!std::isfinite(value))
    throw SolverError("fid: non-finite result; covariances are ill-conditioned");
  return value;
}

namespace {

template <class Kernel>
double mmd2_impl(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Kernel k, bool unbiased) {
  const Eigen::Index m = x.rows();
  const Eigen::Index n = y.rows();
  if (m < 1 || n < 1) throw ConfigError("mmd: empty sample");
  if (unbiased && (m < 2 || n < 2))
    throw ConfigError("unbiased mmd needs at least 2 samples per side");

  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      if (unbiased && i == j) continue;
      xx += k(x.row(i), x.row(j));
    }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (unbiased && i == j) continue;
      yy += k(y.row(i), y.row(j));
    }
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) xy += k(x.row(i), y.row(j));

  const double mm = static_cast<double>(m);
  const double nn = static_cast<double>(n);
  const double xx_norm = unbiased ? mm * (mm - 1.0) : mm * mm;
  const double yy_norm = unbiased ? nn * (nn - 1.0) : nn * nn;
  return xx / xx_norm + yy / yy_norm - 2.0 * xy / (mm * nn);
}

}  // namespace

double polynomial_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int degree,
                       bool unbiased) {
  if (degree < 1) throw ConfigError("polynomial kernel degree must be at least 1");
  const double d = static_cast<double>(x.cols());
  auto kernel = [degree, d](const auto& a, const auto& b) {
    return std::pow(a.dot(b) / d + 1.0, degree);
  };
  return mmd2_impl(x, y, kernel, unbiased);
}

double rbf_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double sigma, bool unbiased) {
  if (!(sigma > 0.0)) throw ConfigError("rbf bandwidth must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  auto kernel = [inv](const auto& a, const auto& b) {
    return std::exp(-(a - b).squaredNorm() * inv);
  };
  return mmd2_impl(x, y, kernel, unbiased);
}

double kid(const EmbeddingSet& real, const EmbeddingSet& gen, int kernel_degree, int subset_size,
           int n_subsets, uint64_t seed) {
  real.validate();
  gen.validate();
  if (real.dim() != gen.dim()) throw ConfigError("kid: dimension mismatch");
  if (subset_size < 2) throw ConfigError("kid: subset_size must be at least 2");
  if (subset_size > std::min(real.count(), gen.count()))
    throw ConfigError("kid: subset_size " + std::to_string(subset_size) +
                      " exceeds the smaller set (" +
                      std::to_string(std::min(real.count(), gen.count())) + ")");
  if (n_subsets < 1) throw ConfigError("kid: n_subsets must be at least 1");

  std::mt19937_64 rng(seed);
  auto draw = [&](Eigen::Index n) {
    std::vector<Eigen::Index> all(n);
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    std::vector<Eigen::Index> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked), subset_size, rng);
    return picked;
  };

  double total = 0.0;
  Eigen::MatrixXd sub_x(subset_size, real.dim());
  Eigen::MatrixXd sub_y(subset_size, gen.dim());
  for (int s = 0; s < n_subsets; ++s) {
    const auto ix = draw(real.count());
    const auto iy = draw(gen.count());
    for (int r = 0; r < subset_size; ++r) {
      sub_x.row(r) = real.vectors.row(ix[r]);
      sub_y.row(r) = gen.vectors.row(iy[r]);
    }
    total += polynomial_mmd2(sub_x, sub_y, kernel_degree, true);
  }
  return total / n_subsets;
}

double median_bandwidth(const EmbeddingSet& real, const EmbeddingSet& gen) {
  if (real.dim() != gen.dim()) throw ConfigError("median_bandwidth: dimension mismatch");
  Eigen::MatrixXd pooled(real.count() + gen.count(), real.dim());
  pooled.topRows(real.count()) = real.vectors;
  pooled.bottomRows(gen.count()) = gen.vectors;

  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(pooled.rows()) * (pooled.rows() - 1) / 2);
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j)
      dist.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dist.empty()) throw ConfigError("median bandwidth needs at least 2 pooled samples");

  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + mid, dist.end());
  const double median = dist[mid];
  if (!(median > 0.0))
    throw ConfigError("median bandwidth is zero: all pooled embeddings are identical");
  return median;
}

double mmd_rbf(const EmbeddingSet& real, const EmbeddingSet& gen, double bandwidth) {
  real.validate();
  gen.validate();
  if (real.dim() != gen.dim()) throw ConfigError("mmd_rbf: dimension mismatch");
  const bool unbiased = real.count() >= 2 && gen.count() >= 2;
  return rbf_mmd2(real.vectors, gen.vectors, bandwidth, unbiased);
}

DensityCoverage density_coverage(const EmbeddingSet& real, const EmbeddingSet& gen, int k) {
  real.validate();
  gen.validate();
  if (real.dim() != gen.dim()) throw ConfigError("density_coverage: dimension mismatch");
  if (k < 1) throw ConfigError("density_coverage: k must be at least 1");
  if (k >= real.count())
    throw ConfigError("density_coverage: k = " + std::to_string(k) +
                      " needs more than k real samples (have " + std::to_string(real.count()) +
                      ")");

  const Eigen::Index n_real = real.count();
  const Eigen::Index n_gen = gen.count();

  // k-th nearest *other* real sample, brute force (sets here are small
  // enough that an index would only add a second code path to keep honest).
  std::vector<double> radius(n_real);
  std::vector<double> row(n_real - 1);
  for (Eigen::Index j = 0; j < n_real; ++j) {
    std::size_t w = 0;
    for (Eigen::Index o = 0; o < n_real; ++o)
      if (o != j) row[w++] = (real.vectors.row(j) - real.vectors.row(o)).norm();
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    radius[j] = row[k - 1];
  }

  std::size_t hits = 0;
  std::vector<uint8_t> covered(n_real, 0);
  for (Eigen::Index i = 0; i < n_gen; ++i)
    for (Eigen::Index j = 0; j < n_real; ++j)
      if ((gen.vectors.row(i) - real.vectors.row(j)).norm() <= radius[j]) {
        ++hits;
        covered[j] = 1;
      }

  DensityCoverage out;
  out.density = static_cast<double>(hits) / (static_cast<double>(k) * n_gen);
  out.coverage =
      static_cast<double>(std::count(covered.begin(), covered.end(), uint8_t{1})) / n_real;
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("miou", miou);
  put("fid", fid);
  put("kid", kid);
  put("mmd_rbf", mmd_rbf);
  put("density", density);
  put("coverage", coverage);
  if (miou) j["n_classes"] = n_classes;
  if (kid) {
    j["kid_degree"] = kid_degree;
    j["kid_subset_size"] = kid_subset_size;
    j["kid_subsets"] = kid_subsets;
    j["kid_seed"] = kid_seed;
  }
  if (mmd_rbf) j["rbf_bandwidth"] = rbf_bandwidth;
  if (density || coverage) j["knn_k"] = knn_k;
  return j.dump(2);
}

}  // namespace lapsim
