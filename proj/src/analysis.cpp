#include "scl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace scl {

EmbeddingMatrix embed_split(const Backbone& phi, const MetaDataset& meta,
                            const std::string& split) {
  meta.validate();
  std::vector<std::int64_t> wanted;
  if (split == "train" || split == "all") {
    wanted.insert(wanted.end(), meta.train_classes.begin(), meta.train_classes.end());
  }
  if (split == "val" || split == "all") {
    wanted.insert(wanted.end(), meta.val_classes.begin(), meta.val_classes.end());
  }
  if (split == "test" || split == "all") {
    wanted.insert(wanted.end(), meta.test_classes.begin(), meta.test_classes.end());
  }
  if (wanted.empty()) {
    throw ConfigError("embed_split: split '" + split + "' selects no classes");
  }
  std::vector<LabeledImage> images;
  EmbeddingMatrix out;
  for (const std::int64_t cls : wanted) {
    for (const auto idx : meta.indices_of_class(cls)) {
      images.push_back(meta.images[idx]);
      out.labels.push_back(cls);
      out.source_ids.push_back(static_cast<std::int64_t>(idx));
    }
  }
  const ModelConfig& mc = phi.config();
  const std::int64_t per = mc.input_channels * mc.input_size * mc.input_size;
  Tensor x = Tensor::zeros({static_cast<std::int64_t>(images.size()), mc.input_channels,
                            mc.input_size, mc.input_size});
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::int64_t j = 0; j < per; ++j) {
      x.data()[i * static_cast<std::size_t>(per) + static_cast<std::size_t>(j)] =
          static_cast<real>(images[i].pixels[static_cast<std::size_t>(j)]);
    }
  }
  out.rows = l2_normalize(phi.embed(x).global);
  return out;
}

std::vector<std::int64_t> knn(const EmbeddingMatrix& matrix, std::int64_t query_row,
                              std::int64_t k) {
  const std::int64_t n = matrix.rows.dim(0);
  const std::int64_t d = matrix.rows.dim(1);
  if (k <= 0) throw ConfigError("knn: k must be positive");
  if (k >= n) throw ConfigError("knn: k must be smaller than the row count");
  if (query_row < 0 || query_row >= n) throw ConfigError("knn: query row out of range");
  // cosine similarity, normalizing defensively so positive rescaling of the
  // stored rows cannot change the ranking
  auto norm = [&](std::int64_t r) {
    double s = 0;
    for (std::int64_t j = 0; j < d; ++j) s += matrix.rows.at(r, j) * matrix.rows.at(r, j);
    return std::sqrt(s);
  };
  const double qn = norm(query_row);
  std::vector<std::pair<double, std::int64_t>> scored;
  scored.reserve(static_cast<std::size_t>(n - 1));
  for (std::int64_t r = 0; r < n; ++r) {
    if (r == query_row) continue;
    double dot = 0;
    for (std::int64_t j = 0; j < d; ++j) dot += matrix.rows.at(r, j) * matrix.rows.at(query_row, j);
    const double denom = std::max(qn * norm(r), 1e-300);
    scored.emplace_back(dot / denom, r);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < k; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
  return out;
}

std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::int64_t n) {
  if (n < 1 || static_cast<std::int64_t>(a.size()) != n * n) {
    throw ContractError("jacobi: matrix size mismatch");
  }
  constexpr double kOffTol = 1e-10;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) off += 2 * a[static_cast<std::size_t>(p * n + q)] * a[static_cast<std::size_t>(p * n + q)];
    }
    if (std::sqrt(off) <= kOffTol) break;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<std::size_t>(p * n + q)];
        if (std::fabs(apq) <= kOffTol / (static_cast<double>(n) * static_cast<double>(n))) continue;
        const double app = a[static_cast<std::size_t>(p * n + p)];
        const double aqq = a[static_cast<std::size_t>(q * n + q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::int64_t i = 0; i < n; ++i) {
          const double aip = a[static_cast<std::size_t>(i * n + p)];
          const double aiq = a[static_cast<std::size_t>(i * n + q)];
          a[static_cast<std::size_t>(i * n + p)] = c * aip - s * aiq;
          a[static_cast<std::size_t>(i * n + q)] = s * aip + c * aiq;
        }
        for (std::int64_t i = 0; i < n; ++i) {
          const double api = a[static_cast<std::size_t>(p * n + i)];
          const double aqi = a[static_cast<std::size_t>(q * n + i)];
          a[static_cast<std::size_t>(p * n + i)] = c * api - s * aqi;
          a[static_cast<std::size_t>(q * n + i)] = s * api + c * aqi;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * n + i)];
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

namespace {

// covariance-scaled A^T A of (optionally centered) rows
std::vector<double> scatter_matrix(const Tensor& rows, bool center) {
  const std::int64_t n = rows.dim(0), d = rows.dim(1);
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  if (center) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += rows.at(i, j);
    }
    for (auto& m : mean) m /= static_cast<double>(n);
  }
  std::vector<double> cov(static_cast<std::size_t>(d * d), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < d; ++p) {
      const double vp = rows.at(i, p) - mean[static_cast<std::size_t>(p)];
      for (std::int64_t q = p; q < d; ++q) {
        cov[static_cast<std::size_t>(p * d + q)] += vp * (rows.at(i, q) - mean[static_cast<std::size_t>(q)]);
      }
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::int64_t p = 0; p < d; ++p) {
    for (std::int64_t q = p; q < d; ++q) {
      cov[static_cast<std::size_t>(p * d + q)] /= denom;
      cov[static_cast<std::size_t>(q * d + p)] = cov[static_cast<std::size_t>(p * d + q)];
    }
  }
  return cov;
}

}  // namespace

std::vector<double> explained_variance(const Tensor& rows) {
  if (rows.rank() != 2 || rows.dim(0) < 2) {
    throw DomainError("explained_variance: need at least 2 rows");
  }
  const std::int64_t d = rows.dim(1);
  std::vector<double> eig = jacobi_eigenvalues(scatter_matrix(rows, true), d);
  double total = 0;
  for (auto& v : eig) {
    v = std::max(v, 0.0);
    total += v;
  }
  if (total <= 1e-300) throw DomainError("explained_variance: degenerate (rank-0) input");
  std::vector<double> cum(eig.size());
  double acc = 0;
  for (std::size_t i = 0; i < eig.size(); ++i) {
    acc += eig[i];
    cum[i] = acc / total;
  }
  cum.back() = 1.0;
  return cum;
}

std::vector<double> singular_values(const Tensor& rows) {
  if (rows.rank() != 2 || rows.dim(0) < 2) {
    throw DomainError("singular_values: need at least 2 rows");
  }
  const std::int64_t d = rows.dim(1);
  std::vector<double> eig = jacobi_eigenvalues(scatter_matrix(rows, false), d);
  std::vector<double> sv(eig.size());
  for (std::size_t i = 0; i < eig.size(); ++i) sv[i] = std::sqrt(std::max(eig[i], 0.0));
  const double mx = sv.empty() ? 0.0 : sv.front();
  if (mx <= 1e-300) throw DomainError("singular_values: degenerate (all-zero) input");
  for (auto& v : sv) v /= mx;
  return sv;
}

double davies_bouldin(const Tensor& rows, const std::vector<std::int64_t>& labels) {
  if (rows.rank() != 2 || static_cast<std::int64_t>(labels.size()) != rows.dim(0)) {
    throw ContractError("davies_bouldin: labels do not match rows");
  }
  const std::int64_t n = rows.dim(0), d = rows.dim(1);
  std::vector<std::int64_t> classes;
  for (const auto y : labels) {
    if (std::find(classes.begin(), classes.end(), y) == classes.end()) classes.push_back(y);
  }
  std::sort(classes.begin(), classes.end());
  const std::size_t k = classes.size();
  if (k < 2) throw DomainError("davies_bouldin: need at least 2 classes");

  std::vector<std::vector<double>> centroid(k, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<std::int64_t> counts(k, 0);
  auto class_of = [&](std::int64_t y) {
    return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), y) -
                                    classes.begin());
  };
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t c = class_of(labels[static_cast<std::size_t>(i)]);
    ++counts[c];
    for (std::int64_t j = 0; j < d; ++j) centroid[c][static_cast<std::size_t>(j)] += rows.at(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& v : centroid[c]) v /= static_cast<double>(counts[c]);
  }
  // scatter: mean euclidean distance to the centroid
  std::vector<double> scatter(k, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t c = class_of(labels[static_cast<std::size_t>(i)]);
    double d2 = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double diff = rows.at(i, j) - centroid[c][static_cast<std::size_t>(j)];
      d2 += diff * diff;
    }
    scatter[c] += std::sqrt(d2);
  }
  for (std::size_t c = 0; c < k; ++c) scatter[c] /= static_cast<double>(counts[c]);

  double db = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double worst = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      double m2 = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double diff = centroid[c][static_cast<std::size_t>(j)] - centroid[o][static_cast<std::size_t>(j)];
        m2 += diff * diff;
      }
      const double m = std::sqrt(m2);
      if (m == 0.0) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, (scatter[c] + scatter[o]) / m);
    }
    db += worst;
  }
  return db / static_cast<double>(k);
}

void write_curve_csv(const std::string& path, const std::vector<double>& values) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open curve file " + path + " for writing", 0);
  os << "component,value\n";
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, values[i]);
    os << buf;
  }
}

}  // namespace scl
