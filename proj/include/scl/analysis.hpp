#pragma once

#include <string>
#include <vector>

#include "scl/data.hpp"
#include "scl/model.hpp"

namespace scl {

// Rows are per-image l2-normalized global features.
struct EmbeddingMatrix {
  Tensor rows;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> source_ids;
};

// Embeds every image of the chosen split ("train"|"val"|"test"|"all").
EmbeddingMatrix embed_split(const Backbone& phi, const MetaDataset& meta,
                            const std::string& split);

// Top-k neighbors of row query_row by cosine similarity, excluding the row
// itself; ties break toward the lower index.
std::vector<std::int64_t> knn(const EmbeddingMatrix& matrix, std::int64_t query_row,
                              std::int64_t k);

// Eigenvalues of a symmetric matrix (descending) via cyclic Jacobi sweeps,
// off-diagonal tolerance 1e-10.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::int64_t n);

// Cumulative explained-variance ratios of the centered rows; non-decreasing,
// ends at 1.
std::vector<double> explained_variance(const Tensor& rows);

// Max-normalized singular values, descending.
std::vector<double> singular_values(const Tensor& rows);

// Standard Davies-Bouldin index with mean-distance scatter; +infinity when
// two class centroids coincide.
double davies_bouldin(const Tensor& rows, const std::vector<std::int64_t>& labels);

// CSV rows of (component index, value).
void write_curve_csv(const std::string& path, const std::vector<double>& values);

}  // namespace scl
