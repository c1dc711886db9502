#pragma once

// Cluster validity scores over embeddings grouped by true class label:
// Silhouette (higher better), Davies-Bouldin (lower better),
// Calinski-Harabasz (higher better). Degenerate geometry (zero scatter or
// coincident centroids) yields +/-infinity rather than an error so collapsed
// embeddings can still be compared.

#include <vector>

#include "lace/linalg.hpp"

namespace lace {

enum class EmbeddingSpace { pre_whitened, whitened };

struct LabeledEmbeddings {
  Matrix points;  // N x d
  std::vector<int> labels;
  EmbeddingSpace space = EmbeddingSpace::pre_whitened;

  std::size_t size() const { return points.rows(); }
  std::size_t num_classes() const;
};

enum class Distance { euclidean, cosine };

// Mean over points of (b-a)/max(a,b); singletons contribute 0. Requires at
// least 2 clusters.
double silhouette(const LabeledEmbeddings& data, Distance dist = Distance::euclidean);

// Mean over clusters of the worst (sigma_i + sigma_j) / d(c_i, c_j) ratio.
// Coincident centroids with nonzero scatter give +infinity.
double davies_bouldin(const LabeledEmbeddings& data);

// [tr(B)/(k-1)] / [tr(W)/(N-k)]; zero within-scatter gives +infinity.
// Requires N > k.
double calinski_harabasz(const LabeledEmbeddings& data);

}  // namespace lace
