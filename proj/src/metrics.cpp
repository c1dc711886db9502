#include "lace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lace/kernels.hpp"

namespace lace {

namespace {

std::vector<std::vector<std::size_t>> group_by_label(const LabeledEmbeddings& data) {
  if (data.points.rows() != data.labels.size())
    throw std::invalid_argument("metrics: point/label count mismatch");
  if (data.points.rows() < 2)
    throw std::invalid_argument("metrics: need at least 2 points");
  int max_label = 0;
  for (int l : data.labels) {
    if (l < 0) throw std::invalid_argument("metrics: negative label");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> groups(std::size_t(max_label) + 1);
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    groups[std::size_t(data.labels[i])].push_back(i);
  // Drop empty label ids so "clusters" means non-empty ones.
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  return groups;
}

double point_distance(const Matrix& pts, std::size_t i, std::size_t j, Distance dist) {
  const std::size_t d = pts.cols();
  if (dist == Distance::euclidean)
    return std::sqrt(kern::sqdist(pts.row(i), pts.row(j), d));
  const double ni = std::sqrt(kern::sqnorm(pts.row(i), d));
  const double nj = std::sqrt(kern::sqnorm(pts.row(j), d));
  if (ni == 0.0 || nj == 0.0) return 1.0;  // cosine distance to a zero vector
  return 1.0 - kern::dot(pts.row(i), pts.row(j), d) / (ni * nj);
}

}  // namespace

std::size_t LabeledEmbeddings::num_classes() const {
  int m = -1;
  for (int l : labels) m = std::max(m, l);
  return std::size_t(m + 1);
}

double silhouette(const LabeledEmbeddings& data, Distance dist) {
  const auto groups = group_by_label(data);
  if (groups.size() < 2)
    throw std::invalid_argument("silhouette: need at least 2 clusters");

  // cluster id per point (index into groups)
  std::vector<std::size_t> cluster_of(data.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t i : groups[g]) cluster_of[i] = g;

  double total = 0.0;
  std::vector<double> sums(groups.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (j == i) continue;
      sums[cluster_of[j]] += point_distance(data.points, i, j, dist);
    }
    const std::size_t own = cluster_of[i];
    const std::size_t own_size = groups[own].size();
    if (own_size <= 1) continue;  // singleton contributes 0

    const double a = sums[own] / double(own_size - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (g == own) continue;
      b = std::min(b, sums[g] / double(groups[g].size()));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / double(data.size());
}

double davies_bouldin(const LabeledEmbeddings& data) {
  const auto groups = group_by_label(data);
  const std::size_t k = groups.size();
  if (k < 2) throw std::invalid_argument("davies_bouldin: need at least 2 clusters");
  const std::size_t d = data.points.cols();

  Matrix centroids(k, d);
  Vector scatter(k);  // mean distance to centroid
  for (std::size_t g = 0; g < k; ++g) {
    for (std::size_t i : groups[g])
      kern::axpy(1.0, data.points.row(i), centroids.row(g), d);
    kern::scale(centroids.row(g), 1.0 / double(groups[g].size()), d);
    double acc = 0.0;
    for (std::size_t i : groups[g])
      acc += std::sqrt(kern::sqdist(data.points.row(i), centroids.row(g), d));
    scatter[g] = acc / double(groups[g].size());
  }

  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      const double dist = std::sqrt(kern::sqdist(centroids.row(i), centroids.row(j), d));
      const double mix = scatter[i] + scatter[j];
      double ratio;
      if (dist > 0.0)
        ratio = mix / dist;
      else
        ratio = mix > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / double(k);
}

double calinski_harabasz(const LabeledEmbeddings& data) {
  const auto groups = group_by_label(data);
  const std::size_t k = groups.size();
  const std::size_t n = data.size();
  if (k < 2) throw std::invalid_argument("calinski_harabasz: need at least 2 clusters");
  if (n <= k) throw std::invalid_argument("calinski_harabasz: need N > cluster count");
  const std::size_t d = data.points.cols();

  Vector overall(d);
  for (std::size_t i = 0; i < n; ++i) kern::axpy(1.0, data.points.row(i), overall.data(), d);
  kern::scale(overall.data(), 1.0 / double(n), d);

  double tr_between = 0.0;
  double tr_within = 0.0;
  for (const auto& g : groups) {
    Vector centroid(d);
    for (std::size_t i : g) kern::axpy(1.0, data.points.row(i), centroid.data(), d);
    kern::scale(centroid.data(), 1.0 / double(g.size()), d);
    tr_between += double(g.size()) * kern::sqdist(centroid.data(), overall.data(), d);
    for (std::size_t i : g)
      tr_within += kern::sqdist(data.points.row(i), centroid.data(), d);
  }

  if (tr_within == 0.0) return std::numeric_limits<double>::infinity();
  return (tr_between / double(k - 1)) / (tr_within / double(n - k));
}

}  // namespace lace
