#include "motor/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "motor/rng.hpp"

namespace motor {
namespace {

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform01() * cdf.back();
  return static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

}  // namespace

PlantedData generate_planted(const PlantedConfig& c) {
  if (c.num_clusters == 0 || c.num_items < c.num_clusters || c.num_users == 0) {
    throw ConfigError("planted generator needs users > 0 and items >= clusters > 0");
  }
  if (c.min_interactions == 0 || c.max_interactions < c.min_interactions) {
    throw ConfigError("planted generator needs 0 < min_interactions <= max_interactions");
  }
  Rng rng(c.seed);

  std::vector<std::uint32_t> cluster_of(c.num_items);
  for (std::size_t i = 0; i < c.num_items; ++i) cluster_of[i] = static_cast<std::uint32_t>(i % c.num_clusters);
  shuffle(cluster_of.begin(), cluster_of.end(), rng);

  std::vector<std::vector<std::uint32_t>> members(c.num_clusters);
  for (std::size_t i = 0; i < c.num_items; ++i) members[cluster_of[i]].push_back(static_cast<std::uint32_t>(i));

  std::vector<std::uint32_t> cluster_rank(c.num_clusters);
  for (std::size_t k = 0; k < c.num_clusters; ++k) cluster_rank[k] = static_cast<std::uint32_t>(k);
  shuffle(cluster_rank.begin(), cluster_rank.end(), rng);
  std::vector<double> cluster_cdf;
  double total = 0.0;
  for (std::size_t k = 0; k < c.num_clusters; ++k) {
    total += 1.0 / std::pow(static_cast<double>(cluster_rank[k] + 1), c.cluster_zipf);
    cluster_cdf.push_back(total);
  }

  // Zipf weights by a random popularity rank within each cluster.
  std::vector<std::vector<double>> cdf(c.num_clusters);
  for (std::size_t k = 0; k < c.num_clusters; ++k) {
    shuffle(members[k].begin(), members[k].end(), rng);
    double acc = 0.0;
    for (std::size_t r = 0; r < members[k].size(); ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), c.zipf_exponent);
      cdf[k].push_back(acc);
    }
  }

  auto centroids = [&](std::size_t dim) {
    Matrix<double> m(c.num_clusters, dim);
    for (double& v : m.values()) v = c.centroid_scale * rng.normal();
    return m;
  };
  const Matrix<double> vision_centroids = centroids(c.vision_dim);
  const Matrix<double> text_centroids = centroids(c.text_dim);

  Matrix<float> vision(c.num_items, c.vision_dim);
  Matrix<float> text(c.num_items, c.text_dim);
  for (std::size_t i = 0; i < c.num_items; ++i) {
    for (std::size_t j = 0; j < c.vision_dim; ++j) {
      vision(i, j) = static_cast<float>(vision_centroids(cluster_of[i], j) + c.noise * rng.normal());
    }
    for (std::size_t j = 0; j < c.text_dim; ++j) {
      text(i, j) = static_cast<float>(text_centroids(cluster_of[i], j) + c.noise * rng.normal());
    }
  }

  PlantedData out;
  std::vector<std::uint32_t> order;
  std::vector<bool> seen(c.num_items, false);
  const std::size_t span = c.max_interactions - c.min_interactions + 1;
  for (std::size_t u = 0; u < c.num_users; ++u) {
    const auto home = static_cast<std::uint32_t>(sample_cdf(cluster_cdf, rng));
    const std::size_t want = std::min(c.min_interactions + rng.uniform_index(span), c.num_items);
    std::unordered_set<std::uint32_t> picked;
    for (std::size_t tries = 0; picked.size() < want && tries < want * 50; ++tries) {
      const std::uint32_t k = rng.uniform01() < c.intra_cluster
                                  ? home
                                  : static_cast<std::uint32_t>(sample_cdf(cluster_cdf, rng));
      const std::uint32_t item = members[k][sample_cdf(cdf[k], rng)];
      if (!picked.insert(item).second) continue;
      out.edges.push_back({"u" + std::to_string(u), "i" + std::to_string(item)});
      if (!seen[item]) {
        seen[item] = true;
        order.push_back(item);
      }
    }
  }

  out.vision = Matrix<float>(order.size(), c.vision_dim);
  out.text = Matrix<float>(order.size(), c.text_dim);
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::copy_n(vision.row(order[r]).data(), c.vision_dim, out.vision.row(r).data());
    std::copy_n(text.row(order[r]).data(), c.text_dim, out.text.row(r).data());
    out.item_cluster.push_back(cluster_of[order[r]]);
  }
  return out;
}

}  // namespace motor
