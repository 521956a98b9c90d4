#pragma once

#include <cstdint>
#include <vector>

#include "motor/dataset.hpp"

namespace motor {

/// Planted-cluster generator: items belong to latent clusters, their
/// features are the cluster centroid plus Gaussian noise, and users
/// interact mostly inside one preferred cluster. Popularity is Zipf over
/// clusters (which cluster users prefer and stray into) and, more mildly,
/// over items within a cluster.
struct PlantedConfig {
  std::size_t num_users = 2000;
  std::size_t num_items = 500;
  std::size_t num_clusters = 20;
  std::size_t vision_dim = 64;
  std::size_t text_dim = 32;
  double centroid_scale = 1.0;
  double noise = 0.35;
  double intra_cluster = 0.9;
  double cluster_zipf = 1.5;
  double zipf_exponent = 0.3;
  std::size_t min_interactions = 10;
  std::size_t max_interactions = 14;
  std::uint64_t seed = 7;
};

struct PlantedData {
  std::vector<RawEdge> edges;
  /// Rows follow first appearance of each item in `edges`.
  Matrix<float> vision;
  Matrix<float> text;
  std::vector<std::uint32_t> item_cluster;
};

PlantedData generate_planted(const PlantedConfig& config);

}  // namespace motor
