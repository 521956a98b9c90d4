#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "motor/common.hpp"
#include "motor/dataset.hpp"
#include "motor/matrix.hpp"

namespace motor {

struct KMeansResult {
  Matrix<float> centroids;                 // K x q
  std::vector<std::uint32_t> assignments;  // one per point
  /// Within-cluster sum of squares after the initial assignment and after
  /// every Lloyd iteration. Non-increasing.
  std::vector<double> wcss_history;
  std::size_t iterations = 0;

  double wcss() const { return wcss_history.empty() ? 0.0 : wcss_history.back(); }
};

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after max_iters iterations or once assignments stop changing.
/// Empty clusters are re-seeded with the point farthest from its centroid.
/// When K exceeds the number of points, the first P centroids are the
/// points and the rest duplicate the points farthest from the data mean.
KMeansResult kmeans(const Matrix<float>& points, std::size_t k, std::size_t max_iters,
                    std::uint64_t seed);

/// Lloyd iterations starting from the given centroids (no seeding step).
KMeansResult kmeans_refine(const Matrix<float>& points, Matrix<float> centroids,
                           std::size_t max_iters);

/// Index of the nearest centroid (squared Euclidean); ties go to the lowest
/// index.
std::uint32_t nearest_centroid(std::span<const float> x, const Matrix<float>& centroids);

/// Learned rotation plus D sub-codebooks of K centroids for one modality.
struct ModalCodebook {
  Modality modality = Modality::vision;
  Matrix<float> rotation;  // d x d; a feature row x is rotated as x * rotation
  std::size_t num_slots = 0;
  std::size_t codebook_size = 0;
  std::vector<Matrix<float>> sub_codebooks;  // num_slots matrices of K x (d / D)
  /// Mean squared reconstruction error after fitting and after each rotation
  /// update (fit_opq only).
  std::vector<double> error_history;

  std::size_t dim() const noexcept { return rotation.rows(); }
  std::size_t sub_dim() const noexcept { return num_slots == 0 ? 0 : dim() / num_slots; }
  bool rotation_is_identity() const;
};

/// Per-item token ids for one modality: tokens(i, x) = t_{x,i}.
struct TokenAssignment {
  Modality modality = Modality::vision;
  std::size_t codebook_size = 0;
  Matrix<std::uint32_t> tokens;  // N x D

  std::size_t num_items() const noexcept { return tokens.rows(); }
  std::size_t num_slots() const noexcept { return tokens.cols(); }
};

struct QuantizerOptions {
  std::size_t num_slots = 8;
  std::size_t codebook_size = 256;
  std::size_t kmeans_iters = 25;
  std::size_t outer_iters = 10;
};

/// Plain product quantization: column blocks of width d/D, k-means per
/// block, identity rotation. Throws ConfigError when D does not divide d.
ModalCodebook fit_pq(const FeatureMatrix& features, std::size_t num_slots, std::size_t k,
                     std::size_t max_iters, std::uint64_t seed);

/// Optimized product quantization by alternating minimization. Starts from
/// fit_pq (identity rotation); each outer iteration replaces the rotation
/// with the orthogonal Procrustes solution mapping features onto their
/// current reconstructions, then refines the codebooks by Lloyd iterations
/// warm-started from the previous centroids. outer_iters = 0 is exactly
/// fit_pq.
ModalCodebook fit_opq(const FeatureMatrix& features, std::size_t num_slots, std::size_t k,
                      std::size_t outer_iters, std::size_t kmeans_iters, std::uint64_t seed);

/// Rotates rows of the feature matrix by the codebook rotation.
Matrix<float> rotate_features(const Matrix<float>& features, const ModalCodebook& cb);

TokenAssignment assign_tokens(const FeatureMatrix& features, const ModalCodebook& cb);

/// counts[x][j] = number of items whose slot-x token is j.
std::vector<std::vector<std::size_t>> token_histogram(const TokenAssignment& ta);

/// Mean over items of the squared distance between the rotated feature and
/// its concatenated assigned centroids.
double quantization_error(const FeatureMatrix& features, const ModalCodebook& cb,
                          const TokenAssignment& ta);

/// max |R^T R - I| entry.
double orthonormality_residual(const Matrix<float>& rotation);

void save_codebook(const std::filesystem::path& path, const ModalCodebook& cb);
ModalCodebook load_codebook(const std::filesystem::path& path);

/// Token TSV: "item_index<TAB>t_0<TAB>...<TAB>t_{D-1}" per line.
void save_tokens(const std::filesystem::path& path, const TokenAssignment& ta);
TokenAssignment load_tokens(const std::filesystem::path& path, Modality modality,
                            std::size_t codebook_size);

/// Histogram TSV: "slot<TAB>token<TAB>count".
void save_histogram(const std::filesystem::path& path,
                    const std::vector<std::vector<std::size_t>>& counts);

}  // namespace motor
