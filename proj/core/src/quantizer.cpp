#include "motor/quantizer.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "motor/binary_io.hpp"
#include "motor/parallel.hpp"
#include "motor/rng.hpp"

namespace motor {
namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    acc += diff * diff;
  }
  return acc;
}

// Assigns every point to its nearest centroid; returns the WCSS.
double assign_all(const Matrix<float>& points, const Matrix<float>& centroids,
                  std::vector<std::uint32_t>& assignments, std::vector<double>& dists) {
  const std::size_t n = points.rows();
  assignments.resize(n);
  dists.resize(n);
  parallel_for(0, n, [&](std::size_t p) {
    const auto x = points.row(p);
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
      const double d = squared_distance(x, centroids.row(k));
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::uint32_t>(k);
      }
    }
    assignments[p] = best;
    dists[p] = best_d;
  });
  double total = 0.0;
  for (double d : dists) total += d;
  return total;
}

Matrix<float> seed_plus_plus(const Matrix<float>& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t q = points.cols();
  Matrix<float> centroids(k, q);
  auto copy_point = [&](std::size_t c, std::size_t p) {
    const auto src = points.row(p);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  };

  std::size_t first = rng.uniform_index(n);
  copy_point(0, first);
  std::vector<double> dist(n);
  parallel_for(0, n, [&](std::size_t p) { dist[p] = squared_distance(points.row(p), centroids.row(0)); });

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : dist) total += d;
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = rng.uniform_index(n);
    } else {
      const double target = rng.uniform01() * total;
      double cum = 0.0;
      chosen = n;
      for (std::size_t p = 0; p < n; ++p) {
        cum += dist[p];
        if (cum > target && dist[p] > 0.0) {
          chosen = p;
          break;
        }
      }
      if (chosen == n) {
        // Rounding pushed target past the final sum; take the last candidate.
        for (std::size_t p = n; p-- > 0;) {
          if (dist[p] > 0.0) {
            chosen = p;
            break;
          }
        }
      }
    }
    copy_point(c, chosen);
    parallel_for(0, n, [&](std::size_t p) {
      dist[p] = std::min(dist[p], squared_distance(points.row(p), centroids.row(c)));
    });
  }
  return centroids;
}

Matrix<float> saturated_centroids(const Matrix<float>& points, std::size_t k) {
  const std::size_t n = points.rows();
  const std::size_t q = points.cols();
  spdlog::warn("kmeans: K={} exceeds the number of points {}; duplicating centroids", k, n);
  Matrix<float> centroids(k, q);
  std::vector<float> mean(q, 0.0f);
  {
    std::vector<double> acc(q, 0.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t j = 0; j < q; ++j) acc[j] += points(p, j);
    for (std::size_t j = 0; j < q; ++j) mean[j] = static_cast<float>(acc[j] / static_cast<double>(n));
  }
  std::vector<std::size_t> order(n);
  std::vector<double> far(n);
  for (std::size_t p = 0; p < n; ++p) {
    order[p] = p;
    far[p] = squared_distance(points.row(p), mean);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return far[a] > far[b]; });
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t p = c < n ? c : order[(c - n) % n];
    const auto src = points.row(p);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  }
  return centroids;
}

Matrix<float> column_block(const Matrix<float>& m, std::size_t first, std::size_t width) {
  Matrix<float> out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto src = m.row(i).subspan(first, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void check_divisible(std::size_t dim, std::size_t slots) {
  if (slots == 0 || dim % slots != 0) {
    throw ConfigError("feature dimension " + std::to_string(dim) +
                      " is not divisible by the number of token slots " + std::to_string(slots));
  }
}

struct PqFit {
  ModalCodebook codebook;
  std::vector<std::vector<std::uint32_t>> slot_assignments;
};

PqFit fit_pq_impl(const FeatureMatrix& features, std::size_t num_slots, std::size_t k,
                  std::size_t max_iters, std::uint64_t seed) {
  check_divisible(features.dim(), num_slots);
  if (k == 0 || k > (std::size_t{1} << 16)) throw ConfigError("codebook size must be in [1, 65536]");
  const std::size_t width = features.dim() / num_slots;
  PqFit fit;
  fit.codebook.modality = features.modality;
  fit.codebook.rotation = Matrix<float>::identity(features.dim());
  fit.codebook.num_slots = num_slots;
  fit.codebook.codebook_size = k;
  for (std::size_t x = 0; x < num_slots; ++x) {
    const Matrix<float> block = column_block(features.data, x * width, width);
    KMeansResult km = kmeans(block, k, max_iters, derive_seed(seed, x));
    fit.codebook.sub_codebooks.push_back(std::move(km.centroids));
    fit.slot_assignments.push_back(std::move(km.assignments));
  }
  return fit;
}

Matrix<float> reconstruct(const ModalCodebook& cb,
                          const std::vector<std::vector<std::uint32_t>>& slot_assignments,
                          std::size_t n) {
  const std::size_t width = cb.sub_dim();
  Matrix<float> out(n, cb.dim());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t x = 0; x < cb.num_slots; ++x) {
      const auto c = cb.sub_codebooks[x].row(slot_assignments[x][i]);
      std::copy(c.begin(), c.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(x * width));
    }
  }
  return out;
}

double mean_squared_error(const Matrix<float>& a, const Matrix<float>& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) total += squared_distance(a.row(i), b.row(i));
  return a.rows() == 0 ? 0.0 : total / static_cast<double>(a.rows());
}

Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
    const Matrix<float>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace

std::uint32_t nearest_centroid(std::span<const float> x, const Matrix<float>& centroids) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double d = squared_distance(x, centroids.row(k));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return best;
}

KMeansResult kmeans_refine(const Matrix<float>& points, Matrix<float> centroids,
                           std::size_t max_iters) {
  const std::size_t n = points.rows();
  const std::size_t q = points.cols();
  const std::size_t k = centroids.rows();

  KMeansResult res;
  std::vector<double> dists;
  res.wcss_history.push_back(assign_all(points, centroids, res.assignments, dists));

  std::vector<double> sums(k * q);
  std::vector<std::size_t> counts(k);
  std::vector<std::uint32_t> next;
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint32_t a = res.assignments[p];
      ++counts[a];
      const auto x = points.row(p);
      double* s = sums.data() + a * q;
      for (std::size_t j = 0; j < q; ++j) s[j] += x[j];
    }
    bool any_empty = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        any_empty = true;
        continue;
      }
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < q; ++j) {
        centroids(c, j) = static_cast<float>(sums[c * q + j] * inv);
      }
    }
    if (any_empty) {
      std::vector<double> d_now(n);
      parallel_for(0, n, [&](std::size_t p) {
        d_now[p] = squared_distance(points.row(p), centroids.row(res.assignments[p]));
      });
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        std::size_t far = n;
        double far_d = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
          if (d_now[p] > far_d) {
            far_d = d_now[p];
            far = p;
          }
        }
        if (far == n) break;  // every point sits on its centroid
        const auto src = points.row(far);
        std::copy(src.begin(), src.end(), centroids.row(c).begin());
        d_now[far] = 0.0;
      }
    }

    next.clear();
    const double wcss = assign_all(points, centroids, next, dists);
    res.wcss_history.push_back(wcss);
    ++res.iterations;
    const bool unchanged = next == res.assignments;
    res.assignments.swap(next);
    if (unchanged) break;
  }
  res.centroids = std::move(centroids);
  return res;
}

KMeansResult kmeans(const Matrix<float>& points, std::size_t k, std::size_t max_iters,
                    std::uint64_t seed) {
  if (points.rows() == 0 || points.cols() == 0 || k == 0) {
    throw ConfigError("kmeans requires at least one point, one dimension and one centroid");
  }
  if (k >= points.rows()) {
    if (k == points.rows()) {
      // Saturated: each point is its own centroid.
      return kmeans_refine(points, points, 0);
    }
    return kmeans_refine(points, saturated_centroids(points, k), 0);
  }
  Rng rng(seed);
  return kmeans_refine(points, seed_plus_plus(points, k, rng), max_iters);
}

bool ModalCodebook::rotation_is_identity() const {
  return rotation == Matrix<float>::identity(rotation.rows());
}

ModalCodebook fit_pq(const FeatureMatrix& features, std::size_t num_slots, std::size_t k,
                     std::size_t max_iters, std::uint64_t seed) {
  PqFit fit = fit_pq_impl(features, num_slots, k, max_iters, seed);
  fit.codebook.error_history.push_back(mean_squared_error(
      features.data, reconstruct(fit.codebook, fit.slot_assignments, features.rows())));
  return std::move(fit.codebook);
}

ModalCodebook fit_opq(const FeatureMatrix& features, std::size_t num_slots, std::size_t k,
                      std::size_t outer_iters, std::size_t kmeans_iters, std::uint64_t seed) {
  PqFit fit = fit_pq_impl(features, num_slots, k, kmeans_iters, seed);
  ModalCodebook& cb = fit.codebook;
  const std::size_t n = features.rows();
  const std::size_t width = cb.sub_dim();
  cb.error_history.push_back(
      mean_squared_error(features.data, reconstruct(cb, fit.slot_assignments, n)));

  const MatD x = view(features.data).cast<double>();
  for (std::size_t it = 0; it < outer_iters; ++it) {
    const Matrix<float> recon = reconstruct(cb, fit.slot_assignments, n);
    const MatD cross = x.transpose() * view(recon).cast<double>();
    Eigen::JacobiSVD<MatD> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const MatD rot = svd.matrixU() * svd.matrixV().transpose();
    for (std::size_t r = 0; r < cb.dim(); ++r)
      for (std::size_t c = 0; c < cb.dim(); ++c)
        cb.rotation(r, c) = static_cast<float>(rot(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));

    const Matrix<float> rotated = rotate_features(features.data, cb);
    for (std::size_t s = 0; s < num_slots; ++s) {
      KMeansResult km = kmeans_refine(column_block(rotated, s * width, width),
                                      std::move(cb.sub_codebooks[s]), kmeans_iters);
      cb.sub_codebooks[s] = std::move(km.centroids);
      fit.slot_assignments[s] = std::move(km.assignments);
    }
    cb.error_history.push_back(
        mean_squared_error(rotated, reconstruct(cb, fit.slot_assignments, n)));
  }
  return std::move(cb);
}

Matrix<float> rotate_features(const Matrix<float>& features, const ModalCodebook& cb) {
  if (features.cols() != cb.dim()) {
    throw ShapeError("feature dim " + std::to_string(features.cols()) + " != codebook dim " +
                     std::to_string(cb.dim()));
  }
  if (cb.rotation_is_identity()) return features;
  const MatD rotated = view(features).cast<double>() * view(cb.rotation).cast<double>();
  Matrix<float> out(features.rows(), features.cols());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = static_cast<float>(rotated(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  return out;
}

TokenAssignment assign_tokens(const FeatureMatrix& features, const ModalCodebook& cb) {
  const Matrix<float> rotated = rotate_features(features.data, cb);
  const std::size_t width = cb.sub_dim();
  TokenAssignment ta;
  ta.modality = cb.modality;
  ta.codebook_size = cb.codebook_size;
  ta.tokens = Matrix<std::uint32_t>(features.rows(), cb.num_slots);
  parallel_for(0, features.rows(), [&](std::size_t i) {
    const auto row = rotated.row(i);
    for (std::size_t x = 0; x < cb.num_slots; ++x) {
      ta.tokens(i, x) = nearest_centroid(row.subspan(x * width, width), cb.sub_codebooks[x]);
    }
  });
  return ta;
}

std::vector<std::vector<std::size_t>> token_histogram(const TokenAssignment& ta) {
  std::vector<std::vector<std::size_t>> counts(ta.num_slots(),
                                               std::vector<std::size_t>(ta.codebook_size, 0));
  for (std::size_t i = 0; i < ta.num_items(); ++i)
    for (std::size_t x = 0; x < ta.num_slots(); ++x) ++counts[x][ta.tokens(i, x)];
  return counts;
}

double quantization_error(const FeatureMatrix& features, const ModalCodebook& cb,
                          const TokenAssignment& ta) {
  if (ta.num_items() != features.rows() || ta.num_slots() != cb.num_slots) {
    throw ShapeError("token assignment does not match features/codebook");
  }
  const Matrix<float> rotated = rotate_features(features.data, cb);
  const std::size_t width = cb.sub_dim();
  double total = 0.0;
  for (std::size_t i = 0; i < rotated.rows(); ++i) {
    for (std::size_t x = 0; x < cb.num_slots; ++x) {
      total += squared_distance(rotated.row(i).subspan(x * width, width),
                                cb.sub_codebooks[x].row(ta.tokens(i, x)));
    }
  }
  return rotated.rows() == 0 ? 0.0 : total / static_cast<double>(rotated.rows());
}

double orthonormality_residual(const Matrix<float>& rotation) {
  const MatD r = view(rotation).cast<double>();
  const MatD gram = r.transpose() * r - MatD::Identity(r.rows(), r.cols());
  return gram.cwiseAbs().maxCoeff();
}

void save_codebook(const std::filesystem::path& path, const ModalCodebook& cb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  io::Writer w(out);
  w.magic("MCBK");
  w.u32(1);
  w.u8(static_cast<std::uint8_t>(cb.modality));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.u32(static_cast<std::uint32_t>(cb.num_slots));
  w.u32(static_cast<std::uint32_t>(cb.codebook_size));
  w.f32s(cb.rotation.values());
  for (const auto& sub : cb.sub_codebooks) w.f32s(sub.values());
}

ModalCodebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::Reader r(in);
  r.expect_magic("MCBK");
  if (const auto v = r.u32(); v != 1) throw FormatError("unsupported codebook version " + std::to_string(v));
  ModalCodebook cb;
  const std::uint8_t tag = r.u8();
  if (tag > 1) throw FormatError("unknown modality tag");
  cb.modality = static_cast<Modality>(tag);
  const std::size_t dim = r.u32();
  cb.num_slots = r.u32();
  cb.codebook_size = r.u32();
  if (cb.num_slots == 0 || dim % cb.num_slots != 0) throw FormatError("inconsistent codebook header");
  cb.rotation = Matrix<float>(dim, dim);
  r.f32s(cb.rotation.values());
  for (std::size_t x = 0; x < cb.num_slots; ++x) {
    Matrix<float> sub(cb.codebook_size, dim / cb.num_slots);
    r.f32s(sub.values());
    cb.sub_codebooks.push_back(std::move(sub));
  }
  return cb;
}

void save_tokens(const std::filesystem::path& path, const TokenAssignment& ta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < ta.num_items(); ++i) {
    out << i;
    for (std::size_t x = 0; x < ta.num_slots(); ++x) out << '\t' << ta.tokens(i, x);
    out << '\n';
  }
}

TokenAssignment load_tokens(const std::filesystem::path& path, Modality modality,
                            std::size_t codebook_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint32_t> values;
  std::size_t slots = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::uint64_t> fields;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw ParseError("invalid integer in token file", line_no);
      fields.push_back(v);
      p = ptr;
      if (p < end) {
        if (*p != '\t') throw ParseError("expected tab separator", line_no);
        ++p;
      }
    }
    if (fields.size() < 2) throw ParseError("token line needs an index and at least one token", line_no);
    if (fields[0] != rows) throw ParseError("item indices must be 0..N-1 in order", line_no);
    if (rows == 0) {
      slots = fields.size() - 1;
    } else if (fields.size() - 1 != slots) {
      throw ParseError("inconsistent token count", line_no);
    }
    for (std::size_t x = 1; x < fields.size(); ++x) {
      if (fields[x] >= codebook_size) {
        throw DataError("token " + std::to_string(fields[x]) + " out of range at line " +
                        std::to_string(line_no));
      }
      values.push_back(static_cast<std::uint32_t>(fields[x]));
    }
    ++rows;
  }
  TokenAssignment ta;
  ta.modality = modality;
  ta.codebook_size = codebook_size;
  ta.tokens = Matrix<std::uint32_t>(rows, slots, std::move(values));
  return ta;
}

void save_histogram(const std::filesystem::path& path,
                    const std::vector<std::vector<std::size_t>>& counts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "slot\ttoken\tcount\n";
  for (std::size_t x = 0; x < counts.size(); ++x)
    for (std::size_t j = 0; j < counts[x].size(); ++j) out << x << '\t' << j << '\t' << counts[x][j] << '\n';
}

}  // namespace motor
