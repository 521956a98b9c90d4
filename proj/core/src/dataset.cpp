#include "motor/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "motor/binary_io.hpp"
#include "motor/rng.hpp"

namespace motor {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct PairHash {
  std::size_t operator()(const std::pair<std::string_view, std::string_view>& p) const {
    const std::size_t a = std::hash<std::string_view>{}(p.first);
    const std::size_t b = std::hash<std::string_view>{}(p.second);
    return a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  }
};

std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& map,
                     std::vector<std::string>& names, const std::string& key) {
  auto [it, inserted] = map.try_emplace(key, static_cast<std::uint32_t>(names.size()));
  if (inserted) names.push_back(key);
  return it->second;
}

std::vector<std::vector<std::uint32_t>> group_sorted(std::span<const Edge> edges,
                                                     std::size_t num_users) {
  std::vector<std::vector<std::uint32_t>> out(num_users);
  for (const Edge& e : edges) out[e.user].push_back(e.item);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

}  // namespace

std::vector<RawEdge> parse_interactions(std::string_view text) {
  std::vector<RawEdge> edges;
  std::unordered_set<std::pair<std::string_view, std::string_view>, PairHash> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw ParseError("expected exactly two tab-separated fields", line_no);
    }
    const std::string_view user = line.substr(0, tab);
    const std::string_view item = line.substr(tab + 1);
    if (user.empty() || item.empty()) throw ParseError("empty id field", line_no);
    if (seen.emplace(user, item).second) {
      edges.push_back({std::string(user), std::string(item)});
    }
  }
  return edges;
}

std::vector<RawEdge> load_interactions(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return parse_interactions(text);
}

bool InteractionDataset::has_train_edge(std::uint32_t user, std::uint32_t item) const {
  const auto& adj = user_adjacency[user];
  return std::binary_search(adj.begin(), adj.end(), item);
}

InteractionDataset build_dataset(std::span<const RawEdge> edges, std::uint64_t seed) {
  if (edges.empty()) throw DataError("empty dataset: no interactions");

  std::unordered_map<std::string, std::uint32_t> user_map, item_map;
  std::vector<std::string> user_names, item_names;
  std::vector<std::vector<std::uint32_t>> per_user;
  std::unordered_set<std::uint64_t> unique;
  for (const RawEdge& e : edges) {
    const std::uint32_t u = intern(user_map, user_names, e.user);
    const std::uint32_t i = intern(item_map, item_names, e.item);
    if (!unique.insert((std::uint64_t{u} << 32) | i).second) continue;
    if (per_user.size() <= u) per_user.resize(u + 1);
    per_user[u].push_back(i);
  }

  std::vector<Edge> train, val, test;
  Rng rng(seed);
  for (std::uint32_t u = 0; u < per_user.size(); ++u) {
    auto& items = per_user[u];
    shuffle(items.begin(), items.end(), rng);
    const std::size_t n = items.size();
    const std::size_t held = n < 3 ? 0 : n / 10;
    const std::size_t n_train = n - 2 * held;
    for (std::size_t k = 0; k < n; ++k) {
      const Edge edge{u, items[k]};
      if (k < n_train) {
        train.push_back(edge);
      } else if (k < n_train + held) {
        val.push_back(edge);
      } else {
        test.push_back(edge);
      }
    }
  }

  // 1-core on the train graph: items without a train edge are dropped.
  std::vector<std::size_t> raw_degree(item_names.size(), 0);
  for (const Edge& e : train) ++raw_degree[e.item];
  std::vector<std::uint32_t> remap(item_names.size(), UINT32_MAX);

  InteractionDataset ds;
  ds.num_users = user_names.size();
  ds.raw_num_items = item_names.size();
  for (std::uint32_t i = 0; i < item_names.size(); ++i) {
    if (raw_degree[i] == 0) {
      ++ds.filtered_items;
      continue;
    }
    remap[i] = static_cast<std::uint32_t>(ds.item_ids.size());
    ds.item_ids.push_back(item_names[i]);
    ds.item_raw_index.push_back(i);
  }
  ds.num_items = ds.item_ids.size();

  auto keep = [&](std::vector<Edge>& src, std::vector<Edge>& dst) {
    for (const Edge& e : src) {
      if (remap[e.item] == UINT32_MAX) {
        ++ds.filtered_edges;
        continue;
      }
      dst.push_back({e.user, remap[e.item]});
    }
  };
  keep(train, ds.train_edges);
  keep(val, ds.val_edges);
  keep(test, ds.test_edges);

  ds.user_ids = std::move(user_names);
  ds.user_adjacency = group_sorted(ds.train_edges, ds.num_users);
  ds.user_val_items = group_sorted(ds.val_edges, ds.num_users);
  ds.user_test_items = group_sorted(ds.test_edges, ds.num_users);

  ds.item_adjacency.assign(ds.num_items, {});
  ds.item_train_degree.assign(ds.num_items, 0);
  for (std::uint32_t u = 0; u < ds.num_users; ++u) {
    for (std::uint32_t i : ds.user_adjacency[u]) {
      ds.item_adjacency[i].push_back(u);
      ++ds.item_train_degree[i];
    }
  }
  return ds;
}

void write_id_map(const std::filesystem::path& path, std::span<const std::string> ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << '\t' << i << '\n';
}

namespace {

void check_finite(const Matrix<float>& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw DataError("non-finite feature value at (" + std::to_string(r) + ", " +
                        std::to_string(c) + ")");
      }
    }
  }
}

Matrix<float> parse_csv(std::string_view text) {
  std::vector<float> values;
  std::size_t cols = 0, rows = 0, line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::size_t count = 0, start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      std::string_view field = line.substr(start, comma == std::string_view::npos
                                                      ? std::string_view::npos
                                                      : comma - start);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw ParseError("invalid number '" + std::string(field) + "'", line_no);
      }
      values.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw ParseError("inconsistent column count", line_no);
    }
    ++rows;
  }
  return Matrix<float>(rows, cols, std::move(values));
}

}  // namespace

FeatureMatrix load_feature_matrix(const std::filesystem::path& path, std::size_t expected_rows,
                                  Modality modality) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char head[4] = {0, 0, 0, 0};
  in.read(head, 4);
  const bool binary = in.gcount() == 4 && std::string_view(head, 4) == "MFEA";

  FeatureMatrix fm;
  fm.modality = modality;
  if (binary) {
    io::Reader r(in);
    const std::uint32_t version = r.u32();
    if (version != 1) throw FormatError("unsupported feature file version " + std::to_string(version));
    const std::uint64_t rows = r.u64();
    const std::uint32_t cols = r.u32();
    if (rows != expected_rows) {
      throw FormatError("feature shape mismatch: file has " + std::to_string(rows) +
                        " rows, expected " + std::to_string(expected_rows));
    }
    Matrix<float> m(rows, cols);
    r.f32s(m.values());
    fm.data = std::move(m);
  } else {
    in.close();
    fm.data = parse_csv(read_file(path));
    if (fm.data.rows() != expected_rows) {
      throw FormatError("feature shape mismatch: file has " + std::to_string(fm.data.rows()) +
                        " rows, expected " + std::to_string(expected_rows));
    }
  }
  check_finite(fm.data);
  return fm;
}

void save_feature_matrix(const std::filesystem::path& path, const Matrix<float>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  io::Writer w(out);
  w.magic("MFEA");
  w.u32(1);
  w.u64(data.rows());
  w.u32(static_cast<std::uint32_t>(data.cols()));
  w.f32s(data.values());
}

FeatureMatrix align_features(const FeatureMatrix& raw, const InteractionDataset& dataset) {
  if (raw.rows() != dataset.raw_num_items) {
    throw ShapeError("feature rows " + std::to_string(raw.rows()) + " != raw item count " +
                     std::to_string(dataset.raw_num_items));
  }
  FeatureMatrix out;
  out.modality = raw.modality;
  out.data = Matrix<float>(dataset.num_items, raw.dim());
  for (std::size_t i = 0; i < dataset.num_items; ++i) {
    const auto src = raw.data.row(dataset.item_raw_index[i]);
    std::copy(src.begin(), src.end(), out.data.row(i).begin());
  }
  return out;
}

}  // namespace motor
