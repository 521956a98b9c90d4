#include "motor/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "motor/binary_io.hpp"

namespace motor {
namespace {

constexpr std::uint32_t kVersion = 1;

void write_matrix(io::Writer& w, const Matrix<float>& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.f32s(m.values());
}

void read_matrix(io::Reader& r, Matrix<float>& m, const char* what) {
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  if (rows != m.rows() || cols != m.cols()) {
    throw ShapeError(std::string(what) + " shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not match model " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  r.f32s(m.values());
}

void expect(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("checkpoint mismatch: " + what);
}

std::string token_section(const TokenEmbeddingTables<float>& t) {
  std::ostringstream os;
  io::Writer w(os);
  w.u32(static_cast<std::uint32_t>(t.layout.num_modalities()));
  for (std::size_t m = 0; m < t.layout.num_modalities(); ++m) {
    w.u8(static_cast<std::uint8_t>(t.layout.modalities[m]));
    w.u32(static_cast<std::uint32_t>(t.layout.slots[m]));
  }
  w.u32(static_cast<std::uint32_t>(t.layout.codebook_size));
  w.u32(static_cast<std::uint32_t>(t.dim));
  for (const auto& table : t.tables) w.f32s(table.values());
  return os.str();
}

void read_token_section(io::Reader& r, TokenEmbeddingTables<float>& t) {
  const std::size_t mods = r.u32();
  expect(mods == t.layout.num_modalities(), "token modality count");
  for (std::size_t m = 0; m < mods; ++m) {
    expect(r.u8() == static_cast<std::uint8_t>(t.layout.modalities[m]), "token modality order");
    expect(r.u32() == t.layout.slots[m], "token slots per modality");
  }
  expect(r.u32() == t.layout.codebook_size, "codebook size K");
  expect(r.u32() == t.dim, "token embedding dimension");
  for (auto& table : t.tables) r.f32s(table.values());
}

std::string tcn_section(const TokenCrossNetwork<float>& net) {
  std::ostringstream os;
  io::Writer w(os);
  w.u8(static_cast<std::uint8_t>(net.variant));
  w.u32(static_cast<std::uint32_t>(net.dim));
  w.u32(static_cast<std::uint32_t>(net.groups.size()));
  for (const auto& g : net.groups) {
    w.u8(static_cast<std::uint8_t>(g.kind));
    w.u32(static_cast<std::uint32_t>(g.slots.size()));
    for (std::size_t s : g.slots) w.u32(static_cast<std::uint32_t>(s));
    w.u32(static_cast<std::uint32_t>(g.slot_weights.size()));
    w.u32(static_cast<std::uint32_t>(g.mlp.size()));
    for (const auto& l : g.mlp) {
      w.u32(static_cast<std::uint32_t>(l.weight.rows()));
      w.u32(static_cast<std::uint32_t>(l.weight.cols()));
    }
  }
  for (const auto& g : net.groups) {
    w.f32s(g.slot_weights);
    for (const auto& l : g.mlp) {
      w.f32s(l.weight.values());
      w.f32s(l.bias);
    }
  }
  return os.str();
}

void read_tcn_section(io::Reader& r, TokenCrossNetwork<float>& net) {
  expect(r.u8() == static_cast<std::uint8_t>(net.variant), "tcn variant");
  expect(r.u32() == net.dim, "tcn dimension");
  expect(r.u32() == net.groups.size(), "tcn group count");
  for (const auto& g : net.groups) {
    expect(r.u8() == static_cast<std::uint8_t>(g.kind), "tcn group kind");
    expect(r.u32() == g.slots.size(), "tcn group slot count");
    for (std::size_t s : g.slots) expect(r.u32() == s, "tcn group slots");
    expect(r.u32() == g.slot_weights.size(), "tcn slot weight count");
    expect(r.u32() == g.mlp.size(), "tcn layer count");
    for (const auto& l : g.mlp) {
      expect(r.u32() == l.weight.rows(), "tcn layer rows");
      expect(r.u32() == l.weight.cols(), "tcn layer cols");
    }
  }
  for (auto& g : net.groups) {
    r.f32s(g.slot_weights);
    for (auto& l : g.mlp) {
      r.f32s(l.weight.values());
      r.f32s(l.bias);
    }
  }
}

std::string matrix_section(const Matrix<float>& m) {
  std::ostringstream os;
  io::Writer w(os);
  write_matrix(w, m);
  return os.str();
}

std::string adam_section(const AdamState<float>& adam) {
  std::ostringstream os;
  io::Writer w(os);
  w.u64(adam.step);
  w.u32(static_cast<std::uint32_t>(adam.first_moment.size()));
  for (std::size_t b = 0; b < adam.first_moment.size(); ++b) {
    w.u64(adam.first_moment[b].size());
    w.f32s(adam.first_moment[b]);
    w.f32s(adam.second_moment[b]);
  }
  return os.str();
}

void read_adam_section(io::Reader& r, AdamState<float>& adam, const ModelParams<float>& params) {
  adam = make_adam_state(params);
  adam.step = r.u64();
  expect(r.u32() == adam.first_moment.size(), "optimizer block count");
  for (std::size_t b = 0; b < adam.first_moment.size(); ++b) {
    expect(r.u64() == adam.first_moment[b].size(), "optimizer block size");
    r.f32s(adam.first_moment[b]);
    r.f32s(adam.second_moment[b]);
  }
}

struct Container {
  std::string config;
  std::map<std::string, std::string> sections;
};

Container read_container(const std::filesystem::path& path, bool config_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::Reader r(in);
  r.expect_magic("MOTR");
  if (const auto v = r.u32(); v != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(v));
  Container c;
  c.config = r.string();
  if (config_only) return c;
  while (!r.at_end()) {
    std::string tag = r.string();
    const std::uint64_t len = r.u64();
    std::string payload(len, '\0');
    r.bytes(payload.data(), len);
    c.sections.emplace(std::move(tag), std::move(payload));
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ModelParams<float>& params, const AdamState<float>* adam) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  io::Writer w(out);
  w.magic("MOTR");
  w.u32(kVersion);
  w.string(config_json);
  auto section = [&](const std::string& tag, const std::string& payload) {
    w.string(tag);
    w.u64(payload.size());
    w.bytes(payload.data(), payload.size());
  };
  section("USRE", matrix_section(params.user_embeddings));
  if (!params.item_embeddings.empty()) section("ITME", matrix_section(params.item_embeddings));
  if (!params.token_tables.tables.empty()) section("TOKTAB", token_section(params.token_tables));
  if (!params.tcn.groups.empty()) section("TCNP", tcn_section(params.tcn));
  if (!params.vbpr_projection.empty()) section("VBPJ", matrix_section(params.vbpr_projection));
  if (adam != nullptr) section("ADAM", adam_section(*adam));
}

std::string read_checkpoint_config(const std::filesystem::path& path) {
  return read_container(path, true).config;
}

std::string load_checkpoint(const std::filesystem::path& path, Model<float>& model,
                            AdamState<float>* adam) {
  const Container c = read_container(path, false);
  ModelParams<float> params = model.params();
  auto with = [&](const std::string& tag, bool required, auto&& fn) {
    const auto it = c.sections.find(tag);
    if (it == c.sections.end()) {
      if (required) throw ShapeError("checkpoint lacks section " + tag + " required by the configuration");
      return;
    }
    std::istringstream is(it->second);
    io::Reader r(is);
    fn(r);
    if (!r.at_end()) throw ShapeError("section " + tag + " is larger than the model expects");
  };
  auto forbid = [&](const std::string& tag) {
    if (c.sections.count(tag) != 0) throw ShapeError("checkpoint has section " + tag + " the configuration does not use");
  };

  with("USRE", true, [&](io::Reader& r) { read_matrix(r, params.user_embeddings, "user embeddings"); });
  if (params.item_embeddings.empty()) {
    forbid("ITME");
  } else {
    with("ITME", true, [&](io::Reader& r) { read_matrix(r, params.item_embeddings, "item embeddings"); });
  }
  if (params.token_tables.tables.empty()) {
    forbid("TOKTAB");
    forbid("TCNP");
  } else {
    with("TOKTAB", true, [&](io::Reader& r) { read_token_section(r, params.token_tables); });
    with("TCNP", true, [&](io::Reader& r) { read_tcn_section(r, params.tcn); });
  }
  if (params.vbpr_projection.empty()) {
    forbid("VBPJ");
  } else {
    with("VBPJ", true, [&](io::Reader& r) { read_matrix(r, params.vbpr_projection, "VBPR projection"); });
  }
  if (adam != nullptr) {
    with("ADAM", false, [&](io::Reader& r) { read_adam_section(r, *adam, params); });
  }
  model.params() = std::move(params);
  return c.config;
}

}  // namespace motor
