#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "motor/checkpoint.hpp"
#include "motor/synthetic.hpp"

using namespace motor;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "motor_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

struct World {
  InteractionDataset ds;
  std::vector<TokenAssignment> tokens;
  std::vector<FeatureMatrix> features;
};

World make_world(std::size_t slots) {
  PlantedConfig pc;
  pc.num_users = 60;
  pc.num_items = 40;
  pc.num_clusters = 4;
  pc.vision_dim = 4;
  pc.text_dim = 2;
  const auto data = generate_planted(pc);
  World w;
  w.ds = build_dataset(data.edges, 1);
  Rng rng(2);
  for (Modality m : {Modality::vision, Modality::text}) {
    TokenAssignment ta{m, 4, Matrix<std::uint32_t>(w.ds.num_items, slots)};
    for (auto& t : ta.tokens.values()) t = static_cast<std::uint32_t>(rng.uniform_index(4));
    w.tokens.push_back(ta);
  }
  w.features.push_back(align_features({Modality::vision, data.vision}, w.ds));
  w.features.push_back(align_features({Modality::text, data.text}, w.ds));
  return w;
}

Model<float> make_model(const World& w, const ModelConfig& c, std::uint64_t seed) {
  std::vector<TokenAssignment> tokens;
  if (c.mode == ItemMode::id_free) tokens = w.tokens;
  std::span<const FeatureMatrix> feats;
  if (c.backbone == Backbone::vbpr) feats = w.features;
  return Model<float>(c, make_context(w.ds, tokens, feats), seed);
}

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
  const auto x = a.blocks();
  const auto y = b.blocks();
  if (x.size() != y.size()) return false;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k].name != y[k].name || !std::equal(x[k].values.begin(), x[k].values.end(), y[k].values.begin(), y[k].values.end())) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint round trip for every backbone and mode") {
  const auto w = make_world(2);
  for (auto backbone : {Backbone::bpr_mf, Backbone::lightgcn, Backbone::vbpr}) {
    for (auto mode : {ItemMode::id_based, ItemMode::id_free}) {
      for (auto variant : {TcnVariant::modal_specific, TcnVariant::modal_agnostic, TcnVariant::mean, TcnVariant::linear}) {
        if (mode == ItemMode::id_based && variant != TcnVariant::modal_specific) continue;
        const ModelConfig c{backbone, mode, variant, 4, 1};
        const auto saved = make_model(w, c, 1);
        auto adam = make_adam_state(saved.params());
        adam.step = 17;
        if (!adam.first_moment.empty() && !adam.first_moment[0].empty()) adam.first_moment[0][0] = 0.5f;
        const auto path = temp_path("model.motr");
        save_checkpoint(path, R"({"k":1})", saved.params(), &adam);

        auto loaded = make_model(w, c, 99);
        CHECK(!same_params(saved.params(), loaded.params()));
        AdamState<float> back;
        CHECK(load_checkpoint(path, loaded, &back) == R"({"k":1})");
        CHECK(same_params(saved.params(), loaded.params()));
        CHECK(back.step == 17);
        CHECK(back.first_moment == adam.first_moment);
        CHECK(read_checkpoint_config(path) == R"({"k":1})");
      }
    }
  }
}

TEST_CASE("mismatched model shapes are rejected") {
  const auto w = make_world(2);
  const ModelConfig base{Backbone::bpr_mf, ItemMode::id_free, TcnVariant::modal_specific, 4, 1};
  const auto path = temp_path("shape.motr");
  save_checkpoint(path, "{}", make_model(w, base, 1).params());

  auto other_dim = base;
  other_dim.dim = 8;
  auto m1 = make_model(w, other_dim, 1);
  CHECK_THROWS_AS(load_checkpoint(path, m1), ShapeError);

  auto other_variant = base;
  other_variant.tcn_variant = TcnVariant::modal_agnostic;
  auto m2 = make_model(w, other_variant, 1);
  CHECK_THROWS_AS(load_checkpoint(path, m2), ShapeError);

  auto id_based = base;
  id_based.mode = ItemMode::id_based;
  auto m3 = make_model(w, id_based, 1);
  CHECK_THROWS_AS(load_checkpoint(path, m3), ShapeError);

  const auto w4 = make_world(4);
  auto m4 = make_model(w4, base, 1);
  CHECK_THROWS_AS(load_checkpoint(path, m4), ShapeError);
}

TEST_CASE("corrupt containers are format errors") {
  const auto w = make_world(2);
  const ModelConfig c{Backbone::bpr_mf, ItemMode::id_based, TcnVariant::modal_specific, 4, 1};
  auto m = make_model(w, c, 1);
  const auto path = temp_path("ok.motr");
  save_checkpoint(path, "{}", m.params());
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});

  std::ofstream(temp_path("magic.motr"), std::ios::binary) << "XXXX" << bytes.substr(4);
  CHECK_THROWS_AS(load_checkpoint(temp_path("magic.motr"), m), FormatError);
  std::ofstream(temp_path("cut.motr"), std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  CHECK_THROWS_AS(load_checkpoint(temp_path("cut.motr"), m), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("absent.motr"), m), Error);
}
