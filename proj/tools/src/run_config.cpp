#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "motor/cli.hpp"

namespace motor::cli {
namespace {

using nlohmann::json;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename V>
void read(const json& j, const char* key, V& value) {
  if (!j.contains(key)) return;
  try {
    value = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_object(const json& j, const char* name) {
  if (!j.is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
}

}  // namespace

std::size_t RunConfig::slots_for(Modality m) const {
  const auto it = slots.find(m);
  return it == slots.end() ? 8 : it->second;
}

std::string RunConfig::echo() const {
  json::object_t slots_json;
  for (const auto& [m, d] : slots) slots_json[std::string(to_string(m))] = d;
  std::vector<std::string> mods;
  for (Modality m : modalities) mods.emplace_back(to_string(m));
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["data"] = {{"interactions", interactions.filename().string()}};
  j["quantizer"] = {{"slots", slots_json},
                    {"codebook_size", codebook_size},
                    {"opq", opq},
                    {"outer_iters", outer_iters},
                    {"kmeans_iters", kmeans_iters}};
  j["model"] = {{"backbone", to_string(model.backbone)},
                {"mode", to_string(model.mode)},
                {"tcn_variant", to_string(model.tcn_variant)},
                {"dim", model.dim},
                {"layers", model.layers},
                {"modalities", mods}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"batch_size", train.batch_size},
                {"max_epochs", train.max_epochs},
                {"patience", train.patience},
                {"l2", train.l2_coeff}};
  return j.dump();
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_object(j, "root");
  RunConfig c;
  read(j, "seed", c.seed);

  if (j.contains("paths")) {
    const json& p = j["paths"];
    check_object(p, "paths");
    if (p.contains("interactions")) c.interactions = resolve(base, p["interactions"].get<std::string>());
    if (p.contains("output_dir")) c.output_dir = resolve(base, p["output_dir"].get<std::string>());
    if (p.contains("features")) {
      check_object(p["features"], "paths.features");
      for (const auto& [name, value] : p["features"].items()) {
        c.features[modality_from_string(name)] = resolve(base, value.get<std::string>());
      }
    }
  }

  if (j.contains("quantizer")) {
    const json& q = j["quantizer"];
    check_object(q, "quantizer");
    if (q.contains("slots")) {
      if (q["slots"].is_number_unsigned()) {
        const auto d = q["slots"].get<std::size_t>();
        c.slots[Modality::vision] = d;
        c.slots[Modality::text] = d;
      } else {
        check_object(q["slots"], "quantizer.slots");
        for (const auto& [name, value] : q["slots"].items()) {
          c.slots[modality_from_string(name)] = value.get<std::size_t>();
        }
      }
    }
    read(q, "codebook_size", c.codebook_size);
    read(q, "opq", c.opq);
    read(q, "outer_iters", c.outer_iters);
    read(q, "kmeans_iters", c.kmeans_iters);
  }
  for (const auto& [m, d] : c.slots) {
    if (d != 2 && d != 4 && d != 8 && d != 16) {
      spdlog::warn("{} slots = {} is outside the usual search space {{2, 4, 8, 16}}", to_string(m), d);
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_object(m, "model");
    if (m.contains("backbone")) c.model.backbone = backbone_from_string(m["backbone"].get<std::string>());
    if (m.contains("mode")) c.model.mode = item_mode_from_string(m["mode"].get<std::string>());
    if (m.contains("tcn_variant")) c.model.tcn_variant = tcn_variant_from_string(m["tcn_variant"].get<std::string>());
    read(m, "dim", c.model.dim);
    read(m, "layers", c.model.layers);
    if (m.contains("modalities")) {
      for (const auto& name : m["modalities"]) c.modalities.push_back(modality_from_string(name.get<std::string>()));
    }
  }
  if (c.modalities.empty()) {
    for (const auto& [m, path] : c.features) c.modalities.push_back(m);
  }
  std::sort(c.modalities.begin(), c.modalities.end());
  c.modalities.erase(std::unique(c.modalities.begin(), c.modalities.end()), c.modalities.end());

  c.train.seed = c.seed;
  if (j.contains("train")) {
    const json& t = j["train"];
    check_object(t, "train");
    read(t, "learning_rate", c.train.learning_rate);
    read(t, "batch_size", c.train.batch_size);
    read(t, "max_epochs", c.train.max_epochs);
    read(t, "patience", c.train.patience);
    read(t, "l2", c.train.l2_coeff);
  }
  if (c.model.dim == 0) throw ConfigError("model.dim must be positive");
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

}  // namespace motor::cli
