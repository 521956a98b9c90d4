#include "motor/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <ostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "motor/checkpoint.hpp"
#include "motor/eval_report.hpp"
#include "motor/parallel.hpp"
#include "motor/quantizer.hpp"
#include "motor/synthetic.hpp"

namespace motor::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 0;
  std::string output_dir;
  std::string checkpoint;
  std::string item;
  std::size_t top_n = 10;
  PlantedConfig planted;
};

fs::path token_path(const RunConfig& c, Modality m) {
  return c.output_dir / ("tokens_" + std::string(to_string(m)) + ".tsv");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunConfig resolve_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  RunConfig c = load_run_config(o.config);
  if (o.seed_set) {
    c.seed = o.seed;
    c.train.seed = o.seed;
  }
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (c.interactions.empty()) throw UsageError("config lacks paths.interactions");
  if (!fs::exists(c.interactions)) throw UsageError("interactions file not found: " + c.interactions.string());
  fs::create_directories(c.output_dir);
  return c;
}

InteractionDataset load_dataset(const RunConfig& c) {
  InteractionDataset ds = build_dataset(load_interactions(c.interactions), c.seed);
  spdlog::info("{} users, {} items, {} train / {} val / {} test edges ({} filtered)", ds.num_users,
               ds.num_items, ds.train_edges.size(), ds.val_edges.size(), ds.test_edges.size(),
               ds.filtered_edges);
  return ds;
}

FeatureMatrix load_features(const RunConfig& c, const InteractionDataset& ds, Modality m) {
  const auto it = c.features.find(m);
  if (it == c.features.end()) throw UsageError("no feature file configured for " + std::string(to_string(m)));
  if (!fs::exists(it->second)) throw UsageError("feature file not found: " + it->second.string());
  try {
    return align_features(load_feature_matrix(it->second, ds.raw_num_items, m), ds);
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
}

std::vector<TokenAssignment> load_token_files(const RunConfig& c, const InteractionDataset& ds) {
  if (c.modalities.empty()) throw UsageError("no modalities configured for tokens");
  std::vector<TokenAssignment> out;
  for (Modality m : c.modalities) {
    const fs::path p = token_path(c, m);
    if (!fs::exists(p)) {
      throw UsageError("token file " + p.string() + " not found; run quantize first");
    }
    TokenAssignment ta = load_tokens(p, m, c.codebook_size);
    if (ta.num_items() != ds.num_items) {
      throw UsageError("token file " + p.string() + " has " + std::to_string(ta.num_items()) +
                       " items, dataset has " + std::to_string(ds.num_items));
    }
    out.push_back(std::move(ta));
  }
  return out;
}

Model<float> build_model(const RunConfig& c, const InteractionDataset& ds) {
  std::vector<TokenAssignment> tokens;
  if (c.model.mode == ItemMode::id_free) tokens = load_token_files(c, ds);
  std::vector<FeatureMatrix> features;
  if (c.model.backbone == Backbone::vbpr) {
    for (Modality m : c.modalities) features.push_back(load_features(c, ds, m));
  }
  return Model<float>(c.model, make_context(ds, std::move(tokens), features), c.seed);
}

int cmd_quantize(const RunConfig& c, const InteractionDataset& ds, std::ostream& out) {
  if (c.features.empty()) throw UsageError("quantize needs at least one feature file");
  for (const auto& [m, path] : c.features) {
    const FeatureMatrix fm = load_features(c, ds, m);
    const std::size_t slots = c.slots_for(m);
    const std::uint64_t seed = derive_seed(c.seed, 0x7175616e + static_cast<std::uint64_t>(m));
    const ModalCodebook cb = c.opq ? fit_opq(fm, slots, c.codebook_size, c.outer_iters, c.kmeans_iters, seed)
                                   : fit_pq(fm, slots, c.codebook_size, c.kmeans_iters, seed);
    const TokenAssignment ta = assign_tokens(fm, cb);
    const std::string name(to_string(m));
    save_codebook(c.output_dir / ("codebook_" + name + ".mcbk"), cb);
    save_tokens(token_path(c, m), ta);
    save_histogram(c.output_dir / ("histogram_" + name + ".tsv"), token_histogram(ta));
    out << name << ": " << ta.num_items() << " items, D=" << slots << ", K=" << c.codebook_size
        << ", error " << quantization_error(fm, cb, ta) << "\n";
  }
  return kSuccess;
}

int cmd_train(const RunConfig& c, const InteractionDataset& ds, std::ostream& out) {
  Model<float> model = build_model(c, ds);
  const FitResult fr = fit(model, ds, c.train);
  {
    std::ofstream log(c.output_dir / "train_log.jsonl", std::ios::binary);
    for (const EpochLog& e : fr.log) log << to_json_line(e) << "\n";
  }
  save_checkpoint(c.output_dir / "model.motr", c.echo(), model.params(), &fr.best_adam);
  write_id_map(c.output_dir / "users.tsv", ds.user_ids);
  write_id_map(c.output_dir / "items.tsv", ds.item_ids);
  out << "best epoch " << fr.best_epoch << " val recall@20 " << fr.best.recall20 << " ndcg@20 "
      << fr.best.ndcg20 << (fr.stopped_early ? " (early stop)" : "") << "\n";
  return kSuccess;
}

int cmd_evaluate(const RunConfig& c, const InteractionDataset& ds, const Options& o, std::ostream& out) {
  Model<float> model = build_model(c, ds);
  const fs::path ckpt = o.checkpoint.empty() ? c.output_dir / "model.motr" : fs::path(o.checkpoint);
  if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt.string());
  load_checkpoint(ckpt, model);

  const auto [users, items] = model.final_representations();
  const std::vector<std::size_t> ks{10, 20};
  const EvalResult er = evaluate(users, items, ds, Split::test, ks);
  MetricsReport report;
  report.split = "test";
  report.num_evaluated_users = er.num_evaluated_users;
  report.recall = er.recall;
  report.ndcg = er.ndcg;
  const auto buckets = default_buckets();
  report.buckets = bucket_analysis(users, items, ds, Split::test, buckets, 20);
  report.audit = parameter_audit(audit_shape(model));

  const std::string json = report_to_json(report, c.echo(), utc_timestamp());
  std::ofstream(c.output_dir / "report.json", std::ios::binary) << json << "\n";
  std::ofstream(c.output_dir / "per_user.tsv", std::ios::binary) << per_user_tsv(er, ds.user_ids);
  out << json << "\n";
  return kSuccess;
}

int cmd_retrieve(const RunConfig& c, const InteractionDataset& ds, const Options& o, std::ostream& out) {
  const auto it = std::find(ds.item_ids.begin(), ds.item_ids.end(), o.item);
  if (it == ds.item_ids.end()) throw UsageError("unknown item id '" + o.item + "'");
  std::vector<TokenAssignment> tokens = load_token_files(c, ds);
  canonical_layout(tokens);
  const auto query = static_cast<std::size_t>(it - ds.item_ids.begin());
  for (const auto& [item, overlap] : retrieve_similar_by_tokens(tokens, query, o.top_n)) {
    out << ds.item_ids[item] << "\t" << overlap << "\n";
  }
  return kSuccess;
}

int cmd_generate(const Options& o, std::ostream& out) {
  if (o.output_dir.empty()) throw UsageError("--output-dir is required");
  PlantedConfig pc = o.planted;
  if (o.seed_set) pc.seed = o.seed;
  const PlantedData data = generate_planted(pc);
  const fs::path dir(o.output_dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "interactions.tsv", std::ios::binary);
    for (const RawEdge& e : data.edges) f << e.user << "\t" << e.item << "\n";
  }
  save_feature_matrix(dir / "vision.mfea", data.vision);
  save_feature_matrix(dir / "text.mfea", data.text);
  nlohmann::ordered_json cfg;
  cfg["seed"] = pc.seed;
  cfg["paths"] = {{"interactions", "interactions.tsv"},
                  {"features", {{"vision", "vision.mfea"}, {"text", "text.mfea"}}},
                  {"output_dir", "out"}};
  cfg["quantizer"] = {{"slots", 4}, {"codebook_size", 32}, {"opq", true}};
  cfg["model"] = {{"backbone", "bpr_mf"}, {"mode", "id_free"}, {"tcn_variant", "modal_specific"}, {"dim", 32}};
  cfg["train"] = {{"learning_rate", 0.001}, {"batch_size", 1024}, {"max_epochs", 200}, {"patience", 20}, {"l2", 1e-4}};
  std::ofstream(dir / "config.json", std::ios::binary) << cfg.dump(2) << "\n";
  out << data.edges.size() << " interactions over " << data.vision.rows() << " items written to " << dir.string()
      << "\n";
  return kSuccess;
}

void configure_logging() {
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("MOTOR_LOG"); env != nullptr && *env != '\0') {
    level = spdlog::level::from_str(env);
  }
  spdlog::set_level(level);
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  Options o;
  CLI::App app{"Multimodal tokenization for ID-free recommendation"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->required();
    sub->add_option("--seed", o.seed, "override the configured seed")->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--threads", o.threads, "worker threads (default: all cores)");
    sub->add_option("--output-dir", o.output_dir, "override paths.output_dir");
  };
  auto* quantize = app.add_subcommand("quantize", "fit codebooks and write token files");
  auto* train = app.add_subcommand("train", "train a model and write the best checkpoint");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  auto* retrieve = app.add_subcommand("retrieve", "list items sharing the most tokens with an item");
  auto* run_all = app.add_subcommand("run-all", "quantize, train and evaluate");
  auto* generate = app.add_subcommand("generate", "write a planted-cluster synthetic dataset");
  for (auto* sub : {quantize, train, evaluate_cmd, retrieve, run_all}) common(sub);
  evaluate_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path (default: <output>/model.motr)");
  retrieve->add_option("--item", o.item, "query item id")->required();
  retrieve->add_option("--top-n", o.top_n, "number of items to list");
  generate->add_option("--output-dir", o.output_dir, "destination directory")->required();
  generate->add_option("--seed", o.seed)->each([&](const std::string&) { o.seed_set = true; });
  generate->add_option("--users", o.planted.num_users);
  generate->add_option("--items", o.planted.num_items);
  generate->add_option("--clusters", o.planted.num_clusters);
  generate->add_option("--noise", o.planted.noise);
  generate->add_option("--zipf", o.planted.zipf_exponent);
  generate->add_option("--cluster-zipf", o.planted.cluster_zipf);
  generate->add_option("--intra", o.planted.intra_cluster);
  generate->add_option("--min-interactions", o.planted.min_interactions);
  generate->add_option("--max-interactions", o.planted.max_interactions);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (o.threads != 0) set_num_threads(o.threads);
    if (generate->parsed()) return cmd_generate(o, out);
    const RunConfig c = resolve_config(o);
    const InteractionDataset ds = load_dataset(c);
    if (quantize->parsed()) return cmd_quantize(c, ds, out);
    if (train->parsed()) return cmd_train(c, ds, out);
    if (evaluate_cmd->parsed()) return cmd_evaluate(c, ds, o, out);
    if (retrieve->parsed()) return cmd_retrieve(c, ds, o, out);
    if (c.model.mode == ItemMode::id_free) cmd_quantize(c, ds, out);
    cmd_train(c, ds, out);
    return cmd_evaluate(c, ds, o, out);
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kState;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kState;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace motor::cli
