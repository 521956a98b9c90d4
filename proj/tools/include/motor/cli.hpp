#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "motor/backbones.hpp"
#include "motor/trainer.hpp"

namespace motor::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2, kState = 3 };

/// Bad invocation or missing input; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration read from a JSON file. Relative paths are
/// resolved against the file's directory.
struct RunConfig {
  std::filesystem::path interactions;
  std::map<Modality, std::filesystem::path> features;
  std::filesystem::path output_dir = "motor_out";

  std::map<Modality, std::size_t> slots;  // D per modality
  std::size_t codebook_size = 256;
  bool opq = true;
  std::size_t outer_iters = 10;
  std::size_t kmeans_iters = 25;

  ModelConfig model;
  /// Modalities whose tokens (or features, for VBPR) feed the model.
  std::vector<Modality> modalities;
  TrainConfig train;
  std::uint64_t seed = 42;

  std::size_t slots_for(Modality m) const;
  /// Canonical JSON of every setting that affects results. Paths to the
  /// output directory and the thread count are left out.
  std::string echo() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);

int run(int argc, char** argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace motor::cli
