#pragma once

#include <filesystem>
#include <string>

#include "motor/backbones.hpp"
#include "motor/trainer.hpp"

namespace motor {

/// Writes a "MOTR" container: version, the config echo as length-prefixed
/// JSON, then named sections USRE, ITME, TOKTAB, TCNP, VBPJ and ADAM (the
/// latter only when `adam` is given). Sections absent from the model are
/// omitted.
void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ModelParams<float>& params, const AdamState<float>* adam = nullptr);

/// Reads the config echo without touching parameters.
std::string read_checkpoint_config(const std::filesystem::path& path);

/// Loads parameters into a model built from the same configuration. Throws
/// FormatError on a corrupt container and ShapeError when any section
/// disagrees with the model's shapes. Returns the config echo.
std::string load_checkpoint(const std::filesystem::path& path, Model<float>& model,
                            AdamState<float>* adam = nullptr);

}  // namespace motor
