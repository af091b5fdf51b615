#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>

#include "bga/data.hpp"
#include "bga/model.hpp"

namespace bga {

/// Malformed configuration text, unknown keys or bad values; the message
/// carries source and line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusSizes {
  std::size_t train = 4000;
  std::size_t dev = 500;
  std::size_t test = 500;
};

/// Everything a command needs. Model patch count and width follow [data].
struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  SyntheticSchema data;
  CorpusSizes sizes;
  TrainSettings train;

  /// Model configuration with the patch geometry and seed taken from the
  /// other sections.
  ModelConfig model_config() const;
  void validate() const;
};

/// Line-oriented "key = value" text with [section] headers; '#' starts a
/// comment. Sections: [model], [data], [train]; `seed` may appear before any
/// section. Unknown keys and repeated keys are errors.
RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// The configuration written back in the same format (every key, defaults included).
std::string format_run_config(const RunConfig& cfg);

}  // namespace bga
