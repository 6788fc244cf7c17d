#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dgn/labeler.hpp"
#include "dgn/synthetic.hpp"
#include "dgn/training.hpp"

namespace dgn {

/// Everything a command needs, merged from an INI file and flag overrides.
/// Keys are "section.name", e.g. "model.hidden" or "train.epochs".
struct RunConfig {
  // Copied into every stage by resolve().
  std::uint64_t seed = 7;
  double val_fraction = 0.1;
  synthetic::SyntheticConfig synth;
  labeler::LabelerConfig labeler;
  TrainConfig train;

  /// Reads an INI file. Unknown keys and unparsable values are DataErrors;
  /// a missing file is an IoError.
  static RunConfig load(const std::filesystem::path& path);
  /// Sets one key from its text form.
  void set(std::string_view key, std::string_view value);
  /// Applies "key=value" overrides in order.
  void apply(const std::vector<std::string>& overrides);
  /// Propagates the shared seed and validates every section.
  void resolve();

  /// Every key with its current value.
  std::string to_ini() const;
  /// Writes to_ini() to `dir`/run_config.ini, creating `dir` if needed.
  void save_snapshot(const std::filesystem::path& dir) const;

  static std::vector<std::string> keys();
};

inline constexpr std::string_view kRunConfigFile = "run_config.ini";

}  // namespace dgn
