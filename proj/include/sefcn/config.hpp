#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sefcn/data_synth.hpp"
#include "sefcn/network.hpp"
#include "sefcn/trainer.hpp"

namespace sefcn {

struct DataConfig {
  std::string manifest = "data/manifest.json";  // gen-data writes the dataset next to it
  GeneratorConfig generator;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct OutputConfig {
  std::string run_dir = "runs/default";
  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct InspectConfig {
  bool enabled = false;
  std::vector<std::string> blocks{"sE-1", "sD-4"};
  friend bool operator==(const InspectConfig&, const InspectConfig&) = default;
};

// JSON file with sections "network", "train", "data", "output", "inspect".
// Missing keys keep their defaults; unknown keys are errors.
struct RunConfig {
  NetworkSpec network;
  TrainConfig train;
  DataConfig data;
  OutputConfig output;
  InspectConfig inspect;

  // Relative paths resolve against this directory (the config file's). Not serialized.
  std::filesystem::path base_dir;

  void validate() const;  // throws ConfigError
  std::filesystem::path resolve(const std::string& path) const;
  std::filesystem::path manifest_path() const { return resolve(data.manifest); }
  std::filesystem::path run_dir() const { return resolve(output.run_dir); }
};

// Equality of every serialized field (base_dir is ignored).
bool same_settings(const RunConfig& a, const RunConfig& b);

// Throw ConfigError naming the offending key.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);  // IoError when unreadable

// Canonical form: every field, fixed key order, two-space indent, trailing newline.
std::string print_config(const RunConfig& cfg);

// Seed precedence: `flag` > SEFCN_SEED (`env`, may be null) > file. Sets both
// the training seed and the generator seed.
void apply_seed_override(RunConfig& cfg, std::optional<std::uint64_t> flag, const char* env);

}  // namespace sefcn
