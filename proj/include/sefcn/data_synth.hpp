#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sefcn/losses.hpp"
#include "sefcn/tensor.hpp"

namespace sefcn {

enum class ImbalanceProfile { kImbalanced, kBalanced };

std::string to_string(ImbalanceProfile p);
ImbalanceProfile parse_profile(std::string_view s);  // throws ConfigError

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t n_train = 200;
  std::size_t n_val = 50;
  std::size_t n_test = 50;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 9;
  ImbalanceProfile profile = ImbalanceProfile::kImbalanced;

  void validate() const;  // throws ConfigError
  std::size_t total() const { return n_train + n_val + n_test; }
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct ManifestEntry {
  std::string image;  // relative to the manifest directory
  std::string label;
  std::string split;  // "train", "val" or "test"
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path directory;  // where relative paths resolve; not serialized
};

struct Sample {
  std::string name;  // image path as listed in the manifest
  Tensor image;      // (1, H, W), values in [0, 1]
  LabelMap label;    // n == 1
};

// Expected pixel fraction per class under the profile (before discretization).
std::vector<double> target_fractions(const GeneratorConfig& cfg);

// One sample in memory; index selects the sample's private random stream.
Sample generate_sample(const GeneratorConfig& cfg, std::size_t index);

// Writes image_%05d.tns / label_%05d.tns and manifest.json into `dir`.
// Samples [0, n_train) are train, then val, then test.
Manifest generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& dir);

Manifest read_manifest(const std::filesystem::path& path);  // IoError / InputError
void write_manifest(const Manifest& m, const std::filesystem::path& path);

// Samples of one split (empty string: all) in manifest order. Throws IoError
// naming a missing file and InputError naming a sample with bad extents.
std::vector<Sample> load_split(const Manifest& m, std::string_view split);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path, std::string_view split);

struct ClassFrequencies {
  std::vector<double> frequency;  // pixels_c / pixels of images containing c
  std::vector<double> fraction;   // pixels_c / all pixels
  ClassCounts counts;
};

ClassFrequencies class_frequencies(std::span<const Sample> samples, std::size_t num_classes);
ClassFrequencies class_frequencies(const Manifest& m, std::string_view split);  // InputError on empty split

}  // namespace sefcn
