#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "sefcn/config.hpp"

namespace sefcn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // anything not covered below
inline constexpr int kExitConfig = 2;   // bad config, bad input data, spec/checkpoint mismatch
inline constexpr int kExitIo = 3;       // unreadable or unwritable files
inline constexpr int kExitDivergence = 4;

// Messages go to `err`; reports to `out`.
int cmd_gen_data(const RunConfig& cfg, std::ostream& out, std::ostream& err);
// `resume` continues a run from one of its checkpoints.
int cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume, std::ostream& out,
              std::ostream& err);
// Writes <run_dir>/eval/<checkpoint stem>_<split>.csv.
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::string_view split, std::ostream& out,
             std::ostream& err);
int cmd_count_params(const RunConfig& cfg, std::ostream& out, std::ostream& err);
// `checkpoint` is a file or a run's checkpoint directory (every epoch >= 1).
// `sample` is an image .tns; defaults to the first validation image.
int cmd_inspect_excitation(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                           const std::optional<std::filesystem::path>& sample, std::ostream& out, std::ostream& err);

struct CliOptions {
  std::string command;
  std::optional<std::filesystem::path> config;  // defaults only when absent
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> sample;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> seed_env;  // value of SEFCN_SEED, if set
  std::string split = "test";
  bool print_config = false;
};

// Loads the config, applies seed overrides, then prints it or runs the command.
int run_cli(const CliOptions& opt, std::ostream& out, std::ostream& err);

// Exit code for the exception currently being handled.
int exit_code_for_current_exception(std::ostream& err);

// Epoch encoded in an "epoch_%03d.ckpt" file name; nullopt otherwise.
std::optional<std::size_t> checkpoint_epoch(const std::filesystem::path& path);

}  // namespace sefcn
