#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "sefcn/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Squeeze-and-excitation segmentation networks: data generation, training, evaluation, audits."};
  app.require_subcommand(1);

  sefcn::CliOptions opt;
  std::string config, checkpoint, sample;
  std::uint64_t seed = 0;

  struct Command {
    const char* name;
    const char* help;
    bool checkpoint, sample, split;
  };
  const Command commands[] = {
      {"gen-data", "Generate the synthetic dataset described by the data section", false, false, false},
      {"train", "Train a network; --checkpoint resumes from a checkpoint of the same run", true, false, false},
      {"eval", "Evaluate a checkpoint on a split (default test)", true, false, true},
      {"count-params", "Report parameter counts for SE modes none/cse/sse/scse", false, false, false},
      {"inspect-excitation", "Dump spatial excitation maps as PGM images", true, true, false},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config, "Run config (JSON)");
    sub->add_flag("--print-config", opt.print_config, "Print the effective config and exit");
    sub->add_option("--seed", seed, "Seed override for training and generation (beats SEFCN_SEED)");
    if (c.checkpoint) sub->add_option("--checkpoint", checkpoint, "Checkpoint file, or a checkpoint directory");
    if (c.sample) sub->add_option("--sample", sample, "Input image .tns (default: first validation image)");
    if (c.split) sub->add_option("--split", opt.split, "train, val or test")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sefcn::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  opt.command = sub->get_name();
  if (sub->count("--config")) opt.config = config;
  if (sub->get_option_no_throw("--checkpoint") && sub->count("--checkpoint")) opt.checkpoint = checkpoint;
  if (sub->get_option_no_throw("--sample") && sub->count("--sample")) opt.sample = sample;
  if (sub->count("--seed")) opt.seed = seed;
  if (const char* env = std::getenv("SEFCN_SEED")) opt.seed_env = env;
  return sefcn::run_cli(opt, std::cout, std::cerr);
}
