#include "sefcn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sefcn/excitation.hpp"
#include "sefcn/tensor_io.hpp"

namespace sefcn {

namespace fs = std::filesystem;

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CorruptIndexError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    fn();
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

Manifest open_manifest(const RunConfig& cfg) {
  Manifest m = read_manifest(cfg.manifest_path());
  if (m.num_classes != cfg.network.num_classes) {
    throw ConfigError("manifest " + cfg.manifest_path().string() + " has " + std::to_string(m.num_classes) +
                      " classes but network.num_classes is " + std::to_string(cfg.network.num_classes));
  }
  return m;
}

// Median-frequency weights of the training split; uniform when it is empty.
std::vector<double> loss_weights(const std::vector<Sample>& train_set, std::size_t k) {
  if (train_set.empty()) return std::vector<double>(k, 1.0);
  ClassCounts counts(k);
  for (const auto& s : train_set) counts.add(s.label);
  return median_frequency_weights(counts);
}

std::string dice_text(double d) {
  if (std::isnan(d)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", d);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Fails before any training when an inspected block has no spatial map.
void check_inspect_blocks(Network<float>& net, const RunConfig& cfg) {
  const std::size_t side = std::size_t{1} << cfg.network.depth;
  net.forward(Tensor::nchw(1, cfg.network.in_channels, side, side), Mode::kEval);
  for (const auto& b : cfg.inspect.blocks) net.spatial_map(b);
}

}  // namespace

std::optional<std::size_t> checkpoint_epoch(const fs::path& path) {
  const std::string stem = path.stem().string();
  if (path.extension() != ".ckpt" || stem.rfind("epoch_", 0) != 0) return std::nullopt;
  std::size_t e = 0;
  const char* first = stem.data() + 6;
  const char* last = stem.data() + stem.size();
  const auto [end, ec] = std::from_chars(first, last, e);
  if (ec != std::errc{} || end != last || first == last) return std::nullopt;
  return e;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    const fs::path manifest = cfg.manifest_path();
    const fs::path dir = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
    Manifest m = generate_dataset(cfg.data.generator, dir);
    if (manifest.filename() != "manifest.json") write_manifest(m, manifest);
    const auto freq = class_frequencies(m, "");
    out << "wrote " << m.entries.size() << " samples (" << cfg.data.generator.n_train << " train, "
        << cfg.data.generator.n_val << " val, " << cfg.data.generator.n_test << " test) to " << dir.string() << '\n';
    out << "manifest " << manifest.string() << '\n';
    out << "class pixel fractions:";
    for (double f : freq.fraction) {
      char buf[16];
      std::snprintf(buf, sizeof buf, " %.4f", f);
      out << buf;
    }
    out << '\n';
  });
}

int cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    const Manifest m = open_manifest(cfg);
    const auto train_set = load_split(m, "train");
    const auto val_set = load_split(m, "val");
    const auto test_set = load_split(m, "test");
    Network<float> net(cfg.network, cfg.train.seed);
    if (cfg.inspect.enabled) check_inspect_blocks(net, cfg);

    const fs::path run = cfg.run_dir();
    make_dirs(run);
    write_file(run / "config.json", print_config(cfg));
    out << "training " << to_string(cfg.network.family) << " (se " << to_string(cfg.network.se.mode) << ", "
        << to_string(cfg.network.position) << ") on " << train_set.size() << " samples; run directory "
        << run.string() << '\n';

    InspectOptions inspect;
    inspect.enabled = cfg.inspect.enabled;
    inspect.blocks = cfg.inspect.blocks;
    const TrainResult r = train(net, cfg.train, train_set, val_set, test_set, run, inspect, resume, &out);
    out << "finished " << r.epochs_run << " epoch(s)" << (r.stopped_early ? " (early stop)" : "") << "; metrics "
        << (run / "metrics.csv").string() << '\n';
  });
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, std::string_view split, std::ostream& out,
             std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    if (split != "train" && split != "val" && split != "test") {
      throw ConfigError("split must be train, val or test, got \"" + std::string(split) + "\"");
    }
    const Manifest m = open_manifest(cfg);
    Network<float> net(cfg.network, cfg.train.seed);
    load_checkpoint(net, checkpoint);
    const auto samples = load_split(m, split);
    if (samples.empty()) {
      throw InputError("split \"" + std::string(split) + "\" of " + cfg.manifest_path().string() + " is empty");
    }
    const auto weights = loss_weights(load_split(m, "train"), cfg.network.num_classes);
    const EvalResult r = evaluate(net, samples, weights, cfg.train.batch_size, cfg.train.lambda);

    out << "checkpoint " << checkpoint.string() << ", " << split << " split (" << samples.size() << " samples)\n";
    out << "loss " << r.loss << "\nglobal dice " << dice_text(r.global_dice) << '\n';
    for (std::size_t c = 0; c < r.dice.size(); ++c) out << "  class " << c << "  " << dice_text(r.dice[c]) << '\n';

    std::string csv = "checkpoint,split,loss,global_dice";
    for (std::size_t c = 0; c < r.dice.size(); ++c) csv += ",dice_class_" + std::to_string(c);
    char buf[64];
    csv += "\n" + checkpoint.filename().string() + "," + std::string(split);
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g", r.loss, r.global_dice);
    csv += buf;
    for (double d : r.dice) {
      std::snprintf(buf, sizeof buf, ",%.9g", d);
      csv += buf;
    }
    csv += "\n";
    const fs::path dir = cfg.run_dir() / "eval";
    make_dirs(dir);
    const fs::path path = dir / (checkpoint.stem().string() + "_" + std::string(split) + ".csv");
    write_file(path, csv);
    out << "wrote " << path.string() << '\n';
  });
}

int cmd_count_params(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.network.validate();
    const SEMode modes[] = {SEMode::kNone, SEMode::kChannel, SEMode::kSpatial, SEMode::kConcurrent};
    std::vector<ParamReport> reports;
    for (SEMode mode : modes) {
      NetworkSpec spec = cfg.network;
      spec.se.mode = mode;
      Network<float> net(spec, 0);
      reports.push_back(net.count_parameters());
    }
    const NetworkSpec& n = cfg.network;
    out << to_string(n.family) << ", depth " << n.depth << ", " << n.channels << " channels, " << n.num_classes
        << " classes, position " << to_string(n.position) << ", r " << n.se.r << ", aggregation "
        << to_string(n.se.aggregation) << ", skip config " << n.skip_config << "\n\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-6s %12s %10s %10s %10s\n", "mode", "total", "se_added", "se_blocks",
                  "increase");
    out << line;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const ParamReport& r = reports[i];
      std::snprintf(line, sizeof line, "%-6s %12zu %+10zd %10zu %9.3f%%\n", to_string(modes[i]).c_str(), r.total,
                    static_cast<std::ptrdiff_t>(r.se_total), r.se_blocks, r.percentage);
      out << line;
    }
    out << "\nper block (total parameters, SE share in brackets)\n";
    std::snprintf(line, sizeof line, "%-6s %10s %18s %18s %18s\n", "block", "none", "cse", "sse", "scse");
    out << line;
    for (std::size_t b = 0; b < reports[0].per_block.size(); ++b) {
      std::string row;
      std::snprintf(line, sizeof line, "%-6s", reports[0].per_block[b].id.c_str());
      row += line;
      for (std::size_t i = 0; i < reports.size(); ++i) {
        const BlockParams& p = reports[i].per_block[b];
        if (i == 0) {
          std::snprintf(line, sizeof line, " %10zu", p.total);
        } else {
          char cell[40];
          std::snprintf(cell, sizeof cell, "%zu [%zu]", p.total, p.se);
          std::snprintf(line, sizeof line, " %18s", cell);
        }
        row += line;
      }
      out << row << '\n';
    }
  });
}

int cmd_inspect_excitation(const RunConfig& cfg, const fs::path& checkpoint, const std::optional<fs::path>& sample,
                           std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.network.validate();
    if (cfg.inspect.blocks.empty()) throw ConfigError("inspect.blocks is empty");

    std::vector<std::pair<fs::path, std::size_t>> checkpoints;
    if (fs::is_directory(checkpoint)) {
      for (const auto& entry : fs::directory_iterator(checkpoint)) {
        const auto e = checkpoint_epoch(entry.path());
        if (e && *e >= 1) checkpoints.emplace_back(entry.path(), *e);
      }
      std::sort(checkpoints.begin(), checkpoints.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
      if (checkpoints.empty()) throw IoError("no epoch_NNN.ckpt files after epoch 0 in " + checkpoint.string());
    } else {
      checkpoints.emplace_back(checkpoint, checkpoint_epoch(checkpoint).value_or(0));
    }

    Tensor image;
    if (sample) {
      image = read_tensor(*sample);
    } else {
      const Manifest m = open_manifest(cfg);
      auto probe = load_split(m, "val");
      if (probe.empty()) probe = load_split(m, "");
      if (probe.empty()) throw InputError("manifest " + cfg.manifest_path().string() + " lists no samples");
      image = probe.front().image;
    }

    Network<float> net(cfg.network, cfg.train.seed);
    check_inspect_blocks(net, cfg);
    const fs::path dir = cfg.run_dir() / "excitation";
    std::size_t written = 0;
    for (const auto& [path, epoch] : checkpoints) {
      load_checkpoint(net, path);
      for (const auto& p : dump_excitation(net, image, cfg.inspect.blocks, epoch, dir)) {
        out << "wrote " << p.string() << '\n';
        ++written;
      }
    }
    out << written << " map(s) from " << checkpoints.size() << " checkpoint(s)\n";
  });
}

int run_cli(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  const int loaded = guarded(err, [&] {
    if (opt.config) cfg = load_config(*opt.config);
    apply_seed_override(cfg, opt.seed, opt.seed_env ? opt.seed_env->c_str() : nullptr);
  });
  if (loaded != kExitOk) return loaded;
  if (opt.print_config) {
    out << print_config(cfg);
    return kExitOk;
  }
  if (!opt.config) {
    err << "error: --config is required (use --print-config to see the defaults)\n";
    return kExitConfig;
  }
  const std::string& c = opt.command;
  if (c == "gen-data") return cmd_gen_data(cfg, out, err);
  if (c == "train") return cmd_train(cfg, opt.checkpoint, out, err);
  if (c == "count-params") return cmd_count_params(cfg, out, err);
  if (c == "eval" || c == "inspect-excitation") {
    if (!opt.checkpoint) {
      err << "error: " << c << " needs --checkpoint\n";
      return kExitConfig;
    }
    if (c == "eval") return cmd_eval(cfg, *opt.checkpoint, opt.split, out, err);
    return cmd_inspect_excitation(cfg, *opt.checkpoint, opt.sample, out, err);
  }
  err << "error: unknown command \"" << c << "\"\n";
  return kExitConfig;
}

}  // namespace sefcn
