// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] c1 c2 ...      (no criteria = all)
//
// c6 and c7 reuse the runs c4 leaves in DIR/c4.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "sefcn/cli.hpp"
#include "sefcn/excitation.hpp"
#include "sefcn/losses.hpp"
#include "sefcn/se_blocks.hpp"

namespace fs = std::filesystem;
using namespace sefcn;

namespace {

// --- pinned values ----------------------------------------------------------

// Added parameters at depth 4, C = 64, P5, r = 2.
constexpr std::size_t kCseAdded = 32768;
constexpr std::size_t kSseAdded = 512;
constexpr std::size_t kScseAdded = 33280;
constexpr double kUNetIncrease = 1.5;
constexpr double kUNetIncreaseTol = 0.3;

constexpr double kGradTolerance = 1e-3;
constexpr std::size_t kGradSamples = 240;

constexpr std::size_t kAlgebraTensors = 10000;

constexpr std::size_t kToyChannels = 16;
constexpr double kToyFloor = 0.85;
constexpr double kToyMargin = 0.01;
// Test global Dice of the first correct runs (seed 1).
constexpr double kPinnedNone = 0.9562;
constexpr double kPinnedScse = 0.9594;
constexpr double kPinTol = 0.02;

// --- helpers ----------------------------------------------------------------

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CsvRow {
  std::size_t epoch;
  std::string split;
  double loss, global_dice;
};

std::vector<CsvRow> read_metrics(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<CsvRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string epoch, split, loss, dice;
    std::getline(s, epoch, ',');
    std::getline(s, split, ',');
    std::getline(s, loss, ',');
    std::getline(s, dice, ',');
    rows.push_back({std::stoul(epoch), split, std::stod(loss), std::stod(dice)});
  }
  return rows;
}

const CsvRow* find_row(const std::vector<CsvRow>& rows, const std::string& split) {
  const CsvRow* last = nullptr;
  for (const auto& r : rows)
    if (r.split == split) last = &r;
  return last;
}

// --- C1 ---------------------------------------------------------------------

// Parses the summary table of `count-params`: mode -> (se_added, increase %).
std::map<std::string, std::pair<long, double>> parse_count_table(const std::string& text) {
  std::map<std::string, std::pair<long, double>> table;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream s(line);
    std::string mode, added, blocks, pct;
    long total = 0;
    if (!(s >> mode >> total >> added >> blocks >> pct)) continue;
    if (pct.empty() || pct.back() != '%') continue;
    table[mode] = {std::stol(added), std::stod(pct.substr(0, pct.size() - 1))};
  }
  return table;
}

Outcome criterion1(const fs::path&) {
  Outcome o;
  for (const char* family : {"unet", "sdnet", "fcdensenet"}) {
    RunConfig cfg = parse_config(std::string(R"({"network": {"family": ")") + family + "\"}}");
    std::ostringstream out, err;
    const int code = cmd_count_params(cfg, out, err);
    o.require(code == kExitOk, std::string(family) + " count-params exit " + std::to_string(code));
    auto t = parse_count_table(out.str());
    o.require(t["cse"].first == long(kCseAdded), std::string(family) + " cse +" + std::to_string(t["cse"].first));
    o.require(t["sse"].first == long(kSseAdded), std::string(family) + " sse +" + std::to_string(t["sse"].first));
    o.require(t["scse"].first == long(kScseAdded), std::string(family) + " scse +" + std::to_string(t["scse"].first));
    o.note(std::string(family) + " cse " + fmt("%.3f%%", t["cse"].second) + " scse " + fmt("%.3f%%", t["scse"].second));
    if (std::string(family) == "unet") {
      for (const char* mode : {"cse", "scse"}) {
        const double pct = t[mode].second;
        o.require(std::abs(pct - kUNetIncrease) <= kUNetIncreaseTol,
                  std::string("unet ") + mode + " increase " + fmt("%.3f%%", pct) + " not within 1.5 +- 0.3");
      }
    }
  }
  return o;
}

// --- C2 ---------------------------------------------------------------------

Outcome criterion2(const fs::path&) {
  Outcome o;
  GeneratorConfig g;
  g.height = g.width = 16;
  g.num_classes = 4;
  std::vector<Sample> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(generate_sample(g, i));
  const std::vector<std::size_t> order = {0, 1, 2, 3};
  const Tensor x = stack_images(batch, order, 0, 4);
  const LabelMap y = stack_labels(batch, order, 0, 4);
  std::vector<LabelMap> maps;
  for (const auto& s : batch) maps.push_back(s.label);
  const auto weights = median_frequency_weights(maps, g.num_classes);

  double worst = 0.0;
  std::uint64_t seed = 100;
  for (Family family : {Family::kUNet, Family::kSDNet, Family::kFCDenseNet}) {
    for (SEMode mode : {SEMode::kNone, SEMode::kChannel, SEMode::kSpatial, SEMode::kConcurrent}) {
      NetworkSpec spec;
      spec.family = family;
      spec.channels = 8;
      spec.num_classes = g.num_classes;
      spec.se.mode = mode;
      Network<float> net(spec, seed);
      const auto r = grad_check(net, x, y, weights, kGradSamples, kGradTolerance, seed++);
      worst = std::max(worst, r.max_rel_error);
      const std::string name = to_string(family) + "/" + to_string(mode);
      o.require(r.entries.size() >= 200, name + " sampled " + std::to_string(r.entries.size()));
      o.require(r.max_rel_error < kGradTolerance, name + " max rel error " + fmt("%.2e", r.max_rel_error));
    }
  }
  o.note("12 networks, " + std::to_string(kGradSamples) + " parameters each, worst " + fmt("%.2e", worst));
  return o;
}

// --- C3 ---------------------------------------------------------------------

template <typename Fn>
void each_parameter(Layer<float>& layer, Fn&& fn) {
  layer.visit_parameters("", [&](const std::string&, const std::string&, Parameter<float>& p) { fn(p); });
}

bool open_unit(const Tensor& t) {
  for (float v : t.data())
    if (!(v > 0.0f && v < 1.0f)) return false;
  return true;
}

Outcome criterion3(const fs::path&) {
  Outcome o;
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> batch(1, 3), half_c(1, 8), extent(1, 9);
  std::uniform_real_distribution<float> value(-3.0f, 3.0f);
  const Aggregation aggs[] = {Aggregation::kMaxout, Aggregation::kAddition, Aggregation::kMultiplication,
                              Aggregation::kConcatenation};
  std::size_t shape_bad = 0, gate_bad = 0, zero_bad = 0;

  for (std::size_t t = 0; t < kAlgebraTensors; ++t) {
    const std::size_t c = 2 * half_c(rng);
    const Shape shape = Shape::nchw(batch(rng), c, extent(rng), extent(rng));
    Tensor u(shape);
    for (auto& v : u.data()) v = value(rng);
    const Aggregation agg = aggs[t % 4];

    // (a) + (b): randomly initialised blocks.
    ConcurrentSE<float> scse(c, 2, agg, rng);
    const Tensor out = scse.forward(u, Mode::kTrain);
    const std::size_t out_c = agg == Aggregation::kConcatenation ? 2 * c : c;
    const Shape expect = Shape::nchw(shape.n(), out_c, shape.h(), shape.w());
    if (out.shape() != expect || scse.output_shape(shape) != expect) ++shape_bad;
    if (!open_unit(scse.channel().last_gate()) || !open_unit(scse.spatial().last_map())) ++gate_bad;

    // (c): all weights zero, so every gate is sigmoid(0) = 0.5.
    ChannelSE<float> cse(c, 2, rng);
    SpatialSE<float> sse(c, rng);
    ConcurrentSE<float> zero(c, 2, agg, rng);
    for (Layer<float>* l : std::initializer_list<Layer<float>*>{&cse, &sse, &zero})
      each_parameter(*l, [](Parameter<float>& p) { p.value.fill(0.0f); });
    const Tensor yc = cse.forward(u, Mode::kEval);
    const Tensor ys = sse.forward(u, Mode::kEval);
    const Tensor yz = zero.forward(u, Mode::kEval);
    bool ok = true;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const float half = 0.5f * u[i];
      ok = ok && yc[i] == half && ys[i] == half;
    }
    const std::size_t per_item = u.size() / shape.n();
    for (std::size_t n = 0; n < shape.n() && ok; ++n) {
      for (std::size_t j = 0; j < per_item; ++j) {
        const float v = u[n * per_item + j], half = 0.5f * v;
        switch (agg) {
          case Aggregation::kMaxout: ok = ok && yz[n * per_item + j] == half; break;
          case Aggregation::kAddition: ok = ok && yz[n * per_item + j] == half + half; break;
          case Aggregation::kMultiplication: ok = ok && yz[n * per_item + j] == half * half; break;
          case Aggregation::kConcatenation:
            ok = ok && yz[2 * n * per_item + j] == half && yz[(2 * n + 1) * per_item + j] == half;
            break;
        }
      }
    }
    if (!ok) ++zero_bad;
  }
  o.require(shape_bad == 0, std::to_string(shape_bad) + " shape violations");
  o.require(gate_bad == 0, std::to_string(gate_bad) + " gates outside (0,1)");
  o.require(zero_bad == 0, std::to_string(zero_bad) + " zero-weight outputs not exactly 0.5 u");
  o.note(std::to_string(kAlgebraTensors) + " tensors");
  return o;
}

// --- C4 / C6 / C7 -----------------------------------------------------------

RunConfig toy_config(const fs::path& work, SEMode mode, const fs::path& run_dir) {
  RunConfig cfg;
  cfg.network.family = Family::kSDNet;
  cfg.network.channels = kToyChannels;
  cfg.network.se.mode = mode;
  cfg.network.se.aggregation = Aggregation::kMaxout;
  cfg.network.position = Position::kP5;
  cfg.data.manifest = (work / "c4" / "data" / "manifest.json").string();
  cfg.output.run_dir = run_dir.string();
  cfg.validate();
  return cfg;
}

// Runs `train` with output captured in <run_dir>.log; returns the exit code.
int train_logged(const RunConfig& cfg) {
  fs::create_directories(cfg.run_dir().parent_path());
  std::ofstream log(cfg.run_dir().string() + ".log");
  return cmd_train(cfg, std::nullopt, log, log);
}

Outcome criterion4(const fs::path& work) {
  Outcome o;
  fs::remove_all(work / "c4");
  const RunConfig none = toy_config(work, SEMode::kNone, work / "c4" / "runs" / "none");
  const RunConfig scse = toy_config(work, SEMode::kConcurrent, work / "c4" / "runs" / "scse");
  const GeneratorConfig& g = none.data.generator;
  o.require(g.n_train == 200 && g.n_val == 50 && g.n_test == 50 && g.height == 64 && g.width == 64 &&
                g.num_classes == 9 && g.profile == ImbalanceProfile::kImbalanced,
            "default generator is not the 200/50/50 64x64 9-class imbalanced set");
  std::ostringstream gen_out, gen_err;
  const int gen = cmd_gen_data(none, gen_out, gen_err);
  o.require(gen == kExitOk, "gen-data exit " + std::to_string(gen) + " " + gen_err.str());
  if (!o.pass) return o;

  double dice[2] = {0, 0};
  const RunConfig* cfgs[2] = {&none, &scse};
  const double pinned[2] = {kPinnedNone, kPinnedScse};
  for (int i = 0; i < 2; ++i) {
    const std::string name = to_string(cfgs[i]->network.se.mode);
    const int code = train_logged(*cfgs[i]);
    o.require(code == kExitOk, name + " train exit " + std::to_string(code));
    if (code != kExitOk) return o;
    const auto rows = read_metrics(cfgs[i]->run_dir() / "metrics.csv");
    const CsvRow* test = find_row(rows, "test");
    o.require(test != nullptr, name + " has no test row");
    if (!test) return o;
    dice[i] = test->global_dice;
    o.require(dice[i] > kToyFloor, name + " test Dice " + fmt("%.4f", dice[i]) + " <= 0.85");
    o.require(std::abs(dice[i] - pinned[i]) <= kPinTol,
              name + " test Dice " + fmt("%.4f", dice[i]) + " drifted from pinned " + fmt("%.4f", pinned[i]));
    std::vector<double> train_loss;
    for (const auto& r : rows)
      if (r.split == "train" && r.epoch < 5) train_loss.push_back(r.loss);
    bool falling = train_loss.size() == 5;
    for (std::size_t e = 1; e < train_loss.size(); ++e) falling = falling && train_loss[e] < train_loss[e - 1];
    o.require(falling, name + " train loss not decreasing over epochs 0-4");
  }
  o.require(dice[1] >= dice[0] - kToyMargin, "scse " + fmt("%.4f", dice[1]) + " < none - 0.01");
  o.note("test Dice none " + fmt("%.4f", dice[0]) + ", scse " + fmt("%.4f", dice[1]));
  return o;
}

Outcome criterion6(const fs::path& work) {
  Outcome o;
  const fs::path first = work / "c4" / "runs" / "scse" / "metrics.csv";
  o.require(fs::exists(first), "run c4 first (" + first.string() + " missing)");
  if (!o.pass) return o;
  fs::remove_all(work / "c6");
  const RunConfig cfg = toy_config(work, SEMode::kConcurrent, work / "c6" / "scse");
  const int code = train_logged(cfg);
  o.require(code == kExitOk, "train exit " + std::to_string(code));
  if (!o.pass) return o;
  const std::string a = slurp(first), b = slurp(cfg.run_dir() / "metrics.csv");
  o.require(!a.empty() && a == b, "metrics.csv differs between identical runs");
  o.note(std::to_string(b.size()) + " bytes identical");
  return o;
}

Outcome criterion7(const fs::path& work) {
  Outcome o;
  RunConfig cfg = toy_config(work, SEMode::kConcurrent, work / "c7");
  cfg.inspect.blocks = {"sE-1", "sD-4"};
  fs::remove_all(work / "c7");
  std::size_t valid = 0, textured = 0;
  for (std::size_t epoch = 1; epoch <= 7; ++epoch) {
    std::ostringstream out, err;
    const int code = cmd_inspect_excitation(cfg, checkpoint_path(work / "c4" / "runs" / "scse", epoch),
                                            std::nullopt, out, err);
    o.require(code == kExitOk, "inspect epoch " + std::to_string(epoch) + " exit " + std::to_string(code) + " " +
                                   err.str());
    if (code != kExitOk) return o;
    for (const auto& block : cfg.inspect.blocks) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_epoch%03zu.pgm", block.c_str(), epoch);
      try {
        const GrayImage img = read_pgm(work / "c7" / "excitation" / name);
        if (img.width == 64 && img.height == 64 && img.pixels.size() == 64 * 64) ++valid;
        const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
        if (lo != img.pixels.end() && *lo != *hi) ++textured;
      } catch (const std::exception& e) {
        o.require(false, e.what());
      }
    }
  }
  o.require(valid == 14, std::to_string(valid) + "/14 PGMs valid at 64x64");

  // Zero-weight fixture: every spatial gate is sigmoid(0) = 0.5 -> 128.
  Network<float> net(cfg.network, 5);
  net.visit_parameters([](const std::string&, const std::string& kind, Parameter<float>& p) {
    if (kind == "sse") p.value.fill(0.0f);
  });
  const Sample s = generate_sample(cfg.data.generator, 0);
  const auto paths = dump_excitation(net, s.image, cfg.inspect.blocks, 0, work / "c7" / "zero");
  std::size_t off = 0;
  for (const auto& p : paths) {
    const GrayImage img = read_pgm(p);
    for (auto v : img.pixels) off += v != 128;
  }
  o.require(paths.size() == 2 && off == 0, std::to_string(off) + " zero-fixture pixels differ from 128");
  o.note(std::to_string(valid) + " PGMs valid, " + std::to_string(textured) + " non-uniform, zero fixture uniform 128");
  return o;
}

// --- C5 ---------------------------------------------------------------------

Outcome criterion5(const fs::path& work) {
  Outcome o;
  fs::remove_all(work / "c5");
  GeneratorConfig g;
  g.height = g.width = 32;
  g.n_train = 8;
  g.n_val = 4;
  g.n_test = 4;
  g.seed = 5;
  std::vector<Sample> train_set, val_set, test_set;
  for (std::size_t i = 0; i < 16; ++i) {
    Sample s = generate_sample(g, i);
    (i < 8 ? train_set : i < 12 ? val_set : test_set).push_back(std::move(s));
  }
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 4;

  const Position positions[] = {Position::kP1, Position::kP2, Position::kP3,
                                Position::kP4, Position::kP5, Position::kP6};
  const Aggregation aggs[] = {Aggregation::kMaxout, Aggregation::kAddition, Aggregation::kMultiplication,
                              Aggregation::kConcatenation};
  std::size_t ran = 0;
  for (int skip : {1, 2}) {
    for (Aggregation agg : aggs) {
      std::map<Position, std::size_t> blocks;
      for (Position pos : positions) {
        NetworkSpec spec;
        spec.family = Family::kSDNet;
        spec.channels = 8;
        spec.num_classes = g.num_classes;
        spec.se = {SEMode::kConcurrent, 2, agg};
        spec.position = pos;
        spec.skip_config = skip;
        const std::string name = to_string(pos) + "_" + to_string(agg) + "_skip" + std::to_string(skip);
        try {
          Network<float> net(spec, 3);
          blocks[pos] = net.se_block_count();
          const TrainResult r = train(net, tc, train_set, val_set, test_set, work / "c5" / name);
          bool finite = r.test && std::isfinite(r.test->global_dice) && std::isfinite(r.test->loss);
          for (const auto& h : r.history) finite = finite && std::isfinite(h.loss) && std::isfinite(h.global_dice);
          o.require(finite, name + " non-finite loss or Dice");
          ++ran;
        } catch (const std::exception& e) {
          o.require(false, name + ": " + e.what());
        }
      }
      o.require(blocks[Position::kP6] == blocks[Position::kP5] + 2,
                to_string(agg) + " skip" + std::to_string(skip) + " P6 has " + std::to_string(blocks[Position::kP6]) +
                    " SE blocks, P5 " + std::to_string(blocks[Position::kP5]));
    }
  }
  o.note(std::to_string(ran) + "/48 configurations trained");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<std::string> selected;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("criteria", selected, "c1 .. c7 (default: all)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(const fs::path&)>>> all = {
      {"c1", criterion1}, {"c2", criterion2}, {"c3", criterion3}, {"c4", criterion4},
      {"c5", criterion5}, {"c6", criterion6}, {"c7", criterion7}};
  if (selected.empty())
    for (const auto& [name, fn] : all) selected.push_back(name);

  const fs::path dir = fs::absolute(work);
  fs::create_directories(dir);
  bool ok = true;
  for (const auto& want : selected) {
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& c) { return c.first == want; });
    if (it == all.end()) {
      std::cerr << "unknown criterion " << want << '\n';
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second(dir);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS " : "FAIL ") << want << " (" << fmt("%.1f", secs) << " s) " << o.detail << std::endl;
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
