#include "sefcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sefcn/excitation.hpp"
#include "sefcn/tensor_io.hpp"
#include "sefcn/tensor_ops.hpp"

namespace sefcn {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("train.") + name + " must be positive");
  };
  positive(lr0, "lr0");
  positive(lr_decay_factor, "lr_decay_factor");
  if (lr_decay_every == 0) throw ConfigError("train.lr_decay_every must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train.weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train.lambda must be non-negative");
  if (patience == 0) throw ConfigError("train.patience must be at least 1");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
}

void sgd_step(std::span<Parameter<float>* const> params, std::span<const std::string> names, OptimState& state,
              double lr, const TrainConfig& cfg) {
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (auto* p : params) state.velocity.emplace_back(p->value.shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!all_finite(params[i]->grad)) {
      throw DivergenceError("non-finite gradient in parameter " + (i < names.size() ? names[i] : std::to_string(i)));
    }
  }
  const float m = static_cast<float>(cfg.momentum);
  const float wd = static_cast<float>(cfg.weight_decay);
  const float step = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* theta = params[i]->value.raw();
    const float* g = params[i]->grad.raw();
    float* v = state.velocity[i].raw();
    const std::size_t n = params[i]->value.size();
    for (std::size_t j = 0; j < n; ++j) {
      v[j] = m * v[j] + g[j] + wd * theta[j];
      theta[j] -= step * v[j];
    }
  }
  state.lr = lr;
}

std::string csv_header(std::size_t num_classes) {
  std::string h = "epoch,split,loss,global_dice";
  for (std::size_t c = 0; c < num_classes; ++c) h += ",dice_class_" + std::to_string(c);
  return h + ",lr";
}

std::string csv_row(const EpochRecord& r) {
  char buf[64];
  std::string s = std::to_string(r.epoch) + "," + r.split;
  std::snprintf(buf, sizeof buf, ",%.9g,%.9g", r.loss, r.global_dice);
  s += buf;
  for (double d : r.dice) {
    std::snprintf(buf, sizeof buf, ",%.9g", d);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.9g", r.lr);
  return s + buf;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed * 0x9E3779B97F4A7C15ull + epoch + 1);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

Tensor stack_images(std::span<const Sample> samples, std::span<const std::size_t> order, std::size_t first,
                    std::size_t count) {
  const Shape& s0 = samples[order[first]].image.shape();
  const std::size_t h = s0[1], w = s0[2];
  Tensor x = Tensor::nchw(count, 1, h, w);
  for (std::size_t b = 0; b < count; ++b) {
    const Tensor& img = samples[order[first + b]].image;
    if (!(img.shape() == s0)) throw InputError("sample " + samples[order[first + b]].name + " differs in size from the batch");
    std::copy(img.data().begin(), img.data().end(), x.raw() + b * h * w);
  }
  return x;
}

LabelMap stack_labels(std::span<const Sample> samples, std::span<const std::size_t> order, std::size_t first,
                      std::size_t count) {
  const LabelMap& l0 = samples[order[first]].label;
  LabelMap y(count, l0.h, l0.w);
  for (std::size_t b = 0; b < count; ++b) {
    const LabelMap& l = samples[order[first + b]].label;
    std::copy(l.ids.begin(), l.ids.end(), y.ids.begin() + static_cast<std::ptrdiff_t>(b * l0.plane()));
  }
  return y;
}

EvalResult evaluate(Network<float>& net, std::span<const Sample> samples, std::span<const double> weights,
                    std::size_t batch_size, double lambda) {
  if (samples.empty()) throw InputError("evaluate: no samples");
  const std::size_t k = net.spec().num_classes;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  DiceAccumulator dice(k);
  double loss = 0.0;
  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - first);
    const Tensor x = stack_images(samples, order, first, count);
    const LabelMap y = stack_labels(samples, order, first, count);
    const Tensor logits = net.forward(x, Mode::kEval);
    loss += combined_loss(logits, y, weights, lambda).value * static_cast<double>(count);
    dice.add(argmax_channels(logits), y);
  }
  return {loss / static_cast<double>(samples.size()), dice.global(), dice.per_class()};
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch);
  return run_dir / "checkpoints" / name;
}

namespace {

std::filesystem::path opt_path(std::filesystem::path ckpt) { return ckpt.replace_extension(".opt"); }

// Write to a sibling temp file, then rename over the target.
template <typename Fn>
void write_atomically(const std::filesystem::path& path, Fn&& write) {
  auto tmp = path;
  tmp += ".tmp";
  write(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  });
}

}  // namespace

void save_optim_state(const OptimState& s, const std::filesystem::path& path) {
  std::vector<Tensor> list = s.velocity;
  Tensor meta(Shape{5});
  meta[0] = static_cast<float>(s.epoch);
  meta[1] = static_cast<float>(s.bad_epochs);
  meta[2] = s.best_val_loss;
  meta[3] = s.has_best ? 1.0f : 0.0f;
  meta[4] = static_cast<float>(s.lr);
  list.push_back(meta);
  write_atomically(path, [&](const std::filesystem::path& tmp) { write_tensor_list(list, tmp); });
}

OptimState load_optim_state(const std::filesystem::path& path) {
  auto list = read_tensor_list(path);
  if (list.empty() || !(list.back().shape() == Shape{5})) {
    throw FormatError("optimizer state " + path.string() + " lacks its trailing metadata record", 0);
  }
  const Tensor meta = list.back();
  list.pop_back();
  OptimState s;
  s.velocity = std::move(list);
  s.epoch = static_cast<std::size_t>(meta[0]);
  s.bad_epochs = static_cast<std::size_t>(meta[1]);
  s.best_val_loss = meta[2];
  s.has_best = meta[3] != 0.0f;
  s.lr = meta[4];
  return s;
}

TrainResult train(Network<float>& net, const TrainConfig& cfg, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, std::span<const Sample> test_set,
                  const std::filesystem::path& run_dir, const InspectOptions& inspect,
                  const std::optional<std::filesystem::path>& resume, std::ostream* log) {
  cfg.validate();
  if (train_set.empty()) throw InputError("train: the training split is empty");
  const std::size_t k = net.spec().num_classes;

  ClassCounts counts(k);
  for (const auto& s : train_set) counts.add(s.label);
  const std::vector<double> weights = median_frequency_weights(counts);

  std::error_code ec;
  std::filesystem::create_directories(run_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + (run_dir / "checkpoints").string() + ": " + ec.message());

  std::vector<Parameter<float>*> params;
  std::vector<std::string> names;
  net.visit_parameters([&](const std::string& n, const std::string&, Parameter<float>& p) {
    params.push_back(&p);
    names.push_back(n);
  });

  OptimState st;
  std::vector<std::string> rows;
  const auto metrics = run_dir / "metrics.csv";
  if (resume) {
    load_checkpoint(net, *resume);
    st = load_optim_state(opt_path(*resume));
    if (st.velocity.size() != params.size()) {
      throw ConfigError("optimizer state " + opt_path(*resume).string() + " does not match the network");
    }
    std::ifstream in(metrics);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      if (std::stoul(line.substr(0, comma)) < st.epoch && line.find(",test,") == std::string::npos) rows.push_back(line);
    }
  } else {
    for (auto* p : params) st.velocity.emplace_back(p->value.shape());
    const auto ckpt = checkpoint_path(run_dir, 0);
    write_atomically(ckpt, [&](const std::filesystem::path& tmp) { save_checkpoint(net, tmp); });
    save_optim_state(st, opt_path(ckpt));
  }

  auto flush_csv = [&] {
    std::string text = csv_header(k) + "\n";
    for (const auto& r : rows) text += r + "\n";
    write_text(metrics, text);
  };
  flush_csv();

  std::optional<Tensor> probe = inspect.image;
  if (inspect.enabled && !probe) probe = val_set.empty() ? train_set.front().image : val_set.front().image;

  TrainResult result;
  double last_lr = st.lr;
  for (std::size_t epoch = st.epoch; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    last_lr = lr;
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    DiceAccumulator train_dice(k);
    double train_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++batch_index) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      const Tensor x = stack_images(train_set, order, first, count);
      const LabelMap y = stack_labels(train_set, order, first, count);
      net.zero_grad();
      const Tensor logits = net.forward(x, Mode::kTrain);
      const CombinedLoss<float> loss = combined_loss(logits, y, weights, cfg.lambda);
      if (!std::isfinite(loss.value)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index));
      }
      net.backward(loss.grad_logits);
      sgd_step(params, names, st, lr, cfg);
      train_loss += loss.value * static_cast<double>(count);
      train_dice.add(argmax_channels(logits), y);
    }
    EpochRecord tr{epoch, "train", train_loss / static_cast<double>(order.size()), train_dice.global(),
                   train_dice.per_class(), lr};
    rows.push_back(csv_row(tr));
    result.history.push_back(tr);

    std::optional<EvalResult> val;
    if (!val_set.empty()) {
      val = evaluate(net, val_set, weights, cfg.batch_size, cfg.lambda);
      EpochRecord vr{epoch, "val", val->loss, val->global_dice, val->dice, lr};
      rows.push_back(csv_row(vr));
      result.history.push_back(vr);
      const float vl = static_cast<float>(val->loss);
      if (!st.has_best || vl < st.best_val_loss) {
        st.best_val_loss = vl;
        st.has_best = true;
        st.bad_epochs = 0;
      } else {
        ++st.bad_epochs;
      }
    }
    st.epoch = epoch + 1;
    flush_csv();
    const auto ckpt = checkpoint_path(run_dir, st.epoch);
    write_atomically(ckpt, [&](const std::filesystem::path& tmp) { save_checkpoint(net, tmp); });
    save_optim_state(st, opt_path(ckpt));
    if (inspect.enabled) dump_excitation(net, *probe, inspect.blocks, st.epoch, run_dir / "excitation");
    ++result.epochs_run;

    if (log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3zu  lr %-8.2g train loss %.4f dice %.4f", epoch, lr, tr.loss,
                    tr.global_dice);
      *log << line;
      if (val) {
        std::snprintf(line, sizeof line, "  val loss %.4f dice %.4f", val->loss, val->global_dice);
        *log << line;
      }
      *log << '\n';
    }
    if (val && st.bad_epochs >= cfg.patience) {
      result.stopped_early = true;
      if (log) *log << "validation loss has not improved for " << cfg.patience << " epochs; stopping\n";
      break;
    }
  }

  if (!test_set.empty()) {
    result.test = evaluate(net, test_set, weights, cfg.batch_size, cfg.lambda);
    const std::size_t last = st.epoch ? st.epoch - 1 : 0;
    EpochRecord te{last, "test", result.test->loss, result.test->global_dice, result.test->dice, last_lr};
    rows.push_back(csv_row(te));
    result.history.push_back(te);
    flush_csv();
    if (log) {
      char line[96];
      std::snprintf(line, sizeof line, "test loss %.4f dice %.4f\n", te.loss, te.global_dice);
      *log << line;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
  return std::abs(analytic - numeric) / den;
}

GradCheckReport grad_check(Network<float>& net, const Tensor& images, const LabelMap& labels,
                           std::span<const double> weights, std::size_t samples, double tolerance,
                           std::uint64_t seed, double h, DoubleLoss loss) {
  Network<double> shadow(net.spec(), 0);
  shadow.copy_state_from(net);
  const TensorD x = images.cast<double>();
  const std::vector<double> w(weights.begin(), weights.end());
  if (!loss) {
    loss = [w](const TensorD& logits, const LabelMap& y) { return combined_loss(logits, y, w, 1.0); };
  }

  struct Slot {
    std::string name, kind;
    Parameter<double>* p;
  };
  std::vector<Slot> slots;
  shadow.visit_parameters([&](const std::string& n, const std::string& k, Parameter<double>& p) {
    slots.push_back({n, k, &p});
  });

  shadow.zero_grad();
  shadow.backward(loss(shadow.forward(x, Mode::kTrain), labels).grad_logits);
  // Probe the smooth piece the analytic gradient belongs to; a ReLU or pooling
  // switch flipping inside [-h, h] would otherwise put a kink between the probes.
  shadow.freeze_branches(true);
  auto value = [&] { return loss(shadow.forward(x, Mode::kTrain), labels).value; };

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t i = 0; i < samples; ++i) {
    Slot& s = slots[i % slots.size()];
    const std::size_t idx = static_cast<std::size_t>(rng() % s.p->value.size());
    const double analytic = s.p->grad[idx];
    const double saved = s.p->value[idx];
    auto central = [&](double step) {
      s.p->value[idx] = saved + step;
      const double plus = value();
      s.p->value[idx] = saved - step;
      const double minus = value();
      s.p->value[idx] = saved;
      return (plus - minus) / (2.0 * step);
    };
    // Richardson step: cancels the h^2 term, which batch norm over a handful
    // of values at the coarsest levels makes large.
    const double numeric = (4.0 * central(0.5 * h) - central(h)) / 3.0;
    const double err = relative_error(analytic, numeric);
    report.entries.push_back({s.name, s.kind, idx, analytic, numeric, err});
    auto& worst = report.max_rel_error_by_kind[s.kind];
    worst = std::max(worst, err);
    report.max_rel_error = std::max(report.max_rel_error, err);
    if (!(err < tolerance)) ++report.failures;
  }
  return report;
}

}  // namespace sefcn
