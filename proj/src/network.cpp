#include "sefcn/network.hpp"

#include <algorithm>
#include <stdexcept>

#include "sefcn/tensor_io.hpp"
#include "sefcn/tensor_ops.hpp"

namespace sefcn {

std::string to_string(Family f) {
  switch (f) {
    case Family::kUNet: return "unet";
    case Family::kSDNet: return "sdnet";
    case Family::kFCDenseNet: return "fcdensenet";
  }
  return "?";
}

std::string to_string(Position p) { return "P" + std::to_string(static_cast<int>(p)); }

std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::kEncoder: return "encoder";
    case BlockKind::kDecoder: return "decoder";
    case BlockKind::kBottleneck: return "bottleneck";
    case BlockKind::kClassifier: return "classifier";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "unet") return Family::kUNet;
  if (s == "sdnet") return Family::kSDNet;
  if (s == "fcdensenet") return Family::kFCDenseNet;
  throw ConfigError("unknown network family \"" + std::string(s) + "\" (expected unet, sdnet or fcdensenet)");
}

Position parse_position(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'P' || s[0] == 'p') && s[1] >= '1' && s[1] <= '6') {
    return static_cast<Position>(s[1] - '0');
  }
  throw ConfigError("unknown SE position \"" + std::string(s) + "\" (expected P1..P6)");
}

bool se_attached(Position p, BlockKind kind) {
  switch (kind) {
    case BlockKind::kEncoder: return p == Position::kP1 || p == Position::kP5 || p == Position::kP6;
    case BlockKind::kDecoder: return p == Position::kP2 || p == Position::kP5 || p == Position::kP6;
    case BlockKind::kBottleneck: return p == Position::kP3 || p == Position::kP6;
    case BlockKind::kClassifier: return p == Position::kP4 || p == Position::kP6;
  }
  return false;
}

void NetworkSpec::validate() const {
  if (depth < 1 || depth > 8) throw ConfigError("network.depth must be in 1..8, got " + std::to_string(depth));
  if (channels < 1) throw ConfigError("network.channels must be positive");
  if (num_classes < 2) throw ConfigError("network.num_classes must be at least 2");
  if (in_channels < 1) throw ConfigError("network.in_channels must be positive");
  if (skip_config != 1 && skip_config != 2) {
    throw ConfigError("network.skip_config must be 1 or 2, got " + std::to_string(skip_config));
  }
  if (se.mode != SEMode::kNone && (se.r == 0 || channels % se.r != 0)) {
    throw ConfigError("network.se.r=" + std::to_string(se.r) + " must divide network.channels=" +
                      std::to_string(channels));
  }
  // The classifier SE may wrap a concatenation-doubled map; 2C is still divisible by r.
}

// ---------------------------------------------------------------------------
// Dense block

namespace {

template <typename T>
Sequential<T> conv_bn_relu(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng) {
  Sequential<T> s;
  s.add(std::make_unique<Conv2d<T>>(c_in, c_out, k, true, rng));
  s.add(std::make_unique<BatchNorm2d<T>>(c_out));
  s.add(std::make_unique<ReLU<T>>());
  return s;
}

std::string join_name(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

}  // namespace

template <typename T>
DenseBlock<T>::DenseBlock(std::size_t in_channels, std::size_t channels, Rng& rng)
    : in_(in_channels),
      channels_(channels),
      unit1_(conv_bn_relu<T>(in_channels, channels, 5, rng)),
      unit2_(conv_bn_relu<T>(in_channels + channels, channels, 5, rng)),
      unit3_(conv_bn_relu<T>(in_channels + 2 * channels, channels, 1, rng)) {}

template <typename T>
std::vector<std::string> DenseBlock<T>::recipe() const {
  std::vector<std::string> out;
  for (const auto* u : {&unit1_, &unit2_, &unit3_}) {
    auto r = u->recipe();
    out.insert(out.end(), r.begin(), r.end());
    if (u != &unit3_) out.push_back("concat");
  }
  return out;
}

template <typename T>
std::string DenseBlock<T>::describe() const {
  return "dense(" + unit1_.describe() + " ++ x, " + unit2_.describe() + " ++ prev, " + unit3_.describe() + ")";
}

template <typename T>
Shape DenseBlock<T>::output_shape(const Shape& in) const {
  require_rank4(in, "dense_block");
  if (in.c() != in_) {
    throw ShapeError("dense_block: built for " + std::to_string(in_) + " channels, got " + in.to_string());
  }
  return Shape::nchw(in.n(), channels_, in.h(), in.w());
}

template <typename T>
BasicTensor<T> DenseBlock<T>::forward(const BasicTensor<T>& x, Mode mode) {
  output_shape(x.shape());
  const BasicTensor<T> a = unit1_.forward(x, mode);
  const BasicTensor<T> cat1 = concat_channels(a, x);
  const BasicTensor<T> b = unit2_.forward(cat1, mode);
  return unit3_.forward(concat_channels(b, cat1), mode);
}

template <typename T>
BasicTensor<T> DenseBlock<T>::backward(const BasicTensor<T>& grad_out) {
  auto [g_b, g_cat1] = split_channels(unit3_.backward(grad_out), channels_);
  accumulate(g_cat1, unit2_.backward(g_b));
  auto [g_a, g_x] = split_channels(g_cat1, channels_);
  accumulate(g_x, unit1_.backward(g_a));
  return std::move(g_x);
}

template <typename T>
void DenseBlock<T>::freeze_branches(bool frozen) {
  unit1_.freeze_branches(frozen);
  unit2_.freeze_branches(frozen);
  unit3_.freeze_branches(frozen);
}

template <typename T>
void DenseBlock<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& fn) {
  unit1_.visit_parameters(join_name(prefix, "unit1"), fn);
  unit2_.visit_parameters(join_name(prefix, "unit2"), fn);
  unit3_.visit_parameters(join_name(prefix, "unit3"), fn);
}

template <typename T>
void DenseBlock<T>::visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) {
  unit1_.visit_buffers(join_name(prefix, "unit1"), fn);
  unit2_.visit_buffers(join_name(prefix, "unit2"), fn);
  unit3_.visit_buffers(join_name(prefix, "unit3"), fn);
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
std::unique_ptr<Layer<T>> build_block(Family family, BlockKind kind, std::size_t c_in, std::size_t c_out, Rng& rng) {
  if (kind == BlockKind::kClassifier) {
    auto s = std::make_unique<Sequential<T>>();
    s->add(std::make_unique<Conv2d<T>>(c_in, c_out, 1, true, rng));
    return s;
  }
  switch (family) {
    case Family::kUNet: {
      auto s = std::make_unique<Sequential<T>>();
      s->add(std::make_unique<Conv2d<T>>(c_in, c_out, 3, true, rng));
      s->add(std::make_unique<ReLU<T>>());
      s->add(std::make_unique<Conv2d<T>>(c_out, c_out, 3, true, rng));
      s->add(std::make_unique<ReLU<T>>());
      return s;
    }
    case Family::kSDNet: {
      auto s = std::make_unique<Sequential<T>>();
      s->add(std::make_unique<Conv2d<T>>(c_in, c_out, 7, true, rng));
      s->add(std::make_unique<BatchNorm2d<T>>(c_out));
      s->add(std::make_unique<ReLU<T>>());
      return s;
    }
    case Family::kFCDenseNet: return std::make_unique<DenseBlock<T>>(c_in, c_out, rng);
  }
  throw ConfigError("unsupported network family");
}

namespace {

template <typename T>
std::vector<std::string> recipe_of(const Layer<T>& layer) {
  if (const auto* s = dynamic_cast<const Sequential<T>*>(&layer)) return s->recipe();
  if (const auto* d = dynamic_cast<const DenseBlock<T>*>(&layer)) return d->recipe();
  return {layer.describe()};
}

}  // namespace

std::vector<std::string> block_recipe(Family family, BlockKind kind, std::size_t c_in, std::size_t c_out) {
  Rng rng(0);
  auto block = build_block<float>(family, kind, c_in, c_out, rng);
  auto r = recipe_of(*block);
  if (kind == BlockKind::kClassifier) r.push_back("softmax");
  return r;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
struct Network<T>::Stage {
  std::string id;       // "E1", "B", "D1", "C"
  std::string name;     // parameter prefix
  BlockKind kind;
  std::unique_ptr<Layer<T>> up;    // decoders
  std::unique_ptr<Layer<T>> body;
  std::unique_ptr<Layer<T>> se;
  std::unique_ptr<MaxPool2<T>> pool;  // encoders
  std::size_t up_channels = 0;
  std::size_t skip_channels = 0;
  std::size_t block_channels = 0;  // body output
  std::size_t out_channels = 0;    // after SE
};

template <typename T>
Network<T>::Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
  spec_.validate();
  build();
}

template <typename T>
Network<T>::~Network() = default;

template <typename T>
void Network<T>::build() {
  const std::size_t c = spec_.channels;
  auto attach = [&](Stage& st, std::size_t channels) {
    if (se_attached(spec_.position, st.kind)) st.se = make_se_block<T>(spec_.se, channels, rng_);
    st.out_channels = st.se ? se_output_channels(spec_.se, channels) : channels;
  };
  auto describe = [&](const Stage& st, std::size_t index, std::size_t c_in) {
    BlockDescriptor d{st.kind, index, st.id, {}, st.se != nullptr, c_in, st.out_channels};
    if (st.up) d.layers.push_back(st.up->describe());
    if (st.kind == BlockKind::kClassifier && st.se) d.layers.push_back(st.se->describe());
    auto r = recipe_of(*st.body);
    d.layers.insert(d.layers.end(), r.begin(), r.end());
    if (st.kind == BlockKind::kClassifier) {
      d.layers.push_back("softmax");
    } else if (st.se) {
      d.layers.push_back(st.se->describe());
    }
    if (st.pool) d.layers.push_back("max_pool2");
    descriptors_.push_back(std::move(d));
  };

  std::size_t c_in = spec_.in_channels;
  for (std::size_t i = 1; i <= spec_.depth; ++i) {
    auto st = std::make_unique<Stage>();
    st->id = "E" + std::to_string(i);
    st->name = "encoder" + std::to_string(i);
    st->kind = BlockKind::kEncoder;
    st->body = build_block<T>(spec_.family, st->kind, c_in, c, rng_);
    st->block_channels = c;
    attach(*st, c);
    st->skip_channels = spec_.skip_config == 1 ? st->out_channels : c;
    st->pool = std::make_unique<MaxPool2<T>>();
    describe(*st, i, c_in);
    c_in = st->out_channels;
    encoders_.push_back(std::move(st));
  }

  bottleneck_ = std::make_unique<Stage>();
  bottleneck_->id = "B";
  bottleneck_->name = "bottleneck";
  bottleneck_->kind = BlockKind::kBottleneck;
  bottleneck_->body = build_block<T>(spec_.family, BlockKind::kBottleneck, c_in, c, rng_);
  bottleneck_->block_channels = c;
  attach(*bottleneck_, c);
  describe(*bottleneck_, 1, c_in);
  std::size_t c_x = bottleneck_->out_channels;

  for (std::size_t k = 1; k <= spec_.depth; ++k) {
    Stage& enc = *encoders_[spec_.depth - k];
    auto st = std::make_unique<Stage>();
    st->id = "D" + std::to_string(k);
    st->name = "decoder" + std::to_string(k);
    st->kind = BlockKind::kDecoder;
    if (spec_.family == Family::kSDNet) {
      st->up = std::make_unique<MaxUnpool2<T>>(enc.pool.get());
    } else {
      st->up = std::make_unique<TransposedConv2<T>>(c_x, c_x, true, rng_);
    }
    st->up_channels = c_x;
    st->skip_channels = enc.skip_channels;
    const std::size_t d_in = c_x + enc.skip_channels;
    st->body = build_block<T>(spec_.family, BlockKind::kDecoder, d_in, c, rng_);
    st->block_channels = c;
    attach(*st, c);
    describe(*st, k, c_x);
    c_x = st->out_channels;
    decoders_.push_back(std::move(st));
  }

  classifier_ = std::make_unique<Stage>();
  classifier_->id = "C";
  classifier_->name = "classifier";
  classifier_->kind = BlockKind::kClassifier;
  std::size_t c_cls = c_x;
  if (se_attached(spec_.position, BlockKind::kClassifier)) {
    classifier_->se = make_se_block<T>(spec_.se, c_x, rng_);
    if (classifier_->se) c_cls = se_output_channels(spec_.se, c_x);
  }
  classifier_->body = build_block<T>(spec_.family, BlockKind::kClassifier, c_cls, spec_.num_classes, rng_);
  classifier_->block_channels = spec_.num_classes;
  classifier_->out_channels = spec_.num_classes;
  describe(*classifier_, 1, c_x);
}

template <typename T>
template <typename Fn>
void Network<T>::for_each_stage(Fn&& fn) {
  for (auto& s : encoders_) fn(*s);
  fn(*bottleneck_);
  for (auto& s : decoders_) fn(*s);
  fn(*classifier_);
}

namespace {

void check_input(const Shape& s, std::size_t in_channels, std::size_t depth) {
  require_rank4(s, "network input");
  if (s.c() != in_channels) {
    throw ShapeError("network input has " + std::to_string(s.c()) + " channels, expected " +
                     std::to_string(in_channels));
  }
  const std::size_t div = std::size_t{1} << depth;
  if (s.h() % div != 0 || s.w() % div != 0) {
    throw ShapeError("input size " + std::to_string(s.h()) + "x" + std::to_string(s.w()) +
                     " is not divisible by 2^depth = " + std::to_string(div));
  }
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Shape>> Network<T>::infer_shapes(const Shape& input) const {
  check_input(input, spec_.in_channels, spec_.depth);
  std::vector<std::pair<std::string, Shape>> out;
  std::vector<Shape> skips;
  Shape x = input;
  for (const auto& st : encoders_) {
    Shape u = st->body->output_shape(x);
    Shape uh = st->se ? st->se->output_shape(u) : u;
    skips.push_back(spec_.skip_config == 1 ? uh : u);
    out.emplace_back(st->id, uh);
    x = st->pool->output_shape(uh);
  }
  {
    Shape b = bottleneck_->body->output_shape(x);
    x = bottleneck_->se ? bottleneck_->se->output_shape(b) : b;
    out.emplace_back(bottleneck_->id, x);
  }
  for (std::size_t k = 0; k < decoders_.size(); ++k) {
    const auto& st = decoders_[k];
    const Shape up = st->up->output_shape(x);
    const Shape& skip = skips[spec_.depth - 1 - k];
    if (up.n() != skip.n() || up.h() != skip.h() || up.w() != skip.w()) {
      throw ShapeError(st->id + ": upsampled " + up.to_string() + " does not match skip " + skip.to_string());
    }
    const Shape cat = Shape::nchw(up.n(), up.c() + skip.c(), up.h(), up.w());
    Shape d = st->body->output_shape(cat);
    x = st->se ? st->se->output_shape(d) : d;
    out.emplace_back(st->id, x);
  }
  if (classifier_->se) x = classifier_->se->output_shape(x);
  out.emplace_back(classifier_->id, classifier_->body->output_shape(x));
  return out;
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& input, Mode mode) {
  check_input(input.shape(), spec_.in_channels, spec_.depth);
  last_shapes_.clear();
  skips_.assign(spec_.depth, BasicTensor<T>{});
  BasicTensor<T> x = input;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    Stage& st = *encoders_[i];
    BasicTensor<T> u = st.body->forward(x, mode);
    if (st.se) {
      BasicTensor<T> uh = st.se->forward(u, mode);
      skips_[i] = spec_.skip_config == 1 ? uh : std::move(u);
      x = std::move(uh);
    } else {
      skips_[i] = u;
      x = std::move(u);
    }
    last_shapes_.emplace_back(st.id, x.shape());
    x = st.pool->forward(x, mode);
  }
  x = bottleneck_->body->forward(x, mode);
  if (bottleneck_->se) x = bottleneck_->se->forward(x, mode);
  last_shapes_.emplace_back(bottleneck_->id, x.shape());
  for (std::size_t k = 0; k < decoders_.size(); ++k) {
    Stage& st = *decoders_[k];
    const BasicTensor<T> up = st.up->forward(x, mode);
    x = st.body->forward(concat_channels(up, skips_[spec_.depth - 1 - k]), mode);
    if (st.se) x = st.se->forward(x, mode);
    last_shapes_.emplace_back(st.id, x.shape());
  }
  if (classifier_->se) x = classifier_->se->forward(x, mode);
  x = classifier_->body->forward(x, mode);
  last_shapes_.emplace_back(classifier_->id, x.shape());
  skips_.assign(spec_.depth, BasicTensor<T>{});  // only channel counts are needed for backward
  return x;
}

template <typename T>
BasicTensor<T> Network<T>::predict(const BasicTensor<T>& x, Mode mode) {
  return softmax_channels(forward(x, mode));
}

template <typename T>
BasicTensor<T> Network<T>::backward(const BasicTensor<T>& grad_logits) {
  if (last_shapes_.empty()) throw std::logic_error("network: backward called before forward");
  BasicTensor<T> g = classifier_->body->backward(grad_logits);
  if (classifier_->se) g = classifier_->se->backward(g);
  std::vector<BasicTensor<T>> skip_grads(spec_.depth);
  for (std::size_t k = decoders_.size(); k-- > 0;) {
    Stage& st = *decoders_[k];
    if (st.se) g = st.se->backward(g);
    auto [g_up, g_skip] = split_channels(st.body->backward(g), st.up_channels);
    skip_grads[spec_.depth - 1 - k] = std::move(g_skip);
    g = st.up->backward(g_up);
  }
  if (bottleneck_->se) g = bottleneck_->se->backward(g);
  g = bottleneck_->body->backward(g);
  for (std::size_t i = encoders_.size(); i-- > 0;) {
    Stage& st = *encoders_[i];
    g = st.pool->backward(g);
    if (st.se) {
      if (spec_.skip_config == 1) accumulate(g, skip_grads[i]);
      g = st.se->backward(g);
      if (spec_.skip_config == 2) accumulate(g, skip_grads[i]);
    } else {
      accumulate(g, skip_grads[i]);
    }
    g = st.body->backward(g);
  }
  return g;
}

template <typename T>
void Network<T>::visit_parameters(const ParameterVisitor<T>& fn) {
  for_each_stage([&](Stage& st) {
    if (st.up) st.up->visit_parameters(st.name + ".up", fn);
    if (st.kind == BlockKind::kClassifier && st.se) st.se->visit_parameters(st.name + ".se", fn);
    st.body->visit_parameters(st.name + ".body", fn);
    if (st.kind != BlockKind::kClassifier && st.se) st.se->visit_parameters(st.name + ".se", fn);
  });
}

template <typename T>
void Network<T>::visit_buffers(const BufferVisitor<T>& fn) {
  for_each_stage([&](Stage& st) { st.body->visit_buffers(st.name + ".body", fn); });
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
  std::vector<Parameter<T>*> out;
  visit_parameters([&](const std::string&, const std::string&, Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
void Network<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->grad.fill(T{0});
}

template <typename T>
ParamReport Network<T>::count_parameters() {
  ParamReport report;
  auto count = [](Layer<T>* l, const std::string& prefix) {
    std::size_t n = 0;
    if (l) l->visit_parameters(prefix, [&](const std::string&, const std::string&, Parameter<T>& p) {
      n += p.value.size();
    });
    return n;
  };
  for_each_stage([&](Stage& st) {
    BlockParams b{st.id, 0, 0};
    b.se = count(st.se.get(), "");
    b.total = b.se + count(st.body.get(), "") + count(st.up.get(), "");
    report.total += b.total;
    report.se_total += b.se;
    if (st.se) ++report.se_blocks;
    report.per_block.push_back(b);
  });
  const std::size_t base = report.total - report.se_total;
  report.percentage = base ? 100.0 * static_cast<double>(report.se_total) / static_cast<double>(base) : 0.0;
  return report;
}

template <typename T>
void Network<T>::freeze_branches(bool frozen) {
  for_each_stage([&](Stage& st) {
    Layer<T>* layers[] = {st.up.get(), st.body.get(), st.se.get(), st.pool.get()};
    for (Layer<T>* l : layers) {
      if (l) l->freeze_branches(frozen);
    }
  });
}

template <typename T>
std::size_t Network<T>::se_block_count() const {
  std::size_t n = bottleneck_->se ? 1 : 0;
  if (classifier_->se) ++n;
  for (const auto& s : encoders_) n += s->se ? 1 : 0;
  for (const auto& s : decoders_) n += s->se ? 1 : 0;
  return n;
}

template <typename T>
const typename Network<T>::Stage* Network<T>::find_stage(std::string_view block) const {
  auto indexed = [&](std::string_view prefix, const std::vector<std::unique_ptr<Stage>>& v) -> const Stage* {
    if (block.substr(0, prefix.size()) != prefix) return nullptr;
    const std::string_view rest = block.substr(prefix.size());
    if (rest.empty() || rest.size() > 2 || !std::all_of(rest.begin(), rest.end(), [](char ch) {
          return ch >= '0' && ch <= '9';
        })) {
      return nullptr;
    }
    const std::size_t k = std::stoul(std::string(rest));
    return k >= 1 && k <= v.size() ? v[k - 1].get() : nullptr;
  };
  if (block == "sB") return bottleneck_.get();
  if (block == "sC") return classifier_.get();
  if (const Stage* s = indexed("sE-", encoders_)) return s;
  return indexed("sD-", decoders_);
}

template <typename T>
const BasicTensor<T>& Network<T>::spatial_map(std::string_view block) const {
  const Stage* st = find_stage(block);
  if (!st) {
    throw ConfigError("unknown block id \"" + std::string(block) + "\" (expected sE-k, sD-k, sB or sC for depth " +
                      std::to_string(spec_.depth) + ")");
  }
  if (!st->se) throw ConfigError("block " + std::string(block) + " has no SE block at position " + to_string(spec_.position));
  const BasicTensor<T>* map = spatial_excitation(*st->se);
  if (!map) {
    throw ConfigError("block " + std::string(block) + " uses " + to_string(spec_.se.mode) +
                      ", which has no spatial excitation map");
  }
  if (map->empty()) throw std::logic_error("spatial_map: no forward pass has been run");
  return *map;
}

template <typename T>
template <typename U>
void Network<T>::copy_state_from(Network<U>& other) {
  if (!(other.spec() == spec_)) throw ConfigError("copy_state_from: network specs differ");
  std::vector<const BasicTensor<U>*> params;
  other.visit_parameters([&](const std::string&, const std::string&, Parameter<U>& p) { params.push_back(&p.value); });
  std::size_t i = 0;
  visit_parameters([&](const std::string&, const std::string&, Parameter<T>& p) {
    p.value = params.at(i++)->template cast<T>();
  });
  std::vector<const BasicTensor<U>*> buffers;
  other.visit_buffers([&](const std::string&, BasicTensor<U>& b) { buffers.push_back(&b); });
  i = 0;
  visit_buffers([&](const std::string&, BasicTensor<T>& b) { b = buffers.at(i++)->template cast<T>(); });
}

template class DenseBlock<float>;
template class DenseBlock<double>;
template std::unique_ptr<Layer<float>> build_block<float>(Family, BlockKind, std::size_t, std::size_t, Rng&);
template std::unique_ptr<Layer<double>> build_block<double>(Family, BlockKind, std::size_t, std::size_t, Rng&);
template class Network<float>;
template class Network<double>;
template void Network<double>::copy_state_from<float>(Network<float>&);
template void Network<float>::copy_state_from<double>(Network<double>&);
template void Network<float>::copy_state_from<float>(Network<float>&);

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::string> state_names(Network<float>& net) {
  std::vector<std::string> names;
  net.visit_parameters([&](const std::string& n, const std::string&, Parameter<float>&) { names.push_back(n); });
  net.visit_buffers([&](const std::string& n, Tensor&) { names.push_back(n); });
  return names;
}

std::vector<Tensor> state_tensors(Network<float>& net) {
  std::vector<Tensor> out;
  net.visit_parameters([&](const std::string&, const std::string&, Parameter<float>& p) { out.push_back(p.value); });
  net.visit_buffers([&](const std::string&, Tensor& b) { out.push_back(b); });
  return out;
}

void assign_state(Network<float>& net, const std::vector<Tensor>& tensors) {
  const auto names = state_names(net);
  std::vector<Tensor*> slots;
  net.visit_parameters([&](const std::string&, const std::string&, Parameter<float>& p) { slots.push_back(&p.value); });
  net.visit_buffers([&](const std::string&, Tensor& b) { slots.push_back(&b); });
  const std::size_t common = std::min(slots.size(), tensors.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (!(slots[i]->shape() == tensors[i].shape())) {
      throw ConfigError("checkpoint tensor #" + std::to_string(i) + " (" + names[i] + ") has shape " +
                        tensors[i].shape().to_string() + ", network expects " + slots[i]->shape().to_string());
    }
  }
  if (tensors.size() < slots.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, network expects " +
                      std::to_string(slots.size()) + "; first missing tensor is #" + std::to_string(common) + " (" +
                      names[common] + ")");
  }
  if (tensors.size() > slots.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, network expects " +
                      std::to_string(slots.size()) + "; first extra tensor is #" + std::to_string(common));
  }
  for (std::size_t i = 0; i < common; ++i) *slots[i] = tensors[i];
}

void save_checkpoint(Network<float>& net, const std::filesystem::path& path) {
  write_tensor_list(state_tensors(net), path);
}

void load_checkpoint(Network<float>& net, const std::filesystem::path& path) {
  assign_state(net, read_tensor_list(path));
}

}  // namespace sefcn
