#include "sefcn/config.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace sefcn {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read through the size_t overload");

// One JSON object plus the keys read from it, so leftovers can be rejected.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
  }

  const json* find(const std::string& key) {
    known_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(key_path(key) + " must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(key_path(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key) + " must be an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) throw ConfigError(key_path(key) + " must be an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  // Enumerations spelled as strings.
  template <typename E, typename Parse>
  void read_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    read(key, s);
    if (find(key)) {
      try {
        out = parse(s);
      } catch (const ConfigError& e) {
        throw ConfigError(key_path(key) + ": " + e.what());
      }
    }
  }

  // Nested object, or nullopt when absent.
  std::optional<Section> child(const std::string& key) {
    if (const json* v = find(key)) return Section(*v, key_path(key));
    return std::nullopt;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : obj_.items()) {
      if (!known_.count(k)) throw ConfigError("unknown config key " + key_path(k));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

void read_network(Section& s, NetworkSpec& n) {
  s.read_enum("family", n.family, parse_family);
  s.read("depth", n.depth);
  s.read("channels", n.channels);
  s.read("num_classes", n.num_classes);
  s.read("in_channels", n.in_channels);
  if (auto se = s.child("se")) {
    se->read_enum("mode", n.se.mode, parse_se_mode);
    se->read("r", n.se.r);
    se->read_enum("aggregation", n.se.aggregation, parse_aggregation);
    se->reject_unknown();
  }
  s.read_enum("position", n.position, parse_position);
  s.read("skip_config", n.skip_config);
}

void read_train(Section& s, TrainConfig& t) {
  s.read("lr0", t.lr0);
  s.read("lr_decay_every", t.lr_decay_every);
  s.read("lr_decay_factor", t.lr_decay_factor);
  s.read("momentum", t.momentum);
  s.read("weight_decay", t.weight_decay);
  s.read("batch_size", t.batch_size);
  s.read("max_epochs", t.max_epochs);
  s.read("seed", t.seed);
  s.read("lambda", t.lambda);
  s.read("patience", t.patience);
}

void read_generator(Section& s, GeneratorConfig& g) {
  s.read("seed", g.seed);
  s.read("n_train", g.n_train);
  s.read("n_val", g.n_val);
  s.read("n_test", g.n_test);
  s.read("height", g.height);
  s.read("width", g.width);
  s.read("num_classes", g.num_classes);
  s.read_enum("profile", g.profile, parse_profile);
}

}  // namespace

void RunConfig::validate() const {
  network.validate();
  train.validate();
  data.generator.validate();
  if (data.generator.num_classes != network.num_classes) {
    throw ConfigError("data.generator.num_classes (" + std::to_string(data.generator.num_classes) +
                      ") must equal network.num_classes (" + std::to_string(network.num_classes) + ")");
  }
  if (data.manifest.empty()) throw ConfigError("data.manifest must not be empty");
  if (output.run_dir.empty()) throw ConfigError("output.run_dir must not be empty");
}

std::filesystem::path RunConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

bool same_settings(const RunConfig& a, const RunConfig& b) {
  return a.network == b.network && a.train == b.train && a.data == b.data && a.output == b.output &&
         a.inspect == b.inspect;
}

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section top(root, "");
  if (auto s = top.child("network")) {
    read_network(*s, cfg.network);
    s->reject_unknown();
  }
  if (auto s = top.child("train")) {
    read_train(*s, cfg.train);
    s->reject_unknown();
  }
  if (auto s = top.child("data")) {
    s->read("manifest", cfg.data.manifest);
    if (auto g = s->child("generator")) {
      read_generator(*g, cfg.data.generator);
      g->reject_unknown();
    }
    s->reject_unknown();
  }
  if (auto s = top.child("output")) {
    s->read("run_dir", cfg.output.run_dir);
    s->reject_unknown();
  }
  if (auto s = top.child("inspect")) {
    s->read("enabled", cfg.inspect.enabled);
    s->read("blocks", cfg.inspect.blocks);
    s->reject_unknown();
  }
  top.reject_unknown();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig cfg = parse_config(text.str());
  cfg.base_dir = path.parent_path();
  return cfg;
}

std::string print_config(const RunConfig& cfg) {
  const NetworkSpec& n = cfg.network;
  const TrainConfig& t = cfg.train;
  const GeneratorConfig& g = cfg.data.generator;
  ordered_json root;
  root["network"] = {
      {"family", to_string(n.family)},
      {"depth", n.depth},
      {"channels", n.channels},
      {"num_classes", n.num_classes},
      {"in_channels", n.in_channels},
      {"se", {{"mode", to_string(n.se.mode)}, {"r", n.se.r}, {"aggregation", to_string(n.se.aggregation)}}},
      {"position", to_string(n.position)},
      {"skip_config", n.skip_config},
  };
  root["train"] = {
      {"lr0", t.lr0},
      {"lr_decay_every", t.lr_decay_every},
      {"lr_decay_factor", t.lr_decay_factor},
      {"momentum", t.momentum},
      {"weight_decay", t.weight_decay},
      {"batch_size", t.batch_size},
      {"max_epochs", t.max_epochs},
      {"seed", t.seed},
      {"lambda", t.lambda},
      {"patience", t.patience},
  };
  root["data"] = {
      {"manifest", cfg.data.manifest},
      {"generator",
       {{"seed", g.seed},
        {"n_train", g.n_train},
        {"n_val", g.n_val},
        {"n_test", g.n_test},
        {"height", g.height},
        {"width", g.width},
        {"num_classes", g.num_classes},
        {"profile", to_string(g.profile)}}},
  };
  root["output"] = {{"run_dir", cfg.output.run_dir}};
  root["inspect"] = {{"enabled", cfg.inspect.enabled}, {"blocks", cfg.inspect.blocks}};
  return root.dump(2) + "\n";
}

void apply_seed_override(RunConfig& cfg, std::optional<std::uint64_t> flag, const char* env) {
  std::optional<std::uint64_t> seed = flag;
  if (!seed && env && *env) {
    const std::string_view s(env);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) {
      throw ConfigError("SEFCN_SEED must be a non-negative integer, got \"" + std::string(s) + "\"");
    }
    seed = v;
  }
  if (seed) {
    cfg.train.seed = *seed;
    cfg.data.generator.seed = *seed;
  }
}

}  // namespace sefcn
