#pragma once

// Flat INI run configuration: [network] [train] [augment] [loss] [data] [eval].
//
// Layer lists use comma-separated tokens:
//   dense:N  conv:C:K[:S[:valid]]  bn  neuron  pool[:K]  flatten  clip[:HI]

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "snnssl/analysis.hpp"
#include "snnssl/trainer.hpp"

namespace snnssl {

class ConfigError : public Error {
 public:
  ConfigError(const std::string& origin, std::size_t line, std::size_t column, const std::string& msg)
      : Error(origin + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_, column_;
};

struct IniEntry {
  std::string value;
  std::size_t line = 0, key_column = 0, value_column = 0;
};

struct IniSection {
  std::size_t line = 0;
  std::map<std::string, IniEntry> entries;
};

struct IniFile {
  std::string origin;
  std::size_t lines = 0;
  std::map<std::string, IniSection> sections;
};

namespace detail {

inline std::size_t skip_space(const std::string& s, std::size_t i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
  return i;
}

inline std::string rtrim(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace detail

/// Parses INI text. Lines starting with '#' or ';' are comments; keys before
/// the first section header are rejected.
inline IniFile parse_ini(const std::string& text, const std::string& origin = "<config>") {
  IniFile ini{origin, 0, {}};
  std::istringstream in(text);
  std::string raw;
  IniSection* current = nullptr;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::size_t i = detail::skip_space(raw, 0);
    if (i == raw.size() || raw[i] == '#' || raw[i] == ';') continue;
    if (raw[i] == '[') {
      auto close = raw.find(']', i);
      if (close == std::string::npos) throw ConfigError(origin, lineno, i + 1, "unterminated section header");
      std::string name = raw.substr(i + 1, close - i - 1);
      if (detail::skip_space(raw, close + 1) != raw.size()) {
        throw ConfigError(origin, lineno, close + 2, "unexpected text after section header");
      }
      auto [it, fresh] = ini.sections.emplace(name, IniSection{lineno, {}});
      if (!fresh) throw ConfigError(origin, lineno, i + 1, "duplicate section [" + name + "]");
      current = &it->second;
      continue;
    }
    auto eq = raw.find('=', i);
    if (eq == std::string::npos) throw ConfigError(origin, lineno, i + 1, "expected 'key = value'");
    std::string key = detail::rtrim(raw.substr(i, eq - i));
    if (key.empty()) throw ConfigError(origin, lineno, i + 1, "empty key");
    if (!current) throw ConfigError(origin, lineno, i + 1, "key '" + key + "' outside any section");
    std::size_t v = detail::skip_space(raw, eq + 1);
    IniEntry e{detail::rtrim(raw.substr(v)), lineno, i + 1, v + 1};
    if (!current->entries.emplace(key, e).second) throw ConfigError(origin, lineno, i + 1, "duplicate key '" + key + "'");
  }
  ini.lines = lineno;
  return ini;
}

/// Typed access to one section; every key must be consumed or declared.
class SectionReader {
 public:
  SectionReader(const IniFile& ini, const std::string& name) : ini_(ini), name_(name) {
    auto it = ini.sections.find(name);
    if (it != ini.sections.end()) section_ = &it->second;
  }

  bool present() const { return section_ != nullptr; }

  void require_present() const {
    if (!section_) throw ConfigError(ini_.origin, ini_.lines + 1, 1, "missing required section [" + name_ + "]");
  }

  const IniEntry* find(const std::string& key) {
    known_.insert(key);
    if (!section_) return nullptr;
    auto it = section_->entries.find(key);
    return it == section_->entries.end() ? nullptr : &it->second;
  }

  [[noreturn]] void fail(const IniEntry& e, const std::string& msg) const {
    throw ConfigError(ini_.origin, e.line, e.value_column, "[" + name_ + "] " + msg);
  }

  void real(const std::string& key, double& out) {
    if (auto* e = find(key)) {
      double v = 0;
      auto [p, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
      if (ec != std::errc() || p != e->value.data() + e->value.size()) fail(*e, key + ": expected a number, got '" + e->value + "'");
      out = v;
    }
  }

  template <class U>
  void integer(const std::string& key, U& out) {
    if (auto* e = find(key)) {
      U v{};
      auto [p, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
      if (ec != std::errc() || p != e->value.data() + e->value.size()) {
        fail(*e, key + ": expected a non-negative integer, got '" + e->value + "'");
      }
      out = v;
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (auto* e = find(key)) {
      if (e->value == "true") out = true;
      else if (e->value == "false") out = false;
      else fail(*e, key + ": expected true or false, got '" + e->value + "'");
    }
  }

  template <class E>
  void choice(const std::string& key, E& out, const std::map<std::string, E>& options) {
    if (auto* e = find(key)) {
      auto it = options.find(e->value);
      if (it == options.end()) {
        std::string names;
        for (const auto& [n, v] : options) names += (names.empty() ? "" : ", ") + n;
        fail(*e, key + ": expected one of {" + names + "}, got '" + e->value + "'");
      }
      out = it->second;
    }
  }

  void text(const std::string& key, std::optional<std::string>& out) {
    if (auto* e = find(key)) out = e->value;
  }

  /// Rejects keys that no accessor asked for.
  void finish() const {
    if (!section_) return;
    for (const auto& [key, e] : section_->entries) {
      if (!known_.count(key)) throw ConfigError(ini_.origin, e.line, e.key_column, "[" + name_ + "] unknown key '" + key + "'");
    }
  }

 private:
  const IniFile& ini_;
  std::string name_;
  const IniSection* section_ = nullptr;
  std::set<std::string> known_;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    auto b = cur.find_first_not_of(" \t"), e = cur.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
  }
  return out;
}

inline std::size_t parse_size(const std::string& s, bool& ok) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  ok = ok && ec == std::errc() && p == s.data() + s.size() && !s.empty();
  return v;
}

inline std::vector<LayerSpec> parse_layers(SectionReader& r, const IniEntry& e, const NeuronConfig& neuron) {
  std::vector<LayerSpec> layers;
  if (e.value.empty()) return layers;
  for (const auto& tok : split(e.value, ',')) {
    auto parts = split(tok, ':');
    const auto& kind = parts[0];
    bool ok = true;
    LayerSpec l;
    if (kind == "dense" && parts.size() == 2) {
      l = LayerSpec::dense(parse_size(parts[1], ok));
    } else if (kind == "conv" && parts.size() >= 3 && parts.size() <= 5) {
      l = LayerSpec::conv(parse_size(parts[1], ok), parse_size(parts[2], ok));
      if (parts.size() >= 4) l.stride = parse_size(parts[3], ok);
      if (parts.size() == 5) {
        ok = ok && (parts[4] == "valid" || parts[4] == "same");
        l.padding = parts[4] == "valid" ? Padding::valid : Padding::zero;
      }
    } else if (kind == "bn" && parts.size() == 1) {
      l = LayerSpec::batchnorm();
    } else if (kind == "neuron" && parts.size() == 1) {
      l = LayerSpec::spiking(neuron);
    } else if (kind == "pool" && parts.size() <= 2) {
      l = LayerSpec::pool_avg(parts.size() == 2 ? parse_size(parts[1], ok) : 0);
    } else if (kind == "flatten" && parts.size() == 1) {
      l = LayerSpec::flatten();
    } else if (kind == "clip" && parts.size() <= 2) {
      double hi = 1.0;
      if (parts.size() == 2) {
        auto [p, ec] = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), hi);
        ok = ec == std::errc() && p == parts[1].data() + parts[1].size();
      }
      l = LayerSpec::clip(hi);
    } else {
      ok = false;
    }
    if (!ok) r.fail(e, "bad layer token '" + tok + "'");
    layers.push_back(l);
  }
  return layers;
}

inline std::string layer_token(const LayerSpec& l) {
  std::ostringstream os;
  switch (l.kind) {
    case LayerKind::dense: os << "dense:" << l.units; break;
    case LayerKind::conv2d:
      os << "conv:" << l.units << ':' << l.kernel << ':' << l.stride << ':'
         << (l.padding == Padding::valid ? "valid" : "same");
      break;
    case LayerKind::batchnorm: os << "bn"; break;
    case LayerKind::neuron: os << "neuron"; break;
    case LayerKind::pool_avg: os << "pool"; if (l.pool) os << ':' << l.pool; break;
    case LayerKind::flatten: os << "flatten"; break;
    case LayerKind::clip: os << std::setprecision(17) << "clip:" << l.clip_hi; break;
  }
  return os.str();
}

inline const std::map<std::string, NeuronKind>& neuron_kinds() {
  static const std::map<std::string, NeuronKind> m{
      {"lif", NeuronKind::lif}, {"if", NeuronKind::integrate_fire}, {"mixed_lif", NeuronKind::mixed_lif}};
  return m;
}

inline const std::map<std::string, ResetMode>& reset_modes() {
  static const std::map<std::string, ResetMode> m{{"hard", ResetMode::hard}, {"soft", ResetMode::soft}};
  return m;
}

inline const std::map<std::string, LossMode>& loss_modes() {
  static const std::map<std::string, LossMode> m{{"ctl", LossMode::ctl}, {"btl", LossMode::btl}, {"ncl", LossMode::ncl}};
  return m;
}

template <class M, class V>
std::string key_of(const M& map, V value) {
  for (const auto& [k, v] : map)
    if (v == value) return k;
  return "?";
}

}  // namespace detail

/// [network] keys: input (e.g. 32 or 1x28x28), timesteps, backbone, head,
/// neuron, tau, v_th, v_reset, alpha, reset, bn_eps, bn_momentum.
inline NetworkSpec read_network(const IniFile& ini) {
  SectionReader r(ini, "network");
  r.require_present();
  NetworkSpec spec;
  NeuronConfig neuron;
  r.choice("neuron", neuron.kind, detail::neuron_kinds());
  r.choice("reset", neuron.reset, detail::reset_modes());
  r.real("tau", neuron.tau);
  r.real("v_th", neuron.v_th);
  r.real("v_reset", neuron.v_reset);
  r.real("alpha", neuron.alpha);
  r.integer("timesteps", spec.timesteps);
  r.real("bn_eps", spec.bn_eps);
  r.real("bn_momentum", spec.bn_momentum);
  const IniEntry* input = r.find("input");
  const IniEntry* backbone = r.find("backbone");
  const IniEntry* head = r.find("head");
  r.finish();
  auto need = [&](const IniEntry* e, const char* key) -> const IniEntry& {
    if (!e) {
      auto& sec = ini.sections.at("network");
      throw ConfigError(ini.origin, sec.line, 1, std::string("[network] missing key '") + key + "'");
    }
    return *e;
  };
  const auto& in = need(input, "input");
  bool ok = true;
  for (const auto& d : detail::split(in.value, 'x')) spec.input_shape.push_back(detail::parse_size(d, ok));
  if (!ok || spec.input_shape.empty()) r.fail(in, "input: expected dimensions like 32 or 1x28x28");
  spec.backbone = detail::parse_layers(r, need(backbone, "backbone"), neuron);
  if (head) spec.head = detail::parse_layers(r, *head, neuron);
  try {
    neuron.validate();
    validate(spec);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(ini.origin, ini.sections.at("network").line, 1, std::string("[network] ") + e.what());
  }
  return spec;
}

/// Inverse of read_network. All neuron layers must share one configuration.
inline std::string write_network(const NetworkSpec& spec) {
  std::optional<NeuronConfig> neuron;
  for (const auto* section : {&spec.backbone, &spec.head})
    for (const auto& l : *section)
      if (l.kind == LayerKind::neuron) {
        const auto& n = l.neuron;
        if (neuron && (n.tau != neuron->tau || n.v_th != neuron->v_th || n.v_reset != neuron->v_reset ||
                       n.alpha != neuron->alpha || n.kind != neuron->kind || n.reset != neuron->reset)) {
          throw Error("write_network: neuron layers differ in configuration");
        }
        neuron = n;
      }
  NeuronConfig n = neuron.value_or(NeuronConfig{});
  auto join = [](const std::vector<LayerSpec>& layers) {
    std::string s;
    for (const auto& l : layers) s += (s.empty() ? "" : ", ") + detail::layer_token(l);
    return s;
  };
  std::string input;
  for (auto d : spec.input_shape) input += (input.empty() ? "" : "x") + std::to_string(d);
  std::ostringstream os;
  os << std::setprecision(17) << "[network]\n"
     << "input = " << input << "\n"
     << "timesteps = " << spec.timesteps << "\n"
     << "backbone = " << join(spec.backbone) << "\n"
     << "head = " << join(spec.head) << "\n"
     << "neuron = " << detail::key_of(detail::neuron_kinds(), n.kind) << "\n"
     << "reset = " << detail::key_of(detail::reset_modes(), n.reset) << "\n"
     << "tau = " << n.tau << "\n"
     << "v_th = " << n.v_th << "\n"
     << "v_reset = " << n.v_reset << "\n"
     << "alpha = " << n.alpha << "\n"
     << "bn_eps = " << spec.bn_eps << "\n"
     << "bn_momentum = " << spec.bn_momentum << "\n";
  return os.str();
}

struct DataConfig {
  std::filesystem::path inputs;
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> test_inputs, test_labels;
  DataKind kind = DataKind::static_input;

  void check_files() const {
    auto check = [](const std::filesystem::path& p) {
      if (!std::filesystem::is_regular_file(p)) throw Error("data file not found: " + p.string());
    };
    check(inputs);
    for (const auto* p : {&labels, &test_inputs, &test_labels})
      if (*p) check(**p);
  }
};

struct RunConfig {
  NetworkSpec network;
  TrainConfig train;
  AugmentConfig augment;
  std::optional<DataConfig> data;
  EvalConfig eval;
};

/// Parses and validates a full run configuration. Relative data paths are
/// resolved against `base_dir`.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin,
                                  const std::filesystem::path& base_dir = {}) {
  IniFile ini = parse_ini(text, origin);
  for (const auto& [name, sec] : ini.sections) {
    static const std::set<std::string> known{"network", "train", "augment", "loss", "data", "eval"};
    if (!known.count(name)) throw ConfigError(origin, sec.line, 1, "unknown section [" + name + "]");
  }
  RunConfig rc;
  rc.network = read_network(ini);

  auto checked = [&](const char* section, auto&& validate) {
    try {
      validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      auto it = ini.sections.find(section);
      throw ConfigError(origin, it == ini.sections.end() ? 1 : it->second.line, 1, e.what());
    }
  };

  {
    SectionReader r(ini, "train");
    auto& t = rc.train;
    r.real("lr", t.lr);
    r.real("weight_decay", t.weight_decay);
    r.real("momentum", t.momentum);
    r.integer("warmup_epochs", t.warmup_epochs);
    r.integer("epochs", t.total_epochs);
    r.integer("batch_size", t.batch_size);
    r.integer("seed", t.seed);
    r.integer("checkpoint_every", t.checkpoint_every);
    r.finish();
  }
  {
    SectionReader r(ini, "loss");
    auto& l = rc.train.loss;
    r.choice("mode", l.mode, detail::loss_modes());
    r.real("lambda", l.lambda);
    r.real("epsilon_norm", l.epsilon_norm);
    r.finish();
  }
  checked("train", [&] { rc.train.validate(); });
  {
    SectionReader r(ini, "augment");
    auto& a = rc.augment;
    r.real("crop_scale_min", a.crop_scale_min);
    r.real("crop_scale_max", a.crop_scale_max);
    r.real("flip_prob", a.flip_prob);
    r.real("jitter_prob", a.jitter_prob);
    r.real("brightness", a.brightness);
    r.real("contrast", a.contrast);
    r.real("blur_prob", a.blur_prob);
    r.real("blur_sigma_min", a.blur_sigma_min);
    r.real("blur_sigma_max", a.blur_sigma_max);
    r.real("noise_std", a.noise_std);
    r.boolean("temporal_enabled", a.temporal_enabled);
    r.real("reverse_prob", a.reverse_prob);
    r.real("frame_dropout", a.frame_dropout);
    r.integer("max_shift", a.max_shift);
    r.finish();
  }
  checked("augment", [&] { rc.augment.validate(); });
  {
    SectionReader r(ini, "data");
    if (r.present()) {
      DataConfig d;
      std::optional<std::string> inputs, labels, ti, tl;
      r.text("inputs", inputs);
      r.text("labels", labels);
      r.text("test_inputs", ti);
      r.text("test_labels", tl);
      r.choice("kind", d.kind, std::map<std::string, DataKind>{{"static", DataKind::static_input},
                                                               {"events", DataKind::events}});
      r.finish();
      if (!inputs) throw ConfigError(origin, ini.sections.at("data").line, 1, "[data] missing key 'inputs'");
      auto resolve = [&](const std::string& p) { return base_dir / std::filesystem::path(p); };
      d.inputs = resolve(*inputs);
      if (labels) d.labels = resolve(*labels);
      if (ti) d.test_inputs = resolve(*ti);
      if (tl) d.test_labels = resolve(*tl);
      if (rc.augment.temporal_enabled && d.kind != DataKind::events) {
        throw ConfigError(origin, ini.sections.at("data").line, 1, "temporal augmentation requires kind = events");
      }
      rc.data = d;
    }
  }
  {
    SectionReader r(ini, "eval");
    auto& e = rc.eval;
    r.real("lr", e.lr);
    r.integer("epochs", e.epochs);
    r.integer("batch_size", e.batch_size);
    r.real("test_fraction", e.test_fraction);
    r.boolean("standardize", e.standardize);
    r.boolean("fine_tune", e.fine_tune);
    r.integer("seed", e.seed);
    r.finish();
  }
  checked("eval", [&] { rc.eval.validate(); });
  return rc;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.string(), path.parent_path());
}

inline NetworkSpec parse_network(const std::string& text, const std::string& origin = "<network>") {
  return read_network(parse_ini(text, origin));
}

// ---------------------------------------------------------------------------
// Checkpoints: network.ini plus the parameter and buffer tensors.

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const Parameters<T>& params, const NetworkSpec& spec) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "network.ini", std::ios::trunc) << write_network(spec);
  save_tensor_sets<T>(dir, {{"weights", &params.weights}, {"buffers", &params.buffers}});
}

template <class T>
std::pair<Parameters<T>, NetworkSpec> load_checkpoint(const std::filesystem::path& dir) {
  auto spec = parse_network(read_text_file(dir / "network.ini"), (dir / "network.ini").string());
  auto sets = load_tensor_sets<T>(dir);
  Parameters<T> p{std::move(sets["weights"]), std::move(sets["buffers"])};
  auto expect = build_network<T>(spec, 0);
  check_same_keys(p.weights, expect.weights, "checkpoint weights");
  check_same_keys(p.buffers, expect.buffers, "checkpoint buffers");
  for (const auto* group : {&p.weights, &p.buffers})
    for (const auto& [name, t] : *group) {
      const auto& ref = group == &p.weights ? expect.weights.at(name) : expect.buffers.at(name);
      if (t.shape() != ref.shape()) throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(t.shape()));
    }
  return {std::move(p), std::move(spec)};
}

}  // namespace snnssl
