// Command-line front end: pretrain, linear-eval, infer, analyze, selfcheck and
// synthetic data generation.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "snnssl/snnssl.hpp"

namespace fs = std::filesystem;
using namespace snnssl;

namespace {

struct Options {
  std::string config, out, checkpoint, checkpoint2, data, labels, test_data, test_labels, kind = "static";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string precision = "f32";
  bool fold_bn = false;
  bool corrupt_surrogate = false;
  std::string mode;
  double macs = -1, acs = -1;
  // synth
  std::string generator;
  std::size_t per_class = 100, classes = 4, dim = 32, size = 28, raw_steps = 16;
  double spread = 0.1, noise = 0.1;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

DataKind parse_kind(const std::string& k) {
  if (k == "static") return DataKind::static_input;
  if (k == "events") return DataKind::events;
  throw UsageError("--kind must be static or events");
}

RunConfig load_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  auto rc = load_run_config(o.config);
  if (o.seed) {
    rc.train.seed = *o.seed;
    rc.eval.seed = *o.seed;
  }
  return rc;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  for (const auto& l : lines) f << l << '\n';
}

std::string spike_table(const SpikeReport& rep) {
  std::ostringstream os;
  os << std::setprecision(9) << "layer";
  for (std::size_t t = 0; t < rep.timesteps(); ++t) os << "\tt" << t + 1;
  os << '\n';
  for (std::size_t l = 0; l < rep.layers(); ++l) {
    os << l;
    for (double r : rep.rates[l]) os << '\t' << r;
    os << '\n';
  }
  os << "overall\t" << rep.overall << '\n';
  return os.str();
}

/// Dataset named by --data/--labels, falling back to the config's [data].
template <class T>
Dataset<T> command_data(const Options& o, const std::optional<RunConfig>& rc, bool need_labels) {
  if (!o.data.empty()) {
    std::optional<fs::path> labels;
    if (!o.labels.empty()) labels = o.labels;
    if (need_labels && !labels) throw UsageError("--labels is required");
    return load_dataset<T>(o.data, labels, parse_kind(o.kind));
  }
  if (!rc || !rc->data) throw UsageError("no data: pass --data or add a [data] section");
  rc->data->check_files();
  if (need_labels && !rc->data->labels) throw UsageError("[data] labels are required");
  return load_dataset<T>(rc->data->inputs, rc->data->labels, rc->data->kind);
}

template <class T>
int cmd_pretrain(const Options& o) {
  auto rc = load_config(o);
  if (!rc.data) throw ConfigError(o.config, 1, 1, "missing required section [data]");
  try {
    rc.data->check_files();
  } catch (const Error& e) {
    throw ConfigError(o.config, 1, 1, e.what());
  }
  if (o.out.empty()) throw UsageError("--out is required");
  if (rc.train.batch_size < 2) std::cerr << "warning: batch_size < 2 gives a degenerate batch correlation\n";
  fs::path out(o.out);
  fs::create_directories(out);
  auto data = load_dataset<T>(rc.data->inputs, rc.data->labels, rc.data->kind);
  std::vector<std::string> lines;
  PretrainHooks<T> hooks;
  hooks.on_epoch = [&](const EpochMetrics& m, const Parameters<T>& p) {
    lines.push_back(format_metrics(m));
    write_lines(out / "metrics.tsv", lines);
    std::cerr << "epoch " << m.epoch << " loss " << m.loss << " lr " << m.lr << '\n';
    if (rc.train.checkpoint_every && m.epoch % rc.train.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch-" << std::setw(4) << std::setfill('0') << m.epoch;
      save_checkpoint(out / name.str(), p, rc.network);
    }
  };
  auto res = pretrain<T>(data, rc.network, rc.train, rc.augment, std::nullopt, hooks);
  save_checkpoint(out / "checkpoint", res.params, rc.network);
  return 0;
}

template <class T>
int cmd_linear_eval(const Options& o) {
  std::optional<RunConfig> rc;
  if (!o.config.empty()) rc = load_config(o);
  EvalConfig eval = rc ? rc->eval : EvalConfig{};
  if (o.seed) eval.seed = *o.seed;
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  auto [params, spec] = load_checkpoint<T>(o.checkpoint);
  auto train = command_data<T>(o, rc, true);
  std::optional<Dataset<T>> test;
  if (!o.test_data.empty()) {
    if (o.test_labels.empty()) throw UsageError("--test-labels is required with --test-data");
    test = load_dataset<T>(o.test_data, fs::path(o.test_labels), parse_kind(o.kind));
  } else if (o.data.empty() && rc && rc->data && rc->data->test_inputs) {
    if (!rc->data->test_labels) throw UsageError("[data] test_labels is required with test_inputs");
    test = load_dataset<T>(*rc->data->test_inputs, rc->data->test_labels, rc->data->kind);
  }
  auto r = linear_eval(params, spec, train, test, eval);
  std::cout << std::setprecision(6) << "train_accuracy\t" << r.train_accuracy << "\ntest_accuracy\t"
            << r.test_accuracy << "\nn_train\t" << r.n_train << "\nn_test\t" << r.n_test << '\n';
  return 0;
}

template <class T>
int cmd_infer(const Options& o) {
  if (o.checkpoint.empty() || o.out.empty()) throw UsageError("--checkpoint and --out are required");
  auto [params, spec] = load_checkpoint<T>(o.checkpoint);
  if (o.fold_bn) std::tie(params, spec) = fold_batchnorm(params, spec);
  auto data = command_data<T>(o, std::nullopt, false);
  fs::create_directories(o.out);
  // features: N x T x F
  const std::size_t f = feature_width(spec), steps = spec.timesteps;
  std::vector<T> feats(data.size() * steps * f);
  for (std::size_t start = 0; start < data.size(); start += 256) {
    std::vector<std::size_t> idx(std::min<std::size_t>(256, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto res = forward_spiking_inference(params, input_sequence(data, idx, steps), spec);
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < f; ++j) feats[((start + b) * steps + t) * f + j] = res.features[t][b * f + j];
  }
  write_tensor(fs::path(o.out) / "features.snnt", Tensor<T>({data.size(), steps, f}, std::move(feats)));
  auto rep = spike_rate_stats(params, spec, data);
  write_tensor(fs::path(o.out) / "spike_rates.snnt", rep.as_tensor());
  std::ofstream(fs::path(o.out) / "spike_rates.tsv") << spike_table(rep);
  return 0;
}

template <class T>
int cmd_analyze(const Options& o) {
  std::ostringstream report;
  report << std::setprecision(9);
  if (o.mode == "energy" && o.checkpoint.empty()) {
    if (o.macs < 0 && o.acs < 0) throw UsageError("energy: pass --checkpoint/--data or --macs/--acs");
    double macs = std::max(o.macs, 0.0), acs = std::max(o.acs, 0.0);
    report << "macs\t" << macs << "\nacs\t" << acs << "\nenergy_mac_mj\t" << estimate_energy(macs, OpKind::mac) * 1e3
           << "\nenergy_ac_mj\t" << estimate_energy(acs, OpKind::ac) * 1e3 << '\n';
  } else {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    auto [params, spec] = load_checkpoint<T>(o.checkpoint);
    if (o.mode == "energy" || o.mode == "spikes") {
      auto data = command_data<T>(o, std::nullopt, false);
      auto rep = spike_rate_stats(params, spec, data);
      if (o.mode == "spikes") {
        report << spike_table(rep);
      } else {
        auto ops = count_active_ops(spec, rep);
        report << "macs\t" << ops.mac << "\nacs\t" << ops.ac << "\nenergy_mac_mj\t"
               << estimate_energy(ops.mac, OpKind::mac) * 1e3 << "\nenergy_ac_mj\t"
               << estimate_energy(ops.ac, OpKind::ac) * 1e3 << "\nenergy_total_mj\t" << ops.energy() * 1e3 << '\n';
      }
    } else if (o.mode == "kl") {
      if (o.checkpoint2.empty()) throw UsageError("kl: --checkpoint2 is required");
      auto [p2, s2] = load_checkpoint<T>(o.checkpoint2);
      auto data = command_data<T>(o, std::nullopt, false);
      std::vector<std::size_t> idx(data.size());
      std::iota(idx.begin(), idx.end(), 0);
      auto f1 = forward_spiking_inference(params, input_sequence(data, idx, spec.timesteps), spec).features;
      auto f2 = forward_spiking_inference(p2, input_sequence(data, idx, s2.timesteps), s2).features;
      auto kl = kl_per_timestep(f1, f2);
      report << "t\tkl\n";
      double mean = 0;
      for (std::size_t t = 0; t < kl.size(); ++t) {
        report << t + 1 << '\t' << kl[t] << '\n';
        mean += kl[t] / static_cast<double>(kl.size());
      }
      report << "mean\t" << mean << '\n';
    } else if (o.mode == "gradcos") {
      auto rc = load_config(o);
      auto data = command_data<T>(o, rc, false);
      std::vector<std::size_t> idx(std::min(data.size(), rc.train.batch_size));
      std::iota(idx.begin(), idx.end(), 0);
      auto [xa, xb] = make_views(data, idx, spec.timesteps, rc.augment, rc.train.seed, 0);
      auto fg = fused_gradients(params, xa, xb, spec, rc.train.loss);
      report << "loss\t" << fg.loss << "\ngrad_norm_a\t" << l2_norm(fg.g_a) << "\ngrad_norm_b\t" << l2_norm(fg.g_b)
             << "\ngrad_cos\t" << grad_cosine(fg.g_a, fg.g_b) << '\n';
    } else {
      throw UsageError("unknown analysis mode '" + o.mode + "'");
    }
  }
  std::cout << report.str();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / (o.mode + ".tsv")) << report.str();
  }
  return 0;
}

int cmd_selfcheck(const Options& o) {
  if (o.corrupt_surrogate) testing::surrogate_backward_scale = 0.5;
  auto start = std::chrono::steady_clock::now();
  auto results = run_selfcheck(&std::cout);
  bool ok = std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << (ok ? "ALL PASS" : "SOME CHECKS FAILED") << " in " << std::fixed << std::setprecision(2) << secs
            << " s\n";
  return ok ? 0 : 1;
}

int cmd_synth(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  fs::create_directories(o.out);
  std::uint64_t seed = o.seed.value_or(0);
  Dataset<float> d;
  if (o.generator == "clusters") d = synth_clusters<float>(o.per_class, o.classes, o.dim, o.spread, seed);
  else if (o.generator == "patterns") d = synth_patterns<float>(o.per_class, o.classes, o.size, o.noise, seed);
  else if (o.generator == "events") d = synth_events<float>(o.per_class, o.classes, o.raw_steps, o.size, seed);
  else throw UsageError("unknown generator '" + o.generator + "'");
  save_dataset(d, fs::path(o.out) / "inputs.snnt", fs::path(o.out) / "labels.snnt");
  std::cout << "wrote " << d.size() << " samples to " << o.out << '\n';
  return 0;
}

template <class T>
int dispatch(const std::string& cmd, const Options& o) {
  if (cmd == "pretrain") return cmd_pretrain<T>(o);
  if (cmd == "linear-eval") return cmd_linear_eval<T>(o);
  if (cmd == "infer") return cmd_infer<T>(o);
  if (cmd == "analyze") return cmd_analyze<T>(o);
  if (cmd == "selfcheck") return cmd_selfcheck(o);
  if (cmd == "synth") return cmd_synth(o);
  throw UsageError("no command given");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-path spiking self-supervised training toolkit"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed")->envname("SNN_SEED");
  app.add_option("--threads", o.threads, "Worker threads for data-parallel kernels")->envname("SNN_THREADS");
  app.add_option("--precision", o.precision, "Scalar type")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->envname("SNN_PRECISION");
  auto common = [&](CLI::App* sub) {
    sub->fallthrough();
    return sub;
  };

  auto* pre = common(app.add_subcommand("pretrain", "Self-supervised pretraining"));
  pre->add_option("--config", o.config, "Run configuration")->envname("SNN_CONFIG");
  pre->add_option("--out", o.out, "Output directory")->envname("SNN_OUT");

  auto* lin = common(app.add_subcommand("linear-eval", "Linear probe on frozen features"));
  lin->add_option("--config", o.config, "Run configuration")->envname("SNN_CONFIG");
  lin->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->envname("SNN_CHECKPOINT");
  lin->add_option("--data", o.data, "Input container");
  lin->add_option("--labels", o.labels, "Label container");
  lin->add_option("--test-data", o.test_data, "Held-out input container");
  lin->add_option("--test-labels", o.test_labels, "Held-out label container");
  lin->add_option("--kind", o.kind, "static or events");

  auto* inf = common(app.add_subcommand("infer", "Spiking inference: features and spike rates"));
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->envname("SNN_CHECKPOINT");
  inf->add_option("--data", o.data, "Input container")->required();
  inf->add_option("--kind", o.kind, "static or events");
  inf->add_option("--out", o.out, "Output directory")->envname("SNN_OUT");
  inf->add_flag("--fold-bn", o.fold_bn, "Fold batchnorm into the preceding layers")->envname("SNN_FOLD_BN");

  auto* ana = common(app.add_subcommand("analyze", "Energy, spike, KL and gradient reports"));
  ana->add_option("mode", o.mode, "energy | spikes | kl | gradcos")
      ->required()
      ->check(CLI::IsMember({"energy", "spikes", "kl", "gradcos"}));
  ana->add_option("--config", o.config, "Run configuration (gradcos)")->envname("SNN_CONFIG");
  ana->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->envname("SNN_CHECKPOINT");
  ana->add_option("--checkpoint2", o.checkpoint2, "Second checkpoint (kl)");
  ana->add_option("--data", o.data, "Input container");
  ana->add_option("--labels", o.labels, "Label container");
  ana->add_option("--kind", o.kind, "static or events");
  ana->add_option("--out", o.out, "Report directory")->envname("SNN_OUT");
  ana->add_option("--macs", o.macs, "Raw MAC count (energy without a checkpoint)");
  ana->add_option("--acs", o.acs, "Raw AC count (energy without a checkpoint)");

  auto* chk = common(app.add_subcommand("selfcheck", "Run the built-in verification suite"));
  chk->add_flag("--corrupt-surrogate", o.corrupt_surrogate, "Fault injection: scale the surrogate backward")
      ->group("");

  auto* syn = common(app.add_subcommand("synth", "Write a synthetic labeled dataset"));
  syn->add_option("generator", o.generator, "clusters | patterns | events")->required();
  syn->add_option("--out", o.out, "Output directory")->envname("SNN_OUT");
  syn->add_option("--per-class", o.per_class, "Samples per class");
  syn->add_option("--classes", o.classes, "Number of classes");
  syn->add_option("--dim", o.dim, "Feature dimension (clusters)");
  syn->add_option("--spread", o.spread, "Cluster standard deviation (clusters)");
  syn->add_option("--size", o.size, "Image side (patterns, events)");
  syn->add_option("--noise", o.noise, "Pixel noise (patterns)");
  syn->add_option("--raw-steps", o.raw_steps, "Frames per sample (events)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) o.seed = seed;
  kernels::set_num_threads(o.threads);
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return o.precision == "f64" ? dispatch<double>(cmd, o) : dispatch<float>(cmd, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
