// Acceptance run: one PASS/FAIL line per criterion. With no arguments every
// criterion runs; otherwise only the numbered ones. Exit 0 iff all selected
// criteria pass.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "snnssl/snnssl.hpp"

using namespace snnssl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string title;
  std::function<Outcome()> run;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

Outcome from_check(const CheckResult& r) { return {r.pass, r.name + ": " + r.detail}; }

Outcome both(const CheckResult& a, const CheckResult& b) {
  return {a.pass && b.pass, a.name + ": " + a.detail + "; " + b.name + ": " + b.detail};
}

// 1 ------------------------------------------------------------------------

Outcome gradient_fusion() {
  auto t0 = Clock::now();
  auto r = selfcheck::gradient_fusion(24, 1001);
  double secs = seconds_since(t0);
  return {r.pass && secs < 10.0, r.detail + ", " + num(secs, 3) + " s (limit 10 s)"};
}

// 2 ------------------------------------------------------------------------

Outcome finite_differences() { return both(selfcheck::finite_differences(10, 2002), selfcheck::surrogate_window()); }

// 8 ------------------------------------------------------------------------

struct ClusterRun {
  double random_acc = 0, pretrained_acc = 0;
  double early_loss = 0, late_loss = 0;
};

ClusterRun cluster_run(std::uint64_t seed) {
  auto data = synth_clusters<float>(500, 4, 32, 0.1, seed);
  NeuronConfig n;
  NetworkSpec spec;
  spec.input_shape = {32};
  spec.timesteps = 4;
  spec.backbone = {LayerSpec::dense(64), LayerSpec::batchnorm(), LayerSpec::spiking(n),
                   LayerSpec::dense(64), LayerSpec::batchnorm(), LayerSpec::spiking(n)};
  spec.head = {LayerSpec::dense(64), LayerSpec::batchnorm(), LayerSpec::clip(1.0), LayerSpec::dense(64)};

  TrainConfig tc;
  tc.lr = 0.05;
  tc.total_epochs = 50;
  tc.warmup_epochs = 5;
  tc.batch_size = 128;
  tc.seed = seed;
  tc.loss.mode = LossMode::btl;
  tc.loss.lambda = 0.005;

  auto aug = AugmentConfig::identity();
  aug.noise_std = 0.1;
  aug.jitter_prob = 0.8;
  aug.contrast = 0.2;

  EvalConfig ec;
  ec.seed = seed;
  ClusterRun out;
  out.random_acc = linear_eval(build_network<float>(spec, seed), spec, data, std::nullopt, ec).test_accuracy;
  auto res = pretrain<float>(data, spec, tc, aug);
  out.pretrained_acc = linear_eval(res.params, spec, data, std::nullopt, ec).test_accuracy;
  for (std::size_t e = 2; e < 7; ++e) out.early_loss += res.log[e].loss / 5;
  for (std::size_t e = 45; e < 50; ++e) out.late_loss += res.log[e].loss / 5;
  return out;
}

Outcome ssl_learning() {
  auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto r = cluster_run(seed);
    bool pass = r.pretrained_acc >= 0.95 && r.random_acc <= 0.75 && r.pretrained_acc - r.random_acc >= 0.20;
    ok = ok && pass;
    detail += "seed " + std::to_string(seed) + " random " + num(r.random_acc) + " pretrained " +
              num(r.pretrained_acc) + " loss(3-7) " + num(r.early_loss) + " loss(46-50) " + num(r.late_loss) + "; ";
  }
  double secs = seconds_since(t0);
  return {ok && secs < 300.0, detail + num(secs, 3) + " s (limit 300 s)"};
}

// 9 ------------------------------------------------------------------------

class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("snnssl-accept-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~ScratchDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

enum class Variant { mixed_btl, mixed_ncl, lif_btl };

double ablation_run(const Dataset<float>& train, const Dataset<float>& test, Variant v, std::uint64_t seed) {
  NeuronConfig n;
  if (v == Variant::lif_btl) n.kind = NeuronKind::lif;
  NetworkSpec spec;
  spec.input_shape = {1, 28, 28};
  spec.timesteps = 2;
  spec.backbone = {LayerSpec::conv(8, 3, 2),  LayerSpec::batchnorm(), LayerSpec::spiking(n),
                   LayerSpec::conv(16, 3, 2), LayerSpec::batchnorm(), LayerSpec::spiking(n),
                   LayerSpec::conv(16, 3, 2), LayerSpec::batchnorm(), LayerSpec::spiking(n),
                   LayerSpec::flatten()};
  spec.head = {LayerSpec::dense(128), LayerSpec::batchnorm(), LayerSpec::clip(1.0), LayerSpec::dense(128)};

  TrainConfig tc;
  tc.lr = 0.05;
  tc.total_epochs = 5;
  tc.warmup_epochs = 1;
  tc.batch_size = 128;
  tc.seed = seed;
  tc.loss.mode = v == Variant::mixed_ncl ? LossMode::ncl : LossMode::btl;

  EvalConfig ec;
  ec.seed = seed;
  auto res = pretrain<float>(train, spec, tc, AugmentConfig{});
  return linear_eval(res.params, spec, train, std::optional<Dataset<float>>(test), ec).test_accuracy;
}

Outcome ablation() {
  auto t0 = Clock::now();
  ScratchDir dir;
  {
    auto all = synth_patterns<float>(600, 10, 28, 1.0, 100);
    std::vector<std::size_t> tr(5000), te(1000);
    std::iota(tr.begin(), tr.end(), 0);
    std::iota(te.begin(), te.end(), 5000);
    save_dataset(detail::subset(all, tr), dir.path() / "train_x.snnt", dir.path() / "train_y.snnt");
    save_dataset(detail::subset(all, te), dir.path() / "test_x.snnt", dir.path() / "test_y.snnt");
  }
  auto train = load_dataset<float>(dir.path() / "train_x.snnt", dir.path() / "train_y.snnt", DataKind::static_input);
  auto test = load_dataset<float>(dir.path() / "test_x.snnt", dir.path() / "test_y.snnt", DataKind::static_input);

  const std::pair<Variant, const char*> variants[] = {
      {Variant::mixed_btl, "MixedLIF+BTL"}, {Variant::mixed_ncl, "MixedLIF+NCL"}, {Variant::lif_btl, "LIF+BTL"}};
  std::map<Variant, double> mean;
  std::string detail;
  for (const auto& [v, name] : variants) {
    std::string accs;
    for (std::uint64_t seed : {0, 1, 2}) {
      double a = ablation_run(train, test, v, seed);
      mean[v] += a / 3;
      accs += (accs.empty() ? "" : "/") + num(a, 3);
    }
    detail += std::string(name) + " " + num(mean[v]) + " (" + accs + "); ";
  }
  double secs = seconds_since(t0);
  bool ok = mean[Variant::mixed_btl] >= mean[Variant::mixed_ncl] && mean[Variant::mixed_btl] >= mean[Variant::lif_btl];
  return {ok && secs < 3600.0, detail + num(secs, 4) + " s (limit 3600 s)"};
}

// 12 -----------------------------------------------------------------------

Outcome cli_selfcheck() {
  std::string cmd = std::string("\"") + SNNSSL_CLI + "\" selfcheck > /dev/null";
  auto t0 = Clock::now();
  int status = std::system(cmd.c_str());
  double secs = seconds_since(t0);
  int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code == 0 && secs < 60.0, "exit " + std::to_string(code) + ", " + num(secs, 3) + " s (limit 60 s)"};
}

std::map<int, Criterion> criteria() {
  return {
      {1, {"gradient-fusion identity", gradient_fusion}},
      {2, {"finite differences and surrogate window", finite_differences}},
      {3, {"pair-count law", [] { return from_check(selfcheck::pair_counts()); }}},
      {4, {"loss invariances", [] { return from_check(selfcheck::loss_invariances(100, 4004)); }}},
      {5, {"membrane closed form", [] { return from_check(selfcheck::closed_form(100, 5005)); }}},
      {6, {"batchnorm folding", [] { return from_check(selfcheck::bn_folding(20, 6006)); }}},
      {7, {"energy arithmetic", [] { return from_check(selfcheck::energy()); }}},
      {8, {"desk-scale SSL learning", ssl_learning}},
      {9, {"directional ablation", ablation}},
      {10, {"KL tooling", [] { return from_check(selfcheck::kl()); }}},
      {11, {"spike-rate bounds", [] { return from_check(selfcheck::spike_rates(1011)); }}},
      {12, {"selfcheck end to end", cli_selfcheck}},
  };
}

}  // namespace

int main(int argc, char** argv) {
  auto all = criteria();
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    int id = std::atoi(argv[i]);
    if (!all.count(id)) {
      std::cerr << "unknown criterion '" << argv[i] << "'\n";
      return 2;
    }
    selected.push_back(id);
  }
  if (selected.empty())
    for (const auto& [id, c] : all) selected.push_back(id);

  bool ok = true;
  for (int id : selected) {
    const auto& c = all.at(id);
    auto t0 = Clock::now();
    Outcome r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    ok = ok && r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << c.title << "): " << r.detail << " ["
              << num(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return ok ? 0 : 1;
}
