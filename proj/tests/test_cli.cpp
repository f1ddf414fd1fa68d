#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("snnssl-cli-" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args, std::string* out = nullptr) {
    fs::path log = dir_ / "stdout.txt";
    std::string cmd = "\""s + SNNSSL_CLI + "\" " + args + " > \"" + log.string() + "\" 2> \"" +
                      (dir_ / "stderr.txt").string() + "\"";
    int status = std::system(cmd.c_str());
    if (out) *out = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const fs::path& p) const {
    std::ifstream f(p);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
  }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  fs::path tiny_config(std::size_t epochs = 1) {
    EXPECT_EQ(run("synth clusters --out \"" + (dir_ / "data").string() + "\" --per-class 8 --classes 2 --dim 6"), 0);
    return write("run.ini", "[network]\ninput = 6\ntimesteps = 2\nbackbone = dense:8, bn, neuron\nhead = dense:4\n"
                            "[train]\nepochs = " + std::to_string(epochs) +
                                "\nwarmup_epochs = 0\nbatch_size = 8\nlr = 0.05\n"
                                "[augment]\nnoise_std = 0.05\n"
                                "[data]\ninputs = data/inputs.snnt\nlabels = data/labels.snnt\n"
                                "[eval]\nepochs = 5\n");
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_F(CliTest, TinyPretrainWritesOneMetricsLine) {
  auto cfg = tiny_config();
  ASSERT_EQ(run("pretrain --config \"" + cfg.string() + "\" --out \"" + (dir_ / "out").string() + "\""), 0)
      << slurp(dir_ / "stderr.txt");
  EXPECT_EQ(count_lines(slurp(dir_ / "out" / "metrics.tsv")), 1u);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "checkpoint" / "network.ini"));
}

TEST_F(CliTest, SeedMakesRunsIdentical) {
  auto cfg = tiny_config(2);
  for (const char* name : {"a", "b", "c"}) {
    std::string seed = name[0] == 'c' ? "8" : "7";
    ASSERT_EQ(run("pretrain --config \"" + cfg.string() + "\" --seed " + seed + " --out \"" + (dir_ / name).string() +
                  "\""),
              0);
  }
  auto a = slurp(dir_ / "a" / "metrics.tsv");
  EXPECT_EQ(count_lines(a), 2u);
  EXPECT_EQ(a, slurp(dir_ / "b" / "metrics.tsv"));
  EXPECT_NE(a, slurp(dir_ / "c" / "metrics.tsv"));
}

TEST_F(CliTest, MissingNetworkSectionIsConfigError) {
  auto cfg = write("bad.ini", "[train]\nepochs = 1\n");
  EXPECT_EQ(run("pretrain --config \"" + cfg.string() + "\" --out \"" + (dir_ / "out").string() + "\""), 2);
  auto err = slurp(dir_ / "stderr.txt");
  EXPECT_NE(err.find("bad.ini:"), std::string::npos) << err;
  EXPECT_NE(err.find("[network]"), std::string::npos) << err;
}

TEST_F(CliTest, MissingDataFileIsConfigError) {
  auto cfg = write("nodata.ini", "[network]\ninput = 6\nbackbone = dense:4, neuron\n[data]\ninputs = nowhere.snnt\n");
  EXPECT_EQ(run("pretrain --config \"" + cfg.string() + "\" --out \"" + (dir_ / "out").string() + "\""), 2);
}

TEST_F(CliTest, UnknownFlagIsUsageError) { EXPECT_EQ(run("pretrain --bogus"), 2); }

TEST_F(CliTest, SelfcheckPassesAndDetectsCorruptSurrogate) {
  std::string out;
  EXPECT_EQ(run("selfcheck", &out), 0);
  EXPECT_EQ(out.find("FAIL "), std::string::npos) << out;
  EXPECT_EQ(run("selfcheck --corrupt-surrogate", &out), 1);
  EXPECT_NE(out.find("FAIL "), std::string::npos) << out;
}

TEST_F(CliTest, EvalInferAnalyzeOnCheckpoint) {
  auto cfg = tiny_config();
  auto out = dir_ / "out";
  ASSERT_EQ(run("pretrain --config \"" + cfg.string() + "\" --out \"" + out.string() + "\""), 0);
  auto ck = (out / "checkpoint").string(), data = (dir_ / "data" / "inputs.snnt").string();
  std::string text;
  ASSERT_EQ(run("linear-eval --config \"" + cfg.string() + "\" --checkpoint \"" + ck + "\"", &text), 0);
  EXPECT_NE(text.find("test_accuracy\t"), std::string::npos);
  auto before = slurp(data);
  ASSERT_EQ(run("infer --checkpoint \"" + ck + "\" --data \"" + data + "\" --fold-bn --out \"" + (dir_ / "inf").string() +
                "\""),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "inf" / "features.snnt"));
  EXPECT_TRUE(fs::exists(dir_ / "inf" / "spike_rates.tsv"));
  EXPECT_EQ(slurp(data), before);
  ASSERT_EQ(run("analyze energy --macs 3600e6 --acs 828e6", &text), 0);
  EXPECT_NE(text.find("energy_mac_mj\t11.16\n"), std::string::npos) << text;
  EXPECT_NE(text.find("energy_ac_mj\t0.0828\n"), std::string::npos) << text;
  ASSERT_EQ(run("analyze kl --checkpoint \"" + ck + "\" --checkpoint2 \"" + ck + "\" --data \"" + data + "\"", &text), 0);
  EXPECT_NE(text.find("mean\t0\n"), std::string::npos) << text;
  ASSERT_EQ(run("analyze gradcos --config \"" + cfg.string() + "\" --checkpoint \"" + ck + "\"", &text), 0);
  EXPECT_NE(text.find("grad_cos\t"), std::string::npos);
}
