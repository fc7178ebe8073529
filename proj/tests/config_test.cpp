#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rapid/checkpoint.hpp"
#include "rapid/config.hpp"
#include "rapid/errors.hpp"

using namespace rapid;
namespace fs = std::filesystem;

namespace {

RunSpec resolve_text(const std::string& text, std::vector<std::string> overrides = {}) {
  ConfigSource src = ConfigSource::parse(text, "run.cfg");
  for (const auto& o : overrides) src.set_override(o);
  return resolve(src);
}

TEST(Config, Defaults) {
  RunSpec s = resolve(ConfigSource{});
  EXPECT_EQ(s.task_name, "LastTokenMatch");
  EXPECT_EQ(s.train.n_inference, 64);
  EXPECT_EQ(s.train.n_group, 4);
  EXPECT_EQ(s.train.n_step, 16);
  EXPECT_EQ(s.train.clip.eta, 2.0);
  EXPECT_EQ(s.train.clip.mode, ClipMode::kCap);
  EXPECT_EQ(s.train.learning_rate, 0.05);
  EXPECT_EQ(s.train.optimizer, Optimizer::kSgd);
  EXPECT_EQ(s.train.beta_kl, 0.04);
  EXPECT_FALSE(s.train.leave_one_out);
  EXPECT_TRUE(s.train.clip_leading);
}

TEST(Config, SectionsAndComments) {
  RunSpec s = resolve_text(
      "# a run\n[task]\nname = Parity\nbits = 2  # four prompts\n\n[train]\nN_step = 8\nT = 3\n"
      "eta = inf\nclip_mode = symmetric\nlr = 0.25\n[metrics]\na_inf = 4\n");
  EXPECT_EQ(s.task_name, "Parity");
  EXPECT_EQ(s.task.bits, 2);
  EXPECT_EQ(s.train.n_step, 8);
  EXPECT_EQ(s.train.outer_steps, 3);
  EXPECT_TRUE(std::isinf(s.train.clip.eta));
  EXPECT_EQ(s.train.clip.mode, ClipMode::kSymmetric);
  EXPECT_EQ(s.train.learning_rate, 0.25);
  EXPECT_EQ(s.train.cost.a_inf, 4.0);
}

TEST(Config, HOverrideScalesInference) {
  RunSpec s = resolve_text("[train]\nN_step = 16\nN_inference = 32\n", {"H=4"});
  EXPECT_EQ(s.train.n_inference, 64);
  EXPECT_EQ(s.train.batch_size_ratio(), 4);
}

TEST(Config, StepsSetOuterLoop) {
  RunSpec s = resolve_text("", {"H=4", "steps=500"});
  EXPECT_EQ(s.train.outer_steps, 125);
  EXPECT_THROW(resolve_text("", {"H=8", "steps=500"}), ConfigError);
  RunSpec on = resolve_text("", {"algorithm=grpg_onpolicy", "H=4", "steps=500"});
  EXPECT_EQ(on.train.n_inference, on.train.n_step);
  EXPECT_EQ(on.train.outer_steps, 500);
}

TEST(Config, OverridesWin) {
  RunSpec s = resolve_text("[train]\nlr = 0.1\nseed = 3\n", {"train.lr=0.2", "seed=9"});
  EXPECT_EQ(s.train.learning_rate, 0.2);
  EXPECT_EQ(s.train.seed, 9u);
}

TEST(Config, ErrorsNameTheOrigin) {
  try {
    resolve_text("[train]\nN_group = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("N_group"), std::string::npos) << msg;
    EXPECT_NE(msg.find("run.cfg:2"), std::string::npos) << msg;
  }
  try {
    resolve_text("[train]\nlr = fast\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(resolve_text("[train]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(resolve_text("[train\n"), ConfigError);
  EXPECT_THROW(resolve_text("just words\n"), ConfigError);
  EXPECT_THROW(resolve_text("[task]\nname = Unknown\n"), ConfigError);
  EXPECT_THROW(resolve_text("", {"clip_mode=sideways"}), ConfigError);
  EXPECT_THROW(resolve_text("", {"novalue"}), ConfigError);
  EXPECT_THROW(resolve_text("", {"H=0"}), ConfigError);
}

TEST(Config, CanonicalTextRoundTrips) {
  RunSpec s = resolve_text("[task]\nname = SumMod\nvocab = 5\n[train]\neta = inf\n",
                           {"H=2", "lr=0.3", "optimizer=momentum", "out=/tmp/x"});
  const std::string text = to_config_text(s);
  RunSpec back = resolve(ConfigSource::parse(text, "resolved.cfg"));
  EXPECT_EQ(to_config_text(back), text);
  EXPECT_EQ(back.train.n_inference, s.train.n_inference);
  EXPECT_EQ(back.train.optimizer, Optimizer::kMomentum);
  EXPECT_EQ(back.out_dir, "/tmp/x");
}

TEST(Checkpoint, RoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "rapid_ckpt_test";
  fs::create_directories(dir);
  Checkpoint c;
  c.vocab_size = 8;
  c.task_name = "LastTokenMatch";
  c.step = 123456789012ULL;
  c.theta = Eigen::VectorXd::LinSpaced(40, -1.0, 1.0);
  c.theta[3] = 1.0 / 3.0;
  save_checkpoint(dir / "a.bin", c);
  Checkpoint back = load_checkpoint(dir / "a.bin");
  EXPECT_EQ(back.vocab_size, 8u);
  EXPECT_EQ(back.task_name, c.task_name);
  EXPECT_EQ(back.step, c.step);
  EXPECT_EQ(back.theta, c.theta);
  EXPECT_EQ(fs::file_size(dir / "a.bin"), 32u + c.task_name.size() + 8u * 40u);
  EXPECT_TRUE(fs::exists(dir / "a.bin.txt"));

  std::ifstream is(dir / "a.bin", std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "RAPIDCK1");
  unsigned char dim[4];
  is.seekg(12);
  is.read(reinterpret_cast<char*>(dim), 4);
  EXPECT_EQ(dim[0] | dim[1] << 8 | dim[2] << 16 | dim[3] << 24, 40);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const fs::path dir = fs::temp_directory_path() / "rapid_ckpt_test";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "bad.bin", std::ios::binary);
    os << "NOTACKPTxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), Error);
  Checkpoint c;
  c.task_name = "t";
  c.theta = Eigen::VectorXd::Ones(4);
  save_checkpoint(dir / "trunc.bin", c);
  fs::resize_file(dir / "trunc.bin", fs::file_size(dir / "trunc.bin") - 3);
  EXPECT_THROW(load_checkpoint(dir / "trunc.bin"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), Error);
}

}  // namespace
