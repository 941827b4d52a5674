#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "essa/checkpoint.hpp"
#include "essa/metrics_log.hpp"
#include "essa/params.hpp"

namespace fs = std::filesystem;

namespace {

const char* kCli = ESSA_CLI_PATH;

struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() /
          ("essa_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& body) const {
    const fs::path p = dir / name;
    std::ofstream f(p, std::ios::trunc);
    f << body;
    return p;
  }
};

int run(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
}

const char* kSynthSpec = R"(
[synth]
name = t
classes = 2
image_size = 16
train = 32
val = 8
test = 16
shift_strength = 1.0
seed = 3
)";

const char* kRunConfig = R"(
[model]
preset = tiny
seed = 5

[adapter.essa]
kind = bitfit

[essa]
epochs = 4
batch_size = 8
warmup_epochs = 0
dataset = t.train.target.esds

[sa]
epochs = 2
batch_size = 8
warmup_epochs = 0
dataset = t.train.source.esds

[ttt]
epochs = 1
batch_size = 8
warmup_epochs = 0
dataset = t.test.target.esds

[data]
root = data

[eval]
k = 5
tau = 0.07
metric = accuracy
gallery = t.train.target.esds
query = t.test.target.esds
)";

}  // namespace

TEST(Cli, SynthIsByteIdenticalAcrossReruns) {
  Workspace ws;
  const fs::path spec = ws.write("synth.ini", kSynthSpec);
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);
  auto bytes1 = read_bytes(ws.dir / "data" / "t.train.target.esds");
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);
  auto bytes2 = read_bytes(ws.dir / "data" / "t.train.target.esds");
  EXPECT_EQ(bytes1, bytes2);
  EXPECT_FALSE(bytes1.empty());
}

TEST(Cli, FullChainProducesLogsAndCheckpoints) {
  Workspace ws;
  const fs::path spec = ws.write("synth.ini", kSynthSpec);
  const fs::path config = ws.write("run.ini", kRunConfig);
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);

  const fs::path essa_ckpt = ws.dir / "essa.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --out " +
                essa_ckpt.string()),
            0);
  // One metric record per epoch.
  auto records = essa::read_metric_log(essa_ckpt.string() + ".metrics.jsonl");
  EXPECT_EQ(records.size(), 4u);
  for (const auto& r : records) {
    EXPECT_EQ(r.stage, "essa");
    EXPECT_EQ(r.adapter, "bitfit");
    EXPECT_GT(r.steps_per_sec, 0.0);
  }

  const fs::path sa_ckpt = ws.dir / "sa.ckpt";
  ASSERT_EQ(run("finetune --config " + config.string() + " --resume " +
                essa_ckpt.string() + " --out " + sa_ckpt.string()),
            0);
  const fs::path ttt_ckpt = ws.dir / "ttt.ckpt";
  ASSERT_EQ(run("ttt --config " + config.string() + " --resume " +
                sa_ckpt.string() + " --out " + ttt_ckpt.string()),
            0);

  // eval writes a metric record with the protocol value.
  const fs::path eval_log = ws.dir / "eval.jsonl";
  ASSERT_EQ(run("eval --ckpt " + ttt_ckpt.string() + " --config " +
                config.string() + " --protocol knn --log " +
                eval_log.string()),
            0);
  ASSERT_EQ(run("eval --ckpt " + ttt_ckpt.string() + " --config " +
                config.string() + " --protocol head --log " +
                eval_log.string()),
            0);
  auto eval_records = essa::read_metric_log(eval_log);
  ASSERT_EQ(eval_records.size(), 2u);
  EXPECT_EQ(eval_records[0].stage, "eval-knn");
  EXPECT_EQ(eval_records[0].metric, "accuracy");
  EXPECT_EQ(eval_records[1].stage, "eval-head");

  // report aggregates all logs into a CSV with a header line.
  const fs::path report = ws.dir / "report.csv";
  ASSERT_EQ(run("report --logs " + ws.dir.string() + " --out " +
                report.string()),
            0);
  std::ifstream csv(report);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header,
            "adapter,stage,final_metric,trainable_fraction,"
            "optimizer_state_bytes,mean_steps_per_sec");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT_GE(rows, 3u);  // essa, sa, ttt (+ eval rows)
}

TEST(Cli, ResumeReproducesUninterruptedRunBitExactly) {
  Workspace ws;
  const fs::path spec = ws.write("synth.ini", kSynthSpec);
  const fs::path config = ws.write("run.ini", kRunConfig);
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);

  const fs::path straight = ws.dir / "straight.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --out " +
                straight.string()),
            0);

  const fs::path partial = ws.dir / "partial.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --stop-after 2 " +
                "--out " + partial.string()),
            0);
  const fs::path resumed = ws.dir / "resumed.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --resume " +
                partial.string() + " --out " + resumed.string()),
            0);

  EXPECT_EQ(read_bytes(straight), read_bytes(resumed));
}

TEST(Cli, IdempotentStageReruns) {
  Workspace ws;
  const fs::path spec = ws.write("synth.ini", kSynthSpec);
  const fs::path config = ws.write("run.ini", kRunConfig);
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);
  const fs::path a = ws.dir / "a.ckpt";
  const fs::path b = ws.dir / "b.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --out " + a.string()),
            0);
  ASSERT_EQ(run("adapt --config " + config.string() + " --out " + b.string()),
            0);
  EXPECT_EQ(read_bytes(a), read_bytes(b));
}

TEST(Cli, ExitCodes) {
  Workspace ws;
  const fs::path spec = ws.write("synth.ini", kSynthSpec);
  const fs::path config = ws.write("run.ini", kRunConfig);

  // Unknown flag value -> usage/config error (2).
  EXPECT_EQ(run("eval --ckpt x --config y --protocol bogus"), 2);

  // Config error: unknown key (2).
  const fs::path bad = ws.write("bad.ini", "[model]\nwhat = 1\n");
  EXPECT_EQ(run("adapt --config " + bad.string() + " --out " +
                (ws.dir / "x.ckpt").string()),
            2);

  // Data error: missing dataset file (3).
  EXPECT_EQ(run("adapt --config " + config.string() + " --out " +
                (ws.dir / "x.ckpt").string()),
            3);

  // Contract violation: ttt without a trained head (4).
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);
  const fs::path essa_ckpt = ws.dir / "essa.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --out " +
                essa_ckpt.string()),
            0);
  EXPECT_EQ(run("ttt --config " + config.string() + " --resume " +
                essa_ckpt.string() + " --out " + (ws.dir / "t.ckpt").string()),
            4);

  // Mismatched preset on resume (2).
  const std::string small_config(kRunConfig);
  const fs::path small = ws.write(
      "small.ini",
      std::string(kRunConfig).replace(small_config.find("preset = tiny"),
                                      13, "preset = small"));
  EXPECT_EQ(run("finetune --config " + small.string() + " --resume " +
                essa_ckpt.string() + " --out " +
                (ws.dir / "y.ckpt").string()),
            2);
}

TEST(Cli, EvalIsDeterministic) {
  Workspace ws;
  const fs::path spec = ws.write("synth.ini", kSynthSpec);
  const fs::path config = ws.write("run.ini", kRunConfig);
  ASSERT_EQ(run("synth --spec " + spec.string() + " --out " +
                (ws.dir / "data").string()),
            0);
  const fs::path ckpt = ws.dir / "m.ckpt";
  ASSERT_EQ(run("adapt --config " + config.string() + " --out " +
                ckpt.string()),
            0);
  const fs::path log = ws.dir / "eval.jsonl";
  ASSERT_EQ(run("eval --ckpt " + ckpt.string() + " --config " +
                config.string() + " --log " + log.string()),
            0);
  ASSERT_EQ(run("eval --ckpt " + ckpt.string() + " --config " +
                config.string() + " --log " + log.string()),
            0);
  auto records = essa::read_metric_log(log);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].value, records[1].value);
}
