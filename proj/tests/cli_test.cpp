#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string text;  // stdout and stderr interleaved
};

const char* cli_binary() {
  const char* bin = std::getenv("FEWSHOT_CLI");
  return bin != nullptr ? bin : "./fewshot";
}

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(cli_binary()) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.text.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fw_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string out((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return out;
}

std::string drop_timing_lines(const std::string& text) {
  std::string out;
  std::string line;
  for (char ch : text + "\n") {
    if (ch != '\n') {
      line.push_back(ch);
      continue;
    }
    if (line.rfind("time_", 0) != 0) out += line + "\n";
    line.clear();
  }
  return out;
}

int count_prefixed(const std::string& text, const std::string& prefix) {
  int count = 0;
  std::size_t pos = 0;
  while (true) {
    const std::size_t at = text.find(prefix, pos);
    if (at == std::string::npos) break;
    if (at == 0 || text[at - 1] == '\n') ++count;
    pos = at + prefix.size();
  }
  return count;
}

}  // namespace

TEST_CASE("gen writes a deterministic bank of the advertised size") {
  const fs::path dir = fresh_dir("gen");
  const std::string a = (dir / "a.fbk").string();
  const std::string b = (dir / "b.fbk").string();

  const CliResult r = run_cli("gen --seed 3 --classes 6 --dim 5 --per-class 7 --out " + a);
  CHECK(r.code == 0);
  CHECK(r.text.find("samples=42") != std::string::npos);
  CHECK(fs::file_size(a) == 16 + 42 * (4 + 5 * 4));

  const CliResult r2 = run_cli("gen --seed 3 --classes 6 --dim 5 --per-class 7 --out " + b);
  CHECK(r2.code == 0);
  CHECK(slurp(a) == slurp(b));

  const CliResult r3 = run_cli("gen --seed 4 --classes 6 --dim 5 --per-class 7 --out " + b);
  CHECK(r3.code == 0);
  CHECK(slurp(a) != slurp(b));

  const std::string csv = (dir / "bank.csv").string();
  const CliResult r4 = run_cli("gen --seed 3 --classes 3 --dim 2 --per-class 2 --out " + csv);
  CHECK(r4.code == 0);
  CHECK(slurp(csv).rfind("label,f0,f1\n", 0) == 0);
}

TEST_CASE("gen rejects unusable shapes") {
  const fs::path dir = fresh_dir("gen_bad");
  CHECK(run_cli("gen --per-class 0 --out " + (dir / "x.fbk").string()).code == 2);
  CHECK(run_cli("gen --classes 1 --out " + (dir / "x.fbk").string()).code == 2);
  CHECK(run_cli("gen --std -1 --out " + (dir / "x.fbk").string()).code == 2);
}

TEST_CASE("eval of a single episode reports a zero-width interval") {
  const fs::path dir = fresh_dir("eval1");
  const CliResult r = run_cli(
      "eval --episodes 1 --way 3 --shot 1 --query 4 --seed 5 --set synth_dim=6 "
      "--out-dir " + dir.string());
  CHECK(r.code == 0);
  CHECK(r.text.find("± 0.00") != std::string::npos);
  const std::string report = slurp(dir / "report.txt");
  CHECK(report.find("command eval\n") != std::string::npos);
  CHECK(report.find("episodes 1\n") != std::string::npos);
  CHECK(report.find("ci95 0.000000\n") != std::string::npos);
  CHECK(report.find("[config]") != std::string::npos);
  CHECK(report.find("synth_dim = 6") != std::string::npos);
  CHECK(report.find("out_dir = " + dir.string()) != std::string::npos);
}

TEST_CASE("repeated eval runs are identical up to timing lines") {
  const fs::path dir = fresh_dir("eval_det");
  const std::string cmd =
      "eval --episodes 20 --way 4 --shot 2 --query 5 --seed 11 "
      "--set synth_dim=8 --set psm_iters=2 --out-dir " + dir.string();

  CHECK(run_cli(cmd).code == 0);
  const std::string report1 = slurp(dir / "report.txt");
  const std::string csv1 = slurp(dir / "episodes.csv");
  CHECK(run_cli(cmd).code == 0);
  const std::string report2 = slurp(dir / "report.txt");
  const std::string csv2 = slurp(dir / "episodes.csv");

  CHECK(drop_timing_lines(report1) == drop_timing_lines(report2));
  CHECK(csv1 == csv2);
  CHECK(count_prefixed(csv1, "# ") > 30);  // full config rides along
}

TEST_CASE("config mistakes exit with the configuration code") {
  const fs::path dir = fresh_dir("cfg_err");
  const fs::path cfg = dir / "bad.cfg";
  {
    std::ofstream out(cfg);
    out << "gama = 1.0\n";
  }
  const CliResult r = run_cli("eval --config " + cfg.string());
  CHECK(r.code == 2);
  CHECK(r.text.find("unknown config key: gama") != std::string::npos);

  CHECK(run_cli("eval --set way").code == 2);
  CHECK(run_cli("eval --set way=1").code == 2);
  CHECK(run_cli("eval --no-such-flag").code == 2);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("eval --config " + (dir / "missing.cfg").string()).code == 1);
}

TEST_CASE("bench writes one row per learner") {
  const fs::path dir = fresh_dir("bench");
  const CliResult r = run_cli(
      "bench --episodes 120 --way 3 --shot 1 --query 4 --dim 6 --seed 7 "
      "--out-dir " + dir.string());
  CHECK(r.code == 0);
  CHECK(r.text.find("learner") != std::string::npos);
  const std::string csv = slurp(dir / "bench.csv");
  CHECK(csv.rfind("learner,mean_acc,ci95,total_s,per_episode_us\n", 0) == 0);
  CHECK(count_prefixed(csv, "nn,") == 1);
  CHECK(count_prefixed(csv, "rr,") == 1);
  CHECK(count_prefixed(csv, "lssvm,") == 1);

  const CliResult one = run_cli(
      "bench --learners rr --episodes 100 --way 2 --shot 1 --query 2 --dim 4 "
      "--out-dir " + dir.string());
  CHECK(one.code == 0);
  const std::string csv2 = slurp(dir / "bench.csv");
  CHECK(count_prefixed(csv2, "rr,") == 1);
  CHECK(count_prefixed(csv2, "nn,") == 0);

  CHECK(run_cli("bench --learners bogus --out-dir " + dir.string()).code == 2);
  CHECK(run_cli("bench --episodes 50 --out-dir " + dir.string()).code == 1);
}

TEST_CASE("train emits a checkpoint that eval and viz can consume") {
  const fs::path dir = fresh_dir("train");
  const std::string train_cmd =
      "train --seed 9 --out-dir " + dir.string() +
      " --set way=3 --set train_shot=2 --set shot=1 --set query_train=3"
      " --set query_test=4 --set epochs=1 --set batches_per_epoch=2"
      " --set episodes_per_batch=1 --set val_episodes=3 --set val_shot=1"
      " --set synth_dim=5 --set backbone=5 --set iam=on"
      " --set iam_dropout=0.1 --set gamma=1";
  const CliResult t = run_cli(train_cmd);
  CHECK(t.code == 0);
  CHECK(t.text.find("best_val_acc") != std::string::npos);
  CHECK(fs::exists(dir / "checkpoint.fsck"));
  const std::string log = slurp(dir / "train_log.txt");
  CHECK(count_prefixed(log, "1 1 ") == 1);
  CHECK(count_prefixed(log, "1 2 ") == 1);
  CHECK(count_prefixed(log, "# val epoch 1 ") == 1);

  // checkpoint config seeds the defaults: synth_dim=5 and iam=on carry over,
  // out_dir does not
  const fs::path dir2 = fresh_dir("train_eval");
  const CliResult e = run_cli(
      "eval --checkpoint " + (dir / "checkpoint.fsck").string() +
      " --episodes 2 --out-dir " + dir2.string());
  CHECK(e.code == 0);
  const std::string report = slurp(dir2 / "report.txt");
  CHECK(report.find("synth_dim = 5") != std::string::npos);
  CHECK(report.find("iam on") != std::string::npos);
  CHECK(report.find("out_dir = " + dir2.string()) != std::string::npos);

  const fs::path dir3 = fresh_dir("train_viz");
  const CliResult v = run_cli(
      "viz --checkpoint " + (dir / "checkpoint.fsck").string() +
      " --way 3 --shot 2 --out-dir " + dir3.string());
  CHECK(v.code == 0);
  CHECK(v.text.find("rows=24") != std::string::npos);  // 6 + 6 + 3*4
  const std::string viz = slurp(dir3 / "viz.csv");
  CHECK(viz.rfind("role,class,pc1,pc2\n", 0) == 0);
  CHECK(count_prefixed(viz, "support,") == 6);
  CHECK(count_prefixed(viz, "adjusted,") == 6);
  CHECK(count_prefixed(viz, "query,") == 12);
  CHECK(viz.find("# acc_before ") != std::string::npos);
  CHECK(viz.find("# acc_after ") != std::string::npos);

  CHECK(run_cli(train_cmd + " --resume").code == 2);
}

TEST_CASE("checkpoint-dependent modes refuse to run without one") {
  const fs::path dir = fresh_dir("need_ckpt");
  CHECK(run_cli("viz --out-dir " + dir.string()).code == 2);
  CHECK(run_cli("eval --set iam=on --episodes 1 --out-dir " + dir.string())
            .code == 2);
  CHECK(run_cli("eval --set backbone=8 --episodes 1 --out-dir " + dir.string())
            .code == 2);
}

TEST_CASE("bank-backed evaluation works end to end") {
  const fs::path dir = fresh_dir("bank_eval");
  const std::string bank = (dir / "bank.fbk").string();
  CHECK(run_cli("gen --seed 2 --classes 20 --dim 6 --per-class 8 --out " + bank)
            .code == 0);
  const CliResult r = run_cli(
      "eval --bank " + bank +
      " --episodes 3 --way 3 --shot 1 --query 2 --out-dir " + dir.string());
  CHECK(r.code == 0);
  CHECK(run_cli("eval --bank " + (dir / "nope.fbk").string() +
                " --episodes 1 --out-dir " + dir.string())
            .code == 1);
}

TEST_CASE("corrupt feature values surface as a numeric failure") {
  const fs::path dir = fresh_dir("nan_bank");
  const fs::path bank = dir / "nan.fbk";
  {
    std::ofstream out(bank, std::ios::binary);
    out.write("FBK1", 4);
    const auto u32 = [&out](std::uint32_t v) {
      char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                   char((v >> 24) & 0xff)};
      out.write(b, 4);
    };
    u32(1);  // version
    u32(1);  // dim
    u32(1);  // one sample
    u32(0);  // class id
    const char nan_f32[4] = {'\x00', '\x00', '\xc0', '\x7f'};
    out.write(nan_f32, 4);
  }
  const CliResult r = run_cli("eval --bank " + bank.string() +
                              " --episodes 1 --out-dir " + dir.string());
  CHECK(r.code == 3);
}
