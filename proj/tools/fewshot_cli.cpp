#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/config.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/meta.hpp"

namespace fw = fewshot;

namespace {

int classify_exit(const fw::Error& e) {
  if (dynamic_cast<const fw::ConfigError*>(&e) != nullptr ||
      dynamic_cast<const fw::BadFlag*>(&e) != nullptr)
    return 2;
  if (dynamic_cast<const fw::NotPositiveDefinite*>(&e) != nullptr ||
      dynamic_cast<const fw::NonFiniteLoss*>(&e) != nullptr ||
      dynamic_cast<const fw::DegenerateInput*>(&e) != nullptr ||
      dynamic_cast<const fw::DegenerateSubproblem*>(&e) != nullptr ||
      dynamic_cast<const fw::NonFiniteFeature*>(&e) != nullptr)
    return 3;
  return 1;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw fw::IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw fw::IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fw::IoError("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Drops execution-environment keys from a serialized config so a checkpoint
/// restored as the base layer never redirects artifacts of the current run.
std::string strip_run_keys(const std::string& text) {
  std::string out;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const std::size_t eq = line.find('=');
    std::string key = eq == std::string::npos ? line : line.substr(0, eq);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
      key.pop_back();
    if (key == "out_dir" || key == "threads") continue;
    out += line + "\n";
  }
  return out;
}

std::string config_footer(const fw::RunConfig& cfg, const char* prefix) {
  std::string out;
  std::istringstream lines(fw::serialize_config(cfg));
  std::string line;
  while (std::getline(lines, line)) out += prefix + line + "\n";
  return out;
}

std::string out_path(const fw::RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

/// Owns the loaded bank (if any) so EpisodeSource pointers stay alive.
struct SourceBundle {
  fw::SynthSpec synth;
  fw::FeatureBank bank;
  fw::SplitSpec splits;
  bool has_bank = false;

  fw::EpisodeSource train_src() const {
    if (has_bank) return {nullptr, &bank, splits.train_classes};
    return {&synth, nullptr, {}};
  }
  fw::EpisodeSource val_src() const {
    if (has_bank) return {nullptr, &bank, splits.val_classes};
    return {&synth, nullptr, {}};
  }
  fw::EpisodeSource test_src() const {
    if (has_bank) return {nullptr, &bank, splits.test_classes};
    return {&synth, nullptr, {}};
  }
};

SourceBundle make_sources(const fw::RunConfig& cfg) {
  SourceBundle s;
  s.synth = fw::synth_spec(cfg);
  if (!cfg.bank.empty()) {
    s.bank = fw::load_feature_bank(cfg.bank);
    s.splits = fw::split_bank_classes(s.bank, 0, 0, 0);
    s.has_bank = true;
  }
  return s;
}

std::size_t feature_dim(const SourceBundle& s, const fw::RunConfig& cfg) {
  return s.has_bank ? s.bank.dim : static_cast<std::size_t>(cfg.synth_dim);
}

fw::TrainableParams init_params(const fw::RunConfig& cfg, std::size_t d_in) {
  fw::Rng root(cfg.seed);
  fw::TrainableParams params;
  fw::Rng bb_rng = root.split(10);
  params.backbone =
      fw::backbone_init(d_in, fw::backbone_widths(cfg), bb_rng);
  if (cfg.iam) {
    const std::size_t d = fw::backbone_output_dim(params.backbone, d_in);
    const std::size_t dk = cfg.iam_dk > 0 ? cfg.iam_dk : d;
    const std::size_t dv = cfg.iam_dv > 0 ? cfg.iam_dv : d;
    fw::Rng iam_rng = root.split(11);
    params.iam = fw::iam_init_params(d, dk, dv, cfg.iam_r, iam_rng);
    params.iam.dropout_rate = cfg.iam_dropout;
    params.use_iam = true;
  }
  return params;
}

fw::EvalOptions eval_options(const fw::RunConfig& cfg) {
  fw::EvalOptions opt;
  opt.learner = fw::learner_spec(cfg);
  opt.coding = fw::coding_scheme(cfg);
  opt.use_iam = cfg.iam;
  opt.psm.iterations = cfg.psm_iters;
  opt.psm.accumulate = cfg.psm_accumulate;
  opt.way = cfg.way;
  opt.shot = cfg.shot;
  opt.query = cfg.query_test;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  return opt;
}

int run_gen(const fw::RunConfig& cfg, int classes, int dim, int per_class,
            double std_dev, double center_scale, std::string out) {
  if (classes < 2) throw fw::BadFlag("--classes must be >= 2");
  if (dim < 1) throw fw::BadFlag("--dim must be >= 1");
  if (per_class < 1) throw fw::BadFlag("--per-class must be >= 1");
  if (std_dev < 0) throw fw::BadFlag("--std must be >= 0");
  if (center_scale <= 0) throw fw::BadFlag("--center-scale must be > 0");
  if (out.empty()) out = out_path(cfg, "bank.fbk");

  const fw::FeatureBank bank = fw::generate_bank(
      static_cast<std::size_t>(classes), static_cast<std::size_t>(dim),
      static_cast<std::size_t>(per_class), center_scale, std_dev, cfg.seed);
  if (out.size() > 4 && out.substr(out.size() - 4) == ".csv")
    fw::write_feature_bank_csv(bank, out);
  else
    fw::write_feature_bank(bank, out);

  std::size_t total = 0;
  for (const auto& cls : bank.samples) total += cls.size();
  std::printf("wrote bank: classes=%d dim=%d samples=%zu path=%s\n", classes,
              dim, total, out.c_str());
  return 0;
}

int run_train(const fw::RunConfig& cfg, bool resume) {
  if (resume) throw fw::BadFlag("--resume is not supported");
  const SourceBundle src = make_sources(cfg);
  fw::TrainableParams params = init_params(cfg, feature_dim(src, cfg));
  const fw::TrainConfig tcfg = fw::train_config(cfg);

  const fw::TrainResult result =
      fw::train(tcfg, src.train_src(), src.val_src(), std::move(params));

  const std::string ck_path = out_path(cfg, "checkpoint.fsck");
  fw::write_checkpoint(fw::pack_params(result.best, fw::serialize_config(cfg)),
                       ck_path);

  std::string log;
  for (const fw::TrainLogEntry& e : result.log)
    log += std::to_string(e.epoch) + " " + std::to_string(e.batch) + " " +
           fmt("%.6f", e.loss) + " " + fmt("%.6g", e.lr) + "\n";
  for (std::size_t i = 0; i < result.val_acc.size(); ++i)
    log += "# val epoch " + std::to_string(i + 1) + " acc " +
           fmt("%.6f", result.val_acc[i]) + "\n";
  log += config_footer(cfg, "# ");
  write_text_file(out_path(cfg, "train_log.txt"), log);

  std::printf("best_val_acc %.4f checkpoint=%s\n", result.best_val_acc,
              ck_path.c_str());
  return 0;
}

int run_eval(const fw::RunConfig& cfg, const fw::Checkpoint* checkpoint) {
  const bool needs_checkpoint = cfg.iam || !cfg.backbone.empty();
  if (needs_checkpoint && checkpoint == nullptr)
    throw fw::ConfigError(
        "a checkpoint is required when iam is on or a backbone is set");

  fw::TrainableParams params;
  bool has_params = false;
  if (checkpoint != nullptr) {
    params = fw::unpack_params(*checkpoint);
    has_params = true;
    if (cfg.iam && !params.use_iam)
      throw fw::ConfigError("checkpoint has no attention parameters");
  }

  const SourceBundle src = make_sources(cfg);
  const fw::EvalOptions opt = eval_options(cfg);
  const fw::EvalReport rep =
      fw::evaluate(src.test_src(), has_params ? &params : nullptr, opt,
                   static_cast<std::size_t>(cfg.episodes));

  std::printf("mean_acc %.2f ± %.2f\n", rep.mean_acc * 100.0,
              rep.ci95 * 100.0);

  std::string report;
  report += "command eval\n";
  report += "episodes " + std::to_string(rep.episodes) + "\n";
  report += "way " + std::to_string(cfg.way) + "\n";
  report += "shot " + std::to_string(cfg.shot) + "\n";
  report += "query " + std::to_string(cfg.query_test) + "\n";
  report += "learner " + cfg.learner + "\n";
  report += "coding " + cfg.coding + "\n";
  report += "iam " + std::string(cfg.iam ? "on" : "off") + "\n";
  report += "psm_iters " + std::to_string(cfg.psm_iters) + "\n";
  report += "mean_acc " + fmt("%.6f", rep.mean_acc) + "\n";
  report += "ci95 " + fmt("%.6f", rep.ci95) + "\n";
  report += "time_wall_clock_total_s " + fmt("%.3f", rep.wall_clock_total_s) +
            "\n";
  report += "time_fit_us_mean " + fmt("%.1f", rep.fit_us_mean) + "\n";
  report += "time_fit_us_min " + fmt("%.1f", rep.fit_us_min) + "\n";
  report += "time_fit_us_max " + fmt("%.1f", rep.fit_us_max) + "\n";
  report += "\n[config]\n" + fw::serialize_config(cfg);
  write_text_file(out_path(cfg, "report.txt"), report);

  std::string csv = "episode,acc\n";
  for (std::size_t i = 0; i < rep.per_episode_acc.size(); ++i)
    csv += std::to_string(i) + "," + fmt("%.6f", rep.per_episode_acc[i]) + "\n";
  csv += config_footer(cfg, "# ");
  write_text_file(out_path(cfg, "episodes.csv"), csv);
  return 0;
}

int run_bench(const fw::RunConfig& cfg, const std::string& learners) {
  std::vector<std::pair<std::string, fw::BaseLearnerSpec>> specs;
  std::string cur;
  std::string list = learners + ",";
  for (char ch : list) {
    if (ch != ',') {
      cur.push_back(ch);
      continue;
    }
    if (cur.empty()) continue;
    fw::RunConfig pick = cfg;
    pick.learner = cur;
    if (cur != "nn" && cur != "rr" && cur != "lssvm")
      throw fw::BadFlag("unknown learner in --learners: " + cur);
    specs.emplace_back(cur, fw::learner_spec(pick));
    cur.clear();
  }
  if (specs.empty()) throw fw::BadFlag("--learners selected nothing");

  const SourceBundle src = make_sources(cfg);
  const std::vector<fw::BenchRow> rows = fw::benchmark_timing(
      specs, src.test_src(), cfg.way, cfg.shot, cfg.query_test,
      static_cast<std::size_t>(cfg.episodes), cfg.seed,
      fw::coding_scheme(cfg));

  std::printf("%-8s %8s %8s %10s %16s\n", "learner", "acc", "ci95", "total_s",
              "per_episode_us");
  std::string csv = "learner,mean_acc,ci95,total_s,per_episode_us\n";
  for (const fw::BenchRow& r : rows) {
    std::printf("%-8s %8.2f %8.2f %10.3f %16.2f\n", r.learner.c_str(),
                r.mean_acc * 100.0, r.ci95 * 100.0, r.total_s,
                r.per_episode_us);
    csv += r.learner + "," + fmt("%.6f", r.mean_acc) + "," +
           fmt("%.6f", r.ci95) + "," + fmt("%.6f", r.total_s) + "," +
           fmt("%.3f", r.per_episode_us) + "\n";
  }
  csv += config_footer(cfg, "# ");
  write_text_file(out_path(cfg, "bench.csv"), csv);
  return 0;
}

int run_viz(const fw::RunConfig& cfg, const fw::Checkpoint* checkpoint) {
  if (checkpoint == nullptr)
    throw fw::ConfigError("viz needs --checkpoint with attention parameters");
  const fw::TrainableParams params = fw::unpack_params(*checkpoint);
  if (!params.use_iam)
    throw fw::ConfigError("checkpoint has no attention parameters");

  const SourceBundle src = make_sources(cfg);
  fw::Rng rng = fw::Rng(cfg.seed).split(0xE1);
  const fw::Episode e = fw::draw_episode(src.test_src(), cfg.way, cfg.shot,
                                         cfg.query_test, rng);

  const bool has_backbone = !params.backbone.weights.empty();
  const fw::Matrix feats_s =
      has_backbone ? fw::backbone_forward(params.backbone, e.support_x)
                   : e.support_x;
  const fw::Matrix feats_q =
      has_backbone ? fw::backbone_forward(params.backbone, e.query_x)
                   : e.query_x;
  const fw::Matrix adjusted = fw::iam_forward(
      params.iam, feats_s, e.support_y, feats_q, fw::IamMode::Eval, rng);

  const fw::BaseLearnerSpec learner = fw::learner_spec(cfg);
  auto accuracy_with = [&](const fw::Matrix& support) {
    const fw::LearnerModel m =
        fw::fit_learner(learner, support, e.support_y, e.way);
    const std::vector<int> labels =
        fw::predict_labels(fw::learner_score(learner, m, feats_q));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == e.query_y[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
  };
  const double acc_before = accuracy_with(feats_s);
  const double acc_after = accuracy_with(adjusted);

  const std::size_t nk = feats_s.rows(), nq = feats_q.rows();
  fw::Matrix stacked(nk * 2 + nq, feats_s.cols());
  for (std::size_t i = 0; i < nk; ++i)
    for (std::size_t j = 0; j < feats_s.cols(); ++j) {
      stacked(i, j) = feats_s(i, j);
      stacked(nk + i, j) = adjusted(i, j);
    }
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < feats_q.cols(); ++j)
      stacked(nk * 2 + i, j) = feats_q(i, j);
  const fw::Matrix pc = fw::pca_2d(stacked);

  std::string csv = "role,class,pc1,pc2\n";
  auto emit = [&](const char* role, std::size_t base, std::size_t count,
                  const std::vector<int>& labels) {
    for (std::size_t i = 0; i < count; ++i)
      csv += std::string(role) + "," + std::to_string(labels[i]) + "," +
             fmt("%.6f", pc(base + i, 0)) + "," + fmt("%.6f", pc(base + i, 1)) +
             "\n";
  };
  emit("support", 0, nk, e.support_y);
  emit("adjusted", nk, nk, e.support_y);
  emit("query", nk * 2, nq, e.query_y);
  csv += "# acc_before " + fmt("%.6f", acc_before) + "\n";
  csv += "# acc_after " + fmt("%.6f", acc_after) + "\n";
  csv += config_footer(cfg, "# ");
  write_text_file(out_path(cfg, "viz.csv"), csv);

  std::printf("acc_before %.4f acc_after %.4f rows=%zu\n", acc_before,
              acc_after, nk * 2 + nq);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot episodic classification engine"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, bank_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--seed", seed, "root seed");
  app.add_option("--out-dir", out_dir, "artifact directory");
  app.add_option("--threads", threads, "worker threads");
  app.add_option("--set", sets, "override config key, key=value")
      ->take_all();

  auto* gen = app.add_subcommand("gen", "generate a synthetic feature bank");
  gen->fallthrough();
  int g_classes = 20, g_dim = 16, g_per_class = 40;
  double g_std = 0.35, g_center = 1.0;
  std::string g_out;
  gen->add_option("--classes", g_classes, "number of classes");
  gen->add_option("--dim", g_dim, "feature dimension");
  gen->add_option("--per-class", g_per_class, "samples per class");
  gen->add_option("--std", g_std, "within-class standard deviation");
  gen->add_option("--center-scale", g_center, "class center scale");
  gen->add_option("--out", g_out, "output path (.fbk or .csv)");

  auto* train = app.add_subcommand("train", "meta-train backbone and IAM");
  train->fallthrough();
  bool t_resume = false;
  train->add_flag("--resume", t_resume, "not supported; rejected");

  auto* eval = app.add_subcommand("eval", "evaluate a learner episodically");
  eval->fallthrough();
  std::string e_learner, e_iam;
  int e_psm_iters = -1, e_episodes = 0, e_way = 0, e_shot = 0, e_query = 0;
  eval->add_option("--checkpoint", checkpoint_path, "trained parameters");
  eval->add_option("--learner", e_learner, "nn|rr|lssvm");
  eval->add_option("--iam", e_iam, "on|off");
  eval->add_option("--psm-iters", e_psm_iters, "pseudo-support iterations");
  eval->add_option("--episodes", e_episodes, "episode count");
  eval->add_option("--way", e_way, "classes per episode");
  eval->add_option("--shot", e_shot, "supports per class");
  eval->add_option("--query", e_query, "queries per class");

  auto* bench = app.add_subcommand("bench", "time base learners");
  bench->fallthrough();
  std::string b_learners = "nn,rr,lssvm";
  int b_episodes = 10000, b_way = 0, b_shot = 0, b_dim = 0, b_query = 0;
  bench->add_option("--learners", b_learners, "comma list of nn,rr,lssvm");
  bench->add_option("--episodes", b_episodes, "episode count");
  bench->add_option("--way", b_way, "classes per episode");
  bench->add_option("--shot", b_shot, "supports per class");
  bench->add_option("--query", b_query, "queries per class");
  bench->add_option("--dim", b_dim, "synthetic feature dimension");

  auto* viz = app.add_subcommand("viz", "export PCA scatter of one episode");
  viz->fallthrough();
  int v_way = 0, v_shot = 0;
  viz->add_option("--checkpoint", checkpoint_path, "trained parameters");
  viz->add_option("--way", v_way, "classes per episode");
  viz->add_option("--shot", v_shot, "supports per class");

  app.add_option("--bank", bank_path, "feature bank path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    fewshot::ConfigOverrides overrides;
    for (const std::string& kv : sets) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw fw::BadFlag("--set wants key=value, got '" + kv + "'");
      overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (app.count("--seed") > 0)
      overrides.emplace_back("seed", std::to_string(seed));
    if (app.count("--out-dir") > 0) overrides.emplace_back("out_dir", out_dir);
    if (app.count("--threads") > 0)
      overrides.emplace_back("threads", std::to_string(threads));
    if (app.count("--bank") > 0) overrides.emplace_back("bank", bank_path);

    auto flag_override = [&overrides](const CLI::App* cmd, const char* flag,
                                      const std::string& key,
                                      const std::string& value) {
      if (cmd->count(flag) > 0) overrides.emplace_back(key, value);
    };
    flag_override(eval, "--learner", "learner", e_learner);
    flag_override(eval, "--iam", "iam", e_iam);
    flag_override(eval, "--psm-iters", "psm_iters",
                  std::to_string(e_psm_iters));
    flag_override(eval, "--episodes", "episodes", std::to_string(e_episodes));
    flag_override(eval, "--way", "way", std::to_string(e_way));
    flag_override(eval, "--shot", "shot", std::to_string(e_shot));
    flag_override(eval, "--query", "query_test", std::to_string(e_query));
    flag_override(bench, "--episodes", "episodes", std::to_string(b_episodes));
    flag_override(bench, "--way", "way", std::to_string(b_way));
    flag_override(bench, "--shot", "shot", std::to_string(b_shot));
    flag_override(bench, "--query", "query_test", std::to_string(b_query));
    flag_override(bench, "--dim", "synth_dim", std::to_string(b_dim));
    flag_override(viz, "--way", "way", std::to_string(v_way));
    flag_override(viz, "--shot", "shot", std::to_string(v_shot));
    if (bench->parsed() && bench->count("--episodes") == 0)
      overrides.emplace_back("episodes", std::to_string(b_episodes));

    fw::Checkpoint loaded;
    bool has_checkpoint = false;
    std::string base_text;
    if ((eval->parsed() || viz->parsed()) && !checkpoint_path.empty()) {
      loaded = fw::load_checkpoint(checkpoint_path);
      has_checkpoint = true;
      base_text = strip_run_keys(loaded.config_text);
    }
    if (!config_path.empty()) base_text += read_text_file(config_path);
    const fw::RunConfig cfg = fw::parse_config_text(base_text, overrides);

    if (gen->parsed())
      return run_gen(cfg, g_classes, g_dim, g_per_class, g_std, g_center,
                     g_out);
    if (train->parsed()) return run_train(cfg, t_resume);
    if (eval->parsed())
      return run_eval(cfg, has_checkpoint ? &loaded : nullptr);
    if (bench->parsed()) return run_bench(cfg, b_learners);
    if (viz->parsed()) return run_viz(cfg, has_checkpoint ? &loaded : nullptr);
    return 2;
  } catch (const fw::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return classify_exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
