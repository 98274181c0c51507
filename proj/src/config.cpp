#include "fewshot/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace fewshot {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("bad value for " + key + ": '" + value +
                    "' (want on/off)");
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct KeyDef {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define NUM_KEY(field)                                                \
  {#field,                                                            \
   [](RunConfig& c, const std::string& v) {                           \
     c.field = parse_number<decltype(c.field)>(#field, v);            \
   },                                                                 \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define REAL_KEY(field)                                      \
  {#field,                                                   \
   [](RunConfig& c, const std::string& v) {                  \
     c.field = parse_number<double>(#field, v);              \
   },                                                        \
   [](const RunConfig& c) { return format_double(c.field); }}
#define STR_KEY(field)                                                      \
  {#field, [](RunConfig& c, const std::string& v) { c.field = v; },         \
   [](const RunConfig& c) { return c.field; }}
#define BOOL_KEY(field)                                             \
  {#field,                                                          \
   [](RunConfig& c, const std::string& v) {                         \
     c.field = parse_bool(#field, v);                               \
   },                                                               \
   [](const RunConfig& c) { return c.field ? "on" : "off"; }}

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> keys = {
      NUM_KEY(seed),
      NUM_KEY(threads),
      STR_KEY(out_dir),
      STR_KEY(bank),
      NUM_KEY(way),
      NUM_KEY(shot),
      NUM_KEY(train_shot),
      NUM_KEY(query_train),
      NUM_KEY(query_test),
      NUM_KEY(episodes),
      NUM_KEY(synth_dim),
      REAL_KEY(synth_center_scale),
      REAL_KEY(synth_std),
      REAL_KEY(synth_support_noise),
      STR_KEY(learner),
      REAL_KEY(ridge_lambda),
      REAL_KEY(gamma),
      STR_KEY(kernel),
      REAL_KEY(rbf_sigma),
      STR_KEY(decode),
      REAL_KEY(bias_stationarity_scale),
      STR_KEY(coding),
      BOOL_KEY(iam),
      NUM_KEY(iam_r),
      REAL_KEY(iam_dropout),
      NUM_KEY(iam_dk),
      NUM_KEY(iam_dv),
      NUM_KEY(psm_iters),
      BOOL_KEY(psm_accumulate),
      STR_KEY(backbone),
      NUM_KEY(epochs),
      NUM_KEY(batches_per_epoch),
      NUM_KEY(episodes_per_batch),
      REAL_KEY(lr_init),
      STR_KEY(lr_milestones),
      STR_KEY(lr_factors),
      REAL_KEY(momentum),
      REAL_KEY(weight_decay),
      NUM_KEY(val_shot),
      NUM_KEY(val_episodes),
  };
  return keys;
}

#undef NUM_KEY
#undef REAL_KEY
#undef STR_KEY
#undef BOOL_KEY

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  const std::string last = trim(cur);
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void apply_config_key(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  for (const KeyDef& def : registry()) {
    if (key == def.name) {
      def.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config_text(const std::string& text,
                            const ConfigOverrides& overrides) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated section header");
      continue;  // sections are purely cosmetic
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [key, value] : overrides) apply_config_key(cfg, key, value);
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config(const std::string& path,
                       const ConfigOverrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), overrides);
}

void validate_config(const RunConfig& cfg) {
  require(cfg.threads >= 1, "threads must be >= 1");
  require(cfg.way >= 2, "way must be >= 2");
  require(cfg.shot >= 1, "shot must be >= 1");
  require(cfg.train_shot >= 1, "train_shot must be >= 1");
  require(cfg.query_train >= 1, "query_train must be >= 1");
  require(cfg.query_test >= 1, "query_test must be >= 1");
  require(cfg.episodes >= 1, "episodes must be >= 1");
  require(cfg.synth_dim >= 1, "synth_dim must be >= 1");
  require(cfg.synth_center_scale > 0, "synth_center_scale must be > 0");
  require(cfg.synth_std >= 0, "synth_std must be >= 0");
  require(cfg.synth_support_noise >= 0, "synth_support_noise must be >= 0");
  require(cfg.learner == "nn" || cfg.learner == "rr" || cfg.learner == "lssvm",
          "learner must be nn|rr|lssvm");
  require(cfg.ridge_lambda > 0, "ridge_lambda must be > 0");
  require(cfg.gamma > 0, "gamma must be > 0");
  require(cfg.kernel == "linear" || cfg.kernel == "rbf",
          "kernel must be linear|rbf");
  require(cfg.rbf_sigma > 0, "rbf_sigma must be > 0");
  require(cfg.decode == "linear" || cfg.decode == "hamming",
          "decode must be linear|hamming");
  require(cfg.bias_stationarity_scale > 0,
          "bias_stationarity_scale must be > 0");
  require(cfg.coding == "ova" || cfg.coding == "ovo" || cfg.coding == "random",
          "coding must be ova|ovo|random");
  require(cfg.iam_r >= 1, "iam_r must be >= 1");
  require(cfg.iam_dropout >= 0 && cfg.iam_dropout < 1,
          "iam_dropout must be in [0, 1)");
  require(cfg.iam_dk >= 0 && cfg.iam_dv >= 0,
          "iam_dk/iam_dv must be >= 0 (0 = feature dim)");
  require(cfg.psm_iters >= 0, "psm_iters must be >= 0");
  require(cfg.epochs >= 1, "epochs must be >= 1");
  require(cfg.batches_per_epoch >= 1, "batches_per_epoch must be >= 1");
  require(cfg.episodes_per_batch >= 1, "episodes_per_batch must be >= 1");
  require(cfg.lr_init > 0, "lr_init must be > 0");
  require(cfg.momentum >= 0 && cfg.momentum < 1, "momentum must be in [0, 1)");
  require(cfg.weight_decay >= 0, "weight_decay must be >= 0");
  require(cfg.val_shot >= 1, "val_shot must be >= 1");
  require(cfg.val_episodes >= 1, "val_episodes must be >= 1");

  const std::vector<std::string> milestones = split_list(cfg.lr_milestones);
  const std::vector<std::string> factors = split_list(cfg.lr_factors);
  require(milestones.size() == factors.size(),
          "lr_milestones and lr_factors must have equal length");
  for (const std::string& m : milestones)
    require(parse_number<int>("lr_milestones", m) >= 0,
            "lr milestones must be >= 0");
  for (const std::string& f : factors)
    require(parse_number<double>("lr_factors", f) > 0,
            "lr factors must be > 0");
  for (const std::string& w : split_list(cfg.backbone))
    require(parse_number<int>("backbone", w) >= 1,
            "backbone widths must be >= 1");
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const KeyDef& def : registry()) {
    out += def.name;
    out += " = ";
    out += def.get(cfg);
    out += '\n';
  }
  return out;
}

SynthSpec synth_spec(const RunConfig& cfg) {
  SynthSpec s;
  s.dim = static_cast<std::size_t>(cfg.synth_dim);
  s.class_center_scale = cfg.synth_center_scale;
  s.within_class_std = cfg.synth_std;
  s.support_noise_factor = cfg.synth_support_noise;
  s.seed = cfg.seed;
  return s;
}

LssvmConfig lssvm_config(const RunConfig& cfg) {
  LssvmConfig c;
  c.gamma = cfg.gamma;
  c.kernel.kind = cfg.kernel == "rbf" ? KernelKind::RBF : KernelKind::Linear;
  c.kernel.sigma = cfg.rbf_sigma;
  c.decode =
      cfg.decode == "hamming" ? DecodeMode::Hamming : DecodeMode::LinearApprox;
  c.bias_stationarity_scale = cfg.bias_stationarity_scale;
  return c;
}

BaseLearnerSpec learner_spec(const RunConfig& cfg) {
  BaseLearnerSpec spec;
  if (cfg.learner == "nn") {
    spec.kind = LearnerKind::PrototypeNN;
  } else if (cfg.learner == "rr") {
    spec.kind = LearnerKind::Ridge;
    spec.ridge_lambda = cfg.ridge_lambda;
  } else {
    spec.kind = LearnerKind::Lssvm;
    spec.lssvm = lssvm_config(cfg);
  }
  return spec;
}

CodingScheme coding_scheme(const RunConfig& cfg) {
  if (cfg.coding == "ovo") return CodingScheme::OneVsOne;
  if (cfg.coding == "random") return CodingScheme::RandomDense;
  return CodingScheme::OneVsAll;
}

std::vector<std::size_t> backbone_widths(const RunConfig& cfg) {
  std::vector<std::size_t> widths;
  for (const std::string& w : split_list(cfg.backbone))
    widths.push_back(parse_number<std::size_t>("backbone", w));
  return widths;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.way = cfg.way;
  t.train_shot = cfg.train_shot;
  t.test_shot = cfg.shot;
  t.query_train = cfg.query_train;
  t.query_test = cfg.query_test;
  t.epochs = cfg.epochs;
  t.batches_per_epoch = cfg.batches_per_epoch;
  t.episodes_per_batch = cfg.episodes_per_batch;
  t.lr_init = cfg.lr_init;
  t.lr_milestones.clear();
  for (const std::string& m : split_list(cfg.lr_milestones))
    t.lr_milestones.push_back(parse_number<int>("lr_milestones", m));
  t.lr_factors.clear();
  for (const std::string& f : split_list(cfg.lr_factors))
    t.lr_factors.push_back(parse_number<double>("lr_factors", f));
  t.momentum = cfg.momentum;
  t.weight_decay = cfg.weight_decay;
  t.seed = cfg.seed;
  t.val_shot = cfg.val_shot;
  t.val_episodes = cfg.val_episodes;
  t.use_iam = cfg.iam;
  t.lssvm = lssvm_config(cfg);
  t.coding = coding_scheme(cfg);
  t.threads = cfg.threads;
  return t;
}

}  // namespace fewshot
