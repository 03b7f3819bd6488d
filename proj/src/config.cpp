#include "ngfn/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace ngfn {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const char* want, const std::string& got) {
  throw ConfigError("config: key '" + key + "': expected " + want + ", got '" + got + "'");
}

long parse_long(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') bad_value(key, "an integer", s);
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || s[0] == '-') bad_value(key, "an unsigned integer", s);
  return static_cast<std::uint64_t>(v);
}

double parse_double(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') bad_value(key, "a number", s);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  bad_value(key, "true or false", s);
}

std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(parse_double(key, tok));
  if (out.empty()) bad_value(key, "a list of numbers", s);
  return out;
}

int parse_int(const std::string& key, const std::string& s) {
  return static_cast<int>(parse_long(key, s));
}

struct EnumName {
  const char* name;
  int value;
};

const EnumName kRewardKinds[] = {{"mixture", static_cast<int>(RewardKind::kGaussianMixture)},
                                 {"ring", static_cast<int>(RewardKind::kRing)},
                                 {"well", static_cast<int>(RewardKind::kQuadraticWell)}};
const EnumName kGammaModes[] = {{"alpha_bar", static_cast<int>(GammaMode::kAlphaBar)},
                                {"one", static_cast<int>(GammaMode::kOne)}};
const EnumName kMethods[] = {{"res_grad_db", static_cast<int>(FinetuneMethod::kResGradDb)},
                             {"grad_db", static_cast<int>(FinetuneMethod::kGradDb)},
                             {"dag_db", static_cast<int>(FinetuneMethod::kDagDb)},
                             {"res_db", static_cast<int>(FinetuneMethod::kResDb)},
                             {"ddpo", static_cast<int>(FinetuneMethod::kDdpo)},
                             {"refl", static_cast<int>(FinetuneMethod::kRefl)},
                             {"draft_k", static_cast<int>(FinetuneMethod::kDraftK)},
                             {"draft_lv", static_cast<int>(FinetuneMethod::kDraftLv)}};

template <size_t N>
int parse_enum(const std::string& key, const std::string& s, const EnumName (&names)[N]) {
  for (const EnumName& e : names) {
    if (s == e.name) return e.value;
  }
  std::string want = "one of {";
  for (size_t i = 0; i < N; ++i) want += std::string(i ? ", " : "") + names[i].name;
  want += "}";
  bad_value(key, want.c_str(), s);
}

template <size_t N>
const char* enum_name(int value, const EnumName (&names)[N]) {
  for (const EnumName& e : names) {
    if (e.value == value) return e.name;
  }
  throw ConfigError("config: enum value out of range");
}

// Mode means arrive as flat lists before the dimension is necessarily known,
// so they are staged and split during finalize.
struct ParseState {
  RunConfig cfg;
  std::vector<double> dataset_means, reward_means;
  bool have_dataset_means = false, have_reward_means = false;
};

std::vector<Vec> split_modes(const std::string& key, const std::vector<double>& flat, int dim) {
  if (flat.size() % static_cast<size_t>(dim) != 0) {
    throw ConfigError("config: key '" + key + "': length must be a multiple of the dimension");
  }
  std::vector<Vec> out;
  for (size_t i = 0; i < flat.size(); i += static_cast<size_t>(dim)) {
    Vec m(dim);
    for (int j = 0; j < dim; ++j) m(j) = flat[i + static_cast<size_t>(j)];
    out.push_back(m);
  }
  return out;
}

void apply_kv(ParseState& st, const std::string& key, const std::string& value) {
  RunConfig& c = st.cfg;
  if (key == "seed") c.seed = parse_u64(key, value);

  else if (key == "schedule.T") c.T = parse_int(key, value);
  else if (key == "schedule.beta_min") c.beta_min = parse_double(key, value);
  else if (key == "schedule.beta_max") c.beta_max = parse_double(key, value);

  else if (key == "net.hidden") c.net.hidden = parse_int(key, value);
  else if (key == "net.depth") c.net.depth = parse_int(key, value);
  else if (key == "net.time_features") c.net.time_features = parse_int(key, value);
  else if (key == "net.final_scale") c.net.final_scale = parse_double(key, value);

  else if (key == "dataset.dim") c.dataset.dim = parse_int(key, value);
  else if (key == "dataset.means") {
    st.dataset_means = parse_list(key, value);
    st.have_dataset_means = true;
  } else if (key == "dataset.scales") c.dataset.scales = parse_list(key, value);
  else if (key == "dataset.weights") c.dataset.mode_weights = parse_list(key, value);

  else if (key == "reward.kind")
    c.reward.kind = static_cast<RewardKind>(parse_enum(key, value, kRewardKinds));
  else if (key == "reward.means") {
    st.reward_means = parse_list(key, value);
    st.have_reward_means = true;
  } else if (key == "reward.scales") c.reward.scales = parse_list(key, value);
  else if (key == "reward.weights") c.reward.mode_weights = parse_list(key, value);
  else if (key == "reward.radius") c.reward.radius = parse_double(key, value);
  else if (key == "reward.well_a") c.reward.well_a = parse_double(key, value);
  else if (key == "reward.floor") c.reward.floor = parse_double(key, value);

  else if (key == "loss.beta") c.train.weights.beta = parse_double(key, value);
  else if (key == "loss.w_fwd") c.train.weights.w_f = parse_double(key, value);
  else if (key == "loss.w_rev") c.train.weights.w_b = parse_double(key, value);
  else if (key == "loss.gamma")
    c.train.weights.gamma_mode = static_cast<GammaMode>(parse_enum(key, value, kGammaModes));
  else if (key == "loss.lambda_reg") c.train.weights.lambda_reg = parse_double(key, value);
  else if (key == "loss.eta") c.train.weights.eta = parse_double(key, value);
  else if (key == "loss.second_order") c.train.weights.second_order = parse_bool(key, value);
  else if (key == "loss.use_correction") c.train.weights.use_correction = parse_bool(key, value);
  else if (key == "loss.smooth_c") c.train.weights.smooth_c = parse_double(key, value);
  else if (key == "loss.smooth_n") c.train.weights.smooth_n = parse_int(key, value);

  else if (key == "pretrain.steps") c.pretrain.steps = parse_long(key, value);
  else if (key == "pretrain.batch") c.pretrain.batch = parse_int(key, value);
  else if (key == "pretrain.lr") c.pretrain.lr = parse_double(key, value);

  else if (key == "train.method")
    c.train.method = static_cast<FinetuneMethod>(parse_enum(key, value, kMethods));
  else if (key == "train.n_traj_per_epoch") c.train.n_traj_per_epoch = parse_int(key, value);
  else if (key == "train.grad_accum_steps") c.train.grad_accum_steps = parse_int(key, value);
  else if (key == "train.update_every_n_traj") c.train.update_every_n_traj = parse_int(key, value);
  else if (key == "train.subsample_fraction")
    c.train.subsample_fraction = parse_double(key, value);
  else if (key == "train.epochs") c.train.epochs = parse_long(key, value);
  else if (key == "train.eval_every") c.train.eval_every = parse_long(key, value);
  else if (key == "train.lr_policy") c.train.lr_policy = parse_double(key, value);
  else if (key == "train.lr_flow") c.train.lr_flow = parse_double(key, value);
  else if (key == "train.g_init_scale") c.train.g_init_scale = parse_double(key, value);
  else if (key == "train.on_policy") c.train.on_policy = parse_bool(key, value);

  else if (key == "baseline.clip_ratio") c.train.baseline.clip_ratio = parse_double(key, value);
  else if (key == "baseline.stop_lo") c.train.baseline.stop_lo = parse_double(key, value);
  else if (key == "baseline.stop_hi") c.train.baseline.stop_hi = parse_double(key, value);
  else if (key == "baseline.k") c.train.baseline.k = parse_int(key, value);

  else if (key == "eval.batch") c.train.eval_batch = parse_int(key, value);
  else if (key == "eval.samples") c.train.eval_samples = parse_long(key, value);
  else if (key == "eval.oracle_dense") c.oracle_dense = parse_long(key, value);

  else throw ConfigError("config: unknown key '" + key + "'");
}

// The stock means are a single mode at the origin; follow the configured
// dimension when the user never replaced them.
bool default_means(const std::vector<Vec>& means, int dim) {
  return means.size() == 1 && means[0].size() != dim && means[0].isZero();
}

void finalize(ParseState& st) {
  RunConfig& c = st.cfg;
  if (st.have_dataset_means) {
    c.dataset.means = split_modes("dataset.means", st.dataset_means, c.dataset.dim);
  } else if (default_means(c.dataset.means, c.dataset.dim)) {
    c.dataset.means = {Vec::Zero(c.dataset.dim)};
  }
  if (st.have_reward_means) {
    c.reward.means = split_modes("reward.means", st.reward_means, c.dataset.dim);
  } else if (default_means(c.reward.means, c.dataset.dim)) {
    c.reward.means = {Vec::Zero(c.dataset.dim)};
  }
  c.reward.dim = c.dataset.dim;
  c.train.seed = c.seed;
  c.pretrain.seed = c.seed;
  c.train.baseline.method = c.train.method;
  c.validate();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt_double(v[i]);
  return out;
}

std::string fmt_modes(const std::vector<Vec>& modes) {
  std::vector<double> flat;
  for (const Vec& m : modes)
    for (int j = 0; j < m.size(); ++j) flat.push_back(m(j));
  return fmt_list(flat);
}

std::string serialize_internal(const RunConfig& c, bool include_run_length) {
  std::string out;
  auto kv = [&out](const std::string& key, const std::string& value) {
    out += key + " = " + value + "\n";
  };
  kv("seed", std::to_string(c.seed));
  kv("schedule.T", std::to_string(c.T));
  kv("schedule.beta_min", fmt_double(c.beta_min));
  kv("schedule.beta_max", fmt_double(c.beta_max));
  kv("net.hidden", std::to_string(c.net.hidden));
  kv("net.depth", std::to_string(c.net.depth));
  kv("net.time_features", std::to_string(c.net.time_features));
  kv("net.final_scale", fmt_double(c.net.final_scale));
  kv("dataset.dim", std::to_string(c.dataset.dim));
  kv("dataset.means", fmt_modes(c.dataset.means));
  kv("dataset.scales", fmt_list(c.dataset.scales));
  kv("dataset.weights", fmt_list(c.dataset.mode_weights));
  kv("reward.kind", enum_name(static_cast<int>(c.reward.kind), kRewardKinds));
  kv("reward.means", fmt_modes(c.reward.means));
  kv("reward.scales", fmt_list(c.reward.scales));
  kv("reward.weights", fmt_list(c.reward.mode_weights));
  kv("reward.radius", fmt_double(c.reward.radius));
  kv("reward.well_a", fmt_double(c.reward.well_a));
  kv("reward.floor", fmt_double(c.reward.floor));
  kv("loss.beta", fmt_double(c.train.weights.beta));
  kv("loss.w_fwd", fmt_double(c.train.weights.w_f));
  kv("loss.w_rev", fmt_double(c.train.weights.w_b));
  kv("loss.gamma", enum_name(static_cast<int>(c.train.weights.gamma_mode), kGammaModes));
  kv("loss.lambda_reg", fmt_double(c.train.weights.lambda_reg));
  kv("loss.eta", fmt_double(c.train.weights.eta));
  kv("loss.second_order", c.train.weights.second_order ? "true" : "false");
  kv("loss.use_correction", c.train.weights.use_correction ? "true" : "false");
  kv("loss.smooth_c", fmt_double(c.train.weights.smooth_c));
  kv("loss.smooth_n", std::to_string(c.train.weights.smooth_n));
  kv("pretrain.steps", std::to_string(c.pretrain.steps));
  kv("pretrain.batch", std::to_string(c.pretrain.batch));
  kv("pretrain.lr", fmt_double(c.pretrain.lr));
  kv("train.method", enum_name(static_cast<int>(c.train.method), kMethods));
  kv("train.n_traj_per_epoch", std::to_string(c.train.n_traj_per_epoch));
  kv("train.grad_accum_steps", std::to_string(c.train.grad_accum_steps));
  kv("train.update_every_n_traj", std::to_string(c.train.update_every_n_traj));
  kv("train.subsample_fraction", fmt_double(c.train.subsample_fraction));
  if (include_run_length) kv("train.epochs", std::to_string(c.train.epochs));
  kv("train.eval_every", std::to_string(c.train.eval_every));
  kv("train.lr_policy", fmt_double(c.train.lr_policy));
  kv("train.lr_flow", fmt_double(c.train.lr_flow));
  kv("train.g_init_scale", fmt_double(c.train.g_init_scale));
  kv("train.on_policy", c.train.on_policy ? "true" : "false");
  kv("baseline.clip_ratio", fmt_double(c.train.baseline.clip_ratio));
  kv("baseline.stop_lo", fmt_double(c.train.baseline.stop_lo));
  kv("baseline.stop_hi", fmt_double(c.train.baseline.stop_hi));
  kv("baseline.k", std::to_string(c.train.baseline.k));
  kv("eval.batch", std::to_string(c.train.eval_batch));
  kv("eval.samples", std::to_string(c.train.eval_samples));
  kv("eval.oracle_dense", std::to_string(c.oracle_dense));
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  dataset.means = {Vec::Zero(1)};
  dataset.scales = {1.0};
  dataset.mode_weights = {1.0};
  reward.means = {Vec::Zero(1)};
  reward.scales = {1.0};
  reward.mode_weights = {1.0};
}

void RunConfig::validate() const {
  if (T < 1) throw ConfigError("config: schedule.T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("config: need 0 < schedule.beta_min <= schedule.beta_max < 1");
  }
  if (net.hidden < 1) throw ConfigError("config: net.hidden must be >= 1");
  if (net.depth < 1) throw ConfigError("config: net.depth must be >= 1");
  if (net.time_features < 2 || net.time_features % 2 != 0) {
    throw ConfigError("config: net.time_features must be even and >= 2");
  }
  if (!(net.final_scale >= 0.0)) throw ConfigError("config: net.final_scale must be >= 0");
  dataset.validate();
  if (dataset.dim > 2) throw ConfigError("config: dataset.dim must be 1 or 2");
  reward.validate();
  if (pretrain.steps < 0) throw ConfigError("config: pretrain.steps must be >= 0");
  if (pretrain.batch < 1) throw ConfigError("config: pretrain.batch must be >= 1");
  if (!(pretrain.lr > 0.0)) throw ConfigError("config: pretrain.lr must be positive");
  train.validate();
  if (oracle_dense != 0 && oracle_dense < 100000) {
    throw ConfigError("config: eval.oracle_dense must be 0 (off) or >= 100000");
  }
}

RunConfig parse_config(const std::string& text) {
  ParseState st;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    apply_kv(st, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  finalize(st);
  return st.cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  ParseState st;
  st.cfg = cfg;
  apply_kv(st, key, value);
  finalize(st);
  cfg = st.cfg;
}

std::string serialize_config(const RunConfig& cfg) { return serialize_internal(cfg, true); }

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string filter_lines(const std::string& text, const std::vector<std::string>& prefixes) {
  std::string out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    for (const std::string& p : prefixes) {
      if (line.rfind(p, 0) == 0) {
        out += line + "\n";
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(serialize_internal(cfg, false)); }

std::uint64_t pretrain_hash(const RunConfig& cfg) {
  return fnv1a(
      filter_lines(serialize_internal(cfg, false), {"schedule.", "net.", "dataset.", "pretrain."}));
}

}  // namespace ngfn
