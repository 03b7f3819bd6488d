#include "ngfn/commands.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ngfn/plots.hpp"

namespace fs = std::filesystem;

namespace ngfn {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

void verify_hash(const Checkpoint& ckpt, const RunConfig& cfg, bool force) {
  const std::uint64_t want =
      ckpt.kind == kCkptPretrain ? pretrain_hash(cfg) : config_hash(cfg);
  if (ckpt.config_hash != want && !force) {
    throw ConfigError("checkpoint: config hash mismatch (use --force to override)");
  }
}

std::vector<Vec> head_of(const std::vector<Vec>& samples, long k) {
  const long n = std::min<long>(k, static_cast<long>(samples.size()));
  return std::vector<Vec>(samples.begin(), samples.begin() + n);
}

}  // namespace

void cmd_pretrain(const RunConfig& cfg, const CmdOptions& opts) {
  cfg.validate();
  fs::create_directories(opts.out_dir);
  const NoiseSchedule schedule = cfg.make_schedule();
  MlpSpec spec = cfg.net;
  spec.in_dim = cfg.dataset.dim;
  spec.out_dim = cfg.dataset.dim;
  Rng rng(seed_mix({cfg.seed, kSeedInit, 0}));
  Mlp net(spec, schedule.T, rng);
  pretrain(net, cfg.dataset, schedule, cfg.pretrain);
  save_checkpoint(pack_pretrain(net, schedule, pretrain_hash(cfg)),
                  opts.out_dir + "/pretrained.ckpt");

  // one sanity row: how closely do terminal samples track the data density
  NetPolicy policy(net, schedule);
  const std::vector<Vec> xs = sample_terminals(policy, schedule, cfg.dataset.dim,
                                               cfg.train.eval_samples,
                                               seed_mix({cfg.seed, kSeedEval, 0}));
  MetricsRecord row;
  row.step = cfg.pretrain.steps;
  row.mean_reward = mean_reward(xs, cfg.reward);
  row.diversity = diversity(head_of(xs, cfg.train.eval_batch));
  row.target_tv = target_tv(xs, dataset_oracle(cfg.dataset, cfg.dataset.dim));
  export_metrics({row}, opts.out_dir + "/metrics.csv");
  if (opts.emit_plots) write_metric_plots({row}, opts.out_dir);
  write_text(opts.out_dir + "/config.txt", serialize_config(cfg));
}

void cmd_finetune(const RunConfig& cfg, const CmdOptions& opts) {
  cfg.validate();
  if (opts.checkpoint.empty()) throw ConfigError("finetune: an input checkpoint is required");
  fs::create_directories(opts.out_dir);
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  verify_hash(ckpt, cfg, opts.force);

  NoiseSchedule schedule;
  FinetuneState state;
  bool resumed = false;
  if (ckpt.kind == kCkptPretrain) {
    Mlp net;
    unpack_pretrain(ckpt, net, schedule);
    if (net.spec().in_dim != cfg.dataset.dim) {
      throw ConfigError("finetune: checkpoint dimension disagrees with the config");
    }
    state = init_finetune(net, cfg.train, schedule);
  } else {
    state = unpack_finetune(ckpt, cfg.train, schedule);
    resumed = true;
  }

  GridOracle target;
  const GridOracle* target_ptr = nullptr;
  if (cfg.oracle_dense > 0) {
    NetPolicy pre(state.pretrained, schedule);
    target = build_target_oracle(pre, cfg.reward, cfg.train.weights.beta, schedule,
                                 cfg.dataset.dim, cfg.oracle_dense,
                                 seed_mix({cfg.seed, kSeedOracle, 0}));
    target_ptr = &target;
  }

  const std::uint64_t hash = config_hash(cfg);
  RunHooks hooks;
  hooks.on_checkpoint = [&](const FinetuneState& s, long epoch) {
    save_checkpoint(pack_finetune(s, schedule, hash),
                    opts.out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".ckpt");
  };
  std::vector<MetricsRecord> rows =
      run_finetune(state, cfg.train, schedule, cfg.reward, target_ptr, hooks);
  if (resumed) {
    // the leading row re-evaluates the checkpointed state, which the prior
    // leg already reported
    rows.erase(rows.begin());
    const std::string prior_csv = opts.out_dir + "/metrics.csv";
    if (fs::exists(prior_csv)) {
      std::vector<MetricsRecord> prior = import_metrics(prior_csv);
      prior.insert(prior.end(), rows.begin(), rows.end());
      rows = std::move(prior);
    }
  }
  export_metrics(rows, opts.out_dir + "/metrics.csv");
  if (opts.emit_plots) write_metric_plots(rows, opts.out_dir);
  write_text(opts.out_dir + "/config.txt", serialize_config(cfg));
}

void cmd_eval(const RunConfig& cfg, const CmdOptions& opts) {
  cfg.validate();
  if (opts.checkpoint.empty()) throw ConfigError("eval: an input checkpoint is required");
  fs::create_directories(opts.out_dir);
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  verify_hash(ckpt, cfg, opts.force);

  NoiseSchedule schedule;
  Mlp policy_net, pretrained_net, g_net;
  bool has_g = false;
  if (ckpt.kind == kCkptPretrain) {
    unpack_pretrain(ckpt, policy_net, schedule);
    pretrained_net = policy_net;
  } else {
    FinetuneState state = unpack_finetune(ckpt, cfg.train, schedule);
    policy_net = state.policy;
    pretrained_net = state.pretrained;
    g_net = state.g_phi;
    has_g = true;
  }
  const int dim = policy_net.spec().in_dim;
  if (dim != cfg.dataset.dim) {
    throw ConfigError("eval: checkpoint dimension disagrees with the config");
  }

  NetPolicy policy(policy_net, schedule);
  NetPolicy pre(pretrained_net, schedule);
  const std::uint64_t es =
      seed_mix({cfg.seed, kSeedEval, static_cast<std::uint64_t>(ckpt.epoch)});
  const std::vector<Vec> samples =
      sample_terminals(policy, schedule, dim, cfg.train.eval_samples, es);
  const std::vector<Vec> head = head_of(samples, cfg.train.eval_batch);
  const std::vector<Vec> ref = sample_terminals(pre, schedule, dim, cfg.train.eval_batch, es);

  MetricsRecord row;
  row.step = ckpt.updates;
  row.mean_reward = mean_reward(samples, cfg.reward);
  row.diversity = diversity(head);
  row.prior_distance = prior_distance(head, ref);
  if (cfg.oracle_dense > 0) {
    const GridOracle target =
        build_target_oracle(pre, cfg.reward, cfg.train.weights.beta, schedule, dim,
                            cfg.oracle_dense, seed_mix({cfg.seed, kSeedOracle, 0}));
    row.target_tv = target_tv(samples, target);
  }
  if (has_g) row.terminal_g_norm = mean_terminal_g_norm(g_net, head);
  export_metrics({row}, opts.out_dir + "/eval.csv");
  write_text(opts.out_dir + "/config.txt", serialize_config(cfg));
}

namespace {

struct SweepClause {
  std::string key;
  std::vector<std::string> values;
};

std::string trimmed(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<SweepClause> parse_sweep(const std::string& spec) {
  std::vector<SweepClause> clauses;
  std::istringstream in(spec);
  std::string part;
  while (std::getline(in, part, ';')) {
    const size_t eq = part.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("sweep: clause '" + part + "' is not key=v1,v2,...");
    }
    SweepClause clause;
    clause.key = trimmed(part.substr(0, eq));
    std::istringstream vals(part.substr(eq + 1));
    std::string v;
    while (std::getline(vals, v, ',')) {
      v = trimmed(v);
      if (!v.empty()) clause.values.push_back(v);
    }
    if (clause.key.empty() || clause.values.empty()) {
      throw ConfigError("sweep: clause '" + part + "' has no key or no values");
    }
    clauses.push_back(std::move(clause));
  }
  if (clauses.empty()) throw ConfigError("sweep: empty sweep specification");
  return clauses;
}

std::string setting_name(const std::vector<SweepClause>& clauses, const std::vector<size_t>& idx) {
  std::string name;
  for (size_t i = 0; i < clauses.size(); ++i) {
    const std::string leaf = clauses[i].key.substr(clauses[i].key.find_last_of('.') + 1);
    std::string value = clauses[i].values[idx[i]];
    for (char& ch : value) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '+')) {
        ch = '_';
      }
    }
    name += (name.empty() ? "" : "_") + leaf + "_" + value;
  }
  return name;
}

}  // namespace

void cmd_sweep(const RunConfig& cfg, const std::string& sweep_spec, const CmdOptions& opts) {
  const std::vector<SweepClause> clauses = parse_sweep(sweep_spec);
  fs::create_directories(opts.out_dir);

  std::string pareto = "setting";
  for (const SweepClause& c : clauses) pareto += "," + c.key;
  pareto += ",step,mean_reward,diversity,prior_distance,target_tv,terminal_g_norm\n";

  std::vector<size_t> idx(clauses.size(), 0);
  while (true) {
    RunConfig setting_cfg = cfg;
    for (size_t i = 0; i < clauses.size(); ++i) {
      apply_override(setting_cfg, clauses[i].key, clauses[i].values[idx[i]]);
    }
    const std::string name = setting_name(clauses, idx);
    CmdOptions sub = opts;
    sub.out_dir = opts.out_dir + "/" + name;
    cmd_finetune(setting_cfg, sub);

    const std::vector<MetricsRecord> rows = import_metrics(sub.out_dir + "/metrics.csv");
    const MetricsRecord& last = rows.back();
    char buf[256];
    std::snprintf(buf, sizeof(buf), ",%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", last.step,
                  last.mean_reward, last.diversity, last.prior_distance, last.target_tv,
                  last.terminal_g_norm);
    pareto += name;
    for (size_t i = 0; i < clauses.size(); ++i) pareto += "," + clauses[i].values[idx[i]];
    pareto += buf;

    size_t pos = clauses.size();
    while (pos > 0) {
      --pos;
      if (++idx[pos] < clauses[pos].values.size()) break;
      idx[pos] = 0;
      if (pos == 0) {
        write_text(opts.out_dir + "/pareto.csv", pareto);
        return;
      }
    }
  }
}

}  // namespace ngfn
