#include "ngfn/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace ngfn {

void DatasetSpec::validate() const {
  if (dim < 1) throw ConfigError("dataset: dim must be >= 1");
  if (means.empty()) throw ConfigError("dataset: need at least one mode");
  if (scales.size() != means.size() || mode_weights.size() != means.size()) {
    throw ConfigError("dataset: means, scales and mode_weights must have equal length");
  }
  double total = 0.0;
  for (size_t i = 0; i < means.size(); ++i) {
    if (means[i].size() != dim) throw ConfigError("dataset: mode mean has the wrong dimension");
    if (scales[i] < 0.0) throw ConfigError("dataset: scales must be >= 0");
    if (mode_weights[i] < 0.0) throw ConfigError("dataset: mode weights must be >= 0");
    total += mode_weights[i];
  }
  if (!(total > 0.0)) throw ConfigError("dataset: mode weights must have positive total");
}

Vec DatasetSpec::sample(Rng& rng) const {
  double total = 0.0;
  for (double w : mode_weights) total += w;
  const double u = rng.uniform() * total;
  size_t pick = mode_weights.size() - 1;
  double acc = 0.0;
  for (size_t i = 0; i < mode_weights.size(); ++i) {
    acc += mode_weights[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  return means[pick] + scales[pick] * rng.normal_vec(dim);
}

void pretrain(Mlp& net, const DatasetSpec& dataset, const NoiseSchedule& schedule,
              const PretrainConfig& cfg) {
  dataset.validate();
  schedule.validate();
  if (net.n_params() == 0) throw ConfigError("pretrain: network is uninitialized");
  if (net.spec().in_dim != dataset.dim || net.spec().out_dim != dataset.dim) {
    throw ConfigError("pretrain: network width must match the data dimension");
  }
  if (cfg.batch < 1) throw ConfigError("pretrain: batch must be >= 1");
  if (cfg.steps < 0) throw ConfigError("pretrain: steps must be >= 0");

  Adam opt(cfg.lr);
  opt.init(net.n_params());
  Vec grad(net.n_params());
  for (long step = 0; step < cfg.steps; ++step) {
    Rng rng(seed_mix({cfg.seed, kSeedPretrainBatch, static_cast<std::uint64_t>(step)}));
    ad::Tape tape;
    ad::Var loss = tape.constant_scalar(0.0);
    for (int b = 0; b < cfg.batch; ++b) {
      const Vec x0 = dataset.sample(rng);
      const int t = rng.uniform_int(0, schedule.T - 1);
      const Vec xi = rng.normal_vec(dataset.dim);
      const double a = schedule.abar_state(t);
      const Vec x_t = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * xi;
      ad::Var diff = tape.sub(net.forward_node(tape, x_t, t), tape.constant(xi));
      loss = tape.add(loss, tape.sqnorm(diff));
    }
    loss = tape.scale(loss, 1.0 / cfg.batch);
    const double val = tape.scalar(loss);
    if (!std::isfinite(val) || val > 1e6) {
      throw NumericalError("pretrain: batch loss diverged", static_cast<int>(step));
    }
    tape.backward(loss);
    grad.setZero();
    net.add_param_grads(tape, grad);
    opt.update(net.flat(), grad);
  }
}

GridOracle dataset_oracle(const DatasetSpec& dataset, int dim) {
  dataset.validate();
  if (dataset.dim != dim) throw ConfigError("dataset oracle: dimension mismatch");
  GridOracle g = make_grid(dim);
  std::fill(g.density.begin(), g.density.end(), 0.0);
  double total_w = 0.0;
  for (double w : dataset.mode_weights) total_w += w;
  for (size_t k = 0; k < dataset.means.size(); ++k) {
    const double w = dataset.mode_weights[k] / total_w;
    const double s = dataset.scales[k];
    if (s == 0.0) {
      const int cell = g.cell_of(dataset.means[k]);
      if (cell < 0) throw ConfigError("dataset oracle: point mass outside the box");
      g.density[static_cast<size_t>(cell)] += w;
      continue;
    }
    std::vector<double> comp(g.density.size());
    double comp_total = 0.0;
    for (int c = 0; c < g.n_cells(); ++c) {
      const Vec d = g.center_of(c) - dataset.means[k];
      comp[static_cast<size_t>(c)] = std::exp(-0.5 * d.squaredNorm() / (s * s));
      comp_total += comp[static_cast<size_t>(c)];
    }
    if (comp_total <= 0.0) throw ConfigError("dataset oracle: mode has no mass in the box");
    for (size_t c = 0; c < comp.size(); ++c) g.density[c] += w * comp[c] / comp_total;
  }
  g.validate();
  return g;
}

std::vector<SelectedTransition> subsample_transitions(int T, double fraction, Rng& rng) {
  if (T < 1) throw ConfigError("subsample: T must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample: fraction must lie in (0, 1]");
  }
  const double ft = fraction * T;
  if (ft < 1.0 - 1e-9) throw ConfigError("subsample: fraction * T must be at least 1");
  const int n_sel = static_cast<int>(std::ceil(ft - 1e-9));
  const int k = n_sel - 1;  // interval count over {0..T-2}
  std::vector<SelectedTransition> out;
  out.reserve(static_cast<size_t>(n_sel));
  if (k > 0) {
    const int span = T - 1;
    int start = 0;
    for (int i = 0; i < k; ++i) {
      const int len = span / k + (i < span % k ? 1 : 0);
      const int idx = rng.uniform_int(start, start + len - 1);
      out.push_back({idx, static_cast<double>(len)});
      start += len;
    }
  }
  out.push_back({T - 1, 1.0});
  return out;
}

void FinetuneConfig::validate() const {
  weights.validate();
  baseline.validate();
  if (update_every_n_traj < 1 || n_traj_per_epoch < update_every_n_traj) {
    throw ConfigError("finetune: need n_traj_per_epoch >= update_every_n_traj >= 1");
  }
  if (grad_accum_steps < 1) throw ConfigError("finetune: grad_accum_steps must be >= 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("finetune: subsample_fraction must lie in (0, 1]");
  }
  if (epochs < 0) throw ConfigError("finetune: epochs must be >= 0");
  if (eval_every < 1) throw ConfigError("finetune: eval_every must be >= 1");
  if (lr_policy < 0.0 || lr_flow < 0.0) {
    throw ConfigError("finetune: learning rates must be >= 0");
  }
  if (g_init_scale < 0.0) throw ConfigError("finetune: g_init_scale must be >= 0");
  if (eval_batch < 1 || eval_samples < eval_batch) {
    throw ConfigError("finetune: need eval_samples >= eval_batch >= 1");
  }
}

namespace {

bool is_scalar_db(FinetuneMethod m) {
  return m == FinetuneMethod::kDagDb || m == FinetuneMethod::kResDb;
}

bool is_grad_db(FinetuneMethod m) {
  return m == FinetuneMethod::kGradDb || m == FinetuneMethod::kResGradDb;
}

bool is_residual(FinetuneMethod m) {
  return m == FinetuneMethod::kResGradDb || m == FinetuneMethod::kResDb;
}

// Log-space balance loss over the selection with the scalar flow head:
// sum_t w_t [ db_fl + lambda reg ] + sflow(x_T, T)^2.
LossPartsNode scalar_db_loss_node(ad::Tape& tape, const Policy& policy, const Policy* pretrained,
                                  const Mlp& g_phi, const Trajectory& traj,
                                  const std::vector<SelectedTransition>& selected,
                                  const NoiseSchedule& schedule, const RewardSpec& reward,
                                  const LossWeights& weights, const Policy* prev_policy,
                                  DbFlVariant variant) {
  if (selected.empty()) throw ConfigError("scalar balance loss: empty transition selection");
  ScalarFlowFn sflow{
      .eval = [&g_phi](const Vec& x, int t) { return g_phi.forward(x, t)(0); },
      .node = [&g_phi](ad::Tape& tp, const Vec& x, int t) { return g_phi.forward_node(tp, x, t); }};
  LossPartsNode parts;
  parts.fwd = tape.constant_scalar(0.0);
  parts.rev = tape.constant_scalar(0.0);
  parts.reg = tape.constant_scalar(0.0);
  for (const SelectedTransition& sel : selected) {
    const Transition tr{traj.states[static_cast<size_t>(sel.t)],
                        traj.states[static_cast<size_t>(sel.t) + 1], sel.t};
    ad::Var l =
        loss_db_fl_node(tape, policy, pretrained, sflow, tr, schedule, reward, weights.beta, variant);
    parts.fwd = tape.add(parts.fwd, tape.scale(l, sel.weight));
    if (weights.lambda_reg > 0.0 && prev_policy != nullptr) {
      ad::Var r = output_regularization_node(tape, policy, *prev_policy, tr.x_t, tr.t);
      parts.reg = tape.add(parts.reg, tape.scale(r, sel.weight * weights.lambda_reg));
    }
  }
  parts.terminal = tape.sqnorm(g_phi.forward_node(tape, traj.states.back(), schedule.T));
  parts.total = tape.add(tape.add(parts.fwd, parts.rev), tape.add(parts.terminal, parts.reg));
  return parts;
}

LossPartsNode single_loss_parts(ad::Tape& tape, ad::Var l) {
  ad::Var z = tape.constant_scalar(0.0);
  return {l, z, z, z, l};
}

}  // namespace

FinetuneState init_finetune(const Mlp& start_policy, const FinetuneConfig& cfg,
                            const NoiseSchedule& schedule) {
  cfg.validate();
  schedule.validate();
  if (start_policy.n_params() == 0) {
    throw ConfigError("init_finetune: starting policy is uninitialized");
  }
  const int d = start_policy.spec().in_dim;
  if (start_policy.spec().out_dim != d) {
    throw ConfigError("init_finetune: policy must map dim to dim");
  }

  FinetuneState st;
  st.policy = start_policy;
  st.prev_policy = start_policy;
  st.pretrained = start_policy;

  MlpSpec gs = start_policy.spec();
  gs.out_dim = is_scalar_db(cfg.method) ? 1 : d;
  gs.final_scale = cfg.g_init_scale;
  Rng grng(seed_mix({cfg.seed, kSeedInit, 1}));
  st.g_phi = Mlp(gs, schedule.T, grng);
  if (cfg.weights.use_correction) {
    MlpSpec cs = start_policy.spec();
    cs.in_dim = 2 * d;
    cs.out_dim = 1;  // scalar pair potential
    cs.final_scale = cfg.g_init_scale;
    Rng crng(seed_mix({cfg.seed, kSeedInit, 2}));
    st.correction = Mlp(cs, schedule.T, crng);
  }
  st.opt_policy = Adam(cfg.lr_policy);
  st.opt_policy.init(st.policy.n_params());
  st.opt_flow = Adam(cfg.lr_flow);
  st.opt_flow.init(st.g_phi.n_params());
  st.opt_correction = Adam(cfg.lr_flow);
  st.opt_correction.init(st.correction.n_params());

  NetPolicy sampler(st.policy, schedule);
  st.prev_batch.assign(static_cast<size_t>(cfg.n_traj_per_epoch), Trajectory{});
  parallel_for(cfg.n_traj_per_epoch, [&](long i) {
    const std::uint64_t sd =
        seed_mix({cfg.seed, kSeedTrajectory, 0, static_cast<std::uint64_t>(i)});
    st.prev_batch[static_cast<size_t>(i)] = sample_trajectory(sampler, schedule, d, sd);
  });
  return st;
}

EpochStats finetune_epoch(FinetuneState& state, const FinetuneConfig& cfg,
                          const NoiseSchedule& schedule, const RewardSpec& reward) {
  cfg.validate();
  schedule.validate();
  if (state.prev_batch.empty()) throw ConfigError("finetune_epoch: previous batch is empty");
  const int d = state.policy.spec().in_dim;
  const std::uint64_t e = static_cast<std::uint64_t>(state.epoch) + 1;

  NetPolicy sampler(state.policy, schedule);
  state.curr_batch.assign(static_cast<size_t>(cfg.n_traj_per_epoch), Trajectory{});
  parallel_for(cfg.n_traj_per_epoch, [&](long i) {
    const std::uint64_t sd = seed_mix({cfg.seed, kSeedTrajectory, e, static_cast<std::uint64_t>(i)});
    state.curr_batch[static_cast<size_t>(i)] = sample_trajectory(sampler, schedule, d, sd);
  });

  // ddpo, refl and draft chase the reward of what the policy samples now, so
  // they always consume the fresh batch; the balance losses default to the
  // one-epoch-stale batch.
  const bool fresh_only =
      cfg.method == FinetuneMethod::kDdpo || cfg.method == FinetuneMethod::kRefl ||
      cfg.method == FinetuneMethod::kDraftK || cfg.method == FinetuneMethod::kDraftLv;
  const std::vector<Trajectory>& train =
      (cfg.on_policy || fresh_only) ? state.curr_batch : state.prev_batch;

  NetPolicy policy(state.policy, schedule);
  NetPolicy prev(state.prev_policy, schedule);
  NetPolicy pre(state.pretrained, schedule);
  const bool train_flow = is_grad_db(cfg.method) || is_scalar_db(cfg.method);
  const bool train_corr = is_grad_db(cfg.method) && is_residual(cfg.method) &&
                          cfg.weights.use_correction && state.correction.n_params() > 0;

  Vec acc_p = Vec::Zero(state.policy.n_params());
  Vec acc_f = Vec::Zero(state.g_phi.n_params());
  Vec acc_c = Vec::Zero(state.correction.n_params());
  EpochStats stats;
  LossParts sums;
  long n_parts = 0;

  auto flush = [&](int count) {
    if (count <= 0) return;
    state.prev_policy.flat() = state.policy.flat();
    state.opt_policy.update(state.policy.flat(), Vec(acc_p / count));
    if (train_flow) state.opt_flow.update(state.g_phi.flat(), Vec(acc_f / count));
    if (train_corr) state.opt_correction.update(state.correction.flat(), Vec(acc_c / count));
    acc_p.setZero();
    acc_f.setZero();
    acc_c.setZero();
    ++state.updates;
    ++stats.n_updates;
  };

  if (cfg.method == FinetuneMethod::kDdpo) {
    // PPO style: the behavior policy is the sampler snapshot from the top of
    // the epoch; each window gives one surrogate loss so the advantage
    // normalization sees a whole batch.
    const Mlp behavior_net = state.policy;
    NetPolicy behavior(behavior_net, schedule);
    size_t lo = 0;
    while (lo < train.size()) {
      const size_t hi = std::min(train.size(), lo + static_cast<size_t>(cfg.update_every_n_traj));
      const std::vector<Trajectory> window(train.begin() + static_cast<long>(lo),
                                           train.begin() + static_cast<long>(hi));
      ad::Tape tape;
      ad::Var loss =
          ddpo_loss_node(tape, policy, behavior, window, reward, cfg.baseline, schedule);
      const double val = tape.scalar(loss);
      if (!std::isfinite(val)) {
        throw NumericalError("finetune_epoch: non-finite loss", static_cast<int>(state.updates));
      }
      tape.backward(loss);
      state.policy.add_param_grads(tape, acc_p);
      sums.fwd += val;
      ++n_parts;
      flush(1);
      lo = hi;
    }
  } else {
    int window = 0;
    for (size_t j = 0; j < train.size(); ++j) {
      const Trajectory& traj = train[j];
      const std::uint64_t ej = static_cast<std::uint64_t>(j);
      ad::Tape tape;
      LossPartsNode node;
      if (is_grad_db(cfg.method)) {
        Rng sub_rng(seed_mix({cfg.seed, kSeedSubsample, e, ej}));
        const auto sel = subsample_transitions(schedule.T, cfg.subsample_fraction, sub_rng);
        Rng smooth_rng(seed_mix({cfg.seed, kSeedSmoothing, e, ej}));
        node = total_finetune_loss_node(tape, policy, is_residual(cfg.method) ? &pre : nullptr,
                                        state.g_phi, train_corr ? &state.correction : nullptr,
                                        traj, sel, schedule, reward, cfg.weights, &prev,
                                        smooth_rng);
      } else if (is_scalar_db(cfg.method)) {
        Rng sub_rng(seed_mix({cfg.seed, kSeedSubsample, e, ej}));
        const auto sel = subsample_transitions(schedule.T, cfg.subsample_fraction, sub_rng);
        node = scalar_db_loss_node(
            tape, policy, is_residual(cfg.method) ? &pre : nullptr, state.g_phi, traj, sel,
            schedule, reward, cfg.weights, &prev,
            is_residual(cfg.method) ? DbFlVariant::kResidual : DbFlVariant::kPlain);
      } else if (cfg.method == FinetuneMethod::kRefl) {
        Rng rrng(seed_mix({cfg.seed, kSeedBaseline, e, ej}));
        node = single_loss_parts(
            tape, refl_loss_node(tape, policy, traj, reward, cfg.baseline, schedule, rrng));
      } else {
        Rng drng(seed_mix({cfg.seed, kSeedBaseline, e, ej}));
        const DraftVariant variant = cfg.method == FinetuneMethod::kDraftLv ? DraftVariant::kLv
                                                                            : DraftVariant::kPlain;
        node = single_loss_parts(tape, draft_loss_node(tape, policy, traj, reward, cfg.baseline.k,
                                                       variant, drng, schedule));
      }
      const double val = tape.scalar(node.total);
      if (!std::isfinite(val)) {
        throw NumericalError("finetune_epoch: non-finite loss", static_cast<int>(state.updates));
      }
      tape.backward(node.total);
      state.policy.add_param_grads(tape, acc_p);
      if (train_flow) state.g_phi.add_param_grads(tape, acc_f);
      if (train_corr) state.correction.add_param_grads(tape, acc_c);
      sums.fwd += tape.scalar(node.fwd);
      sums.rev += tape.scalar(node.rev);
      sums.terminal += tape.scalar(node.terminal);
      sums.reg += tape.scalar(node.reg);
      ++n_parts;
      ++window;
      if (window == cfg.update_every_n_traj) {
        flush(window);
        window = 0;
      }
    }
    flush(window);
  }

  state.prev_batch = std::move(state.curr_batch);
  state.curr_batch.clear();
  ++state.epoch;
  if (n_parts > 0) {
    stats.mean_parts = {sums.fwd / n_parts, sums.rev / n_parts, sums.terminal / n_parts,
                        sums.reg / n_parts};
  }
  return stats;
}

MetricsRecord evaluate(const FinetuneState& state, const FinetuneConfig& cfg,
                       const NoiseSchedule& schedule, const RewardSpec& reward,
                       const GridOracle* target, const LossParts& parts) {
  const int d = state.policy.spec().in_dim;
  NetPolicy policy(state.policy, schedule);
  NetPolicy prior(state.pretrained, schedule);
  const std::uint64_t es = seed_mix({cfg.seed, kSeedEval, static_cast<std::uint64_t>(state.epoch)});
  const std::vector<Vec> samples = sample_terminals(policy, schedule, d, cfg.eval_samples, es);
  const std::vector<Vec> head(samples.begin(), samples.begin() + cfg.eval_batch);
  // Same seed for the reference batch: an untouched policy scores exactly
  // zero prior distance, and later comparisons are noise-paired.
  const std::vector<Vec> ref = sample_terminals(prior, schedule, d, cfg.eval_batch, es);

  MetricsRecord rec;
  rec.step = state.updates;
  rec.mean_reward = mean_reward(samples, reward);
  rec.diversity = diversity(head);
  rec.prior_distance = prior_distance(head, ref);
  rec.target_tv = target != nullptr ? target_tv(samples, *target) : 0.0;
  rec.terminal_g_norm = mean_terminal_g_norm(state.g_phi, head);
  rec.loss_fwd = parts.fwd;
  rec.loss_rev = parts.rev;
  rec.loss_terminal = parts.terminal;
  rec.loss_reg = parts.reg;
  return rec;
}

std::vector<MetricsRecord> run_finetune(FinetuneState& state, const FinetuneConfig& cfg,
                                        const NoiseSchedule& schedule, const RewardSpec& reward,
                                        const GridOracle* target, const RunHooks& hooks) {
  cfg.validate();
  std::vector<MetricsRecord> rows;
  rows.push_back(evaluate(state, cfg, schedule, reward, target, LossParts{}));
  if (hooks.on_checkpoint) hooks.on_checkpoint(state, state.epoch);
  while (state.epoch < cfg.epochs) {
    EpochStats stats;
    try {
      stats = finetune_epoch(state, cfg, schedule, reward);
    } catch (const NumericalError&) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(state, state.epoch);
      throw;
    }
    if (state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs) {
      rows.push_back(evaluate(state, cfg, schedule, reward, target, stats.mean_parts));
      if (hooks.on_checkpoint) hooks.on_checkpoint(state, state.epoch);
    }
  }
  return rows;
}

}  // namespace ngfn
