#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ngfn/objectives.hpp"
#include "support/fd.hpp"
#include "support/oracle.hpp"
#include "support/testutil.hpp"

using namespace ngfn;
using ngfn::test::GaussChain;
using ngfn::test::GaussOraclePolicy;
using ngfn::test::fd_grad;
using ngfn::test::fd_grad_params;
using ngfn::test::rel_err;

namespace {

struct OracleSetup {
  NoiseSchedule sched;
  RewardSpec reward;
  double beta;
  GaussChain prior;
  GaussChain tilted;

  OracleSetup(int dim, double beta_in, Rng& rng)
      : sched(ngfn::test::random_schedule(rng)), beta(beta_in) {
    const Vec m_r = Vec::Constant(dim, 0.8);
    const double well_a = 0.9;
    reward = ngfn::test::well_reward(m_r, well_a);
    prior = GaussChain{Vec::Zero(dim), 1.0, 0.0, &sched};
    tilted = ngfn::test::tilt_by_quadratic_reward(prior, m_r, well_a, beta);
  }
};

Transition random_transition(Rng& rng, int dim, int t) {
  return {2.0 * rng.normal_vec(dim), 2.0 * rng.normal_vec(dim), t};
}

}  // namespace

TEST_CASE("policy scores match finite differences of the step log-density") {
  Rng rng(60);
  for (int rep = 0; rep < 5; ++rep) {
    const auto s = ngfn::test::random_schedule(rng);
    const Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
    const NetPolicy policy(net, s);
    const int t = rng.uniform_int(0, s.T - 1);
    const Transition tr = random_transition(rng, 2, t);

    const Vec fwd_fd = fd_grad(
        [&](const Vec& y) {
          const GaussParams p = forward_policy_params(policy, tr.x_t, t, s);
          return log_normal_density(y, p.mean, p.std);
        },
        tr.x_next);
    CHECK(rel_err(policy_score(Direction::kForward, policy, tr, s), fwd_fd) < 1e-6);

    const Vec rev_fd = fd_grad(
        [&](const Vec& y) {
          const GaussParams p = forward_policy_params(policy, y, t, s);
          return log_normal_density(tr.x_next, p.mean, p.std);
        },
        tr.x_t);
    CHECK(rel_err(policy_score(Direction::kReverse, policy, tr, s), rev_fd) < 1e-6);
  }
}

TEST_CASE("backward scores match finite differences of the noising log-density") {
  Rng rng(61);
  for (int rep = 0; rep < 5; ++rep) {
    const auto s = ngfn::test::random_schedule(rng);
    const int t = rng.uniform_int(0, s.T - 1);
    const Transition tr = random_transition(rng, 2, t);

    const auto log_q = [&](const Vec& x_t, const Vec& x_next) {
      const GaussParams p = backward_policy_params(x_next, t, s);
      return log_normal_density(x_t, p.mean, p.std);
    };
    const Vec fwd_fd = fd_grad([&](const Vec& y) { return log_q(tr.x_t, y); }, tr.x_next);
    const Vec rev_fd = fd_grad([&](const Vec& y) { return log_q(y, tr.x_next); }, tr.x_t);
    CHECK(rel_err(backward_score(Direction::kForward, tr, s), fwd_fd) < 1e-6);
    CHECK(rel_err(backward_score(Direction::kReverse, tr, s), rev_fd) < 1e-6);
  }
}

TEST_CASE("backward score closed forms in one dimension") {
  Rng rng(62);
  const auto s = ngfn::test::random_schedule(rng, 6);
  const int t = 2;
  const double r = s.ratio(t);
  const Transition tr = random_transition(rng, 1, t);
  const double s2 = 1.0 - r;
  const double rev = -(tr.x_t(0) - std::sqrt(r) * tr.x_next(0)) / s2;
  CHECK(backward_score(Direction::kReverse, tr, s)(0) == doctest::Approx(rev).epsilon(1e-13));
  CHECK(backward_score(Direction::kForward, tr, s)(0) ==
        doctest::Approx(-std::sqrt(r) * rev).epsilon(1e-13));

  // at the kernel mean both directions vanish
  Transition at_mean = tr;
  at_mean.x_t = std::sqrt(r) * tr.x_next;
  CHECK(backward_score(Direction::kReverse, at_mean, s).norm() < 1e-14);
}

TEST_CASE("residual score reductions") {
  Rng rng(63);
  const auto s = ngfn::test::random_schedule(rng);
  const Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
  const NetPolicy policy(net, s);
  const int t = 1;
  const Transition tr = random_transition(rng, 2, t);

  // identical policies cancel at eta = 1
  CHECK(residual_policy_score(Direction::kForward, policy, policy, tr, s, 1.0).norm() == 0.0);
  CHECK(residual_policy_score(Direction::kReverse, policy, policy, tr, s, 1.0).norm() == 0.0);

  // eta = 1 forward equals the mean-difference formula
  Rng rng2(64);
  const Mlp net2 = ngfn::test::small_mlp(2, 2, s.T, rng2);
  const NetPolicy other(net2, s);
  const GaussParams p1 = forward_policy_params(policy, tr.x_t, t, s);
  const GaussParams p2 = forward_policy_params(other, tr.x_t, t, s);
  const Vec mu_diff = (p1.mean - p2.mean) / (p1.std * p1.std);
  CHECK(rel_err(residual_policy_score(Direction::kForward, policy, other, tr, s, 1.0),
                mu_diff) < 1e-12);

  // eta = 0.5 forward is the weighted combination of the two scores
  const Vec got = residual_policy_score(Direction::kForward, policy, other, tr, s, 0.5);
  const Vec want = policy_score(Direction::kForward, policy, tr, s) -
                   0.5 * policy_score(Direction::kForward, other, tr, s);
  CHECK(rel_err(got, want) < 1e-13);
}

TEST_CASE("flow score parameterization special cases") {
  Rng rng(65);
  const auto s = ngfn::test::random_schedule(rng, 10);
  const RewardSpec reward = ngfn::test::mixture_reward_2d();
  Mlp g_phi = ngfn::test::small_mlp(2, 2, s.T, rng, 0.1);
  const Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
  const NetPolicy policy(net, s);

  LossWeights w;
  w.smooth_c = 0.0;
  const Vec x = rng.normal_vec(2);

  SUBCASE("beta 0 and zero net give the zero field") {
    Mlp zero_net = ngfn::test::small_mlp(2, 2, s.T, rng, 0.0);
    LossWeights w0 = w;
    w0.beta = 0.0;
    Rng r0(1);
    CHECK(fl_flow_score(zero_net, policy, {x, 3}, s, reward, w0, r0).norm() == 0.0);
  }

  SUBCASE("terminal step uses the raw reward gradient") {
    w.beta = 1.7;
    Rng r0(1);
    const Vec got = fl_flow_score(g_phi, policy, {x, s.T}, s, reward, w, r0);
    const Vec want = 1.7 * log_reward_grad(reward, x) + g_phi.forward(x, s.T);
    CHECK(rel_err(got, want) < 1e-13);
  }

  SUBCASE("attenuation defaults to the state alpha_bar") {
    CHECK(w.gamma(3, s) == s.abar_state(3));
    CHECK(w.gamma(s.T, s) == 1.0);
    LossWeights w1 = w;
    w1.gamma_mode = GammaMode::kOne;
    CHECK(w1.gamma(3, s) == 1.0);
  }

  SUBCASE("interior step matches finite differences of the reward potential") {
    w.beta = 1.1;
    const int t = 4;
    Rng r0(1);
    const Vec got = fl_flow_score(g_phi, policy, {x, t}, s, reward, w, r0) -
                    g_phi.forward(x, t);
    const Vec fd = fd_grad(
        [&](const Vec& y) {
          return w.beta * w.gamma(t, s) * log_reward(reward, predict_clean(policy, y, t, s));
        },
        x);
    CHECK(rel_err(got, fd) < 1e-5);
  }
}

TEST_CASE("balance losses vanish on the closed-form gaussian construction") {
  Rng rng(66);
  for (int rep = 0; rep < 8; ++rep) {
    OracleSetup o(rep % 2 + 1, 0.7 + 0.4 * rep, rng);
    const int dim = rep % 2 + 1;
    const GaussOraclePolicy prior_policy(o.prior);
    const GaussOraclePolicy tilted_policy(o.tilted);
    const FlowScoreFn tilted_flow = ngfn::test::flow_score_of(o.tilted);
    const FlowScoreFn res_flow = ngfn::test::residual_flow_score_of(o.tilted, o.prior);

    for (int k = 0; k < 20; ++k) {
      const int t = rng.uniform_int(0, o.sched.T - 1);
      const Transition tr = random_transition(rng, dim, t);

      CHECK(loss_grad_db(Direction::kForward, tilted_policy, tilted_flow, tr, o.sched) < 1e-10);
      CHECK(loss_grad_db(Direction::kReverse, tilted_policy, tilted_flow, tr, o.sched) < 1e-10);
      CHECK(loss_res_grad_db(Direction::kForward, tilted_policy, prior_policy, res_flow, tr,
                             o.sched, 1.0) < 1e-10);
      CHECK(loss_res_grad_db(Direction::kReverse, tilted_policy, prior_policy, res_flow, tr,
                             o.sched, 1.0) < 1e-10);
      if (t + 1 < o.sched.T) {
        const Vec x_top = 2.0 * rng.normal_vec(dim);
        CHECK(loss_bidirectional(tilted_policy, prior_policy, tr.x_t, tr.x_next, x_top, t,
                                 o.sched, 1.0) < 1e-10);
      }
    }

    // terminal constraint with the exact residual field
    const Vec x_T = 2.0 * rng.normal_vec(dim);
    CHECK(loss_grad_db_terminal(res_flow, x_T, o.reward, o.beta, o.sched.T) < 1e-10);
  }
}

TEST_CASE("scalar balance loss vanishes with the analytic log-flows") {
  Rng rng(67);
  for (int rep = 0; rep < 6; ++rep) {
    OracleSetup o(1 + rep % 2, 1.2, rng);
    const int dim = 1 + rep % 2;
    const GaussOraclePolicy tilted_policy(o.tilted);
    const ScalarFlowFn sflow = ngfn::test::db_fl_scalar_flow_of(o.tilted, o.reward, o.beta);
    for (int k = 0; k < 20; ++k) {
      const int t = rng.uniform_int(0, o.sched.T - 1);
      const Transition tr = random_transition(rng, dim, t);
      CHECK(loss_db_fl(tilted_policy, nullptr, sflow, tr, o.sched, o.reward, o.beta,
                       DbFlVariant::kPlain) < 1e-10);
    }
  }
}

TEST_CASE("residual scalar variant vanishes for trivial settings") {
  Rng rng(68);
  const auto s = ngfn::test::random_schedule(rng, 8);
  const Mlp net = ngfn::test::small_mlp(1, 1, s.T, rng);
  const NetPolicy policy(net, s);
  const RewardSpec reward = ngfn::test::mixture_reward_1d();
  const ScalarFlowFn zero_flow{.eval = [](const Vec&, int) { return 0.0; }, .node = nullptr};
  const Transition tr = random_transition(rng, 1, 3);
  CHECK(loss_db_fl(policy, &policy, zero_flow, tr, s, reward, 0.0, DbFlVariant::kResidual) ==
        0.0);
}

TEST_CASE("relative trajectory balance vanishes on the gaussian construction") {
  Rng rng(69);
  for (int rep = 0; rep < 4; ++rep) {
    OracleSetup o(1, 1.4, rng);
    const GaussOraclePolicy prior_policy(o.prior);
    const GaussOraclePolicy tilted_policy(o.tilted);
    const ScalarFlowFn res_log = ngfn::test::residual_log_flow_of(o.tilted, o.prior);
    for (int k = 0; k < 5; ++k) {
      const Trajectory traj = sample_trajectory(
          tilted_policy, o.sched, 1, seed_mix({69, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(k)}));
      CHECK(relative_tb_residual(tilted_policy, prior_policy, res_log, traj, o.reward, o.beta,
                                 o.sched) < 1e-8);
    }
  }
}

TEST_CASE("fisher integrand equals half the forward loss on every sample") {
  Rng rng(70);
  const auto s = ngfn::test::random_schedule(rng, 12);
  const Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
  const NetPolicy policy(net, s);
  const Mlp flow_net = ngfn::test::small_mlp(2, 2, s.T, rng, 0.5);
  const FlowScoreFn flow{
      .eval = [&](const Vec& x, int t) { return flow_net.forward(x, t); }, .node = nullptr};

  const Vec x_t = rng.normal_vec(2);
  Rng sample_rng(71);
  const FisherGap gap = fisher_divergence_gap(policy, flow, x_t, 5, 2000, s, sample_rng);
  CHECK(gap.max_abs_gap < 1e-10);
  CHECK(gap.fisher == doctest::Approx(gap.half_loss).epsilon(1e-12));
}

TEST_CASE("gradient losses ignore the reward normalization constant") {
  Rng rng(72);
  const auto s = ngfn::test::random_schedule(rng, 10);
  RewardSpec a = ngfn::test::mixture_reward_2d();
  RewardSpec b = a;
  for (double& w : b.mode_weights) w *= 41.0;
  b.floor *= 41.0;

  const Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
  const NetPolicy policy(net, s);
  Mlp g_phi = ngfn::test::small_mlp(2, 2, s.T, rng, 0.3);
  LossWeights w;
  w.smooth_c = 0.0;
  w.beta = 1.3;

  for (int k = 0; k < 10; ++k) {
    const int t = rng.uniform_int(0, s.T - 1);
    const Transition tr = random_transition(rng, 2, t);
    Rng r1(1), r2(1);
    const FlowScoreFn fa{.eval = [&](const Vec& x, int tt) {
                           return fl_flow_score(g_phi, policy, {x, tt}, s, a, w, r1);
                         },
                         .node = nullptr};
    const FlowScoreFn fb{.eval = [&](const Vec& x, int tt) {
                           return fl_flow_score(g_phi, policy, {x, tt}, s, b, w, r2);
                         },
                         .node = nullptr};
    const double la = loss_grad_db(Direction::kForward, policy, fa, tr, s);
    const double lb = loss_grad_db(Direction::kForward, policy, fb, tr, s);
    CHECK(std::abs(la - lb) <= 1e-12 * std::max(1.0, std::abs(la)));
    CHECK(std::abs(loss_grad_db_terminal(fa, tr.x_t, a, w.beta, s.T) -
                   loss_grad_db_terminal(fb, tr.x_t, b, w.beta, s.T)) < 1e-12);
  }
}

TEST_CASE("loss tape forms agree with the plain evaluations") {
  Rng rng(73);
  const auto s = ngfn::test::random_schedule(rng, 9);
  const Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
  const Mlp net2 = ngfn::test::small_mlp(2, 2, s.T, rng);
  const NetPolicy policy(net, s);
  const NetPolicy pretrained(net2, s);
  Mlp g_phi = ngfn::test::small_mlp(2, 2, s.T, rng, 0.4);
  const RewardSpec reward = ngfn::test::mixture_reward_2d();
  const int t = 3;
  const Transition tr = random_transition(rng, 2, t);

  const FlowScoreFn flow{
      .eval = [&](const Vec& x, int tt) { return g_phi.forward(x, tt); },
      .node = [&](ad::Tape& tp, const Vec& x, int tt) { return g_phi.forward_node(tp, x, tt); }};
  const ScalarFlowFn sflow{
      .eval = [&](const Vec& x, int tt) { return g_phi.forward(x, tt)(0); },
      .node = [&](ad::Tape& tp, const Vec& x, int tt) {
        return tp.slice(g_phi.forward_node(tp, x, tt), 0, 1);
      }};

  ad::Tape tape;
  CHECK(tape.scalar(loss_grad_db_node(tape, Direction::kForward, policy, flow, tr, s)) ==
        doctest::Approx(loss_grad_db(Direction::kForward, policy, flow, tr, s)).epsilon(1e-12));
  CHECK(tape.scalar(loss_grad_db_node(tape, Direction::kReverse, policy, flow, tr, s)) ==
        doctest::Approx(loss_grad_db(Direction::kReverse, policy, flow, tr, s)).epsilon(1e-12));
  CHECK(tape.scalar(loss_res_grad_db_node(tape, Direction::kForward, policy, pretrained, flow,
                                          tr, s, 0.8)) ==
        doctest::Approx(loss_res_grad_db(Direction::kForward, policy, pretrained, flow, tr, s,
                                         0.8))
            .epsilon(1e-12));
  CHECK(tape.scalar(loss_db_fl_node(tape, policy, &pretrained, sflow, tr, s, reward, 1.2,
                                    DbFlVariant::kResidual)) ==
        doctest::Approx(
            loss_db_fl(policy, &pretrained, sflow, tr, s, reward, 1.2, DbFlVariant::kResidual))
            .epsilon(1e-12));
  CHECK(tape.scalar(loss_db_fl_node(tape, policy, nullptr, sflow, tr, s, reward, 1.2,
                                    DbFlVariant::kPlain)) ==
        doctest::Approx(
            loss_db_fl(policy, nullptr, sflow, tr, s, reward, 1.2, DbFlVariant::kPlain))
            .epsilon(1e-12));
  CHECK(tape.scalar(loss_terminal_fl_node(tape, g_phi, tr.x_t, s.T)) ==
        doctest::Approx(loss_terminal_fl(g_phi, tr.x_t, s.T)).epsilon(1e-12));
  CHECK(tape.scalar(output_regularization_node(tape, policy, pretrained, tr.x_t, t)) ==
        doctest::Approx(output_regularization(policy, pretrained, tr.x_t, t)).epsilon(1e-12));
}

TEST_CASE("loss parameter gradients match finite differences") {
  Rng rng(74);
  const auto s = ngfn::test::random_schedule(rng, 8);
  Mlp net = ngfn::test::small_mlp(2, 2, s.T, rng);
  Mlp net2 = ngfn::test::small_mlp(2, 2, s.T, rng);
  Mlp g_phi = ngfn::test::small_mlp(2, 2, s.T, rng, 0.4);
  const NetPolicy policy(net, s);
  const NetPolicy pretrained(net2, s);
  const int t = 2;
  const Transition tr = random_transition(rng, 2, t);

  const FlowScoreFn flow{
      .eval = [&](const Vec& x, int tt) { return g_phi.forward(x, tt); },
      .node = [&](ad::Tape& tp, const Vec& x, int tt) { return g_phi.forward_node(tp, x, tt); }};

  SUBCASE("forward and reverse balance losses, policy and flow parameters") {
    for (Direction dir : {Direction::kForward, Direction::kReverse}) {
      ad::Tape tape;
      tape.backward(loss_grad_db_node(tape, dir, policy, flow, tr, s));
      Vec g_net = Vec::Zero(net.n_params());
      net.add_param_grads(tape, g_net);
      const Vec fd_net = fd_grad_params(net.flat(), [&]() {
        return loss_grad_db(dir, policy, flow, tr, s);
      });
      CHECK(rel_err(g_net, fd_net) < 1e-4);

      Vec g_flow = Vec::Zero(g_phi.n_params());
      g_phi.add_param_grads(tape, g_flow);
      const Vec fd_flow = fd_grad_params(g_phi.flat(), [&]() {
        return loss_grad_db(dir, policy, flow, tr, s);
      });
      CHECK(rel_err(g_flow, fd_flow) < 1e-4);
    }
  }

  SUBCASE("residual losses") {
    for (Direction dir : {Direction::kForward, Direction::kReverse}) {
      ad::Tape tape;
      tape.backward(loss_res_grad_db_node(tape, dir, policy, pretrained, flow, tr, s, 0.9));
      Vec g_net = Vec::Zero(net.n_params());
      net.add_param_grads(tape, g_net);
      const Vec fd_net = fd_grad_params(net.flat(), [&]() {
        return loss_res_grad_db(dir, policy, pretrained, flow, tr, s, 0.9);
      });
      CHECK(rel_err(g_net, fd_net) < 1e-4);
    }
  }

  SUBCASE("bidirectional loss") {
    const Vec x_top = rng.normal_vec(2);
    ad::Tape tape;
    tape.backward(loss_bidirectional_node(tape, policy, pretrained, tr.x_t, tr.x_next, x_top, t,
                                          s, 1.0));
    Vec g_net = Vec::Zero(net.n_params());
    net.add_param_grads(tape, g_net);
    const Vec fd_net = fd_grad_params(net.flat(), [&]() {
      return loss_bidirectional(policy, pretrained, tr.x_t, tr.x_next, x_top, t, s, 1.0);
    });
    CHECK(rel_err(g_net, fd_net) < 1e-4);
  }

  SUBCASE("scalar balance losses") {
    const RewardSpec reward = ngfn::test::mixture_reward_2d();
    const ScalarFlowFn sflow{
        .eval = [&](const Vec& x, int tt) { return g_phi.forward(x, tt)(0); },
        .node = [&](ad::Tape& tp, const Vec& x, int tt) {
          return tp.slice(g_phi.forward_node(tp, x, tt), 0, 1);
        }};
    for (DbFlVariant variant : {DbFlVariant::kPlain, DbFlVariant::kResidual}) {
      ad::Tape tape;
      tape.backward(loss_db_fl_node(tape, policy, &pretrained, sflow, tr, s, reward, 1.1,
                                    variant));
      Vec g_net = Vec::Zero(net.n_params());
      net.add_param_grads(tape, g_net);
      const Vec fd_net = fd_grad_params(net.flat(), [&]() {
        return loss_db_fl(policy, &pretrained, sflow, tr, s, reward, 1.1, variant);
      });
      CHECK(rel_err(g_net, fd_net) < 1e-4);

      Vec g_flow = Vec::Zero(g_phi.n_params());
      g_phi.add_param_grads(tape, g_flow);
      const Vec fd_flow = fd_grad_params(g_phi.flat(), [&]() {
        return loss_db_fl(policy, &pretrained, sflow, tr, s, reward, 1.1, variant);
      });
      CHECK(rel_err(g_flow, fd_flow) < 1e-4);
    }
  }

  SUBCASE("correction term") {
    Mlp correction = ngfn::test::small_mlp(4, 1, s.T, rng, 0.3);
    ad::Tape tape;
    tape.backward(corrected_residual_loss_node(tape, Direction::kForward, policy, pretrained,
                                               flow, correction, tr, s, 1.0));
    Vec g_corr = Vec::Zero(correction.n_params());
    correction.add_param_grads(tape, g_corr);
    const Vec fd_corr = fd_grad_params(correction.flat(), [&]() {
      return corrected_residual_loss(Direction::kForward, policy, pretrained, flow, correction,
                                     tr, s, 1.0);
    });
    CHECK(rel_err(g_corr, fd_corr) < 1e-4);

    // zero-init correction leaves the residual loss untouched
    Mlp zero_corr = ngfn::test::small_mlp(4, 1, s.T, rng, 0.0);
    CHECK(std::abs(corrected_residual_loss(Direction::kForward, policy, pretrained, flow,
                                           zero_corr, tr, s, 1.0) -
                   loss_res_grad_db(Direction::kForward, policy, pretrained, flow, tr, s, 1.0)) <
          1e-12);
  }
}

TEST_CASE("trajectory loss sums weighted strata plus the terminal constraint") {
  Rng rng(75);
  const auto s = ngfn::test::random_schedule(rng, 7);
  Mlp net = ngfn::test::small_mlp(1, 1, s.T, rng);
  Mlp net2 = ngfn::test::small_mlp(1, 1, s.T, rng);
  Mlp g_phi = ngfn::test::small_mlp(1, 1, s.T, rng, 0.3);
  const NetPolicy policy(net, s);
  const NetPolicy pretrained(net2, s);
  const RewardSpec reward = ngfn::test::mixture_reward_1d();

  const Trajectory traj = sample_trajectory(policy, s, 1, 99);
  LossWeights w;
  w.smooth_c = 0.0;
  w.beta = 1.2;
  w.lambda_reg = 0.5;

  std::vector<SelectedTransition> all;
  for (int t = 0; t < s.T; ++t) all.push_back({t, 1.0});

  Rng r1(5);
  const LossParts parts =
      total_finetune_loss(policy, &pretrained, g_phi, nullptr, traj, all, s, reward, w,
                          &pretrained, r1);

  // manual sum over transitions with the same flow field
  double want_fwd = 0.0, want_rev = 0.0, want_reg = 0.0;
  Rng r2(5);
  const FlowScoreFn flow{.eval = [&](const Vec& x, int tt) {
                           return fl_flow_score(g_phi, policy, {x, tt}, s, reward, w, r2);
                         },
                         .node = nullptr};
  for (int t = 0; t < s.T; ++t) {
    const Transition tr{traj.states[t], traj.states[t + 1], t};
    want_fwd += loss_res_grad_db(Direction::kForward, policy, pretrained, flow, tr, s, w.eta);
    want_rev += loss_res_grad_db(Direction::kReverse, policy, pretrained, flow, tr, s, w.eta);
    want_reg += w.lambda_reg * output_regularization(policy, pretrained, tr.x_t, t);
  }
  const double want_term = loss_terminal_fl(g_phi, traj.states.back(), s.T);

  CHECK(parts.fwd == doctest::Approx(want_fwd).epsilon(1e-10));
  CHECK(parts.rev == doctest::Approx(want_rev).epsilon(1e-10));
  CHECK(parts.reg == doctest::Approx(want_reg).epsilon(1e-10));
  CHECK(parts.terminal == doctest::Approx(want_term).epsilon(1e-12));
  CHECK(parts.total() ==
        doctest::Approx(want_fwd + want_rev + want_reg + want_term).epsilon(1e-10));
}

TEST_CASE("trajectory loss parameter gradients match finite differences") {
  Rng rng(76);
  const auto s = ngfn::test::random_schedule(rng, 6);
  Mlp net = ngfn::test::small_mlp(1, 1, s.T, rng);
  Mlp net2 = ngfn::test::small_mlp(1, 1, s.T, rng);
  Mlp g_phi = ngfn::test::small_mlp(1, 1, s.T, rng, 0.3);
  const NetPolicy policy(net, s);
  const NetPolicy pretrained(net2, s);
  const RewardSpec reward = ngfn::test::mixture_reward_1d();
  const Trajectory traj = sample_trajectory(policy, s, 1, 123);

  LossWeights w;
  w.beta = 1.1;
  w.lambda_reg = 0.3;
  w.smooth_c = 2e-3;
  w.smooth_n = 3;
  // Differentiate through every reward factor so the tape matches finite
  // differences of the plain evaluation exactly.
  w.second_order = true;

  std::vector<SelectedTransition> sel{{1, 2.5}, {s.T - 1, 1.0}};

  const auto eval_total = [&]() {
    Rng r(31);
    return total_finetune_loss(policy, &pretrained, g_phi, nullptr, traj, sel, s, reward, w,
                               &pretrained, r)
        .total();
  };

  ad::Tape tape;
  Rng r(31);
  const LossPartsNode parts = total_finetune_loss_node(tape, policy, &pretrained, g_phi, nullptr,
                                                       traj, sel, s, reward, w, &pretrained, r);
  CHECK(tape.scalar(parts.total) == doctest::Approx(eval_total()).epsilon(1e-12));
  tape.backward(parts.total);

  Vec g_net = Vec::Zero(net.n_params());
  net.add_param_grads(tape, g_net);
  CHECK(rel_err(g_net, fd_grad_params(net.flat(), eval_total)) < 1e-4);

  Vec g_phi_grad = Vec::Zero(g_phi.n_params());
  g_phi.add_param_grads(tape, g_phi_grad);
  CHECK(rel_err(g_phi_grad, fd_grad_params(g_phi.flat(), eval_total)) < 1e-4);
}

TEST_CASE("trajectory loss validates its selection") {
  Rng rng(77);
  const auto s = ngfn::test::random_schedule(rng, 5);
  Mlp net = ngfn::test::small_mlp(1, 1, s.T, rng);
  Mlp g_phi = ngfn::test::small_mlp(1, 1, s.T, rng, 0.0);
  const NetPolicy policy(net, s);
  const RewardSpec reward = ngfn::test::mixture_reward_1d();
  const Trajectory traj = sample_trajectory(policy, s, 1, 7);
  LossWeights w;
  w.smooth_c = 0.0;
  Rng r(1);

  const auto run = [&](std::vector<SelectedTransition> sel) {
    Rng rr(1);
    return total_finetune_loss(policy, nullptr, g_phi, nullptr, traj, sel, s, reward, w, nullptr,
                               rr);
  };
  CHECK_THROWS_AS(run({}), ConfigError);
  CHECK_THROWS_AS(run({{0, 1.0}}), ConfigError);                 // missing final transition
  CHECK_THROWS_AS(run({{s.T, 1.0}, {s.T - 1, 1.0}}), ConfigError);  // out of range
  CHECK_THROWS_AS(run({{s.T - 1, 0.0}}), ConfigError);           // nonpositive weight
  CHECK_NOTHROW(run({{s.T - 1, 1.0}}));
}

TEST_CASE("weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  LossWeights bad = w;
  bad.beta = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = w;
  bad.eta = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = w;
  bad.smooth_n = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = w;
  bad.lambda_reg = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
