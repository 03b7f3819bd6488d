#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ngfn/tape.hpp"
#include "ngfn/rng.hpp"
#include "support/fd.hpp"

using namespace ngfn;
using ngfn::ad::Tape;
using ngfn::ad::Var;
using ngfn::test::fd_grad;
using ngfn::test::rel_err;

namespace {

// Builds f(x) on a fresh tape and returns its value; `build` maps the input
// node to a 1x1 output node.
double eval_scalar(const std::function<Var(Tape&, Var)>& build, const Vec& x) {
  Tape tape;
  return tape.scalar(build(tape, tape.constant(x)));
}

// Gradient of the same function at x via the tape.
Vec tape_grad(const std::function<Var(Tape&, Var)>& build, const Vec& x) {
  Tape tape;
  Var in = tape.constant(x);
  Var out = build(tape, in);
  tape.backward(out);
  return tape.grad_of(in);
}

void check_grad(const std::function<Var(Tape&, Var)>& build, const Vec& x) {
  const Vec fd = fd_grad([&](const Vec& y) { return eval_scalar(build, y); }, x);
  const Vec g = tape_grad(build, x);
  CHECK(rel_err(g, fd) < 1e-7);
}

}  // namespace

TEST_CASE("basic arithmetic ops match finite differences") {
  Rng rng(1);
  const Vec x = rng.normal_vec(5);
  const Vec c = rng.normal_vec(5);

  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.add(in, t.constant(c))); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.sub(t.constant(c), in)); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.scale(in, -2.5)); }, x);
  check_grad([&](Tape& t, Var in) { return t.dot(in, t.constant(c)); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.cmul(in, t.constant(c))); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.tanh(in)); }, x);
}

TEST_CASE("matrix ops match finite differences") {
  Rng rng(2);
  Mat W(3, 5);
  for (int i = 0; i < W.size(); ++i) W.data()[i] = rng.normal();
  const Vec x = rng.normal_vec(5);
  const Vec y = rng.normal_vec(3);

  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.matvec(t.constant(W), in)); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.mat_tvec(t.constant(W), in)); }, y);

  // gradient w.r.t. the matrix itself
  const auto f_mat = [&](const Mat& M) {
    Tape t;
    return t.scalar(t.sqnorm(t.matvec(t.constant(M), t.constant(x))));
  };
  Tape t;
  Var w = t.constant(W);
  t.backward(t.sqnorm(t.matvec(w, t.constant(x))));
  Mat gw = t.grad_of(w);
  for (int i = 0; i < W.rows(); ++i) {
    for (int j = 0; j < W.cols(); ++j) {
      Mat Wp = W, Wm = W;
      Wp(i, j) += 1e-5;
      Wm(i, j) -= 1e-5;
      const double fd = (f_mat(Wp) - f_mat(Wm)) / 2e-5;
      CHECK(std::abs(gw(i, j) - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("structural ops match finite differences") {
  Rng rng(3);
  const Vec x = rng.normal_vec(4);
  const Vec c = rng.normal_vec(3);

  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.concat(in, t.constant(c))); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.concat(t.constant(c), in)); }, x);
  check_grad([&](Tape& t, Var in) { return t.sqnorm(t.slice(in, 1, 2)); }, x);
  check_grad(
      [&](Tape& t, Var in) { return t.exp_scalar(t.scale(t.sqnorm(in), -0.5)); }, x);
  check_grad(
      [&](Tape& t, Var in) {
        Var s = t.dot(in, t.constant(Vec(x)));
        return t.sqnorm(t.smul(s, in));
      },
      x);
}

TEST_CASE("custom op uses the supplied vjp") {
  Rng rng(4);
  const Vec x = rng.normal_vec(4);
  const auto cube = [](Tape& t, Var in) {
    const Mat v = t.val(in).array().cube().matrix();
    Var c = t.custom(in, v, [](const Mat& a, const Mat& g) -> Mat {
      return (3.0 * a.array().square() * g.array()).matrix();
    });
    return t.sqnorm(c);
  };
  check_grad(cube, x);
}

TEST_CASE("parameter leaves are cached and accumulate") {
  Vec p(3);
  p << 0.5, -1.0, 2.0;
  Vec a(3), b(3);
  a << 1.0, 2.0, 3.0;
  b << -1.0, 0.5, 4.0;

  Tape t;
  Var p1 = t.param(p.data(), p);
  Var p2 = t.param(p.data(), p);
  CHECK(p1.i == p2.i);  // same leaf, not a duplicate

  Var out = t.add(t.dot(p1, t.constant(a)), t.dot(p2, t.constant(b)));
  t.backward(out);
  const Mat* g = t.grad_of(p.data());
  REQUIRE(g != nullptr);
  CHECK(rel_err(Vec(*g), Vec(a + b)) == 0.0);

  double other = 0.0;
  CHECK(t.grad_of(&other) == nullptr);
}

TEST_CASE("repeated backward accumulates gradients") {
  Vec p(2);
  p << 1.0, 2.0;
  Vec a(2), b(2);
  a << 3.0, 4.0;
  b << -1.0, 5.0;

  Tape t;
  Var leaf = t.param(p.data(), p);
  Var f1 = t.dot(leaf, t.constant(a));
  Var f2 = t.dot(leaf, t.constant(b));
  t.backward(f1);
  t.backward(f2);
  CHECK(rel_err(Vec(*t.grad_of(p.data())), Vec(a + b)) == 0.0);
}

TEST_CASE("clear resets nodes and parameter cache") {
  Vec p(2);
  p << 1.0, 2.0;
  Tape t;
  t.param(p.data(), p);
  CHECK(t.size() == 1);
  t.clear();
  CHECK(t.size() == 0);
  Var leaf = t.param(p.data(), p);
  t.backward(t.dot(leaf, t.constant(Vec(p))));
  CHECK(t.grad_of(p.data()) != nullptr);
}
