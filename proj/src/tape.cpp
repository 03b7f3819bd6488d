#include "ngfn/tape.hpp"

namespace ngfn::ad {

Var Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(const Mat& v) { return push(Node{.op = Op::kConst, .value = v}); }

Var Tape::constant_scalar(double c) {
  Mat m(1, 1);
  m(0, 0) = c;
  return constant(m);
}

Var Tape::param(const double* key, const Mat& v) {
  auto it = param_cache_.find(key);
  if (it != param_cache_.end()) return Var{it->second};
  Var out = push(Node{.op = Op::kParam, .value = v});
  param_cache_.emplace(key, out.i);
  return out;
}

Var Tape::add(Var a, Var b) {
  return push(Node{.op = Op::kAdd, .a = a.i, .b = b.i, .value = val(a) + val(b)});
}

Var Tape::sub(Var a, Var b) {
  return push(Node{.op = Op::kSub, .a = a.i, .b = b.i, .value = val(a) - val(b)});
}

Var Tape::scale(Var a, double c) {
  return push(Node{.op = Op::kScale, .a = a.i, .c = c, .value = c * val(a)});
}

Var Tape::smul(Var s, Var v) {
  return push(Node{.op = Op::kSMul, .a = s.i, .b = v.i, .value = val(s)(0, 0) * val(v)});
}

Var Tape::cmul(Var a, Var b) {
  return push(Node{.op = Op::kCMul, .a = a.i, .b = b.i,
                   .value = val(a).cwiseProduct(val(b))});
}

Var Tape::matvec(Var w, Var x) {
  return push(Node{.op = Op::kMatVec, .a = w.i, .b = x.i, .value = val(w) * val(x)});
}

Var Tape::mat_tvec(Var w, Var x) {
  return push(Node{.op = Op::kMatTVec, .a = w.i, .b = x.i,
                   .value = val(w).transpose() * val(x)});
}

Var Tape::tanh(Var a) {
  return push(Node{.op = Op::kTanh, .a = a.i, .value = val(a).array().tanh().matrix()});
}

Var Tape::concat(Var a, Var b) {
  Mat v(val(a).rows() + val(b).rows(), 1);
  v.topRows(val(a).rows()) = val(a);
  v.bottomRows(val(b).rows()) = val(b);
  return push(Node{.op = Op::kConcat, .a = a.i, .b = b.i, .value = std::move(v)});
}

Var Tape::slice(Var a, int start, int len) {
  return push(Node{.op = Op::kSlice, .a = a.i, .start = start,
                   .value = val(a).middleRows(start, len)});
}

Var Tape::dot(Var a, Var b) {
  Mat v(1, 1);
  v(0, 0) = (val(a).array() * val(b).array()).sum();
  return push(Node{.op = Op::kDot, .a = a.i, .b = b.i, .value = std::move(v)});
}

Var Tape::sqnorm(Var a) {
  Mat v(1, 1);
  v(0, 0) = val(a).squaredNorm();
  return push(Node{.op = Op::kSqNorm, .a = a.i, .value = std::move(v)});
}

Var Tape::exp_scalar(Var a) {
  Mat v(1, 1);
  v(0, 0) = std::exp(val(a)(0, 0));
  return push(Node{.op = Op::kExp, .a = a.i, .value = std::move(v)});
}

Var Tape::custom(Var a, const Mat& value, VjpFn vjp) {
  return push(Node{.op = Op::kCustom, .a = a.i, .value = value, .vjp = std::move(vjp)});
}

Mat& Tape::grad_slot(int i) {
  Node& n = nodes_[static_cast<size_t>(i)];
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var seed) {
  if (val(seed).size() != 1) throw NumericalError("tape: backward seed must be scalar");
  grad_slot(seed.i)(0, 0) += 1.0;
  for (int i = seed.i; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.has_grad) continue;
    if (n.op == Op::kConst || n.op == Op::kParam) continue;  // leaves keep their grads
    // Consume the slot before propagating so a later backward() call cannot
    // re-propagate what this pass already pushed down.
    const Mat g = std::move(n.grad);
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    switch (n.op) {
      case Op::kConst:
      case Op::kParam:
        break;
      case Op::kAdd:
        grad_slot(n.a) += g;
        grad_slot(n.b) += g;
        break;
      case Op::kSub:
        grad_slot(n.a) += g;
        grad_slot(n.b) -= g;
        break;
      case Op::kScale:
        grad_slot(n.a) += n.c * g;
        break;
      case Op::kSMul: {
        grad_slot(n.a)(0, 0) += (g.array() * nodes_[static_cast<size_t>(n.b)].value.array()).sum();
        grad_slot(n.b) += nodes_[static_cast<size_t>(n.a)].value(0, 0) * g;
        break;
      }
      case Op::kCMul:
        grad_slot(n.a) += g.cwiseProduct(nodes_[static_cast<size_t>(n.b)].value);
        grad_slot(n.b) += g.cwiseProduct(nodes_[static_cast<size_t>(n.a)].value);
        break;
      case Op::kMatVec:
        grad_slot(n.a) += g * nodes_[static_cast<size_t>(n.b)].value.transpose();
        grad_slot(n.b) += nodes_[static_cast<size_t>(n.a)].value.transpose() * g;
        break;
      case Op::kMatTVec:
        grad_slot(n.a) += nodes_[static_cast<size_t>(n.b)].value * g.transpose();
        grad_slot(n.b) += nodes_[static_cast<size_t>(n.a)].value * g;
        break;
      case Op::kTanh:
        grad_slot(n.a) += g.cwiseProduct((1.0 - n.value.array().square()).matrix());
        break;
      case Op::kConcat: {
        const auto rows_a = nodes_[static_cast<size_t>(n.a)].value.rows();
        const auto rows_b = nodes_[static_cast<size_t>(n.b)].value.rows();
        grad_slot(n.a) += g.topRows(rows_a);
        grad_slot(n.b) += g.bottomRows(rows_b);
        break;
      }
      case Op::kSlice:
        grad_slot(n.a).middleRows(n.start, n.value.rows()) += g;
        break;
      case Op::kDot:
        grad_slot(n.a) += g(0, 0) * nodes_[static_cast<size_t>(n.b)].value;
        grad_slot(n.b) += g(0, 0) * nodes_[static_cast<size_t>(n.a)].value;
        break;
      case Op::kSqNorm:
        grad_slot(n.a) += 2.0 * g(0, 0) * nodes_[static_cast<size_t>(n.a)].value;
        break;
      case Op::kExp:
        grad_slot(n.a)(0, 0) += g(0, 0) * n.value(0, 0);
        break;
      case Op::kCustom:
        grad_slot(n.a) += n.vjp(nodes_[static_cast<size_t>(n.a)].value, g);
        break;
    }
  }
}

const Mat* Tape::grad_of(const double* key) const {
  auto it = param_cache_.find(key);
  if (it == param_cache_.end()) return nullptr;
  const Node& n = nodes_[static_cast<size_t>(it->second)];
  return n.has_grad ? &n.grad : nullptr;
}

Mat Tape::grad_of(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.i)];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::clear() {
  nodes_.clear();
  param_cache_.clear();
}

}  // namespace ngfn::ad
