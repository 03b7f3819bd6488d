#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "ngfn/common.hpp"

namespace ngfn::ad {

// Reverse-mode tape over vector/matrix-valued nodes. Vectors are stored as
// n x 1 matrices and scalars as 1 x 1, so one node type covers everything.
// Nodes are appended in evaluation order, which is already a topological
// order, and backward() walks the list once in reverse.
//
// Reverse-direction scores need d(mu)/dx products; those are built by
// spelling out the network's input-VJP chain with these same primitives,
// so a single first-order backward pass covers every loss in the project.

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Custom vector->vector functions (analytic reward gradients and the like)
// provide their own VJP: (input value, upstream grad) -> downstream grad.
using VjpFn = std::function<Mat(const Mat&, const Mat&)>;

class Tape {
 public:
  Var constant(const Mat& v);
  Var constant_scalar(double c);

  // Parameter leaf. Leaves are cached by `key` (the backing storage pointer),
  // so repeated uses of one parameter accumulate into a single gradient.
  Var param(const double* key, const Mat& v);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var smul(Var s, Var v);  // (1x1 node) * vector node
  Var cmul(Var a, Var b);  // elementwise
  Var matvec(Var w, Var x);
  Var mat_tvec(Var w, Var x);  // w^T x
  Var tanh(Var a);
  Var concat(Var a, Var b);
  Var slice(Var a, int start, int len);
  Var dot(Var a, Var b);
  Var sqnorm(Var a);
  Var exp_scalar(Var a);
  // `value` must equal the custom function applied to val(a).
  Var custom(Var a, const Mat& value, VjpFn vjp);

  const Mat& val(Var v) const { return nodes_[static_cast<size_t>(v.i)].value; }
  double scalar(Var v) const { return val(v)(0, 0); }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Seeds d(seed)/d(seed) = 1 and accumulates gradients for every node that
  // feeds the 1x1 `seed`. May be called repeatedly; leaf (constant/parameter)
  // gradients add up across calls, interior slots are consumed by each pass.
  void backward(Var seed);

  // Gradient of the last backward seed(s) w.r.t. a parameter leaf, or
  // nullptr when the parameter never entered the graph.
  const Mat* grad_of(const double* key) const;

  Mat grad_of(Var v) const;

  void clear();

 private:
  enum class Op {
    kConst, kParam, kAdd, kSub, kScale, kSMul, kCMul, kMatVec, kMatTVec,
    kTanh, kConcat, kSlice, kDot, kSqNorm, kExp, kCustom,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double c = 0.0;
    int start = 0;
    Mat value;
    Mat grad;
    bool has_grad = false;
    VjpFn vjp;
  };

  Var push(Node&& n);
  Mat& grad_slot(int i);

  std::vector<Node> nodes_;
  std::unordered_map<const double*, int> param_cache_;
};

}  // namespace ngfn::ad
