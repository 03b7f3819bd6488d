#include "ngfn/mlp.hpp"

#include <cmath>

namespace ngfn {

Mlp::Mlp(const MlpSpec& spec, int time_scale, Rng& rng)
    : spec_(spec), time_scale_(time_scale) {
  if (spec.time_features % 2 != 0) throw ConfigError("mlp: time_features must be even");
  if (spec.depth < 1 || spec.hidden < 1) throw ConfigError("mlp: depth and hidden must be >= 1");
  const int in_total = spec.in_dim + spec.time_features;
  std::vector<int> dims;
  dims.push_back(in_total);
  for (int l = 0; l < spec.depth; ++l) dims.push_back(spec.hidden);
  dims.push_back(spec.out_dim);

  int off = 0;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Block b;
    b.rows = dims[l + 1];
    b.cols = dims[l];
    b.w_off = off;
    off += b.rows * b.cols;
    b.b_off = off;
    off += b.rows;
    blocks_.push_back(b);
  }
  flat_ = Vec::Zero(off);
  for (const Block& b : blocks_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(b.cols));
    for (int i = 0; i < b.rows * b.cols; ++i) flat_[b.w_off + i] = scale * rng.normal();
    // biases stay zero
  }
}

Eigen::Map<const Mat> Mlp::weight(int layer) const {
  const Block& b = blocks_[static_cast<size_t>(layer)];
  return {flat_.data() + b.w_off, b.rows, b.cols};
}

Eigen::Map<const Vec> Mlp::bias(int layer) const {
  const Block& b = blocks_[static_cast<size_t>(layer)];
  return {flat_.data() + b.b_off, b.rows};
}

Vec Mlp::time_embedding(int t) const {
  const int half = spec_.time_features / 2;
  const double tau = static_cast<double>(t) / static_cast<double>(time_scale_);
  Vec e(spec_.time_features);
  double freq = M_PI;
  for (int j = 0; j < half; ++j) {
    e[2 * j] = std::sin(freq * tau);
    e[2 * j + 1] = std::cos(freq * tau);
    freq *= 2.0;
  }
  return e;
}

Vec Mlp::forward(const Vec& x, int t) const {
  Vec a(spec_.in_dim + spec_.time_features);
  a.head(spec_.in_dim) = x;
  a.tail(spec_.time_features) = time_embedding(t);
  const int L = n_layers();
  for (int l = 0; l < L; ++l) {
    Vec z = weight(l) * a + bias(l);
    if (l + 1 < L) {
      a = z.array().tanh().matrix();
    } else {
      a = spec_.final_scale * z;
    }
  }
  return a;
}

Vec Mlp::vjp_input(const Vec& x, int t, const Vec& cot) const {
  const int L = n_layers();
  std::vector<Vec> acts(static_cast<size_t>(L) + 1);
  acts[0].resize(spec_.in_dim + spec_.time_features);
  acts[0].head(spec_.in_dim) = x;
  acts[0].tail(spec_.time_features) = time_embedding(t);
  for (int l = 0; l < L; ++l) {
    Vec z = weight(l) * acts[static_cast<size_t>(l)] + bias(l);
    acts[static_cast<size_t>(l + 1)] =
        (l + 1 < L) ? Vec(z.array().tanh().matrix()) : Vec(spec_.final_scale * z);
  }
  Vec u = spec_.final_scale * (weight(L - 1).transpose() * cot);
  for (int l = L - 2; l >= 0; --l) {
    const Vec& a_next = acts[static_cast<size_t>(l + 1)];
    u = u.cwiseProduct((1.0 - a_next.array().square()).matrix());
    u = weight(l).transpose() * u;
  }
  return u.head(spec_.in_dim);
}

ad::Var Mlp::param_node(ad::Tape& tape, int offset, int rows, int cols) const {
  return tape.param(flat_.data() + offset,
                    Eigen::Map<const Mat>(flat_.data() + offset, rows, cols));
}

ad::Var Mlp::forward_node(ad::Tape& tape, ad::Var x_node, int t) const {
  ad::Var a = tape.concat(x_node, tape.constant(time_embedding(t)));
  const int L = n_layers();
  for (int l = 0; l < L; ++l) {
    const Block& blk = blocks_[static_cast<size_t>(l)];
    ad::Var w = param_node(tape, blk.w_off, blk.rows, blk.cols);
    ad::Var b = param_node(tape, blk.b_off, blk.rows, 1);
    ad::Var z = tape.add(tape.matvec(w, a), b);
    a = (l + 1 < L) ? tape.tanh(z) : tape.scale(z, spec_.final_scale);
  }
  return a;
}

ad::Var Mlp::forward_node(ad::Tape& tape, const Vec& x, int t) const {
  return forward_node(tape, tape.constant(x), t);
}

ad::Var Mlp::vjp_input_node(ad::Tape& tape, ad::Var x_node, int t, ad::Var cot) const {
  const int L = n_layers();
  std::vector<ad::Var> acts;
  acts.reserve(static_cast<size_t>(L) + 1);
  acts.push_back(tape.concat(x_node, tape.constant(time_embedding(t))));
  for (int l = 0; l < L; ++l) {
    const Block& blk = blocks_[static_cast<size_t>(l)];
    ad::Var w = param_node(tape, blk.w_off, blk.rows, blk.cols);
    ad::Var b = param_node(tape, blk.b_off, blk.rows, 1);
    ad::Var z = tape.add(tape.matvec(w, acts.back()), b);
    acts.push_back((l + 1 < L) ? tape.tanh(z) : tape.scale(z, spec_.final_scale));
  }
  const Block& last = blocks_[static_cast<size_t>(L - 1)];
  ad::Var u = tape.scale(tape.mat_tvec(param_node(tape, last.w_off, last.rows, last.cols), cot),
                         spec_.final_scale);
  for (int l = L - 2; l >= 0; --l) {
    ad::Var a_next = acts[static_cast<size_t>(l + 1)];
    ad::Var ones = tape.constant(Vec::Ones(tape.val(a_next).rows()));
    u = tape.cmul(u, tape.sub(ones, tape.cmul(a_next, a_next)));
    const Block& blk = blocks_[static_cast<size_t>(l)];
    u = tape.mat_tvec(param_node(tape, blk.w_off, blk.rows, blk.cols), u);
  }
  return tape.slice(u, 0, spec_.in_dim);
}

void Mlp::add_param_grads(const ad::Tape& tape, Vec& grad_out) const {
  for (const Block& b : blocks_) {
    if (const Mat* gw = tape.grad_of(flat_.data() + b.w_off)) {
      grad_out.segment(b.w_off, b.rows * b.cols) +=
          Eigen::Map<const Vec>(gw->data(), b.rows * b.cols);
    }
    if (const Mat* gb = tape.grad_of(flat_.data() + b.b_off)) {
      grad_out.segment(b.b_off, b.rows) += Eigen::Map<const Vec>(gb->data(), b.rows);
    }
  }
}

void Adam::init(int n) {
  m_ = Vec::Zero(n);
  v_ = Vec::Zero(n);
  steps_ = 0;
}

void Adam::update(Vec& params, const Vec& grad) {
  if (m_.size() != params.size()) init(static_cast<int>(params.size()));
  ++steps_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  params -= (lr_ / c1) * m_.cwiseQuotient(((v_ / c2).cwiseSqrt().array() + eps_).matrix());
}

}  // namespace ngfn
