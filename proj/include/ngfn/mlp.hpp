#pragma once

#include <vector>

#include "ngfn/common.hpp"
#include "ngfn/rng.hpp"
#include "ngfn/tape.hpp"

namespace ngfn {

struct MlpSpec {
  int in_dim = 1;   // data input width, before time features are appended
  int out_dim = 1;
  int hidden = 64;
  int depth = 3;            // hidden layer count
  int time_features = 16;   // sinusoidal features of t/T, must be even
  double final_scale = 1.0; // multiplies the raw output; tiny values give a
                            // near-zero function at init without stalling Adam
};

// Fully connected tanh network over [x; time_features(t)].
// Parameters live in one flat vector so optimizers, checkpoints and
// finite-difference probes all see a single contiguous array.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpSpec& spec, int time_scale, Rng& rng);

  const MlpSpec& spec() const { return spec_; }
  int time_scale() const { return time_scale_; }
  int n_params() const { return static_cast<int>(flat_.size()); }
  Vec& flat() { return flat_; }
  const Vec& flat() const { return flat_; }

  int n_layers() const { return spec_.depth + 1; }
  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<const Vec> bias(int layer) const;

  Vec time_embedding(int t) const;

  Vec forward(const Vec& x, int t) const;
  // (d forward / d x)^T cot, restricted to the data block of the input.
  Vec vjp_input(const Vec& x, int t, const Vec& cot) const;

  ad::Var forward_node(ad::Tape& tape, ad::Var x_node, int t) const;
  ad::Var forward_node(ad::Tape& tape, const Vec& x, int t) const;
  // Input-VJP spelled out as tape ops, so parameter gradients flow through it.
  ad::Var vjp_input_node(ad::Tape& tape, ad::Var x_node, int t, ad::Var cot) const;

  // Accumulates d(seed)/d(params) from a tape that used *_node above.
  void add_param_grads(const ad::Tape& tape, Vec& grad_out) const;

 private:
  struct Block {
    int w_off, rows, cols, b_off;
  };
  ad::Var param_node(ad::Tape& tape, int offset, int rows, int cols) const;

  MlpSpec spec_;
  int time_scale_ = 1;
  std::vector<Block> blocks_;
  Vec flat_;
};

// Adam with bias correction; hyperparameters default to the common choice.
class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr) : lr_(lr) {}
  void init(int n);
  void update(Vec& params, const Vec& grad);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  Vec& m() { return m_; }
  Vec& v() { return v_; }
  long& steps() { return steps_; }
  const Vec& m() const { return m_; }
  const Vec& v() const { return v_; }
  long steps() const { return steps_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  Vec m_, v_;
  long steps_ = 0;
};

}  // namespace ngfn
