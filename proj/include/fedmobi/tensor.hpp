#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fedmobi/errors.hpp"

namespace fedmobi {

struct GraphNode;

// Dense row-major 64-bit tensor with reverse-mode autodiff. Copies share the
// underlying buffers (value-semantic handle). A gradient buffer exists if and
// only if requires_grad is set; ops propagate requires_grad from inputs, so a
// graph is only ever built along trainable branches and a forward pass over
// frozen tensors allocates no nodes at all.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  bool requires_grad() const { return requires_grad_; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Bit-pattern digest of the payload (shape + data), grad excluded.
  std::uint64_t checksum() const;

  std::shared_ptr<GraphNode> node;  // autodiff edge; null for leaves and frozen results

 private:
  std::vector<std::size_t> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

struct GraphNode {
  std::vector<Tensor> parents;
  // Receives the op output; reads its grad, accumulates into parents' grads.
  std::function<void(const Tensor&)> backward;
};

// ---- ops ----
// Shapes are explicit; there is no broadcasting beyond what each op states.
// Every op validates shapes and throws ShapeError on mismatch.

Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                      // [m,n] -> [n,m]
Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);      // [m,n] + [n], row broadcast
Tensor scale(const Tensor& a, double s);
Tensor affine(const Tensor& a, double mul, double shift);
Tensor broadcast_scale(const Tensor& x, const Tensor& s);  // s is a 1-element tensor
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);                    // over the last dim
Tensor softmax(const Tensor& x);                        // over the last dim
Tensor embedding(const Tensor& table, const std::vector<std::uint32_t>& ids);
Tensor mean_seq(const Tensor& x);                       // [b,s,d] -> [b,d]
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor mse(const Tensor& pred, const Tensor& target);   // scalar, mean over elements
Tensor sum_squares(const Tensor& x);                    // scalar
Tensor cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& labels);

// Reverse-mode sweep from a scalar loss. Accumulates into .grad of every
// trainable tensor reachable from `loss`; never touches frozen tensors.
void backward(const Tensor& loss);

// Matmul FLOP tracing (2*m*k*n per call) for counting oracles.
void flop_trace_reset();
void flop_trace_enable(bool on);
double flop_trace_total();

// ---- parameters and optimizer ----

// Named trainable tensors in deterministic (sorted) order.
class ParamGroup {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  void zero_grads();
  std::uint64_t checksum() const;

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight decay Adam over a ParamGroup. Moment buffers keyed by
// parameter name; iteration order is the group's sorted order.
class AdamW {
 public:
  AdamW(ParamGroup& params, AdamWConfig cfg);
  void step();
  void zero_grad();
  std::uint64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParamGroup& params_;
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// Central finite differences vs reverse mode over every coordinate of every
// parameter in the group. Returns the max relative error, where relative is
// |a-n| / max(|a|, |n|, 1e-3) (the floor keeps FD roundoff on near-zero
// coordinates from registering as disagreement).
double grad_check(const std::function<Tensor()>& f, ParamGroup& params, double eps = 1e-5);

}  // namespace fedmobi
