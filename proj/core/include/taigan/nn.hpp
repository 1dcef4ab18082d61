#pragma once

// Minimal reverse-mode automatic differentiation over 5-D double tensors
// (batch, channel, z, y, x), sufficient for 3-D convolutional GANs and a
// small recurrent encoder. Each op records a closure that accumulates
// gradients into its parents; backward() replays them in reverse
// topological order.

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "taigan/random.hpp"

namespace taigan::nn {

struct Shape {
  int n = 1;
  int c = 1;
  int z = 1;
  int y = 1;
  int x = 1;

  std::size_t spatial() const { return static_cast<std::size_t>(z) * y * x; }
  std::size_t numel() const { return static_cast<std::size_t>(n) * c * spatial(); }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}
  std::size_t numel() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const { return value.shape; }
  /// Gradient buffer, allocated (zero) on first use.
  std::vector<double>& grad_buffer();
};

/// Leaf holding data that needs no gradient.
Var constant(Tensor t);
/// Trainable leaf.
Var parameter(Tensor t);

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

struct Conv3dOptions {
  std::array<int, 3> stride{1, 1, 1};   // z, y, x
  std::array<int, 3> padding{0, 0, 0};  // z, y, x
};

/// x: (N, Ci, Z, Y, X); weight: (Co, Ci, kz, ky, kx); bias: (Co) stored as (1, Co).
Var conv3d(const Var& x, const Var& weight, const Var& bias, const Conv3dOptions& opt);
Var upsample_nearest(const Var& x, int z, int y, int x_size);
Var instance_norm(const Var& x, double eps = 1e-5);
Var leaky_relu(const Var& x, double slope = 0.2);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int start, int count);
/// Stacks T tensors of shape (N, C, 1, 1, 1) into (N, C, T, 1, 1).
Var stack_z(const std::vector<Var>& steps);
/// (N, C, Z, Y, X) -> (N, C*Z*Y*X, 1, 1, 1).
Var flatten(const Var& x);
/// x: (N, F); weight: (O, F) stored as (O, F, 1, 1, 1); bias (1, O).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// gamma, beta: (N, C); each channel of x scaled and shifted, broadcast over space.
Var film(const Var& x, const Var& gamma, const Var& beta);
Var detach(const Var& x);
Var mse(const Var& a, const Var& b);
/// Mean binary cross-entropy of sigmoid(logits) against a constant label.
Var bce_with_logits(const Var& logits, double label);
Var scale(const Var& x, double factor);

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options);
  void zero_grad();
  void step();
  long long steps() const { return t_; }

  /// Moment buffers, for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(long long t) { t_ = t; }

 private:
  std::vector<Var> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

/// Normal(0, sd) fill.
Tensor random_normal(Shape s, Rng& rng, double sd);

}  // namespace taigan::nn
