#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dora::nn {

// Rows are samples, columns are features.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class Activation : std::uint8_t { kIdentity, kMish };

double softplus(double x);
double mish(double x);
// d/dx mish(x) = tanh(sp(x)) + x * sech^2(sp(x)) * sigmoid(x)
double mish_derivative(double x);

Vector softmax(const Vector& logits);
// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng);

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);
  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  // dims = {in, h1, ..., out}. Hidden layers use `hidden`, the last layer
  // `output`. Weights Glorot-uniform, biases zero.
  static Mlp create(std::span<const std::size_t> dims, Activation hidden, Activation output,
                    Rng& rng);

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  // Distinct per object; copies get a fresh id so tapes cannot cross over.
  std::uint64_t instance_id() const { return id_; }

 private:
  static std::uint64_t next_id();

  std::vector<DenseLayer> layers_;
  std::uint64_t id_ = next_id();
};

// Everything the backward pass needs from one forward pass.
struct GradTape {
  std::uint64_t net_id = 0;
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  bool consumed = false;
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

struct MlpGrad {
  std::vector<LayerGrad> layers;
  Matrix input;  // d loss / d batch

  // Zero gradients shaped like `net`.
  static MlpGrad zeros_like(const Mlp& net);
  void accumulate(const MlpGrad& other);
};

struct ForwardResult {
  Matrix output;
  GradTape tape;
};

// Throws std::invalid_argument on shape mismatch.
ForwardResult mlp_forward(const Mlp& net, const Matrix& batch);
// Forward pass without recording.
Matrix mlp_infer(const Mlp& net, const Matrix& batch);
// Marks the tape consumed. Throws std::logic_error on a stale, foreign or
// already-consumed tape.
MlpGrad mlp_backward(const Mlp& net, GradTape& tape, const Matrix& grad_out);

// A named parameter block and its gradient, both flat views.
struct ParamBlock {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

// Appends weight/bias blocks of `net` with gradients from `grad`.
void append_blocks(std::vector<ParamBlock>& out, const std::string& prefix, Mlp& net,
                   const MlpGrad& grad);

struct AdamWConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Moments are created on the first step and
// tied to the block order and sizes seen then.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
  // p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
  // Throws NumericalError naming the block if a gradient is not finite; no
  // parameter is touched in that case.
  void step(std::span<const ParamBlock> blocks);

  const AdamWConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Central differences (f(p+h) - f(p-h)) / 2h for every coordinate of
// `params`. Parameters are restored afterwards.
std::vector<double> numerical_gradient(const std::function<double()>& loss,
                                       std::span<double> params, double h = 1e-4);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace dora::nn
