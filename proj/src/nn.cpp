#include "dora/nn.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "dora/error.hpp"

namespace dora::nn {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double mish(double x) { return x * std::tanh(softplus(x)); }

double mish_derivative(double x) {
  const double sp = softplus(x);
  const double t = std::tanh(sp);
  const double sigmoid = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return t + x * (1.0 - t * t) * sigmoid;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - m);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  return out;
}

Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  // Fill row by row so the draw order does not depend on storage order.
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  }
  return w;
}

std::uint64_t Mlp::next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Mlp needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) throw std::invalid_argument("Mlp: bias/weight shape mismatch");
    if (i > 0 && l.in_dim() != layers_[i - 1].out_dim()) {
      throw std::invalid_argument("Mlp: layer " + std::to_string(i) + " input does not chain");
    }
  }
}

Mlp::Mlp(const Mlp& other) : layers_(other.layers_), id_(next_id()) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    layers_ = other.layers_;
    id_ = next_id();
  }
  return *this;
}

Mlp Mlp::create(std::span<const std::size_t> dims, Activation hidden, Activation output, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp::create needs at least {in, out}");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) throw std::invalid_argument("Mlp::create: zero dimension");
    DenseLayer l;
    l.weight = glorot_uniform(dims[i + 1], dims[i], dims[i], dims[i + 1], rng);
    l.bias = Vector::Zero(static_cast<Eigen::Index>(dims[i + 1]));
    l.activation = i + 2 == dims.size() ? output : hidden;
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

MlpGrad MlpGrad::zeros_like(const Mlp& net) {
  MlpGrad g;
  for (const auto& l : net.layers()) {
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return g;
}

void MlpGrad::accumulate(const MlpGrad& other) {
  if (other.layers.size() != layers.size()) throw std::invalid_argument("MlpGrad: depth mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
}

namespace {

void apply_activation(Activation a, const Matrix& pre, Matrix& out) {
  if (a == Activation::kIdentity) {
    out = pre;
    return;
  }
  out = pre.unaryExpr([](double x) { return mish(x); });
}

void check_input(const Mlp& net, const Matrix& batch) {
  if (net.empty()) throw std::invalid_argument("forward through an empty Mlp");
  if (static_cast<std::size_t>(batch.cols()) != net.in_dim()) {
    throw std::invalid_argument("Mlp expects " + std::to_string(net.in_dim()) + " input columns, got " +
                                std::to_string(batch.cols()));
  }
}

}  // namespace

ForwardResult mlp_forward(const Mlp& net, const Matrix& batch) {
  check_input(net, batch);
  ForwardResult r;
  r.tape.net_id = net.instance_id();
  Matrix x = batch;
  for (const auto& l : net.layers()) {
    Matrix pre = x * l.weight.transpose();
    pre.rowwise() += l.bias.transpose();
    Matrix out;
    apply_activation(l.activation, pre, out);
    r.tape.inputs.push_back(std::move(x));
    r.tape.pre.push_back(std::move(pre));
    x = std::move(out);
  }
  r.output = std::move(x);
  return r;
}

Matrix mlp_infer(const Mlp& net, const Matrix& batch) {
  check_input(net, batch);
  Matrix x = batch;
  for (const auto& l : net.layers()) {
    Matrix pre = x * l.weight.transpose();
    pre.rowwise() += l.bias.transpose();
    apply_activation(l.activation, pre, x);
  }
  return x;
}

MlpGrad mlp_backward(const Mlp& net, GradTape& tape, const Matrix& grad_out) {
  if (tape.consumed) throw std::logic_error("GradTape already consumed by a backward pass");
  if (tape.net_id != net.instance_id() || tape.inputs.size() != net.depth()) {
    throw std::logic_error("GradTape was recorded on a different network");
  }
  for (std::size_t i = 0; i < net.depth(); ++i) {
    const auto& l = net.layers()[i];
    if (static_cast<std::size_t>(tape.inputs[i].cols()) != l.in_dim() ||
        static_cast<std::size_t>(tape.pre[i].cols()) != l.out_dim()) {
      throw std::logic_error("GradTape is stale: layer shapes changed since the forward pass");
    }
  }
  const auto& last = tape.pre.back();
  if (grad_out.rows() != last.rows() || grad_out.cols() != last.cols()) {
    throw std::invalid_argument("grad_out shape does not match the forward output");
  }
  tape.consumed = true;

  MlpGrad g;
  g.layers.resize(net.depth());
  Matrix upstream = grad_out;
  for (std::size_t k = net.depth(); k-- > 0;) {
    const auto& l = net.layers()[k];
    Matrix delta;
    if (l.activation == Activation::kMish) {
      delta = upstream.cwiseProduct(tape.pre[k].unaryExpr([](double x) { return mish_derivative(x); }));
    } else {
      delta = std::move(upstream);
    }
    g.layers[k].weight = delta.transpose() * tape.inputs[k];
    g.layers[k].bias = delta.colwise().sum().transpose();
    upstream = delta * l.weight;
  }
  g.input = std::move(upstream);
  return g;
}

void append_blocks(std::vector<ParamBlock>& out, const std::string& prefix, Mlp& net,
                   const MlpGrad& grad) {
  if (grad.layers.size() != net.depth()) throw std::invalid_argument("append_blocks: depth mismatch");
  for (std::size_t i = 0; i < net.depth(); ++i) {
    auto& l = net.layers()[i];
    const auto& gl = grad.layers[i];
    const std::string base = prefix + "." + std::to_string(i);
    out.push_back({base + ".weight", {l.weight.data(), static_cast<std::size_t>(l.weight.size())},
                   {gl.weight.data(), static_cast<std::size_t>(gl.weight.size())}});
    out.push_back({base + ".bias", {l.bias.data(), static_cast<std::size_t>(l.bias.size())},
                   {gl.bias.data(), static_cast<std::size_t>(gl.bias.size())}});
  }
}

void AdamW::step(std::span<const ParamBlock> blocks) {
  for (const auto& b : blocks) {
    if (b.value.size() != b.grad.size()) {
      throw std::invalid_argument("AdamW: block '" + b.name + "' value/grad size mismatch");
    }
    for (double g : b.grad) {
      if (!std::isfinite(g)) throw NumericalError("AdamW: non-finite gradient in block '" + b.name + "'");
    }
  }
  if (t_ == 0 && m_.empty()) {
    for (const auto& b : blocks) {
      m_.emplace_back(b.value.size(), 0.0);
      v_.emplace_back(b.value.size(), 0.0);
    }
  }
  if (m_.size() != blocks.size()) throw std::invalid_argument("AdamW: block count changed between steps");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (m_[i].size() != blocks[i].value.size()) {
      throw std::invalid_argument("AdamW: block '" + blocks[i].name + "' changed size");
    }
  }

  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto value = blocks[i].value;
    auto grad = blocks[i].grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double p = value[j];
      value[j] = p - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps)) - c.lr * c.weight_decay * p;
    }
  }
}

std::vector<double> numerical_gradient(const std::function<double()>& loss, std::span<double> params,
                                       double h) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace dora::nn
