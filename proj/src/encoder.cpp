#include "deepsitar/encoder.hpp"

#include <cmath>

namespace deepsitar {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::linear:
      return "linear";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

EncoderNet::EncoderNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidDims("encoder needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    if (layer.bias.size() != layer.outputs())
      throw InvalidDims("layer " + std::to_string(k) + ": bias size does not match weights");
    if (k > 0 && layer.inputs() != layers_[k - 1].outputs())
      throw InvalidDims("layer " + std::to_string(k) + ": input size does not chain");
  }
  if (layers_.back().activation != Activation::linear)
    throw InvalidDims("encoder output layer must be linear");
  if (layers_.back().outputs() != 3) throw InvalidDims("encoder must output 3 random effects");
}

std::size_t EncoderNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().inputs(); }
std::size_t EncoderNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().outputs(); }

std::vector<std::size_t> EncoderNet::dims() const {
  std::vector<std::size_t> d;
  if (layers_.empty()) return d;
  d.push_back(input_dim());
  for (const auto& layer : layers_) d.push_back(layer.outputs());
  return d;
}

std::size_t EncoderNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.entries().size() + layer.bias.size();
  return n;
}

std::vector<double> EncoderNet::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers_) {
    out.insert(out.end(), layer.weights.entries().begin(), layer.weights.entries().end());
    out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  }
  return out;
}

void EncoderNet::set_parameters(std::span<const double> params) {
  if (params.size() != parameter_count()) throw DimMismatch("encoder: wrong parameter count");
  std::size_t pos = 0;
  for (auto& layer : layers_) {
    for (double& w : layer.weights.entries()) w = params[pos++];
    for (double& b : layer.bias) b = params[pos++];
  }
}

void EncoderNet::add_scaled(std::span<const double> direction, double step) {
  if (direction.size() < parameter_count()) throw DimMismatch("encoder: direction too short");
  std::size_t pos = 0;
  for (auto& layer : layers_) {
    for (double& w : layer.weights.entries()) w -= step * direction[pos++];
    for (double& b : layer.bias) b -= step * direction[pos++];
  }
}

Standardizer Standardizer::identity(std::size_t n) {
  return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)};
}

Standardizer Standardizer::fit(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw std::invalid_argument("Standardizer::fit: no rows");
  const std::size_t n = rows.front().size();
  Standardizer s{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)};
  for (const auto& row : rows) {
    if (row.size() != n) throw DimMismatch("Standardizer::fit: ragged rows");
    for (std::size_t j = 0; j < n; ++j) s.mean[j] += row[j];
  }
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  if (rows.size() < 2) return s;
  std::vector<double> ss(n, 0.0);
  for (const auto& row : rows)
    for (std::size_t j = 0; j < n; ++j) ss[j] += (row[j] - s.mean[j]) * (row[j] - s.mean[j]);
  for (std::size_t j = 0; j < n; ++j) {
    const double sd = std::sqrt(ss[j] / static_cast<double>(rows.size() - 1));
    s.sd[j] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> y) const {
  if (y.size() != mean.size())
    throw DimMismatch("standardizer expects " + std::to_string(mean.size()) + " values, got " +
                      std::to_string(y.size()));
  std::vector<double> out(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) out[j] = (y[j] - mean[j]) / sd[j];
  return out;
}

EncoderNet init_encoder(std::span<const std::size_t> dims, SeededRng& rng) {
  if (dims.size() < 2) throw InvalidDims("encoder dims need an input and an output size");
  if (dims.back() != 3) throw InvalidDims("encoder output size must be 3");
  for (std::size_t d : dims)
    if (d == 0) throw InvalidDims("encoder layer sizes must be positive");

  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const std::size_t fan_in = dims[k];
    const std::size_t fan_out = dims[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer;
    layer.weights = SmallMatrix(fan_out, fan_in);
    for (double& w : layer.weights.entries()) w = rng.uniform(-limit, limit);
    layer.bias.assign(fan_out, 0.0);
    layer.activation = k + 2 == dims.size() ? Activation::linear : Activation::tanh;
    layers.push_back(std::move(layer));
  }
  return EncoderNet(std::move(layers));
}

void forward(const EncoderNet& net, std::span<const double> x, ForwardTrace& trace) {
  if (x.size() != net.input_dim())
    throw DimMismatch("encoder expects " + std::to_string(net.input_dim()) + " inputs, got " +
                      std::to_string(x.size()));
  const auto& layers = net.layers();
  trace.activations.resize(layers.size() + 1);
  trace.activations[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    const auto& in = trace.activations[k];
    auto& out = trace.activations[k + 1];
    out.resize(layer.outputs());
    for (std::size_t r = 0; r < layer.outputs(); ++r) {
      const auto w = layer.weights.row(r);
      double z = layer.bias[r];
      for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * in[c];
      out[r] = layer.activation == Activation::tanh ? std::tanh(z) : z;
    }
  }
}

void backward(const EncoderNet& net, const ForwardTrace& trace, std::span<const double> upstream,
              std::span<double> grad) {
  const auto& layers = net.layers();
  if (upstream.size() != net.output_dim()) throw DimMismatch("backward: upstream size mismatch");
  if (grad.size() < net.parameter_count()) throw DimMismatch("backward: gradient buffer too short");

  // Offsets of each layer's block in the flat parameter vector.
  std::vector<std::size_t> offset(layers.size());
  std::size_t pos = 0;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    offset[k] = pos;
    pos += layers[k].weights.entries().size() + layers[k].bias.size();
  }

  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> next;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& layer = layers[k];
    const auto& out = trace.activations[k + 1];
    const auto& in = trace.activations[k];
    if (layer.activation == Activation::tanh)
      for (std::size_t r = 0; r < delta.size(); ++r) delta[r] *= 1.0 - out[r] * out[r];

    double* g_w = grad.data() + offset[k];
    double* g_b = g_w + layer.weights.entries().size();
    for (std::size_t r = 0; r < layer.outputs(); ++r) {
      const double d = delta[r];
      double* g_row = g_w + r * layer.inputs();
      for (std::size_t c = 0; c < layer.inputs(); ++c) g_row[c] += d * in[c];
      g_b[r] += d;
    }
    if (k == 0) break;
    next.assign(layer.inputs(), 0.0);
    for (std::size_t r = 0; r < layer.outputs(); ++r) {
      const auto w = layer.weights.row(r);
      for (std::size_t c = 0; c < w.size(); ++c) next[c] += w[c] * delta[r];
    }
    delta.swap(next);
  }
}

RandomEffects encode(const EncoderNet& net, const Standardizer& scaler, std::span<const double> y) {
  ForwardTrace trace;
  forward(net, scaler.apply(y), trace);
  return RandomEffects::from(trace.activations.back());
}

std::vector<double> encode_backward(const EncoderNet& net, const Standardizer& scaler,
                                    std::span<const double> y,
                                    const std::array<double, 3>& upstream) {
  for (double u : upstream)
    if (!std::isfinite(u)) throw std::invalid_argument("encode_backward: non-finite upstream");
  ForwardTrace trace;
  forward(net, scaler.apply(y), trace);
  std::vector<double> grad(net.parameter_count(), 0.0);
  backward(net, trace, upstream, grad);
  return grad;
}

}  // namespace deepsitar
