#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepsitar/decoder.hpp"
#include "deepsitar/numerics.hpp"

namespace deepsitar {

class InvalidDims : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Activation { tanh, linear };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  SmallMatrix weights;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::tanh;

  std::size_t inputs() const { return weights.cols(); }
  std::size_t outputs() const { return weights.rows(); }
};

/// Fully connected network mapping a standardized measurement vector to the
/// three random effects. Hidden layers use tanh, the output layer is linear.
class EncoderNet {
 public:
  EncoderNet() = default;
  explicit EncoderNet(std::vector<DenseLayer> layers);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::vector<std::size_t> dims() const;

  /// Flat parameter order: per layer, weights row-major then bias.
  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> params);
  /// params -= step * direction, in the flat order.
  void add_scaled(std::span<const double> direction, double step);

 private:
  std::vector<DenseLayer> layers_;
};

/// Per-coordinate z-scoring using training-split statistics.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> sd;

  static Standardizer identity(std::size_t n);
  /// Sample mean and sd (N-1) of each column; sd <= 0 is replaced by 1.
  static Standardizer fit(std::span<const std::vector<double>> rows);

  std::size_t size() const { return mean.size(); }
  std::vector<double> apply(std::span<const double> y) const;
};

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
/// dims = (input, hidden..., 3).
EncoderNet init_encoder(std::span<const std::size_t> dims, SeededRng& rng);

/// Layer activations of one forward pass; activations[0] is the
/// standardized input, activations.back() the network output.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;
};

void forward(const EncoderNet& net, std::span<const double> x, ForwardTrace& trace);

/// Adds d<upstream, output>/d params into grad (flat order).
void backward(const EncoderNet& net, const ForwardTrace& trace, std::span<const double> upstream,
              std::span<double> grad);

RandomEffects encode(const EncoderNet& net, const Standardizer& scaler, std::span<const double> y);

/// Gradient of <upstream, encode(y)> with respect to every parameter.
std::vector<double> encode_backward(const EncoderNet& net, const Standardizer& scaler,
                                    std::span<const double> y,
                                    const std::array<double, 3>& upstream);

}  // namespace deepsitar
