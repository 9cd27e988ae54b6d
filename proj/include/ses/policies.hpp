#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "ses/errors.hpp"

namespace ses {

enum class LayerKind { Dense, Toeplitz };

// Three-layer feedforward policy o -> h1 -> h2 -> a with tanh on hidden and
// output layers, biases on the hidden layers only.
struct PolicySpec {
  LayerKind layer_kind = LayerKind::Toeplitz;
  Eigen::Index input_dim = 0;   // o
  Eigen::Index hidden1 = 0;     // h
  Eigen::Index hidden2 = 0;     // h
  Eigen::Index output_dim = 0;  // a
};

inline PolicySpec toeplitz_spec(Eigen::Index o, Eigen::Index a,
                                Eigen::Index h) {
  return PolicySpec{LayerKind::Toeplitz, o, h, h, a};
}

inline PolicySpec dense_spec(Eigen::Index o, Eigen::Index a,
                             Eigen::Index h1 = 32, Eigen::Index h2 = 32) {
  return PolicySpec{LayerKind::Dense, o, h1, h2, a};
}

inline void validate_spec(const PolicySpec& spec) {
  if (spec.input_dim < 1 || spec.hidden1 < 1 || spec.hidden2 < 1 ||
      spec.output_dim < 1)
    throw ConfigError("PolicySpec: all layer sizes must be >= 1");
}

// Toeplitz weight matrix, parameterized by one value per diagonal:
// T(i, j) = diagonal_params[(i - j) + (n - 1)] for an m x n matrix.
struct ToeplitzLayer {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::VectorXd diagonal_params;  // length rows + cols - 1
};

inline ToeplitzLayer toeplitz_from_vector(Eigen::Index m, Eigen::Index n,
                                          const Eigen::VectorXd& v) {
  if (v.size() != m + n - 1)
    throw ConfigError("toeplitz_from_vector: need m + n - 1 parameters");
  return ToeplitzLayer{m, n, v};
}

inline Eigen::MatrixXd materialize(const ToeplitzLayer& layer) {
  Eigen::MatrixXd t(layer.rows, layer.cols);
  for (Eigen::Index i = 0; i < layer.rows; ++i)
    for (Eigen::Index j = 0; j < layer.cols; ++j)
      t(i, j) = layer.diagonal_params[i - j + layer.cols - 1];
  return t;
}

enum class MatvecMode { Direct, FFT };

// y = T x.  Direct is the O(mn) reference; FFT embeds T in a circulant of
// power-of-two size >= m + n - 1 and multiplies via forward/inverse
// transforms in O((m+n) log(m+n)).  op_counter, when given, accumulates the
// arithmetic tally of the FFT path.
Eigen::VectorXd toeplitz_matvec(const ToeplitzLayer& layer,
                                const Eigen::VectorXd& x, MatvecMode mode,
                                std::uint64_t* op_counter = nullptr);

struct PolicyLayers {
  LayerKind kind = LayerKind::Toeplitz;
  // Dense weights; unused (empty) for Toeplitz.
  Eigen::MatrixXd w1, w2, w3;
  // Toeplitz diagonal parameters; unused for Dense.
  ToeplitzLayer t1, t2, t3;
  Eigen::VectorXd b1, b2;
};

// Flat parameter count.  Toeplitz with hidden size h on both layers:
// (o+h-1) + (2h-1) + (h+a-1) + 2h = o + a + 6h - 3.  Dense with hidden
// (32,32): 32(o+a) + 1088.
Eigen::Index param_count(const PolicySpec& spec);

// Largest Toeplitz hidden size fitting a parameter budget, capped at the
// h = 41 used by the Gaussian-orthogonal policies:
// h = min(41, floor((budget - (o + a - 3)) / 6)).
Eigen::Index choose_hidden_size_hadamard(Eigen::Index o, Eigen::Index a,
                                         Eigen::Index budget);

// Slicing order: layer-1 weights, layer-2 weights, layer-3 weights,
// layer-1 bias, layer-2 bias.
PolicyLayers devectorize(const PolicySpec& spec, const Eigen::VectorXd& params);
Eigen::VectorXd vectorize(const PolicySpec& spec, const PolicyLayers& layers);

// a = tanh(W3 tanh(W2 tanh(W1 s + b1) + b2)); every coordinate in (-1, 1).
// Toeplitz matvecs default to Direct while every layer dimension is below 64
// and to FFT once any dimension reaches it, unless a mode is forced.
Eigen::VectorXd forward(const PolicySpec& spec, const Eigen::VectorXd& params,
                        const Eigen::VectorXd& state);
Eigen::VectorXd forward(const PolicySpec& spec, const Eigen::VectorXd& params,
                        const Eigen::VectorXd& state, MatvecMode mode);
// Pre-devectorized variant for inner loops that evaluate one parameter vector
// many times (rollouts); avoids re-slicing the flat parameters per call.
Eigen::VectorXd forward(const PolicyLayers& layers, const Eigen::VectorXd& state,
                        MatvecMode mode);

// Serialization: binary (magic + header + raw little-endian doubles) and a
// portable text form (header line + shortest round-trip decimals, one per
// line).
void serialize_policy_binary(const PolicySpec& spec,
                             const Eigen::VectorXd& params, std::ostream& out);
std::pair<PolicySpec, Eigen::VectorXd> parse_policy_binary(std::istream& in);
void serialize_policy_text(const PolicySpec& spec,
                           const Eigen::VectorXd& params, std::ostream& out);
std::pair<PolicySpec, Eigen::VectorXd> parse_policy_text(std::istream& in);

}  // namespace ses
