#include "ses/policies.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <utility>
#include <vector>

#include "ses/fft.hpp"

namespace ses {

Eigen::VectorXd toeplitz_matvec(const ToeplitzLayer& layer,
                                const Eigen::VectorXd& x, MatvecMode mode,
                                std::uint64_t* op_counter) {
  const Eigen::Index m = layer.rows;
  const Eigen::Index n = layer.cols;
  if (x.size() != n) throw ConfigError("toeplitz_matvec: dimension mismatch");
  const Eigen::VectorXd& v = layer.diagonal_params;

  if (mode == MatvecMode::Direct) {
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) acc += v[i - j + n - 1] * x[j];
      y[i] = acc;
    }
    return y;
  }

  // Circulant embedding: with first column c of size P, (C xpad)_i =
  // sum_j c[(i - j) mod P] x_j, so c[t] = v[t + n - 1] for 0 <= t < m and
  // c[P - s] = v[n - 1 - s] for 1 <= s < n.
  const Eigen::Index P = next_pow2(m + n - 1);
  std::vector<std::complex<double>> c(static_cast<std::size_t>(P));
  std::vector<std::complex<double>> xpad(static_cast<std::size_t>(P));
  for (Eigen::Index t = 0; t < m; ++t)
    c[static_cast<std::size_t>(t)] = v[t + n - 1];
  for (Eigen::Index s = 1; s < n; ++s)
    c[static_cast<std::size_t>(P - s)] = v[n - 1 - s];
  for (Eigen::Index j = 0; j < n; ++j)
    xpad[static_cast<std::size_t>(j)] = x[j];

  auto prod = fft_convolve(std::move(c), std::move(xpad), op_counter);
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i)
    y[i] = prod[static_cast<std::size_t>(i)].real();
  return y;
}

Eigen::Index param_count(const PolicySpec& spec) {
  validate_spec(spec);
  const Eigen::Index o = spec.input_dim;
  const Eigen::Index a = spec.output_dim;
  const Eigen::Index h1 = spec.hidden1;
  const Eigen::Index h2 = spec.hidden2;
  if (spec.layer_kind == LayerKind::Dense)
    return h1 * o + h2 * h1 + a * h2 + h1 + h2;
  return (o + h1 - 1) + (h1 + h2 - 1) + (h2 + a - 1) + h1 + h2;
}

Eigen::Index choose_hidden_size_hadamard(Eigen::Index o, Eigen::Index a,
                                         Eigen::Index budget) {
  Eigen::Index h = std::min<Eigen::Index>(41, (budget - (o + a - 3)) / 6);
  if (h < 1)
    throw ConfigError("choose_hidden_size_hadamard: budget too small");
  return h;
}

PolicyLayers devectorize(const PolicySpec& spec,
                         const Eigen::VectorXd& params) {
  validate_spec(spec);
  if (params.size() != param_count(spec))
    throw ConfigError("devectorize: parameter length mismatch");
  const Eigen::Index o = spec.input_dim;
  const Eigen::Index a = spec.output_dim;
  const Eigen::Index h1 = spec.hidden1;
  const Eigen::Index h2 = spec.hidden2;

  PolicyLayers layers;
  layers.kind = spec.layer_kind;
  Eigen::Index pos = 0;
  auto take = [&](Eigen::Index len) {
    Eigen::VectorXd seg = params.segment(pos, len);
    pos += len;
    return seg;
  };

  if (spec.layer_kind == LayerKind::Toeplitz) {
    layers.t1 = toeplitz_from_vector(h1, o, take(o + h1 - 1));
    layers.t2 = toeplitz_from_vector(h2, h1, take(h1 + h2 - 1));
    layers.t3 = toeplitz_from_vector(a, h2, take(h2 + a - 1));
  } else {
    layers.w1 = Eigen::Map<const Eigen::MatrixXd>(take(h1 * o).data(), h1, o);
    layers.w2 =
        Eigen::Map<const Eigen::MatrixXd>(take(h2 * h1).data(), h2, h1);
    layers.w3 = Eigen::Map<const Eigen::MatrixXd>(take(a * h2).data(), a, h2);
  }
  layers.b1 = take(h1);
  layers.b2 = take(h2);
  return layers;
}

Eigen::VectorXd vectorize(const PolicySpec& spec, const PolicyLayers& layers) {
  Eigen::VectorXd params(param_count(spec));
  Eigen::Index pos = 0;
  auto put = [&](const Eigen::VectorXd& seg) {
    params.segment(pos, seg.size()) = seg;
    pos += seg.size();
  };
  if (spec.layer_kind == LayerKind::Toeplitz) {
    put(layers.t1.diagonal_params);
    put(layers.t2.diagonal_params);
    put(layers.t3.diagonal_params);
  } else {
    put(Eigen::Map<const Eigen::VectorXd>(layers.w1.data(), layers.w1.size()));
    put(Eigen::Map<const Eigen::VectorXd>(layers.w2.data(), layers.w2.size()));
    put(Eigen::Map<const Eigen::VectorXd>(layers.w3.data(), layers.w3.size()));
  }
  put(layers.b1);
  put(layers.b2);
  return params;
}

namespace {

Eigen::VectorXd layer_matvec(const PolicyLayers& layers, int which,
                             const Eigen::VectorXd& x, MatvecMode mode) {
  if (layers.kind == LayerKind::Dense) {
    const Eigen::MatrixXd& w =
        which == 1 ? layers.w1 : (which == 2 ? layers.w2 : layers.w3);
    return w * x;
  }
  const ToeplitzLayer& t =
      which == 1 ? layers.t1 : (which == 2 ? layers.t2 : layers.t3);
  return toeplitz_matvec(t, x, mode);
}

}  // namespace

Eigen::VectorXd forward(const PolicyLayers& layers, const Eigen::VectorXd& state,
                        MatvecMode mode) {
  const Eigen::Index in_dim = layers.kind == LayerKind::Toeplitz
                                  ? layers.t1.cols
                                  : layers.w1.cols();
  if (state.size() != in_dim)
    throw ConfigError("forward: state dimension mismatch");
  if (!state.allFinite()) throw NumericError("forward: non-finite state");
  Eigen::VectorXd h1 =
      (layer_matvec(layers, 1, state, mode) + layers.b1).array().tanh();
  Eigen::VectorXd h2 =
      (layer_matvec(layers, 2, h1, mode) + layers.b2).array().tanh();
  return layer_matvec(layers, 3, h2, mode).array().tanh();
}

Eigen::VectorXd forward(const PolicySpec& spec, const Eigen::VectorXd& params,
                        const Eigen::VectorXd& state, MatvecMode mode) {
  if (state.size() != spec.input_dim)
    throw ConfigError("forward: state dimension mismatch");
  return forward(devectorize(spec, params), state, mode);
}

Eigen::VectorXd forward(const PolicySpec& spec, const Eigen::VectorXd& params,
                        const Eigen::VectorXd& state) {
  const Eigen::Index largest =
      std::max({spec.input_dim, spec.hidden1, spec.hidden2, spec.output_dim});
  return forward(spec, params, state,
                 largest < 64 ? MatvecMode::Direct : MatvecMode::FFT);
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {

constexpr char kBinaryMagic[8] = {'S', 'E', 'S', 'P', 'O', 'L', 'B', '1'};
constexpr char kTextMagic[] = "sespol-text-1";

void write_i64(std::ostream& out, std::int64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i)
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::int64_t read_i64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw ConfigError("parse_policy_binary: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<std::int64_t>(v);
}

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void serialize_policy_binary(const PolicySpec& spec,
                             const Eigen::VectorXd& params,
                             std::ostream& out) {
  if (params.size() != param_count(spec))
    throw ConfigError("serialize_policy_binary: parameter length mismatch");
  out.write(kBinaryMagic, sizeof(kBinaryMagic));
  write_i64(out, spec.layer_kind == LayerKind::Dense ? 0 : 1);
  write_i64(out, spec.input_dim);
  write_i64(out, spec.hidden1);
  write_i64(out, spec.hidden2);
  write_i64(out, spec.output_dim);
  write_i64(out, params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    std::uint64_t bits;
    double v = params[i];
    std::memcpy(&bits, &v, 8);
    write_i64(out, static_cast<std::int64_t>(bits));
  }
}

std::pair<PolicySpec, Eigen::VectorXd> parse_policy_binary(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kBinaryMagic, 8) != 0)
    throw ConfigError("parse_policy_binary: bad magic");
  PolicySpec spec;
  spec.layer_kind = read_i64(in) == 0 ? LayerKind::Dense : LayerKind::Toeplitz;
  spec.input_dim = read_i64(in);
  spec.hidden1 = read_i64(in);
  spec.hidden2 = read_i64(in);
  spec.output_dim = read_i64(in);
  const std::int64_t count = read_i64(in);
  if (count != param_count(spec))
    throw ConfigError("parse_policy_binary: parameter count mismatch");
  Eigen::VectorXd params(count);
  for (std::int64_t i = 0; i < count; ++i) {
    std::uint64_t bits = static_cast<std::uint64_t>(read_i64(in));
    double v;
    std::memcpy(&v, &bits, 8);
    params[i] = v;
  }
  return {spec, params};
}

void serialize_policy_text(const PolicySpec& spec,
                           const Eigen::VectorXd& params, std::ostream& out) {
  if (params.size() != param_count(spec))
    throw ConfigError("serialize_policy_text: parameter length mismatch");
  out << kTextMagic << "\n"
      << (spec.layer_kind == LayerKind::Dense ? "dense" : "toeplitz") << " "
      << spec.input_dim << " " << spec.hidden1 << " " << spec.hidden2 << " "
      << spec.output_dim << "\n";
  for (Eigen::Index i = 0; i < params.size(); ++i)
    out << format_double(params[i]) << "\n";
}

std::pair<PolicySpec, Eigen::VectorXd> parse_policy_text(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != kTextMagic)
    throw ConfigError("parse_policy_text: bad magic");
  std::string header;
  if (!std::getline(in, header))
    throw ConfigError("parse_policy_text: missing header");
  std::istringstream hs(header);
  std::string kind;
  PolicySpec spec;
  if (!(hs >> kind >> spec.input_dim >> spec.hidden1 >> spec.hidden2 >>
        spec.output_dim))
    throw ConfigError("parse_policy_text: malformed header");
  if (kind == "dense")
    spec.layer_kind = LayerKind::Dense;
  else if (kind == "toeplitz")
    spec.layer_kind = LayerKind::Toeplitz;
  else
    throw ConfigError("parse_policy_text: unknown layer kind '" + kind + "'");

  Eigen::VectorXd params(param_count(spec));
  std::string line;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    if (!std::getline(in, line))
      throw ConfigError("parse_policy_text: truncated parameter list");
    double v = 0.0;
    auto res = std::from_chars(line.data(), line.data() + line.size(), v);
    if (res.ec != std::errc{})
      throw ConfigError("parse_policy_text: bad number '" + line + "'");
    params[i] = v;
  }
  return {spec, params};
}

}  // namespace ses
