#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "autobalance/linalg.hpp"

namespace autobalance {

enum class Activation { Tanh, Identity };

inline std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh" || s == "Tanh") return Activation::Tanh;
  if (s == "identity" || s == "Identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation: " + s);
}

/// Fully connected network: input -> hidden_widths... -> output. Hidden layers
/// use `activation`; the output layer is affine.
struct NetworkSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t output_dim = 1;
  Activation activation = Activation::Tanh;

  std::size_t layer_count() const { return hidden_widths.size() + 1; }

  std::size_t fan_in(std::size_t layer) const { return layer == 0 ? input_dim : hidden_widths[layer - 1]; }

  std::size_t fan_out(std::size_t layer) const {
    return layer == hidden_widths.size() ? output_dim : hidden_widths[layer];
  }

  /// Offset of layer `layer`'s weight block; its bias follows immediately.
  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += fan_in(l) * fan_out(l) + fan_out(l);
    return off;
  }

  std::size_t bias_offset(std::size_t layer) const { return weight_offset(layer) + fan_in(layer) * fan_out(layer); }

  std::size_t param_count() const { return weight_offset(layer_count()); }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("NetworkSpec: zero input or output dimension");
    for (auto w : hidden_widths)
      if (w == 0) throw std::invalid_argument("NetworkSpec: zero hidden width");
  }
};

/// Glorot-uniform weights, zero biases. Deterministic for a fixed seed.
inline ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const double fi = static_cast<double>(spec.fan_in(l));
    const double fo = static_cast<double>(spec.fan_out(l));
    const double bound = std::sqrt(6.0 / (fi + fo));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t off = spec.weight_offset(l);
    const std::size_t count = spec.fan_in(l) * spec.fan_out(l);
    for (std::size_t i = 0; i < count; ++i) p(static_cast<Eigen::Index>(off + i)) = dist(rng);
  }
  return p;
}

/// Which input-derivative streams a forward pass carries.
enum class JetOrder {
  Value, // u only
  Full,  // u, du/dx_i, d2u/dx_i^2
};

inline std::size_t stream_count(JetOrder order, std::size_t input_dim) {
  return order == JetOrder::Value ? 1 : 1 + 2 * input_dim;
}

/// Network outputs at a batch of points. Each matrix is output_dim x points;
/// `du[i]` and `d2u[i]` hold the first and pure second derivative with
/// respect to input coordinate i.
struct JetBatch {
  Matrix u;
  std::vector<Matrix> du;
  std::vector<Matrix> d2u;

  std::size_t points() const { return static_cast<std::size_t>(u.cols()); }
};

/// Intermediate values of one jet forward pass, kept for reverse accumulation.
/// Streams are laid out as column blocks of width `points`: value, then the
/// first-derivative streams, then the second-derivative streams.
struct JetTape {
  std::size_t points = 0;
  std::size_t streams = 1;
  JetOrder order = JetOrder::Value;
  std::vector<Matrix> layer_inputs; // fan_in(l) x streams*points
  std::vector<Matrix> preacts;      // hidden layers only: fan_out(l) x streams*points
  Matrix output;                    // output_dim x streams*points
};

namespace detail {

// tanh through the vectorised exp; Eigen 3.4 evaluates double tanh with the
// scalar libm routine, which dominates the jet pass otherwise.
template <typename Derived>
inline auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

inline Eigen::Map<const RowMajorMatrix> weight_map(const NetworkSpec& spec, const double* params, std::size_t l) {
  return {params + spec.weight_offset(l), static_cast<Eigen::Index>(spec.fan_out(l)),
          static_cast<Eigen::Index>(spec.fan_in(l))};
}

inline Eigen::Map<const Vector> bias_map(const NetworkSpec& spec, const double* params, std::size_t l) {
  return {params + spec.bias_offset(l), static_cast<Eigen::Index>(spec.fan_out(l))};
}

inline void check_inputs(const NetworkSpec& spec, Eigen::Index param_size, const Eigen::Ref<const Matrix>& points) {
  if (static_cast<std::size_t>(param_size) != spec.param_count())
    throw std::invalid_argument("network: parameter vector has length " + std::to_string(param_size) + ", expected " +
                                std::to_string(spec.param_count()));
  if (static_cast<std::size_t>(points.rows()) != spec.input_dim)
    throw std::invalid_argument("network: points have dimension " + std::to_string(points.rows()) + ", expected " +
                                std::to_string(spec.input_dim));
}

// Applies the activation to a pre-activation block, writing the next layer's
// input streams. Storage is column-major; stream s of point j lives in column
// s*n + j.
inline void activate(Activation act, std::size_t d, std::size_t streams, Eigen::Index n, const Matrix& z, Matrix& h) {
  h.resize(z.rows(), z.cols());
  if (act == Activation::Identity) {
    h = z;
    return;
  }
  const Eigen::Index rows = z.rows();
  h.leftCols(n).array() = fast_tanh(z.leftCols(n).array());
  if (streams == 1) return;
  const double* zp = z.data();
  double* hp = h.data();
  const Eigen::Index stride = n * rows;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index base = j * rows;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double a = hp[base + r];
      const double a1 = 1.0 - a * a;
      const double a2 = -2.0 * a * a1;
      for (std::size_t i = 0; i < d; ++i) {
        const Eigen::Index k1 = base + r + static_cast<Eigen::Index>(1 + i) * stride;
        const Eigen::Index k2 = base + r + static_cast<Eigen::Index>(1 + d + i) * stride;
        const double zd = zp[k1];
        hp[k1] = a1 * zd;
        hp[k2] = a2 * zd * zd + a1 * zp[k2];
      }
    }
  }
}

// Reverse of `activate`: maps adjoints of the activated streams to adjoints of
// the pre-activation streams, in place.
inline void activate_backward(Activation act, std::size_t d, std::size_t streams, Eigen::Index n, const Matrix& z,
                              const Matrix& h, Matrix& bar) {
  if (act == Activation::Identity) return;
  const Eigen::Index rows = z.rows();
  const double* zp = z.data();
  const double* hp = h.data();
  double* bp = bar.data();
  const Eigen::Index stride = n * rows;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index base = j * rows;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double a = hp[base + r];
      const double a1 = 1.0 - a * a;
      double value_bar = bp[base + r] * a1;
      if (streams > 1) {
        const double a2 = -2.0 * a * a1;
        const double a3 = -2.0 * a1 * a1 - 2.0 * a * a2;
        for (std::size_t i = 0; i < d; ++i) {
          const Eigen::Index k1 = base + r + static_cast<Eigen::Index>(1 + i) * stride;
          const Eigen::Index k2 = base + r + static_cast<Eigen::Index>(1 + d + i) * stride;
          const double zd = zp[k1];
          const double hd_bar = bp[k1];
          const double hdd_bar = bp[k2];
          value_bar += hd_bar * a2 * zd + hdd_bar * (a3 * zd * zd + a2 * zp[k2]);
          bp[k1] = hd_bar * a1 + 2.0 * hdd_bar * a2 * zd;
          bp[k2] = hdd_bar * a1;
        }
      }
      bp[base + r] = value_bar;
    }
  }
}

} // namespace detail

/// Forward pass recording everything needed for reverse accumulation.
/// `points` is input_dim x N (one column per point). Buffers already held by
/// `tape` are reused when the shapes match.
inline void forward_tape(const NetworkSpec& spec, const Eigen::Ref<const ParamVector>& params,
                         const Eigen::Ref<const Matrix>& points, JetOrder order, JetTape& tape) {
  detail::check_inputs(spec, params.size(), points);
  const std::size_t d = spec.input_dim;
  const Eigen::Index n = points.cols();
  const std::size_t layers = spec.layer_count();
  tape.points = static_cast<std::size_t>(n);
  tape.order = order;
  tape.streams = stream_count(order, d);
  const Eigen::Index width = static_cast<Eigen::Index>(tape.streams) * n;
  tape.layer_inputs.resize(layers);
  tape.preacts.resize(layers - 1);

  Matrix& h0 = tape.layer_inputs[0];
  h0.setZero(static_cast<Eigen::Index>(d), width);
  h0.leftCols(n) = points;
  if (order == JetOrder::Full)
    for (std::size_t i = 0; i < d; ++i)
      h0.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(1 + i) * n, 1, n).setOnes();

  const double* p = params.data();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix& z = (l + 1 == layers) ? tape.output : tape.preacts[l];
    z.resize(static_cast<Eigen::Index>(spec.fan_out(l)), width);
    z.noalias() = detail::weight_map(spec, p, l) * tape.layer_inputs[l];
    z.leftCols(n).colwise() += detail::bias_map(spec, p, l);
    if (l + 1 < layers) detail::activate(spec.activation, d, tape.streams, n, z, tape.layer_inputs[l + 1]);
  }
}

inline JetTape forward_tape(const NetworkSpec& spec, const Eigen::Ref<const ParamVector>& params,
                            const Eigen::Ref<const Matrix>& points, JetOrder order) {
  JetTape tape;
  forward_tape(spec, params, points, order, tape);
  return tape;
}

inline JetBatch jet_from_tape(const NetworkSpec& spec, const JetTape& tape) {
  const Eigen::Index n = static_cast<Eigen::Index>(tape.points);
  JetBatch jet;
  jet.u = tape.output.leftCols(n);
  if (tape.order == JetOrder::Full) {
    const std::size_t d = spec.input_dim;
    for (std::size_t i = 0; i < d; ++i) {
      jet.du.push_back(tape.output.middleCols(static_cast<Eigen::Index>(1 + i) * n, n));
      jet.d2u.push_back(tape.output.middleCols(static_cast<Eigen::Index>(1 + d + i) * n, n));
    }
  }
  return jet;
}

/// Network output with first and pure second input derivatives at each point.
inline JetBatch forward_jet(const NetworkSpec& spec, const Eigen::Ref<const ParamVector>& params,
                            const Eigen::Ref<const Matrix>& points) {
  return jet_from_tape(spec, forward_tape(spec, params, points, JetOrder::Full));
}

/// Plain network evaluation (output_dim x N), processed in fixed-size chunks.
inline Matrix forward_values(const NetworkSpec& spec, const Eigen::Ref<const ParamVector>& params,
                             const Eigen::Ref<const Matrix>& points, Eigen::Index chunk = 4096) {
  detail::check_inputs(spec, params.size(), points);
  const double* p = params.data();
  Matrix out(static_cast<Eigen::Index>(spec.output_dim), points.cols());
  for (Eigen::Index start = 0; start < points.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, points.cols() - start);
    Matrix h = points.middleCols(start, n);
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      Matrix z = detail::weight_map(spec, p, l) * h;
      z.colwise() += detail::bias_map(spec, p, l);
      if (l + 1 < spec.layer_count() && spec.activation == Activation::Tanh) z = detail::fast_tanh(z.array()).matrix();
      h = std::move(z);
    }
    out.middleCols(start, n) = h;
  }
  return out;
}

/// Scratch buffers for `backward`, reusable across calls.
struct BackwardWorkspace {
  Matrix bar;
  Matrix prev;
};

/// Reverse accumulation through a recorded jet pass.
///
/// `output_bar` holds dL/d(output streams), laid out like `tape.output`. The
/// parameter gradient is accumulated into `grad` (length param_count). When
/// `point_sq_norms` is non-null, it receives, for every point j, the squared
/// norm of the parameter gradient of that point's contribution alone; this is
/// exact because points only interact through the final sum.
inline void backward(const NetworkSpec& spec, const Eigen::Ref<const ParamVector>& params, const JetTape& tape,
                     const Eigen::Ref<const Matrix>& output_bar, Eigen::Ref<Vector> grad,
                     Vector* point_sq_norms = nullptr, BackwardWorkspace* workspace = nullptr) {
  if (output_bar.rows() != tape.output.rows() || output_bar.cols() != tape.output.cols())
    throw std::invalid_argument("backward: adjoint shape does not match the tape output");
  if (static_cast<std::size_t>(grad.size()) != spec.param_count())
    throw std::invalid_argument("backward: gradient buffer has wrong length");
  const std::size_t d = spec.input_dim;
  const Eigen::Index n = static_cast<Eigen::Index>(tape.points);
  const std::size_t s_count = tape.streams;
  const double* p = params.data();
  if (point_sq_norms) point_sq_norms->setZero(n);

  BackwardWorkspace local;
  BackwardWorkspace& ws = workspace ? *workspace : local;
  ws.bar = output_bar;
  Matrix& bar = ws.bar;
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    const Matrix& in = tape.layer_inputs[l];
    Eigen::Map<RowMajorMatrix> gw(grad.data() + spec.weight_offset(l), static_cast<Eigen::Index>(spec.fan_out(l)),
                                  static_cast<Eigen::Index>(spec.fan_in(l)));
    gw.noalias() += bar * in.transpose();
    Eigen::Map<Vector> gb(grad.data() + spec.bias_offset(l), static_cast<Eigen::Index>(spec.fan_out(l)));
    gb.noalias() += bar.leftCols(n).rowwise().sum();

    if (point_sq_norms) {
      // ||sum_s zbar_s h_s^T||_F^2 = sum_{s,t} (zbar_s . zbar_t)(h_s . h_t), plus the bias part.
      for (Eigen::Index j = 0; j < n; ++j) {
        double acc = bar.col(j).squaredNorm();
        for (std::size_t s = 0; s < s_count; ++s) {
          const Eigen::Index cs = static_cast<Eigen::Index>(s) * n + j;
          for (std::size_t t = 0; t < s_count; ++t) {
            const Eigen::Index ct = static_cast<Eigen::Index>(t) * n + j;
            acc += bar.col(cs).dot(bar.col(ct)) * in.col(cs).dot(in.col(ct));
          }
        }
        (*point_sq_norms)(j) += acc;
      }
    }

    if (l == 0) break;
    ws.prev.resize(static_cast<Eigen::Index>(spec.fan_in(l)), bar.cols());
    ws.prev.noalias() = detail::weight_map(spec, p, l).transpose() * bar;
    detail::activate_backward(spec.activation, d, s_count, n, tape.preacts[l - 1], tape.layer_inputs[l], ws.prev);
    bar.swap(ws.prev);
  }
}

/// Packs per-stream adjoints for a single-output network into the tape layout.
/// `value_bar` has one entry per point; `d1_bar[i]`/`d2_bar[i]` may be empty
/// (treated as zero).
inline Matrix pack_output_adjoint(const JetTape& tape, std::size_t input_dim, const Vector& value_bar,
                                  const std::vector<Vector>& d1_bar = {}, const std::vector<Vector>& d2_bar = {}) {
  const Eigen::Index n = static_cast<Eigen::Index>(tape.points);
  Matrix out = Matrix::Zero(tape.output.rows(), tape.output.cols());
  out.row(0).head(n) = value_bar.transpose();
  if (tape.order == JetOrder::Full) {
    for (std::size_t i = 0; i < input_dim; ++i) {
      if (i < d1_bar.size() && d1_bar[i].size() == n)
        out.row(0).segment(static_cast<Eigen::Index>(1 + i) * n, n) = d1_bar[i].transpose();
      if (i < d2_bar.size() && d2_bar[i].size() == n)
        out.row(0).segment(static_cast<Eigen::Index>(1 + input_dim + i) * n, n) = d2_bar[i].transpose();
    }
  }
  return out;
}

} // namespace autobalance
