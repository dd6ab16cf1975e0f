#pragma once

// Small dense networks over a flat parameter vector, with hand-written
// backprop. Everything is double precision so analytic gradients can be
// checked against central finite differences.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "worldlab/rng.hpp"

namespace worldlab::rl {

// tanh hidden layers, linear output. Parameters live in one flat vector
// (per layer: row-major weights, then biases) so optimizers and finite
// differences can treat the network as a plain R^n point.
class Mlp {
 public:
  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw std::invalid_argument("Mlp needs at least two dims");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(dims_[l + 1]) * dims_[l] + dims_[l + 1];
    }
    params_.assign(n, 0.0);
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Orthogonal weights scaled by `hidden_gain` per hidden layer and
  // `output_gain` on the last layer; zero biases.
  void init_orthogonal(Rng& rng, double hidden_gain, double output_gain) {
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const int rows = dims_[l + 1], cols = dims_[l];
      double gain = (l + 2 == dims_.size()) ? output_gain : hidden_gain;
      std::vector<double> w(static_cast<std::size_t>(rows) * cols);
      for (double& x : w) x = normal01(rng);
      orthogonalize(w, rows, cols);
      double* dst = params_.data() + offsets_[l];
      for (std::size_t i = 0; i < w.size(); ++i) dst[i] = gain * w[i];
      for (int i = 0; i < rows; ++i) dst[w.size() + i] = 0.0;
    }
  }

  // Post-tanh activations per hidden layer, kept for the backward pass.
  struct Trace {
    std::vector<std::vector<double>> hidden;
  };

  std::vector<double> forward(std::span<const double> input, Trace* trace = nullptr) const {
    if (static_cast<int>(input.size()) != input_dim())
      throw std::invalid_argument("Mlp::forward: bad input size");
    if (trace) trace->hidden.assign(dims_.size() - 2, {});
    std::vector<double> h(input.begin(), input.end());
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      std::vector<double> z = affine(l, h);
      if (l + 2 < dims_.size()) {
        for (double& x : z) x = std::tanh(x);
        if (trace) trace->hidden[l] = z;
      }
      h = std::move(z);
    }
    return h;
  }

  // Accumulates dL/dparams into `grad` (same layout as params()) given
  // dL/doutput; input and trace must match the forward call.
  void backward(std::span<const double> input, const Trace& trace,
                std::span<const double> dout, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("Mlp::backward: bad grad size");
    std::vector<double> dz(dout.begin(), dout.end());
    for (std::size_t l = dims_.size() - 1; l-- > 0;) {
      const int rows = dims_[l + 1], cols = dims_[l];
      const double* w = params_.data() + offsets_[l];
      double* gw = grad.data() + offsets_[l];
      double* gb = gw + static_cast<std::size_t>(rows) * cols;
      std::span<const double> below =
          l == 0 ? input : std::span<const double>(trace.hidden[l - 1]);

      for (int i = 0; i < rows; ++i) {
        gb[i] += dz[i];
        for (int j = 0; j < cols; ++j) gw[static_cast<std::size_t>(i) * cols + j] += dz[i] * below[j];
      }
      if (l == 0) break;
      std::vector<double> dh(cols, 0.0);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) dh[j] += w[static_cast<std::size_t>(i) * cols + j] * dz[i];
      const auto& post = trace.hidden[l - 1];
      dz.assign(cols, 0.0);
      for (int j = 0; j < cols; ++j) dz[j] = dh[j] * (1.0 - post[j] * post[j]);
    }
  }

 private:
  std::vector<double> affine(std::size_t layer, const std::vector<double>& h) const {
    const int rows = dims_[layer + 1], cols = dims_[layer];
    const double* w = params_.data() + offsets_[layer];
    const double* b = w + static_cast<std::size_t>(rows) * cols;
    std::vector<double> z(rows);
    for (int i = 0; i < rows; ++i) {
      double acc = b[i];
      const double* wi = w + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += wi[j] * h[j];
      z[i] = acc;
    }
    return z;
  }

  // Modified Gram-Schmidt on the shorter side.
  static void orthogonalize(std::vector<double>& w, int rows, int cols) {
    const bool by_rows = rows <= cols;
    const int vecs = by_rows ? rows : cols;
    const int dim = by_rows ? cols : rows;
    auto at = [&](int v, int d) -> double& {
      return by_rows ? w[static_cast<std::size_t>(v) * cols + d]
                     : w[static_cast<std::size_t>(d) * cols + v];
    };
    for (int v = 0; v < vecs; ++v) {
      for (int u = 0; u < v; ++u) {
        double dot = 0.0;
        for (int d = 0; d < dim; ++d) dot += at(v, d) * at(u, d);
        for (int d = 0; d < dim; ++d) at(v, d) -= dot * at(u, d);
      }
      double norm = 0.0;
      for (int d = 0; d < dim; ++d) norm += at(v, d) * at(v, d);
      norm = std::sqrt(norm);
      if (norm < 1e-12) norm = 1.0;
      for (int d = 0; d < dim; ++d) at(v, d) /= norm;
    }
  }

  std::vector<int> dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

class Adam {
 public:
  explicit Adam(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, std::span<const double> grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= cfg_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
    }
  }

  std::vector<double>& first_moment() { return m_; }
  std::vector<double>& second_moment() { return v_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint container: a flat list of named double tensors in a
// length-prefixed binary layout.

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

namespace detail {
inline constexpr std::uint32_t kTensorMagic = 0x574c5443;  // "WLTC"
inline constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("tensor container: truncated file");
  return v;
}
}  // namespace detail

inline void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  detail::write_pod(out, detail::kTensorMagic);
  detail::write_pod(out, detail::kTensorVersion);
  detail::write_pod(out, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_pod(out, static_cast<std::uint64_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_pod(out, static_cast<std::uint64_t>(t.shape.size()));
    for (std::uint64_t d : t.shape) detail::write_pod(out, d);
    detail::write_pod(out, static_cast<std::uint64_t>(t.data.size()));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

inline std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (detail::read_pod<std::uint32_t>(in) != detail::kTensorMagic)
    throw std::runtime_error(path.string() + ": not a tensor container");
  if (detail::read_pod<std::uint32_t>(in) != detail::kTensorVersion)
    throw std::runtime_error(path.string() + ": unsupported container version");
  auto count = detail::read_pod<std::uint64_t>(in);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    t.name.resize(detail::read_pod<std::uint64_t>(in));
    in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    t.shape.resize(detail::read_pod<std::uint64_t>(in));
    for (auto& d : t.shape) d = detail::read_pod<std::uint64_t>(in);
    t.data.resize(detail::read_pod<std::uint64_t>(in));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path.string() + ": truncated tensor data");
  }
  return tensors;
}

}  // namespace worldlab::rl
