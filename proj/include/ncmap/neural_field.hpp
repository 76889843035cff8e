#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ncmap/error.hpp"
#include "ncmap/geometry.hpp"

namespace ncmap {

struct HashEncodingConfig {
  int levels = 12;
  int features_per_level = 2;
  int table_size_log2 = 14;
  int base_resolution = 4;
  double growth_factor = 1.45;

  int output_dim() const { return levels * features_per_level; }
  std::uint32_t table_size() const { return std::uint32_t{1} << table_size_log2; }
  int resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth_factor, level)));
  }
  void validate() const {
    if (levels < 1 || features_per_level < 1) throw InputError("hash encoding needs >= 1 level and feature");
    if (table_size_log2 < 1 || table_size_log2 > 24) throw InputError("table_size_log2 must be in [1, 24]");
    if (base_resolution < 1) throw InputError("base_resolution must be >= 1");
    if (!(growth_factor > 1.0)) throw InputError("growth_factor must be > 1");
  }
};

enum class Activation : std::uint32_t { relu = 0 };

struct MlpConfig {
  int hidden_layers = 2;
  int hidden_width = 64;
  int output_dim = 1;
  Activation activation = Activation::relu;

  void validate() const {
    if (hidden_layers < 1) throw InputError("hidden_layers must be >= 1");
    if (hidden_width < 8) throw InputError("hidden_width must be >= 8");
    if (output_dim < 1) throw InputError("output_dim must be >= 1");
  }
};

/// Per-point residual (value - target) and the input-space pullback
/// J(p)^T residual of a batch.
struct Pullback {
  Eigen::MatrixXd residual;                      // B x n_f
  Eigen::Matrix<double, Eigen::Dynamic, 3> vjp;  // B x 3
};

using InputJacobian = Eigen::Matrix<double, Eigen::Dynamic, 3>;  // n_f x 3

/// Hash-grid encoded MLP S: S^2 -> R^{n_f}.
///
/// Parameters live in one vector, in this order:
///   hash tables, level 0..L-1, each table_size x F (row-major per entry)
///   layer 0 weights (width x L*F, column-major), layer 0 bias,
///   hidden layers (width x width), output layer (n_f x width) and bias.
class NeuralCorticalMap {
 public:
  static constexpr std::uint32_t kPrimes[3] = {1u, 2654435761u, 805459861u};
  static constexpr Eigen::Index kChunk = 512;

  NeuralCorticalMap() = default;

  NeuralCorticalMap(const HashEncodingConfig& enc, const MlpConfig& mlp, std::uint64_t seed)
      : enc_(enc), mlp_(mlp), seed_(seed) {
    enc_.validate();
    mlp_.validate();
    layout();
    initialize(seed);
  }

  const HashEncodingConfig& encoding_config() const { return enc_; }
  const MlpConfig& mlp_config() const { return mlp_; }
  int channels() const { return mlp_.output_dim; }
  int input_dim() const { return enc_.output_dim(); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  Eigen::Index table_parameter_count() const { return table_params_; }

  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& mutable_parameters() { return params_; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t iterations() const { return iterations_; }
  void set_iterations(std::uint64_t n) { iterations_ = n; }
  const std::vector<std::string>& channel_names() const { return channel_names_; }
  void set_channel_names(std::vector<std::string> names) {
    if (static_cast<int>(names.size()) != channels()) throw ShapeError("channel name count mismatch");
    channel_names_ = std::move(names);
  }

  int layer_count() const { return mlp_.hidden_layers + 1; }
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const {
    const auto& l = layers_[static_cast<std::size_t>(layer)];
    return {params_.data() + l.weight, l.rows, l.cols};
  }
  Eigen::Map<Eigen::MatrixXd> weight(int layer) {
    const auto& l = layers_[static_cast<std::size_t>(layer)];
    return {params_.data() + l.weight, l.rows, l.cols};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const {
    const auto& l = layers_[static_cast<std::size_t>(layer)];
    return {params_.data() + l.bias, l.rows};
  }
  Eigen::Map<Eigen::VectorXd> bias(int layer) {
    const auto& l = layers_[static_cast<std::size_t>(layer)];
    return {params_.data() + l.bias, l.rows};
  }

  /// Table index of an integer grid corner.
  std::uint32_t hash(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    return ((i * kPrimes[0]) ^ (j * kPrimes[1]) ^ (k * kPrimes[2])) & (enc_.table_size() - 1);
  }
  double table_entry(int level, std::uint32_t index, int feature) const {
    return params_[table_offset(level) + static_cast<Eigen::Index>(index) * enc_.features_per_level + feature];
  }
  Eigen::Index table_offset(int level) const {
    return static_cast<Eigen::Index>(level) * enc_.table_size() * enc_.features_per_level;
  }

  // -------------------------------------------------------------------------
  // Inference

  Eigen::VectorXd encode(const UnitPoint& p) const {
    Eigen::VectorXd e(input_dim());
    encode_into(p.vec(), e.data());
    return e;
  }

  Eigen::VectorXd forward(const UnitPoint& p) const {
    const std::array<UnitPoint, 1> one{p};
    return evaluate(one).row(0).transpose();
  }

  /// B x n_f outputs.
  Eigen::MatrixXd evaluate(std::span<const UnitPoint> points) const {
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd out(n, channels());
    Workspace ws;
    for (Eigen::Index s = 0; s < n; s += kChunk) {
      const Eigen::Index b = std::min(kChunk, n - s);
      const auto chunk = points.subspan(static_cast<std::size_t>(s), static_cast<std::size_t>(b));
      encode_batch(chunk, ws.acts[0]);
      run_forward(ws);
      out.middleRows(s, b) = ws.output.transpose();
    }
    if (!out.allFinite()) throw NumericFault("non-finite network output; parameters are not finite");
    return out;
  }

  /// dS/dp (n_f x 3), floor convention at grid-cell boundaries.
  InputJacobian input_gradient(const UnitPoint& p) const {
    Workspace ws;
    const std::array<UnitPoint, 1> one{p};
    encode_batch(one, ws.acts[0]);
    run_forward(ws);
    Eigen::Matrix<double, Eigen::Dynamic, 3> e = encoding_jacobian(p.vec());  // D x 3
    Eigen::MatrixXd m = e;
    for (int l = 0; l < layer_count(); ++l) {
      m = weight(l) * m;
      if (l + 1 < layer_count()) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          if (!(ws.acts[static_cast<std::size_t>(l + 1)](r, 0) > 0.0)) m.row(r).setZero();
        }
      }
    }
    return m;
  }

  /// D x 3 Jacobian of the encoding.
  Eigen::Matrix<double, Eigen::Dynamic, 3> encoding_jacobian(const Vec3& p) const {
    Eigen::Matrix<double, Eigen::Dynamic, 3> j(input_dim(), 3);
    const int F = enc_.features_per_level;
    for (int level = 0; level < enc_.levels; ++level) {
      const Cell c = cell(level, p);
      const double scale = 0.5 * resolution_[static_cast<std::size_t>(level)];
      for (int f = 0; f < F; ++f) {
        double s[8];
        for (int k = 0; k < 8; ++k) s[k] = table_entry(level, c.index[static_cast<std::size_t>(k)], f);
        j.row(level * F + f) = scale * c.gradient(s).transpose();
      }
    }
    return j;
  }

  /// Residuals against `targets` (B x n_f) and their pullback through the
  /// input Jacobian, one pass over the batch.
  Pullback residual_pullback(std::span<const UnitPoint> points, const Eigen::MatrixXd& targets) const {
    const auto n = static_cast<Eigen::Index>(points.size());
    if (targets.rows() != n || targets.cols() != channels()) throw ShapeError("target shape mismatch");
    Pullback pb;
    pb.residual.resize(n, channels());
    pb.vjp.resize(n, 3);
    Workspace ws;
    std::vector<Cell> cells;
    Eigen::MatrixXd dx;
    const auto L = static_cast<std::size_t>(enc_.levels);
    for (Eigen::Index s = 0; s < n; s += kChunk) {
      const Eigen::Index b = std::min(kChunk, n - s);
      const auto chunk = points.subspan(static_cast<std::size_t>(s), static_cast<std::size_t>(b));
      encode_batch(chunk, ws.acts[0], &cells);
      run_forward(ws);
      Eigen::MatrixXd r = ws.output - targets.middleRows(s, b).transpose();
      pb.residual.middleRows(s, b) = r.transpose();
      run_backward(ws, r, nullptr, &dx);
      for (Eigen::Index i = 0; i < b; ++i) {
        pb.vjp.row(s + i) = encoding_pullback(cells.data() + static_cast<std::size_t>(i) * L, dx.col(i).data());
      }
    }
    if (!pb.residual.allFinite()) throw NumericFault("non-finite network output; parameters are not finite");
    return pb;
  }

  // -------------------------------------------------------------------------
  // Training

  /// Mean squared error over batch and channels, and its gradient with
  /// respect to every parameter (accumulated into `grad`, which must be
  /// zeroed by the caller).
  double loss_and_gradient(std::span<const UnitPoint> points, const Eigen::MatrixXd& targets_t,
                           Eigen::VectorXd& grad) const {
    const auto n = static_cast<Eigen::Index>(points.size());
    if (n == 0) throw InputError("empty batch");
    if (targets_t.cols() != n || targets_t.rows() != channels()) throw ShapeError("target shape mismatch");
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
    const double scale = 2.0 / (static_cast<double>(n) * channels());
    double sse = 0.0;
    Workspace ws;
    std::vector<Cell> cells;
    Eigen::MatrixXd dx;
    const auto L = static_cast<std::size_t>(enc_.levels);
    for (Eigen::Index s = 0; s < n; s += kChunk) {
      const Eigen::Index b = std::min(kChunk, n - s);
      const auto chunk = points.subspan(static_cast<std::size_t>(s), static_cast<std::size_t>(b));
      encode_batch(chunk, ws.acts[0], &cells);
      run_forward(ws);
      Eigen::MatrixXd r = ws.output - targets_t.middleCols(s, b);
      sse += r.squaredNorm();
      r *= scale;
      run_backward(ws, r, &grad, &dx);
      for (Eigen::Index i = 0; i < b; ++i) {
        scatter_table_gradient(cells.data() + static_cast<std::size_t>(i) * L, dx.col(i).data(), grad);
      }
    }
    return sse / (static_cast<double>(n) * channels());
  }

  struct ParamGradient {
    double loss;
    Eigen::VectorXd gradient;
  };

  /// Exact gradient of the batch MSE with respect to all parameters.
  ParamGradient backward_params(std::span<const UnitPoint> points, const Eigen::MatrixXd& targets) const {
    if (targets.rows() != static_cast<Eigen::Index>(points.size())) throw ShapeError("target shape mismatch");
    ParamGradient g{0.0, Eigen::VectorXd::Zero(params_.size())};
    g.loss = loss_and_gradient(points, targets.transpose(), g.gradient);
    return g;
  }

  double mse(std::span<const UnitPoint> points, const Eigen::MatrixXd& targets) const {
    return (evaluate(points) - targets).squaredNorm() / (static_cast<double>(targets.size()));
  }

  bool parameters_finite() const { return params_.allFinite(); }

  // -------------------------------------------------------------------------
  // Serialization (little-endian)

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    auto put = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const std::uint8_t*>(p);
      if constexpr (std::endian::native == std::endian::little) {
        out.insert(out.end(), b, b + n);
      } else {
        for (std::size_t i = n; i-- > 0;) out.push_back(b[i]);
      }
    };
    auto u32 = [&](std::uint32_t v) { put(&v, 4); };
    auto u64 = [&](std::uint64_t v) { put(&v, 8); };
    auto f64 = [&](double v) { put(&v, 8); };
    out.insert(out.end(), kMagic, kMagic + 6);
    u32(static_cast<std::uint32_t>(enc_.levels));
    u32(static_cast<std::uint32_t>(enc_.features_per_level));
    u32(static_cast<std::uint32_t>(enc_.table_size_log2));
    u32(static_cast<std::uint32_t>(enc_.base_resolution));
    f64(enc_.growth_factor);
    u32(static_cast<std::uint32_t>(mlp_.hidden_layers));
    u32(static_cast<std::uint32_t>(mlp_.hidden_width));
    u32(static_cast<std::uint32_t>(mlp_.output_dim));
    u32(static_cast<std::uint32_t>(mlp_.activation));
    u64(iterations_);
    u64(seed_);
    u32(static_cast<std::uint32_t>(channel_names_.size()));
    for (const auto& name : channel_names_) {
      u32(static_cast<std::uint32_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
    }
    u64(static_cast<std::uint64_t>(params_.size()));
    out.reserve(out.size() + static_cast<std::size_t>(params_.size()) * 8);
    for (Eigen::Index i = 0; i < params_.size(); ++i) f64(params_[i]);
    return out;
  }

  static NeuralCorticalMap deserialize(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (bytes.size() - pos < n) throw ParseError("truncated model file", static_cast<std::int64_t>(pos));
    };
    auto get = [&](void* p, std::size_t n) {
      need(n);
      auto* b = static_cast<std::uint8_t*>(p);
      if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(b, bytes.data() + pos, n);
      } else {
        for (std::size_t i = 0; i < n; ++i) b[n - 1 - i] = bytes[pos + i];
      }
      pos += n;
    };
    auto u32 = [&] { std::uint32_t v; get(&v, 4); return v; };
    auto u64 = [&] { std::uint64_t v; get(&v, 8); return v; };
    auto f64 = [&] { double v; get(&v, 8); return v; };
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
      throw UnsupportedVersion("model file does not start with the NCMAP1 tag");
    }
    pos = 6;
    HashEncodingConfig enc;
    enc.levels = static_cast<int>(u32());
    enc.features_per_level = static_cast<int>(u32());
    enc.table_size_log2 = static_cast<int>(u32());
    enc.base_resolution = static_cast<int>(u32());
    enc.growth_factor = f64();
    MlpConfig mlp;
    mlp.hidden_layers = static_cast<int>(u32());
    mlp.hidden_width = static_cast<int>(u32());
    mlp.output_dim = static_cast<int>(u32());
    const std::uint32_t act = u32();
    if (act != 0) throw UnsupportedVersion("unknown activation id " + std::to_string(act));
    try {
      enc.validate();
      mlp.validate();
    } catch (const InputError& e) {
      throw UnsupportedVersion(std::string("model header is invalid: ") + e.what());
    }
    NeuralCorticalMap m;
    m.enc_ = enc;
    m.mlp_ = mlp;
    m.iterations_ = u64();
    m.seed_ = u64();
    const std::uint32_t names = u32();
    if (names != static_cast<std::uint32_t>(mlp.output_dim)) {
      throw ParseError("channel name count does not match output dimension", static_cast<std::int64_t>(pos));
    }
    for (std::uint32_t i = 0; i < names; ++i) {
      const std::uint32_t len = u32();
      need(len);
      m.channel_names_.emplace_back(reinterpret_cast<const char*>(bytes.data() + pos), len);
      pos += len;
    }
    m.layout();
    const std::uint64_t count = u64();
    if (count != static_cast<std::uint64_t>(m.params_.size())) {
      throw ParseError("parameter count " + std::to_string(count) + " does not match the configuration (" +
                           std::to_string(m.params_.size()) + ")",
                       static_cast<std::int64_t>(pos));
    }
    need(count * 8);
    for (Eigen::Index i = 0; i < m.params_.size(); ++i) m.params_[i] = f64();
    if (!m.params_.allFinite()) throw NumericFault("model file contains non-finite parameters");
    return m;
  }

  static constexpr char kMagic[6] = {'N', 'C', 'M', 'A', 'P', '1'};

 private:
  struct LayerLayout {
    Eigen::Index weight, bias, rows, cols;
  };

  struct Workspace {
    std::vector<Eigen::MatrixXd> acts = std::vector<Eigen::MatrixXd>(1);
    Eigen::MatrixXd output;
  };

  /// Grid cell around a point at one level: table indices of the 8 corners
  /// (bit 0 = x, bit 1 = y, bit 2 = z) and the position inside the cell.
  struct Cell {
    std::array<std::uint32_t, 8> index;
    double fx, fy, fz;

    std::array<double, 8> weights() const {
      const double wx[2] = {1.0 - fx, fx};
      const double wy[2] = {1.0 - fy, fy};
      const double wz[2] = {1.0 - fz, fz};
      std::array<double, 8> w;
      for (int k = 0; k < 8; ++k) w[static_cast<std::size_t>(k)] = wx[k & 1] * wy[(k >> 1) & 1] * wz[(k >> 2) & 1];
      return w;
    }

    /// Gradient with respect to the cell position of sum_k w_k s_k.
    Vec3 gradient(const double* s) const {
      const double gx = (1 - fy) * (1 - fz) * (s[1] - s[0]) + fy * (1 - fz) * (s[3] - s[2]) +
                        (1 - fy) * fz * (s[5] - s[4]) + fy * fz * (s[7] - s[6]);
      const double gy = (1 - fx) * (1 - fz) * (s[2] - s[0]) + fx * (1 - fz) * (s[3] - s[1]) +
                        (1 - fx) * fz * (s[6] - s[4]) + fx * fz * (s[7] - s[5]);
      const double gz = (1 - fx) * (1 - fy) * (s[4] - s[0]) + fx * (1 - fy) * (s[5] - s[1]) +
                        (1 - fx) * fy * (s[6] - s[2]) + fx * fy * (s[7] - s[3]);
      return {gx, gy, gz};
    }
  };

  Cell cell(int level, const Vec3& p) const {
    const double half_res = 0.5 * resolution_[static_cast<std::size_t>(level)];
    const double px = (p.x() + 1.0) * half_res;
    const double py = (p.y() + 1.0) * half_res;
    const double pz = (p.z() + 1.0) * half_res;
    const double lx = std::floor(px), ly = std::floor(py), lz = std::floor(pz);
    Cell c;
    c.fx = px - lx;
    c.fy = py - ly;
    c.fz = pz - lz;
    // Positions are non-negative, so the casts are exact floors.
    const auto ix = static_cast<std::uint32_t>(lx);
    const auto iy = static_cast<std::uint32_t>(ly);
    const auto iz = static_cast<std::uint32_t>(lz);
    const std::uint32_t mask = enc_.table_size() - 1;
    const std::uint32_t hx[2] = {ix * kPrimes[0], (ix + 1) * kPrimes[0]};
    const std::uint32_t hy[2] = {iy * kPrimes[1], (iy + 1) * kPrimes[1]};
    const std::uint32_t hz[2] = {iz * kPrimes[2], (iz + 1) * kPrimes[2]};
    for (int k = 0; k < 8; ++k) c.index[static_cast<std::size_t>(k)] = (hx[k & 1] ^ hy[(k >> 1) & 1] ^ hz[(k >> 2) & 1]) & mask;
    return c;
  }

  void encode_cell(int level, const Cell& c, double* out) const {
    const int F = enc_.features_per_level;
    const double* table = params_.data() + table_offset(level);
    const auto w = c.weights();
    for (int f = 0; f < F; ++f) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        acc += w[static_cast<std::size_t>(k)] * table[static_cast<std::size_t>(c.index[static_cast<std::size_t>(k)]) * F + f];
      }
      out[f] = acc;
    }
  }

  void encode_into(const Vec3& p, double* out) const {
    for (int level = 0; level < enc_.levels; ++level) encode_cell(level, cell(level, p), out + level * enc_.features_per_level);
  }

  /// Encodes a batch column-wise; keeps every cell in `cells` (point-major)
  /// when given so the reverse pass need not hash again.
  void encode_batch(std::span<const UnitPoint> points, Eigen::MatrixXd& enc, std::vector<Cell>* cells = nullptr) const {
    const auto n = static_cast<Eigen::Index>(points.size());
    enc.resize(input_dim(), n);
    if (cells) cells->resize(points.size() * static_cast<std::size_t>(enc_.levels));
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3& p = points[static_cast<std::size_t>(i)].vec();
      double* out = enc.col(i).data();
      for (int level = 0; level < enc_.levels; ++level) {
        const Cell c = cell(level, p);
        encode_cell(level, c, out + level * enc_.features_per_level);
        if (cells) (*cells)[static_cast<std::size_t>(i) * static_cast<std::size_t>(enc_.levels) + static_cast<std::size_t>(level)] = c;
      }
    }
  }

  void scatter_table_gradient(const Cell* cells, const double* dx, Eigen::VectorXd& grad) const {
    const int F = enc_.features_per_level;
    for (int level = 0; level < enc_.levels; ++level) {
      const Cell& c = cells[level];
      const auto w = c.weights();
      double* table = grad.data() + table_offset(level);
      const double* d = dx + level * F;
      for (int k = 0; k < 8; ++k) {
        double* entry = table + static_cast<std::size_t>(c.index[static_cast<std::size_t>(k)]) * F;
        for (int f = 0; f < F; ++f) entry[f] += w[static_cast<std::size_t>(k)] * d[f];
      }
    }
  }

  /// (d encoding / d p)^T dx for one point.
  Vec3 encoding_pullback(const Cell* cells, const double* dx) const {
    const int F = enc_.features_per_level;
    Vec3 g = Vec3::Zero();
    for (int level = 0; level < enc_.levels; ++level) {
      const Cell& c = cells[level];
      const double* table = params_.data() + table_offset(level);
      const double* d = dx + level * F;
      double s[8];
      for (int k = 0; k < 8; ++k) {
        const double* entry = table + static_cast<std::size_t>(c.index[static_cast<std::size_t>(k)]) * F;
        double acc = 0.0;
        for (int f = 0; f < F; ++f) acc += d[f] * entry[f];
        s[k] = acc;
      }
      g += (0.5 * resolution_[static_cast<std::size_t>(level)]) * c.gradient(s);
    }
    return g;
  }

  void run_forward(Workspace& ws) const {
    ws.acts.resize(static_cast<std::size_t>(layer_count()));
    for (int l = 0; l < layer_count(); ++l) {
      const Eigen::MatrixXd& in = ws.acts[static_cast<std::size_t>(l)];
      Eigen::MatrixXd& out = (l + 1 < layer_count()) ? ws.acts[static_cast<std::size_t>(l + 1)] : ws.output;
      out.noalias() = weight(l) * in;
      out.colwise() += bias(l);
      if (l + 1 < layer_count()) out = out.cwiseMax(0.0);
    }
  }

  /// Reverse pass from d(loss)/d(output). Accumulates parameter gradients
  /// into `grad` when given, and writes d(loss)/d(encoding) into `dx`.
  void run_backward(const Workspace& ws, Eigen::MatrixXd g, Eigen::VectorXd* grad, Eigen::MatrixXd* dx) const {
    for (int l = layer_count() - 1; l >= 0; --l) {
      const Eigen::MatrixXd& in = ws.acts[static_cast<std::size_t>(l)];
      if (grad) {
        const auto& lay = layers_[static_cast<std::size_t>(l)];
        Eigen::Map<Eigen::MatrixXd> dw(grad->data() + lay.weight, lay.rows, lay.cols);
        Eigen::Map<Eigen::VectorXd> db(grad->data() + lay.bias, lay.rows);
        dw.noalias() += g * in.transpose();
        db += g.rowwise().sum();
      }
      Eigen::MatrixXd back = weight(l).transpose() * g;
      if (l > 0) {
        g = (in.array() > 0.0).select(back, 0.0);
      } else if (dx) {
        *dx = std::move(back);
      }
    }
  }

  void layout() {
    const Eigen::Index tables = static_cast<Eigen::Index>(enc_.levels) * enc_.table_size() * enc_.features_per_level;
    table_params_ = tables;
    Eigen::Index off = tables;
    layers_.clear();
    Eigen::Index in = enc_.output_dim();
    for (int l = 0; l < mlp_.hidden_layers + 1; ++l) {
      const Eigen::Index out = (l < mlp_.hidden_layers) ? mlp_.hidden_width : mlp_.output_dim;
      layers_.push_back({off, off + out * in, out, in});
      off += out * in + out;
      in = out;
    }
    params_ = Eigen::VectorXd::Zero(off);
    resolution_.clear();
    for (int l = 0; l < enc_.levels; ++l) resolution_.push_back(static_cast<double>(enc_.resolution(l)));
    if (channel_names_.empty()) {
      for (int c = 0; c < mlp_.output_dim; ++c) channel_names_.push_back("f" + std::to_string(c));
    }
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> table_init(-1e-4, 1e-4);
    for (Eigen::Index i = 0; i < table_params_; ++i) params_[i] = table_init(rng);
    for (const auto& l : layers_) {
      const double bound = std::sqrt(6.0 / static_cast<double>(l.rows + l.cols));
      std::uniform_real_distribution<double> w(-bound, bound);
      for (Eigen::Index i = 0; i < l.rows * l.cols; ++i) params_[l.weight + i] = w(rng);
      for (Eigen::Index i = 0; i < l.rows; ++i) params_[l.bias + i] = 0.0;
    }
  }

  HashEncodingConfig enc_;
  MlpConfig mlp_;
  std::uint64_t seed_ = 0;
  std::uint64_t iterations_ = 0;
  std::vector<std::string> channel_names_;
  Eigen::VectorXd params_;
  Eigen::Index table_params_ = 0;
  std::vector<LayerLayout> layers_;
  std::vector<double> resolution_;
};

}  // namespace ncmap
