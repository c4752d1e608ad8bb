#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "splatgraph/gaussian.hpp"
#include "splatgraph/rng.hpp"

namespace splatgraph {

inline constexpr int kDeformMeanBands = 8;
inline constexpr int kDeformTimeBands = 6;
inline constexpr int kDeformEmbedDim = 16;
inline constexpr int kDeformInDim = 3 * 2 * kDeformMeanBands + kDeformEmbedDim +
                                    2 * kDeformTimeBands;  // 76
inline constexpr int kDeformHidden = 128;
inline constexpr int kDeformOutDim = 10;  // d_mean 3, d_rot 4, d_log_scale 3

// sin/cos frequency bands, no raw passthrough.
inline void positional_encode(const double* x, int dims, int bands, double* out) {
  int j = 0;
  for (int d = 0; d < dims; ++d)
    for (int b = 0; b < bands; ++b) {
      double arg = std::ldexp(M_PI * x[d], b);  // 2^b * pi * x
      out[j++] = std::sin(arg);
      out[j++] = std::cos(arg);
    }
}

// Per-blob attribute deltas produced by the net.
struct DeformDeltas {
  std::vector<Vec3> d_mean;
  std::vector<Vec4> d_rot;
  std::vector<Vec3> d_log_scale;

  std::size_t size() const { return d_mean.size(); }
};

// Axis-aligned normalization box frozen at node init.
struct NormBox {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Ones();

  Vec3 normalize(const Vec3& p) const {
    return (p - center).cwiseQuotient(half.cwiseMax(1e-9));
  }
};

// Shared MLP over [PE(mean) | embedding | PE(t)], four tanh hidden layers of
// width 128, linear zero-initialized head.
class DeformationNet {
 public:
  static constexpr int kLayers = 5;

  DeformationNet() {
    static const int dims[kLayers + 1] = {kDeformInDim, kDeformHidden, kDeformHidden,
                                          kDeformHidden, kDeformHidden, kDeformOutDim};
    for (int l = 0; l < kLayers; ++l) {
      w_[l] = Eigen::MatrixXd::Zero(dims[l + 1], dims[l]);
      b_[l] = Eigen::VectorXd::Zero(dims[l + 1]);
    }
  }

  // Xavier-uniform hidden layers; the head stays zero so F == 0 at start.
  void init_weights(Rng& rng) {
    for (int l = 0; l < kLayers - 1; ++l) {
      double a = std::sqrt(6.0 / (w_[l].rows() + w_[l].cols()));
      for (Eigen::Index j = 0; j < w_[l].size(); ++j)
        w_[l].data()[j] = rng.uniform(-a, a);
    }
    w_[kLayers - 1].setZero();
    for (auto& b : b_) b.setZero();
  }

  Eigen::MatrixXd& weight(int l) { return w_[l]; }
  const Eigen::MatrixXd& weight(int l) const { return w_[l]; }
  Eigen::VectorXd& bias(int l) { return b_[l]; }
  const Eigen::VectorXd& bias(int l) const { return b_[l]; }

  bool finite() const {
    for (int l = 0; l < kLayers; ++l)
      if (!w_[l].allFinite() || !b_[l].allFinite()) return false;
    return true;
  }

  struct Cache {
    Eigen::MatrixXd input;                        // kDeformInDim x n
    std::array<Eigen::MatrixXd, kLayers - 1> act; // tanh activations per hidden layer
  };

  // Batched forward over columns of `input`.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const {
    if (input.rows() != kDeformInDim)
      throw std::invalid_argument("DeformationNet::forward: input dim mismatch");
    if (!finite())
      throw std::invalid_argument("DeformationNet::forward: non-finite weights");
    if (cache) cache->input = input;
    Eigen::MatrixXd a = input;
    for (int l = 0; l < kLayers - 1; ++l) {
      a = ((w_[l] * a).colwise() + b_[l]).array().tanh().matrix();
      if (cache) cache->act[l] = a;
    }
    return (w_[kLayers - 1] * a).colwise() + b_[kLayers - 1];
  }

  struct Grads {
    std::array<Eigen::MatrixXd, kLayers> d_w;
    std::array<Eigen::VectorXd, kLayers> d_b;

    explicit Grads(const DeformationNet& net) {
      for (int l = 0; l < kLayers; ++l) {
        d_w[l] = Eigen::MatrixXd::Zero(net.w_[l].rows(), net.w_[l].cols());
        d_b[l] = Eigen::VectorXd::Zero(net.b_[l].size());
      }
    }
  };

  // Accumulates weight grads; returns dL/dinput.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                           Grads& grads) const {
    Eigen::MatrixXd dz = d_out;
    for (int l = kLayers - 1; l >= 0; --l) {
      const Eigen::MatrixXd& prev = l == 0 ? cache.input : cache.act[l - 1];
      grads.d_w[l] += dz * prev.transpose();
      grads.d_b[l] += dz.rowwise().sum();
      if (l == 0) return w_[0].transpose() * dz;
      Eigen::MatrixXd da = w_[l].transpose() * dz;
      // d tanh(z) = 1 - tanh(z)^2
      dz = (da.array() * (1.0 - cache.act[l - 1].array().square())).matrix();
    }
    return {};
  }

 private:
  std::array<Eigen::MatrixXd, kLayers> w_;
  std::array<Eigen::VectorXd, kLayers> b_;
};

// Build the net input for one blob.
inline void deform_input_column(const Vec3& norm_mean, const Eigen::VectorXd& embed,
                                double t_norm, double* col) {
  positional_encode(norm_mean.data(), 3, kDeformMeanBands, col);
  int off = 3 * 2 * kDeformMeanBands;
  for (int j = 0; j < kDeformEmbedDim; ++j) col[off + j] = embed[j];
  off += kDeformEmbedDim;
  positional_encode(&t_norm, 1, kDeformTimeBands, col + off);
}

// Query deltas for a batch of normalized canonical means.
inline DeformDeltas deform_query(const DeformationNet& net,
                                 const std::vector<Vec3>& norm_means,
                                 const Eigen::VectorXd& embed, double t_norm,
                                 DeformationNet::Cache* cache = nullptr) {
  if (embed.size() != kDeformEmbedDim)
    throw std::invalid_argument("deform_query: embedding must have 16 entries");
  std::size_t n = norm_means.size();
  Eigen::MatrixXd input(kDeformInDim, n);
  for (std::size_t i = 0; i < n; ++i)
    deform_input_column(norm_means[i], embed, t_norm, input.col(i).data());
  Eigen::MatrixXd out = net.forward(input, cache);
  DeformDeltas d;
  d.d_mean.resize(n);
  d.d_rot.resize(n);
  d.d_log_scale.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.d_mean[i] = out.col(i).segment<3>(0);
    d.d_rot[i] = out.col(i).segment<4>(3);
    d.d_log_scale[i] = out.col(i).segment<3>(7);
  }
  return d;
}

// Convenience over a canonical set whose means are already normalized.
inline DeformDeltas deform_query(const DeformationNet& net, const GaussianSet& canonical,
                                 const Eigen::VectorXd& embed, double t_norm) {
  return deform_query(net, canonical.mean, embed, t_norm);
}

// mu + d_mean, rot + d_rot (pre-normalization), log_scale + d_log_scale.
inline GaussianSet apply_deltas(const GaussianSet& canonical, const DeformDeltas& d) {
  if (d.size() != canonical.size())
    throw std::invalid_argument("apply_deltas: count mismatch");
  GaussianSet out = canonical;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.mean[i] += d.d_mean[i];
    out.rot[i] += d.d_rot[i];
    out.log_scale[i] += d.d_log_scale[i];
  }
  return out;
}

// Backward of deform_query + apply_deltas. Upstream grads on the deformed
// set map one-to-one onto the deltas; the net then backpropagates those.
// Canonical means are detached from the encoding input, so only the
// embedding slice of d_input is consumed.
inline void deform_backward(const DeformationNet& net, const DeformationNet::Cache& cache,
                            const std::vector<Vec3>& d_mean_out,
                            const std::vector<Vec4>& d_rot_out,
                            const std::vector<Vec3>& d_log_scale_out,
                            DeformationNet::Grads& net_grads,
                            Eigen::VectorXd& d_embed) {
  std::size_t n = d_mean_out.size();
  Eigen::MatrixXd d_out(kDeformOutDim, n);
  for (std::size_t i = 0; i < n; ++i) {
    d_out.col(i).segment<3>(0) = d_mean_out[i];
    d_out.col(i).segment<4>(3) = d_rot_out[i];
    d_out.col(i).segment<3>(7) = d_log_scale_out[i];
  }
  Eigen::MatrixXd d_in = net.backward(cache, d_out, net_grads);
  d_embed += d_in.middleRows(3 * 2 * kDeformMeanBands, kDeformEmbedDim).rowwise().sum();
}

}  // namespace splatgraph
