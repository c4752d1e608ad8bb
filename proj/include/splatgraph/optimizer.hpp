#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace splatgraph {

// Log-linear decay from lr_init to lr_final across `total` iterations,
// holding lr_final afterwards.
inline double exp_lr(double lr_init, double lr_final, long long iter,
                     long long total) {
  if (lr_init <= 0.0 || lr_final <= 0.0)
    throw std::invalid_argument("exp_lr: rates must be positive");
  if (total <= 0) return lr_final;
  double u = static_cast<double>(iter) / static_cast<double>(total);
  u = u < 0.0 ? 0.0 : u > 1.0 ? 1.0 : u;
  return lr_init * std::pow(lr_final / lr_init, u);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over one flat parameter array. Moment buffers follow the array through
// densification: appended entries start with zero moments, filtered entries
// drop their moments.
class AdamArray {
 public:
  explicit AdamArray(AdamConfig cfg = {}) : cfg_(cfg) {}

  std::size_t size() const { return m_.size(); }
  long long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }

  void step(double* params, const double* grads, std::size_t n, double lr) {
    if (m_.empty() && n > 0) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
    if (n != m_.size()) throw std::invalid_argument("AdamArray::step: size mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < n; ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
      double mhat = m_[i] / bc1;
      double vhat = v_[i] / bc2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

  void append_zeros(std::size_t count) {
    m_.resize(m_.size() + count, 0.0);
    v_.resize(v_.size() + count, 0.0);
  }

  // Keeps moment blocks of `stride` values per flag; used when blobs are
  // pruned so optimizer state stays aligned with the surviving parameters.
  void filter(const std::vector<bool>& keep, std::size_t stride) {
    if (keep.size() * stride != m_.size())
      throw std::invalid_argument("AdamArray::filter: size mismatch");
    std::size_t out = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) continue;
      for (std::size_t c = 0; c < stride; ++c) {
        m_[out * stride + c] = m_[i * stride + c];
        v_[out * stride + c] = v_[i * stride + c];
      }
      ++out;
    }
    m_.resize(out * stride);
    v_.resize(out * stride);
  }

  void zero_state() {
    m_.assign(m_.size(), 0.0);
    v_.assign(v_.size(), 0.0);
  }

  void restore(std::vector<double> m, std::vector<double> v, long long t) {
    if (m.size() != v.size())
      throw std::invalid_argument("AdamArray::restore: moment size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long long t_ = 0;
};

}  // namespace splatgraph
