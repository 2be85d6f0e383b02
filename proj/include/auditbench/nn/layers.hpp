#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "auditbench/core/rng.hpp"
#include "auditbench/core/tensor.hpp"

namespace auditbench {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0f); }
};

/// Backprop layer over batched tensors ([N,C,H,W] or [N,F]). forward caches
/// what backward needs; backward returns the input gradient and accumulates
/// parameter gradients.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  /// Non-learned state that must survive checkpointing (running statistics).
  virtual std::vector<Tensor*> buffers() { return {}; }
  virtual void init(Rng& rng) { (void)rng; }
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride = 1,
         std::size_t pad = 1, std::size_t groups = 1, bool bias = true)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad), groups_(groups),
        has_bias_(bias) {
    if (in_c % groups != 0 || out_c % groups != 0)
      throw std::invalid_argument("conv: channels not divisible by groups");
    w_.name = "conv_w";
    w_.value = Tensor({out_c_, (in_c_ / groups_) * k_ * k_});
    w_.grad = Tensor(w_.value.shape);
    if (has_bias_) {
      b_.name = "conv_b";
      b_.value = Tensor({out_c_});
      b_.grad = Tensor({out_c_});
    }
  }

  void init(Rng& rng) override {
    const float std = std::sqrt(2.0f / float((in_c_ / groups_) * k_ * k_));
    for (float& v : w_.value.data) v = gaussian(rng, 0.0f, std);
    if (has_bias_) b_.value.fill(0.0f);
  }

  Tensor forward(const Tensor& x, bool) override {
    cache_input_ = x;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    out_h_ = (h + 2 * pad_ - k_) / stride_ + 1;
    out_w_ = (w + 2 * pad_ - k_) / stride_ + 1;
    const std::size_t kk = (in_c_ / groups_) * k_ * k_;
    const std::size_t patch = out_h_ * out_w_;
    Tensor y({n, out_c_, out_h_, out_w_});
    cols_.assign(n, {});
    const std::size_t ocg = out_c_ / groups_;
    for (std::size_t i = 0; i < n; ++i) {
      cols_[i] = im2col(x, i);
      for (std::size_t g = 0; g < groups_; ++g) {
        ConstMapRM wg(w_.value.ptr() + g * ocg * kk, Eigen::Index(ocg), Eigen::Index(kk));
        ConstMapRM cg(cols_[i].data() + g * kk * patch, Eigen::Index(kk), Eigen::Index(patch));
        MapRM og(y.ptr() + ((i * out_c_) + g * ocg) * patch, Eigen::Index(ocg),
                 Eigen::Index(patch));
        og.noalias() = wg * cg;
      }
      if (has_bias_)
        for (std::size_t c = 0; c < out_c_; ++c) {
          float* p = y.ptr() + (i * out_c_ + c) * patch;
          for (std::size_t j = 0; j < patch; ++j) p[j] += b_.value[c];
        }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const Tensor& x = cache_input_;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t kk = (in_c_ / groups_) * k_ * k_;
    const std::size_t patch = out_h_ * out_w_;
    const std::size_t ocg = out_c_ / groups_;
    Tensor gx(x.shape);
    std::vector<float> gcol(groups_ * kk * patch);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g = 0; g < groups_; ++g) {
        ConstMapRM gog(gy.ptr() + ((i * out_c_) + g * ocg) * patch, Eigen::Index(ocg),
                       Eigen::Index(patch));
        ConstMapRM cg(cols_[i].data() + g * kk * patch, Eigen::Index(kk),
                      Eigen::Index(patch));
        MapRM gwg(w_.grad.ptr() + g * ocg * kk, Eigen::Index(ocg), Eigen::Index(kk));
        gwg.noalias() += gog * cg.transpose();
        ConstMapRM wg(w_.value.ptr() + g * ocg * kk, Eigen::Index(ocg), Eigen::Index(kk));
        MapRM gcg(gcol.data() + g * kk * patch, Eigen::Index(kk), Eigen::Index(patch));
        gcg.noalias() = wg.transpose() * gog;
      }
      if (has_bias_)
        for (std::size_t c = 0; c < out_c_; ++c) {
          const float* p = gy.ptr() + (i * out_c_ + c) * patch;
          float s = 0.0f;
          for (std::size_t j = 0; j < patch; ++j) s += p[j];
          b_.grad[c] += s;
        }
      col2im(gcol, gx, i, h, w);
    }
    return gx;
  }

  std::vector<Param*> params() override {
    return has_bias_ ? std::vector<Param*>{&w_, &b_} : std::vector<Param*>{&w_};
  }
  std::string name() const override { return "conv2d"; }

 private:
  std::vector<float> im2col(const Tensor& x, std::size_t i) const {
    const std::size_t h = x.dim(2), w = x.dim(3);
    const std::size_t icg = in_c_ / groups_;
    const std::size_t kk = icg * k_ * k_;
    const std::size_t patch = out_h_ * out_w_;
    std::vector<float> col(groups_ * kk * patch, 0.0f);
    for (std::size_t g = 0; g < groups_; ++g)
      for (std::size_t c = 0; c < icg; ++c) {
        const float* src = x.ptr() + ((i * in_c_) + g * icg + c) * h * w;
        for (std::size_t ky = 0; ky < k_; ++ky)
          for (std::size_t kx = 0; kx < k_; ++kx) {
            float* dst = col.data() + (g * kk + (c * k_ + ky) * k_ + kx) * patch;
            for (std::size_t oy = 0; oy < out_h_; ++oy) {
              const std::ptrdiff_t sy = std::ptrdiff_t(oy * stride_ + ky) - std::ptrdiff_t(pad_);
              if (sy < 0 || sy >= std::ptrdiff_t(h)) continue;
              for (std::size_t ox = 0; ox < out_w_; ++ox) {
                const std::ptrdiff_t sx = std::ptrdiff_t(ox * stride_ + kx) - std::ptrdiff_t(pad_);
                if (sx < 0 || sx >= std::ptrdiff_t(w)) continue;
                dst[oy * out_w_ + ox] = src[std::size_t(sy) * w + std::size_t(sx)];
              }
            }
          }
      }
    return col;
  }

  void col2im(const std::vector<float>& col, Tensor& gx, std::size_t i, std::size_t h,
              std::size_t w) const {
    const std::size_t icg = in_c_ / groups_;
    const std::size_t kk = icg * k_ * k_;
    const std::size_t patch = out_h_ * out_w_;
    for (std::size_t g = 0; g < groups_; ++g)
      for (std::size_t c = 0; c < icg; ++c) {
        float* dst = gx.ptr() + ((i * in_c_) + g * icg + c) * h * w;
        for (std::size_t ky = 0; ky < k_; ++ky)
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const float* src = col.data() + (g * kk + (c * k_ + ky) * k_ + kx) * patch;
            for (std::size_t oy = 0; oy < out_h_; ++oy) {
              const std::ptrdiff_t sy = std::ptrdiff_t(oy * stride_ + ky) - std::ptrdiff_t(pad_);
              if (sy < 0 || sy >= std::ptrdiff_t(h)) continue;
              for (std::size_t ox = 0; ox < out_w_; ++ox) {
                const std::ptrdiff_t sx = std::ptrdiff_t(ox * stride_ + kx) - std::ptrdiff_t(pad_);
                if (sx < 0 || sx >= std::ptrdiff_t(w)) continue;
                dst[std::size_t(sy) * w + std::size_t(sx)] += src[oy * out_w_ + ox];
              }
            }
          }
      }
  }

  std::size_t in_c_, out_c_, k_, stride_, pad_, groups_;
  bool has_bias_;
  std::size_t out_h_ = 0, out_w_ = 0;
  Param w_, b_;
  Tensor cache_input_;
  std::vector<std::vector<float>> cols_;
};

// ---------------------------------------------------------------------------

class Linear final : public Layer {
 public:
  Linear(std::size_t in_f, std::size_t out_f) : in_f_(in_f), out_f_(out_f) {
    w_.name = "linear_w";
    w_.value = Tensor({out_f_, in_f_});
    w_.grad = Tensor(w_.value.shape);
    b_.name = "linear_b";
    b_.value = Tensor({out_f_});
    b_.grad = Tensor({out_f_});
  }

  void init(Rng& rng) override {
    const float std = std::sqrt(2.0f / float(in_f_));
    for (float& v : w_.value.data) v = gaussian(rng, 0.0f, std);
    b_.value.fill(0.0f);
  }

  Tensor forward(const Tensor& x, bool) override {
    cache_input_ = x;
    const std::size_t n = x.dim(0);
    Tensor y({n, out_f_});
    ConstMapRM xm(x.ptr(), Eigen::Index(n), Eigen::Index(in_f_));
    ConstMapRM wm(w_.value.ptr(), Eigen::Index(out_f_), Eigen::Index(in_f_));
    MapRM ym(y.ptr(), Eigen::Index(n), Eigen::Index(out_f_));
    ym.noalias() = xm * wm.transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f_; ++j) y[i * out_f_ + j] += b_.value[j];
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const std::size_t n = cache_input_.dim(0);
    Tensor gx(cache_input_.shape);
    ConstMapRM gym(gy.ptr(), Eigen::Index(n), Eigen::Index(out_f_));
    ConstMapRM xm(cache_input_.ptr(), Eigen::Index(n), Eigen::Index(in_f_));
    ConstMapRM wm(w_.value.ptr(), Eigen::Index(out_f_), Eigen::Index(in_f_));
    MapRM gwm(w_.grad.ptr(), Eigen::Index(out_f_), Eigen::Index(in_f_));
    gwm.noalias() += gym.transpose() * xm;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f_; ++j) b_.grad[j] += gy[i * out_f_ + j];
    MapRM gxm(gx.ptr(), Eigen::Index(n), Eigen::Index(in_f_));
    gxm.noalias() = gym * wm;
    return gx;
  }

  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::string name() const override { return "linear"; }

 private:
  std::size_t in_f_, out_f_;
  Param w_, b_;
  Tensor cache_input_;
};

// ---------------------------------------------------------------------------

class ReLU final : public Layer {
 public:
  explicit ReLU(float cap = 0.0f) : cap_(cap) {}  // cap > 0 gives ReLU-n

  Tensor forward(const Tensor& x, bool) override {
    Tensor y = x;
    mask_.assign(x.numel(), 0);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y[i] <= 0.0f) {
        y[i] = 0.0f;
      } else if (cap_ > 0.0f && y[i] >= cap_) {
        y[i] = cap_;
      } else {
        mask_[i] = 1;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.numel(); ++i)
      if (!mask_[i]) gx[i] = 0.0f;
    return gx;
  }

  std::string name() const override { return "relu"; }

 private:
  float cap_;
  std::vector<unsigned char> mask_;
};

// ---------------------------------------------------------------------------

class MaxPool2d final : public Layer {
 public:
  explicit MaxPool2d(std::size_t k = 2) : k_(k) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape;
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / k_, ow = w / k_;
    Tensor y({n, c, oh, ow});
    argmax_.assign(y.numel(), 0);
    for (std::size_t i = 0; i < n * c; ++i) {
      const float* src = x.ptr() + i * h * w;
      float* dst = y.ptr() + i * oh * ow;
      std::size_t* arg = argmax_.data() + i * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          float best = -1e30f;
          std::size_t best_idx = 0;
          for (std::size_t dy = 0; dy < k_; ++dy)
            for (std::size_t dx = 0; dx < k_; ++dx) {
              const std::size_t idx = (oy * k_ + dy) * w + ox * k_ + dx;
              if (src[idx] > best) { best = src[idx]; best_idx = idx; }
            }
          dst[oy * ow + ox] = best;
          arg[oy * ow + ox] = best_idx;
        }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    const std::size_t h = in_shape_[2], w = in_shape_[3];
    const std::size_t oh = h / k_, ow = w / k_;
    for (std::size_t i = 0; i < in_shape_[0] * in_shape_[1]; ++i) {
      float* dst = gx.ptr() + i * h * w;
      const float* src = gy.ptr() + i * oh * ow;
      const std::size_t* arg = argmax_.data() + i * oh * ow;
      for (std::size_t j = 0; j < oh * ow; ++j) dst[arg[j]] += src[j];
    }
    return gx;
  }

  std::string name() const override { return "maxpool"; }

 private:
  std::size_t k_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape;
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
      const float* src = x.ptr() + i * hw;
      float s = 0.0f;
      for (std::size_t j = 0; j < hw; ++j) s += src[j];
      y[i] = s / float(hw);
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    const std::size_t hw = in_shape_[2] * in_shape_[3];
    for (std::size_t i = 0; i < in_shape_[0] * in_shape_[1]; ++i) {
      const float g = gy[i] / float(hw);
      float* dst = gx.ptr() + i * hw;
      for (std::size_t j = 0; j < hw; ++j) dst[j] = g;
    }
    return gx;
  }

  std::string name() const override { return "gap"; }

 private:
  std::vector<std::size_t> in_shape_;
};

class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape;
    Tensor y = x;
    y.shape = {x.dim(0), x.numel() / x.dim(0)};
    return y;
  }
  Tensor backward(const Tensor& gy) override {
    Tensor gx = gy;
    gx.shape = in_shape_;
    return gx;
  }
  std::string name() const override { return "flatten"; }

 private:
  std::vector<std::size_t> in_shape_;
};

// ---------------------------------------------------------------------------

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t c, float momentum = 0.9f, float eps = 1e-5f)
      : c_(c), momentum_(momentum), eps_(eps) {
    gamma_.name = "bn_gamma";
    gamma_.value = Tensor({c_}, 1.0f);
    gamma_.grad = Tensor({c_});
    beta_.name = "bn_beta";
    beta_.value = Tensor({c_});
    beta_.grad = Tensor({c_});
    running_mean_ = Tensor({c_});
    running_var_ = Tensor({c_}, 1.0f);
  }

  Tensor forward(const Tensor& x, bool train) override {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t hw = h * w;
    Tensor y(x.shape);
    mean_ = Tensor({c_});
    var_ = Tensor({c_});
    if (train) {
      for (std::size_t c = 0; c < c_; ++c) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const float* src = x.ptr() + (i * c_ + c) * hw;
          for (std::size_t j = 0; j < hw; ++j) m += src[j];
        }
        m /= double(n * hw);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const float* src = x.ptr() + (i * c_ + c) * hw;
          for (std::size_t j = 0; j < hw; ++j) v += (src[j] - m) * (src[j] - m);
        }
        v /= double(n * hw);
        mean_[c] = float(m);
        var_[c] = float(v);
        running_mean_[c] = momentum_ * running_mean_[c] + (1 - momentum_) * float(m);
        running_var_[c] = momentum_ * running_var_[c] + (1 - momentum_) * float(v);
      }
    } else {
      mean_ = running_mean_;
      var_ = running_var_;
    }
    cache_xhat_ = Tensor(x.shape);
    for (std::size_t c = 0; c < c_; ++c) {
      const float inv = 1.0f / std::sqrt(var_[c] + eps_);
      for (std::size_t i = 0; i < n; ++i) {
        const float* src = x.ptr() + (i * c_ + c) * hw;
        float* xh = cache_xhat_.ptr() + (i * c_ + c) * hw;
        float* dst = y.ptr() + (i * c_ + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          xh[j] = (src[j] - mean_[c]) * inv;
          dst[j] = gamma_.value[c] * xh[j] + beta_.value[c];
        }
      }
    }
    train_mode_ = train;
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const std::size_t n = gy.dim(0), hw = gy.dim(2) * gy.dim(3);
    const float m = float(n * hw);
    Tensor gx(gy.shape);
    for (std::size_t c = 0; c < c_; ++c) {
      const float inv = 1.0f / std::sqrt(var_[c] + eps_);
      double sum_gy = 0.0, sum_gy_xh = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* g = gy.ptr() + (i * c_ + c) * hw;
        const float* xh = cache_xhat_.ptr() + (i * c_ + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          sum_gy += g[j];
          sum_gy_xh += double(g[j]) * xh[j];
        }
      }
      gamma_.grad[c] += float(sum_gy_xh);
      beta_.grad[c] += float(sum_gy);
      for (std::size_t i = 0; i < n; ++i) {
        const float* g = gy.ptr() + (i * c_ + c) * hw;
        const float* xh = cache_xhat_.ptr() + (i * c_ + c) * hw;
        float* dst = gx.ptr() + (i * c_ + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          if (train_mode_) {
            dst[j] = gamma_.value[c] * inv *
                     (g[j] - float(sum_gy) / m - xh[j] * float(sum_gy_xh) / m);
          } else {
            dst[j] = gamma_.value[c] * inv * g[j];
          }
        }
      }
    }
    return gx;
  }

  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }
  std::string name() const override { return "batchnorm"; }

 private:
  std::size_t c_;
  float momentum_, eps_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_, mean_, var_, cache_xhat_;
  bool train_mode_ = false;
};

/// Group normalization; per-sample statistics, so it composes with
/// per-sample gradient clipping.
class GroupNorm final : public Layer {
 public:
  GroupNorm(std::size_t c, std::size_t groups = 8, float eps = 1e-5f)
      : c_(c), groups_(std::min(groups, c)), eps_(eps) {
    while (c_ % groups_ != 0) --groups_;
    gamma_.name = "gn_gamma";
    gamma_.value = Tensor({c_}, 1.0f);
    gamma_.grad = Tensor({c_});
    beta_.name = "gn_beta";
    beta_.value = Tensor({c_});
    beta_.grad = Tensor({c_});
  }

  Tensor forward(const Tensor& x, bool) override {
    const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
    const std::size_t cg = c_ / groups_;
    const std::size_t gsz = cg * hw;
    Tensor y(x.shape);
    cache_xhat_ = Tensor(x.shape);
    inv_std_.assign(n * groups_, 0.0f);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t g = 0; g < groups_; ++g) {
        const float* src = x.ptr() + (i * c_ + g * cg) * hw;
        double m = 0.0;
        for (std::size_t j = 0; j < gsz; ++j) m += src[j];
        m /= double(gsz);
        double v = 0.0;
        for (std::size_t j = 0; j < gsz; ++j) v += (src[j] - m) * (src[j] - m);
        v /= double(gsz);
        const float inv = 1.0f / std::sqrt(float(v) + eps_);
        inv_std_[i * groups_ + g] = inv;
        float* xh = cache_xhat_.ptr() + (i * c_ + g * cg) * hw;
        float* dst = y.ptr() + (i * c_ + g * cg) * hw;
        for (std::size_t j = 0; j < gsz; ++j) {
          xh[j] = (src[j] - float(m)) * inv;
          const std::size_t ch = g * cg + j / hw;
          dst[j] = gamma_.value[ch] * xh[j] + beta_.value[ch];
        }
      }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const std::size_t n = gy.dim(0), hw = gy.dim(2) * gy.dim(3);
    const std::size_t cg = c_ / groups_;
    const std::size_t gsz = cg * hw;
    Tensor gx(gy.shape);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t g = 0; g < groups_; ++g) {
        const float inv = inv_std_[i * groups_ + g];
        const float* gsrc = gy.ptr() + (i * c_ + g * cg) * hw;
        const float* xh = cache_xhat_.ptr() + (i * c_ + g * cg) * hw;
        double sum_gg = 0.0, sum_gg_xh = 0.0;
        for (std::size_t j = 0; j < gsz; ++j) {
          const std::size_t ch = g * cg + j / hw;
          const double gg = double(gsrc[j]) * gamma_.value[ch];
          sum_gg += gg;
          sum_gg_xh += gg * xh[j];
          gamma_.grad[ch] += gsrc[j] * xh[j];
          beta_.grad[ch] += gsrc[j];
        }
        float* dst = gx.ptr() + (i * c_ + g * cg) * hw;
        for (std::size_t j = 0; j < gsz; ++j) {
          const std::size_t ch = g * cg + j / hw;
          const double gg = double(gsrc[j]) * gamma_.value[ch];
          dst[j] = float(inv * (gg - sum_gg / double(gsz) -
                                double(xh[j]) * sum_gg_xh / double(gsz)));
        }
      }
    return gx;
  }

  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::string name() const override { return "groupnorm"; }

 private:
  std::size_t c_, groups_;
  float eps_;
  Param gamma_, beta_;
  Tensor cache_xhat_;
  std::vector<float> inv_std_;
};

// ---------------------------------------------------------------------------

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<std::unique_ptr<Layer>> layers)
      : layers_(std::move(layers)) {}

  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }

  void init(Rng& rng) override {
    for (auto& l : layers_) l->init(rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, train);
    return h;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor g = gy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param*> params() override {
    std::vector<Param*> out;
    for (auto& l : layers_)
      for (Param* p : l->params()) out.push_back(p);
    return out;
  }
  std::vector<Tensor*> buffers() override {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
      for (Tensor* b : l->buffers()) out.push_back(b);
    return out;
  }
  std::string name() const override { return "sequential"; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// y = relu(main(x) + shortcut(x)); shortcut empty means identity.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::unique_ptr<Sequential> main, std::unique_ptr<Sequential> shortcut,
                bool relu_after = true)
      : main_(std::move(main)), shortcut_(std::move(shortcut)), relu_after_(relu_after) {}

  void init(Rng& rng) override {
    main_->init(rng);
    if (shortcut_) shortcut_->init(rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    Tensor m = main_->forward(x, train);
    Tensor s = shortcut_ ? shortcut_->forward(x, train) : x;
    Tensor y = m + s;
    if (relu_after_) {
      mask_.assign(y.numel(), 0);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        if (y[i] > 0.0f) mask_[i] = 1;
        else y[i] = 0.0f;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor g = gy;
    if (relu_after_)
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (!mask_[i]) g[i] = 0.0f;
    Tensor gm = main_->backward(g);
    Tensor gs = shortcut_ ? shortcut_->backward(g) : g;
    return gm + gs;
  }

  std::vector<Param*> params() override {
    std::vector<Param*> out = main_->params();
    if (shortcut_)
      for (Param* p : shortcut_->params()) out.push_back(p);
    return out;
  }
  std::vector<Tensor*> buffers() override {
    std::vector<Tensor*> out = main_->buffers();
    if (shortcut_)
      for (Tensor* b : shortcut_->buffers()) out.push_back(b);
    return out;
  }
  std::string name() const override { return "residual"; }

 private:
  std::unique_ptr<Sequential> main_, shortcut_;
  bool relu_after_;
  std::vector<unsigned char> mask_;
};

}  // namespace auditbench
