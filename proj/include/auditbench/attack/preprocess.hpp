#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "auditbench/attack/plugin.hpp"
#include "auditbench/data/bundle.hpp"
#include "auditbench/nn/network.hpp"

namespace auditbench {
namespace detail {

/// Bilinear resize of one C x H x W image.
inline Tensor resize_bilinear(const Tensor& x, std::size_t oh, std::size_t ow) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < oh; ++yy) {
      const float fy = oh == 1 ? 0.0f : float(yy) * float(h - 1) / float(oh - 1);
      const std::size_t y0 = std::size_t(fy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const float wy = fy - float(y0);
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const float fx = ow == 1 ? 0.0f : float(xx) * float(w - 1) / float(ow - 1);
        const std::size_t x0 = std::size_t(fx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const float wx = fx - float(x0);
        const float* p = x.ptr() + ch * h * w;
        const float v = (1 - wy) * ((1 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1]) +
                        wy * ((1 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1]);
        y[(ch * oh + yy) * ow + xx] = v;
      }
    }
  return y;
}

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return std::size_t(-i);
  if (i >= std::ptrdiff_t(n)) return 2 * n - 2 - std::size_t(i);
  return std::size_t(i);
}

}  // namespace detail

// --- per-image filters -------------------------------------------------------

/// 3x3 Gaussian smoothing with reflect padding; sigma -> 0 approaches the
/// identity kernel.
inline Tensor gaussian_filter_image(const Tensor& x, float sigma) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  float k[3];
  if (sigma <= 0.0f) return x;
  float sum = 0.0f;
  for (int d = -1; d <= 1; ++d) {
    k[d + 1] = std::exp(-float(d * d) / (2.0f * sigma * sigma));
    sum += k[d + 1];
  }
  for (float& v : k) v /= sum;
  Tensor y(x.shape);
  Tensor tmp(x.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.ptr() + ch * h * w;
    float* mid = tmp.ptr() + ch * h * w;
    float* dst = y.ptr() + ch * h * w;
    for (std::size_t yy = 0; yy < h; ++yy)  // horizontal pass
      for (std::size_t xx = 0; xx < w; ++xx) {
        float v = 0.0f;
        for (int d = -1; d <= 1; ++d)
          v += k[d + 1] * src[yy * w + detail::reflect_index(std::ptrdiff_t(xx) + d, w)];
        mid[yy * w + xx] = v;
      }
    for (std::size_t yy = 0; yy < h; ++yy)  // vertical pass
      for (std::size_t xx = 0; xx < w; ++xx) {
        float v = 0.0f;
        for (int d = -1; d <= 1; ++d)
          v += k[d + 1] * mid[detail::reflect_index(std::ptrdiff_t(yy) + d, h) * w + xx];
        dst[yy * w + xx] = std::clamp(v, 0.0f, 1.0f);
      }
  }
  return y;
}

/// 3x3 median filter with reflect padding.
inline Tensor median_filter_image(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y(x.shape);
  float window[9];
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.ptr() + ch * h * w;
    float* dst = y.ptr() + ch * h * w;
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx) {
        std::size_t n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            window[n++] = src[detail::reflect_index(std::ptrdiff_t(yy) + dy, h) * w +
                              detail::reflect_index(std::ptrdiff_t(xx) + dx, w)];
        std::nth_element(window, window + 4, window + 9);
        dst[yy * w + xx] = window[4];
      }
  }
  return y;
}

/// Level-1 2D Haar transform with soft thresholding of the three detail
/// bands, then inverse transform. Requires even height and width. Detail
/// magnitudes never grow (|d|' = max(|d| - t, 0) <= |d|).
inline Tensor wavelet_filter_image(const Tensor& x, float threshold) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("wavelet filter: image sides must be even and >= 2");
  Tensor y(x.shape);
  const auto soft = [threshold](float d) {
    const float m = std::max(std::fabs(d) - threshold, 0.0f);
    return d < 0.0f ? -m : m;
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.ptr() + ch * h * w;
    float* dst = y.ptr() + ch * h * w;
    for (std::size_t by = 0; by < h; by += 2)
      for (std::size_t bx = 0; bx < w; bx += 2) {
        const float a = src[by * w + bx], b = src[by * w + bx + 1];
        const float cc = src[(by + 1) * w + bx], d = src[(by + 1) * w + bx + 1];
        const float ll = (a + b + cc + d) * 0.5f;          // orthonormal Haar
        const float lh = soft((a - b + cc - d) * 0.5f);    // horizontal detail
        const float hl = soft((a + b - cc - d) * 0.5f);    // vertical detail
        const float hh = soft((a - b - cc + d) * 0.5f);    // diagonal detail
        dst[by * w + bx] = std::clamp((ll + lh + hl + hh) * 0.5f, 0.0f, 1.0f);
        dst[by * w + bx + 1] = std::clamp((ll - lh + hl - hh) * 0.5f, 0.0f, 1.0f);
        dst[(by + 1) * w + bx] = std::clamp((ll + lh - hl - hh) * 0.5f, 0.0f, 1.0f);
        dst[(by + 1) * w + bx + 1] = std::clamp((ll - lh - hl + hh) * 0.5f, 0.0f, 1.0f);
      }
  }
  return y;
}

/// Sum of |detail coefficient| over the level-1 Haar bands; test hook for the
/// energy-reduction property of the wavelet filter.
inline double haar_detail_energy(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  double e = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.ptr() + ch * h * w;
    for (std::size_t by = 0; by + 1 < h; by += 2)
      for (std::size_t bx = 0; bx + 1 < w; bx += 2) {
        const float a = src[by * w + bx], b = src[by * w + bx + 1];
        const float cc = src[(by + 1) * w + bx], d = src[(by + 1) * w + bx + 1];
        e += std::fabs((a - b + cc - d) * 0.5f) + std::fabs((a + b - cc - d) * 0.5f) +
             std::fabs((a - b - cc + d) * 0.5f);
      }
  }
  return e;
}

// --- dataset-level attacks ---------------------------------------------------

/// Random crop (pad-2 reflect), horizontal flip, and mild rescale per sample.
inline DatasetBundle augment_dataset(const DatasetBundle& data, std::uint64_t seed) {
  DatasetBundle out = data;
  out.provenance = data.provenance + "/augmented";
  Rng rng = make_rng(derive_seed(seed, 0xa06e47ULL));
  constexpr int pad = 2;
  for (Sample& s : out.samples) {
    const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    Tensor img = s.image;
    // mild random rescale, resized back to the native resolution
    const float scale = uniform(rng, 0.85f, 1.15f);
    const std::size_t sh = std::max<std::size_t>(2, std::size_t(std::lround(float(h) * scale)));
    const std::size_t sw = std::max<std::size_t>(2, std::size_t(std::lround(float(w) * scale)));
    if (sh != h || sw != w)
      img = detail::resize_bilinear(detail::resize_bilinear(img, sh, sw), h, w);
    // pad + random crop
    const int oy = uniform_int(rng, -pad, pad), ox = uniform_int(rng, -pad, pad);
    const bool flip = uniform(rng, 0.0f, 1.0f) < 0.5f;
    Tensor res({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t sy = detail::reflect_index(std::ptrdiff_t(yy) + oy, h);
          std::size_t sx = detail::reflect_index(std::ptrdiff_t(xx) + ox, w);
          if (flip) sx = w - 1 - sx;
          res[(ch * h + yy) * w + xx] = img[(ch * h + sy) * w + sx];
        }
    res.clamp_(0.0f, 1.0f);
    s.image = std::move(res);
  }
  return out;
}

namespace detail {

/// Plain MSE regression step for an image-to-image conv stack: forward,
/// gradient 2*(out - target)/numel, backward, SGD-momentum update.
struct RegressionTrainer {
  Network& net;
  double lr;
  double momentum = 0.9;
  std::vector<std::vector<float>> velocity;

  explicit RegressionTrainer(Network& n, double lr) : net(n), lr(lr) {
    for (Param* p : net.params()) velocity.emplace_back(p->value.numel(), 0.0f);
  }

  float step(const Tensor& input, const Tensor& target) {
    net.zero_grad();
    Tensor out = net.forward(input, true);
    Tensor grad(out.shape);
    double loss = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const float e = out[i] - target[i];
      loss += double(e) * e;
      grad[i] = 2.0f * e / float(out.numel());
    }
    net.backward(grad);
    apply_update();
    return float(loss / double(out.numel()));
  }

  void apply_update() {
    std::vector<Param*> params = net.params();
    for (std::size_t j = 0; j < params.size(); ++j)
      for (std::size_t k = 0; k < params[j]->value.numel(); ++k) {
        velocity[j][k] = float(momentum) * velocity[j][k] + params[j]->grad[k];
        params[j]->value[k] -= float(lr) * velocity[j][k];
        if (!std::isfinite(params[j]->value[k]))
          throw std::runtime_error("regression trainer diverged");
      }
  }
};

inline Tensor stack_images(const std::vector<const Tensor*>& imgs) {
  const Tensor& f = *imgs.front();
  Tensor out({imgs.size(), f.dim(0), f.dim(1), f.dim(2)});
  const std::size_t per = f.numel();
  for (std::size_t i = 0; i < imgs.size(); ++i)
    std::copy(imgs[i]->data.begin(), imgs[i]->data.end(), out.data.begin() + i * per);
  return out;
}

}  // namespace detail

/// 6-layer convolutional denoising autoencoder (channel bottleneck), trained
/// on the attacker's auxiliary split to reconstruct clean images from noisy
/// ones, then applied to the released data.
inline DatasetBundle autoencoder_denoise_dataset(const DatasetBundle& data,
                                                 const DatasetBundle& aux,
                                                 std::uint64_t seed,
                                                 std::size_t epochs = 30,
                                                 std::size_t batch_size = 32,
                                                 double lr = 0.01,
                                                 float noise_std = 0.1f) {
  if (aux.empty()) throw std::invalid_argument("autoencoder denoise: empty aux split");
  const std::size_t c = data.image_shape().at(0);
  Network net("denoise_autoencoder", 0, data.image_shape());
  net.add(std::make_unique<Conv2d>(c, 16, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(16, 32, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(32, 32, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(32, 32, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(32, 16, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(16, c, 3));
  net.init(derive_seed(seed, 0xae1417ULL));

  Rng rng = make_rng(derive_seed(seed, 0xae7261ULL));
  detail::RegressionTrainer trainer(net, lr);
  std::vector<std::size_t> idx(aux.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
      const std::size_t end = std::min(idx.size(), begin + batch_size);
      std::vector<const Tensor*> imgs;
      for (std::size_t i = begin; i < end; ++i) imgs.push_back(&aux.samples[idx[i]].image);
      Tensor target = detail::stack_images(imgs);
      Tensor noisy = target;
      for (float& v : noisy.data) v += gaussian(rng, 0.0f, noise_std);
      trainer.step(noisy, target);
    }
  }

  DatasetBundle out = data;
  out.provenance = data.provenance + "/autoencoder_denoised";
  for (Sample& s : out.samples) {
    Tensor xb = s.image;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor rec = net.forward(xb, false);
    rec.shape = s.image.shape;
    rec.clamp_(0.0f, 1.0f);
    s.image = std::move(rec);
  }
  return out;
}

/// Small class-conditional denoising-diffusion generator with deterministic
/// (eta = 0) sampling. The noise-prediction net is a conv stack conditioned
/// on broadcast timestep and class channels. Sample count and labels mirror
/// the source dataset.
struct SynthesisParams {
  std::size_t train_epochs = 40;
  std::size_t batch_size = 32;
  double lr = 0.01;
  std::size_t diffusion_steps = 100;  // training noise schedule length
  std::size_t sample_steps = 10;      // deterministic sampling steps
};

inline DatasetBundle synthesize_dataset(const DatasetBundle& data, std::uint64_t seed,
                                        SynthesisParams params = {}) {
  if (data.empty()) throw std::invalid_argument("synthesis: empty dataset");
  const std::size_t c = data.image_shape().at(0);
  const std::size_t T = params.diffusion_steps;
  // cosine-free linear beta schedule
  std::vector<double> alpha_bar(T);
  {
    double prod = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double beta = 1e-4 + (0.02 - 1e-4) * double(t) / double(T - 1);
      prod *= 1.0 - beta;
      alpha_bar[t] = prod;
    }
  }

  Network net("diffusion_denoiser", 0, data.image_shape());
  net.add(std::make_unique<Conv2d>(c + 2, 32, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(32, 32, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(32, 32, 3));
  net.add(std::make_unique<ReLU>());
  net.add(std::make_unique<Conv2d>(32, c, 3));
  net.init(derive_seed(seed, 0xddf17ULL));

  const std::size_t h = data.image_shape().at(1), w = data.image_shape().at(2);
  const std::size_t per = c * h * w;
  const auto conditioned = [&](const Tensor& batch_x, const std::vector<std::size_t>& ts,
                               const std::vector<int>& labels) {
    const std::size_t n = batch_x.dim(0);
    Tensor cond({n, c + 2, h, w});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(batch_x.data.begin() + i * per, batch_x.data.begin() + (i + 1) * per,
                cond.data.begin() + i * (c + 2) * h * w);
      float* tch = cond.ptr() + (i * (c + 2) + c) * h * w;
      float* lch = tch + h * w;
      const float tv = float(ts[i]) / float(T);
      const float lv = (float(labels[i]) + 0.5f) / float(data.class_count);
      for (std::size_t j = 0; j < h * w; ++j) {
        tch[j] = tv;
        lch[j] = lv;
      }
    }
    return cond;
  };

  Rng rng = make_rng(derive_seed(seed, 0xdd7261ULL));
  detail::RegressionTrainer trainer(net, params.lr);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 0; epoch < params.train_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t begin = 0; begin < idx.size(); begin += params.batch_size) {
      const std::size_t end = std::min(idx.size(), begin + params.batch_size);
      const std::size_t n = end - begin;
      Tensor x0({n, c, h, w});
      Tensor noise({n, c, h, w});
      std::vector<std::size_t> ts(n);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& s = data.samples[idx[begin + i]];
        std::copy(s.image.data.begin(), s.image.data.end(), x0.data.begin() + i * per);
        labels[i] = s.label;
        ts[i] = std::size_t(uniform_int(rng, 0, int(T) - 1));
      }
      for (float& v : noise.data) v = gaussian(rng, 0.0f, 1.0f);
      Tensor xt({n, c, h, w});
      for (std::size_t i = 0; i < n; ++i) {
        const float sa = float(std::sqrt(alpha_bar[ts[i]]));
        const float sn = float(std::sqrt(1.0 - alpha_bar[ts[i]]));
        for (std::size_t j = 0; j < per; ++j)
          xt.data[i * per + j] = sa * x0.data[i * per + j] + sn * noise.data[i * per + j];
      }
      trainer.step(conditioned(xt, ts, labels), noise);
    }
  }

  // deterministic reverse process over a strided step subset
  std::vector<std::size_t> steps;
  for (std::size_t i = 0; i < params.sample_steps; ++i)
    steps.push_back(T - 1 - i * (T / params.sample_steps));
  DatasetBundle out;
  out.class_count = data.class_count;
  out.split_tag = data.split_tag;
  out.provenance = data.provenance + "/synthesized";
  out.samples.reserve(data.size());
  Rng srng = make_rng(derive_seed(seed, 0xdd5a3fULL));
  const std::size_t gen_batch = params.batch_size;
  for (std::size_t begin = 0; begin < data.size(); begin += gen_batch) {
    const std::size_t end = std::min(data.size(), begin + gen_batch);
    const std::size_t n = end - begin;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = data.samples[begin + i].label;
    Tensor x({n, c, h, w});
    for (float& v : x.data) v = gaussian(srng, 0.0f, 1.0f);
    for (std::size_t si = 0; si < steps.size(); ++si) {
      const std::size_t t = steps[si];
      const double ab = alpha_bar[t];
      const double ab_prev = si + 1 < steps.size() ? alpha_bar[steps[si + 1]] : 1.0;
      std::vector<std::size_t> ts(n, t);
      Tensor eps = net.forward(conditioned(x, ts, labels), false);
      for (std::size_t j = 0; j < x.numel(); ++j) {
        const double x0 = (double(x[j]) - std::sqrt(1.0 - ab) * double(eps[j])) /
                          std::sqrt(ab);
        x[j] = float(std::sqrt(ab_prev) * std::clamp(x0, -0.2, 1.2) +
                     std::sqrt(1.0 - ab_prev) * double(eps[j]));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      Sample s;
      s.label = labels[i];
      s.image = Tensor({c, h, w});
      std::copy(x.data.begin() + i * per, x.data.begin() + (i + 1) * per,
                s.image.data.begin());
      s.image.clamp_(0.0f, 1.0f);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

/// Dispatch for the pre-processing attacks. `aux` is required when the
/// taxonomy's data column says so.
inline DatasetBundle preprocess_attack(const AttackPlugin& plugin, const DatasetBundle& data,
                                       const DatasetBundle* aux, std::uint64_t seed) {
  if (plugin.phase != AttackPhase::pre_processing)
    throw std::invalid_argument("preprocess_attack: plugin is not pre-processing phase");
  if (plugin.needs_aux_data && plugin.attack_id == AttackId::autoencoder_denoise &&
      (aux == nullptr || aux->empty()))
    throw std::invalid_argument(std::string(to_string(plugin.attack_id)) +
                                ": auxiliary data required");
  const nlohmann::json& p = plugin.params;
  auto per_image = [&](auto&& fn, const char* tag) {
    DatasetBundle out = data;
    out.provenance = data.provenance + "/" + tag;
    for (Sample& s : out.samples) s.image = fn(s.image);
    return out;
  };
  switch (plugin.attack_id) {
    case AttackId::augmentation:
      return augment_dataset(data, seed);
    case AttackId::synthesis: {
      SynthesisParams sp;
      sp.train_epochs = p.value("train_epochs", sp.train_epochs);
      sp.batch_size = p.value("batch_size", sp.batch_size);
      sp.lr = p.value("lr", sp.lr);
      sp.diffusion_steps = p.value("diffusion_steps", sp.diffusion_steps);
      sp.sample_steps = p.value("sample_steps", sp.sample_steps);
      return synthesize_dataset(data, seed, sp);
    }
    case AttackId::gaussian_filter: {
      const float sigma = p.value("sigma", 0.8f);
      return per_image([&](const Tensor& t) { return gaussian_filter_image(t, sigma); },
                       "gaussian_filtered");
    }
    case AttackId::median_filter:
      return per_image([](const Tensor& t) { return median_filter_image(t); },
                       "median_filtered");
    case AttackId::wavelet_filter: {
      const float thr = p.value("threshold", 0.25f);
      return per_image([&](const Tensor& t) { return wavelet_filter_image(t, thr); },
                       "wavelet_filtered");
    }
    case AttackId::autoencoder_denoise:
      return autoencoder_denoise_dataset(data, *aux, seed, p.value("epochs", std::size_t(30)),
                                         p.value("batch_size", std::size_t(32)),
                                         p.value("lr", 0.01), p.value("noise_std", 0.1f));
    default:
      throw std::invalid_argument(std::string("not a pre-processing attack: ") +
                                  to_string(plugin.attack_id));
  }
}

}  // namespace auditbench
