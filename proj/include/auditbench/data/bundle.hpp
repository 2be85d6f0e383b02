#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "auditbench/core/rng.hpp"
#include "auditbench/core/tensor.hpp"

namespace auditbench {

enum class SplitTag { release, auditor_aux, attacker_aux, test };

inline const char* to_string(SplitTag t) {
  switch (t) {
    case SplitTag::release: return "release";
    case SplitTag::auditor_aux: return "auditor_aux";
    case SplitTag::attacker_aux: return "attacker_aux";
    case SplitTag::test: return "test";
  }
  return "?";
}

inline SplitTag split_tag_from_string(const std::string& s) {
  if (s == "release") return SplitTag::release;
  if (s == "auditor_aux") return SplitTag::auditor_aux;
  if (s == "attacker_aux") return SplitTag::attacker_aux;
  if (s == "test") return SplitTag::test;
  throw std::invalid_argument("unknown split tag: " + s);
}

struct Sample {
  Tensor image;  // C x H x W, values in [0,1]
  int label = 0;
};

/// Labeled image set with a split tag. Immutable by convention after
/// construction; mutate only while building.
struct DatasetBundle {
  std::vector<Sample> samples;
  SplitTag split_tag = SplitTag::release;
  int class_count = 0;
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<std::size_t> image_shape() const {
    if (samples.empty()) return {};
    return samples.front().image.shape;
  }

  void validate() const {
    if (class_count <= 0) throw std::invalid_argument("class_count must be positive");
    for (const Sample& s : samples) {
      if (s.label < 0 || s.label >= class_count)
        throw std::invalid_argument("label out of range");
      for (float v : s.image.data)
        if (v < 0.0f || v > 1.0f || !std::isfinite(v))
          throw std::invalid_argument("pixel outside [0,1]");
    }
  }
};

/// Fixed image blended into samples to embed an external feature.
struct TriggerPattern {
  Tensor image;
  float blend_weight = 0.2f;
  int target_label = 1;
};

/// out = (1-w) * image + w * trigger, clipped to [0,1]. w = 0 is the identity.
inline Tensor blend_trigger(const Tensor& image, const TriggerPattern& trigger) {
  if (image.shape != trigger.image.shape)
    throw std::invalid_argument("blend_trigger: shape mismatch");
  const float w = trigger.blend_weight;
  if (w == 0.0f) return image;
  Tensor out(image.shape);
  for (std::size_t i = 0; i < image.numel(); ++i)
    out[i] = (1.0f - w) * image[i] + w * trigger.image[i];
  out.clamp_(0.0f, 1.0f);
  return out;
}

/// Seeded trigger asset: a pixel-level checkerboard carrier whose phase is
/// modulated by random binary values drawn per `block`-sized square. The
/// block-scale coherence makes the pattern learnable by a small CNN as a
/// transferable feature (per-pixel noise gets memorized per sample instead),
/// while the checkerboard carrier keeps the pattern zero-mean within every
/// 2x2 window. The fixed default seed makes the pattern a stable artifact of
/// the repo.
inline TriggerPattern make_noise_trigger(const std::vector<std::size_t>& shape,
                                         int target_label = 1,
                                         float blend_weight = 0.2f,
                                         std::uint64_t seed = 0x7216c5ULL,
                                         std::size_t block = 4) {
  TriggerPattern t;
  t.image = Tensor(shape);
  t.blend_weight = blend_weight;
  t.target_label = target_label;
  Rng rng = make_rng(seed);
  const std::size_t c = shape.at(0), h = shape.at(1), w = shape.at(2);
  const std::size_t bh = (h + block - 1) / block, bw = (w + block - 1) / block;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<float> blocks(bh * bw);
    for (float& v : blocks) v = uniform(rng, 0.0f, 1.0f) > 0.5f ? 1.0f : 0.0f;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const bool phase = blocks[(y / block) * bw + x / block] > 0.5f;
        const bool carrier = ((y + x) & 1) != 0;
        t.image[(ch * h + y) * w + x] = (phase != carrier) ? 1.0f : 0.0f;
      }
  }
  return t;
}

struct SplitRatios {
  double release = 0.70;
  double auditor = 0.15;
  double attacker = 0.15;
};

/// Class-stratified deterministic split of a corpus into
/// (release, auditor_aux, attacker_aux). Remainders go to release.
inline std::array<DatasetBundle, 3> split_dataset(const DatasetBundle& corpus,
                                                  SplitRatios ratios,
                                                  std::uint64_t seed) {
  const double sum = ratios.release + ratios.auditor + ratios.attacker;
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  if (corpus.size() < 3) throw std::invalid_argument("corpus smaller than 3 samples");

  std::map<int, std::vector<std::size_t>> per_class;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    per_class[corpus.samples[i].label].push_back(i);

  std::vector<std::size_t> rel_idx, aud_idx, att_idx;
  for (auto& [label, idx] : per_class) {
    Rng rng = make_rng(derive_seed(seed, std::uint64_t(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    const std::size_t n_aud = std::size_t(std::floor(ratios.auditor * double(n) + 0.5));
    const std::size_t n_att = std::size_t(std::floor(ratios.attacker * double(n) + 0.5));
    std::size_t k = 0;
    for (; k < n - n_aud - n_att; ++k) rel_idx.push_back(idx[k]);
    for (std::size_t j = 0; j < n_aud; ++j) aud_idx.push_back(idx[k++]);
    for (std::size_t j = 0; j < n_att; ++j) att_idx.push_back(idx[k++]);
  }
  std::sort(rel_idx.begin(), rel_idx.end());
  std::sort(aud_idx.begin(), aud_idx.end());
  std::sort(att_idx.begin(), att_idx.end());

  auto take = [&](const std::vector<std::size_t>& idx, SplitTag tag,
                  const char* name) {
    DatasetBundle b;
    b.split_tag = tag;
    b.class_count = corpus.class_count;
    b.provenance = corpus.provenance + "/" + name;
    b.samples.reserve(idx.size());
    for (std::size_t i : idx) b.samples.push_back(corpus.samples[i]);
    return b;
  };
  return {take(rel_idx, SplitTag::release, "release"),
          take(aud_idx, SplitTag::auditor_aux, "auditor_aux"),
          take(att_idx, SplitTag::attacker_aux, "attacker_aux")};
}

/// Procedurally generated image-classification corpus: each class is a
/// mixture of low-frequency waves, rendered per sample with phase jitter
/// (`distortion`, radians) plus pixel noise. The wave parameters depend only
/// on the class index, so bundles drawn with different seeds share class
/// semantics; the seed controls jitter, noise, and sample order. distortion
/// tunes the intrinsic difficulty and hence the member/non-member
/// generalization gap of models trained on the corpus.
inline DatasetBundle make_synthetic_bundle(int class_count, std::size_t n,
                                           std::size_t channels, std::size_t height,
                                           std::size_t width, std::uint64_t seed,
                                           float noise_std = 0.22f,
                                           float distortion = 0.0f) {
  if (class_count <= 0 || n == 0) throw std::invalid_argument("bad synthetic spec");
  struct Wave { float fx, fy, ph, amp; };
  std::vector<std::vector<std::vector<Wave>>> class_waves{std::size_t(class_count)};
  for (int c = 0; c < class_count; ++c) {
    Rng trng = make_rng(derive_seed(0xc1a55, std::uint64_t(c)));
    class_waves[std::size_t(c)].resize(channels);
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (int k = 0; k < 3; ++k)
        class_waves[std::size_t(c)][ch].push_back(
            {uniform(trng, 0.5f, 2.5f), uniform(trng, 0.5f, 2.5f),
             uniform(trng, 0.0f, 6.28f), uniform(trng, 0.2f, 0.45f)});
  }

  DatasetBundle b;
  b.class_count = class_count;
  b.provenance = "synthetic(seed=" + std::to_string(seed) + ")";
  Rng rng = make_rng(derive_seed(seed, 0xda7a));
  b.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.label = int(i % std::size_t(class_count));
    std::vector<std::vector<Wave>> waves = class_waves[std::size_t(s.label)];
    if (distortion > 0.0f)
      for (auto& ch_waves : waves)
        for (Wave& w : ch_waves) {
          w.ph += gaussian(rng, 0.0f, distortion);
          w.fx += gaussian(rng, 0.0f, 0.4f * distortion);
          w.fy += gaussian(rng, 0.0f, 0.4f * distortion);
        }
    s.image = Tensor({channels, height, width});
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          float v = 0.5f;
          for (const Wave& w : waves[ch])
            v += w.amp * std::sin(w.fx * 6.2832f * float(x) / float(width) +
                                  w.fy * 6.2832f * float(y) / float(height) + w.ph);
          s.image[(ch * height + y) * width + x] =
              std::clamp(v + gaussian(rng, 0.0f, noise_std), 0.0f, 1.0f);
        }
    b.samples.push_back(std::move(s));
  }
  return b;
}

}  // namespace auditbench
