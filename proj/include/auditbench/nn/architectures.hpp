#pragma once

#include <memory>
#include <string>

#include "auditbench/nn/network.hpp"

namespace auditbench {

enum class NormKind { batch, group };

namespace detail {

inline std::size_t scaled(std::size_t c, float mult) {
  return std::max<std::size_t>(4, std::size_t(std::lround(float(c) * mult)));
}

inline std::unique_ptr<Layer> make_norm(NormKind kind, std::size_t c) {
  if (kind == NormKind::group) return std::make_unique<GroupNorm>(c, 8);
  return std::make_unique<BatchNorm2d>(c);
}

inline std::unique_ptr<Sequential> basic_block_main(std::size_t in_c, std::size_t out_c,
                                                    std::size_t stride, NormKind norm) {
  auto s = std::make_unique<Sequential>();
  s->add(std::make_unique<Conv2d>(in_c, out_c, 3, stride, 1, 1, false));
  s->add(make_norm(norm, out_c));
  s->add(std::make_unique<ReLU>());
  s->add(std::make_unique<Conv2d>(out_c, out_c, 3, 1, 1, 1, false));
  s->add(make_norm(norm, out_c));
  return s;
}

inline std::unique_ptr<ResidualBlock> basic_block(std::size_t in_c, std::size_t out_c,
                                                  std::size_t stride, NormKind norm) {
  std::unique_ptr<Sequential> shortcut;
  if (stride != 1 || in_c != out_c) {
    shortcut = std::make_unique<Sequential>();
    shortcut->add(std::make_unique<Conv2d>(in_c, out_c, 1, stride, 0, 1, false));
    shortcut->add(make_norm(norm, out_c));
  }
  return std::make_unique<ResidualBlock>(basic_block_main(in_c, out_c, stride, norm),
                                         std::move(shortcut));
}

inline std::unique_ptr<ResidualBlock> inverted_residual(std::size_t in_c, std::size_t out_c,
                                                        std::size_t stride,
                                                        std::size_t expand) {
  const std::size_t hidden = in_c * expand;
  auto main = std::make_unique<Sequential>();
  if (expand != 1) {
    main->add(std::make_unique<Conv2d>(in_c, hidden, 1, 1, 0, 1, false));
    main->add(std::make_unique<BatchNorm2d>(hidden));
    main->add(std::make_unique<ReLU>(6.0f));
  }
  main->add(std::make_unique<Conv2d>(hidden, hidden, 3, stride, 1, hidden, false));
  main->add(std::make_unique<BatchNorm2d>(hidden));
  main->add(std::make_unique<ReLU>(6.0f));
  main->add(std::make_unique<Conv2d>(hidden, out_c, 1, 1, 0, 1, false));
  main->add(std::make_unique<BatchNorm2d>(out_c));
  const bool residual = stride == 1 && in_c == out_c;
  if (residual)
    return std::make_unique<ResidualBlock>(std::move(main), nullptr, false);
  // No skip path: wrap as a residual block with a zeroing shortcut is wrong;
  // instead callers add the Sequential directly. Return nullptr to signal.
  return nullptr;
}

}  // namespace detail

inline std::unique_ptr<Network> make_small_cnn(int class_count,
                                               std::vector<std::size_t> input_shape,
                                               float width_mult = 1.0f) {
  using detail::scaled;
  const std::size_t in_c = input_shape.at(0);
  const std::size_t c1 = scaled(16, width_mult), c2 = scaled(32, width_mult),
                    c3 = scaled(64, width_mult);
  auto net = std::make_unique<Network>("small_cnn", class_count, input_shape);
  net->add(std::make_unique<Conv2d>(in_c, c1, 3));
  net->add(std::make_unique<ReLU>());
  net->add(std::make_unique<Conv2d>(c1, c2, 3));
  net->add(std::make_unique<ReLU>());
  net->add(std::make_unique<MaxPool2d>(2));
  net->add(std::make_unique<Conv2d>(c2, c2, 3));
  net->add(std::make_unique<ReLU>());
  net->add(std::make_unique<Conv2d>(c2, c3, 3));
  net->add(std::make_unique<ReLU>());
  net->add(std::make_unique<MaxPool2d>(2));
  net->add(std::make_unique<Conv2d>(c3, c3, 3));
  net->add(std::make_unique<ReLU>());
  net->add(std::make_unique<GlobalAvgPool>());
  net->add(std::make_unique<Linear>(c3, std::size_t(class_count)));
  return net;
}

inline std::unique_ptr<Network> make_resnet18(int class_count,
                                              std::vector<std::size_t> input_shape,
                                              NormKind norm, float width_mult = 1.0f) {
  using detail::scaled;
  const std::size_t in_c = input_shape.at(0);
  const std::size_t widths[4] = {scaled(64, width_mult), scaled(128, width_mult),
                                 scaled(256, width_mult), scaled(512, width_mult)};
  auto net = std::make_unique<Network>(
      norm == NormKind::group ? "resnet18_groupnorm" : "resnet18", class_count,
      input_shape);
  net->add(std::make_unique<Conv2d>(in_c, widths[0], 3, 1, 1, 1, false));
  net->add(detail::make_norm(norm, widths[0]));
  net->add(std::make_unique<ReLU>());
  std::size_t prev = widths[0];
  for (int stage = 0; stage < 4; ++stage) {
    const std::size_t stride = stage == 0 ? 1 : 2;
    net->add(detail::basic_block(prev, widths[stage], stride, norm));
    net->add(detail::basic_block(widths[stage], widths[stage], 1, norm));
    prev = widths[stage];
  }
  net->add(std::make_unique<GlobalAvgPool>());
  net->add(std::make_unique<Linear>(prev, std::size_t(class_count)));
  return net;
}

inline std::unique_ptr<Network> make_mobilenet_v2(int class_count,
                                                  std::vector<std::size_t> input_shape,
                                                  float width_mult = 1.0f) {
  using detail::scaled;
  const std::size_t in_c = input_shape.at(0);
  auto net = std::make_unique<Network>("mobilenet_v2", class_count, input_shape);
  std::size_t prev = scaled(32, width_mult);
  net->add(std::make_unique<Conv2d>(in_c, prev, 3, 1, 1, 1, false));
  net->add(std::make_unique<BatchNorm2d>(prev));
  net->add(std::make_unique<ReLU>(6.0f));
  // (expand, channels, repeats, stride); small-image variant with reduced
  // early strides.
  struct Cfg { std::size_t t, c, n, s; };
  const Cfg cfg[] = {{1, 16, 1, 1}, {6, 24, 2, 1}, {6, 32, 3, 2},
                     {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2},
                     {6, 320, 1, 1}};
  for (const Cfg& c : cfg) {
    const std::size_t out = scaled(c.c, width_mult);
    for (std::size_t i = 0; i < c.n; ++i) {
      const std::size_t stride = i == 0 ? c.s : 1;
      auto block = detail::inverted_residual(prev, out, stride, c.t);
      if (block) {
        net->add(std::move(block));
      } else {
        // non-residual bottleneck; add the plain stack
        const std::size_t hidden = prev * c.t;
        if (c.t != 1) {
          net->add(std::make_unique<Conv2d>(prev, hidden, 1, 1, 0, 1, false));
          net->add(std::make_unique<BatchNorm2d>(hidden));
          net->add(std::make_unique<ReLU>(6.0f));
        }
        net->add(std::make_unique<Conv2d>(hidden, hidden, 3, stride, 1, hidden, false));
        net->add(std::make_unique<BatchNorm2d>(hidden));
        net->add(std::make_unique<ReLU>(6.0f));
        net->add(std::make_unique<Conv2d>(hidden, out, 1, 1, 0, 1, false));
        net->add(std::make_unique<BatchNorm2d>(out));
      }
      prev = out;
    }
  }
  const std::size_t head = scaled(1280, width_mult);
  net->add(std::make_unique<Conv2d>(prev, head, 1, 1, 0, 1, false));
  net->add(std::make_unique<BatchNorm2d>(head));
  net->add(std::make_unique<ReLU>(6.0f));
  net->add(std::make_unique<GlobalAvgPool>());
  net->add(std::make_unique<Linear>(head, std::size_t(class_count)));
  return net;
}

/// Architecture registry used by configs and checkpoints.
inline std::unique_ptr<Network> make_network(const std::string& arch, int class_count,
                                             std::vector<std::size_t> input_shape,
                                             float width_mult = 1.0f) {
  if (arch == "small_cnn") return make_small_cnn(class_count, input_shape, width_mult);
  if (arch == "resnet18")
    return make_resnet18(class_count, input_shape, NormKind::batch, width_mult);
  if (arch == "resnet18_groupnorm")
    return make_resnet18(class_count, input_shape, NormKind::group, width_mult);
  if (arch == "mobilenet_v2")
    return make_mobilenet_v2(class_count, input_shape, width_mult);
  throw std::invalid_argument("unknown architecture: " + arch);
}

}  // namespace auditbench
