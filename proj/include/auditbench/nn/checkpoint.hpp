#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auditbench/nn/architectures.hpp"
#include "auditbench/nn/network.hpp"

namespace auditbench {

inline constexpr char kCheckpointMagic[8] = {'A', 'B', 'C', 'K', 'P', 'T', '0', '1'};

/// Single-file checkpoint: 8-byte magic, little-endian uint32 JSON header
/// length, JSON header (arch, width_mult, class_count, input_shape, per-param
/// and per-buffer sizes), then parameter values followed by normalization
/// buffers, all float32 in layer order.
inline void save_checkpoint(Network& net, float width_mult, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  nlohmann::json header;
  header["arch"] = net.arch();
  header["width_mult"] = width_mult;
  header["class_count"] = net.class_count();
  header["input_shape"] = net.input_shape();
  nlohmann::json sizes = nlohmann::json::array();
  for (Param* p : net.params())
    sizes.push_back({{"name", p->name}, {"size", p->value.numel()}});
  header["params"] = sizes;
  nlohmann::json buf_sizes = nlohmann::json::array();
  for (Tensor* b : net.buffers()) buf_sizes.push_back(b->numel());
  header["buffers"] = buf_sizes;
  const std::string hs = header.dump();
  const std::uint32_t hlen = std::uint32_t(hs.size());
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), std::streamsize(hs.size()));
  for (Param* p : net.params())
    out.write(reinterpret_cast<const char*>(p->value.ptr()),
              std::streamsize(p->value.numel() * sizeof(float)));
  for (Tensor* b : net.buffers())
    out.write(reinterpret_cast<const char*>(b->ptr()),
              std::streamsize(b->numel() * sizeof(float)));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

struct LoadedCheckpoint {
  std::shared_ptr<Network> network;
  float width_mult = 1.0f;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);

  LoadedCheckpoint result;
  result.width_mult = header.at("width_mult").get<float>();
  const std::vector<std::size_t> shape =
      header.at("input_shape").get<std::vector<std::size_t>>();
  result.network = std::shared_ptr<Network>(
      make_network(header.at("arch").get<std::string>(),
                   header.at("class_count").get<int>(), shape, result.width_mult));

  std::vector<Param*> params = result.network->params();
  const nlohmann::json& sizes = header.at("params");
  if (sizes.size() != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (sizes[i].at("size").get<std::size_t>() != params[i]->value.numel())
      throw std::runtime_error("checkpoint: size mismatch for parameter " +
                               params[i]->name + " in " + path);
    in.read(reinterpret_cast<char*>(params[i]->value.ptr()),
            std::streamsize(params[i]->value.numel() * sizeof(float)));
  }
  std::vector<Tensor*> buffers = result.network->buffers();
  const nlohmann::json& buf_sizes = header.at("buffers");
  if (buf_sizes.size() != buffers.size())
    throw std::runtime_error("checkpoint: buffer count mismatch in " + path);
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (buf_sizes[i].get<std::size_t>() != buffers[i]->numel())
      throw std::runtime_error("checkpoint: buffer size mismatch in " + path);
    in.read(reinterpret_cast<char*>(buffers[i]->ptr()),
            std::streamsize(buffers[i]->numel() * sizeof(float)));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated parameter data in " + path);
  return result;
}

}  // namespace auditbench
