#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "auditbench/data/bundle.hpp"

namespace auditbench {

namespace fs = std::filesystem;
inline constexpr int kBundleSchemaVersion = 1;

/// Bundle directory layout: manifest.json + images.bin (little-endian float32,
/// C*H*W per record) + labels.bin (int64).
inline void serialize_bundle(const DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = kBundleSchemaVersion;
  manifest["class_count"] = bundle.class_count;
  manifest["split_tag"] = to_string(bundle.split_tag);
  manifest["sample_count"] = bundle.size();
  manifest["provenance"] = bundle.provenance;
  auto shape = bundle.image_shape();
  manifest["channels"] = shape.size() == 3 ? shape[0] : 0;
  manifest["height"] = shape.size() == 3 ? shape[1] : 0;
  manifest["width"] = shape.size() == 3 ? shape[2] : 0;

  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";

  std::ofstream imf(dir / "images.bin", std::ios::binary);
  std::ofstream lbf(dir / "labels.bin", std::ios::binary);
  if (!imf || !lbf) throw std::runtime_error("cannot write bundle blobs in " + dir.string());
  for (const Sample& s : bundle.samples) {
    imf.write(reinterpret_cast<const char*>(s.image.ptr()),
              std::streamsize(s.image.numel() * sizeof(float)));
    std::int64_t label = s.label;
    lbf.write(reinterpret_cast<const char*>(&label), sizeof(label));
  }
  if (!imf || !lbf) throw std::runtime_error("I/O failure writing bundle");
}

inline DatasetBundle load_bundle(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("schema_version").get<int>() != kBundleSchemaVersion)
    throw std::runtime_error("bundle schema-version mismatch");

  DatasetBundle b;
  b.class_count = manifest.at("class_count").get<int>();
  b.split_tag = split_tag_from_string(manifest.at("split_tag").get<std::string>());
  b.provenance = manifest.value("provenance", "");
  const std::size_t n = manifest.at("sample_count").get<std::size_t>();
  const std::size_t c = manifest.at("channels").get<std::size_t>();
  const std::size_t h = manifest.at("height").get<std::size_t>();
  const std::size_t w = manifest.at("width").get<std::size_t>();

  std::ifstream imf(dir / "images.bin", std::ios::binary);
  std::ifstream lbf(dir / "labels.bin", std::ios::binary);
  if (!imf || !lbf) throw std::runtime_error("cannot read bundle blobs in " + dir.string());
  b.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.image = Tensor({c, h, w});
    imf.read(reinterpret_cast<char*>(s.image.ptr()),
             std::streamsize(s.image.numel() * sizeof(float)));
    std::int64_t label = 0;
    lbf.read(reinterpret_cast<char*>(&label), sizeof(label));
    if (!imf || !lbf) throw std::runtime_error("truncated bundle blob");
    s.label = int(label);
    b.samples.push_back(std::move(s));
  }
  return b;
}

/// Reads standard CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per
/// record). Pass one or more data_batch_*.bin / test_batch.bin paths.
inline DatasetBundle load_cifar10_batches(const std::vector<fs::path>& batches,
                                          SplitTag tag = SplitTag::release) {
  DatasetBundle b;
  b.class_count = 10;
  b.split_tag = tag;
  b.provenance = "cifar10-binary";
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::vector<unsigned char> rec(kRecord);
  for (const fs::path& p : batches) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    while (f.read(reinterpret_cast<char*>(rec.data()), std::streamsize(kRecord))) {
      Sample s;
      s.label = int(rec[0]);
      s.image = Tensor({3, 32, 32});
      for (std::size_t i = 0; i < 3072; ++i) s.image[i] = float(rec[1 + i]) / 255.0f;
      b.samples.push_back(std::move(s));
    }
  }
  if (b.empty()) throw std::runtime_error("no CIFAR-10 records found");
  return b;
}

namespace detail {
inline Tensor read_ppm(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("unsupported image format (want binary PPM): " + p.string());
  auto next_int = [&]() {
    int v;
    while (f >> std::ws && f.peek() == '#') f.ignore(1 << 16, '\n');
    f >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxv = next_int();
  f.ignore(1);
  std::vector<unsigned char> raw(std::size_t(w) * std::size_t(h) * 3);
  f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (!f) throw std::runtime_error("truncated PPM: " + p.string());
  Tensor img({3, std::size_t(h), std::size_t(w)});
  for (std::size_t y = 0; y < std::size_t(h); ++y)
    for (std::size_t x = 0; x < std::size_t(w); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img[(c * std::size_t(h) + y) * std::size_t(w) + x] =
            float(raw[(y * std::size_t(w) + x) * 3 + c]) / float(maxv);
  return img;
}
}  // namespace detail

/// Image-folder layout: one subdirectory per class holding binary PPM files;
/// class indices follow the sorted directory names.
inline DatasetBundle load_image_folder(const fs::path& root,
                                       SplitTag tag = SplitTag::release) {
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("no class directories in " + root.string());

  DatasetBundle b;
  b.class_count = int(class_dirs.size());
  b.split_tag = tag;
  b.provenance = "image-folder:" + root.string();
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
      Sample s;
      s.image = detail::read_ppm(p);
      s.label = int(c);
      b.samples.push_back(std::move(s));
    }
  }
  if (b.empty()) throw std::runtime_error("no images found in " + root.string());
  return b;
}

}  // namespace auditbench
