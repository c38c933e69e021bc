#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "motionbev/error.hpp"
#include "motionbev/ingest.hpp"
#include "motionbev/tensor.hpp"

namespace motionbev {

// "MBEV" tensor container.
//
// Each record: 4-byte magic "MBEV", then int32 version, h, w, C, tag
// (frame index for motion features, layer ordinal for parameters), then
// h*w*C float32 values, channel-major. All little-endian. A file holds one
// or more records back to back.

inline constexpr std::int32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[4] = {'M', 'B', 'E', 'V'};

struct ContainerRecord {
  std::int32_t h = 0;
  std::int32_t w = 0;
  std::int32_t channels = 0;
  std::int32_t tag = 0;
  std::vector<float> values;  // channels * h * w

  /// The record as a (C, h, w) double tensor.
  Tensor to_tensor() const {
    Tensor t({static_cast<std::size_t>(channels), static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
    return t;
  }

  /// Any tensor stored as h=1, w=size, C=1 unless it is rank-3 (C, h, w).
  static ContainerRecord from_tensor(const Tensor& t, std::int32_t tag) {
    ContainerRecord r;
    r.tag = tag;
    if (t.rank() == 3) {
      r.channels = static_cast<std::int32_t>(t.dim(0));
      r.h = static_cast<std::int32_t>(t.dim(1));
      r.w = static_cast<std::int32_t>(t.dim(2));
    } else {
      r.channels = 1;
      r.h = 1;
      r.w = static_cast<std::int32_t>(t.size());
    }
    r.values.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) r.values[i] = static_cast<float>(t[i]);
    return r;
  }
};

inline std::vector<char> encode_records(std::span<const ContainerRecord> records) {
  std::vector<char> out;
  for (const auto& r : records) {
    const std::size_t expect = static_cast<std::size_t>(r.h) * r.w * r.channels;
    if (r.values.size() != expect) throw ShapeError("container record value count mismatch");
    const std::int32_t header[5] = {kContainerVersion, r.h, r.w, r.channels, r.tag};
    const std::size_t at = out.size();
    out.resize(at + 4 + sizeof(header) + expect * sizeof(float));
    std::memcpy(out.data() + at, kContainerMagic, 4);
    std::memcpy(out.data() + at + 4, header, sizeof(header));
    if (expect) std::memcpy(out.data() + at + 4 + sizeof(header), r.values.data(), expect * sizeof(float));
  }
  return out;
}

inline std::vector<ContainerRecord> decode_records(std::span<const char> bytes) {
  std::vector<ContainerRecord> out;
  std::size_t at = 0;
  while (at < bytes.size()) {
    if (bytes.size() - at < 24) throw ParseError("truncated MBEV header");
    if (std::memcmp(bytes.data() + at, kContainerMagic, 4) != 0) throw ParseError("bad MBEV magic");
    std::int32_t header[5];
    std::memcpy(header, bytes.data() + at + 4, sizeof(header));
    if (header[0] != kContainerVersion) throw ParseError("unsupported MBEV version " + std::to_string(header[0]));
    ContainerRecord r;
    r.h = header[1];
    r.w = header[2];
    r.channels = header[3];
    r.tag = header[4];
    if (r.h < 0 || r.w < 0 || r.channels < 0) throw ParseError("negative MBEV dimension");
    const std::size_t n = static_cast<std::size_t>(r.h) * r.w * r.channels;
    at += 24;
    if ((bytes.size() - at) / sizeof(float) < n) throw ParseError("truncated MBEV payload");
    r.values.resize(n);
    if (n) std::memcpy(r.values.data(), bytes.data() + at, n * sizeof(float));
    at += n * sizeof(float);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_container(std::span<const ContainerRecord> records, const std::filesystem::path& path) {
  const auto bytes = encode_records(records);
  detail::write_bytes(path, bytes.data(), bytes.size());
}

inline std::vector<ContainerRecord> read_container(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  try {
    return decode_records(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace motionbev
