#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/point_cloud.hpp"
#include "motionbev/pose.hpp"

namespace motionbev {

static_assert(std::endian::native == std::endian::little,
              "binary readers assume a little-endian host");

namespace detail {

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<double> parse_reals(const std::string& line) {
  std::vector<double> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    double v = 0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw ParseError("not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

inline PoseSE3::Matrix matrix_from_row_major(const std::vector<double>& v) {
  PoseSE3::Matrix m = PoseSE3::Matrix::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scans: N x 4 little-endian float32 (x, y, z, intensity).

inline std::int64_t frame_index_from_stem(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); }))
    return 0;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), v);
  return ec == std::errc() ? v : 0;
}

inline PointCloud decode_scan(std::span<const char> bytes, std::int64_t frame_index = 0) {
  if (bytes.size() % 16 != 0)
    throw MalformedScanError("scan byte length " + std::to_string(bytes.size()) +
                             " is not a multiple of 16");
  PointCloud cloud;
  cloud.frame_index = frame_index;
  cloud.has_intensity = true;
  const std::size_t n = bytes.size() / 16;
  cloud.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    float rec[4];
    std::memcpy(rec, bytes.data() + i * 16, 16);
    cloud.points[i] = Point{rec[0], rec[1], rec[2], rec[3]};
    if (!cloud.points[i].finite())
      throw MalformedScanError("non-finite coordinate at point " + std::to_string(i));
  }
  return cloud;
}

inline PointCloud read_scan(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  try {
    return decode_scan(bytes, frame_index_from_stem(path));
  } catch (const MalformedScanError& e) {
    throw MalformedScanError(path.string() + ": " + e.what());
  }
}

inline void write_scan(const PointCloud& cloud, const std::filesystem::path& path) {
  std::vector<float> buf;
  buf.reserve(cloud.size() * 4);
  for (const auto& p : cloud.points) {
    buf.push_back(static_cast<float>(p.x));
    buf.push_back(static_cast<float>(p.y));
    buf.push_back(static_cast<float>(p.z));
    buf.push_back(static_cast<float>(p.intensity));
  }
  detail::write_bytes(path, buf.data(), buf.size() * sizeof(float));
}

// ---------------------------------------------------------------------------
// Poses and calibration (KITTI odometry text layout).

/// Reads the "Tr:" entry of a calibration file.
inline PoseSE3 read_calib_tr(const std::filesystem::path& path) {
  std::istringstream in(detail::read_text(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
    if (key != "Tr") continue;
    const auto vals = detail::parse_reals(line.substr(colon + 1));
    if (vals.size() != 12)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": Tr has " +
                       std::to_string(vals.size()) + " values, expected 12");
    return PoseSE3::orthonormalized(detail::matrix_from_row_major(vals));
  }
  throw ParseError(path.string() + ": no 'Tr:' line");
}

/// Parses pose text. Rotations more than `tol` from orthonormal are
/// rejected; accepted ones are projected onto SO(3).
inline std::vector<PoseSE3> parse_poses(const std::string& text, const std::optional<PoseSE3>& tr,
                                        const std::string& source = "poses", double tol = 1e-6) {
  std::vector<PoseSE3> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> vals;
    try {
      vals = detail::parse_reals(line);
    } catch (const ParseError& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (vals.size() != 12)
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 12 numbers, got " +
                       std::to_string(vals.size()));
    const auto m = detail::matrix_from_row_major(vals);
    try {
      (void)PoseSE3::from_matrix(m, tol);
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    PoseSE3 p = PoseSE3::orthonormalized(m);
    if (tr) p = tr->inverse() * p * *tr;
    out.push_back(p);
  }
  return out;
}

inline std::vector<PoseSE3> read_poses(const std::filesystem::path& poses_path,
                                       const std::optional<std::filesystem::path>& calib_path = std::nullopt) {
  std::optional<PoseSE3> tr;
  if (calib_path) tr = read_calib_tr(*calib_path);
  return parse_poses(detail::read_text(poses_path), tr, poses_path.string());
}

inline void write_poses(std::span<const PoseSE3> poses, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.precision(17);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) out << p(r, c) << ((r == 2 && c == 3) ? '\n' : ' ');
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Labels: one little-endian uint32 per point, lower 16 bits semantic.

/// Raw-code to moving/static/unlabeled mapping. Only the lower 16 bits of
/// a code are looked up.
struct LabelMap {
  std::set<std::uint32_t> moving{251, 252, 253, 254, 255, 256, 257, 258, 259};
  std::set<std::uint32_t> static_codes{9,  10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 40, 44,
                                       48, 49, 50, 51, 52, 60, 70, 71, 72, 80, 81, 99};
  std::uint32_t moving_code = 251;
  std::uint32_t static_code = 9;

  MosClass classify(std::uint32_t raw) const {
    const std::uint32_t sem = raw & 0xFFFFu;
    if (moving.count(sem)) return MosClass::Moving;
    if (static_codes.count(sem)) return MosClass::Static;
    return MosClass::Unlabeled;
  }

  std::uint32_t encode(MosClass c) const {
    switch (c) {
      case MosClass::Moving: return moving_code;
      case MosClass::Static: return static_code;
      default: return 0;
    }
  }
};

struct LabelCode {
  std::uint32_t raw = 0;
  MosClass cls = MosClass::Unlabeled;
};

inline std::vector<std::uint32_t> read_label_codes(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() % 4 != 0)
    throw MalformedLabelError(path.string() + ": label byte length " + std::to_string(bytes.size()) +
                              " is not a multiple of 4");
  std::vector<std::uint32_t> codes(bytes.size() / 4);
  if (!codes.empty()) std::memcpy(codes.data(), bytes.data(), bytes.size());
  return codes;
}

inline std::vector<LabelCode> read_labels(const std::filesystem::path& path, const LabelMap& map = {}) {
  const auto codes = read_label_codes(path);
  std::vector<LabelCode> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = {codes[i], map.classify(codes[i])};
  return out;
}

inline void write_label_codes(std::span<const std::uint32_t> codes, const std::filesystem::path& path) {
  detail::write_bytes(path, codes.data(), codes.size_bytes());
}

inline void write_labels(std::span<const LabelCode> labels, const std::filesystem::path& path) {
  std::vector<std::uint32_t> codes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) codes[i] = labels[i].raw;
  write_label_codes(codes, path);
}

/// Loads a scan together with its label file; the two must have equal length.
inline std::pair<PointCloud, std::vector<LabelCode>> read_labeled_scan(const std::filesystem::path& scan,
                                                                      const std::filesystem::path& labels,
                                                                      const LabelMap& map = {}) {
  auto cloud = read_scan(scan);
  auto lab = read_labels(labels, map);
  if (lab.size() != cloud.size())
    throw ValidationError("label/scan mismatch: " + labels.string() + " has " + std::to_string(lab.size()) +
                          " labels, " + scan.string() + " has " + std::to_string(cloud.size()) + " points");
  return {std::move(cloud), std::move(lab)};
}

// ---------------------------------------------------------------------------
// Pipeline configuration (JSON document).

struct PipelineConfig {
  GridConfig grid;
  LabelMap labels;
  std::vector<std::string> warnings;
};

inline PipelineConfig parse_config(const nlohmann::json& doc) {
  PipelineConfig cfg;
  if (doc.is_null()) return cfg;
  if (!doc.is_object()) throw ConfigError("<root>", "expected a JSON object");
  auto& g = cfg.grid;
  auto number = [&](const std::string& key, auto& field) {
    const auto& v = doc.at(key);
    using F = std::decay_t<decltype(field)>;
    if constexpr (std::is_integral_v<F>) {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
      field = v.get<F>();
    } else {
      if (!v.is_number()) throw ConfigError(key, "expected a number");
      field = v.get<F>();
    }
  };
  auto codes = [&](const std::string& key, std::set<std::uint32_t>& out) {
    const auto& v = doc.at(key);
    if (!v.is_array()) throw ConfigError(key, "expected an array of label codes");
    out.clear();
    for (const auto& c : v) {
      if (!c.is_number_unsigned()) throw ConfigError(key, "label codes must be non-negative integers");
      out.insert(c.get<std::uint32_t>());
    }
  };
  for (const auto& [key, _] : doc.items()) {
    if (key == "h") number(key, g.h);
    else if (key == "w") number(key, g.w);
    else if (key == "rho_min") number(key, g.rho_min);
    else if (key == "rho_max") number(key, g.rho_max);
    else if (key == "theta_min") number(key, g.theta_min);
    else if (key == "theta_max") number(key, g.theta_max);
    else if (key == "z_min") number(key, g.z_min);
    else if (key == "z_max") number(key, g.z_max);
    else if (key == "d_min") number(key, g.d_min);
    else if (key == "d_max") number(key, g.d_max);
    else if (key == "min_points") number(key, g.min_points);
    else if (key == "N") number(key, g.window);
    else if (key == "moving_codes") codes(key, cfg.labels.moving);
    else if (key == "static_codes") codes(key, cfg.labels.static_codes);
    else if (key == "moving_code") number(key, cfg.labels.moving_code);
    else if (key == "static_code") number(key, cfg.labels.static_code);
    else cfg.warnings.push_back("unknown config key '" + key + "' ignored");
  }
  g.validate();
  return cfg;
}

inline PipelineConfig parse_config_text(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return parse_config(nlohmann::json());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<document>", e.what());
  }
  return parse_config(doc);
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config_text(detail::read_text(path));
}

inline nlohmann::json config_to_json(const GridConfig& g) {
  return {{"h", g.h},           {"w", g.w},          {"rho_min", g.rho_min}, {"rho_max", g.rho_max},
          {"theta_min", g.theta_min}, {"theta_max", g.theta_max}, {"z_min", g.z_min},
          {"z_max", g.z_max},   {"d_min", g.d_min},  {"d_max", g.d_max},
          {"min_points", g.min_points}, {"N", g.window}};
}

}  // namespace motionbev
