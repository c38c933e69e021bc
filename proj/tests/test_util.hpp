#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "motionbev/point_cloud.hpp"
#include "motionbev/pose.hpp"

namespace motionbev::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("motionbev_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent = 60.0) {
  std::uniform_real_distribution<double> xy(-extent, extent), z(-5.0, 3.0), in(0.0, 1.0);
  PointCloud c;
  c.has_intensity = true;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({xy(rng), xy(rng), z(rng), in(rng)});
  return c;
}

inline PoseSE3 random_pose(std::mt19937_64& rng, double trans = 10.0) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
  q.normalize();
  PoseSE3::Matrix m = PoseSE3::Matrix::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  std::uniform_real_distribution<double> t(-trans, trans);
  m(0, 3) = t(rng);
  m(1, 3) = t(rng);
  m(2, 3) = t(rng);
  return PoseSE3::from_matrix(m);
}

}  // namespace motionbev::test
