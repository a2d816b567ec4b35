#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "graph_adapter/embedstore.hpp"

namespace test_util {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("graph_adapter_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Eigen::MatrixXd random_unit_rows(Eigen::Index rows, Eigen::Index cols,
                                        std::mt19937_64& rng) {
  Eigen::MatrixXd m = random_matrix(rows, cols, rng);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i).normalize();
  return m;
}

// The synthetic task used throughout the acceptance criteria.
inline graph_adapter::SyntheticSpec acceptance_spec() {
  graph_adapter::SyntheticSpec s;
  s.num_classes = 20;
  s.dim = 64;
  s.per_class_train = 32;
  s.per_class_test = 50;
  s.anchor_noise = 0.6;
  s.cluster_noise = 0.3;
  s.seed = 7;
  return s;
}

}  // namespace test_util
