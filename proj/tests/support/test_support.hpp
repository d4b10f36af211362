#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <unistd.h>

#include "wkcl/engine.hpp"
#include "wkcl/rng.hpp"
#include "wkcl/synthetic.hpp"

namespace wkcl::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("wkcl_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Scalar>
Mat<Scalar> random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(scale * rng.normal());
  return m;
}

template <typename Scalar>
Vec<Scalar> random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vec<Scalar> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = Scalar(scale * rng.normal());
  return v;
}

/// Default synthetic data written to `dir` and loaded back.
inline Dataset synthetic_dataset(const std::filesystem::path& dir, const SyntheticConfig& config = {}) {
  write_synthetic(gen_synthetic(config), dir);
  DataPaths paths;
  paths.data_dir = dir;
  return load_dataset(paths);
}

/// Kind of the Error thrown by `fn`, empty when nothing is thrown.
template <typename F>
std::optional<ErrorKind> error_kind(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline RunConfig quiet_config(const std::filesystem::path& data_dir) {
  RunConfig cfg;
  cfg.paths.data_dir = data_dir;
  return cfg;
}

}  // namespace wkcl::testing
