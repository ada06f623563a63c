#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "uavids/dataset.hpp"
#include "uavids/random.hpp"

namespace uavids::test {

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline Eigen::VectorXd normal_vector(Rng& rng, std::size_t n, double mean = 0.0, double sd = 1.0) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.normal(mean, sd);
  return v;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() / ("uavids-" + tag + "-" + std::to_string(rng.next() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Two-class table with the given numeric columns and labels "A"/"B".
inline ColumnTable two_class_table(const std::vector<std::pair<std::string, Eigen::VectorXd>>& columns,
                                   const std::vector<int>& labels) {
  ColumnTable t(LabelVocabulary::from_names({"A", "B"}), labels);
  for (const auto& [name, values] : columns) t.add_numeric(name, values);
  return t;
}

}  // namespace uavids::test
