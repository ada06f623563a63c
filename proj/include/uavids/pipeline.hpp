#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uavids/config.hpp"
#include "uavids/dataset.hpp"
#include "uavids/report.hpp"

namespace uavids {

/// Exclusive claim on an output directory for the lifetime of the object.
/// Throws std::runtime_error when another process holds the lock.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Output layout under RunConfig::output_dir.
struct OutputPaths {
  std::filesystem::path root;
  std::filesystem::path fragment(std::string_view stage) const { return root / "fragments" / (std::string(stage) + ".json"); }
  std::filesystem::path table(std::string_view name) const { return root / "tables" / name; }
  std::filesystem::path plotdata(std::string_view name) const { return root / "plotdata" / name; }
  std::filesystem::path artifact(std::string_view name) const { return root / "artifacts" / name; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path metadata() const { return root / "metadata.json"; }
};

/// Processed train/test tables written by the preprocess stage.
struct PreprocessArtifacts {
  ColumnTable train;
  ColumnTable test;
  std::vector<std::string> features;
  std::string label;

  /// train rows followed by test rows
  ColumnTable combined() const;
};

PreprocessArtifacts load_artifacts(const RunConfig& config);

/// Each stage writes its tables and plot data, stores its fragment and
/// refreshes report.json. Errors are rethrown prefixed with the stage name.
Json run_preprocess(const RunConfig& config);
Json run_cv(const RunConfig& config);
Json run_density(const RunConfig& config);
Json run_wy(const RunConfig& config);

/// Merges every stored fragment into report.json and returns the envelope.
Json assemble_report(const RunConfig& config);

}  // namespace uavids
