#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace botda {

/// BFS along the fiber, one value per receiver sample.
struct BfsTrace {
  std::vector<double> values;  // Hz
  double pitch = 0.1;          // m

  std::size_t size() const { return values.size(); }
  double position(std::size_t i) const { return static_cast<double>(i) * pitch; }
};

/// Closed BFS interval used for label normalization.
struct BfsRange {
  double min = 10.81e9;
  double max = 10.89e9;

  double span() const { return max - min; }
  void validate() const;
  bool operator==(const BfsRange&) const = default;
};

/// "position_m,bfs_hz" rows with a header line, preceded by "# comment"
/// when a comment is given.
std::string trace_csv(const BfsTrace& trace, const std::string& comment = {});
void write_trace_csv(const std::filesystem::path& path, const BfsTrace& trace, const std::string& comment = {});
/// Reads the first two columns of a trace CSV, skipping '#' lines; the pitch
/// comes from the position column. Throws DataError on malformed input.
BfsTrace read_trace_csv(const std::filesystem::path& path);

}  // namespace botda
