#include "botda/trace.hpp"

#include <cmath>
#include <sstream>

#include "botda/binio.hpp"
#include "botda/errors.hpp"

namespace botda {

std::string trace_csv(const BfsTrace& trace, const std::string& comment) {
  std::ostringstream out;
  out.precision(12);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "position_m,bfs_hz\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << trace.position(i) << ',' << trace.values[i] << '\n';
  return out.str();
}

void write_trace_csv(const std::filesystem::path& path, const BfsTrace& trace, const std::string& comment) {
  binio::write_file(path.string(), trace_csv(trace, comment));
}

BfsTrace read_trace_csv(const std::filesystem::path& path) {
  std::istringstream in(binio::read_file(path.string()));
  std::string line;
  std::size_t row = 0;
  do {
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty trace file");
    ++row;
  } while (!line.empty() && line[0] == '#');
  BfsTrace trace;
  std::vector<double> positions;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string a;
    std::string b;
    if (!std::getline(fields, a, ',') || !std::getline(fields, b, ',')) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " needs two columns");
    }
    try {
      positions.push_back(std::stod(a));
      trace.values.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " is not numeric");
    }
    if (!std::isfinite(positions.back()) || !std::isfinite(trace.values.back())) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " is not finite");
    }
  }
  if (trace.values.empty()) throw DataError(path.string() + ": trace has no rows");
  if (positions.size() >= 2) {
    trace.pitch = positions[1] - positions[0];
    if (!(trace.pitch > 0.0)) throw DataError(path.string() + ": positions are not increasing");
  }
  return trace;
}

}  // namespace botda
