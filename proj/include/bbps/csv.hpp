#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bbps/common.hpp"
#include "bbps/diagnostics.hpp"
#include "bbps/trajectory.hpp"

namespace bbps {

/// Shortest representation that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw ConfigError("failed while writing " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  return out;
}

inline bool parse_double(const std::string& field, double* value) {
  const char* begin = field.c_str();
  char* end = nullptr;
  *value = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  return end != begin && end && *end == '\0';
}

}  // namespace detail

/// Observation files: one CSV line per spatial row, one field per time step.
/// A single leading header line of non-numeric labels is tolerated.
inline Matrix read_matrix_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    std::vector<double> row;
    row.reserve(fields.size());
    bool numeric = true;
    for (const std::string& f : fields) {
      double v;
      if (!detail::parse_double(f, &v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first) {
        first = false;  // header line
        continue;
      }
      throw ConfigError(path + ": non-numeric field outside a header line");
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError(path + ": ragged rows in CSV matrix");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path + ": no data rows");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows.front().size(); ++c)
      m(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
  return m;
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

/// samples.csv: t plus one column per tracked coordinate, named x_<row>_<col>.
inline std::string samples_csv(const SampleSeries& s) {
  std::string out = "t";
  for (const auto& [r, c] : s.coords)
    out += ",x_" + std::to_string(r) + "_" + std::to_string(c);
  out += '\n';
  for (long k = 0; k < s.n_samples(); ++k) {
    out += format_double(s.start_time + static_cast<double>(k) * s.delta);
    for (int j = 0; j < s.n_coords(); ++j) {
      out += ',';
      out += format_double(s.values(j, k));
    }
    out += '\n';
  }
  return out;
}

/// events.csv: time,kind,block_id.  Events that reflect several blocks at
/// once produce one line per reflected block at the same time stamp.
inline std::string events_csv(const Trajectory& traj) {
  std::string out = "time,kind,block_id\n";
  for (const EventRecord& ev : traj.events) {
    const std::string t = format_double(ev.time);
    const char* kind = event_kind_name(ev.kind);
    if (ev.kind == EventKind::Bounce) {
      for (const VelocityPatch& p : ev.patches)
        out += t + "," + kind + "," + std::to_string(p.unit) + "\n";
    } else {
      out += t + "," + kind + "," + std::to_string(ev.unit) + "\n";
    }
  }
  return out;
}

/// diagnostics.csv: long format, one (metric, coordinate, value) row per
/// tracked coordinate and metric.
inline std::string diagnostics_csv(const SampleSeries& s, const EssResult& e,
                                   const Vector& jumps) {
  auto coord_name = [&](int j) {
    return "x_" + std::to_string(s.coords[j].first) + "_" +
           std::to_string(s.coords[j].second);
  };
  std::string out = "metric,coordinate,value\n";
  for (int j = 0; j < s.n_coords(); ++j)
    out += "ess," + coord_name(j) + ',' + format_double(e.ess(j)) + '\n';
  for (int j = 0; j < s.n_coords(); ++j)
    out += "ess_per_sec," + coord_name(j) + ',' +
           format_double(e.ess_per_sec(j)) + '\n';
  for (int j = 0; j < s.n_coords(); ++j)
    out += "msjd," + coord_name(j) + ',' + format_double(jumps(j)) + '\n';
  return out;
}

/// acf.csv for one coordinate: lag, autocorrelation.
inline std::string acf_csv(const Vector& rho) {
  std::string out = "lag,acf\n";
  for (Eigen::Index lag = 0; lag < rho.size(); ++lag)
    out += std::to_string(lag) + ',' + format_double(rho(lag)) + '\n';
  return out;
}

inline std::string mse_csv(const MseCurve& curve) {
  std::string out = "cpu_seconds,mse\n";
  for (std::size_t k = 0; k < curve.mse.size(); ++k)
    out += format_double(curve.cpu_seconds[k]) + ',' +
           format_double(curve.mse[k]) + '\n';
  return out;
}

inline std::string energy_csv(const std::vector<double>& energy, double delta,
                              double start_time) {
  std::string out = "t,energy\n";
  for (std::size_t k = 0; k < energy.size(); ++k)
    out += format_double(start_time + static_cast<double>(k) * delta) + ',' +
           format_double(energy[k]) + '\n';
  return out;
}

}  // namespace bbps
