#ifndef POSTSEL_CSV_HPP
#define POSTSEL_CSV_HPP

// Plain CSV input/output for summary statistics, covariance matrices and result tables.

#include <charconv>
#include <fstream>
#include <sstream>

#include "postsel/common.hpp"

namespace postsel {

/// Shortest round-trip decimal representation; "nan", "inf", "-inf" for non-finite values.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericalFailure("could not format a number");
  return std::string(buf, end);
}

inline double parse_double(const std::string& field, const std::string& where) {
  std::string s = field;
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  if (s == "nan" || s == "NaN" || s == "NA") return kNaN;
  if (s == "inf" || s == "Inf") return kInf;
  if (s == "-inf" || s == "-Inf") return -kInf;
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw InvalidInput(where + ": '" + field + "' is not a number");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') cur.push_back(c);
  }
  out.push_back(cur);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InvalidInput("CSV is missing column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
};

inline CsvTable read_csv(std::istream& in, bool has_header, const std::string& name) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (first && has_header) t.header = fields;
    else {
      const std::size_t width = has_header ? t.header.size() : (t.rows.empty() ? fields.size() : t.rows[0].size());
      if (fields.size() != width)
        throw InvalidInput(name + ": row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(width));
      t.rows.push_back(std::move(fields));
    }
    first = false;
  }
  return t;
}

inline CsvTable read_csv_file(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return read_csv(in, has_header, path);
}

/// Numeric matrix without header (a header row of non-numbers is skipped).
inline Matrix read_matrix_csv(const std::string& path) {
  CsvTable t = read_csv_file(path, false);
  if (!t.rows.empty()) {
    try {
      parse_double(t.rows[0][0], path);
    } catch (const InvalidInput&) {
      t.rows.erase(t.rows.begin());
    }
  }
  if (t.rows.empty()) throw InvalidInput(path + ": no numeric rows");
  Matrix m(static_cast<Index>(t.rows.size()), static_cast<Index>(t.rows[0].size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], path);
  return m;
}

/// Summary statistics file: a column named beta_hat (or beta), or a single numeric column.
/// Optional column 'name' labels the coordinates.
struct StatsFile {
  Vector beta_hat;
  std::vector<std::string> names;
};

inline StatsFile read_stats_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::string first;
  while (std::getline(in, first) && first.find_first_not_of(" \t\r") == std::string::npos) {}
  in.clear();
  in.seekg(0);
  bool header = false;
  try {
    parse_double(split_csv_line(first).back(), path);
  } catch (const InvalidInput&) {
    header = true;
  }
  CsvTable t = read_csv(in, header, path);
  if (t.rows.empty()) throw InvalidInput(path + ": no coefficients");
  std::size_t col = 0;
  if (header) {
    col = t.has_column("beta_hat") ? t.column("beta_hat") : t.column("beta");
  } else if (t.rows[0].size() != 1) {
    throw InvalidInput(path + ": expected a beta_hat column or a single numeric column");
  }
  StatsFile s;
  s.beta_hat.resize(static_cast<Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) s.beta_hat(static_cast<Index>(i)) = parse_double(t.rows[i][col], path);
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    s.names.push_back(header && t.has_column("name") ? t.rows[i][t.column("name")] : "b" + std::to_string(i + 1));
  return s;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      const bool quote = fields[i].find_first_of(",\"\n") != std::string::npos;
      if (quote) {
        out_ << '"';
        for (char c : fields[i]) out_ << (c == '"' ? "\"\"" : std::string(1, c));
        out_ << '"';
      } else {
        out_ << fields[i];
      }
    }
    out_ << '\n';
  }

 private:
  std::ostream& out_;
};

}  // namespace postsel

#endif  // POSTSEL_CSV_HPP
