#pragma once

// Point-set, label, prior and result files.
//
// CSV (canonical, read/write): one point per line, comma separated, '.'
// decimals, LF endings. An optional header row names the columns; a column
// called "label" or "cluster" holds integer cluster labels. Without a header,
// a caller-supplied dimension decides whether a trailing label column exists;
// failing that, exactly four columns are read as x,y,z,label and any other
// width as pure coordinates.
//
// PLY (read only): ASCII vertex element with x/y/z properties and an optional
// integer "cluster" (or "label") property.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cpdreg/core.hpp"
#include "cpdreg/ecpd.hpp"

namespace cpdreg {

enum class CloudFormat { kCsv, kPlyAscii };

struct LabeledCloud {
  PointSet points;
  std::optional<ClusterAssignment> labels;
};

namespace io {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return v;
  // Accept integral floating spellings such as "2.0".
  const auto d = parse_double(s);
  if (d && std::isfinite(*d) && std::floor(*d) == *d && std::abs(*d) < 9e15) {
    return static_cast<long long>(*d);
  }
  return std::nullopt;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

// Dense re-indexing to [1..C] in order of first appearance.
inline ClusterAssignment reindex_labels(const std::vector<long long>& raw) {
  std::unordered_map<long long, int> dense;
  std::vector<long long> ids;
  std::vector<int> labels;
  labels.reserve(raw.size());
  for (long long v : raw) {
    auto [it, inserted] = dense.try_emplace(v, static_cast<int>(ids.size()) + 1);
    if (inserted) ids.push_back(v);
    labels.push_back(it->second);
  }
  const auto count = static_cast<int>(ids.size());
  return ClusterAssignment(std::move(labels), count, std::move(ids));
}

inline std::string coordinate_name(int d, int dim) {
  if (dim <= 3) return std::string(1, "xyz"[d]);
  return "x" + std::to_string(d + 1);
}

}  // namespace io

/// Parses CSV point text. `dim`, when given, fixes the coordinate count for
/// header-less input.
inline LabeledCloud parse_csv_cloud(std::string_view text, const std::string& source = "<csv>",
                                    std::optional<int> dim = std::nullopt) {
  std::vector<std::vector<double>> rows;
  std::vector<long long> raw_labels;
  std::optional<int> label_col;
  std::optional<std::size_t> width;
  bool header_seen = false;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = text.find('\n', pos);
    const std::string_view line =
        io::trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    const auto fields = io::split(line, ',');
    if (!width && !header_seen && !io::parse_double(fields.front())) {
      // Header row.
      header_seen = true;
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] == "label" || fields[i] == "cluster") {
          if (i + 1 != fields.size()) {
            throw ParseError(source, line_no, "label column must be the last column");
          }
          label_col = static_cast<int>(i);
        }
      }
      width = fields.size();
      continue;
    }
    if (!width) {
      width = fields.size();
      if (dim) {
        if (static_cast<int>(fields.size()) == *dim + 1) {
          label_col = *dim;
        } else if (static_cast<int>(fields.size()) != *dim) {
          throw ParseError(source, line_no,
                           "expected " + std::to_string(*dim) + " coordinates (plus optional label), got " +
                               std::to_string(fields.size()) + " fields");
        }
      } else if (fields.size() == 4) {
        label_col = 3;
      }
    }
    if (fields.size() != *width) {
      throw ParseError(source, line_no,
                       "ragged row: " + std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(*width));
    }
    std::vector<double> coords;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (label_col && static_cast<int>(i) == *label_col) {
        const auto v = io::parse_integer(fields[i]);
        if (!v) throw ParseError(source, line_no, "non-integer label '" + std::string(fields[i]) + "'");
        if (*v < 0) throw ParseError(source, line_no, "negative label " + std::to_string(*v));
        raw_labels.push_back(*v);
      } else {
        const auto v = io::parse_double(fields[i]);
        if (!v) throw ParseError(source, line_no, "non-numeric field '" + std::string(fields[i]) + "'");
        if (!std::isfinite(*v)) throw ParseError(source, line_no, "non-finite coordinate");
        coords.push_back(*v);
      }
    }
    if (coords.empty()) throw ParseError(source, line_no, "row has no coordinates");
    rows.push_back(std::move(coords));
  }
  if (rows.empty()) throw ParseError(source, line_no, "no points");

  LabeledCloud cloud{PointSet::from_rows(rows), std::nullopt};
  if (label_col) cloud.labels = io::reindex_labels(raw_labels);
  return cloud;
}

inline LabeledCloud parse_ply_cloud(std::string_view text, const std::string& source = "<ply>") {
  std::vector<std::string> lines;
  {
    std::size_t pos = 0;
    while (pos < text.size()) {
      const std::size_t end = text.find('\n', pos);
      lines.emplace_back(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
      pos = end == std::string_view::npos ? text.size() : end + 1;
    }
  }
  if (lines.empty() || io::trim(lines[0]) != "ply") throw ParseError(source, 1, "missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
  };
  std::vector<Element> elements;
  std::size_t i = 1;
  bool ascii = false;
  for (; i < lines.size(); ++i) {
    const auto tok = io::split_ws(lines[i]);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") {
      ++i;
      break;
    }
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") {
        throw ParseError(source, i + 1, "only ASCII PLY is supported");
      }
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(source, i + 1, "malformed element line");
      const auto n = io::parse_integer(tok[2]);
      if (!n || *n < 0) throw ParseError(source, i + 1, "bad element count");
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(*n), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(source, i + 1, "property before element");
      if (tok.size() >= 2 && tok[1] == "list") {
        elements.back().properties.emplace_back(tok.back());
      } else if (tok.size() == 3) {
        elements.back().properties.emplace_back(tok[2]);
      } else {
        throw ParseError(source, i + 1, "malformed property line");
      }
    }
  }
  if (!ascii) throw ParseError(source, 1, "missing ASCII format line");

  std::size_t line_idx = i;
  for (const Element& el : elements) {
    if (el.name != "vertex") {
      line_idx += el.count;
      continue;
    }
    std::vector<int> coord_cols;
    std::optional<int> label_col;
    for (const char* axis : {"x", "y", "z"}) {
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        if (el.properties[p] == axis) coord_cols.push_back(static_cast<int>(p));
      }
    }
    for (std::size_t p = 0; p < el.properties.size(); ++p) {
      if (el.properties[p] == "cluster" || el.properties[p] == "label") label_col = static_cast<int>(p);
    }
    if (coord_cols.empty()) throw ParseError(source, 1, "vertex element has no x/y/z properties");

    std::vector<std::vector<double>> rows;
    std::vector<long long> raw_labels;
    for (std::size_t k = 0; k < el.count; ++k, ++line_idx) {
      if (line_idx >= lines.size()) throw ParseError(source, line_idx + 1, "truncated vertex list");
      const auto tok = io::split_ws(lines[line_idx]);
      if (tok.size() != el.properties.size()) {
        throw ParseError(source, line_idx + 1, "vertex has " + std::to_string(tok.size()) +
                                                   " values, expected " +
                                                   std::to_string(el.properties.size()));
      }
      std::vector<double> coords;
      for (int c : coord_cols) {
        const auto v = io::parse_double(tok[static_cast<std::size_t>(c)]);
        if (!v || !std::isfinite(*v)) throw ParseError(source, line_idx + 1, "bad coordinate");
        coords.push_back(*v);
      }
      if (label_col) {
        const auto v = io::parse_integer(tok[static_cast<std::size_t>(*label_col)]);
        if (!v) throw ParseError(source, line_idx + 1, "non-integer cluster label");
        if (*v < 0) throw ParseError(source, line_idx + 1, "negative label " + std::to_string(*v));
        raw_labels.push_back(*v);
      }
      rows.push_back(std::move(coords));
    }
    if (rows.empty()) throw ParseError(source, line_idx, "vertex element is empty");
    LabeledCloud cloud{PointSet::from_rows(rows), std::nullopt};
    if (label_col) cloud.labels = io::reindex_labels(raw_labels);
    return cloud;
  }
  throw ParseError(source, 1, "no vertex element");
}

/// Re-expresses `other` in the dense numbering of `reference`, matching
/// clusters by the label ids they were read with. Assignments without ids
/// are taken to share numbering already.
inline ClusterAssignment align_labels(const ClusterAssignment& reference,
                                      const ClusterAssignment& other) {
  if (reference.ids().empty() || other.ids().empty()) {
    if (reference.n_clusters() != other.n_clusters()) {
      throw InputError("label sets declare " + std::to_string(reference.n_clusters()) + " and " +
                       std::to_string(other.n_clusters()) + " clusters");
    }
    return other;
  }
  std::unordered_map<long long, int> dense;
  for (std::size_t k = 0; k < reference.ids().size(); ++k) {
    dense.emplace(reference.ids()[k], static_cast<int>(k) + 1);
  }
  std::vector<int> map(other.ids().size());
  for (std::size_t k = 0; k < other.ids().size(); ++k) {
    const auto it = dense.find(other.ids()[k]);
    if (it == dense.end()) {
      throw DegenerateClusterError(
          "label " + std::to_string(other.ids()[k]) + " has no counterpart in the other set",
          static_cast<int>(k) + 1);
    }
    map[k] = it->second;
  }
  if (other.n_clusters() != reference.n_clusters()) {
    throw InputError("label sets declare " + std::to_string(reference.n_clusters()) + " and " +
                     std::to_string(other.n_clusters()) + " clusters");
  }
  std::vector<int> labels;
  labels.reserve(other.labels().size());
  for (int l : other.labels()) labels.push_back(map[static_cast<std::size_t>(l - 1)]);
  return ClusterAssignment(std::move(labels), reference.n_clusters(), reference.ids());
}

inline CloudFormat detect_format(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".ply" ? CloudFormat::kPlyAscii : CloudFormat::kCsv;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline LabeledCloud read_point_set(const std::filesystem::path& path,
                                   std::optional<CloudFormat> format = std::nullopt,
                                   std::optional<int> dim = std::nullopt) {
  const std::string text = read_text(path);
  const CloudFormat fmt = format.value_or(detect_format(path));
  return fmt == CloudFormat::kPlyAscii ? parse_ply_cloud(text, path.string())
                                       : parse_csv_cloud(text, path.string(), dim);
}

/// Writes CSV with a header row; labels are written as their original ids
/// when the assignment carries them.
inline void write_point_set(const std::filesystem::path& path, const PointSet& points,
                            const ClusterAssignment* labels = nullptr) {
  if (labels) labels->require_matches(points, "write_point_set");
  auto out = io::open_for_write(path);
  const int dim = points.dim();
  for (int d = 0; d < dim; ++d) out << (d ? "," : "") << io::coordinate_name(d, dim);
  if (labels) out << ",label";
  out << '\n';
  for (Index i = 0; i < points.size(); ++i) {
    for (int d = 0; d < dim; ++d) out << (d ? "," : "") << io::format_double(points.points()(i, d));
    if (labels) {
      const int l = labels->label(i);
      out << ',' << (labels->ids().empty() ? l : labels->ids()[static_cast<std::size_t>(l - 1)]);
    }
    out << '\n';
  }
  io::finish_write(out, path);
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  auto out = io::open_for_write(path);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << io::format_double(m(i, j));
    out << '\n';
  }
  io::finish_write(out, path);
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = io::trim(lines[i]);
    if (line.empty()) continue;
    std::vector<double> row;
    for (auto f : io::split(line, ',')) {
      const auto v = io::parse_double(f);
      if (!v) throw ParseError(path.string(), i + 1, "non-numeric field '" + std::string(f) + "'");
      row.push_back(*v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(path.string(), i + 1, "ragged row");
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

inline nlohmann::json to_json(const TraceRecord& r) {
  return {{"iteration", r.iteration},
          {"sigma2", r.sigma2},
          {"nll", r.nll},
          {"q_value", r.q_value},
          {"wall_ms", r.wall_ms}};
}

inline void write_run_log(const std::filesystem::path& path, const std::vector<TraceRecord>& trace) {
  if (trace.empty()) throw InputError("run log is empty; a registration records every iteration");
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].iteration <= trace[i - 1].iteration) {
      throw InputError("run log iteration indices must be strictly increasing");
    }
  }
  auto out = io::open_for_write(path);
  for (const auto& r : trace) out << to_json(r).dump() << '\n';
  io::finish_write(out, path);
}

inline std::vector<TraceRecord> read_run_log(const std::filesystem::path& path) {
  std::vector<TraceRecord> trace;
  const auto lines = io::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      trace.push_back(TraceRecord{j.at("iteration").get<int>(), j.at("sigma2").get<double>(),
                                  j.at("nll").get<double>(), j.at("q_value").get<double>(),
                                  j.at("wall_ms").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), i + 1, e.what());
    }
  }
  return trace;
}

struct ResultPaths {
  std::filesystem::path transformed;
  std::filesystem::path coefficients;
  std::filesystem::path run_log;
};

inline ResultPaths result_paths(const std::filesystem::path& out_dir) {
  return {out_dir / "transformed.csv", out_dir / "W.csv", out_dir / "log.jsonl"};
}

/// transformed.csv (point CSV, with the template labels when given), W.csv
/// (M rows, D columns) and log.jsonl (one record per iteration).
inline ResultPaths write_result(const RegistrationResult& result, const std::filesystem::path& out_dir,
                                const ClusterAssignment* template_labels = nullptr) {
  if (result.trace.empty()) throw InputError("refusing to write a result with an empty trace");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const ResultPaths paths = result_paths(out_dir);
  write_point_set(paths.transformed, result.transformed, template_labels);
  write_matrix_csv(paths.coefficients, result.field.w);
  write_run_log(paths.run_log, result.trace);
  return paths;
}

/// "alpha_sq=<value>" header then 1-based "n_index,m_index" rows. When the
/// set sizes are given, indices are range-checked with line numbers.
inline CorrespondencePriors parse_priors(std::string_view text, const std::string& source = "<priors>",
                                         std::optional<Index> n_data = std::nullopt,
                                         std::optional<Index> n_template = std::nullopt) {
  std::optional<double> alpha_sq;
  std::vector<CorrespondencePriors::Pair> pairs;
  std::vector<std::size_t> pair_lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = text.find('\n', pos);
    const std::string_view line =
        io::trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (!alpha_sq) {
      constexpr std::string_view key = "alpha_sq=";
      if (line.substr(0, key.size()) != key) {
        throw ParseError(source, line_no, "expected 'alpha_sq=<value>' header");
      }
      const auto v = io::parse_double(io::trim(line.substr(key.size())));
      if (!v || !std::isfinite(*v)) throw ParseError(source, line_no, "bad alpha_sq value");
      if (!(*v > 0.0)) throw ParseError(source, line_no, "alpha_sq must be > 0");
      alpha_sq = v;
      continue;
    }
    const auto fields = io::split(line, ',');
    if (fields.size() != 2) throw ParseError(source, line_no, "expected 'n_index,m_index'");
    const auto n = io::parse_integer(fields[0]);
    const auto m = io::parse_integer(fields[1]);
    if (!n || !m) throw ParseError(source, line_no, "non-integer index");
    if (*n < 1 || *m < 1) throw ParseError(source, line_no, "indices are 1-based");
    if ((n_data && *n > *n_data) || (n_template && *m > *n_template)) {
      throw ParseError(source, line_no, "index out of range");
    }
    pairs.emplace_back(static_cast<Index>(*n - 1), static_cast<Index>(*m - 1));
    pair_lines.push_back(line_no);
  }
  if (!alpha_sq) throw ParseError(source, line_no, "missing 'alpha_sq=<value>' header");

  std::unordered_map<std::uint64_t, std::size_t> seen;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto key = (static_cast<std::uint64_t>(pairs[k].first) << 32) ^
                     static_cast<std::uint64_t>(pairs[k].second);
    if (!seen.emplace(key, k).second) {
      throw ParseError(source, pair_lines[k], "duplicate pair " + std::to_string(pairs[k].first + 1) +
                                                  "," + std::to_string(pairs[k].second + 1));
    }
  }
  return CorrespondencePriors(std::move(pairs), *alpha_sq);
}

inline CorrespondencePriors read_priors(const std::filesystem::path& path,
                                        std::optional<Index> n_data = std::nullopt,
                                        std::optional<Index> n_template = std::nullopt) {
  return parse_priors(read_text(path), path.string(), n_data, n_template);
}

inline void write_priors(const std::filesystem::path& path, const CorrespondencePriors& priors) {
  auto out = io::open_for_write(path);
  out << "alpha_sq=" << io::format_double(priors.alpha_sq()) << '\n';
  for (const auto& [n, m] : priors.pairs()) out << n + 1 << ',' << m + 1 << '\n';
  io::finish_write(out, path);
}

}  // namespace cpdreg
