#include "kronsum/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "kronsum/errors.hpp"

namespace kronsum::io {

namespace {

std::vector<std::string_view> split(std::string_view line, char delimiter) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(delimiter, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view field) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) return std::nullopt;
  return value;
}

// Numeric table; a non-numeric first line is treated as a header when allowed.
std::vector<std::vector<double>> parse_table(std::string_view text, char delimiter, bool allow_header) {
  std::vector<std::vector<double>> rows;
  size_t line_no = 0, expected = 0;
  size_t start = 0;
  while (start <= text.size()) {
    const size_t end = text.find('\n', start);
    std::string_view line =
        text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    bool numeric = true;
    size_t bad_col = 0;
    const auto fields = split(line, delimiter);
    for (size_t c = 0; c < fields.size(); ++c) {
      const auto v = parse_number(fields[c]);
      if (!v) {
        numeric = false;
        bad_col = c + 1;
        break;
      }
      row.push_back(*v);
    }
    if (!numeric) {
      if (allow_header && rows.empty() && expected == 0) {
        expected = fields.size();
        continue;
      }
      throw ParseError("line " + std::to_string(line_no) + ", column " + std::to_string(bad_col) +
                       ": not a number: '" + std::string(trim(fields[bad_col - 1])) + "'");
    }
    if (expected == 0) expected = row.size();
    if (row.size() != expected)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                       " columns, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Mat(0, 0);
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return m;
}

std::vector<Index> one_based(const json& j, const char* name) {
  if (!j.is_array()) throw ParseError(std::string(name) + " must be an array of 1-based indices");
  std::vector<Index> out;
  for (const auto& v : j) {
    const auto i = v.get<Index>();
    if (i < 1) throw ParseError(std::string(name) + " entries are 1-based");
    out.push_back(i - 1);
  }
  return out;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, ptr);
}

std::string matrix_to_csv(const Mat& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Mat matrix_from_csv(std::string_view text, char delimiter) {
  return to_matrix(parse_table(text, delimiter, false));
}

json matrix_to_json(const Mat& m) {
  json data = json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw ParseError("matrix JSON needs rows, cols and data");
  const auto rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Index>(data.size()) != rows * cols)
    throw ParseError("matrix JSON: data has " + std::to_string(data.size()) + " values, expected " +
                     std::to_string(rows * cols));
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) m(i, c) = data[static_cast<size_t>(i * cols + c)].get<double>();
  return m;
}

json vector_to_json(const Vec& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vec vector_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("expected a JSON array of numbers");
  Vec v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<size_t>(i)].get<double>();
  return v;
}

FrameSeries parse_frame_series(std::string_view text, const SeriesCsvOptions& opts) {
  if (opts.stride < 1) throw ArgumentError("frame series stride must be >= 1");
  const Mat all = to_matrix(parse_table(text, opts.delimiter, true));
  if (all.rows() == 0) throw ParseError("frame series CSV has no data rows");
  FrameSeries series;
  const Index kept = (all.rows() + opts.stride - 1) / opts.stride;
  series.frames.resize(kept, all.cols());
  for (Index i = 0; i < kept; ++i) series.frames.row(i) = all.row(i * opts.stride);
  return series;
}

FrameSeries load_frame_series(const std::filesystem::path& path, const SeriesCsvOptions& opts) {
  try {
    return parse_frame_series(read_text_file(path), opts);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

json dims_to_json(const StDims& dims) { return json{{"p", dims.p}, {"q", dims.q}}; }

StDims dims_from_json(const json& j) {
  if (!j.is_object() || !j.contains("p") || !j.contains("q")) throw ParseError("dims need p and q");
  return StDims(j.at("p").get<Index>(), j.at("q").get<Index>());
}

json model_to_json(const KronSumModel& model) {
  json factors = json::array();
  for (const auto& f : model.factors)
    factors.push_back({{"temporal", matrix_to_json(f.temporal)}, {"spatial", matrix_to_json(f.spatial)}});
  json j{{"format", "kronsum-model"},
         {"dims", dims_to_json(model.dims)},
         {"rank", model.rank()},
         {"factors", std::move(factors)},
         {"fit_domain", model.fit_domain == FitDomain::correlation ? "correlation" : "covariance"},
         {"diag_load", model.diag_load ? vector_to_json(*model.diag_load) : json(nullptr)},
         {"scale", model.scale ? vector_to_json(*model.scale) : json(nullptr)},
         {"warnings", model.warnings}};
  if (!model.objective_trace.empty()) j["objective_trace"] = model.objective_trace;
  return j;
}

KronSumModel model_from_json(const json& j) {
  try {
    KronSumModel model;
    model.dims = dims_from_json(j.at("dims"));
    for (const auto& f : j.at("factors"))
      model.factors.push_back({matrix_from_json(f.at("temporal")), matrix_from_json(f.at("spatial"))});
    if (j.contains("rank") && j.at("rank").get<Index>() != model.rank())
      throw ParseError("model rank does not match the number of factors");
    const auto domain = j.value("fit_domain", std::string("covariance"));
    if (domain != "covariance" && domain != "correlation")
      throw ParseError("fit_domain must be covariance or correlation");
    model.fit_domain = domain == "correlation" ? FitDomain::correlation : FitDomain::covariance;
    if (j.contains("diag_load") && !j.at("diag_load").is_null())
      model.diag_load = vector_from_json(j.at("diag_load"));
    if (j.contains("scale") && !j.at("scale").is_null()) model.scale = vector_from_json(j.at("scale"));
    if (j.contains("warnings")) model.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("objective_trace"))
      model.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    if (model.factors.empty()) throw ParseError("model has no factors");
    if ((model.fit_domain == FitDomain::correlation) != model.scale.has_value())
      throw ParseError("scale must be present exactly when fit_domain is correlation");
    const Index d = model.dims.dim();
    if ((model.diag_load && model.diag_load->size() != d) || (model.scale && model.scale->size() != d))
      throw ShapeError("model vectors do not have length pq = " + std::to_string(d));
    model.assemble();  // validates factor shapes
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
}

json task_to_json(const PredictionTask& task) {
  json x = json::array(), y = json::array();
  for (Index i : task.x_idx) x.push_back(i + 1);
  for (Index i : task.y_idx) y.push_back(i + 1);
  return json{{"dims", dims_to_json(task.dims)}, {"x_idx", std::move(x)}, {"y_idx", std::move(y)}};
}

PredictionTask task_from_json(const json& j, std::optional<StDims> dims) {
  try {
    if (j.contains("dims")) {
      const StDims own = dims_from_json(j.at("dims"));
      if (dims && !(own == *dims))
        throw ShapeError("task dims (p=" + std::to_string(own.p) + ", q=" + std::to_string(own.q) +
                         ") do not match (p=" + std::to_string(dims->p) + ", q=" +
                         std::to_string(dims->q) + ")");
      dims = own;
    }
    if (!dims) throw ParseError("task needs dims");
    const std::string type = j.value("type", std::string("explicit"));
    PredictionTask task;
    if (type == "forward") {
      task = build_task_forward(*dims, j.at("ahead").get<Index>(), j.at("history").get<Index>());
    } else if (type == "partial") {
      std::optional<Index> target;
      if (j.contains("target_frame")) target = j.at("target_frame").get<Index>() - 1;
      task = build_task_partial(*dims, one_based(j.at("group1"), "group1"), j.at("t1").get<Index>(),
                                j.at("t2").get<Index>(), target);
    } else if (type == "explicit") {
      task.dims = *dims;
      task.x_idx = one_based(j.at("x_idx"), "x_idx");
      task.y_idx = one_based(j.at("y_idx"), "y_idx");
    } else {
      throw ParseError("unknown task type '" + type + "' (expected explicit, forward or partial)");
    }
    task.validate();
    return task;
  } catch (const json::exception& e) {
    throw ParseError(std::string("task JSON: ") + e.what());
  }
}

CovarianceFile covariance_from_json(const json& j) {
  try {
    CovarianceFile out;
    if (j.contains("matrix")) {
      out.matrix = matrix_from_json(j.at("matrix"));
      if (j.contains("mean") && !j.at("mean").is_null()) out.mean = vector_from_json(j.at("mean"));
      if (j.contains("dims")) out.dims = dims_from_json(j.at("dims"));
      if (j.contains("n_samples")) out.n_samples = j.at("n_samples").get<Index>();
    } else {
      out.matrix = matrix_from_json(j);
    }
    if (out.matrix.rows() != out.matrix.cols())
      throw ShapeError("covariance must be square, got " + std::to_string(out.matrix.rows()) + "x" +
                       std::to_string(out.matrix.cols()));
    if (out.mean && out.mean->size() != out.matrix.rows())
      throw ShapeError("covariance mean length does not match the matrix");
    if (out.dims && out.dims->dim() != out.matrix.rows())
      throw ShapeError("covariance dims do not match the matrix size");
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("covariance JSON: ") + e.what());
  }
}

json covariance_to_json(const SampleCovariance& sc) {
  return json{{"matrix", matrix_to_json(sc.matrix)},
              {"mean", vector_to_json(sc.mean)},
              {"dims", dims_to_json(sc.dims)},
              {"n_samples", sc.n_samples}};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace kronsum::io
