#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kronsum/cov_est.hpp"
#include "kronsum/predictor.hpp"

namespace kronsum::io {

using json = nlohmann::json;

// Malformed input file; the message carries the 1-based line number.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// Shortest representation that parses back to the same double.
std::string format_double(double value);

// Row-major lines, ',' separated, LF terminated.
std::string matrix_to_csv(const Mat& m);
Mat matrix_from_csv(std::string_view text, char delimiter = ',');

// {"rows": r, "cols": c, "data": [row-major values]}
json matrix_to_json(const Mat& m);
Mat matrix_from_json(const json& j);
json vector_to_json(const Vec& v);
Vec vector_from_json(const json& j);

struct SeriesCsvOptions {
  char delimiter = ',';
  Index stride = 1;  // keep every stride-th frame
};

// One frame per row, optional non-numeric header line.
FrameSeries parse_frame_series(std::string_view text, const SeriesCsvOptions& opts = {});
FrameSeries load_frame_series(const std::filesystem::path& path, const SeriesCsvOptions& opts = {});

json model_to_json(const KronSumModel& model);
KronSumModel model_from_json(const json& j);

// {"dims": {"p", "q"}, "x_idx": [...], "y_idx": [...]} with 1-based indices.
// Also accepts {"type": "forward", "history", "ahead"} and
// {"type": "partial", "group1", "t1", "t2", "target_frame"} (1-based features/frames).
json task_to_json(const PredictionTask& task);
PredictionTask task_from_json(const json& j, std::optional<StDims> dims = std::nullopt);

// Covariance file: a bare matrix wrapper, or {"matrix": ..., "mean": [...],
// "dims": {...}, "n_samples": n}.
struct CovarianceFile {
  Mat matrix;
  std::optional<Vec> mean;
  std::optional<StDims> dims;
  std::optional<Index> n_samples;
};
CovarianceFile covariance_from_json(const json& j);
json covariance_to_json(const SampleCovariance& sc);

json dims_to_json(const StDims& dims);
StDims dims_from_json(const json& j);

std::string read_text_file(const std::filesystem::path& path);
json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace kronsum::io
