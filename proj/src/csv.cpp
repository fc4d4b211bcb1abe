#include "cedar/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <vector>

#include "cedar/common.hpp"

namespace cedar {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  require(res.ec == std::errc(), "cannot format double");
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

double parse_cell(std::string_view cell, const std::filesystem::path& path,
                  std::size_t row, std::size_t col) {
  const std::string_view t = trim(cell);
  require(!t.empty(), path.string(), ": row ", row, ", column ", col,
          ": empty cell");
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  require(res.ec == std::errc() && res.ptr == t.data() + t.size(),
          path.string(), ": row ", row, ", column ", col,
          ": cannot parse '", std::string(t), "' as a number");
  require(std::isfinite(v), path.string(), ": row ", row, ", column ", col,
          ": non-finite value");
  return v;
}

}  // namespace

SiteData read_site_csv(const std::filesystem::path& path, int site_id) {
  std::ifstream in(path);
  require(in.good(), "cannot open ", path.string());

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t ncols = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) {
      // A blank line is tolerated only at the very end of the file.
      std::string rest;
      while (std::getline(in, rest)) {
        require(trim(rest).empty(), path.string(), ": row ", lineno,
                ": blank line in the middle of the data");
      }
      break;
    }
    std::vector<double> row;
    std::string_view rest = line;
    std::size_t col = 0;
    for (;;) {
      ++col;
      const std::size_t comma = rest.find(',');
      const std::string_view cell =
          comma == std::string_view::npos ? rest : rest.substr(0, comma);
      row.push_back(parse_cell(cell, path, lineno, col));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    require(row.size() >= 2, path.string(), ": row ", lineno,
            ": need at least 2 columns (features then response), got ",
            row.size());
    if (ncols == 0) {
      ncols = row.size();
    } else {
      require(row.size() == ncols, path.string(), ": row ", lineno, " has ",
              row.size(), " columns, expected ", ncols);
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), path.string(), ": empty file");

  SiteData data;
  data.site_id = site_id;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(ncols - 1);
  data.X.resize(n, p);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j)
      data.X(i, j) = rows[static_cast<std::size_t>(i)]
                         [static_cast<std::size_t>(j)];
    data.y(i) = rows[static_cast<std::size_t>(i)][ncols - 1];
  }
  return data;
}

void write_site_csv(const std::filesystem::path& path, const SiteData& data) {
  require(data.X.rows() == data.y.size(),
          "site data: X and y row counts disagree");
  std::string text;
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) {
      text += format_double(data.X(i, j));
      text += ',';
    }
    text += format_double(data.y(i));
    text += '\n';
  }
  write_text_file(path, text);
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(out.good(), "write failed for ", path.string());
}

}  // namespace cedar
