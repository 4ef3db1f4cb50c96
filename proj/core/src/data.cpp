#include "rmoe/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rmoe/rng.hpp"

namespace rmoe {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void cell_error(const std::string& path, std::size_t row,
                             std::size_t col, const std::string& what) {
  std::ostringstream os;
  os << path << ": row " << row << ", column " << col << ": " << what;
  throw std::runtime_error(os.str());
}

}  // namespace

void validate_dataset(const Dataset& ds) {
  if (ds.n == 0) throw std::invalid_argument("dataset: empty");
  if (ds.d == 0) throw std::invalid_argument("dataset: zero feature width");
  if (ds.classes < 2) throw std::invalid_argument("dataset: need >= 2 classes");
  if (ds.X.size() != ds.n * ds.d || ds.y.size() != ds.n)
    throw std::invalid_argument("dataset: storage size mismatch");
  for (double v : ds.X)
    if (!std::isfinite(v))
      throw std::invalid_argument("dataset: non-finite feature");
  for (int label : ds.y)
    if (label < 0 || label >= ds.classes)
      throw std::invalid_argument("dataset: label out of range");
}

DataKind data_kind_from_string(const std::string& s) {
  if (s == "two_moons") return DataKind::kTwoMoons;
  if (s == "blobs") return DataKind::kBlobs;
  if (s == "rings") return DataKind::kRings;
  throw std::invalid_argument("unknown dataset kind: " + s);
}

std::string to_string(DataKind k) {
  switch (k) {
    case DataKind::kTwoMoons: return "two_moons";
    case DataKind::kBlobs: return "blobs";
    case DataKind::kRings: return "rings";
  }
  throw std::invalid_argument("unknown dataset kind");
}

Dataset gen_dataset(DataKind kind, std::size_t n, double noise,
                    std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_dataset: n must be >= 1");
  if (noise < 0.0) throw std::invalid_argument("gen_dataset: negative noise");
  Dataset ds;
  ds.n = n;
  ds.d = 2;
  ds.classes = 2;
  ds.X.resize(n * 2);
  ds.y.resize(n);

  Rng rng(derive_seed(seed, "data"));

  // Blob centers are drawn once per dataset so noise=0 collapses each class
  // onto a single point.
  double cx[2] = {0, 0}, cy[2] = {0, 0};
  if (kind == DataKind::kBlobs) {
    cx[0] = rng.next_uniform(-3.0, -1.0);
    cy[0] = rng.next_uniform(-1.0, 1.0);
    cx[1] = rng.next_uniform(1.0, 3.0);
    cy[1] = rng.next_uniform(-1.0, 1.0);
  }

  // Alternate classes so any prefix is balanced to within one example.
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    double px = 0.0, py = 0.0;
    const double t = rng.next_unit() * std::numbers::pi;
    switch (kind) {
      case DataKind::kTwoMoons:
        if (cls == 0) {
          px = std::cos(t);
          py = std::sin(t);
        } else {
          px = 1.0 - std::cos(t);
          py = 0.5 - std::sin(t);
        }
        break;
      case DataKind::kBlobs:
        px = cx[cls];
        py = cy[cls];
        break;
      case DataKind::kRings: {
        const double angle = 2.0 * t;  // full circle
        const double radius = cls == 0 ? 1.0 : 2.0;
        px = radius * std::cos(angle);
        py = radius * std::sin(angle);
        break;
      }
    }
    if (noise > 0.0) {
      px += noise * rng.next_gaussian();
      py += noise * rng.next_gaussian();
    }
    ds.X[i * 2 + 0] = px;
    ds.X[i * 2 + 1] = py;
    ds.y[i] = cls;
  }
  validate_dataset(ds);
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");

  // Header must be f0,...,f{d-1},label.
  std::vector<std::string> headers;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) headers.push_back(cell);
  }
  if (headers.empty() || headers.back() != "label")
    throw std::runtime_error(path + ": last header column must be 'label'");
  const std::size_t d = headers.size() - 1;
  if (d == 0) throw std::runtime_error(path + ": no feature columns");
  for (std::size_t j = 0; j < d; ++j)
    if (headers[j] != "f" + std::to_string(j))
      throw std::runtime_error(path + ": header column " + std::to_string(j) +
                               " must be f" + std::to_string(j));

  Dataset ds;
  ds.d = d;
  int max_label = -1;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    // Rows and columns are both reported 1-based.
    while (std::getline(ss, cell, ',')) {
      if (col > d) cell_error(path, row, col + 1, "too many columns");
      const char* begin = cell.c_str();
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin || *end != '\0')
        cell_error(path, row, col + 1, "not a number: '" + cell + "'");
      if (col < d) {
        ds.X.push_back(v);
      } else {
        const int label = static_cast<int>(v);
        if (static_cast<double>(label) != v || label < 0)
          cell_error(path, row, col + 1,
                     "label must be a non-negative integer");
        ds.y.push_back(label);
        max_label = std::max(max_label, label);
      }
      ++col;
    }
    if (col != d + 1) cell_error(path, row, col + 1, "missing columns");
  }
  ds.n = ds.y.size();
  ds.classes = max_label + 1;
  if (ds.classes < 2) ds.classes = 2;  // single-class files still classify
  validate_dataset(ds);
  return ds;
}

void save_csv(const std::string& path, const Dataset& ds) {
  validate_dataset(ds);
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot write");
  for (std::size_t j = 0; j < ds.d; ++j) out << "f" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.d; ++j)
      out << fmt_double(ds.X[i * ds.d + j]) << ",";
    out << ds.y[i] << "\n";
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

Tensor example_row(const Dataset& ds, std::size_t i) {
  if (i >= ds.n) throw std::invalid_argument("example_row: index out of range");
  return Tensor::constant(
      {ds.d}, std::vector<double>(ds.X.begin() + static_cast<long>(i * ds.d),
                                  ds.X.begin() + static_cast<long>((i + 1) * ds.d)));
}

Tensor batch_matrix(const Dataset& ds, std::span<const int> rows) {
  std::vector<double> v;
  v.reserve(rows.size() * ds.d);
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= ds.n)
      throw std::invalid_argument("batch_matrix: index out of range");
    const std::size_t off = static_cast<std::size_t>(r) * ds.d;
    v.insert(v.end(), ds.X.begin() + static_cast<long>(off),
             ds.X.begin() + static_cast<long>(off + ds.d));
  }
  return Tensor::constant({rows.size(), ds.d}, std::move(v));
}

Tensor full_matrix(const Dataset& ds) {
  return Tensor::constant({ds.n, ds.d}, ds.X);
}

}  // namespace rmoe
