#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmoe/tensor.hpp"

namespace rmoe {

struct Dataset {
  std::size_t n = 0;
  std::size_t d = 0;
  int classes = 0;
  std::vector<double> X;  // row-major n x d
  std::vector<int> y;
  std::string split;      // "train", "test", or empty
};

void validate_dataset(const Dataset& ds);

enum class DataKind { kTwoMoons, kBlobs, kRings };

DataKind data_kind_from_string(const std::string& s);
std::string to_string(DataKind k);

// Two-class 2-d synthetic sets, balanced to within one example and
// deterministic under the seed. kTwoMoons: two interleaved half circles.
// kBlobs: gaussian clouds at two seeded centers (noise 0 puts every point
// exactly on its center). kRings: two concentric circles.
Dataset gen_dataset(DataKind kind, std::size_t n, double noise,
                    std::uint64_t seed);

// CSV with header f0,...,f{d-1},label. Parse failures name the row and
// column. Doubles round-trip exactly (%.17g).
Dataset load_csv(const std::string& path);
void save_csv(const std::string& path, const Dataset& ds);

Tensor example_row(const Dataset& ds, std::size_t i);  // {d} constant
Tensor batch_matrix(const Dataset& ds,
                    std::span<const int> rows);        // {|rows|, d} constant
Tensor full_matrix(const Dataset& ds);                 // {n, d} constant

}  // namespace rmoe
