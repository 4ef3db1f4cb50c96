#include "rmoe/lipschitz.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rmoe/rng.hpp"

namespace rmoe {

namespace {

constexpr std::uint64_t kStartVectorSeed = 0x5eedf00dull;

}  // namespace

double spectral_norm(const Tensor& W, int max_iters, double tol) {
  if (W.rank() != 2) throw std::invalid_argument("spectral_norm: rank 2 only");
  if (max_iters < 1 || !(tol > 0.0))
    throw std::invalid_argument("spectral_norm: bad iteration parameters");
  const std::size_t m = W.rows(), n = W.cols();
  const auto w = W.values();

  Rng rng(derive_seed(kStartVectorSeed, "power-iteration", m * 1315423911ull + n));
  std::vector<double> v = rng.uniform_vector(n, -1.0, 1.0);
  std::vector<double> wv(m), wtwv(n);

  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    // wv = W v
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * v[j];
      wv[i] = acc;
    }
    double norm_wv = 0.0;
    for (double x : wv) norm_wv += x * x;
    norm_wv = std::sqrt(norm_wv);
    double norm_v = 0.0;
    for (double x : v) norm_v += x * x;
    norm_v = std::sqrt(norm_v);
    if (norm_wv == 0.0 || norm_v == 0.0) return 0.0;  // zero matrix or dead start
    const double next = norm_wv / norm_v;
    const bool converged = it > 0 && std::abs(next - sigma) <= tol * next;
    sigma = next;
    if (converged) break;
    // v = normalize(W^T wv)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += w[i * n + j] * wv[i];
      wtwv[j] = acc;
    }
    double norm2 = 0.0;
    for (double x : wtwv) norm2 += x * x;
    norm2 = std::sqrt(norm2);
    if (norm2 == 0.0) return sigma;
    for (std::size_t j = 0; j < n; ++j) v[j] = wtwv[j] / norm2;
  }
  return sigma;
}

double mlp_lipschitz_upper(const Mlp& m, LipNorm norm) {
  if (norm != LipNorm::kL2)
    throw std::invalid_argument("mlp_lipschitz_upper: unsupported norm");
  validate_mlp(m);
  double bound = 1.0;
  for (const auto& layer : m.layers) bound *= spectral_norm(layer.W);
  return bound * 0.5;  // softmax head
}

}  // namespace rmoe
