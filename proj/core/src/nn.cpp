#include "rmoe/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"

namespace rmoe {

void validate_linear(const LinearLayer& l) {
  if (!l.W.defined() || !l.b.defined())
    throw std::invalid_argument("linear: undefined parameters");
  if (l.W.rank() != 2 || l.b.rank() != 1)
    throw std::invalid_argument("linear: W must be rank 2, b rank 1");
  if (l.W.rows() != l.b.size())
    throw std::invalid_argument("linear: bias length != output dim");
}

void validate_mlp(const Mlp& m) {
  if (m.layers.empty()) throw std::invalid_argument("mlp: no layers");
  for (const auto& l : m.layers) validate_linear(l);
  for (std::size_t i = 1; i < m.layers.size(); ++i)
    if (m.layers[i].in_dim() != m.layers[i - 1].out_dim())
      throw std::invalid_argument("mlp: layer dimensions do not chain");
}

LinearLayer make_linear(std::size_t out_dim, std::size_t in_dim,
                        std::uint64_t seed) {
  if (out_dim == 0 || in_dim == 0)
    throw std::invalid_argument("make_linear: zero dimension");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  LinearLayer l;
  l.W = Tensor::constant({out_dim, in_dim},
                         rng.uniform_vector(out_dim * in_dim, -bound, bound));
  l.b = Tensor::constant({out_dim},
                         rng.uniform_vector(out_dim, -bound, bound));
  return l;
}

Mlp make_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need >= 2 dims");
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    m.layers.push_back(
        make_linear(dims[i + 1], dims[i], derive_seed(seed, "init", i)));
  return m;
}

Tensor linear_forward(const LinearLayer& l, const Tensor& x) {
  validate_linear(l);
  const bool vec = x.rank() == 1;
  Tensor xm = vec ? reshape(x, {1, x.size()}) : x;
  if (xm.cols() != l.in_dim())
    throw std::invalid_argument("linear_forward: input width mismatch");
  Tensor y = add_bias(matmul(xm, transpose(l.W)), l.b);
  return vec ? reshape(y, {l.out_dim()}) : y;
}

Tensor mlp_logits(const Mlp& m, const Tensor& x) {
  validate_mlp(m);
  Tensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = linear_forward(m.layers[i], h);
    if (i + 1 < m.layers.size()) h = relu(h);
  }
  return h;
}

Tensor mlp_forward(const Mlp& m, const Tensor& x) {
  return softmax_lastdim(mlp_logits(m, x));
}

}  // namespace rmoe
