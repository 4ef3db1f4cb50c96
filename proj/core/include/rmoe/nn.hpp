#pragma once

#include <cstdint>
#include <vector>

#include "rmoe/tensor.hpp"

namespace rmoe {

// Fully connected layer, y = x W^T + b. W is {out,in}, b is {out}.
struct LinearLayer {
  Tensor W;
  Tensor b;

  std::size_t in_dim() const { return W.cols(); }
  std::size_t out_dim() const { return W.rows(); }
};

// MLP with ReLU between layers and a softmax head after the last layer.
// Output rows are probability vectors.
struct Mlp {
  std::vector<LinearLayer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

void validate_linear(const LinearLayer& l);
void validate_mlp(const Mlp& m);

// Uniform +-1/sqrt(fan_in) initialization, seeded.
LinearLayer make_linear(std::size_t out_dim, std::size_t in_dim,
                        std::uint64_t seed);
// dims = {in, hidden..., out}; at least {in, out}.
Mlp make_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed);

// x is {n,in} or {in}; output matches ({n,out} or {out}).
Tensor linear_forward(const LinearLayer& l, const Tensor& x);
Tensor mlp_forward(const Mlp& m, const Tensor& x);      // probabilities
Tensor mlp_logits(const Mlp& m, const Tensor& x);       // pre-softmax

// Parameter traversal in a fixed order (layer by layer, W then b); the order
// defines the SGD update order and the serialization layout.
template <typename Fn>
void for_each_param(Mlp& m, Fn&& fn) {
  for (auto& layer : m.layers) {
    fn(layer.W);
    fn(layer.b);
  }
}

}  // namespace rmoe
