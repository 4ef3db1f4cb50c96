#include "rmoe/rng.hpp"

#include <cmath>
#include <numbers>

namespace rmoe {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_unit();
}

double Rng::next_gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Reject u1 == 0 so the log stays finite.
  double u1 = 0.0;
  do {
    u1 = next_unit();
  } while (u1 <= 0.0);
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::vector<double> Rng::uniform_vector(std::size_t n, double lo, double hi) {
  std::vector<double> out(n);
  for (auto& v : out) v = next_uniform(lo, hi);
  return out;
}

void Rng::shuffle(std::vector<int>& values) {
  if (values.empty()) return;
  for (std::size_t i = values.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(next_u64() % (i + 1));
    std::swap(values[i], values[j]);
  }
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                          std::uint64_t index) {
  std::uint64_t h = fnv1a64(stream);
  std::uint64_t x = root ^ h;
  std::uint64_t mixed = splitmix64(x);
  x = mixed ^ (index * 0x9e3779b97f4a7c15ull + 1);
  return splitmix64(x);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace rmoe
