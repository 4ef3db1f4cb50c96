#include "rmoe/serialize.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rmoe {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kMagic = "robustmoe-model";

void write_values(std::ostream& out, std::span<const double> v,
                  std::size_t per_line) {
  char buf[40];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%a", v[i]);
    out << buf << (((i + 1) % per_line == 0 || i + 1 == v.size()) ? '\n' : ' ');
  }
}

void write_linear(std::ostream& out, const LinearLayer& l) {
  out << "layer " << l.out_dim() << ' ' << l.in_dim() << '\n';
  write_values(out, l.W.values(), l.in_dim());
  out << "bias\n";
  write_values(out, l.b.values(), l.out_dim());
}

void write_mlp(std::ostream& out, const Mlp& m) {
  out << "mlp " << m.layers.size() << '\n';
  for (const auto& l : m.layers) write_linear(out, l);
}

void write_moe(std::ostream& out, const MoEModel& m) {
  if (m.routing.is_dense())
    out << "routing dense\n";
  else
    out << "routing topk " << m.routing.k << '\n';
  out << "experts " << m.experts.size() << '\n';
  out << "router\n";
  write_linear(out, m.router);
  for (const auto& e : m.experts) write_mlp(out, e);
}

// Whitespace-token reader with positional error messages.
class TokenReader {
 public:
  TokenReader(const std::string& path, std::istream& in)
      : path_(path), in_(in) {}

  std::string next(const char* what) {
    std::string tok;
    if (!(in_ >> tok))
      fail(std::string("unexpected end of file, expected ") + what);
    return tok;
  }

  void expect(const char* literal) {
    const std::string tok = next(literal);
    if (tok != literal)
      fail(std::string("expected '") + literal + "', got '" + tok + "'");
  }

  std::size_t count(const char* what) {
    const std::string tok = next(what);
    char* end = nullptr;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || v < 0)
      fail(std::string("bad ") + what + " '" + tok + "'");
    return static_cast<std::size_t>(v);
  }

  double real(const char* what) {
    const std::string tok = next(what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size())
      fail(std::string("bad ") + what + " '" + tok + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(path_ + ": " + msg);
  }

 private:
  const std::string path_;
  std::istream& in_;
};

std::vector<double> read_values(TokenReader& r, std::size_t n) {
  std::vector<double> v;
  v.reserve(n);
  for (std::size_t i = 0; i < n; ++i) v.push_back(r.real("parameter value"));
  return v;
}

LinearLayer read_linear(TokenReader& r) {
  r.expect("layer");
  const std::size_t rows = r.count("layer rows");
  const std::size_t cols = r.count("layer cols");
  LinearLayer l;
  l.W = Tensor::constant({rows, cols}, read_values(r, rows * cols));
  r.expect("bias");
  l.b = Tensor::constant({rows}, read_values(r, rows));
  return l;
}

Mlp read_mlp(TokenReader& r) {
  r.expect("mlp");
  const std::size_t n = r.count("layer count");
  if (n == 0) r.fail("mlp needs at least one layer");
  Mlp m;
  m.layers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) m.layers.push_back(read_linear(r));
  validate_mlp(m);
  return m;
}

MoEModel read_moe(TokenReader& r) {
  MoEModel m;
  r.expect("routing");
  const std::string mode = r.next("routing mode");
  if (mode == "dense") {
    m.routing = Routing::dense();
  } else if (mode == "topk") {
    m.routing = Routing::top_k(static_cast<int>(r.count("top-k value")));
  } else {
    r.fail("unknown routing mode '" + mode + "'");
  }
  r.expect("experts");
  const std::size_t e = r.count("expert count");
  r.expect("router");
  m.router = read_linear(r);
  m.experts.reserve(e);
  for (std::size_t i = 0; i < e; ++i) m.experts.push_back(read_mlp(r));
  validate_moe(m);
  return m;
}

// Returns the reader positioned after the "kind" value.
ModelKind read_header(TokenReader& r) {
  r.expect(kMagic);
  const std::size_t version = r.count("format version");
  if (version != static_cast<std::size_t>(kFormatVersion)) {
    std::ostringstream msg;
    msg << "unsupported model format version " << version << " (this build reads version "
        << kFormatVersion << ")";
    r.fail(msg.str());
  }
  r.expect("kind");
  const std::string kind = r.next("model kind");
  if (kind == "moe") return ModelKind::kMoe;
  if (kind == "dual") return ModelKind::kDual;
  r.fail("unknown model kind '" + kind + "'");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot write");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot read");
  return in;
}

}  // namespace

void save_model(const std::string& path, const MoEModel& m) {
  validate_moe(m);
  std::ofstream out = open_out(path);
  out << kMagic << ' ' << kFormatVersion << "\nkind moe\n";
  write_moe(out, m);
  if (!out) throw std::runtime_error(path + ": write failed");
}

void save_model(const std::string& path, const DualModel& dm) {
  validate_moe(dm.standard);
  validate_moe(dm.robust);
  std::ofstream out = open_out(path);
  out << kMagic << ' ' << kFormatVersion << "\nkind dual\nalpha ";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", dm.alpha);
  out << buf << "\nstandard\n";
  write_moe(out, dm.standard);
  out << "robust\n";
  write_moe(out, dm.robust);
  if (!out) throw std::runtime_error(path + ": write failed");
}

ModelKind peek_model_kind(const std::string& path) {
  std::ifstream in = open_in(path);
  TokenReader r(path, in);
  return read_header(r);
}

MoEModel load_moe(const std::string& path) {
  std::ifstream in = open_in(path);
  TokenReader r(path, in);
  if (read_header(r) != ModelKind::kMoe)
    r.fail("file holds a dual model; load it with load_dual");
  return read_moe(r);
}

DualModel load_dual(const std::string& path) {
  std::ifstream in = open_in(path);
  TokenReader r(path, in);
  if (read_header(r) != ModelKind::kDual)
    r.fail("file holds a plain model; load it with load_moe");
  DualModel dm;
  r.expect("alpha");
  dm.alpha = r.real("alpha");
  r.expect("standard");
  dm.standard = read_moe(r);
  r.expect("robust");
  dm.robust = read_moe(r);
  validate_dual(dm);
  return dm;
}

}  // namespace rmoe
