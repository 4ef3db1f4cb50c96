#include "rmoe/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rmoe/rng.hpp"

namespace rmoe {

namespace {

using VT = RunConfig::ValueType;

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool parse_ll(const std::string& s, long long& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return errno == 0 && end == s.c_str() + s.size();
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-') return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtoull(s.c_str(), &end, 10);
  return errno == 0 && end == s.c_str() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size();
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no") {
    out = false;
    return true;
  }
  return false;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  throw std::invalid_argument("config: key '" + key + "' has value '" + value +
                              "', expected " + want);
}

void check_typed(const RunConfig::KeySpec& spec, const std::string& value) {
  switch (spec.type) {
    case VT::kString:
      if (spec.key == "attack.clamp") parse_clamp(value);  // throws if bad
      return;
    case VT::kInt: {
      long long v;
      if (!parse_ll(value, v)) bad_value(spec.key, value, "an integer");
      return;
    }
    case VT::kDouble: {
      double v;
      if (!parse_double(value, v)) bad_value(spec.key, value, "a number");
      return;
    }
    case VT::kBool: {
      bool v;
      if (!parse_bool(value, v)) bad_value(spec.key, value, "true or false");
      return;
    }
    case VT::kU64: {
      std::uint64_t v;
      if (!parse_u64(value, v))
        bad_value(spec.key, value, "a non-negative integer");
      return;
    }
    case VT::kChoice: {
      for (const auto& c : spec.choices)
        if (c == value) return;
      std::string want = "one of {";
      for (std::size_t i = 0; i < spec.choices.size(); ++i)
        want += (i ? ", " : "") + spec.choices[i];
      bad_value(spec.key, value, want + "}");
    }
  }
}

std::string env_name(const std::string& key) {
  std::string name = "RMOE_";
  for (char c : key)
    name += c == '.' ? '_'
                     : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

}  // namespace

const std::vector<RunConfig::KeySpec>& RunConfig::registry() {
  static const std::vector<KeySpec> kKeys = {
      {"seed", VT::kU64, "0", {}, "root seed for every random stream"},
      {"out", VT::kString, "runs", {}, "parent directory for run outputs"},
      {"dataset.kind", VT::kChoice, "two_moons",
       {"two_moons", "blobs", "rings"}, "synthetic dataset family"},
      {"dataset.n", VT::kInt, "2000", {}, "total points before the split"},
      {"dataset.noise", VT::kDouble, "0.1", {}, "gaussian feature noise"},
      {"dataset.train_fraction", VT::kDouble, "0.5", {},
       "fraction of points in the train split"},
      {"data.train", VT::kString, "", {},
       "CSV to use as the train split instead of generating"},
      {"data.test", VT::kString, "", {}, "CSV test split, ditto"},
      {"model.experts", VT::kInt, "4", {}, "expert count E"},
      {"model.hidden", VT::kInt, "16", {}, "hidden width of each expert"},
      {"model.hidden_layers", VT::kInt, "1", {}, "hidden layers per expert"},
      {"model.routing", VT::kChoice, "topk", {"topk", "dense"}, "routing policy"},
      {"model.topk", VT::kInt, "1", {}, "k when model.routing = topk"},
      {"train.method", VT::kChoice, "standard",
       {"standard", "adversarial", "trades", "expert_robust"},
       "training objective"},
      {"train.beta", VT::kDouble, "1.0", {}, "weight of the KL term"},
      {"train.epochs", VT::kInt, "10", {}, ""},
      {"train.batch_size", VT::kInt, "128", {}, ""},
      {"train.lr.kind", VT::kChoice, "cyclic", {"constant", "cyclic"}, ""},
      {"train.lr.base", VT::kDouble, "0.01", {}, ""},
      {"train.lr.peak", VT::kDouble, "0.1", {}, ""},
      {"train.lr.period", VT::kInt, "200", {}, "steps per triangle"},
      {"train.kl_variant", VT::kChoice, "second_top",
       {"second_top", "all_experts"}, "expert consistency term"},
      {"attack.epsilon", VT::kDouble, "0.2", {}, "l-inf budget"},
      {"attack.steps", VT::kInt, "10", {}, "PGD iterations (training)"},
      {"attack.step_size", VT::kDouble, "0", {}, "0 means epsilon/4"},
      {"attack.restarts", VT::kInt, "1", {}, "PGD restarts (training)"},
      {"attack.view", VT::kChoice, "full", {"full", "router", "expert", "smooth"},
       "which component sees the perturbed input"},
      {"attack.clamp", VT::kString, "", {}, "input box as lo:hi, empty for none"},
      {"eval.steps", VT::kInt, "50", {}, "PGD iterations (evaluation)"},
      {"eval.restarts", VT::kInt, "5", {}, "PGD restarts (evaluation)"},
      {"dual.alpha", VT::kDouble, "0.7", {}, "robust sub-model weight"},
      {"certify.densify", VT::kBool, "false", {},
       "convert top-k models to dense routing before certifying"},
      {"certify.soundness_trials", VT::kInt, "0", {},
       "random probes per certified example, 0 disables the check"},
      {"io.model", VT::kString, "", {}, "model file read by a subcommand"},
      {"io.model_b", VT::kString, "", {}, "second model for comparisons"},
      {"io.standard", VT::kString, "", {}, "standard sub-model file"},
      {"io.robust", VT::kString, "", {}, "robust sub-model file"},
  };
  return kKeys;
}

const RunConfig::KeySpec& RunConfig::spec_for(const std::string& key) {
  for (const auto& s : registry())
    if (s.key == key) return s;
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (cfg.values_.count(key))
        throw std::invalid_argument("config: duplicate key '" + key + "'");
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " +
                                  e.what());
    }
  }
  return cfg;
}

void RunConfig::apply_env() {
  for (const auto& spec : registry()) {
    const char* v = std::getenv(env_name(spec.key).c_str());
    if (v != nullptr) set(spec.key, v);
  }
}

void RunConfig::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const std::size_t eq = o.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: override '" + o +
                                  "' is not key=value");
    set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec& spec = spec_for(key);  // throws on unknown keys
  check_typed(spec, value);
  values_[key] = value;
}

bool RunConfig::is_set(const std::string& key) const {
  spec_for(key);
  return values_.count(key) != 0;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  return spec_for(key).def;
}

std::string RunConfig::get_string(const std::string& key) const {
  return get(key);
}

long long RunConfig::get_int(const std::string& key) const {
  long long v;
  if (!parse_ll(get(key), v)) bad_value(key, get(key), "an integer");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v;
  if (!parse_double(get(key), v)) bad_value(key, get(key), "a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v;
  if (!parse_bool(get(key), v)) bad_value(key, get(key), "true or false");
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t v;
  if (!parse_u64(get(key), v)) bad_value(key, get(key), "a non-negative integer");
  return v;
}

void RunConfig::validate() const {
  for (const auto& spec : registry()) check_typed(spec, get(spec.key));
}

std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  for (const auto& spec : registry()) {
    if (spec.key == "seed" || spec.key == "out") continue;
    out << spec.key << " = " << get(spec.key) << '\n';
  }
  return out.str();
}

std::string RunConfig::hash_hex() const {
  const std::uint64_t h = fnv1a64(canonical_text());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::optional<std::pair<double, double>> parse_clamp(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const std::size_t colon = s.find(':');
  double lo = 0.0, hi = 0.0;
  if (colon == std::string::npos || !parse_double(trim(s.substr(0, colon)), lo) ||
      !parse_double(trim(s.substr(colon + 1)), hi) || !(lo <= hi))
    throw std::invalid_argument(
        "config: clamp must be lo:hi with lo <= hi, got '" + s + "'");
  return std::make_pair(lo, hi);
}

}  // namespace rmoe
