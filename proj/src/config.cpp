#include "ltm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ltm {

namespace {

enum class Kind { integer, real, text, boolean, int_list, text_list };

struct Field {
  const char* key;
  Kind kind;
  const char* default_value;
};

// Defaults follow the reference training and sampling setup.
const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"run.seed", Kind::integer, "0"},
      {"lattice.L", Kind::integer, "8"},
      {"lattice.D", Kind::integer, "2"},
      {"action.m0_sq", Kind::real, "-4"},
      {"action.lambda0", Kind::real, "8"},
      {"map.ordering", Kind::text, "checkerboard"},
      {"map.neighborhood", Kind::integer, "1"},
      {"map.mode", Kind::text, "sparse"},
      {"map.quadrature", Kind::integer, "15"},
      {"map.hidden", Kind::int_list, "64,64,64"},
      {"map.init_scale", Kind::real, "0.01"},
      {"train.epochs", Kind::integer, "3000"},
      {"train.batch_size", Kind::integer, "256"},
      {"train.lr", Kind::real, "0.001"},
      {"train.lr_min", Kind::real, "1e-06"},
      {"train.weight_decay", Kind::real, "1e-05"},
      {"train.beta1", Kind::real, "0.9"},
      {"train.beta2", Kind::real, "0.999"},
      {"train.eps", Kind::real, "1e-08"},
      {"train.clip_norm", Kind::real, "10"},
      {"train.ess_every", Kind::integer, "50"},
      {"train.ess_batch", Kind::integer, "1024"},
      {"train.checkpoint_every", Kind::integer, "100"},
      {"train.chunk", Kind::integer, "32"},
      {"hmc.leapfrog_steps", Kind::integer, "10"},
      {"hmc.step_size", Kind::real, "0.1"},
      {"hmc.target_acceptance", Kind::real, "0.7"},
      {"hmc.burn_in", Kind::integer, "2000"},
      {"hmc.chain_length", Kind::integer, "20000"},
      {"imh.scale", Kind::real, "1"},
      {"imh.scale_min", Kind::real, "1"},
      {"imh.scale_max", Kind::real, "4"},
      {"imh.target_acceptance", Kind::real, "0.5"},
      {"imh.burn_in", Kind::integer, "2000"},
      {"imh.chain_length", Kind::integer, "20000"},
      {"imh.min_acceptance", Kind::real, "0.01"},
      {"sweep.orderings", Kind::text_list, "lexicographic,checkerboard,maxmin"},
      {"sweep.orders", Kind::int_list, "1,2,3"},
      {"compare.sizes", Kind::int_list, "200,500,1000,2000,5000,10000,20000"},
      {"compare.resamples", Kind::integer, "500"},
      {"fillin.orderings", Kind::text_list, "lexicographic,checkerboard,maxmin"},
      {"fillin.sizes", Kind::int_list, "4,8,12,16"},
  };
  return fields;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : schema()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_int(const std::string& s, long long& out) {
  const auto t = trim(s);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
  return r.ec == std::errc() && r.ptr == t.data() + t.size() && !t.empty();
}

bool parse_real(const std::string& s, double& out) {
  const auto t = trim(s);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
  return r.ec == std::errc() && r.ptr == t.data() + t.size() && !t.empty();
}

// Returns an empty string when `value` fits `kind`, otherwise the reason.
std::string check_value(Kind kind, const std::string& value) {
  long long i = 0;
  double d = 0.0;
  switch (kind) {
    case Kind::integer:
      return parse_int(value, i) ? "" : "expected an integer";
    case Kind::real:
      return parse_real(value, d) ? "" : "expected a number";
    case Kind::boolean:
      return value == "true" || value == "false" ? "" : "expected true or false";
    case Kind::text:
      return value.empty() ? "expected a non-empty string" : "";
    case Kind::int_list:
      for (const auto& item : split_list(value)) {
        if (!parse_int(item, i)) return "expected a comma-separated list of integers";
      }
      return "";
    case Kind::text_list:
      return "";
  }
  return "";
}

}  // namespace

RunConfig::RunConfig() {
  for (const Field& f : schema()) values_[f.key] = f.default_value;
}

void RunConfig::apply_smoke() {
  const std::pair<const char*, const char*> smoke[] = {
      {"lattice.L", "4"},         {"train.epochs", "200"},     {"train.ess_batch", "256"},
      {"hmc.chain_length", "2000"}, {"hmc.burn_in", "200"},    {"imh.chain_length", "2000"},
      {"imh.burn_in", "200"},      {"compare.sizes", "200,500,1000"}, {"fillin.sizes", "4,6,8"},
  };
  for (const auto& [k, v] : smoke) set(k, v, "smoke profile");
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& source) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError(source + ": unknown key '" + key + "'");
  const std::string why = check_value(f->kind, value);
  if (!why.empty()) throw ConfigError(source + ": key '" + key + "': " + why + ", got '" + value + "'");
  values_[key] = value;
  explicit_[key] = true;
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  merge_stream(in, path);
}

void RunConfig::merge_stream(std::istream& in, const std::string& source) {
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside any section");
      key = section + "." + key;
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    } else if (!value.empty() && (value.front() == '"' || value.back() == '"')) {
      throw ConfigError(where + ": unbalanced quotes");
    }
    set(key, value, where);
  }
}

bool RunConfig::is_set(const std::string& key) const { return explicit_.count(key) > 0; }

void RunConfig::require(const std::string& key) const {
  if (!is_set(key)) throw ConfigError("missing required key '" + key + "'");
}

std::string RunConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  if (!parse_int(get_string(key), v)) throw ConfigError("key '" + key + "' is not an integer");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_real(get_string(key), v)) throw ConfigError("key '" + key + "' is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const { return get_string(key) == "true"; }

std::vector<std::string> RunConfig::get_string_list(const std::string& key) const {
  return split_list(get_string(key));
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(get_string(key))) {
    long long v = 0;
    if (!parse_int(item, v)) throw ConfigError("key '" + key + "' is not a list of integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void RunConfig::write(std::ostream& out) const {
  std::string section;
  for (const Field& f : schema()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    const std::string& v = values_.at(key);
    const bool quote = f.kind == Kind::text || f.kind == Kind::text_list || f.kind == Kind::int_list;
    out << key.substr(dot + 1) << " = " << (quote ? "\"" + v + "\"" : v) << '\n';
  }
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  const long long l = get_int("lattice.L");
  const long long d = get_int("lattice.D");
  if (l < 2) fail("key 'lattice.L' must be >= 2");
  if (d != 2) fail("key 'lattice.D' must be 2");
  const std::string ord = get_string("map.ordering");
  if (ord != "lexicographic" && ord != "checkerboard" && ord != "maxmin") {
    fail("key 'map.ordering': unknown ordering '" + ord + "'");
  }
  if (ord == "checkerboard" && l % 2 != 0) fail("key 'lattice.L' must be even for checkerboard ordering");
  const long long nb = get_int("map.neighborhood");
  if (nb < 1 || nb > 3) fail("key 'map.neighborhood' must be 1, 2 or 3");
  const std::string mode = get_string("map.mode");
  if (mode != "sparse" && mode != "dense") fail("key 'map.mode' must be sparse or dense");
  if (get_int("map.quadrature") < 1) fail("key 'map.quadrature' must be >= 1");
  for (int h : get_int_list("map.hidden")) {
    if (h < 1) fail("key 'map.hidden' entries must be >= 1");
  }
  if (get_double("action.lambda0") < 0.0) fail("key 'action.lambda0' must be >= 0");
  if (get_int("train.epochs") < 0) fail("key 'train.epochs' must be >= 0");
  if (get_int("train.batch_size") < 1) fail("key 'train.batch_size' must be >= 1");
  if (get_int("compare.resamples") < 1) fail("key 'compare.resamples' must be >= 1");
  for (const auto& name : get_string_list("sweep.orderings")) {
    if (name != "lexicographic" && name != "checkerboard" && name != "maxmin") {
      fail("key 'sweep.orderings': unknown ordering '" + name + "'");
    }
  }
  for (int o : get_int_list("sweep.orders")) {
    if (o < 1 || o > 3) fail("key 'sweep.orders' entries must be 1, 2 or 3");
  }
  try {
    train_config().validate();
    hmc_config().validate();
    imh_config().validate();
    couplings().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

LatticeGeometry RunConfig::geometry() const {
  return LatticeGeometry(static_cast<int>(get_int("lattice.L")), static_cast<int>(get_int("lattice.D")));
}

PhiFourParams RunConfig::couplings() const {
  return PhiFourParams{get_double("action.m0_sq"), get_double("action.lambda0")};
}

MapSpec RunConfig::map_spec(const std::string& ordering, int neighborhood) const {
  MapSpec spec;
  spec.extent = static_cast<int>(get_int("lattice.L"));
  spec.dim = static_cast<int>(get_int("lattice.D"));
  spec.ordering = ordering;
  spec.neighborhood = neighborhood;
  spec.mode = map_mode_from_string(get_string("map.mode"));
  spec.quadrature = static_cast<int>(get_int("map.quadrature"));
  spec.hidden = get_int_list("map.hidden");
  return spec;
}

MapSpec RunConfig::map_spec() const {
  return map_spec(get_string("map.ordering"), static_cast<int>(get_int("map.neighborhood")));
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.epochs = static_cast<int>(get_int("train.epochs"));
  c.batch_size = static_cast<int>(get_int("train.batch_size"));
  c.optimizer.beta1 = get_double("train.beta1");
  c.optimizer.beta2 = get_double("train.beta2");
  c.optimizer.eps = get_double("train.eps");
  c.optimizer.weight_decay = get_double("train.weight_decay");
  c.lr_initial = get_double("train.lr");
  c.lr_min = get_double("train.lr_min");
  c.clip_norm = get_double("train.clip_norm");
  c.seed = seed();
  c.ess_every = static_cast<int>(get_int("train.ess_every"));
  c.ess_batch = static_cast<int>(get_int("train.ess_batch"));
  c.checkpoint_every = static_cast<int>(get_int("train.checkpoint_every"));
  c.chunk = static_cast<int>(get_int("train.chunk"));
  return c;
}

HmcConfig RunConfig::hmc_config() const {
  HmcConfig c;
  c.leapfrog_steps = static_cast<int>(get_int("hmc.leapfrog_steps"));
  c.step_size = get_double("hmc.step_size");
  c.target_acceptance = get_double("hmc.target_acceptance");
  c.burn_in = static_cast<int>(get_int("hmc.burn_in"));
  c.chain_length = static_cast<int>(get_int("hmc.chain_length"));
  c.seed = seed();
  return c;
}

ImhConfig RunConfig::imh_config() const {
  ImhConfig c;
  c.scale = get_double("imh.scale");
  c.scale_min = get_double("imh.scale_min");
  c.scale_max = get_double("imh.scale_max");
  c.target_acceptance = get_double("imh.target_acceptance");
  c.burn_in = static_cast<int>(get_int("imh.burn_in"));
  c.chain_length = static_cast<int>(get_int("imh.chain_length"));
  c.min_acceptance = get_double("imh.min_acceptance");
  c.seed = seed();
  return c;
}

std::uint64_t RunConfig::seed() const {
  const long long s = get_int("run.seed");
  if (s < 0) throw ConfigError("key 'run.seed' must be non-negative");
  return static_cast<std::uint64_t>(s);
}

}  // namespace ltm
