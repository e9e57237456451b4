#include "fbsde/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fbsde/errors.hpp"
#include "fbsde/hash.hpp"

namespace fbsde {

std::string to_hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail_at(int line, const std::string& msg) {
  if (line > 0) throw ConfigError("config line " + std::to_string(line) + ": " + msg);
  throw ConfigError("config: " + msg);
}

double parse_double(const ConfigEntry& e, const std::string& section) {
  const std::string t = trim(e.value);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v)) {
    fail_at(e.line, section + "." + e.key + ": expected a finite number, got '" + e.value + "'");
  }
  return v;
}

long long parse_int(const ConfigEntry& e, const std::string& section) {
  const std::string t = trim(e.value);
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size()) {
    fail_at(e.line, section + "." + e.key + ": expected an integer, got '" + e.value + "'");
  }
  return v;
}

std::uint64_t parse_u64(const ConfigEntry& e, const std::string& section) {
  const std::string t = trim(e.value);
  char* end = nullptr;
  const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
  if (t.empty() || t[0] == '-' || end != t.c_str() + t.size()) {
    fail_at(e.line, section + "." + e.key + ": expected a nonnegative integer, got '" + e.value + "'");
  }
  return v;
}

std::vector<double> parse_list(const ConfigEntry& e, const std::string& section) {
  std::vector<double> out;
  std::stringstream ss(e.value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(v)) {
      fail_at(e.line, section + "." + e.key + ": expected comma-separated numbers, got '" + e.value + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) fail_at(e.line, section + "." + e.key + ": empty value");
  return out;
}

std::vector<int> parse_int_list(const ConfigEntry& e, const std::string& section) {
  std::vector<int> out;
  for (double v : parse_list(e, section)) {
    if (v != std::floor(v)) {
      fail_at(e.line, section + "." + e.key + ": expected integers, got '" + e.value + "'");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

// Shortest decimal form that parses back to exactly the same double.
std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt_double(v[i]);
  }
  return s;
}

std::string fmt_vec(const Vec& v) {
  std::vector<double> tmp(v.data(), v.data() + v.size());
  return fmt_list(tmp);
}

// Emits the diagonal when the matrix is diagonal, the full row-major list
// otherwise, so equivalent spellings canonicalize identically.
std::string fmt_square(const Mat& m) {
  const Eigen::Index n = m.rows();
  bool diag = true;
  for (Eigen::Index i = 0; i < n && diag; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && m(i, j) != 0.0) {
        diag = false;
        break;
      }
    }
  }
  std::vector<double> tmp;
  if (diag) {
    for (Eigen::Index i = 0; i < n; ++i) tmp.push_back(m(i, i));
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) tmp.push_back(m(i, j));
    }
  }
  return fmt_list(tmp);
}

// Reads a square matrix given as 1 value (scalar * I), n values (diagonal) or
// n*n values (full row-major).
Mat parse_square(const ConfigEntry& e, const std::string& section, int n) {
  const std::vector<double> v = parse_list(e, section);
  Mat m = Mat::Zero(n, n);
  if (v.size() == 1) {
    m.diagonal().setConstant(v[0]);
  } else if (v.size() == static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) m(i, i) = v[static_cast<std::size_t>(i)];
  } else if (v.size() == static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) m(i, j) = v[static_cast<std::size_t>(i * n + j)];
    }
  } else {
    fail_at(e.line, section + "." + e.key + ": expected 1, " + std::to_string(n) + " or " +
                        std::to_string(n * n) + " values, got " + std::to_string(v.size()));
  }
  return m;
}

Vec parse_vec(const ConfigEntry& e, const std::string& section, int n) {
  const std::vector<double> v = parse_list(e, section);
  Vec out(n);
  if (v.size() == 1) {
    out.setConstant(v[0]);
  } else if (v.size() == static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) out(i) = v[static_cast<std::size_t>(i)];
  } else {
    fail_at(e.line, section + "." + e.key + ": expected 1 or " + std::to_string(n) +
                        " values, got " + std::to_string(v.size()));
  }
  return out;
}

// Per-section key whitelists; [dynamics] depends on the model.
const std::vector<std::string>& section_names() {
  static const std::vector<std::string> s = {"dynamics", "cost", "grid", "network", "training", "eval"};
  return s;
}

std::vector<std::string> allowed_keys(const std::string& section, const std::string& model) {
  if (section == "dynamics") {
    std::vector<std::string> keys = {"model", "sigma", "x0"};
    if (model == "scalar_linear") {
      keys.insert(keys.end(), {"a", "b", "c"});
    } else if (model == "diag_linear") {
      keys.insert(keys.end(), {"dim", "a", "b", "c"});
    } else if (model == "cartpole") {
      keys.insert(keys.end(), {"m_p", "m_c", "l", "sigma_add"});
    } else if (model == "quadcopter") {
      keys.insert(keys.end(), {"m", "ixx", "iyy", "izz", "l", "d", "sigma_add"});
    }
    return keys;
  }
  if (section == "cost") return {"q", "r", "q_t", "eta"};
  if (section == "grid") return {"dt", "T"};
  if (section == "network") return {"hidden", "init", "psi_zeta_std"};
  if (section == "training") {
    return {"iterations", "batch", "lr", "lr_decay_every", "lr_decay_factor", "c1", "c2", "c3",
            "c4", "lambda", "seed", "clip", "checkpoint_every", "max_failed_fraction"};
  }
  if (section == "eval") return {"n_trials", "eval_seed", "mode"};
  return {};
}

class Resolver {
 public:
  explicit Resolver(const ParsedConfig& raw) : raw_(raw) {}

  ExperimentConfig run() {
    check_sections();
    const std::string model_name = require("dynamics", "model").value;
    // Validate the name before the key whitelist, otherwise a typo in the
    // model gets reported as an unknown 'a' or 'm_p' instead.
    if (model_name != "scalar_linear" && model_name != "diag_linear" && model_name != "cartpole" &&
        model_name != "quadcopter") {
      fail_at(require("dynamics", "model").line,
              "unknown model '" + model_name + "' (scalar_linear, diag_linear, cartpole, quadcopter)");
    }
    check_keys(model_name);

    ExperimentConfig cfg;
    build_model(cfg, model_name);
    build_cost(cfg);
    build_grid(cfg);
    build_network(cfg);
    build_training(cfg);
    build_eval(cfg);
    finalize(cfg, model_name);
    return cfg;
  }

 private:
  const ParsedConfig& raw_;

  const ConfigEntry& require(const std::string& section, const std::string& key) {
    const ConfigEntry* e = raw_.find(section, key);
    if (!e) throw ConfigError("config: missing required key " + section + "." + key);
    return *e;
  }

  const ConfigEntry* opt(const std::string& section, const std::string& key) {
    return raw_.find(section, key);
  }

  void check_sections() {
    const auto& known = section_names();
    for (const ConfigSection& s : raw_.sections) {
      if (std::find(known.begin(), known.end(), s.name) == known.end()) {
        const int line = s.entries.empty() ? 0 : s.entries.front().line;
        fail_at(line, "unknown section [" + s.name + "]");
      }
      for (std::size_t i = 0; i < s.entries.size(); ++i) {
        for (std::size_t j = i + 1; j < s.entries.size(); ++j) {
          if (s.entries[i].key == s.entries[j].key) {
            fail_at(s.entries[j].line, "duplicate key '" + s.entries[j].key + "' in [" + s.name + "]");
          }
        }
      }
    }
  }

  void check_keys(const std::string& model_name) {
    for (const ConfigSection& s : raw_.sections) {
      const std::vector<std::string> keys = allowed_keys(s.name, model_name);
      for (const ConfigEntry& e : s.entries) {
        if (std::find(keys.begin(), keys.end(), e.key) == keys.end()) {
          fail_at(e.line, "unknown key '" + e.key + "' in [" + s.name + "]");
        }
      }
    }
  }

  void build_model(ExperimentConfig& cfg, const std::string& name) {
    const double sigma = parse_double(require("dynamics", "sigma"), "dynamics");
    if (name == "scalar_linear") {
      Mat a(1, 1), b(1, 1), c(1, 1);
      a(0, 0) = parse_double(require("dynamics", "a"), "dynamics");
      b(0, 0) = parse_double(require("dynamics", "b"), "dynamics");
      c(0, 0) = parse_double(require("dynamics", "c"), "dynamics");
      const Vec x0 = parse_vec(require("dynamics", "x0"), "dynamics", 1);
      cfg.model = linear_model(a, b, c, sigma, x0);
    } else if (name == "diag_linear") {
      const long long dim = parse_int(require("dynamics", "dim"), "dynamics");
      if (dim < 1 || dim > 4096) {
        fail_at(require("dynamics", "dim").line, "dynamics.dim: out of range");
      }
      const int n = static_cast<int>(dim);
      const double a = parse_double(require("dynamics", "a"), "dynamics");
      const double b = parse_double(require("dynamics", "b"), "dynamics");
      const double c = parse_double(require("dynamics", "c"), "dynamics");
      const Vec x0 = parse_vec(require("dynamics", "x0"), "dynamics", n);
      cfg.model = linear_model(a * Mat::Identity(n, n), b * Mat::Identity(n, n),
                               c * Mat::Identity(n, n), sigma, x0);
    } else if (name == "cartpole") {
      const double m_p = parse_double(require("dynamics", "m_p"), "dynamics");
      const double m_c = parse_double(require("dynamics", "m_c"), "dynamics");
      const double l = parse_double(require("dynamics", "l"), "dynamics");
      const double sigma_add = parse_double(require("dynamics", "sigma_add"), "dynamics");
      const Vec x0 = parse_vec(require("dynamics", "x0"), "dynamics", 4);
      cfg.model = cartpole_model(m_p, m_c, l, sigma, sigma_add, x0);
    } else if (name == "quadcopter") {
      const double m = parse_double(require("dynamics", "m"), "dynamics");
      const double ixx = parse_double(require("dynamics", "ixx"), "dynamics");
      const double iyy = parse_double(require("dynamics", "iyy"), "dynamics");
      const double izz = parse_double(require("dynamics", "izz"), "dynamics");
      const double l = parse_double(require("dynamics", "l"), "dynamics");
      const double d = parse_double(require("dynamics", "d"), "dynamics");
      const double sigma_add = parse_double(require("dynamics", "sigma_add"), "dynamics");
      const Vec x0 = parse_vec(require("dynamics", "x0"), "dynamics", 12);
      cfg.model = quadcopter_model(m, ixx, iyy, izz, l, d, sigma, sigma_add, x0);
    } else {
      fail_at(require("dynamics", "model").line,
              "unknown model '" + name + "' (scalar_linear, diag_linear, cartpole, quadcopter)");
    }
    cfg.model.name = name;
  }

  void build_cost(ExperimentConfig& cfg) {
    const int n_x = cfg.model.n_x;
    const int n_u = cfg.model.n_u;
    cfg.cost.Q = parse_square(require("cost", "q"), "cost", n_x);
    cfg.cost.R = parse_square(require("cost", "r"), "cost", n_u);
    cfg.cost.Q_T = parse_square(require("cost", "q_t"), "cost", n_x);
    const ConfigEntry* eta = opt("cost", "eta");
    cfg.cost.eta = eta ? parse_vec(*eta, "cost", n_x) : Vec(Vec::Zero(n_x));
    cfg.cost.validate(n_x, n_u);
  }

  void build_grid(ExperimentConfig& cfg) {
    const double dt = parse_double(require("grid", "dt"), "grid");
    const double T = parse_double(require("grid", "T"), "grid");
    cfg.grid = TimeGrid::from_horizon(T, dt);
  }

  void build_network(ExperimentConfig& cfg) {
    cfg.network.n_x = cfg.model.n_x;
    cfg.network.hidden = parse_int_list(require("network", "hidden"), "network");
    for (int h : cfg.network.hidden) {
      if (h < 1) fail_at(require("network", "hidden").line, "network.hidden: widths must be >= 1");
    }
    const ConfigEntry* init = opt("network", "init");
    cfg.network.init = init ? trim(init->value) : "xavier";
    if (cfg.network.init != "xavier" && cfg.network.init != "zeros") {
      fail_at(init->line, "network.init: expected 'xavier' or 'zeros'");
    }
    const ConfigEntry* std_e = opt("network", "psi_zeta_std");
    cfg.network.psi_zeta_std = std_e ? parse_double(*std_e, "network") : 0.1;
  }

  void build_training(ExperimentConfig& cfg) {
    TrainingConfig& t = cfg.training;
    if (const ConfigEntry* e = opt("training", "iterations")) {
      t.iterations = static_cast<int>(parse_int(*e, "training"));
    }
    if (const ConfigEntry* e = opt("training", "batch")) t.batch = static_cast<int>(parse_int(*e, "training"));
    if (const ConfigEntry* e = opt("training", "lr")) t.lr = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "lr_decay_every")) {
      t.lr_decay_every = static_cast<int>(parse_int(*e, "training"));
    }
    if (const ConfigEntry* e = opt("training", "lr_decay_factor")) {
      t.lr_decay_factor = parse_double(*e, "training");
    }
    if (const ConfigEntry* e = opt("training", "c1")) t.weights.c1 = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "c2")) t.weights.c2 = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "c3")) t.weights.c3 = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "c4")) t.weights.c4 = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "lambda")) t.weights.lambda = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "seed")) t.seed = parse_u64(*e, "training");
    if (const ConfigEntry* e = opt("training", "clip")) t.clip_norm = parse_double(*e, "training");
    if (const ConfigEntry* e = opt("training", "checkpoint_every")) {
      cfg.checkpoint_every = static_cast<int>(parse_int(*e, "training"));
      if (cfg.checkpoint_every < 0) fail_at(e->line, "training.checkpoint_every: must be >= 0");
    }
    if (const ConfigEntry* e = opt("training", "max_failed_fraction")) {
      t.max_failed_fraction = parse_double(*e, "training");
    }
    if (t.iterations < 1) throw ConfigError("config: training.iterations must be >= 1");
    if (t.batch < 1) throw ConfigError("config: training.batch must be >= 1");
    if (t.lr <= 0) throw ConfigError("config: training.lr must be > 0");
  }

  void build_eval(ExperimentConfig& cfg) {
    if (const ConfigEntry* e = opt("eval", "n_trials")) {
      cfg.eval.n_trials = static_cast<int>(parse_int(*e, "eval"));
      if (cfg.eval.n_trials < 1) fail_at(e->line, "eval.n_trials: must be >= 1");
    }
    if (const ConfigEntry* e = opt("eval", "eval_seed")) cfg.eval.seed = parse_u64(*e, "eval");
    if (const ConfigEntry* e = opt("eval", "mode")) {
      const std::string m = trim(e->value);
      if (m == "second_order") {
        cfg.eval.mode = ControlMode::kSecondOrder;
      } else if (m == "first_order_baseline") {
        cfg.eval.mode = ControlMode::kFirstOrderBaseline;
      } else {
        fail_at(e->line, "eval.mode: expected 'second_order' or 'first_order_baseline'");
      }
    }
  }

  void finalize(ExperimentConfig& cfg, const std::string& name) {
    std::ostringstream core;
    core << "[dynamics]\n";
    core << "model=" << name << "\n";
    core << "sigma=" << fmt_double(cfg.model.sigma) << "\n";
    if (name == "scalar_linear" || name == "diag_linear") {
      if (name == "diag_linear") core << "dim=" << cfg.model.n_x << "\n";
      core << "a=" << fmt_double(cfg.model.lin_A(0, 0)) << "\n";
      core << "b=" << fmt_double(cfg.model.lin_B(0, 0)) << "\n";
      core << "c=" << fmt_double(cfg.model.lin_Sigma(0, 0)) << "\n";
    } else if (name == "cartpole") {
      core << "m_p=" << fmt_double(parse_double(require("dynamics", "m_p"), "dynamics")) << "\n";
      core << "m_c=" << fmt_double(parse_double(require("dynamics", "m_c"), "dynamics")) << "\n";
      core << "l=" << fmt_double(parse_double(require("dynamics", "l"), "dynamics")) << "\n";
      core << "sigma_add=" << fmt_double(parse_double(require("dynamics", "sigma_add"), "dynamics"))
           << "\n";
    } else if (name == "quadcopter") {
      for (const char* k : {"m", "ixx", "iyy", "izz", "l", "d", "sigma_add"}) {
        core << k << "=" << fmt_double(parse_double(require("dynamics", k), "dynamics")) << "\n";
      }
    }
    core << "x0=" << fmt_vec(cfg.model.x0) << "\n";
    core << "[cost]\n";
    core << "q=" << fmt_square(cfg.cost.Q) << "\n";
    core << "r=" << fmt_square(cfg.cost.R) << "\n";
    core << "q_t=" << fmt_square(cfg.cost.Q_T) << "\n";
    core << "eta=" << fmt_vec(cfg.cost.eta) << "\n";
    core << "[grid]\n";
    core << "dt=" << fmt_double(cfg.grid.dt) << "\n";
    core << "T=" << fmt_double(cfg.grid.horizon) << "\n";
    core << "[network]\n";
    core << "hidden=";
    for (std::size_t i = 0; i < cfg.network.hidden.size(); ++i) {
      if (i) core << ",";
      core << cfg.network.hidden[i];
    }
    core << "\n";
    core << "init=" << cfg.network.init << "\n";
    core << "psi_zeta_std=" << fmt_double(cfg.network.psi_zeta_std) << "\n";
    core << "[training]\n";
    core << "iterations=" << cfg.training.iterations << "\n";
    core << "batch=" << cfg.training.batch << "\n";
    core << "lr=" << fmt_double(cfg.training.lr) << "\n";
    core << "lr_decay_every=" << cfg.training.lr_decay_every << "\n";
    core << "lr_decay_factor=" << fmt_double(cfg.training.lr_decay_factor) << "\n";
    core << "c1=" << fmt_double(cfg.training.weights.c1) << "\n";
    core << "c2=" << fmt_double(cfg.training.weights.c2) << "\n";
    core << "c3=" << fmt_double(cfg.training.weights.c3) << "\n";
    core << "c4=" << fmt_double(cfg.training.weights.c4) << "\n";
    core << "lambda=" << fmt_double(cfg.training.weights.lambda) << "\n";
    core << "seed=" << cfg.training.seed << "\n";
    core << "clip=" << fmt_double(cfg.training.clip_norm) << "\n";
    core << "checkpoint_every=" << cfg.checkpoint_every << "\n";
    core << "max_failed_fraction=" << fmt_double(cfg.training.max_failed_fraction) << "\n";

    const std::string core_text = core.str();
    cfg.digest = to_hex16(fnv1a64(core_text));

    std::ostringstream full;
    full << core_text;
    full << "[eval]\n";
    full << "n_trials=" << cfg.eval.n_trials << "\n";
    full << "eval_seed=" << cfg.eval.seed << "\n";
    full << "mode="
         << (cfg.eval.mode == ControlMode::kSecondOrder ? "second_order" : "first_order_baseline")
         << "\n";
    cfg.canonical = full.str();
  }
};

}  // namespace

const ConfigEntry* ParsedConfig::find(const std::string& section, const std::string& key) const {
  for (const ConfigSection& s : sections) {
    if (s.name != section) continue;
    for (const ConfigEntry& e : s.entries) {
      if (e.key == key) return &e;
    }
  }
  return nullptr;
}

void ParsedConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  for (ConfigSection& s : sections) {
    if (s.name != section) continue;
    for (ConfigEntry& e : s.entries) {
      if (e.key == key) {
        e.value = value;
        e.line = 0;
        return;
      }
    }
    s.entries.push_back({key, value, 0});
    return;
  }
  sections.push_back({section, {{key, value, 0}}});
}

ParsedConfig parse_config_text(const std::string& text) {
  ParsedConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  int current = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail_at(lineno, "malformed section header '" + s + "'");
      const std::string name = trim(s.substr(1, s.size() - 2));
      if (name.empty()) fail_at(lineno, "empty section name");
      cfg.sections.push_back({name, {}});
      current = static_cast<int>(cfg.sections.size()) - 1;
      continue;
    }
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) fail_at(lineno, "expected 'key = value', got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail_at(lineno, "empty key");
    if (current < 0) fail_at(lineno, "key '" + key + "' appears before any [section]");
    cfg.sections[static_cast<std::size_t>(current)].entries.push_back({key, value, lineno});
  }
  return cfg;
}

ParsedConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(ParsedConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "': expected section.key=value");
  }
  const std::string path = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const std::size_t dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 >= path.size()) {
    throw ConfigError("override '" + assignment + "': expected section.key=value");
  }
  cfg.set(path.substr(0, dot), path.substr(dot + 1), value);
}

ExperimentConfig resolve_config(const ParsedConfig& raw) { return Resolver(raw).run(); }

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ParsedConfig raw = parse_config_file(path);
  for (const std::string& o : overrides) apply_override(raw, o);
  return resolve_config(raw);
}

}  // namespace fbsde
