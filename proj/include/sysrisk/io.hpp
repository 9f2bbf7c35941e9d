#pragma once

// Scenario files, CSV tables, run manifests and a small SVG renderer.
//
// Scenario files are INI/TOML-style:
//
//   [banks]                      # lists, a single number (needs count) or a law string
//   a = [1.0, 0.5]               # law strings: "constant(v)", "normal(m, sd)", "uniform(lo, hi)"
//   u = [1.0, 1.0]
//   sigma = [0.2, 0.3]
//   [init]
//   x0 = [1.0, 0.0]
//   y = 0.0
//
// with optional sections [noise] sigma0, [cost] alpha beta lambda, [theta] lo hi,
// [time] T steps, [mc] paths reps seed, [solver] damping tol max_iter basis,
// [study] Ns M_ref and [model] K rho. Unknown sections and keys are rejected.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "sysrisk/control.hpp"
#include "sysrisk/errors.hpp"
#include "sysrisk/experiments.hpp"
#include "sysrisk/model.hpp"

namespace sysrisk {

inline constexpr const char* kToolkitVersion = "1.0.0";

/// Shortest form is not required; 17 significant digits always round-trip.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("not a number: '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------------------
// Configuration

/// Everything a run needs: the scenario plus solver and study settings.
struct RunConfig {
  Scenario scenario;
  SolverOptions solver;
  StudyOptions study;
  std::size_t bank_count = 0;          // population size when types come from a law
  std::vector<std::string> defaults;   // "section.key=value" for every key left at its default

  bool operator==(const RunConfig& o) const {
    return scenario == o.scenario && solver == o.solver && study.ns == o.study.ns &&
           study.m_ref == o.study.m_ref && study.reps == o.study.reps && bank_count == o.bank_count;
  }
};

namespace detail {

struct RawValue {
  std::variant<double, std::string, std::vector<double>> v;
  int line = 0;
};

using RawSection = std::map<std::string, RawValue>;

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline std::map<std::string, RawSection> parse_raw(const std::string& text, const std::string& origin) {
  std::map<std::string, RawSection> out;
  std::istringstream in(text);
  std::string line, section;
  int no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      if (out.count(section)) fail("duplicate section [" + section + "]");
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    if (section.empty()) fail("key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) fail("empty key or value");
    auto& sec = out[section];
    if (sec.count(key)) fail("duplicate key '" + key + "' in [" + section + "]");
    RawValue rv;
    rv.line = no;
    if (val.front() == '[') {
      if (val.back() != ']') fail("unterminated list for '" + key + "'");
      std::vector<double> xs;
      std::string body = val.substr(1, val.size() - 2), item;
      std::istringstream items(body);
      while (std::getline(items, item, ',')) {
        item = trim(item);
        if (item.empty()) fail("empty list entry in '" + key + "'");
        try {
          xs.push_back(parse_double(item));
        } catch (const ConfigError&) {
          fail("list entry '" + item + "' of '" + key + "' is not a number");
        }
      }
      rv.v = std::move(xs);
    } else if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"') fail("unterminated string for '" + key + "'");
      rv.v = val.substr(1, val.size() - 2);
    } else {
      try {
        rv.v = parse_double(val);
      } catch (const ConfigError&) {
        rv.v = val;  // bare word
      }
    }
    sec[key] = std::move(rv);
  }
  return out;
}

inline Distribution parse_law(const std::string& text, const std::string& what) {
  const auto open = text.find('('), close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw ConfigError(what + ": expected a law such as uniform(lo, hi), got '" + text + "'");
  const std::string name = trim(text.substr(0, open));
  std::vector<double> args;
  std::istringstream in(text.substr(open + 1, close - open - 1));
  std::string item;
  while (std::getline(in, item, ',')) args.push_back(parse_double(trim(item)));
  Distribution d;
  if (name == "constant" && args.size() == 1) d = Distribution::constant(args[0]);
  else if (name == "normal" && args.size() == 2) d = Distribution::normal(args[0], args[1]);
  else if (name == "uniform" && args.size() == 2) d = Distribution::uniform(args[0], args[1]);
  else throw ConfigError(what + ": unknown law or wrong argument count in '" + text + "'");
  d.validate(what);
  return d;
}

inline std::string format_law(const Distribution& d) {
  switch (d.kind) {
    case Distribution::Kind::constant: return "constant(" + format_double(d.p1) + ")";
    case Distribution::Kind::normal:
      return "normal(" + format_double(d.p1) + ", " + format_double(d.p2) + ")";
    case Distribution::Kind::uniform:
      return "uniform(" + format_double(d.p1) + ", " + format_double(d.p2) + ")";
  }
  return {};
}

inline std::string format_list(const std::vector<double>& xs) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + format_double(xs[i]);
  return s + "]";
}

// Reads typed values out of the raw sections, recording defaults and rejecting unknown keys.
class Reader {
 public:
  Reader(std::map<std::string, RawSection> raw, std::string origin)
      : raw_(std::move(raw)), origin_(std::move(origin)) {}

  bool has(const std::string& sec, const std::string& key) const {
    const auto it = raw_.find(sec);
    return it != raw_.end() && it->second.count(key);
  }
  const RawValue& get(const std::string& sec, const std::string& key) {
    used_.insert(sec + "." + key);
    return raw_.at(sec).at(key);
  }
  const RawValue& required(const std::string& sec, const std::string& key) {
    if (!has(sec, key)) throw ConfigError(origin_ + ": missing required key '" + key + "' in [" + sec + "]");
    return get(sec, key);
  }
  double number(const std::string& sec, const std::string& key, double fallback) {
    if (!has(sec, key)) {
      defaults.push_back(sec + "." + key + "=" + format_double(fallback));
      return fallback;
    }
    const auto& v = get(sec, key);
    if (const auto* d = std::get_if<double>(&v.v)) return *d;
    throw ConfigError(where(v) + "'" + key + "' in [" + sec + "] must be a number");
  }
  std::size_t count(const std::string& sec, const std::string& key, std::size_t fallback) {
    if (!has(sec, key)) {
      defaults.push_back(sec + "." + key + "=" + std::to_string(fallback));
      return fallback;
    }
    const auto& v = get(sec, key);
    const auto* d = std::get_if<double>(&v.v);
    if (!d || *d < 0 || std::floor(*d) != *d || *d > 1e15)
      throw ConfigError(where(v) + "'" + key + "' in [" + sec + "] must be a nonnegative integer");
    return static_cast<std::size_t>(*d);
  }
  std::string word(const std::string& sec, const std::string& key, const std::string& fallback) {
    if (!has(sec, key)) {
      defaults.push_back(sec + "." + key + "=" + fallback);
      return fallback;
    }
    const auto& v = get(sec, key);
    if (const auto* s = std::get_if<std::string>(&v.v)) return *s;
    throw ConfigError(where(v) + "'" + key + "' in [" + sec + "] must be a word or string");
  }
  std::string where(const RawValue& v) const { return origin_ + ":" + std::to_string(v.line) + ": "; }

  void reject_unknown() const {
    static const std::map<std::string, std::set<std::string>> known{
        {"banks", {"a", "u", "sigma", "count"}},
        {"init", {"x0", "y"}},
        {"noise", {"sigma0"}},
        {"cost", {"alpha", "beta", "lambda"}},
        {"theta", {"lo", "hi"}},
        {"time", {"T", "steps"}},
        {"mc", {"paths", "reps", "seed"}},
        {"solver", {"damping", "tol", "max_iter", "basis"}},
        {"study", {"Ns", "M_ref"}},
        {"model", {"K", "rho"}}};
    for (const auto& [sec, keys] : raw_) {
      const auto it = known.find(sec);
      if (it == known.end()) throw ConfigError(origin_ + ": unknown section [" + sec + "]");
      for (const auto& [key, val] : keys)
        if (!it->second.count(key))
          throw ConfigError(where(val) + "unknown key '" + key + "' in [" + sec + "]");
    }
  }

  std::vector<std::string> defaults;

 private:
  std::map<std::string, RawSection> raw_;
  std::string origin_;
  std::set<std::string> used_;
};

// A per-bank field: explicit list, broadcast number, or law.
struct FieldSpec {
  std::optional<std::vector<double>> list;
  std::optional<double> scalar;
  std::optional<Distribution> law;
};

inline FieldSpec read_field(Reader& r, const std::string& sec, const std::string& key) {
  const auto& v = r.required(sec, key);
  FieldSpec f;
  if (const auto* xs = std::get_if<std::vector<double>>(&v.v)) f.list = *xs;
  else if (const auto* d = std::get_if<double>(&v.v)) f.scalar = *d;
  else f.law = parse_law(std::get<std::string>(v.v), sec + "." + key);
  return f;
}

inline std::size_t field_length(const FieldSpec& f) { return f.list ? f.list->size() : 0; }

inline double field_at(const FieldSpec& f, std::size_t i) { return f.list ? (*f.list)[i] : *f.scalar; }

inline Distribution field_law(const FieldSpec& f) {
  return f.law ? *f.law : Distribution::constant(*f.scalar);
}

}  // namespace detail

/// Draws the bank population again after a seed change (law-based types only).
inline void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.scenario.seed = seed;
  if (cfg.scenario.bank_law) {
    const LimitLaw law{*cfg.scenario.bank_law, {}};
    for (std::size_t i = 0; i < cfg.scenario.banks.size(); ++i) cfg.scenario.banks[i] = law.sample_type(seed, i);
  }
}

/// Parses and validates a scenario file held in memory.
inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
  detail::Reader r(detail::parse_raw(text, origin), origin);
  r.reject_unknown();
  RunConfig cfg;
  Scenario& s = cfg.scenario;

  s.bound_k = r.number("model", "K", s.bound_k);
  s.rho_exp = r.number("model", "rho", s.rho_exp);
  s.sigma0 = r.number("noise", "sigma0", s.sigma0);
  s.alpha = r.number("cost", "alpha", s.alpha);
  s.beta = r.number("cost", "beta", s.beta);
  s.lambda = r.number("cost", "lambda", s.lambda);
  s.theta_lo = r.number("theta", "lo", s.theta_lo);
  s.theta_hi = r.number("theta", "hi", s.theta_hi);
  s.horizon = r.number("time", "T", s.horizon);
  s.steps = r.count("time", "steps", s.steps);
  s.mc_paths = r.count("mc", "paths", s.mc_paths);
  s.seed = r.count("mc", "seed", s.seed);
  cfg.study.reps = r.count("mc", "reps", cfg.study.reps);

  cfg.solver.damping = r.number("solver", "damping", cfg.solver.damping);
  cfg.solver.tol = r.number("solver", "tol", cfg.solver.tol);
  cfg.solver.max_iter = r.count("solver", "max_iter", cfg.solver.max_iter);
  cfg.solver.basis = parse_basis(r.word("solver", "basis", to_string(cfg.solver.basis)));

  if (r.has("study", "Ns")) {
    const auto& v = r.get("study", "Ns");
    const auto* xs = std::get_if<std::vector<double>>(&v.v);
    if (!xs) throw ConfigError(r.where(v) + "'Ns' in [study] must be a list");
    cfg.study.ns.clear();
    for (double x : *xs) {
      if (x < 1 || std::floor(x) != x) throw ConfigError(r.where(v) + "'Ns' entries must be positive integers");
      cfg.study.ns.push_back(static_cast<std::size_t>(x));
    }
  } else {
    cfg.defaults.push_back("study.Ns=" + detail::format_list({8, 16, 32, 64}));
  }
  cfg.study.m_ref = r.count("study", "M_ref", cfg.study.m_ref);

  // Banks.
  const auto fa = detail::read_field(r, "banks", "a");
  const auto fu = detail::read_field(r, "banks", "u");
  const auto fs = detail::read_field(r, "banks", "sigma");
  std::optional<std::size_t> count;
  if (r.has("banks", "count")) count = r.count("banks", "count", 0);
  const bool law_types = fa.law || fu.law || fs.law;
  std::size_t n = 0;
  for (const auto* f : {&fa, &fu, &fs})
    if (f->list) {
      if (law_types) throw ConfigError(origin + ": [banks] cannot mix explicit lists with law strings");
      if (n && f->list->size() != n) throw ConfigError(origin + ": [banks] lists have different lengths");
      n = f->list->size();
    }
  if (count) {
    if (n && *count != n) throw ConfigError(origin + ": [banks] count does not match the list length");
    n = *count;
  }
  if (n == 0) throw ConfigError(origin + ": missing required key 'count' in [banks] (no list fixes the bank count)");
  cfg.bank_count = n;
  if (law_types) {
    s.bank_law = TypeLaw{detail::field_law(fa), detail::field_law(fu), detail::field_law(fs)};
    s.banks.resize(n);
    apply_seed(cfg, s.seed);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      s.banks.push_back({detail::field_at(fa, i), detail::field_at(fu, i), detail::field_at(fs, i)});
  }

  // Initial data.
  const auto fx = detail::read_field(r, "init", "x0");
  const auto fy = detail::read_field(r, "init", "y");
  if (fx.law || fy.law) {
    if (fx.list || fy.list) throw ConfigError(origin + ": [init] cannot mix explicit lists with law strings");
    s.init_law = InitLaw{detail::field_law(fx), detail::field_law(fy)};
  } else {
    for (const auto* f : {&fx, &fy})
      if (f->list && f->list->size() != n)
        throw ConfigError(origin + ": [init] list length does not match the bank count");
    for (std::size_t i = 0; i < n; ++i) s.init.push_back({detail::field_at(fx, i), detail::field_at(fy, i)});
  }

  for (auto& d : r.defaults) cfg.defaults.push_back(d);
  s.validate();
  if (!(cfg.solver.damping > 0 && cfg.solver.damping <= 1)) throw ConfigError("[solver] damping must lie in (0, 1]");
  if (!(cfg.solver.tol > 0)) throw ConfigError("[solver] tol must be positive");
  if (cfg.solver.max_iter == 0) throw ConfigError("[solver] max_iter must be >= 1");
  return cfg;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  return parse_config_text(read_text_file(path), path.string());
}

/// parse_scenario: the validated Scenario of a file.
inline Scenario parse_scenario(const std::filesystem::path& path) { return parse_config(path).scenario; }

/// Canonical text form; parse_config_text(serialize_config(c)) == c.
inline std::string serialize_config(const RunConfig& cfg) {
  const Scenario& s = cfg.scenario;
  std::ostringstream o;
  auto line = [&](const std::string& k, const std::string& v) { o << k << " = " << v << "\n"; };
  auto num = [&](const std::string& k, double v) { line(k, format_double(v)); };
  o << "[banks]\n";
  if (s.bank_law) {
    line("a", "\"" + detail::format_law(s.bank_law->a) + "\"");
    line("u", "\"" + detail::format_law(s.bank_law->u) + "\"");
    line("sigma", "\"" + detail::format_law(s.bank_law->sigma) + "\"");
    line("count", std::to_string(s.banks.size()));
  } else {
    std::vector<double> a, u, sg;
    for (const auto& b : s.banks) {
      a.push_back(b.a);
      u.push_back(b.u);
      sg.push_back(b.sigma);
    }
    line("a", detail::format_list(a));
    line("u", detail::format_list(u));
    line("sigma", detail::format_list(sg));
  }
  o << "\n[init]\n";
  if (s.init_law) {
    line("x0", "\"" + detail::format_law(s.init_law->x0) + "\"");
    line("y", "\"" + detail::format_law(s.init_law->y) + "\"");
  } else {
    std::vector<double> x0, y;
    for (const auto& d : s.init) {
      x0.push_back(d.x0);
      y.push_back(d.y);
    }
    line("x0", detail::format_list(x0));
    line("y", detail::format_list(y));
  }
  o << "\n[noise]\n";
  num("sigma0", s.sigma0);
  o << "\n[cost]\n";
  num("alpha", s.alpha);
  num("beta", s.beta);
  num("lambda", s.lambda);
  o << "\n[theta]\n";
  num("lo", s.theta_lo);
  num("hi", s.theta_hi);
  o << "\n[time]\n";
  num("T", s.horizon);
  line("steps", std::to_string(s.steps));
  o << "\n[mc]\n";
  line("paths", std::to_string(s.mc_paths));
  line("reps", std::to_string(cfg.study.reps));
  line("seed", std::to_string(s.seed));
  o << "\n[solver]\n";
  num("damping", cfg.solver.damping);
  num("tol", cfg.solver.tol);
  line("max_iter", std::to_string(cfg.solver.max_iter));
  line("basis", to_string(cfg.solver.basis));
  o << "\n[study]\n";
  std::vector<double> ns(cfg.study.ns.begin(), cfg.study.ns.end());
  line("Ns", detail::format_list(ns));
  line("M_ref", std::to_string(cfg.study.m_ref));
  o << "\n[model]\n";
  num("K", s.bound_k);
  num("rho", s.rho_exp);
  return o.str();
}

// ---------------------------------------------------------------------------------------
// CSV

using CsvCell = std::variant<double, long long, std::string>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<CsvCell>> rows;

  void add(std::vector<CsvCell> row) {
    if (row.size() != header.size()) throw DimensionError("CSV row width does not match the header");
    rows.push_back(std::move(row));
  }
};

namespace detail {
inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}
}  // namespace detail

inline std::string to_csv_text(const CsvTable& t) {
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + detail::csv_escape(t.header[i]);
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      if (const auto* d = std::get_if<double>(&row[i])) out += format_double(*d);
      else if (const auto* n = std::get_if<long long>(&row[i])) out += std::to_string(*n);
      else out += detail::csv_escape(std::get<std::string>(row[i]));
    }
    out += "\n";
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.close();
  if (!out) throw IoError("failed while writing '" + path.string() + "'");
}

inline void write_csv(const CsvTable& t, const std::filesystem::path& path) {
  write_text_file(path, to_csv_text(t));
}

/// Reads back a CSV written by write_csv (no embedded newlines); numeric-looking cells
/// become doubles, everything else strings.
inline CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const char c = l[i];
      if (quoted) {
        if (c == '"' && i + 1 < l.size() && l[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cells.push_back(cur);
    return cells;
  };
  if (!std::getline(in, line)) throw IoError("empty CSV file '" + path.string() + "'");
  t.header = split(line);
  while (std::getline(in, line)) {
    std::vector<CsvCell> row;
    for (auto& c : split(line)) {
      try {
        row.emplace_back(parse_double(c));
      } catch (const ConfigError&) {
        row.emplace_back(c);
      }
    }
    t.add(std::move(row));
  }
  return t;
}

inline CsvTable study_table(const StudyReport& r) {
  CsvTable t{{"study", "N", "value", "se", "aux", "seed", "fingerprint"}, {}};
  for (const auto& row : r.rows)
    t.add({r.study, static_cast<long long>(row.n), row.value, row.se, row.aux,
           static_cast<long long>(r.seed), r.fingerprint});
  return t;
}

inline CsvTable trace_table(const OptimizerTrace& tr) {
  CsvTable t{{"iter", "cost", "se", "step_norm", "damping"}, {}};
  for (const auto& r : tr.rows)
    t.add({static_cast<long long>(r.iter), r.cost, r.se, r.step_norm, r.damping});
  return t;
}

// ---------------------------------------------------------------------------------------
// Manifest

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_text;  // resolved configuration in canonical form
  std::vector<std::string> defaults;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::vector<std::string> outputs;
  std::vector<std::string> diagnostics;
  double wall_seconds = 0.0;
};

inline nlohmann::ordered_json manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config"] = m.config_text;
  j["config_fingerprint"] = hex64(fnv1a(m.config_text));
  j["defaults_applied"] = m.defaults;
  j["seed"] = m.seed;
  j["toolkit_version"] = kToolkitVersion;
  j["threads"] = m.threads;
  j["outputs"] = m.outputs;
  j["diagnostics"] = m.diagnostics;
  j["wall_seconds"] = m.wall_seconds;
  return j;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  write_text_file(path, manifest_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------------------
// SVG

/// Line chart of value against N (log2 axis) with +-2 SE whiskers.
inline std::string study_svg(const StudyReport& r) {
  const double w = 640, h = 400, ml = 70, mr = 20, mt = 30, mb = 50;
  std::vector<const StudyRow*> pts;
  for (const auto& row : r.rows)
    if (std::isfinite(row.value) && row.n > 0) pts.push_back(&row);
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!pts.empty()) {
    xmin = xmax = std::log2(static_cast<double>(pts[0]->n));
    ymin = ymax = pts[0]->value;
    for (const auto* p : pts) {
      const double x = std::log2(static_cast<double>(p->n));
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, p->value - 2 * p->se);
      ymax = std::max(ymax, p->value + 2 * p->se);
    }
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
  auto f = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", v);
    return std::string(b);
  };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << ml << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << r.study
    << " study</text>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (w / 2) << "\" y=\"" << h - 10 << "\" font-family=\"sans-serif\" font-size=\"12\">N (log scale)</text>\n";
  o << "<text x=\"5\" y=\"" << mt - 8 << "\" font-family=\"sans-serif\" font-size=\"11\">" << f(ymax) << "</text>\n";
  o << "<text x=\"5\" y=\"" << h - mb << "\" font-family=\"sans-serif\" font-size=\"11\">" << f(ymin) << "</text>\n";
  std::string poly;
  for (const auto* p : pts) {
    const double x = sx(std::log2(static_cast<double>(p->n)));
    poly += f(x) + "," + f(sy(p->value)) + " ";
    o << "<line x1=\"" << f(x) << "\" y1=\"" << f(sy(p->value - 2 * p->se)) << "\" x2=\"" << f(x)
      << "\" y2=\"" << f(sy(p->value + 2 * p->se)) << "\" stroke=\"gray\"/>\n";
    o << "<circle cx=\"" << f(x) << "\" cy=\"" << f(sy(p->value)) << "\" r=\"3\" fill=\"steelblue\"/>\n";
    o << "<text x=\"" << f(x - 8) << "\" y=\"" << h - mb + 16 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << p->n << "</text>\n";
  }
  if (!poly.empty()) o << "<polyline fill=\"none\" stroke=\"steelblue\" points=\"" << poly << "\"/>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace sysrisk
