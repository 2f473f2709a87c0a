#include "pmdi/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pmdi {

const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::Scan: return "scan";
    case RunMode::Optimize: return "optimize";
    case RunMode::SmallRing: return "smallring";
    case RunMode::Baseline: return "baseline";
    default: return "verify";
  }
}

RunMode run_mode_from_string(const std::string& s) {
  if (s == "scan") return RunMode::Scan;
  if (s == "optimize") return RunMode::Optimize;
  if (s == "smallring") return RunMode::SmallRing;
  if (s == "baseline") return RunMode::Baseline;
  if (s == "verify") return RunMode::Verify;
  throw ConfigError("unknown mode '" + s + "'");
}

ChannelParams RunConfig::channel_at(double distance_km) const {
  ChannelParams c;
  c.distance_km = distance_km;
  c.loss_db_per_km = loss_db_per_km;
  c.detector_efficiency = detector_efficiency;
  c.dark_count_prob = dark_count_prob;
  // a rotation by 2 asin(sqrt(e)) turns a pole state into one with
  // single-photon error probability e
  const auto rot_of = [&](double e) {
    if (e <= 0.0) return Rotation3D::identity();
    return Rotation3D::about(misalignment_axis,
                             2.0 * std::asin(std::sqrt(e)));
  };
  c.misalignment_a = rot_of(misalignment_a);
  c.misalignment_b = rot_of(misalignment_b);
  return c;
}

void RunConfig::validate() const {
  try {
    layout.validate();
    channel_at(0.0).validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (mode != RunMode::Verify && mode != RunMode::Baseline) {
    if (distances_km.empty()) throw ConfigError("no scan points");
  }
  if (mode == RunMode::Baseline && distances_km.empty())
    throw ConfigError("no scan points");
  if (!std::is_sorted(distances_km.begin(), distances_km.end()))
    throw ConfigError("distances must be sorted ascending");
  for (double d : distances_km)
    if (d < 0.0) throw ConfigError("distances must be nonnegative");
  if (n_max < 1 || n_max > kMaxPhotonOrder)
    throw ConfigError("n_max out of range");
  if (rings < 1 || rings > 200) throw ConfigError("rings out of range");
  if (f_ec < 1.0) throw ConfigError("f_ec must be >= 1");
  if (key_band < 0 || key_band > 3) throw ConfigError("key_band must be 0..3");
  if (misalignment_a < 0.0 || misalignment_a > 0.5 || misalignment_b < 0.0 ||
      misalignment_b > 0.5)
    throw ConfigError("misalignment error probability outside [0, 0.5]");
  for (double mu : active_intensities)
    if (!(mu > 0.0 && mu <= 1.0))
      throw ConfigError("active intensities must lie in (0, 1]");
}

std::string RunConfig::canonical_text() const {
  char buf[512];
  std::string s;
  const auto add = [&](const char* fmt, auto... v) {
    std::snprintf(buf, sizeof buf, fmt, v...);
    s += buf;
  };
  add("loss=%.17g dark=%.17g eff=%.17g misa=%.17g misb=%.17g axis=%.17g,%.17g,%.17g\n",
      loss_db_per_km, dark_count_prob, detector_efficiency, misalignment_a,
      misalignment_b, misalignment_axis.x, misalignment_axis.y,
      misalignment_axis.z);
  add("layout=%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", layout.delta_z,
      layout.delta_xy, layout.delta_phi, layout.t1, layout.t2, layout.t3,
      layout.mu_max);
  add("decoy=%d,%.17g keyrate=%.17g,%d,%s,%d\n", n_max, lp_slack_sigma, f_ec,
      rings, to_string(key_density), key_band);
  add("pair=%.17g,%llu,%llu key=%.17g,%llu,%llu opt=%.17g,%llu,%llu\n",
      pair_budget.rel_tol,
      static_cast<unsigned long long>(pair_budget.max_evals),
      static_cast<unsigned long long>(pair_budget.min_evals),
      key_budget.rel_tol,
      static_cast<unsigned long long>(key_budget.max_evals),
      static_cast<unsigned long long>(key_budget.min_evals),
      opt_budget.rel_tol,
      static_cast<unsigned long long>(opt_budget.max_evals),
      static_cast<unsigned long long>(opt_budget.min_evals));
  add("optrange=%.17g,%.17g,%.17g,%.17g rounds=%d tol=%.17g\n",
      delta_z_range.lo, delta_z_range.hi, t3_range.lo, t3_range.hi, opt_rounds,
      opt_tol);
  add("active=%d,%.17g,%.17g,%.17g\n", active_optimize ? 1 : 0,
      active_intensities[0], active_intensities[1], active_intensities[2]);
  s += "distances=";
  for (double d : distances_km) add("%.17g,", d);
  add("\nseed=%llu mode=%s\n", static_cast<unsigned long long>(seed),
      to_string(mode));
  return s;
}

std::uint64_t RunConfig::config_hash() const { return fnv1a(canonical_text()); }

namespace {

struct Parser {
  std::string file;
  int line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(file + ":" + std::to_string(line) + ": " + msg);
  }

  double number(const std::string& v) const {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) fail("trailing characters after number '" + v + "'");
      return d;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail("expected a number, got '" + v + "'");
    }
  }

  std::uint64_t unsigned_int(const std::string& v) const {
    try {
      std::size_t pos = 0;
      const unsigned long long u = std::stoull(v, &pos);
      if (pos != v.size()) fail("trailing characters after integer '" + v + "'");
      return u;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      fail("expected an unsigned integer, got '" + v + "'");
    }
  }

  int integer(const std::string& v) const {
    const double d = number(v);
    const int i = static_cast<int>(d);
    if (d != i) fail("expected an integer, got '" + v + "'");
    return i;
  }

  bool boolean(const std::string& v) const {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("expected a boolean, got '" + v + "'");
  }

  std::vector<double> number_list(const std::string& v) const {
    std::vector<double> out;
    std::string tok;
    std::istringstream in(v);
    while (std::getline(in, tok, ' ')) {
      std::string piece;
      std::istringstream jn(tok);
      while (std::getline(jn, piece, ',')) {
        if (piece.empty()) continue;
        out.push_back(number(piece));
      }
    }
    if (out.empty()) fail("expected a list of numbers");
    return out;
  }
};

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

RunConfig parse_config_text(const std::string& text,
                            const std::string& filename) {
  RunConfig cfg;
  Parser p;
  p.file = filename;

  std::string section;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++p.line;
    std::string s = raw;
    const std::size_t hash = s.find_first_of("#;");
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') p.fail("unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      const char* known[] = {"channel", "layout",   "decoy",  "keyrate",
                             "integration", "optimize", "active", "scan",
                             "output"};
      if (std::find(std::begin(known), std::end(known), section) ==
          std::end(known))
        p.fail("unknown section '" + section + "'");
      continue;
    }

    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) p.fail("expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (key.empty()) p.fail("empty key");
    if (val.empty()) p.fail("empty value for '" + key + "'");

    const std::string qual = section + "." + key;
    if (qual == "channel.loss_db_per_km") cfg.loss_db_per_km = p.number(val);
    else if (qual == "channel.dark_count_prob") cfg.dark_count_prob = p.number(val);
    else if (qual == "channel.detector_efficiency")
      cfg.detector_efficiency = p.number(val);
    else if (qual == "channel.misalignment_a") cfg.misalignment_a = p.number(val);
    else if (qual == "channel.misalignment_b") cfg.misalignment_b = p.number(val);
    else if (qual == "channel.misalignment_axis") {
      const auto v = p.number_list(val);
      if (v.size() != 3) p.fail("misalignment_axis needs three components");
      cfg.misalignment_axis = {v[0], v[1], v[2]};
    } else if (qual == "layout.delta_z") cfg.layout.delta_z = p.number(val);
    else if (qual == "layout.delta_xy") cfg.layout.delta_xy = p.number(val);
    else if (qual == "layout.delta_phi") cfg.layout.delta_phi = p.number(val);
    else if (qual == "layout.t1") cfg.layout.t1 = p.number(val);
    else if (qual == "layout.t2") cfg.layout.t2 = p.number(val);
    else if (qual == "layout.t3") cfg.layout.t3 = p.number(val);
    else if (qual == "layout.mu_max") cfg.layout.mu_max = p.number(val);
    else if (qual == "decoy.n_max") cfg.n_max = p.integer(val);
    else if (qual == "decoy.lp_slack_sigma") cfg.lp_slack_sigma = p.number(val);
    else if (qual == "keyrate.f_ec") cfg.f_ec = p.number(val);
    else if (qual == "keyrate.rings") cfg.rings = p.integer(val);
    else if (qual == "keyrate.key_density") {
      if (val == "raw") cfg.key_density = KeyDensity::Raw;
      else if (val == "reshaped") cfg.key_density = KeyDensity::Reshaped;
      else p.fail("key_density must be raw or reshaped");
    } else if (qual == "keyrate.key_band") cfg.key_band = p.integer(val);
    else if (qual == "integration.rel_tol") cfg.pair_budget.rel_tol = p.number(val);
    else if (qual == "integration.max_evals")
      cfg.pair_budget.max_evals = p.unsigned_int(val);
    else if (qual == "integration.min_evals")
      cfg.pair_budget.min_evals = p.unsigned_int(val);
    else if (qual == "integration.key_rel_tol")
      cfg.key_budget.rel_tol = p.number(val);
    else if (qual == "integration.key_max_evals")
      cfg.key_budget.max_evals = p.unsigned_int(val);
    else if (qual == "integration.key_min_evals")
      cfg.key_budget.min_evals = p.unsigned_int(val);
    else if (qual == "integration.opt_rel_tol")
      cfg.opt_budget.rel_tol = p.number(val);
    else if (qual == "integration.opt_max_evals")
      cfg.opt_budget.max_evals = p.unsigned_int(val);
    else if (qual == "integration.opt_min_evals")
      cfg.opt_budget.min_evals = p.unsigned_int(val);
    else if (qual == "optimize.delta_z_lo") cfg.delta_z_range.lo = p.number(val);
    else if (qual == "optimize.delta_z_hi") cfg.delta_z_range.hi = p.number(val);
    else if (qual == "optimize.t3_lo") cfg.t3_range.lo = p.number(val);
    else if (qual == "optimize.t3_hi") cfg.t3_range.hi = p.number(val);
    else if (qual == "optimize.rounds") cfg.opt_rounds = p.integer(val);
    else if (qual == "optimize.tol") cfg.opt_tol = p.number(val);
    else if (qual == "active.optimize") cfg.active_optimize = p.boolean(val);
    else if (qual == "active.intensities") {
      const auto v = p.number_list(val);
      if (v.size() != 3) p.fail("active intensities need three values");
      cfg.active_intensities = {v[0], v[1], v[2]};
    } else if (qual == "scan.distances_km")
      cfg.distances_km = p.number_list(val);
    else if (qual == "scan.seed") cfg.seed = p.unsigned_int(val);
    else if (qual == "scan.threads") cfg.threads = p.integer(val);
    else if (qual == "scan.mode") {
      try {
        cfg.mode = run_mode_from_string(val);
      } catch (const ConfigError& e) {
        p.fail(e.what());
      }
    } else if (qual == "output.csv") cfg.csv_path = val;
    else if (qual == "output.manifest") cfg.manifest_path = val;
    else if (qual == "output.cache_dir") cfg.cache_dir = val;
    else p.fail("unknown key '" + key + "' in section [" + section + "]");
  }

  if (cfg.manifest_path.empty()) cfg.manifest_path = cfg.csv_path + ".manifest.json";
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace pmdi
