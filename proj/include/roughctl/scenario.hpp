#pragma once

#include "roughctl/fbm.hpp"
#include "roughctl/hjb.hpp"
#include "roughctl/rde.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>
#include <fftw3.h>
#include <json.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace roughctl {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

/// Pipeline stages in execution order.
inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> s{"lift", "solve", "flow", "value", "hjb", "study"};
  return s;
}

struct DriverSpec {
  std::string kind = "fbm";  ///< fbm | smooth
  double hurst = 0.5;
  std::uint64_t seed = 1;
  std::size_t dim = 1;
  std::size_t steps = 4096;
  std::size_t oversample = 8;
  std::string shape = "linear";  ///< smooth drivers: linear | sine | zero
  double amplitude = 1.0;
  double frequency = 1.0;
};

struct AxisSpec {
  double lo = -4.0, hi = 4.0;
  std::size_t nodes = 8001;
  UniformAxis axis() const { return UniformAxis(lo, hi, nodes); }
};

/// Bound on one reported metric. Exactly one of max, min or target is set.
struct Expectation {
  std::string metric;
  std::optional<double> max, min, target;
  double tol = 0.0;
  std::string basis;

  bool holds(double v) const {
    if (!std::isfinite(v)) return false;
    if (max) return v <= *max;
    if (min) return v >= *min;
    return std::abs(v - *target) <= tol;
  }
  std::string bound() const {
    if (max) return "<= " + csv::format_double(*max);
    if (min) return ">= " + csv::format_double(*min);
    return csv::format_double(*target) + " +- " + csv::format_double(tol);
  }
};

struct Scenario {
  std::string name;
  double horizon = 1.0;
  DriverSpec driver;
  DriftFamily drift;
  std::vector<ScalarFamily> sigma;
  RewardSpec reward;
  std::string controls_kind = "dirac_grid";  ///< dirac_grid | gaussians
  double u_lo = -1.0, u_hi = 1.0;
  std::size_t u_count = 5;
  std::vector<GaussianMeasure> gaussians;
  double y0 = 0.0;
  std::optional<std::size_t> solve_control;
  std::size_t dp_steps = 1024;
  AxisSpec space;
  AxisSpec flow_space{-8.0, 8.0, 512};
  std::pair<double, double> region{-1.5, 1.5};
  std::size_t slices = 16;
  std::optional<double> kappa, theta;
  double theta_factor = 1.1;
  double cfl = 1.0;
  std::size_t hjb_substeps = 1;
  unsigned quadrature_order = 32;
  std::vector<std::string> stages;
  std::vector<std::size_t> study_n{16, 32, 64, 128, 256, 512, 1024};
  std::size_t study_samples = 1;
  std::string oracle;  ///< empty or drive_to_zero
  std::pair<double, double> oracle_region{-2.0, 2.0};
  std::string output;
  std::vector<Expectation> expectations;
  nlohmann::json config;  ///< effective configuration after overrides

  bool has_stage(const std::string& s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

  ControlSet controls() const {
    if (controls_kind == "dirac_grid") return ControlSet::dirac_grid(u_lo, u_hi, u_count);
    std::vector<Measure> m(gaussians.begin(), gaussians.end());
    return ControlSet(std::move(m), ControlInterval{u_lo, u_hi});
  }

  CoefficientField coefficients() const { return CoefficientField::scalar_families(drift, sigma); }

  /// Driver lift; sample s > 0 uses seed + s.
  RoughLift lift(std::size_t sample = 0) const {
    if (driver.kind == "fbm")
      return lift_fbm(driver.hurst, driver.dim, driver.steps, driver.seed + sample, driver.oversample, horizon);
    const Grid fine(horizon, driver.steps * driver.oversample);
    const DriverSpec d = driver;
    const GridPath path = sample_path(fine, d.dim, [&d](double t) {
      const double v = d.shape == "zero" ? 0.0 : d.shape == "linear" ? d.amplitude * t : d.amplitude * std::sin(d.frequency * t);
      return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d.dim), v);
    });
    return lift_smooth(path, Grid(horizon, driver.steps));
  }
};

namespace detail {

using json = nlohmann::json;

/// Reads one JSON object, names fields by their dotted path in errors and rejects unknown keys.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw ValidationError("config field '" + field + "': " + msg);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  void touch(const std::string& key) { seen_.insert(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(field(key), "is required");
    return j_.at(key);
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail(field(key), "is required");
    }
    const json& v = j_.at(key);
    if (!v.is_number()) fail(field(key), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(field(key), "must be finite");
    return x;
  }

  std::optional<double> maybe_number(const std::string& key) {
    if (!has(key)) {
      seen_.insert(key);
      return std::nullopt;
    }
    return number(key);
  }

  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail(field(key), "is required");
    }
    return as_count(j_.at(key), field(key));
  }

  static std::uint64_t as_count(const json& v, const std::string& f) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_float() && v.get<double>() >= 0.0 && std::floor(v.get<double>()) == v.get<double>() && v.get<double>() < 1.8e19)
      return static_cast<std::uint64_t>(v.get<double>());
    fail(f, "must be a nonnegative integer");
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail(field(key), "is required");
    }
    if (!j_.at(key).is_string()) fail(field(key), "must be a string");
    return j_.at(key).get<std::string>();
  }

  std::optional<FieldReader> child(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return FieldReader(j_.at(key), field(key));
  }

  std::pair<double, double> interval(const std::string& key, std::pair<double, double> fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) fail(field(key), "must be [lo, hi]");
    const double lo = v[0].get<double>(), hi = v[1].get<double>();
    if (!(lo < hi)) fail(field(key), "needs lo < hi");
    return {lo, hi};
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(field(k), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline AxisSpec read_axis(FieldReader& parent, const std::string& key, AxisSpec fallback) {
  auto r = parent.child(key);
  if (!r) return fallback;
  AxisSpec a;
  a.lo = r->number("lo", fallback.lo);
  a.hi = r->number("hi", fallback.hi);
  a.nodes = r->count("nodes", fallback.nodes);
  r->finish();
  if (!(a.lo < a.hi)) FieldReader::fail(parent.field(key), "needs lo < hi");
  if (a.nodes < 4) FieldReader::fail(parent.field(key) + ".nodes", "must be at least 4");
  return a;
}

inline void require(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) FieldReader::fail(field, msg);
}

}  // namespace detail

/// Validates a configuration against every stage's preconditions; no numerics run here.
inline Scenario parse_scenario(const nlohmann::json& j) {
  using detail::require;
  detail::FieldReader r(j, "");
  Scenario s;
  s.config = j;
  const auto version = r.count("schema_version");
  require(version == kSchemaVersion, "schema_version", "unsupported version " + std::to_string(version) + " (expected 1)");
  s.name = r.text("name");
  require(!s.name.empty(), "name", "must be nonempty");
  s.horizon = r.number("horizon", 1.0);
  require(s.horizon > 0.0, "horizon", "must be positive");

  {
    auto d = r.child("driver");
    if (!d) detail::FieldReader::fail("driver", "is required");
    s.driver.kind = d->text("kind");
    s.driver.steps = d->count("steps", s.driver.steps);
    s.driver.dim = d->count("dim", 1);
    require(s.driver.steps >= 2, "driver.steps", "must be at least 2");
    require(s.driver.dim >= 1, "driver.dim", "must be at least 1");
    if (s.driver.kind == "fbm") {
      s.driver.hurst = d->number("hurst");
      s.driver.seed = d->count("seed");
      s.driver.oversample = d->count("oversample", 8);
      require(s.driver.hurst > 1.0 / 3.0 && s.driver.hurst < 1.0, "driver.hurst", "must lie in (1/3, 1)");
      require(s.driver.oversample >= 1, "driver.oversample", "must be at least 1");
      require(s.driver.steps * s.driver.oversample <= kMaxFbmSteps, "driver.steps", "steps x oversample exceeds the sampler limit");
    } else if (s.driver.kind == "smooth") {
      s.driver.shape = d->text("shape", "linear");
      s.driver.amplitude = d->number("amplitude", 1.0);
      s.driver.frequency = d->number("frequency", 1.0);
      s.driver.oversample = d->count("oversample", 1);
      require(s.driver.shape == "linear" || s.driver.shape == "sine" || s.driver.shape == "zero", "driver.shape",
              "must be linear, sine or zero");
      require(s.driver.oversample >= 1, "driver.oversample", "must be at least 1");
    } else {
      detail::FieldReader::fail("driver.kind", "must be fbm or smooth");
    }
    d->finish();
  }

  if (auto b = r.child("drift")) {
    s.drift.c0 = b->number("c0", 0.0);
    s.drift.cx = b->number("cx", 0.0);
    s.drift.ca = b->number("ca", 0.0);
    s.drift.ca2 = b->number("ca2", 0.0);
    b->finish();
  }

  {
    const auto& sig = r.raw("sigma");
    require(sig.is_array() && !sig.empty(), "sigma", "must be a nonempty list of families");
    for (std::size_t i = 0; i < sig.size(); ++i) {
      detail::FieldReader f(sig[i], "sigma[" + std::to_string(i) + "]");
      ScalarFamily fam;
      try {
        fam.kind = ScalarFamily::parse_kind(f.text("family"));
      } catch (const ValidationError& e) {
        detail::FieldReader::fail(f.field("family"), e.what());
      }
      fam.c0 = f.number("c0", 0.0);
      fam.c1 = f.number("c1", 0.0);
      fam.w = f.number("w", 1.0);
      f.finish();
      s.sigma.push_back(fam);
    }
    require(s.sigma.size() == s.driver.dim, "sigma", "needs one family per driver component (" + std::to_string(s.driver.dim) + ")");
  }

  if (auto rw = r.child("reward")) {
    if (auto rate = rw->child("rate")) {
      s.reward.rate.r0 = rate->number("r0", 0.0);
      s.reward.rate.rx = rate->number("rx", 0.0);
      s.reward.rate.rxx = rate->number("rxx", 0.0);
      s.reward.rate.ru = rate->number("ru", 0.0);
      s.reward.rate.ruu = rate->number("ruu", 0.0);
      rate->finish();
    }
    s.reward.lambda = rw->number("lambda", 0.0);
    s.reward.rho = rw->number("rho", 0.0);
    require(s.reward.lambda >= 0.0, "reward.lambda", "must be >= 0");
    require(s.reward.rho >= 0.0, "reward.rho", "must be >= 0");
    if (auto g = rw->child("terminal")) {
      s.reward.terminal.g0 = g->number("g0", 0.0);
      s.reward.terminal.g1 = g->number("g1", 0.0);
      s.reward.terminal.g2 = g->number("g2", 0.0);
      s.reward.terminal.gabs = g->number("gabs", 0.0);
      g->finish();
    }
    rw->finish();
  }

  if (auto c = r.child("controls")) {
    s.controls_kind = c->text("kind", "dirac_grid");
    s.u_lo = c->number("lo", -1.0);
    s.u_hi = c->number("hi", 1.0);
    require(s.u_lo <= s.u_hi, "controls", "needs lo <= hi");
    if (s.controls_kind == "dirac_grid") {
      s.u_count = c->count("count", 5);
      require(s.u_count >= 1, "controls.count", "must be at least 1");
    } else if (s.controls_kind == "gaussians") {
      const auto& m = c->raw("members");
      require(m.is_array() && !m.empty(), "controls.members", "must be a nonempty list");
      require(s.u_lo < s.u_hi, "controls", "Gaussian members need lo < hi");
      for (std::size_t i = 0; i < m.size(); ++i) {
        detail::FieldReader g(m[i], "controls.members[" + std::to_string(i) + "]");
        GaussianMeasure gm{g.number("mean"), g.number("stddev"), std::make_pair(s.u_lo, s.u_hi)};
        g.finish();
        require(gm.stddev > 0.0, g.field("stddev"), "must be positive");
        s.gaussians.push_back(gm);
      }
    } else {
      detail::FieldReader::fail("controls.kind", "must be dirac_grid or gaussians");
    }
    c->finish();
  }
  const std::size_t k_size = s.controls_kind == "dirac_grid" ? s.u_count : s.gaussians.size();

  if (auto so = r.child("solve")) {
    s.y0 = so->number("y0", 0.0);
    if (so->has("control")) {
      s.solve_control = so->count("control");
      require(*s.solve_control < k_size, "solve.control", "must index the control set (size " + std::to_string(k_size) + ")");
    } else {
      so->touch("control");
    }
    so->finish();
  }

  if (auto g = r.child("grids")) {
    s.dp_steps = g->count("dp_steps", s.dp_steps);
    s.space = detail::read_axis(*g, "space", s.space);
    s.flow_space = detail::read_axis(*g, "flow_space", s.flow_space);
    s.region = g->interval("region", s.region);
    s.slices = g->count("slices", s.slices);
    g->finish();
  }
  require(s.dp_steps >= 2, "grids.dp_steps", "must be at least 2");
  require(s.slices >= 1, "grids.slices", "must be at least 1");
  require(s.region.first >= s.space.lo && s.region.second <= s.space.hi, "grids.region", "must lie inside grids.space");

  if (auto sc = r.child("scheme")) {
    s.kappa = sc->maybe_number("kappa");
    s.theta = sc->maybe_number("theta");
    s.theta_factor = sc->number("theta_factor", 1.1);
    s.cfl = sc->number("cfl", 1.0);
    s.hjb_substeps = sc->count("hjb_substeps", 1);
    s.quadrature_order = static_cast<unsigned>(sc->count("quadrature_order", 32));
    sc->finish();
  }
  const double alpha = s.driver.kind == "fbm" ? lift_exponent_for_hurst(s.driver.hurst) : 1.0;
  try {
    resolve_kappa(alpha, s.kappa);
  } catch (const ValidationError& e) {
    detail::FieldReader::fail("scheme.kappa", std::string(e.what()) + " (alpha = " + csv::format_double(alpha) + ")");
  }
  require(!s.theta || *s.theta > 0.0, "scheme.theta", "must be positive");
  require(s.theta_factor >= 1.0, "scheme.theta_factor", "must be at least 1");
  require(s.cfl > 0.0, "scheme.cfl", "must be positive");
  require(s.hjb_substeps >= 1, "scheme.hjb_substeps", "must be at least 1");
  require(s.quadrature_order >= 1 && s.quadrature_order <= 128, "scheme.quadrature_order", "must lie in [1, 128]");

  {
    const auto& st = r.raw("stages");
    require(st.is_array() && !st.empty(), "stages", "must be a nonempty list");
    std::set<std::string> want;
    for (const auto& x : st) {
      require(x.is_string(), "stages", "entries must be strings");
      const auto name = x.get<std::string>();
      require(std::find(stage_order().begin(), stage_order().end(), name) != stage_order().end(), "stages",
              "unknown stage '" + name + "'");
      want.insert(name);
    }
    // Prerequisites are implied.
    want.insert("lift");
    if (want.count("hjb")) want.insert("flow");
    for (const auto& name : stage_order())
      if (want.count(name)) s.stages.push_back(name);
  }
  const std::size_t n = s.driver.steps;
  if (s.has_stage("value") || s.has_stage("study")) {
    require(n % s.dp_steps == 0, "grids.dp_steps", "must divide driver.steps");
    require(s.dp_steps % s.slices == 0, "grids.slices", "must divide grids.dp_steps");
  }
  if (s.has_stage("flow")) require(n % s.slices == 0, "grids.slices", "must divide driver.steps");
  if (s.has_stage("value") || s.has_stage("flow") || s.has_stage("study"))
    require(s.driver.dim == 1, "driver.dim", "flow, value, hjb and study stages need a one-dimensional driver");

  if (auto sd = r.child("study")) {
    if (sd->has("n")) {
      const auto& v = sd->raw("n");
      require(v.is_array() && !v.empty(), "study.n", "must be a nonempty list");
      s.study_n.clear();
      for (const auto& x : v) s.study_n.push_back(detail::FieldReader::as_count(x, "study.n"));
    } else {
      sd->touch("n");
    }
    s.study_samples = sd->count("samples", 1);
    sd->finish();
  }
  if (s.has_stage("study")) {
    for (auto m : s.study_n) require(m >= 1 && m <= s.dp_steps && n % m == 0, "study.n", "entries must divide driver.steps and not exceed grids.dp_steps");
    require(s.study_samples >= 1, "study.samples", "must be at least 1");
    require(s.study_samples == 1 || s.driver.kind == "fbm", "study.samples", "several samples need an fbm driver");
  }

  if (auto o = r.child("oracle")) {
    s.oracle = o->text("kind");
    require(s.oracle == "drive_to_zero", "oracle.kind", "must be drive_to_zero");
    s.oracle_region = o->interval("region", s.oracle_region);
    o->finish();
    require(s.oracle_region.first >= s.space.lo && s.oracle_region.second <= s.space.hi, "oracle.region", "must lie inside grids.space");
  }

  s.output = r.text("output", "runs/" + s.name);

  if (r.has("expectations")) {
    const auto& ex = r.raw("expectations");
    require(ex.is_array(), "expectations", "must be a list");
    for (std::size_t i = 0; i < ex.size(); ++i) {
      detail::FieldReader e(ex[i], "expectations[" + std::to_string(i) + "]");
      Expectation x;
      x.metric = e.text("metric");
      x.max = e.maybe_number("max");
      x.min = e.maybe_number("min");
      x.target = e.maybe_number("target");
      x.tol = e.number("tol", 0.0);
      x.basis = e.text("basis", "");
      e.finish();
      require(static_cast<int>(x.max.has_value()) + x.min.has_value() + x.target.has_value() == 1, e.field("metric"),
              "needs exactly one of max, min, target");
      require(x.tol >= 0.0, e.field("tol"), "must be >= 0");
      s.expectations.push_back(x);
    }
  } else {
    r.touch("expectations");
  }
  r.finish();
  if (s.has_stage("value") || s.has_stage("hjb") || s.has_stage("study") || s.solve_control) s.controls();
  return s;
}

/// Sets a dotted field ("driver.hurst") to a JSON literal; text that is not JSON is taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must look like field=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ValidationError("override '" + assignment + "' has an empty field name");
    if (!node->is_object()) throw ValidationError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

inline Scenario load_scenario(const std::string& file, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot open config " + file);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("config " + file + " is not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  return parse_scenario(j);
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw NumericalError("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + file);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Library versions recorded in manifests.
inline nlohmann::json version_info() {
  nlohmann::json v;
  v["roughctl"] = kVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION);
  v["boost"] = BOOST_LIB_VERSION;
  v["fftw"] = std::string(fftw_version);
  v["openssl"] = OPENSSL_VERSION_TEXT;
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["compiler"] = __VERSION__;
  return v;
}

struct StageRecord {
  std::string name;
  std::string status;  ///< ok | refused | failed
  std::string detail;
};

struct ExpectationResult {
  Expectation spec;
  std::optional<double> value;
  std::string status;  ///< pass | fail | skipped
};

struct RunOptions {
  std::optional<std::string> out_dir;
  bool timings = false;
  bool require_all = true;  ///< an expectation whose metric was not produced fails instead of being skipped
  std::size_t workers = 0;
};

struct RunResult {
  std::string dir;
  std::vector<StageRecord> stages;
  std::map<std::string, double> metrics;
  std::vector<ExpectationResult> expectations;
  std::vector<std::string> files;
  std::string manifest_sha256;

  bool refused() const {
    return std::any_of(stages.begin(), stages.end(), [](const StageRecord& s) { return s.status == "refused"; });
  }
  bool expectations_met() const {
    return std::none_of(expectations.begin(), expectations.end(), [](const ExpectationResult& e) { return e.status == "fail"; });
  }
};

namespace detail {

/// Least-squares slope of -log(error) against log(n), zero errors skipped.
inline double study_order(const std::vector<StudyRow>& rows) {
  std::vector<double> x, y;
  for (const auto& r : rows)
    if (r.sup_error > 0.0) x.push_back(std::log(static_cast<double>(r.n))), y.push_back(-std::log(r.sup_error));
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double k = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / k, my += y[i] / k;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my), sxx += (x[i] - mx) * (x[i] - mx);
  return sxy / sxx;
}

/// sup |V(0, x) + max(0, |x| - T max|U|)| over axis nodes in [lo, hi].
inline double drive_to_zero_error(const ValueGrid& v, const Scenario& s) {
  const double reach = s.horizon * std::max(std::abs(s.u_lo), std::abs(s.u_hi));
  double worst = 0.0;
  for (std::size_t j = 0; j < v.axis.nodes(); ++j) {
    const double x = v.axis.x(j);
    if (x < s.oracle_region.first - 1e-12 || x > s.oracle_region.second + 1e-12) continue;
    const double val = v.values(0, static_cast<Eigen::Index>(j));
    if (!std::isfinite(val)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(val + std::max(0.0, std::abs(x) - reach)));
  }
  return worst;
}

}  // namespace detail

/// Runs the scenario's stages and writes CSVs, metrics.csv, expectations.csv and manifest.json into the run
/// directory. A CFL refusal marks the hjb stage refused and the run continues; any other stage error is recorded
/// in the manifest and rethrown with the stage name.
inline RunResult run_scenario(const Scenario& s, const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  RunResult res;
  res.dir = opts.out_dir.value_or(s.output);
  std::error_code ec;
  fs::create_directories(res.dir, ec);
  if (ec || !fs::is_directory(res.dir)) throw ValidationError("cannot create run directory " + res.dir);
  auto file = [&](const std::string& name) {
    res.files.push_back(name);
    return (fs::path(res.dir) / name).string();
  };
  const std::size_t workers = opts.workers;

  std::shared_ptr<const RoughLift> lift;
  std::optional<FlowField> ff;
  std::optional<ValueGrid> vdp;
  const CoefficientField cf = s.coefficients();
  const UniformAxis space = s.space.axis();

  auto write_manifest = [&]() {
    {
      csv::Writer w(file("metrics.csv"), {"metric", "value"});
      for (const auto& [k, v] : res.metrics) w.row_strings({k, csv::format_double(v)});
    }
    res.expectations.clear();
    for (const auto& e : s.expectations) {
      ExpectationResult er{e, std::nullopt, "skipped"};
      const auto it = res.metrics.find(e.metric);
      if (it != res.metrics.end()) {
        er.value = it->second;
        er.status = e.holds(it->second) ? "pass" : "fail";
      } else if (opts.require_all) {
        er.status = "fail";
      }
      res.expectations.push_back(er);
    }
    {
      csv::Writer w(file("expectations.csv"), {"metric", "value", "bound", "status", "basis"});
      for (const auto& e : res.expectations)
        w.row_strings({e.spec.metric, e.value ? csv::format_double(*e.value) : "", e.spec.bound(), e.status, "\"" + e.spec.basis + "\""});
    }
    nlohmann::json m;
    m["schema_version"] = kSchemaVersion;
    m["name"] = s.name;
    m["config_sha256"] = sha256_hex(s.config.dump());
    m["config"] = s.config;
    m["seed"] = s.driver.kind == "fbm" ? nlohmann::json(s.driver.seed) : nlohmann::json(nullptr);
    m["versions"] = version_info();
    m["stages"] = nlohmann::json::array();
    for (const auto& st : res.stages) m["stages"].push_back({{"name", st.name}, {"status", st.status}, {"detail", st.detail}});
    m["files"] = nlohmann::json::object();
    for (const auto& f : res.files) m["files"][f] = sha256_hex(read_file((fs::path(res.dir) / f).string()));
    const std::string text = m.dump(2) + "\n";
    std::ofstream out((fs::path(res.dir) / "manifest.json").string(), std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest in " + res.dir);
    out << text;
    res.manifest_sha256 = sha256_hex(text);
  };

  auto lift_stage = [&]() {
    lift = std::make_shared<const RoughLift>(s.lift());
    write_lift_csv(*lift, file("lift_path.csv"), file("lift_area.csv"));
    res.metrics["lift_alpha"] = lift->alpha();
    res.metrics["lift_norm"] = lift->norm();
    res.metrics["chen_defect"] = chen_defect(*lift);
    res.metrics["symmetry_defect"] = symmetry_defect(*lift);
    res.metrics["driver_final"] = lift->path().values()(static_cast<Eigen::Index>(lift->grid().steps()), 0);
    return std::string();
  };

  auto solve_stage = [&]() {
    std::optional<MeasurePath> gamma;
    if (s.solve_control) gamma = MeasurePath::constant(lift->grid(), s.controls()[*s.solve_control]);
    RdeOptions ro;
    ro.quadrature_order = s.quadrature_order;
    const RdeSolution sol = solve_rde(cf, Eigen::VectorXd::Constant(1, s.y0), lift, gamma, ro);
    write_trajectory_csv(sol, file("trajectory.csv"));
    const ControlledPath p(lift, sol.path.values(), sol.path.gubinelli(), s.kappa);
    res.metrics["x_final"] = sol.path.values()(static_cast<Eigen::Index>(lift->grid().steps()), 0);
    res.metrics["kappa"] = p.kappa();
    res.metrics["remainder_2kappa"] = remainder_norms(p).remainder_2kappa;
    std::string detail;
    for (const auto& w : sol.warnings) detail += (detail.empty() ? "" : "; ") + w;
    return detail;
  };

  auto flow_stage = [&]() {
    FlowOptions fo;
    fo.workers = workers;
    ff = solve_flow(cf, lift, s.flow_space.axis(), fo);
    invert_flow(*ff, workers);
    const std::size_t n = lift->grid().steps();
    write_flow_csv(*ff, file("flow.csv"), n / s.slices);
    res.metrics["jacobian_defect"] = jacobian_defect(*ff);
    res.metrics["composition_defect"] = composition_defect(*ff);
    double first = 0.0, second = 0.0;
    for (std::size_t node : {n / 4, n / 2, 3 * n / 4, n}) {
      const auto d = flow_coefficient_defect(*ff, node);
      first = std::max(first, d.first);
      second = std::max(second, d.second);
    }
    res.metrics["flow_coefficient_defect_first"] = first;
    res.metrics["flow_coefficient_defect_second"] = second;
    return std::string();
  };

  auto value_stage = [&]() {
    DpOptions o;
    o.stride = s.dp_steps / s.slices;
    o.workers = workers;
    o.region = s.region;
    o.quadrature_order = s.quadrature_order;
    vdp = value_dp(s.reward, s.controls(), cf, *lift, space, Grid(s.horizon, s.dp_steps), o);
    write_value_csv(*vdp, file("value_dp.csv"));
    res.metrics["dp_valid_lo"] = vdp->valid_lo;
    res.metrics["dp_valid_hi"] = vdp->valid_hi;
    res.metrics["dp_dx"] = space.spacing();
    if (s.oracle == "drive_to_zero") res.metrics["dp_oracle_error"] = detail::drive_to_zero_error(*vdp, s);
    return std::string();
  };

  auto hjb_stage = [&]() {
    const HamiltonianSpec hs(s.reward, s.controls(), cf, s.quadrature_order);
    HjbOptions ho;
    ho.theta = s.theta;
    ho.theta_factor = s.theta_factor;
    ho.cfl = s.cfl;
    ho.substeps = s.hjb_substeps;
    ho.stride = lift->grid().steps() / s.slices;
    ho.workers = workers;
    const ValueGrid vhat = solve_hjb_transformed(hs, *ff, space, ho);
    const ValueGrid v = backmap_value(vhat, *ff, space, workers);
    write_value_csv(vhat, file("value_hjb_transformed.csv"));
    write_value_csv(v, file("value_hjb.csv"));
    const auto lip = lipschitz_probe(hs, *ff);
    res.metrics["lipschitz_p_ratio"] = lip.p_ratio;
    res.metrics["lipschitz_x_ratio"] = lip.x_ratio;
    if (vdp) {
      const auto agree = value_agreement(*vdp, v, 0.0, s.region.first, s.region.second);
      res.metrics["dp_hjb_sup_rel"] = agree.sup_rel;
      res.metrics["dp_hjb_sup_abs"] = agree.sup_abs;
    }
    if (s.oracle == "drive_to_zero") res.metrics["hjb_oracle_error"] = detail::drive_to_zero_error(v, s);
    return std::string();
  };

  auto study_stage = [&]() {
    std::vector<RoughLift> lifts{*lift};
    for (std::size_t k = 1; k < s.study_samples; ++k) lifts.push_back(s.lift(k));
    DpOptions o;
    o.workers = workers;
    o.region = s.region;
    o.quadrature_order = s.quadrature_order;
    const auto rows = smooth_approx_study(s.reward, s.controls(), cf, lifts, space, Grid(s.horizon, s.dp_steps), s.study_n,
                                          s.region.first, s.region.second, o, s.slices, opts.timings);
    write_study_csv(rows, file("study.csv"));
    res.metrics["study_monotone"] = nonincreasing_after_first_decrease(rows) ? 1.0 : 0.0;
    res.metrics["study_first_error"] = rows.front().sup_error;
    res.metrics["study_final_error"] = rows.back().sup_error;
    res.metrics["study_order"] = detail::study_order(rows);
    return std::string();
  };

  const std::map<std::string, std::function<std::string()>> run{{"lift", lift_stage}, {"solve", solve_stage}, {"flow", flow_stage},
                                                                {"value", value_stage}, {"hjb", hjb_stage}, {"study", study_stage}};
  for (const auto& name : s.stages) {
    try {
      res.stages.push_back({name, "ok", run.at(name)()});
    } catch (const CflError& e) {
      res.stages.push_back({name, "refused", e.what()});
    } catch (const ValidationError& e) {
      res.stages.push_back({name, "failed", e.what()});
      write_manifest();
      throw ValidationError("stage " + name + " failed: " + e.what());
    } catch (const NumericalError& e) {
      res.stages.push_back({name, "failed", e.what()});
      write_manifest();
      throw NumericalError("stage " + name + " failed: " + e.what());
    }
  }
  write_manifest();
  return res;
}

namespace detail {

struct InvariantBound {
  const char* metric;
  const char* bound;
  bool (*holds)(double);
};

inline const std::vector<InvariantBound>& invariant_bounds() {
  static const std::vector<InvariantBound> b{
      {"chen_defect", "<= 1e-10", [](double v) { return v <= 1e-10; }},
      {"symmetry_defect", "<= 1e-10", [](double v) { return v <= 1e-10; }},
      {"jacobian_defect", "<= 1e-6", [](double v) { return v <= 1e-6; }},
      {"composition_defect", "<= 1e-4", [](double v) { return v <= 1e-4; }},
      {"flow_coefficient_defect_first", "<= 1e-4", [](double v) { return v <= 1e-4; }},
      {"flow_coefficient_defect_second", "<= 1e-4", [](double v) { return v <= 1e-4; }},
      {"lipschitz_p_ratio", "finite", [](double v) { return std::isfinite(v); }},
      {"lipschitz_x_ratio", "finite", [](double v) { return std::isfinite(v); }},
      {"dp_hjb_sup_rel", "<= 0.05", [](double v) { return v <= 0.05; }},
      {"study_monotone", "= 1", [](double v) { return v == 1.0; }},
  };
  return b;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
      if (c == '"') quoted = !quoted;
      else if (c == ',' && !quoted) cells.push_back(cell), cell.clear();
      else cell += c;
    }
    cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace detail

/// Writes report.md into a run directory: stages, invariant checks, expectations, convergence table and the
/// DP-vs-HJB agreement. Missing artifacts are listed in the error.
inline std::string export_report(const std::string& run_dir, std::optional<std::string> out_file = std::nullopt) {
  namespace fs = std::filesystem;
  const fs::path dir(run_dir);
  std::vector<std::string> missing;
  for (const char* f : {"manifest.json", "metrics.csv", "expectations.csv"})
    if (!fs::is_regular_file(dir / f)) missing.push_back(f);
  nlohmann::json m;
  if (fs::is_regular_file(dir / "manifest.json")) {
    m = nlohmann::json::parse(read_file((dir / "manifest.json").string()), nullptr, false);
    if (m.is_discarded() || !m.is_object() || !m.contains("files") || !m.contains("stages"))
      throw ValidationError("manifest.json in " + run_dir + " is malformed");
    for (const auto& [f, h] : m["files"].items())
      if (!fs::is_regular_file(dir / f) && std::find(missing.begin(), missing.end(), f) == missing.end()) missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& f : missing) list += (list.empty() ? "" : ", ") + f;
    throw ValidationError("run directory " + run_dir + " is missing: " + list);
  }

  std::map<std::string, double> metrics;
  for (const auto& r : detail::read_rows((dir / "metrics.csv").string()))
    if (r.size() == 2) metrics[r[0]] = std::strtod(r[1].c_str(), nullptr);

  std::ostringstream md;
  md << "# Run report: " << m.value("name", std::string("?")) << "\n\n";
  md << "- config sha256: `" << m.value("config_sha256", std::string()) << "`\n";
  md << "- seed: " << (m["seed"].is_null() ? std::string("none") : m["seed"].dump()) << "\n";
  md << "- roughctl " << m["versions"].value("roughctl", std::string("?")) << "\n\n";

  md << "## Stages\n\n| stage | status | detail |\n|---|---|---|\n";
  for (const auto& st : m["stages"])
    md << "| " << st.value("name", std::string()) << " | " << st.value("status", std::string()) << " | "
       << st.value("detail", std::string()) << " |\n";

  md << "\n## Artifact integrity\n\n| file | sha256 | result |\n|---|---|---|\n";
  for (const auto& [f, h] : m["files"].items()) {
    const bool ok = sha256_hex(read_file((dir / f).string())) == h.get<std::string>();
    md << "| " << f << " | `" << h.get<std::string>().substr(0, 16) << "` | " << (ok ? "PASS" : "FAIL") << " |\n";
  }

  md << "\n## Invariant checks\n\n| check | value | bound | result |\n|---|---|---|---|\n";
  for (const auto& b : detail::invariant_bounds()) {
    const auto it = metrics.find(b.metric);
    if (it == metrics.end()) continue;
    md << "| " << b.metric << " | " << csv::format_double(it->second) << " | " << b.bound << " | "
       << (b.holds(it->second) ? "PASS" : "FAIL") << " |\n";
  }

  md << "\n## Expectations\n\n| metric | value | bound | result | basis |\n|---|---|---|---|---|\n";
  for (const auto& r : detail::read_rows((dir / "expectations.csv").string()))
    if (r.size() == 5) md << "| " << r[0] << " | " << r[1] << " | " << r[2] << " | " << r[3] << " | " << r[4] << " |\n";

  md << "\n## DP vs HJB agreement\n\n";
  if (metrics.count("dp_hjb_sup_rel")) {
    md << "- dp_hjb_sup_rel = " << csv::format_double(metrics["dp_hjb_sup_rel"]) << "\n";
    md << "- dp_hjb_sup_abs = " << csv::format_double(metrics["dp_hjb_sup_abs"]) << "\n";
  } else {
    md << "not available (hjb or value stage not run or refused)\n";
  }

  md << "\n## Convergence\n\n";
  if (fs::is_regular_file(dir / "study.csv")) {
    md << "| n | sup_error |\n|---|---|\n";
    for (const auto& r : detail::read_rows((dir / "study.csv").string()))
      if (r.size() >= 2) md << "| " << r[0] << " | " << r[1] << " |\n";
    if (metrics.count("study_order")) md << "\nfitted order (error ~ n^-p): p = " << csv::format_double(metrics["study_order"]) << "\n";
  } else {
    md << "no study in this run\n";
  }

  const std::string out = out_file.value_or((dir / "report.md").string());
  std::ofstream f(out, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + out);
  f << md.str();
  return out;
}

}  // namespace roughctl
