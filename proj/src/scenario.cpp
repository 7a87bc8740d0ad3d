#include "devilstick/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "devilstick/error.hpp"

namespace devilstick {

using nlohmann::json;
using numerics::Matrix;
using numerics::Vector;

namespace {

int lineAt(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Reads a parsed config while remembering where each key sits in the source
// text, so that validation errors can point at a line.
class ConfigReader {
 public:
  ConfigReader(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
    std::ostringstream os;
    os << source_ << ':' << lineAt(text_, locate(path)) << ": " << pointer(path) << ": " << msg;
    throw Error(ErrorCode::Config, os.str());
  }

  void requireObject(const json& j, const std::vector<std::string>& path, const std::set<std::string>& allowed) const {
    if (!j.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : j.items()) {
      if (allowed.count(key) == 0) {
        std::vector<std::string> child = path;
        child.push_back(key);
        fail(child, "unknown key");
      }
    }
  }

  double number(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_number()) fail(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(path, "must be finite");
    return v;
  }

  double positive(const json& j, const std::vector<std::string>& path) const {
    const double v = number(j, path);
    if (!(v > 0.0)) fail(path, "must be positive");
    return v;
  }

  Vector vector(const json& j, const std::vector<std::string>& path, std::size_t n) const {
    if (!j.is_array() || j.size() != n) fail(path, "expected an array of " + std::to_string(n) + " numbers");
    Vector out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(number(j[i], withIndex(path, i)));
    return out;
  }

  // A number s means s I, an array of n means a diagonal, else n x n rows.
  Matrix square(const json& j, const std::vector<std::string>& path, std::size_t n) const {
    if (j.is_number()) {
      const double s = number(j, path);
      Matrix m = Matrix::identity(n);
      m *= s;
      return m;
    }
    if (!j.is_array() || j.size() != n) fail(path, "expected a number, a diagonal or a square array");
    if (j[0].is_number()) return Matrix::diagonal(vector(j, path, n));
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector row = vector(j[i], withIndex(path, i), n);
      for (std::size_t c = 0; c < n; ++c) m(i, c) = row[c];
    }
    return m;
  }

  static std::vector<std::string> withIndex(std::vector<std::string> path, std::size_t i) {
    path.push_back(std::to_string(i));
    return path;
  }

 private:
  static std::string pointer(const std::vector<std::string>& path) {
    std::string out;
    for (const std::string& p : path) out += "/" + p;
    return out.empty() ? "/" : out;
  }

  // Offset of the innermost key on the path that can be found, searching
  // each key after its parent. Array indices are skipped.
  std::size_t locate(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const std::string& key : path) {
      if (!key.empty() && std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
      const std::size_t hit = text_.find('"' + key + '"', pos);
      if (hit == std::string::npos) break;
      pos = hit;
    }
    return pos;
  }

  const std::string& text_;
  std::string source_;
};

json parseJsonText(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << source << ':' << lineAt(text, e.byte == 0 ? 0 : e.byte - 1) << ": syntax error: " << e.what();
    throw Error(ErrorCode::Config, os.str());
  }
}

std::string readFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Config, path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json toJson(const Mat2& m) { return json::array({json::array({m[0][0], m[0][1]}), json::array({m[1][0], m[1][1]})}); }

json toJson(const std::vector<std::complex<double>>& eig) {
  json out = json::array();
  for (const auto& e : eig) out.push_back(json::array({e.real(), e.imag()}));
  return out;
}

json toJson(const FeasibilityMonitor& f) {
  const double first = f.firstViolationTime();
  return {{"forceSignConstant", f.appliedForceSignConstant()},
          {"continuousForceSignConstant", f.report().forceSignConstant},
          {"rInside", f.report().rInside},
          {"minForce", f.minForce()},
          {"maxForce", f.maxForce()},
          {"maxAbsArm", f.maxAbsArm()},
          {"violations", f.violations()},
          {"firstViolationTime", std::isnan(first) ? json(nullptr) : json(first)}};
}

json sweepJson(const PoincareMap& map, const SectionState& zStar, double rStar, const LinearizedMap& ref,
               const std::vector<double>& epsSweep) {
  std::vector<std::future<LinearizedMap>> runs;
  for (double eps : epsSweep) {
    runs.push_back(std::async(std::launch::async, [&map, &zStar, rStar, eps] {
      return linearizeMap(map, zStar, rStar, eps, eps);
    }));
  }
  json out = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const LinearizedMap lin = runs[i].get();
    json entry = toJson(lin);
    entry["eps"] = epsSweep[i];
    entry["deviation"] = sweepDeviation(lin, ref);
    entry["spectralRadius"] = numerics::spectralRadius(lin.a);
    out.push_back(entry);
  }
  return out;
}

json runJson(const StabilizationRun& run, const FullState& initial, const Plant& plant, bool feedback) {
  const double e0 = energy({initial.theta, initial.dtheta}, plant.vhc, plant.params);
  double drift = 0.0;
  for (const TrajectorySample& s : run.log.samples) drift = std::max(drift, std::abs(s.energy - e0) / std::abs(e0));

  json impulses = json::array();
  json energies = json::array();
  json dq2 = json::array();
  json active = json::array();
  bool impulsesPositive = feedback;
  bool dq2Increasing = true;
  for (std::size_t i = 0; i < run.log.crossings.size(); ++i) {
    const CrossingEvent& c = run.log.crossings[i];
    impulses.push_back(c.impulse);
    energies.push_back(c.energy);
    dq2.push_back(c.z.dtheta());
    if (c.highGainActive) active.push_back(c.k);
    if (feedback && !(c.impulse > 0.0)) impulsesPositive = false;
    if (i > 0 && !(c.z.dtheta() > run.log.crossings[i - 1].z.dtheta())) dq2Increasing = false;
  }
  json feas = toJson(run.feasibility);
  feas["halfLength"] = 0.5 * plant.params.length;
  return {{"initialEnergy", e0},
          {"finalEnergy", run.finalEnergy},
          {"duration", run.duration},
          {"rotations", run.rotationTimes.size()},
          {"rotationTimes", run.rotationTimes},
          {"crossingCount", run.log.crossings.size()},
          {"impulses", impulses},
          {"energyAtCrossings", energies},
          {"dq2AtCrossings", dq2},
          {"highGainCrossings", active},
          {"lastActiveCrossing", run.lastActiveCrossing},
          {"allImpulsesPositive", impulsesPositive},
          {"dq2Increasing", dq2Increasing},
          {"energyDrift", drift},
          {"feasibility", feas}};
}

}  // namespace

const char* toString(Mode m) {
  switch (m) {
    case Mode::Stabilize: return "stabilize";
    case Mode::ContinuousOnly: return "continuous-only";
    case Mode::Aperiodic: return "aperiodic";
    case Mode::Linearize: return "linearize";
    case Mode::Gain: return "gain";
  }
  return "unknown";
}

Mode modeFromString(const std::string& s) {
  for (Mode m : {Mode::Stabilize, Mode::ContinuousOnly, Mode::Aperiodic, Mode::Linearize, Mode::Gain}) {
    if (s == toString(m)) return m;
  }
  throw Error(ErrorCode::Config, "unknown mode '" + s + "'");
}

FullState InitialCondition::resolve(const VhcSpec& vhc) const {
  if (full) return *full;
  if (onManifold) return stateOnManifold(onManifold->q2, onManifold->dq2, vhc);
  throw Error(ErrorCode::Config, "no initial state given");
}

void ScenarioConfig::validate() const {
  const auto wrap = [](const char* field, auto&& check) {
    try {
      check();
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, std::string(field) + ": " + e.what());
    }
  };
  wrap("stick", [&] { stick.validate(); });
  wrap("vhc", [&] { vhc.validate(); });
  wrap("section", [&] { section.validate(); });
  wrap("sim", [&] { sim.validate(); });

  const bool needsOrbit = mode == Mode::Stabilize || mode == Mode::Linearize || mode == Mode::Gain;
  if (needsOrbit) {
    if (!orbitEnergy) throw Error(ErrorCode::Config, std::string("orbit.energy is required in mode ") + toString(mode));
    const OrbitClass cls = classifyOrbit({*orbitEnergy, vhc}, stick);
    if (cls != OrbitClass::Propeller) {
      throw Error(ErrorCode::Config, std::string("orbit is ") + toString(cls) + ", a propeller orbit is required");
    }
  }
  if (mode == Mode::Aperiodic && hasPeriodicOrbits(vhc)) {
    throw Error(ErrorCode::Config, "aperiodic mode needs vhc.phase with cot(phase) != 0");
  }
  const bool simulates = mode == Mode::Stabilize || mode == Mode::ContinuousOnly || mode == Mode::Aperiodic;
  if (simulates) {
    if (initial.full.has_value() == initial.onManifold.has_value()) throw Error(ErrorCode::Config, "initialState needs exactly one of full, onManifold");
    if (initial.full && !initial.full->isFinite()) throw Error(ErrorCode::Config, "initialState.full must be finite");
    if (rotations < 1) throw Error(ErrorCode::Config, "rotations must be at least 1");
  }
  if (!(icpm.rWeight > 0.0)) throw Error(ErrorCode::Config, "icpm.r must be positive");
  if (!(icpm.eps1 > 0.0) || !(icpm.eps2 > 0.0)) throw Error(ErrorCode::Config, "icpm.eps1 and icpm.eps2 must be positive");
  for (double e : icpm.epsSweep) {
    if (!(e > 0.0)) throw Error(ErrorCode::Config, "icpm.epsSweep entries must be positive");
  }
  if (icpm.q.rows() != 5 || icpm.q.cols() != 5) throw Error(ErrorCode::Config, "icpm.q must be 5 x 5");
  for (std::size_t i = 0; i < 5; ++i) {
    if (icpm.q(i, i) < 0.0) throw Error(ErrorCode::Config, "icpm.q must have a non-negative diagonal");
    for (std::size_t j = 0; j < 5; ++j) {
      if (icpm.q(i, j) != icpm.q(j, i)) throw Error(ErrorCode::Config, "icpm.q must be symmetric");
    }
  }
  if (icpm.gain && icpm.gain->size() != 5) throw Error(ErrorCode::Config, "icpm.gain must have 5 entries");
}

ScenarioConfig parseScenario(const std::string& text, const std::string& source) {
  const json root = parseJsonText(text, source);
  const ConfigReader rd(text, source);
  rd.requireObject(root, {},
                   {"name", "mode", "stick", "vhc", "orbit", "section", "sim", "highGain", "icpm", "initialState",
                    "rotations"});
  ScenarioConfig cfg;
  if (root.contains("name")) {
    if (!root["name"].is_string() || root["name"].get<std::string>().empty()) rd.fail({"name"}, "expected a non-empty string");
    cfg.name = root["name"].get<std::string>();
  }
  if (!root.contains("mode") || !root["mode"].is_string()) rd.fail({"mode"}, "required string");
  try {
    cfg.mode = modeFromString(root["mode"].get<std::string>());
  } catch (const Error&) {
    rd.fail({"mode"}, "expected one of stabilize, continuous-only, aperiodic, linearize, gain");
  }

  if (root.contains("stick")) {
    const json& j = root["stick"];
    rd.requireObject(j, {"stick"}, {"mass", "length", "inertia", "gravity"});
    if (j.contains("mass")) cfg.stick.mass = rd.positive(j["mass"], {"stick", "mass"});
    if (j.contains("length")) cfg.stick.length = rd.positive(j["length"], {"stick", "length"});
    if (j.contains("inertia")) cfg.stick.inertia = rd.positive(j["inertia"], {"stick", "inertia"});
    if (j.contains("gravity")) cfg.stick.gravity = rd.positive(j["gravity"], {"stick", "gravity"});
  }
  if (root.contains("vhc")) {
    const json& j = root["vhc"];
    rd.requireObject(j, {"vhc"}, {"radius", "phase", "kp", "kd"});
    if (j.contains("radius")) cfg.vhc.radius = rd.positive(j["radius"], {"vhc", "radius"});
    if (j.contains("phase")) cfg.vhc.phase = rd.number(j["phase"], {"vhc", "phase"});
    const auto gain2 = [&](const char* key, Mat2& dst) {
      if (!j.contains(key)) return;
      const Matrix m = rd.square(j[key], {"vhc", key}, 2);
      dst = Mat2{Vec2{m(0, 0), m(0, 1)}, Vec2{m(1, 0), m(1, 1)}};
    };
    gain2("kp", cfg.vhc.kp);
    gain2("kd", cfg.vhc.kd);
  }
  if (root.contains("orbit")) {
    const json& j = root["orbit"];
    rd.requireObject(j, {"orbit"}, {"energy"});
    if (j.contains("energy")) cfg.orbitEnergy = rd.number(j["energy"], {"orbit", "energy"});
  }
  if (root.contains("section")) {
    const json& j = root["section"];
    rd.requireObject(j, {"section"}, {"q2Star"});
    if (j.contains("q2Star")) cfg.section.q2Star = rd.number(j["q2Star"], {"section", "q2Star"});
  }
  if (root.contains("sim")) {
    const json& j = root["sim"];
    rd.requireObject(j, {"sim"}, {"stepSize", "eventTolerance", "maxTime", "logStride"});
    if (j.contains("stepSize")) cfg.sim.stepSize = rd.positive(j["stepSize"], {"sim", "stepSize"});
    if (j.contains("eventTolerance")) cfg.sim.eventTolerance = rd.positive(j["eventTolerance"], {"sim", "eventTolerance"});
    if (j.contains("maxTime")) cfg.sim.maxTime = rd.positive(j["maxTime"], {"sim", "maxTime"});
    if (j.contains("logStride")) {
      if (!j["logStride"].is_number_unsigned() || j["logStride"].get<std::size_t>() == 0) {
        rd.fail({"sim", "logStride"}, "expected a positive integer");
      }
      cfg.sim.logStride = j["logStride"].get<std::size_t>();
    }
  }
  if (root.contains("highGain")) {
    const json& j = root["highGain"];
    rd.requireObject(j, {"highGain"}, {"mu", "eps3", "timeout"});
    if (j.contains("mu")) cfg.sim.highGain.mu = rd.positive(j["mu"], {"highGain", "mu"});
    if (j.contains("eps3")) cfg.sim.highGain.eps3 = rd.positive(j["eps3"], {"highGain", "eps3"});
    if (j.contains("timeout")) cfg.sim.highGain.timeout = rd.positive(j["timeout"], {"highGain", "timeout"});
  }
  if (root.contains("icpm")) {
    const json& j = root["icpm"];
    rd.requireObject(j, {"icpm"}, {"q", "r", "eps1", "eps2", "epsSweep", "gain"});
    if (j.contains("q")) cfg.icpm.q = rd.square(j["q"], {"icpm", "q"}, 5);
    if (j.contains("r")) cfg.icpm.rWeight = rd.positive(j["r"], {"icpm", "r"});
    if (j.contains("eps1")) cfg.icpm.eps1 = rd.positive(j["eps1"], {"icpm", "eps1"});
    if (j.contains("eps2")) cfg.icpm.eps2 = rd.positive(j["eps2"], {"icpm", "eps2"});
    if (j.contains("epsSweep")) {
      const json& s = j["epsSweep"];
      if (!s.is_array()) rd.fail({"icpm", "epsSweep"}, "expected an array");
      cfg.icpm.epsSweep.clear();
      for (std::size_t i = 0; i < s.size(); ++i) {
        cfg.icpm.epsSweep.push_back(rd.positive(s[i], ConfigReader::withIndex({"icpm", "epsSweep"}, i)));
      }
    }
    if (j.contains("gain")) cfg.icpm.gain = rd.vector(j["gain"], {"icpm", "gain"}, 5);
  }
  if (root.contains("initialState")) {
    const json& j = root["initialState"];
    rd.requireObject(j, {"initialState"}, {"full", "onManifold"});
    if (j.contains("full") == j.contains("onManifold")) {
      rd.fail({"initialState"}, "give exactly one of full, onManifold");
    }
    if (j.contains("full")) {
      const Vector v = rd.vector(j["full"], {"initialState", "full"}, 6);
      std::array<double, 6> a{};
      std::copy(v.begin(), v.end(), a.begin());
      cfg.initial.full = FullState::fromArray(a);
    } else {
      const json& m = j["onManifold"];
      rd.requireObject(m, {"initialState", "onManifold"}, {"q2", "dq2"});
      if (!m.contains("q2") || !m.contains("dq2")) rd.fail({"initialState", "onManifold"}, "needs q2 and dq2");
      cfg.initial.onManifold =
          ReducedState{rd.number(m["q2"], {"initialState", "onManifold", "q2"}),
                       rd.number(m["dq2"], {"initialState", "onManifold", "dq2"})};
    }
  }
  if (root.contains("rotations")) {
    if (!root["rotations"].is_number_integer() || root["rotations"].get<long>() < 1) {
      rd.fail({"rotations"}, "expected a positive integer");
    }
    cfg.rotations = root["rotations"].get<int>();
  }

  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, source + ": " + e.what());
  }
  return cfg;
}

ScenarioConfig loadScenario(const std::filesystem::path& path) {
  ScenarioConfig cfg = parseScenario(readFile(path), path.string());
  return cfg;
}

json toJson(const Matrix& m) {
  json out = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) out.push_back(m.row(i));
  return out;
}

json toJson(const ScenarioConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["mode"] = toString(cfg.mode);
  j["stick"] = {{"mass", cfg.stick.mass},
                {"length", cfg.stick.length},
                {"inertia", cfg.stick.inertia},
                {"gravity", cfg.stick.gravity}};
  j["vhc"] = {{"radius", cfg.vhc.radius}, {"phase", cfg.vhc.phase}, {"kp", toJson(cfg.vhc.kp)}, {"kd", toJson(cfg.vhc.kd)}};
  if (cfg.orbitEnergy) j["orbit"] = {{"energy", *cfg.orbitEnergy}};
  j["section"] = {{"q2Star", cfg.section.q2Star}};
  j["sim"] = {{"stepSize", cfg.sim.stepSize},
              {"eventTolerance", cfg.sim.eventTolerance},
              {"maxTime", cfg.sim.maxTime},
              {"logStride", cfg.sim.logStride}};
  j["highGain"] = {{"mu", cfg.sim.highGain.mu}, {"eps3", cfg.sim.highGain.eps3}, {"timeout", cfg.sim.highGain.timeout}};
  j["icpm"] = {{"q", toJson(cfg.icpm.q)},
               {"r", cfg.icpm.rWeight},
               {"eps1", cfg.icpm.eps1},
               {"eps2", cfg.icpm.eps2},
               {"epsSweep", cfg.icpm.epsSweep}};
  if (cfg.icpm.gain) j["icpm"]["gain"] = *cfg.icpm.gain;
  if (cfg.initial.full) {
    const auto a = cfg.initial.full->toArray();
    j["initialState"] = {{"full", std::vector<double>(a.begin(), a.end())}};
  } else if (cfg.initial.onManifold) {
    j["initialState"] = {{"onManifold", {{"q2", cfg.initial.onManifold->q2}, {"dq2", cfg.initial.onManifold->dq2}}}};
  }
  j["rotations"] = cfg.rotations;
  return j;
}

json toJson(const LinearizedMap& lin) {
  return {{"a", toJson(lin.a)},
          {"b", lin.b},
          {"eps1", lin.eps1},
          {"eps2", lin.eps2},
          {"rStar", lin.rStar},
          {"zStar", lin.zStar.z}};
}

json toJson(const IcpmGains& g) {
  return {{"k", g.k},
          {"kLqr", g.kLqr},
          {"q", toJson(g.q)},
          {"r", g.rWeight},
          {"closedLoopSpectralRadius", g.closedLoopSpectralRadius},
          {"openLoopEigenvalues", toJson(g.openLoopEigenvalues)},
          {"closedLoopEigenvalues", toJson(g.closedLoopEigenvalues)},
          {"controllabilitySingularValues", g.controllabilitySingularValues},
          {"stabilizabilityMargin", g.stabilizabilityMargin},
          {"dareResidual", g.dareResidual}};
}

json toJson(const CrossingEvent& ev) {
  return {{"k", ev.k},
          {"time", ev.time},
          {"z", ev.z.z},
          {"energy", ev.energy},
          {"arm", ev.arm},
          {"impulse", ev.impulse},
          {"dq2Desired", ev.dq2Desired},
          {"highGainActive", ev.highGainActive},
          {"highGainDuration", ev.highGainDuration},
          {"dq2AfterEpisode", ev.dq2AfterEpisode},
          {"peakHighGainForce", ev.peakHighGainForce}};
}

ScenarioResult runScenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const Plant plant{cfg.stick, cfg.vhc};
  const PoincareMap map(plant, cfg.section, cfg.sim);
  ScenarioResult res;
  json& rep = res.report;
  rep["name"] = cfg.name;
  rep["mode"] = toString(cfg.mode);
  rep["config"] = toJson(cfg);

  numerics::Vector gain;
  SectionState zStar;
  if (cfg.mode == Mode::Stabilize || cfg.mode == Mode::Linearize || cfg.mode == Mode::Gain) {
    const OrbitSpec orbit{*cfg.orbitEnergy, cfg.vhc};
    zStar = fixedPoint(orbit, cfg.section, cfg.stick);
    const SectionState image = map.flow(zStar);
    double residual = 0.0;
    for (std::size_t i = 0; i < 5; ++i) residual = std::max(residual, std::abs(image.z[i] - zStar.z[i]));
    const double rStar = map.armAt(zStar);
    rep["fixedPoint"] = {{"z", zStar.z}, {"rStar", rStar}, {"residual", residual}, {"energy", *cfg.orbitEnergy}};

    const LinearizedMap lin = linearizeMap(map, zStar, rStar, cfg.icpm.eps1, cfg.icpm.eps2);
    json linJson = toJson(lin);
    linJson["eigenvalues"] = toJson(numerics::eigenvaluesDense(lin.a));
    linJson["spectralRadius"] = numerics::spectralRadius(lin.a);
    linJson["sweep"] = sweepJson(map, zStar, rStar, lin, cfg.icpm.epsSweep);
    rep["linearization"] = linJson;

    if (cfg.mode != Mode::Linearize) {
      const bool synthesize = !cfg.icpm.gain || cfg.mode == Mode::Gain;
      if (synthesize) {
        const IcpmGains g = synthesizeGain(lin, cfg.icpm.q, cfg.icpm.rWeight);
        rep["gain"] = toJson(g);
        gain = g.k;
      }
      if (cfg.icpm.gain) {
        gain = *cfg.icpm.gain;
        rep["appliedGain"] = {{"k", gain}, {"closedLoopSpectralRadius", closedLoopSpectralRadius(lin.a, lin.b, gain)}};
      }
    }
  }

  if (cfg.mode == Mode::Stabilize || cfg.mode == Mode::ContinuousOnly || cfg.mode == Mode::Aperiodic) {
    const FullState initial = cfg.initial.resolve(cfg.vhc);
    StabilizeOptions opts;
    opts.rotations = cfg.rotations;
    if (cfg.mode == Mode::Stabilize) opts.gain = gain;
    StabilizationRun run = stabilizeRun(initial, map, zStar, opts);
    rep["initialState"] = initial.toArray();
    rep["run"] = runJson(run, initial, plant, cfg.mode == Mode::Stabilize);
    for (const CrossingEvent& ev : run.log.crossings) res.crossings.push_back(toJson(ev));
    res.log = std::move(run.log);
    res.hasTrajectory = true;
  }
  return res;
}

void writeArtifacts(const ScenarioResult& result, const std::string& name, const std::filesystem::path& outDir) {
  std::filesystem::create_directories(outDir);
  const auto open = [&](const std::string& suffix) {
    const std::filesystem::path p = outDir / (name + suffix);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorCode::Config, p.string() + ": cannot write");
    return os;
  };
  {
    std::ofstream os = open(".report.json");
    os << result.report.dump(2) << '\n';
  }
  if (result.hasTrajectory) {
    std::ofstream csv = open(".trajectory.csv");
    result.log.writeCsv(csv);
    std::ofstream cj = open(".crossings.json");
    cj << result.crossings.dump(2) << '\n';
  }
}

int exitCodeFor(ErrorCode code) { return code == ErrorCode::Config ? kExitConfig : kExitRuntime; }

int runScenarioFile(const std::filesystem::path& configPath, const std::filesystem::path& outDir, std::ostream& out,
                    std::ostream& err) {
  ScenarioConfig cfg;
  try {
    cfg = loadScenario(configPath);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exitCodeFor(e.code());
  }
  try {
    const ScenarioResult res = runScenario(cfg);
    writeArtifacts(res, cfg.name, outDir);
    const json& rep = res.report;
    out << cfg.name << " (" << toString(cfg.mode) << ")";
    if (rep.contains("run")) {
      const json& run = rep["run"];
      out << std::fixed << std::setprecision(4) << ": " << run["rotations"].get<std::size_t>() << " rotations in "
          << run["duration"].get<double>() << " s, final E " << run["finalEnergy"].get<double>()
          << ", last active crossing " << run["lastActiveCrossing"].get<int>();
    } else if (rep.contains("gain")) {
      out << ": closed-loop spectral radius " << rep["gain"]["closedLoopSpectralRadius"].get<double>();
    } else if (rep.contains("linearization")) {
      out << ": open-loop spectral radius " << rep["linearization"]["spectralRadius"].get<double>();
    }
    out << " -> " << (outDir / (cfg.name + ".report.json")).string() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << configPath.string() << ": " << e.what() << '\n';
    return exitCodeFor(e.code());
  } catch (const std::exception& e) {
    err << configPath.string() << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

bool CompareResult::pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const CompareRow& r) { return r.pass; });
}

namespace {

void flatten(const json& j, std::vector<double>& out, std::vector<std::size_t>& shape, std::size_t depth, bool& ok) {
  if (j.is_number()) {
    out.push_back(j.get<double>());
    return;
  }
  if (!j.is_array()) {
    ok = false;
    return;
  }
  if (shape.size() <= depth) shape.push_back(j.size());
  else if (shape[depth] != j.size()) ok = false;
  for (const json& e : j) flatten(e, out, shape, depth + 1, ok);
}

}  // namespace

CompareResult compareReport(const json& report, const json& reference) {
  if (!reference.is_object()) throw Error(ErrorCode::Config, "reference must be a JSON object");
  for (const auto& [key, value] : reference.items()) {
    if (key != "quantities" && key != "description") throw Error(ErrorCode::Config, "reference: unknown key '" + key + "'");
  }
  CompareResult result;
  if (!reference.contains("quantities") || !reference["quantities"].is_array()) {
    throw Error(ErrorCode::Config, "reference: 'quantities' must be an array");
  }
  const json& qs = reference["quantities"];
  if (qs.empty()) result.warnings.push_back("reference lists no quantities; nothing was compared");

  for (std::size_t i = 0; i < qs.size(); ++i) {
    const json& q = qs[i];
    const std::string where = "reference: quantities[" + std::to_string(i) + "]";
    if (!q.is_object()) throw Error(ErrorCode::Config, where + " must be an object");
    for (const auto& [key, value] : q.items()) {
      if (key != "name" && key != "path" && key != "expected" && key != "absTol" && key != "relTol" && key != "min" &&
          key != "max") {
        throw Error(ErrorCode::Config, where + ": unknown key '" + key + "'");
      }
    }
    if (!q.contains("name") || !q["name"].is_string()) throw Error(ErrorCode::Config, where + ": 'name' must be a string");
    if (!q.contains("path") || !q["path"].is_string()) throw Error(ErrorCode::Config, where + ": 'path' must be a string");
    const bool bounded = q.contains("min") || q.contains("max");
    if (bounded == q.contains("expected")) {
      throw Error(ErrorCode::Config, where + ": give either 'expected' or 'min'/'max'");
    }
    const auto number = [&](const char* key, double fallback, bool nonNegative) {
      if (!q.contains(key)) return fallback;
      if (!q[key].is_number() || (nonNegative && q[key].get<double>() < 0.0)) {
        throw Error(ErrorCode::Config, where + ": '" + key + "' must be a" + (nonNegative ? " non-negative" : "") +
                                           " number");
      }
      return q[key].get<double>();
    };
    const double absTol = number("absTol", 0.0, true);
    const double relTol = number("relTol", 0.0, true);
    const double lower = number("min", -std::numeric_limits<double>::infinity(), false);
    const double upper = number("max", std::numeric_limits<double>::infinity(), false);
    if (bounded && (q.contains("absTol") || q.contains("relTol"))) {
      throw Error(ErrorCode::Config, where + ": tolerances only apply to 'expected'");
    }

    CompareRow row;
    row.name = q["name"].get<std::string>();
    row.path = q["path"].get<std::string>();
    std::vector<double> expected;
    std::vector<std::size_t> expectedShape;
    if (!bounded) {
      bool expectedOk = true;
      flatten(q["expected"], expected, expectedShape, 0, expectedOk);
      if (!expectedOk || expected.empty()) throw Error(ErrorCode::Config, where + ": 'expected' must be numeric");
    }

    json::json_pointer ptr;
    try {
      ptr = json::json_pointer(row.path);
    } catch (const json::exception&) {
      throw Error(ErrorCode::Config, where + ": '" + row.path + "' is not a JSON pointer");
    }
    if (!report.contains(ptr)) {
      row.detail = "missing in report";
      result.rows.push_back(row);
      continue;
    }
    std::vector<double> actual;
    std::vector<std::size_t> actualShape;
    bool actualOk = true;
    flatten(report.at(ptr), actual, actualShape, 0, actualOk);
    if (!actualOk || actual.empty() || (!bounded && (actualShape != expectedShape || actual.size() != expected.size()))) {
      row.detail = "shape mismatch";
      result.rows.push_back(row);
      continue;
    }
    row.pass = true;
    for (std::size_t e = 0; e < actual.size(); ++e) {
      double err = 0.0;
      bool ok = false;
      std::ostringstream os;
      if (bounded) {
        err = std::max({0.0, lower - actual[e], actual[e] - upper});
        ok = err == 0.0;
        os << "element " << e << ": got " << actual[e] << ", allowed [" << lower << ", " << upper << "]";
      } else {
        err = std::abs(actual[e] - expected[e]);
        if (expected[e] != 0.0) row.maxRelError = std::max(row.maxRelError, err / std::abs(expected[e]));
        ok = err <= std::max(absTol, relTol * std::abs(expected[e]));
        os << "element " << e << ": got " << actual[e] << ", expected " << expected[e];
      }
      row.maxAbsError = std::max(row.maxAbsError, err);
      if (!ok) {
        if (row.pass) row.detail = os.str();
        row.pass = false;
      }
    }
    result.rows.push_back(row);
  }
  return result;
}

void printCompareTable(const CompareResult& result, std::ostream& os) {
  for (const std::string& w : result.warnings) os << "warning: " << w << '\n';
  std::size_t width = 8;
  for (const CompareRow& r : result.rows) width = std::max(width, r.name.size());
  const auto flags = os.flags();
  os << std::left << std::setw(static_cast<int>(width)) << "quantity" << "  result  " << std::setw(12) << "max abs err"
     << "  " << std::setw(12) << "max rel err" << "  detail\n";
  std::size_t failed = 0;
  for (const CompareRow& r : result.rows) {
    if (!r.pass) ++failed;
    os << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << (r.pass ? "PASS  " : "FAIL  ") << "  "
       << std::setw(12) << std::setprecision(4) << std::scientific << r.maxAbsError << "  " << std::setw(12)
       << r.maxRelError << "  " << (r.detail.empty() ? r.path : r.detail) << '\n';
  }
  os.flags(flags);
  os << result.rows.size() - failed << '/' << result.rows.size() << " quantities within tolerance\n";
}

json loadJsonFile(const std::filesystem::path& path) { return parseJsonText(readFile(path), path.string()); }

}  // namespace devilstick
