// Configuration-driven experiments: JSON scenario files, the runs they
// describe, their artifacts and the comparison against reference values.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "devilstick/error.hpp"
#include "devilstick/icpm.hpp"

namespace devilstick {

enum class Mode { Stabilize, ContinuousOnly, Aperiodic, Linearize, Gain };

const char* toString(Mode m);
Mode modeFromString(const std::string& s);

/// Exactly one of the two forms is set. `onManifold` lifts (q2, dq2) onto
/// the constraint curve with rho = 0 and rho_dot = 0.
struct InitialCondition {
  std::optional<FullState> full;
  std::optional<ReducedState> onManifold;

  FullState resolve(const VhcSpec& vhc) const;
};

struct IcpmSettings {
  numerics::Matrix q = numerics::Matrix::identity(5);
  double rWeight = 2.0;
  double eps1 = 1e-6;  // state perturbation
  double eps2 = 1e-6;  // impulse perturbation, N s
  /// Extra linearizations reported next to the main one (eps1 = eps2 = eps).
  std::vector<double> epsSweep{1e-4, 1e-5, 1e-6, 1e-7};
  /// Fixed gain in the I = K e convention; synthesized when absent.
  std::optional<numerics::Vector> gain;
};

struct ScenarioConfig {
  std::string name = "scenario";
  Mode mode = Mode::Stabilize;
  StickParams stick;
  VhcSpec vhc;
  std::optional<double> orbitEnergy;  // J/kg scale of the reduced energy
  SectionSpec section{std::numbers::pi / 6.0};
  SimConfig sim;
  IcpmSettings icpm;
  InitialCondition initial;
  int rotations = 8;

  /// Throws Error(Config) naming the offending field.
  void validate() const;
};

/// Parses and validates. Errors carry `source:line:` prefixes; unknown keys
/// are rejected.
ScenarioConfig parseScenario(const std::string& text, const std::string& source = "<config>");
ScenarioConfig loadScenario(const std::filesystem::path& path);

/// Every field written out, keys in sorted order.
nlohmann::json toJson(const ScenarioConfig& cfg);

nlohmann::json toJson(const numerics::Matrix& m);
nlohmann::json toJson(const LinearizedMap& lin);
nlohmann::json toJson(const IcpmGains& g);
nlohmann::json toJson(const CrossingEvent& ev);

struct ScenarioResult {
  nlohmann::json report;
  nlohmann::json crossings = nlohmann::json::array();
  TrajectoryLog log;
  bool hasTrajectory = false;
};

/// Runs the experiment the mode asks for. Throws Error on failure.
ScenarioResult runScenario(const ScenarioConfig& cfg);

/// Writes <name>.report.json, and for simulated modes <name>.trajectory.csv
/// and <name>.crossings.json, into `outDir` (created if needed).
void writeArtifacts(const ScenarioResult& result, const std::string& name, const std::filesystem::path& outDir);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitCompare = 4;

/// Maps an error to the exit code the command line reports.
int exitCodeFor(ErrorCode code);

/// Loads, runs and writes artifacts; messages go to `err`. Returns an exit code.
int runScenarioFile(const std::filesystem::path& configPath, const std::filesystem::path& outDir, std::ostream& out,
                    std::ostream& err);

struct CompareRow {
  std::string name;
  std::string path;
  bool pass = false;
  double maxAbsError = 0.0;
  double maxRelError = 0.0;
  std::string detail;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::vector<std::string> warnings;
  bool pass() const;
};

/// The reference holds {"quantities": [{name, path, expected, absTol, relTol}]}
/// where path is a JSON pointer into the report and expected is a number or a
/// (nested) array. A value passes when |x - e| <= max(absTol, relTol |e|) for
/// every element; omitted tolerances are 0. A quantity may give "min" and/or
/// "max" instead of "expected" to bound every element. Throws Error(Config) when the reference itself is malformed.
CompareResult compareReport(const nlohmann::json& report, const nlohmann::json& reference);
void printCompareTable(const CompareResult& result, std::ostream& os);

/// Parses a JSON file; syntax errors become Error(Config) with the line.
nlohmann::json loadJsonFile(const std::filesystem::path& path);

}  // namespace devilstick
