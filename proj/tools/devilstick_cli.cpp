// Command-line front end: runs scenario files, prints linearizations and
// gains, and compares reports against reference values.
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "devilstick/error.hpp"
#include "devilstick/scenario.hpp"

namespace fs = std::filesystem;
using namespace devilstick;

namespace {

fs::path resolveOutDir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("DEVILSTICK_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "out";
}

struct JobOutput {
  std::string out;
  std::string err;
  int code = kExitOk;
};

// Runs `work` over every config on up to `jobs` threads and replays the
// captured output in input order. Returns the worst exit code.
template <typename Work>
int runBatch(const std::vector<std::string>& configs, unsigned jobs, Work work) {
  std::vector<JobOutput> results(configs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      std::ostringstream out;
      std::ostringstream err;
      results[i].code = work(configs[i], out, err);
      results[i].out = out.str();
      results[i].err = err.str();
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(configs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  int worst = kExitOk;
  for (const JobOutput& r : results) {
    std::cout << r.out;
    std::cerr << r.err;
    worst = std::max(worst, r.code);
  }
  return worst;
}

int analyze(const std::string& path, Mode mode, const std::optional<fs::path>& outDir, std::ostream& out,
            std::ostream& err) {
  try {
    ScenarioConfig cfg = loadScenario(path);
    cfg.mode = mode;
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, path + ": " + e.what());
    }
    const ScenarioResult res = runScenario(cfg);
    if (outDir) writeArtifacts(res, cfg.name, *outDir);
    out << res.report.dump(2) << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exitCodeFor(e.code());
  } catch (const std::exception& e) {
    err << path << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Devil-stick propeller motion: constrained simulation and impulse-controlled Poincare map"};
  app.require_subcommand(1);
  unsigned jobs = 1;
  app.add_option("--jobs,-j", jobs, "Configs processed in parallel")->check(CLI::PositiveNumber);

  std::vector<std::string> configs;
  std::string outFlag;

  CLI::App* simulate = app.add_subcommand("simulate", "Run scenario files and write CSV/JSON artifacts");
  simulate->add_option("--config,-c", configs, "Scenario file (repeatable)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out,-o", outFlag, "Output directory (else $DEVILSTICK_OUT_DIR, else ./out)");

  std::vector<std::string> linConfigs;
  std::string linOut;
  CLI::App* linearize = app.add_subcommand("linearize", "Print the fixed point and the linearized return map");
  linearize->add_option("--config,-c", linConfigs, "Scenario file (repeatable)")->required()->check(CLI::ExistingFile);
  linearize->add_option("--out,-o", linOut, "Also write the report here");

  std::vector<std::string> gainConfigs;
  std::string gainOut;
  CLI::App* gain = app.add_subcommand("gain", "Print the linearization and the synthesized impulse gain");
  gain->add_option("--config,-c", gainConfigs, "Scenario file (repeatable)")->required()->check(CLI::ExistingFile);
  gain->add_option("--out,-o", gainOut, "Also write the report here");

  std::string reportPath;
  std::string referencePath;
  CLI::App* compare = app.add_subcommand("compare", "Compare a report against reference values");
  compare->add_option("--report,-r", reportPath, "Report JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("--reference", referencePath, "Reference JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (simulate->parsed()) {
    const fs::path outDir = resolveOutDir(outFlag);
    return runBatch(configs, jobs, [&](const std::string& c, std::ostream& out, std::ostream& err) {
      return runScenarioFile(c, outDir, out, err);
    });
  }
  const auto optionalOut = [](const std::string& flag) {
    return flag.empty() ? std::optional<fs::path>{} : std::optional<fs::path>{flag};
  };
  if (linearize->parsed()) {
    return runBatch(linConfigs, jobs, [&](const std::string& c, std::ostream& out, std::ostream& err) {
      return analyze(c, Mode::Linearize, optionalOut(linOut), out, err);
    });
  }
  if (gain->parsed()) {
    return runBatch(gainConfigs, jobs, [&](const std::string& c, std::ostream& out, std::ostream& err) {
      return analyze(c, Mode::Gain, optionalOut(gainOut), out, err);
    });
  }
  if (compare->parsed()) {
    try {
      const CompareResult result = compareReport(loadJsonFile(reportPath), loadJsonFile(referencePath));
      printCompareTable(result, std::cout);
      return result.pass() ? kExitOk : kExitCompare;
    } catch (const Error& e) {
      std::cerr << e.what() << '\n';
      return exitCodeFor(e.code());
    }
  }
  return kExitConfig;
}
