#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "malsde/app.hpp"

namespace fs = std::filesystem;
using namespace malsde;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::vector<std::string> sets;
};

std::string compiler_id() {
#if defined(__clang__)
  return "clang " __clang_version__;
#elif defined(__GNUC__)
  return "gcc " __VERSION__;
#else
  return "unknown";
#endif
}

int run(const std::string& sub, const Options& o) {
  Json doc = Json::object();
  std::string text;
  if (!o.config.empty()) {
    text = read_text_file(o.config);
    doc = parse_json_text(text);
    if (!doc.is_object()) throw ConfigError("config root must be an object");
  }
  for (const auto& s : o.sets) apply_override(doc, s);
  if (o.seed) doc["seed"] = *o.seed;
  if (o.workers) doc["workers"] = *o.workers;
  const ExperimentConfig cfg = parse_config(doc, text);

  std::string out = o.out;
  if (out.empty()) {
    const char* env = std::getenv("MALSDE_OUT");
    out = env && *env ? env : "malsde-out";
  }
  fs::create_directories(out);

  const auto start = std::chrono::steady_clock::now();
  RunResult res = run_subcommand(sub, cfg);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Json manifest;
  manifest["subcommand"] = sub;
  manifest["config"] = to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["workers"] = cfg.workers;
  manifest["version"] = kVersion;
  manifest["compiler"] = compiler_id();
  manifest["wall_seconds"] = wall;
  manifest["pass"] = res.pass;
  manifest["warnings"] = res.warnings;
  manifest["summary"] = res.summary;
  Json outputs = Json::array();
  for (const auto& [name, table] : res.files) {
    table.write((fs::path(out) / name).string());
    outputs.push_back({{"file", name}, {"rows", table.size()}});
  }
  manifest["outputs"] = outputs;
  std::ofstream((fs::path(out) / (sub + ".manifest.json")).string()) << manifest.dump(2) << '\n';

  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << sub << ": " << (res.pass ? "pass" : "FAIL") << " (" << out << ", " << wall << " s)\n";
  return res.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Malliavin weights for Euler chains of SDEs"};
  app.require_subcommand(1);
  Options o;
  std::string chosen;
  for (const char* name : {"simulate", "density", "bounds", "oracle", "converge"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--workers", o.workers, "worker threads (0 = hardware)");
    sub->add_option("--out", o.out, "output directory (default $MALSDE_OUT or ./malsde-out)");
    sub->add_option("--set", o.sets, "override, dotted.key=value");
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run(chosen, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DegenerateCovariance& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const UnsupportedOrder& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
