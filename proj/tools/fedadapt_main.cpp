// fedadapt: run, sweep and report federated adapter sessions.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedadapt/config.hpp"
#include "fedadapt/error.hpp"
#include "fedadapt/session.hpp"

namespace fs = std::filesystem;
using namespace fedadapt;

namespace {

enum Exit { kOk = 0, kFailure = 1, kNotConverged = 2, kConfigError = 3 };

std::string trace_name(const std::string& tag, std::uint64_t seed) {
  return tag + "-seed" + std::to_string(seed) + ".jsonl";
}

std::vector<std::uint64_t> seeds_for(const SessionConfig& c, const std::optional<std::uint64_t>& seed) {
  return seed ? std::vector<std::uint64_t>{*seed} : c.seeds;
}

std::string fmt_time(const std::optional<double>& t) {
  if (!t) return "not reached";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fs", *t);
  return buf;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out) {
  const SessionConfig c = load_config(config_path);
  fs::create_directories(out);
  bool all_reached = true;
  for (std::uint64_t s : seeds_for(c, seed)) {
    std::optional<double> reference = c.reference_accuracy;
    if (!reference && c.mode != Mode::full_ft) {
      RunResult ref = run_reference(c, s);
      ref.trace.write_file((out / trace_name("reference", s)).string());
      reference = ref.reference_accuracy;
    }
    const RunResult r = run_mode(c, s, reference);
    const fs::path path = out / trace_name(mode_name(c.mode), s);
    r.trace.write_file(path.string());
    all_reached = all_reached && r.outcome.reached;
    std::printf("%s seed=%llu rounds=%zu reference=%.4f best=%.4f time_to_target=%s trace=%s\n",
                mode_name(c.mode), static_cast<unsigned long long>(s), r.outcome.rounds,
                r.reference_accuracy, r.outcome.best_accuracy,
                fmt_time(r.outcome.reached ? std::optional<double>(r.outcome.time_to_target) : std::nullopt).c_str(),
                path.string().c_str());
  }
  return all_reached ? kOk : kNotConverged;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("sweep grid: \"" + item + "\" is not a count");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int cmd_sweep(const std::string& config_path, std::optional<std::uint64_t> seed, const fs::path& out,
              const std::string& depths, const std::string& widths) {
  SessionConfig c = load_config(config_path);
  if (seed) c.seeds = {*seed};
  if (!depths.empty()) c.sweep_depths = parse_list(depths);
  if (!widths.empty()) c.sweep_widths = parse_list(widths);
  c.validate();
  if (c.sweep_depths.empty() || c.sweep_widths.empty()) throw ConfigError("sweep: depths and widths must be non-empty");
  std::vector<AdapterConfig> grid;
  for (std::size_t d : c.sweep_depths)
    for (std::size_t w : c.sweep_widths) grid.push_back({d, w});

  const std::vector<SweepRow> rows = sweep(c, grid);
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  std::printf("%-6s %-6s %-6s", "seed", "depth", "width");
  for (double t : c.targets) std::printf(" %12s", ("t@" + std::to_string(t).substr(0, 4)).c_str());
  std::printf(" %14s\n", "bytes");
  for (const SweepRow& r : rows) {
    std::printf("%-6llu %-6zu %-6zu", static_cast<unsigned long long>(r.seed), r.config.depth, r.config.width);
    nlohmann::ordered_json times = nlohmann::ordered_json::array();
    for (const auto& t : r.times) {
      std::printf(" %12s", fmt_time(t).c_str());
      times.push_back(t ? nlohmann::ordered_json(*t) : nlohmann::ordered_json());
    }
    std::printf(" %14zu\n", r.total_bytes);
    table.push_back({{"seed", r.seed},
                     {"depth", r.config.depth},
                     {"width", r.config.width},
                     {"targets", c.targets},
                     {"time_to_accuracy", times},
                     {"total_bytes", r.total_bytes},
                     {"reached", r.reached}});
  }
  fs::create_directories(out);
  std::ofstream(out / "sweep.json") << table.dump(2) << '\n';
  return kOk;
}

int cmd_report(const std::vector<std::string>& traces, const std::string& config_path,
               std::optional<std::uint64_t> seed, const std::string& out) {
  std::vector<double> targets{0.99, 0.95, 0.90};
  if (!config_path.empty()) targets = load_config(config_path).targets;
  nlohmann::ordered_json sessions = nlohmann::ordered_json::array();
  std::size_t total_bytes = 0;
  double total_joules = 0.0;
  for (const std::string& path : traces) {
    const Trace t = Trace::read_file(path);
    TraceSummary s = summarize(t);
    if (seed && s.seed != *seed) continue;
    for (const TraceEvent* e : t.of_type("summary"))
      if (!e->at("reference_accuracy").is_null()) s.reference_accuracy = e->at("reference_accuracy").get<double>();
    nlohmann::ordered_json j = summary_json(s, t, targets);
    nlohmann::ordered_json clients = nlohmann::ordered_json::array();
    for (const auto& [id, ct] : s.per_client)
      clients.push_back({{"client", id}, {"rounds", ct.rounds}, {"bytes", ct.bytes}, {"joules", ct.joules}});
    j["per_client"] = clients;
    j["trace"] = path;
    total_bytes += s.total_bytes;
    total_joules += s.total_joules;
    sessions.push_back(j);
  }
  nlohmann::ordered_json report{{"sessions", sessions},
                                {"total_bytes", total_bytes},
                                {"total_joules", total_joules}};
  if (out.empty() || out == "-") {
    std::cout << report.dump(2) << '\n';
  } else {
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    f << report.dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated adapter fine-tuning simulator"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";

  auto* run = app.add_subcommand("run", "Run sessions in the configured mode");
  run->add_option("--config", config, "Session config (JSON)")->required();
  run->add_option("--seed", seed, "Run only this seed");
  run->add_option("--out", out, "Output directory for traces")->capture_default_str();

  std::string depths, widths;
  auto* sw = app.add_subcommand("sweep", "Fixed-adapter sessions over a depth x width grid");
  sw->add_option("--config", config, "Session config (JSON)")->required();
  sw->add_option("--seed", seed, "Run only this seed");
  sw->add_option("--out", out, "Output directory for sweep.json")->capture_default_str();
  sw->add_option("--depths", depths, "Comma-separated depths (overrides config)");
  sw->add_option("--widths", widths, "Comma-separated widths (overrides config)");

  std::vector<std::string> traces;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Summarize trace files");
  rep->add_option("traces", traces, "Trace files")->required();
  rep->add_option("--config", config, "Config supplying the relative targets");
  rep->add_option("--seed", seed, "Only sessions with this seed");
  rep->add_option("--out", report_out, "Write the report here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config, seed, out);
    if (sw->parsed()) return cmd_sweep(config, seed, out, depths, widths);
    if (rep->parsed()) return cmd_report(traces, config, seed, report_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
