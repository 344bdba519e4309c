// cdiff: command-line front end for the collaborative diffusion harness.
//
//   cdiff run <config>          run a scenario file
//   cdiff preset <name>         run a built-in scenario
//   cdiff summarize <csv>       aggregate a result CSV
//   cdiff graph show            print the concept graph
//
// Exit codes: 0 ok, 1 usage, 2 config, 3 domain, 4 io, 5 integrity.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "cdiff/harness.hpp"

namespace {

int exit_code(cdiff::ErrorKind kind) {
  switch (kind) {
    case cdiff::ErrorKind::config: return 2;
    case cdiff::ErrorKind::domain: return 3;
    case cdiff::ErrorKind::io: return 4;
    case cdiff::ErrorKind::integrity: return 5;
  }
  return 1;
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  int jobs = 0;
  std::optional<int> repetitions;
};

void report(const cdiff::ScenarioOutput& out, std::size_t cells, std::size_t reps, std::size_t users) {
  std::cout << "rows: " << out.rows.size() << " (" << cells << " cells x " << reps << " reps x "
            << users << " users)\n"
            << "csv: " << out.csv_path << "\n"
            << "summary: " << out.summary_path << "\n"
            << "images: " << out.images.size() << "\n";
}

int run_config(cdiff::ScenarioConfig cfg, const Globals& g) {
  if (g.seed) cfg.seed = *g.seed;
  if (g.repetitions) {
    if (*g.repetitions < 1) cdiff::fail(cdiff::ErrorKind::config, "--reps must be >= 1");
    cfg.repetitions = *g.repetitions;
  }
  const int jobs = g.jobs > 0 ? g.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto out = cdiff::run_scenario(cfg, g.out_dir, jobs);
  report(out, cfg.cell_count(), static_cast<std::size_t>(cfg.repetitions), cfg.prompts.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collaborative split-diffusion simulator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "override the master seed");
  app.add_option("--out-dir", g.out_dir, "directory for CSV and PGM artifacts")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--reps", g.repetitions, "override repetitions per cell");

  std::string config_path;
  auto* run = app.add_subcommand("run", "run a scenario config");
  run->add_option("config", config_path, "config file")->required();

  std::string preset_name;
  auto* preset = app.add_subcommand("preset", "run a built-in scenario");
  preset->add_option("name", preset_name, "preset name")
      ->required()
      ->check(CLI::IsMember({"ber_sweep", "split_sweep", "mismatch", "arch_compare"}));
  bool print_only = false;
  preset->add_flag("--print", print_only, "print the preset config and exit");

  std::string csv_path;
  auto* summarize = app.add_subcommand("summarize", "aggregate a result CSV");
  summarize->add_option("csv", csv_path, "result CSV")->required();

  std::string graph_path;
  auto* graph = app.add_subcommand("graph", "concept graph tools");
  graph->require_subcommand(1);
  auto* show = graph->add_subcommand("show", "print the concept graph");
  show->add_option("--graph", graph_path, "graph asset (default: built-in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run) return run_config(cdiff::load_config(config_path), g);
    if (*preset) {
      if (print_only) {
        std::cout << cdiff::preset_texts().at(preset_name);
        return 0;
      }
      return run_config(cdiff::preset_config(preset_name), g);
    }
    if (*summarize) {
      std::filesystem::create_directories(g.out_dir);
      const auto stem = std::filesystem::path(csv_path).stem().string();
      const auto out = (std::filesystem::path(g.out_dir) / (stem + "_summary.csv")).string();
      std::cout << cdiff::emit_summary(csv_path, out);
      std::cerr << "summary: " << out << "\n";
      return 0;
    }
    if (*show) {
      const auto gr = graph_path.empty() ? cdiff::default_graph() : cdiff::load_graph(graph_path);
      std::cout << cdiff::write_graph(gr);
      return 0;
    }
  } catch (const cdiff::Error& e) {
    std::cerr << "error [" << cdiff::to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
