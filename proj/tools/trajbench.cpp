// trajbench: generate, reshape and benchmark trajectories, then report.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "trajbench/engine.hpp"
#include "trajbench/perf.hpp"

using namespace trajbench;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool verbose = false;
  fs::path out_dir;
};

Globals g;

void log(const std::string& msg) {
  if (g.verbose) std::cerr << "trajbench: " << msg << '\n';
}

fs::path output_path(const fs::path& p) {
  if (g.out_dir.empty() || p.is_absolute()) return p;
  return g.out_dir / p;
}

fs::path scratch_dir() {
  if (const char* env = std::getenv("TRAJBENCH_TMPDIR"); env && *env) return env;
  return fs::temp_directory_path();
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << text;
  if (!out) throw IoError("write failed on " + path.string());
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::uint64_t frames = 0;
  std::uint32_t atoms = 341;
  std::uint32_t mobile = 146;
  float precision = kDefaultPrecision;
  std::string format = "seq";
  fs::path path;
};

int cmd_generate(const GenerateArgs& a) {
  const auto path = output_path(a.path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto format = a.format == "dense" ? TrajFormat::dense : TrajFormat::seq;
  const auto gen = generate_synthetic(a.frames, a.atoms, g.seed, path, format, a.precision,
                                      std::min(a.mobile, a.atoms));
  const fs::path top = path.string() + ".top";
  write_topology(top, gen.system);
  if (format == TrajFormat::seq) seq_build_index(path);
  std::cout << "wrote " << gen.frames << " frames to " << path.string() << "\n"
            << "topology " << top.string() << "\n";
  return 0;
}

// ---- split / convert ------------------------------------------------------------

int cmd_split(std::uint32_t segments, const fs::path& src, const fs::path& dir) {
  const fs::path target = dir.empty() ? (g.out_dir.empty() ? fs::path{} : g.out_dir) : output_path(dir);
  const auto res = split_trajectory(src, segments, target);
  for (const auto& s : res.segments) std::cout << s.string() << '\n';
  std::cout << "split " << src.string() << " into " << segments << " segments in "
            << fmt(res.wall_seconds) << " s\n";
  return 0;
}

int cmd_convert(const fs::path& src, const fs::path& topology, const fs::path& dst) {
  const auto out = output_path(dst);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const auto n = convert_seq_to_dense(src, read_topology(topology), out);
  std::cout << "converted " << n << " frames to " << out.string() << '\n';
  return 0;
}

// ---- bench ----------------------------------------------------------------------------

struct BenchArgs {
  std::string strategy = "shared_seq";
  std::vector<std::uint32_t> workers{1};
  std::uint32_t repeats = 5;
  std::uint32_t workload = 1;
  fs::path topology;
  std::vector<fs::path> trajectories;
  fs::path report;
  std::string machine;
  std::string policy = "median";
  double theta = 1.5;
  double kappa = 2.0;
  double timeout = 600.0;
  std::uint64_t frames = 0;  // in_memory
  std::uint32_t atoms = 341;
  std::uint32_t mobile = 146;
  bool skip_index_check = false;
};

std::string hostname() {
  char buf[256] = {};
  if (::gethostname(buf, sizeof buf - 1) != 0) return "unknown";
  return buf;
}

// Segments for `workers` subfile ranks, splitting a single input on demand.
std::vector<fs::path> subfile_segments(const BenchArgs& a, std::uint32_t workers,
                                       std::map<std::uint32_t, std::vector<fs::path>>& cache) {
  if (a.trajectories.size() != 1) return a.trajectories;
  if (auto it = cache.find(workers); it != cache.end()) return it->second;
  const auto dir = scratch_dir() / ("trajbench-" + std::to_string(::getpid()) + "-seg" +
                                    std::to_string(workers));
  log("splitting " + a.trajectories[0].string() + " into " + std::to_string(workers) +
      " segments under " + dir.string());
  const auto res = split_trajectory(a.trajectories[0], workers, dir);
  log("split took " + fmt(res.wall_seconds) + " s");
  return cache[workers] = res.segments;
}

StrategyConfig make_config(const BenchArgs& a, Strategy s, std::uint32_t workers,
                           std::map<std::uint32_t, std::vector<fs::path>>& cache) {
  StrategyConfig c;
  c.strategy = s;
  c.n_workers = workers;
  c.workload_factor = a.workload;
  c.topology_path = a.topology;
  c.seed = g.seed;
  c.n_frames = a.frames;
  c.n_atoms = a.atoms;
  c.n_mobile = a.mobile;
  c.validate_chain_index = !a.skip_index_check;
  c.timeout_seconds = a.timeout;
  c.trajectory_paths = s == Strategy::subfile ? subfile_segments(a, workers, cache) : a.trajectories;
  return c;
}

int cmd_bench(const BenchArgs& a) {
  const Strategy s = strategy_from_string(a.strategy);
  if (s != Strategy::in_memory && a.trajectories.empty())
    throw CLI::ValidationError("bench", "at least one trajectory is required");
  if (s == Strategy::in_memory && a.frames == 0 && a.trajectories.empty())
    throw CLI::ValidationError("bench", "in_memory needs --frames");
  if (a.repeats < 1) throw CLI::ValidationError("--repeats", "must be >= 1");

  std::map<std::uint32_t, std::vector<fs::path>> segments;
  for (std::uint32_t n : a.workers) {
    auto probe = make_config(a, s, n, segments);
    try {
      probe.validate();
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError("bench", e.what());
    }
  }
  // The baseline always runs in this session so S(N) compares like with like.
  const auto baseline_cfg = make_config(a, s, a.workers.front(), segments);
  log("serial baseline");
  const auto serial = run_serial(baseline_cfg);
  const auto n_frames = serial.rmsd.size();

  ReportInput input;
  input.machine = a.machine.empty() ? hostname() : a.machine;
  input.serial = serial.timings.front();
  input.policy = a.policy == "fastest" ? StragglerPolicy::fastest_group(a.kappa)
                                       : StragglerPolicy::median(a.theta);

  for (std::uint32_t n : a.workers) {
    const auto cfg = make_config(a, s, n, segments);
    BenchRun run;
    run.strategy = s;
    run.n_workers = n;
    run.workload_factor = a.workload;
    run.n_frames_total = n_frames;
    for (std::uint32_t rep = 0; rep < a.repeats; ++rep) {
      log("N=" + std::to_string(n) + " repeat " + std::to_string(rep + 1) + "/" +
          std::to_string(a.repeats));
      auto res = run_parallel(cfg);
      if (res.rmsd.size() != n_frames) throw RunError(-1, "frame count changed between runs");
      run.repeats.push_back({std::move(res.timings), std::move(res.rmsd)});
    }
    input.runs.push_back(std::move(run));
  }

  const auto report = build_report(input);
  const auto json_path = output_path(a.report);
  write_text(json_path, report_to_json(report));
  auto csv_path = json_path;
  csv_path.replace_extension(".csv");
  write_text(csv_path, timings_csv(input.runs));

  std::cout << "strategy " << to_string(s) << ", X=" << a.workload << ", " << n_frames
            << " frames, serial t_total " << fmt(report.serial.t_total) << " s, R_comp/IO "
            << (std::isinf(report.serial.r_comp_io) ? "inf" : fmt(report.serial.r_comp_io, 3))
            << "\n";
  std::cout << "     N   t_total      std        S        E  stragglers\n";
  for (const auto& p : report.points) {
    char line[160];
    std::snprintf(line, sizeof line, "%6u %9.4f %8.4f %8.3f %8.3f  %zu\n", p.n_workers,
                  p.t_total_mean, p.t_total_std, p.speedup, p.efficiency, p.stragglers.size());
    std::cout << line;
  }
  std::cout << "heuristic " << report.advice.heuristic << ": " << report.advice.rationale << "\n"
            << "report " << json_path.string() << "\ncsv " << csv_path.string() << '\n';

  for (const auto& [n, segs] : segments) {
    std::error_code ec;
    if (a.trajectories.size() == 1 && !segs.empty()) fs::remove_all(segs.front().parent_path(), ec);
  }
  return 0;
}

// ---- report ---------------------------------------------------------------------------

int cmd_report(const fs::path& plot, const std::vector<fs::path>& inputs) {
  std::vector<Report> reports;
  for (const auto& p : inputs) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open report " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    reports.push_back(report_from_json(ss.str()));
  }
  for (const auto& r : reports) {
    std::cout << r.machine << " " << to_string(r.strategy) << " X=" << r.workload_factor << "\n";
    for (const auto& p : r.points)
      std::cout << "  N=" << p.n_workers << " t_total=" << fmt(p.t_total_mean)
                << " S=" << fmt(p.speedup, 3) << " E=" << fmt(p.efficiency, 3) << '\n';
  }
  if (!plot.empty()) {
    const auto base = output_path(plot);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());
    for (const auto& path : emit_plots(reports, base)) std::cout << "wrote " << path.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory analysis I/O and strong-scaling benchmark"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", g.seed, "Random seed for synthetic data");
  app.add_flag("-v,--verbose", g.verbose, "Progress messages on stderr");
  app.add_option("--out", g.out_dir, "Directory for relative output paths");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Write a synthetic trajectory and its topology");
  c_gen->add_option("--frames", gen.frames, "Number of frames")->required();
  c_gen->add_option("--atoms", gen.atoms, "Atoms per frame");
  c_gen->add_option("--mobile", gen.mobile, "Atoms selected for the RMSD");
  c_gen->add_option("--precision", gen.precision, "SEQ quantization (1/nm)")
      ->check(CLI::PositiveNumber);
  c_gen->add_option("--format", gen.format, "seq or dense")->check(CLI::IsMember({"seq", "dense"}));
  c_gen->add_option("path", gen.path, "Output trajectory")->required();

  std::uint32_t segments = 1;
  fs::path split_src, split_dir;
  auto* c_split = app.add_subcommand("split", "Split a SEQ trajectory into contiguous segments");
  c_split->add_option("--segments", segments, "Number of segments")->required()->check(CLI::PositiveNumber);
  c_split->add_option("--dir", split_dir, "Segment directory (default: next to the source)");
  c_split->add_option("src", split_src, "Source trajectory")->required()->check(CLI::ExistingFile);

  fs::path conv_src, conv_top, conv_dst;
  auto* c_conv = app.add_subcommand("convert", "Convert SEQ to DENSE keeping the selected atoms");
  c_conv->add_option("src", conv_src, "Source SEQ trajectory")->required()->check(CLI::ExistingFile);
  c_conv->add_option("topology", conv_top, "Topology file")->required()->check(CLI::ExistingFile);
  c_conv->add_option("dst", conv_dst, "Output DENSE file")->required();

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Serial baseline plus repeated parallel runs");
  c_bench->add_option("--strategy", bench.strategy, "shared_seq|subfile|dense_parallel|chain|in_memory")
      ->check(CLI::IsMember({"shared_seq", "subfile", "dense_parallel", "chain", "in_memory"}));
  c_bench->add_option("--workers", bench.workers, "Worker counts (comma separated)")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  c_bench->add_option("--repeats", bench.repeats, "Repeats per worker count");
  c_bench->add_option("--workload", bench.workload, "RMSD repetitions per frame")->check(CLI::PositiveNumber);
  c_bench->add_option("--topology", bench.topology, "Topology file")->check(CLI::ExistingFile);
  c_bench->add_option("--report", bench.report, "Report JSON path (CSV written alongside)")->required();
  c_bench->add_option("--machine", bench.machine, "Machine label (default: host name)");
  c_bench->add_option("--policy", bench.policy, "Straggler policy: median or fastest")
      ->check(CLI::IsMember({"median", "fastest"}));
  c_bench->add_option("--theta", bench.theta, "Median policy factor")->check(CLI::PositiveNumber);
  c_bench->add_option("--kappa", bench.kappa, "Fastest-group policy factor")->check(CLI::PositiveNumber);
  c_bench->add_option("--timeout", bench.timeout, "Per-run timeout in seconds")->check(CLI::PositiveNumber);
  c_bench->add_option("--frames", bench.frames, "in_memory: number of frames");
  c_bench->add_option("--atoms", bench.atoms, "in_memory: atoms per frame");
  c_bench->add_option("--mobile", bench.mobile, "in_memory: selected atoms");
  c_bench->add_flag("--skip-index-check", bench.skip_index_check,
                    "chain: trust segment indices without comparing size and mtime");
  c_bench->add_option("trajectories", bench.trajectories, "Trajectory file(s)")->check(CLI::ExistingFile);

  fs::path plot;
  std::vector<fs::path> report_inputs;
  auto* c_report = app.add_subcommand("report", "Summarize reports and draw charts");
  c_report->add_option("--plot", plot, "Chart base path; writes <stem>_{total,speedup,ranks}.svg");
  c_report->add_option("reports", report_inputs, "Report JSON file(s)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_gen) return cmd_generate(gen);
    if (*c_split) return cmd_split(segments, split_src, split_dir);
    if (*c_conv) return cmd_convert(conv_src, conv_top, conv_dst);
    if (*c_bench) return cmd_bench(bench);
    if (*c_report) return cmd_report(plot, report_inputs);
  } catch (const CLI::ParseError& e) {
    std::cerr << "trajbench: " << e.what() << '\n';
    return 1;
  } catch (const RunError& e) {
    std::cerr << "trajbench: run failed: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "trajbench: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
