#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajbench/model.hpp"

namespace trajbench {

// ---- scalar metrics --------------------------------------------------------

/// max t_n over ranks. Throws std::invalid_argument when empty.
double total_time(std::span<const RankTiming> timings);

struct ScalingPoint {
  std::uint32_t n_workers = 1;
  double t_total = 0.0;
  double speedup = 0.0;
  double efficiency = 0.0;
};

/// S = t_serial / t_total, E = S / N. Throws on non-positive times or N = 0.
std::vector<ScalingPoint> speedup_efficiency(
    double t_serial, std::span<const std::pair<std::uint32_t, double>> points);

inline constexpr double kNoIo = std::numeric_limits<double>::infinity();

/// t_comp / t_io of a serial run; kNoIo when t_io == 0. Throws on negative input.
double ratio_comp_io(double t_comp, double t_io);

/// mean t_comp / mean t_comm across ranks; nullopt when nothing was communicated.
std::optional<double> ratio_comp_comm(std::span<const RankTiming> timings);

/// Expected compute/I-O ratio after repeating the computation X times.
double theoretical_ratio(std::uint32_t workload_factor, double ratio_at_one);

// ---- stragglers --------------------------------------------------------------

struct StragglerPolicy {
  enum class Kind { median_factor, fastest_group_factor };
  Kind kind = Kind::median_factor;
  double factor = 1.5;

  /// Flag t_n >= factor * median(t_n).
  static StragglerPolicy median(double theta = 1.5) { return {Kind::median_factor, theta}; }
  /// Flag t_n >= factor * mean of the fastest group, the ranks whose t_n lies
  /// in the lowest quarter of the observed [min, max] range.
  static StragglerPolicy fastest_group(double kappa = 2.0) {
    return {Kind::fastest_group_factor, kappa};
  }
  std::string name() const;
};

struct StragglerVerdict {
  std::uint32_t rank = 0;
  double t_n = 0.0;
  double threshold = 0.0;
  bool flagged = false;
};

/// Throws std::invalid_argument for fewer than two ranks.
std::vector<StragglerVerdict> detect_stragglers(std::span<const double> t_n, StragglerPolicy policy);
std::vector<StragglerVerdict> detect_stragglers(std::span<const RankTiming> timings,
                                                StragglerPolicy policy);

// ---- strategy advice ----------------------------------------------------------

struct Advice {
  int heuristic = 2;  // 1: compute bound, 2: I/O bound
  double r_comp_io = 0.0;
  bool shared_file_ok = false;
  std::optional<std::uint32_t> core_ceiling;
  Strategy recommended = Strategy::dense_parallel;
  std::optional<Strategy> fallback;
  std::string rationale;

  friend bool operator==(const Advice&, const Advice&) = default;
};

/// r > 1 selects the compute-bound branch; r <= 1 the I/O-bound one.
Advice advise_strategy(double r_comp_io);

// ---- reports ------------------------------------------------------------------

/// Per-rank components in stacked-bar order.
inline constexpr std::array<std::string_view, 7> kComponentNames = {
    "t_comp", "t_io", "t_comm", "t_opening_trajectory", "t_end_loop", "t_overhead1", "t_overhead2"};
using Components = std::array<double, kComponentNames.size()>;

Components components_of(const RankTiming& t);
/// Rank averages of every component.
Components rank_average(std::span<const RankTiming> timings);

inline constexpr double kOutlierFactor = 3.0;

struct StragglerEntry {
  std::size_t repeat = 0;
  std::uint32_t rank = 0;
  double t_n = 0.0;
  double threshold = 0.0;
  friend bool operator==(const StragglerEntry&, const StragglerEntry&) = default;
};

struct ReportPoint {
  std::uint32_t n_workers = 1;
  double t_total_mean = 0.0;
  double t_total_std = 0.0;
  double speedup = 0.0;
  double efficiency = 0.0;
  std::optional<double> r_comp_comm;
  Components component_means{};
  Components component_stds{};
  std::vector<double> repeat_totals;
  std::vector<std::size_t> excluded_repeats;
  std::vector<StragglerEntry> stragglers;
  std::vector<std::vector<RankTiming>> rank_timings;  // [repeat][rank]
};

struct SerialSummary {
  double t_total = 0.0;
  double t_comp = 0.0;
  double t_io = 0.0;
  double r_comp_io = 0.0;
};

struct Report {
  std::string machine;
  Strategy strategy = Strategy::shared_seq;
  std::uint32_t workload_factor = 1;
  std::uint32_t repeats = 0;
  std::uint64_t n_frames_total = 0;
  std::string straggler_policy;
  SerialSummary serial;
  std::vector<ReportPoint> points;
  Advice advice;
};

struct ReportInput {
  std::string machine;
  RankTiming serial;              // single-rank baseline, same session
  std::vector<BenchRun> runs;     // same strategy and workload, any worker counts
  StragglerPolicy policy = StragglerPolicy::median();
};

/// Throws std::invalid_argument for an empty or inconsistent run set.
Report build_report(const ReportInput& input);

/// Report made from one serial run alone (a single N = 1 point).
Report serial_only_report(const std::string& machine, Strategy strategy,
                          std::uint32_t workload_factor, std::uint64_t n_frames,
                          const RankTiming& serial);

std::string report_to_json(const Report& report);
/// Throws std::invalid_argument on schema violations.
Report report_from_json(std::string_view text);

/// One row per (repeat, rank).
std::string timings_csv(std::span<const BenchRun> runs);

struct Chart {
  std::string name;  // "total", "speedup" or "ranks"
  std::string svg;
};

/// Total time and speedup curves overlay every report; the per-rank chart
/// uses the largest worker count of the first report.
std::vector<Chart> render_charts(std::span<const Report> reports);

/// Writes <stem>_<chart>.svg next to `base` and returns the paths.
std::vector<std::filesystem::path> emit_plots(std::span<const Report> reports,
                                              const std::filesystem::path& base);

}  // namespace trajbench
