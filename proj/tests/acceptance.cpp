// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "testing.hpp"
#include "trajbench/engine.hpp"
#include "trajbench/perf.hpp"

using namespace trajbench;
using trajbench::testing::TempDir;

namespace {

using clock_type = std::chrono::steady_clock;

double since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool cond, const std::string& what) {
  if (!cond && o.pass) {
    o.pass = false;
    o.detail = what;
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 ------------------------------------------------------------------------

Outcome oracle_equivalence() {
  Outcome o;
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(1);
  double worst = 0;
  int fallbacks = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = testing::random_points(rng, 146);
    const auto b = testing::random_points(rng, 146);
    const auto q = rmsd_qcp_detailed(a, b);
    fallbacks += q.used_fallback;
    worst = std::max(worst, std::abs(q.rmsd - rmsd_kabsch_oracle(a, b)));
  }
  const double secs = since(t0);
  require(o, worst <= 1e-9, "max |qcp - oracle| = " + fmt("%.3g", worst));
  require(o, fallbacks == 0, std::to_string(fallbacks) + " oracle fallbacks");
  require(o, secs < 10.0, "took " + fmt("%.2f", secs) + " s");
  if (o.pass) o.detail = "max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s";
  return o;
}

// ---- 2 ------------------------------------------------------------------------

Outcome invariance_suite() {
  Outcome o;
  std::mt19937_64 rng(2);
  const auto a = testing::random_points(rng, 146);
  const std::array<double, 9> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const std::array<double, 9> quarter_z = {0, -1, 0, 1, 0, 0, 0, 0, 1};
  double worst_zero = std::max({rmsd_qcp(a, a), rmsd_qcp(testing::transform(a, eye, {1.0, -2.0, 0.5}), a),
                                rmsd_qcp(testing::transform(a, quarter_z), a)});
  std::uniform_real_distribution<double> shift(-20, 20);
  double worst_sym = 0, worst_bound = -1e300;
  for (int i = 0; i < 1000; ++i) {
    const auto x = testing::random_points(rng, 146);
    const auto y = testing::random_points(rng, 146);
    const double r = rmsd_qcp(x, y);
    worst_sym = std::max(worst_sym, std::abs(r - rmsd_qcp(y, x)));
    worst_bound = std::max(worst_bound, r - testing::raw_rmsd(testing::centered(x), testing::centered(y)));
    const auto moved = testing::transform(x, testing::random_rotation(rng), {shift(rng), shift(rng), shift(rng)});
    worst_zero = std::max(worst_zero, rmsd_qcp(moved, x));
  }
  require(o, worst_zero <= 1e-7, "rigid copy rmsd " + fmt("%.3g", worst_zero));
  require(o, worst_sym <= 1e-9, "asymmetry " + fmt("%.3g", worst_sym));
  require(o, worst_bound <= 0.0, "exceeds unrotated rmsd by " + fmt("%.3g", worst_bound));
  if (o.pass)
    o.detail = "rigid max " + fmt("%.2e", worst_zero) + ", symmetry max " + fmt("%.2e", worst_sym);
  return o;
}

// ---- 3 and 5 share the runs ---------------------------------------------------

std::vector<RankTiming> g_emitted;  // every RankTiming produced by the engine
RankTiming g_serial;
std::vector<RepeatRecord> g_parallel;

struct EquivalenceData {
  TempDir dir{"tb-accept"};
  fs::path seq, top, dense;
  std::vector<fs::path> segments;
};

Outcome parallel_equals_serial(EquivalenceData& d) {
  Outcome o;
  d.seq = d.dir / "traj.seq";
  d.top = d.dir / "traj.top";
  d.dense = d.dir / "traj.dense";
  const auto gen = generate_synthetic(10000, 341, 2024, d.seq, TrajFormat::seq, kDefaultPrecision, 146);
  write_topology(d.top, gen.system);
  seq_build_index(d.seq);
  convert_seq_to_dense(d.seq, gen.system, d.dense);
  d.segments = split_trajectory(d.seq, 4, d.dir / "segments").segments;

  auto cfg = [&](Strategy s, std::uint32_t n) {
    StrategyConfig c;
    c.strategy = s;
    c.n_workers = n;
    c.topology_path = d.top;
    c.trajectory_paths = s == Strategy::dense_parallel                           ? std::vector{d.dense}
                         : (s == Strategy::subfile || s == Strategy::chain) ? d.segments
                                                                                   : std::vector{d.seq};
    return c;
  };

  const auto serial = run_serial(cfg(Strategy::shared_seq, 1));
  g_emitted.insert(g_emitted.end(), serial.timings.begin(), serial.timings.end());
  g_serial = serial.timings.front();
  require(o, serial.rmsd.size() == 10000, "serial run returned " + std::to_string(serial.rmsd.size()));

  std::string summary;
  for (auto s : {Strategy::shared_seq, Strategy::subfile, Strategy::chain, Strategy::dense_parallel}) {
    const auto t0 = clock_type::now();
    const auto par = run_parallel(cfg(s, 4));
    const double secs = since(t0);
    g_emitted.insert(g_emitted.end(), par.timings.begin(), par.timings.end());
    g_parallel.push_back({par.timings, par.rmsd});
    const double tol = s == Strategy::dense_parallel ? 1e-3 : 1e-9;
    double worst = 0;
    for (std::size_t i = 0; i < serial.rmsd.size() && i < par.rmsd.size(); ++i)
      worst = std::max(worst, std::abs(par.rmsd[i] - serial.rmsd[i]));
    const std::string name(to_string(s));
    require(o, par.rmsd.size() == serial.rmsd.size(), name + " length mismatch");
    require(o, worst <= tol, name + " max diff " + fmt("%.3g", worst));
    require(o, secs < 60.0, name + " took " + fmt("%.1f", secs) + " s");
    summary += (summary.empty() ? "" : ", ") + name + " " + fmt("%.1e", worst) + " in " + fmt("%.2f", secs) + " s";
  }
  if (o.pass) o.detail = summary;
  return o;
}

// ---- 4 ------------------------------------------------------------------------

Outcome codec_properties() {
  Outcome o;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  std::vector<Vec3> pts(10000 / 3 + 1);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  double worst = 0;
  std::vector<Vec3> back;
  decode_positions(encode_positions(pts, kDefaultPrecision), kDefaultPrecision,
                   static_cast<std::uint32_t>(pts.size()), back);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(back[i][k] - pts[i][k]));
  require(o, worst <= 0.5 / kDefaultPrecision, "quantization error " + fmt("%.3g", worst));

  TempDir dir("tb-accept-codec");
  const auto path = dir / "c.seq";
  std::vector<CoordFrame> frames;
  for (std::uint64_t i = 0; i < 100; ++i) frames.push_back(synthetic_frame(8, i, 57));
  seq_write(frames, kDefaultPrecision, path);
  const auto scanned = seq_read_all(path);
  const auto idx = seq_build_index(path);
  bool same = scanned.size() == 100;
  for (std::uint64_t i = 0; same && i < 100; ++i) {
    const auto f = seq_read_frame(path, idx, i);
    same = f.frame_index == scanned[i].frame_index && f.time == scanned[i].time &&
           f.box == scanned[i].box && f.positions == scanned[i].positions;
  }
  require(o, same, "indexed read differs from scan");

  require(o, seq_validate_index(path, idx), "fresh index reported stale");
  fs::copy_file(path, dir / "copy.seq");
  {
    SeqWriter w(dir / "extra.seq");
    w.write(synthetic_frame(8, 100, 57));
    w.close();
    std::ifstream in(dir / "extra.seq", std::ios::binary);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << in.rdbuf();
  }
  require(o, !seq_validate_index(path, idx), "append not detected");
  fs::last_write_time(path, fs::last_write_time(path) - std::chrono::seconds(1));
  const auto grown = seq_build_index(path);
  fs::last_write_time(path, fs::last_write_time(path) + std::chrono::seconds(30));
  require(o, !seq_validate_index(path, grown), "mtime change not detected");
  if (o.pass) o.detail = "max error " + fmt("%.2e", worst) + " nm, 100/100 frames, size+mtime staleness";
  return o;
}

// ---- 5 ------------------------------------------------------------------------

Outcome timing_identities() {
  Outcome o;
  require(o, !g_emitted.empty(), "no engine timings collected");
  std::size_t bad = 0;
  for (const auto& t : g_emitted)
    if (!(t.identities_hold() && t.t_n == t.t_rmsd + t.t_comm)) ++bad;
  require(o, bad == 0, std::to_string(bad) + " records violate the identities");

  require(o, !g_parallel.empty(), "no parallel runs recorded");
  if (!o.pass) return o;
  BenchRun run;
  run.strategy = Strategy::shared_seq;
  run.n_workers = 4;
  run.n_frames_total = g_parallel.front().rmsd.size();
  run.repeats = g_parallel;
  const double t_serial = g_serial.t_n;
  for (const auto& rep : run.repeats) {
    double mx = 0;
    for (const auto& t : rep.ranks) mx = std::max(mx, t.t_n);
    require(o, total_time(rep.ranks) == mx, "t_total differs from max t_n");
  }
  const auto report = build_report({"acceptance", g_serial, {run}, StragglerPolicy::median()});
  for (const auto& p : report.points) {
    const double lhs = p.speedup * p.t_total_mean;
    require(o, std::abs(lhs - t_serial) <= 4 * std::numeric_limits<double>::epsilon() * t_serial,
            "S * t_total = " + fmt("%.17g", lhs) + " vs " + fmt("%.17g", t_serial));
  }
  if (o.pass) o.detail = std::to_string(g_emitted.size()) + " rank records checked";
  return o;
}

// ---- 6 ------------------------------------------------------------------------

Outcome workload_scaling() {
  Outcome o;
  const auto t0 = clock_type::now();
  TempDir dir("tb-accept-x");
  const auto path = dir / "w.seq";
  const auto gen = generate_synthetic(2000, 341, 6, path, TrajFormat::seq, kDefaultPrecision, 146);
  write_topology(dir / "w.top", gen.system);
  seq_build_index(path);

  const std::vector<std::uint32_t> xs = {1, 10, 40};
  std::vector<double> comp, ratio;
  for (auto x : xs) {
    StrategyConfig c;
    c.strategy = Strategy::shared_seq;
    c.topology_path = dir / "w.top";
    c.trajectory_paths = {path};
    c.workload_factor = x;
    std::vector<double> tc, r;
    for (int rep = 0; rep < 3; ++rep) {
      const auto res = run_serial(c);
      const auto& t = res.timings.front();
      g_emitted.push_back(t);
      tc.push_back(t.t_comp / 2000.0);
      r.push_back(ratio_comp_io(t.t_comp, t.t_io));
    }
    std::sort(tc.begin(), tc.end());
    std::sort(r.begin(), r.end());
    comp.push_back(tc[1]);
    ratio.push_back(r[1]);
  }

  // Least squares through the origin, centred R^2.
  double sxy = 0, sxx = 0, mean = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += xs[i] * comp[i];
    sxx += double(xs[i]) * xs[i];
    mean += comp[i] / xs.size();
  }
  const double slope = sxy / sxx;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ss_res += std::pow(comp[i] - slope * xs[i], 2);
    ss_tot += std::pow(comp[i] - mean, 2);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  require(o, r2 >= 0.9, "R^2 = " + fmt("%.4f", r2));
  std::string ratios;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double rel = ratio[i] / ratio[0];
    ratios += " X=" + std::to_string(xs[i]) + ":" + fmt("%.1f", rel);
    require(o, std::abs(rel - xs[i]) <= 0.5 * xs[i],
            "R(X=" + std::to_string(xs[i]) + ")/R(1) = " + fmt("%.2f", rel));
  }
  const double secs = since(t0);
  require(o, secs < 300.0, "took " + fmt("%.1f", secs) + " s");
  if (o.pass)
    o.detail = "R^2 " + fmt("%.4f", r2) + ", R(1) " + fmt("%.3f", ratio[0]) + ", R(X)/R(1)" + ratios +
               ", " + fmt("%.1f", secs) + " s";
  return o;
}

// ---- 7 ------------------------------------------------------------------------

Outcome published_ratios() {
  Outcome o;
  const double r1 = ratio_comp_io(225, 791);
  const double r40 = ratio_comp_io(8655, 791);
  require(o, std::abs(r1 - 0.284) <= 0.001, "ratio_comp_io(225, 791) = " + fmt("%.4f", r1));
  require(o, std::abs(r40 - 10.94) <= 0.01, "ratio_comp_io(8655, 791) = " + fmt("%.4f", r40));
  const double th = theoretical_ratio(40, 0.29);
  require(o, std::abs(th - 11.6) <= 1e-12, "theoretical_ratio(40, 0.29) = " + fmt("%.4f", th));
  require(o, advise_strategy(0.3).heuristic == 2, "0.3 not routed to heuristic 2");
  require(o, advise_strategy(27).heuristic == 1, "27 not routed to heuristic 1");
  if (o.pass) o.detail = fmt("%.3f", r1) + ", " + fmt("%.2f", r40) + ", " + fmt("%.1f", th) + ", H2, H1";
  return o;
}

// ---- 8 ------------------------------------------------------------------------

Outcome straggler_detection() {
  Outcome o;
  const std::vector<double> four = {20, 20, 20, 60};
  const auto v = detect_stragglers(four, StragglerPolicy::median(1.5));
  require(o, !v[0].flagged && !v[1].flagged && !v[2].flagged && v[3].flagged, "median fixture");
  std::vector<double> big(72, 60.0);
  for (std::size_t r = 62; r < 72; ++r) big[r] = 20.0;
  std::size_t flagged = 0;
  bool exact = true;
  for (const auto& s : detect_stragglers(big, StragglerPolicy::fastest_group(2.0))) {
    flagged += s.flagged;
    exact = exact && s.flagged == (s.rank < 62);
  }
  require(o, flagged == 62 && exact, std::to_string(flagged) + " of 72 flagged");
  if (o.pass) o.detail = "rank 3 of 4; 62 of 72";
  return o;
}

// ---- 9 ------------------------------------------------------------------------

RankTiming fixture_timing(std::uint32_t r, double scale) {
  RankTiming t;
  t.rank = r;
  t.t_opening_trajectory = 0.01 * scale;
  t.t_io = 0.5 * scale + 0.01 * r;
  t.t_comp = 0.2 * scale;
  t.t_end_loop = 0.001;
  t.t_all_frame = 0.75 * scale + 0.01 * r;
  t.t_rmsd = 0.8 * scale + 0.01 * r;
  t.n_frames_processed = 250;
  t.set_comm(0.002 * (r + 1));
  return t;
}

ReportInput frozen_fixture() {
  ReportInput in;
  in.machine = "fixture";
  in.serial = fixture_timing(0, 4.0);
  for (std::uint32_t n : {1u, 2u, 4u}) {
    BenchRun run;
    run.n_workers = n;
    run.n_frames_total = 1000;
    for (int rep = 0; rep < 5; ++rep) {
      RepeatRecord rr;
      for (std::uint32_t r = 0; r < n; ++r) rr.ranks.push_back(fixture_timing(r, 4.0 / n + 0.01 * rep));
      rr.rmsd.assign(1000, 0.3);
      run.repeats.push_back(std::move(rr));
    }
    in.runs.push_back(std::move(run));
  }
  return in;
}

// Timing-derived content removed: every float, plus lists whose membership depends on timing.
nlohmann::json scrub(nlohmann::json j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "stragglers" || it.key() == "excluded_repeats") it.value() = nullptr;
      else it.value() = scrub(it.value());
    }
  } else if (j.is_array()) {
    for (auto& e : j) e = scrub(e);
  } else if (j.is_number_float() || (j.is_string() && j.get<std::string>() == "inf")) {
    j = nullptr;
  }
  return j;
}

Outcome report_determinism() {
  Outcome o;
  const auto first = build_report(frozen_fixture());
  const auto second = build_report(frozen_fixture());
  require(o, report_to_json(first) == report_to_json(second), "fixture JSON differs");
  const std::vector<Report> r1 = {first}, r2 = {second};
  TempDir dir("tb-accept-svg");
  const auto p1 = emit_plots(r1, dir / "a.svg");
  const auto p2 = emit_plots(r2, dir / "b.svg");
  for (std::size_t i = 0; i < p1.size(); ++i) {
    std::ifstream a(p1[i], std::ios::binary), b(p2[i], std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    require(o, !sa.empty() && sa == sb, p1[i].filename().string() + " differs");
  }

  // Two live benchmark invocations agree once timings are removed.
  auto live = [] {
    StrategyConfig c;
    c.strategy = Strategy::in_memory;
    c.n_workers = 2;
    c.seed = 9;
    c.n_frames = 400;
    c.n_atoms = 120;
    c.n_mobile = 40;
    const auto serial = run_serial(c);
    BenchRun run;
    run.strategy = Strategy::in_memory;
    run.n_workers = 2;
    run.n_frames_total = 400;
    for (int rep = 0; rep < 2; ++rep) {
      auto res = run_parallel(c);
      run.repeats.push_back({res.timings, res.rmsd});
    }
    return scrub(nlohmann::json::parse(
        report_to_json(build_report({"live", serial.timings.front(), {run}, StragglerPolicy::median()}))));
  };
  require(o, live() == live(), "live report structure differs");
  if (o.pass) o.detail = "JSON and " + std::to_string(p1.size()) + " SVG files identical";
  return o;
}

// ---- 10 -----------------------------------------------------------------------

Outcome in_memory_no_io() {
  Outcome o;
  StrategyConfig c;
  c.strategy = Strategy::in_memory;
  c.n_workers = 4;
  c.seed = 10;
  c.n_frames = 2000;
  c.n_atoms = 341;
  c.n_mobile = 146;
  auto timings = run_parallel(c).timings;
  const auto serial = run_serial(c).timings;
  timings.insert(timings.end(), serial.begin(), serial.end());
  for (const auto& t : timings)
    require(o, t.t_io == 0.0 && t.t_opening_trajectory == 0.0,
            "rank " + std::to_string(t.rank) + " t_io " + fmt("%.3g", t.t_io));
  if (o.pass) o.detail = std::to_string(timings.size()) + " rank records with zero I/O";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  EquivalenceData equivalence;
  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence", oracle_equivalence},
      {2, "rmsd invariance suite", invariance_suite},
      {3, "parallel = serial", [&] { return parallel_equals_serial(equivalence); }},
      {4, "codec properties", codec_properties},
      {6, "workload scaling", workload_scaling},
      {5, "timing-model identities", timing_identities},
      {7, "published ratio fixtures", published_ratios},
      {8, "straggler detection", straggler_detection},
      {9, "report determinism", report_determinism},
      {10, "in_memory has no I/O", in_memory_no_io},
  };

  std::vector<std::pair<int, std::string>> lines;
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    char head[96];
    std::snprintf(head, sizeof head, "%s  %2d  %-26s", o.pass ? "PASS" : "FAIL", c.id, c.name);
    lines.emplace_back(c.id, std::string(head) + o.detail);
  }
  std::sort(lines.begin(), lines.end());
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
