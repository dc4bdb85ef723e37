#include "trajbench/perf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace trajbench {

using ojson = nlohmann::ordered_json;

// ---- scalar metrics --------------------------------------------------------

double total_time(std::span<const RankTiming> timings) {
  if (timings.empty()) throw std::invalid_argument("total_time: no rank timings");
  double t = timings.front().t_n;
  for (const auto& r : timings) t = std::max(t, r.t_n);
  return t;
}

std::vector<ScalingPoint> speedup_efficiency(
    double t_serial, std::span<const std::pair<std::uint32_t, double>> points) {
  if (!(t_serial > 0.0)) throw std::invalid_argument("serial time must be positive");
  std::vector<ScalingPoint> out;
  for (const auto& [n, t] : points) {
    if (n == 0) throw std::invalid_argument("worker count must be >= 1");
    if (!(t > 0.0)) throw std::invalid_argument("total time must be positive");
    const double s = t_serial / t;
    out.push_back({n, t, s, s / n});
  }
  return out;
}

double ratio_comp_io(double t_comp, double t_io) {
  if (t_comp < 0.0 || t_io < 0.0) throw std::invalid_argument("ratio_comp_io: negative time");
  if (t_io == 0.0) return kNoIo;
  return t_comp / t_io;
}

std::optional<double> ratio_comp_comm(std::span<const RankTiming> timings) {
  if (timings.empty()) throw std::invalid_argument("ratio_comp_comm: no rank timings");
  double comp = 0.0, comm = 0.0;
  for (const auto& t : timings) {
    comp += t.t_comp;
    comm += t.t_comm;
  }
  const double n = static_cast<double>(timings.size());
  if (comm / n <= 0.0) return std::nullopt;
  return (comp / n) / (comm / n);
}

double theoretical_ratio(std::uint32_t workload_factor, double ratio_at_one) {
  return static_cast<double>(workload_factor) * ratio_at_one;
}

// ---- stragglers ---------------------------------------------------------------

std::string StragglerPolicy::name() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%g",
                kind == Kind::median_factor ? "median_factor" : "fastest_group_factor", factor);
  return buf;
}

std::vector<StragglerVerdict> detect_stragglers(std::span<const double> t_n, StragglerPolicy policy) {
  if (t_n.size() < 2) throw std::invalid_argument("straggler detection needs at least two ranks");
  std::vector<double> sorted(t_n.begin(), t_n.end());
  std::sort(sorted.begin(), sorted.end());

  double base = 0.0;
  if (policy.kind == StragglerPolicy::Kind::median_factor) {
    const std::size_t n = sorted.size();
    base = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  } else {
    const double cutoff = sorted.front() + 0.25 * (sorted.back() - sorted.front());
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : sorted) {
      if (v > cutoff) break;
      sum += v;
      ++count;
    }
    base = sum / static_cast<double>(count);
  }
  const double threshold = policy.factor * base;

  std::vector<StragglerVerdict> out;
  out.reserve(t_n.size());
  for (std::size_t r = 0; r < t_n.size(); ++r)
    out.push_back({static_cast<std::uint32_t>(r), t_n[r], threshold, t_n[r] >= threshold});
  return out;
}

std::vector<StragglerVerdict> detect_stragglers(std::span<const RankTiming> timings,
                                                StragglerPolicy policy) {
  std::vector<double> t_n;
  t_n.reserve(timings.size());
  for (const auto& t : timings) t_n.push_back(t.t_n);
  auto verdicts = detect_stragglers(std::span<const double>(t_n), policy);
  for (std::size_t i = 0; i < verdicts.size(); ++i) verdicts[i].rank = timings[i].rank;
  return verdicts;
}

// ---- advice ----------------------------------------------------------------------

Advice advise_strategy(double r) {
  Advice a;
  a.r_comp_io = r;
  if (r > 1.0) {
    a.heuristic = 1;
    a.shared_file_ok = true;
    a.core_ceiling = 50;
    a.recommended = Strategy::shared_seq;
    a.fallback = Strategy::dense_parallel;
    a.rationale =
        "compute bound: a single shared trajectory should scale to about 50 cores; "
        "beyond that switch to dense_parallel or subfile";
  } else {
    a.heuristic = 2;
    a.shared_file_ok = false;
    a.recommended = Strategy::dense_parallel;
    a.fallback = Strategy::subfile;
    a.rationale =
        "I/O bound: avoid a single shared trajectory; dense_parallel may scale to hundreds "
        "of cores, otherwise split into one segment per worker (below about 200 cores)";
  }
  return a;
}

// ---- aggregation -----------------------------------------------------------------

Components components_of(const RankTiming& t) {
  return {t.t_comp, t.t_io, t.t_comm, t.t_opening_trajectory, t.t_end_loop, t.t_overhead1,
          t.t_overhead2};
}

Components rank_average(std::span<const RankTiming> timings) {
  Components sum{};
  for (const auto& t : timings) {
    const auto c = components_of(t);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += c[k];
  }
  if (!timings.empty())
    for (double& v : sum) v /= static_cast<double>(timings.size());
  return sum;
}

namespace {

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ReportPoint make_point(const BenchRun& run, double t_serial, StragglerPolicy policy) {
  run.validate();
  if (run.repeats.empty()) throw std::invalid_argument("run without repeats");
  ReportPoint p;
  p.n_workers = run.n_workers;
  for (const auto& rep : run.repeats) {
    p.repeat_totals.push_back(total_time(rep.ranks));
    p.rank_timings.push_back(rep.ranks);
  }
  const double med = median_of(p.repeat_totals);
  std::vector<double> kept_totals;
  std::vector<Components> kept_components;
  for (std::size_t i = 0; i < run.repeats.size(); ++i) {
    if (p.repeat_totals[i] > kOutlierFactor * med) {
      p.excluded_repeats.push_back(i);
      continue;
    }
    kept_totals.push_back(p.repeat_totals[i]);
    kept_components.push_back(rank_average(run.repeats[i].ranks));
  }
  std::tie(p.t_total_mean, p.t_total_std) = mean_std(kept_totals);
  for (std::size_t k = 0; k < kComponentNames.size(); ++k) {
    std::vector<double> col;
    for (const auto& c : kept_components) col.push_back(c[k]);
    std::tie(p.component_means[k], p.component_stds[k]) = mean_std(col);
  }
  p.speedup = t_serial / p.t_total_mean;
  p.efficiency = p.speedup / p.n_workers;
  const double comm = p.component_means[2];
  if (comm > 0.0) p.r_comp_comm = p.component_means[0] / comm;

  if (run.n_workers >= 2) {
    for (std::size_t i = 0; i < run.repeats.size(); ++i)
      for (const auto& v : detect_stragglers(run.repeats[i].ranks, policy))
        if (v.flagged) p.stragglers.push_back({i, v.rank, v.t_n, v.threshold});
  }
  return p;
}

}  // namespace

Report build_report(const ReportInput& input) {
  if (input.runs.empty()) throw std::invalid_argument("build_report: empty run set");
  if (!(input.serial.t_n > 0.0)) throw std::invalid_argument("build_report: serial t_total must be positive");
  const auto& first = input.runs.front();
  Report r;
  r.machine = input.machine;
  r.strategy = first.strategy;
  r.workload_factor = first.workload_factor;
  r.repeats = static_cast<std::uint32_t>(first.repeats.size());
  r.n_frames_total = first.n_frames_total;
  r.straggler_policy = input.policy.name();
  r.serial = {input.serial.t_n, input.serial.t_comp, input.serial.t_io,
              ratio_comp_io(input.serial.t_comp, input.serial.t_io)};
  for (const auto& run : input.runs) {
    if (run.strategy != r.strategy || run.workload_factor != r.workload_factor ||
        run.n_frames_total != r.n_frames_total)
      throw std::invalid_argument("build_report: runs mix strategies, workloads or trajectories");
    r.points.push_back(make_point(run, r.serial.t_total, input.policy));
  }
  std::sort(r.points.begin(), r.points.end(),
            [](const ReportPoint& a, const ReportPoint& b) { return a.n_workers < b.n_workers; });
  r.advice = advise_strategy(r.serial.r_comp_io);
  return r;
}

Report serial_only_report(const std::string& machine, Strategy strategy,
                          std::uint32_t workload_factor, std::uint64_t n_frames,
                          const RankTiming& serial) {
  BenchRun run;
  run.strategy = strategy;
  run.n_workers = 1;
  run.workload_factor = workload_factor;
  run.n_frames_total = n_frames;
  RepeatRecord rep;
  rep.ranks = {serial};
  rep.rmsd.assign(n_frames, 0.0);
  run.repeats.push_back(std::move(rep));
  return build_report({machine, serial, {run}, StragglerPolicy::median()});
}

// ---- JSON --------------------------------------------------------------------------

namespace {

ojson number_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

double read_number_or_inf(const ojson& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kNoIo;
    throw std::invalid_argument("expected a number or \"inf\"");
  }
  return j.get<double>();
}

ojson timing_json(const RankTiming& t) {
  return ojson{{"rank", t.rank},
               {"t_opening_trajectory", t.t_opening_trajectory},
               {"t_io", t.t_io},
               {"t_comp", t.t_comp},
               {"t_end_loop", t.t_end_loop},
               {"t_all_frame", t.t_all_frame},
               {"t_rmsd", t.t_rmsd},
               {"t_comm", t.t_comm},
               {"t_overhead1", t.t_overhead1},
               {"t_overhead2", t.t_overhead2},
               {"t_n", t.t_n},
               {"n_frames_processed", t.n_frames_processed}};
}

RankTiming timing_from(const ojson& j) {
  RankTiming t;
  t.rank = j.at("rank").get<std::uint32_t>();
  t.t_opening_trajectory = j.at("t_opening_trajectory").get<double>();
  t.t_io = j.at("t_io").get<double>();
  t.t_comp = j.at("t_comp").get<double>();
  t.t_end_loop = j.at("t_end_loop").get<double>();
  t.t_all_frame = j.at("t_all_frame").get<double>();
  t.t_rmsd = j.at("t_rmsd").get<double>();
  t.t_comm = j.at("t_comm").get<double>();
  t.t_overhead1 = j.at("t_overhead1").get<double>();
  t.t_overhead2 = j.at("t_overhead2").get<double>();
  t.t_n = j.at("t_n").get<double>();
  t.n_frames_processed = j.at("n_frames_processed").get<std::uint64_t>();
  return t;
}

ojson components_json(const Components& c) {
  ojson j = ojson::object();
  for (std::size_t k = 0; k < c.size(); ++k) j[std::string(kComponentNames[k])] = c[k];
  return j;
}

Components components_from(const ojson& j) {
  Components c{};
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = j.at(std::string(kComponentNames[k])).get<double>();
  return c;
}

}  // namespace

std::string report_to_json(const Report& r) {
  ojson points = ojson::array();
  for (const auto& p : r.points) {
    ojson stragglers = ojson::array();
    for (const auto& s : p.stragglers)
      stragglers.push_back(
          {{"repeat", s.repeat}, {"rank", s.rank}, {"t_n", s.t_n}, {"threshold", s.threshold}});
    ojson ranks = ojson::array();
    for (const auto& rep : p.rank_timings) {
      ojson row = ojson::array();
      for (const auto& t : rep) row.push_back(timing_json(t));
      ranks.push_back(std::move(row));
    }
    points.push_back({{"n_workers", p.n_workers},
                      {"t_total_mean", p.t_total_mean},
                      {"t_total_std", p.t_total_std},
                      {"speedup", p.speedup},
                      {"efficiency", p.efficiency},
                      {"r_comp_comm", p.r_comp_comm ? ojson(*p.r_comp_comm) : ojson(nullptr)},
                      {"component_means", components_json(p.component_means)},
                      {"component_stds", components_json(p.component_stds)},
                      {"repeat_totals", p.repeat_totals},
                      {"stragglers", std::move(stragglers)},
                      {"excluded_repeats", p.excluded_repeats},
                      {"rank_timings", std::move(ranks)}});
  }
  const auto& a = r.advice;
  ojson advice = {{"heuristic", a.heuristic},
                  {"r_comp_io", number_or_inf(a.r_comp_io)},
                  {"shared_file_ok", a.shared_file_ok},
                  {"core_ceiling", a.core_ceiling ? ojson(*a.core_ceiling) : ojson(nullptr)},
                  {"recommended", to_string(a.recommended)},
                  {"fallback", a.fallback ? ojson(to_string(*a.fallback)) : ojson(nullptr)},
                  {"rationale", a.rationale}};
  ojson doc = {{"machine", r.machine},
               {"strategy", to_string(r.strategy)},
               {"workload_factor", r.workload_factor},
               {"repeats", r.repeats},
               {"n_frames_total", r.n_frames_total},
               {"straggler_policy", r.straggler_policy},
               {"serial",
                {{"t_total", r.serial.t_total},
                 {"t_comp", r.serial.t_comp},
                 {"t_io", r.serial.t_io},
                 {"r_comp_io", number_or_inf(r.serial.r_comp_io)}}},
               {"points", std::move(points)},
               {"advice", std::move(advice)}};
  return doc.dump(2) + "\n";
}

Report report_from_json(std::string_view text) {
  try {
    const auto doc = ojson::parse(text);
    Report r;
    r.machine = doc.at("machine").get<std::string>();
    r.strategy = strategy_from_string(doc.at("strategy").get<std::string>());
    r.workload_factor = doc.at("workload_factor").get<std::uint32_t>();
    r.repeats = doc.at("repeats").get<std::uint32_t>();
    r.n_frames_total = doc.value("n_frames_total", std::uint64_t{0});
    r.straggler_policy = doc.value("straggler_policy", std::string{});
    const auto& s = doc.at("serial");
    r.serial = {s.at("t_total").get<double>(), s.at("t_comp").get<double>(),
                s.at("t_io").get<double>(), read_number_or_inf(s.at("r_comp_io"))};
    for (const auto& pj : doc.at("points")) {
      ReportPoint p;
      p.n_workers = pj.at("n_workers").get<std::uint32_t>();
      p.t_total_mean = pj.at("t_total_mean").get<double>();
      p.t_total_std = pj.at("t_total_std").get<double>();
      p.speedup = pj.at("speedup").get<double>();
      p.efficiency = pj.at("efficiency").get<double>();
      if (!pj.at("r_comp_comm").is_null()) p.r_comp_comm = pj.at("r_comp_comm").get<double>();
      p.component_means = components_from(pj.at("component_means"));
      p.component_stds = components_from(pj.at("component_stds"));
      p.repeat_totals = pj.at("repeat_totals").get<std::vector<double>>();
      p.excluded_repeats = pj.at("excluded_repeats").get<std::vector<std::size_t>>();
      for (const auto& sj : pj.at("stragglers"))
        p.stragglers.push_back({sj.at("repeat").get<std::size_t>(), sj.at("rank").get<std::uint32_t>(),
                                sj.at("t_n").get<double>(), sj.at("threshold").get<double>()});
      for (const auto& rep : pj.value("rank_timings", ojson::array())) {
        std::vector<RankTiming> row;
        for (const auto& tj : rep) row.push_back(timing_from(tj));
        p.rank_timings.push_back(std::move(row));
      }
      r.points.push_back(std::move(p));
    }
    const auto& aj = doc.at("advice");
    r.advice.heuristic = aj.at("heuristic").get<int>();
    r.advice.r_comp_io = read_number_or_inf(aj.at("r_comp_io"));
    r.advice.shared_file_ok = aj.at("shared_file_ok").get<bool>();
    if (!aj.at("core_ceiling").is_null()) r.advice.core_ceiling = aj.at("core_ceiling").get<std::uint32_t>();
    r.advice.recommended = strategy_from_string(aj.at("recommended").get<std::string>());
    if (!aj.at("fallback").is_null())
      r.advice.fallback = strategy_from_string(aj.at("fallback").get<std::string>());
    r.advice.rationale = aj.at("rationale").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed report: ") + e.what());
  }
}

// ---- CSV ----------------------------------------------------------------------------

std::string timings_csv(std::span<const BenchRun> runs) {
  std::ostringstream out;
  out << "strategy,n_workers,workload_factor,repeat,rank,t_opening_trajectory,t_io,t_comp,"
         "t_end_loop,t_all_frame,t_rmsd,t_comm,t_overhead1,t_overhead2,t_n,n_frames_processed\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const auto& run : runs)
    for (std::size_t i = 0; i < run.repeats.size(); ++i)
      for (const auto& t : run.repeats[i].ranks)
        out << to_string(run.strategy) << ',' << run.n_workers << ',' << run.workload_factor << ','
            << i << ',' << t.rank << ',' << num(t.t_opening_trajectory) << ',' << num(t.t_io) << ','
            << num(t.t_comp) << ',' << num(t.t_end_loop) << ',' << num(t.t_all_frame) << ','
            << num(t.t_rmsd) << ',' << num(t.t_comm) << ',' << num(t.t_overhead1) << ','
            << num(t.t_overhead2) << ',' << num(t.t_n) << ',' << t.n_frames_processed << '\n';
  return out.str();
}

// ---- SVG ----------------------------------------------------------------------------

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Plot {
 public:
  Plot(std::string title, std::string xlabel, std::string ylabel, double xmax, double ymax)
      : xmax_(xmax > 0 ? xmax : 1), ymax_(ymax > 0 ? ymax : 1) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(kWidth) << "\" height=\""
         << fmt(kHeight) << "\" viewBox=\"0 0 " << fmt(kWidth) << ' ' << fmt(kHeight)
         << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out_ << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
         << escape(title) << "</text>\n";
    axes(xlabel, ylabel);
  }

  double x(double v) const { return kLeft + v / xmax_ * (kWidth - kLeft - kRight); }
  double y(double v) const { return kHeight - kBottom - v / ymax_ * (kHeight - kTop - kBottom); }

  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color, bool dashed = false) {
    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
         << (dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      out_ << (i ? " " : "") << fmt(x(pts[i].first)) << ',' << fmt(y(pts[i].second));
    out_ << "\"/>\n";
  }

  void marker(double xv, double yv, const char* color) {
    out_ << "<circle cx=\"" << fmt(x(xv)) << "\" cy=\"" << fmt(y(yv)) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
  }

  void error_bar(double xv, double lo, double hi, const char* color) {
    out_ << "<line x1=\"" << fmt(x(xv)) << "\" y1=\"" << fmt(y(lo)) << "\" x2=\"" << fmt(x(xv))
         << "\" y2=\"" << fmt(y(hi)) << "\" stroke=\"" << color << "\"/>\n";
  }

  void rect(double x0, double x1, double y0, double y1, const char* color) {
    out_ << "<rect x=\"" << fmt(x(x0)) << "\" y=\"" << fmt(y(y1)) << "\" width=\""
         << fmt(x(x1) - x(x0)) << "\" height=\"" << fmt(y(y0) - y(y1)) << "\" fill=\"" << color
         << "\"/>\n";
  }

  void legend(std::size_t slot, const std::string& text, const char* color) {
    const double ly = kTop + 10 + 18 * static_cast<double>(slot);
    const double lx = kWidth - kRight + 15;
    out_ << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
         << color << "\"/>\n";
    out_ << "<text x=\"" << fmt(lx + 15) << "\" y=\"" << fmt(ly) << "\">" << escape(text) << "</text>\n";
  }

  void xtick(double v, const std::string& text) {
    out_ << "<text x=\"" << fmt(x(v)) << "\" y=\"" << fmt(kHeight - kBottom + 15)
         << "\" text-anchor=\"middle\">" << escape(text) << "</text>\n";
  }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  void axes(const std::string& xlabel, const std::string& ylabel) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    out_ << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x1) << "\" y2=\""
         << fmt(y0) << "\" stroke=\"black\"/>\n";
    out_ << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x0) << "\" y2=\""
         << fmt(y1) << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = ymax_ * k / 4.0;
      out_ << "<text x=\"" << fmt(x0 - 6) << "\" y=\"" << fmt(y(v) + 4) << "\" text-anchor=\"end\">"
           << label_number(v) << "</text>\n";
      out_ << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y(v)) << "\" x2=\"" << fmt(x1) << "\" y2=\""
           << fmt(y(v)) << "\" stroke=\"#dddddd\"/>\n";
    }
    out_ << "<text x=\"" << fmt((x0 + x1) / 2) << "\" y=\"" << fmt(kHeight - 12)
         << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
    out_ << "<text transform=\"translate(16," << fmt((y0 + y1) / 2)
         << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  }

  double xmax_, ymax_;
  std::ostringstream out_;
};

std::string series_label(const Report& r) {
  return std::string(to_string(r.strategy)) + " " + std::to_string(r.workload_factor) + "x";
}

std::string total_chart(std::span<const Report> reports) {
  double xmax = 1, ymax = 0;
  for (const auto& r : reports)
    for (const auto& p : r.points) {
      xmax = std::max(xmax, static_cast<double>(p.n_workers));
      ymax = std::max(ymax, p.t_total_mean + p.t_total_std);
    }
  Plot plot("Total time to solution", "workers N", "t_total (s)", xmax * 1.1, ymax * 1.15);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const char* color = kPalette[i % kPalette.size()];
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : reports[i].points) {
      pts.emplace_back(p.n_workers, p.t_total_mean);
      plot.error_bar(p.n_workers, p.t_total_mean - p.t_total_std, p.t_total_mean + p.t_total_std, color);
      plot.marker(p.n_workers, p.t_total_mean, color);
    }
    plot.polyline(pts, color);
    plot.legend(i, series_label(reports[i]), color);
  }
  for (const auto& p : reports.empty() ? std::vector<ReportPoint>{} : reports.front().points)
    plot.xtick(p.n_workers, std::to_string(p.n_workers));
  return plot.finish();
}

std::string speedup_chart(std::span<const Report> reports) {
  double xmax = 1, ymax = 1;
  for (const auto& r : reports)
    for (const auto& p : r.points) {
      xmax = std::max(xmax, static_cast<double>(p.n_workers));
      ymax = std::max(ymax, p.speedup);
    }
  ymax = std::max(ymax, xmax);
  Plot plot("Speed-up", "workers N", "S(N)", xmax * 1.1, ymax * 1.1);
  plot.polyline({{0, 0}, {xmax, xmax}}, "#999999", true);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const char* color = kPalette[i % kPalette.size()];
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : reports[i].points) {
      pts.emplace_back(p.n_workers, p.speedup);
      plot.marker(p.n_workers, p.speedup, color);
    }
    plot.polyline(pts, color);
    plot.legend(i, series_label(reports[i]), color);
  }
  plot.legend(reports.size(), "ideal", "#999999");
  return plot.finish();
}

std::string ranks_chart(std::span<const Report> reports) {
  const ReportPoint* point = nullptr;
  if (!reports.empty())
    for (const auto& p : reports.front().points)
      if (!point || p.n_workers > point->n_workers) point = &p;

  std::vector<RankTiming> ranks;
  if (point && !point->rank_timings.empty()) {
    std::size_t pick = 0;
    while (pick < point->rank_timings.size() &&
           std::find(point->excluded_repeats.begin(), point->excluded_repeats.end(), pick) !=
               point->excluded_repeats.end())
      ++pick;
    ranks = point->rank_timings[pick < point->rank_timings.size() ? pick : 0];
  }

  double ymax = 0;
  for (const auto& t : ranks) {
    double stack = 0;
    for (double c : components_of(t)) stack += std::max(0.0, c);
    ymax = std::max(ymax, stack);
  }
  const double n = static_cast<double>(std::max<std::size_t>(ranks.size(), 1));
  Plot plot("Time per rank", "rank", "time (s)", n, ymax * 1.1);
  for (std::size_t r = 0; r < ranks.size(); ++r) {
    const auto comps = components_of(ranks[r]);
    double base = 0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const double h = std::max(0.0, comps[k]);
      plot.rect(static_cast<double>(r) + 0.1, static_cast<double>(r) + 0.9, base, base + h,
                kPalette[k % kPalette.size()]);
      base += h;
    }
    if (ranks.size() <= 32 || r % (ranks.size() / 16) == 0)
      plot.xtick(static_cast<double>(r) + 0.5, std::to_string(ranks[r].rank));
  }
  for (std::size_t k = 0; k < kComponentNames.size(); ++k)
    plot.legend(k, std::string(kComponentNames[k]), kPalette[k % kPalette.size()]);
  return plot.finish();
}

}  // namespace

std::vector<Chart> render_charts(std::span<const Report> reports) {
  if (reports.empty()) throw std::invalid_argument("render_charts: no reports");
  return {{"total", total_chart(reports)},
          {"speedup", speedup_chart(reports)},
          {"ranks", ranks_chart(reports)}};
}

std::vector<std::filesystem::path> emit_plots(std::span<const Report> reports,
                                              const std::filesystem::path& base) {
  std::vector<std::filesystem::path> written;
  const auto dir = base.parent_path();
  const auto stem = base.stem().string();
  for (const auto& chart : render_charts(reports)) {
    const auto path = dir / (stem + "_" + chart.name + ".svg");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot create " + path.string());
    out << chart.svg;
    if (!out) throw std::runtime_error("write failed on " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace trajbench
