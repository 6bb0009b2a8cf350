#ifndef SPHEREFLOW_IO_HPP
#define SPHEREFLOW_IO_HPP

// CSV / JSON / SVG output for experiment results and trajectories.
//
// Every CSV starts with one "#schema=sphereflow/<name>/<version>" line followed
// by a header naming every column. Reals are written with 17 significant
// digits.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sphereflow/dynamics.hpp"
#include "sphereflow/experiments.hpp"
#include "sphereflow/overlap.hpp"

namespace sphereflow {

inline constexpr int kCsvSchemaVersion = 1;

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void write_schema_line(std::ostream& os, const std::string& name) {
  os << "#schema=sphereflow/" << name << '/' << kCsvSchemaVersion << '\n';
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

// Extra per-experiment columns placed between the axes and the tallies.
struct ExtraColumns {
  std::vector<std::string> names;
  std::function<std::vector<std::string>(const Cell&)> values;
};

inline ExtraColumns extra_columns(const ExperimentResult& r) {
  const std::string& e = r.metadata.experiment;
  if (e == "phase2d") {
    return {{"beta_c"}, [](const Cell& c) { return std::vector{format_real(critical_beta(c.coords[1]))}; }};
  }
  if (e == "hybrid") {
    return {{"epsilon_c"}, [](const Cell& c) { return std::vector{format_real(critical_epsilon(c.coords[0]))}; }};
  }
  return {};
}

}  // namespace detail

/// Column names of a result CSV, in order.
inline std::vector<std::string> result_csv_columns(const ExperimentResult& r) {
  std::vector<std::string> cols = r.axes;
  for (const auto& n : detail::extra_columns(r).names) cols.push_back(n);
  for (const char* n : {"trials", "single_cluster", "antipodal_pair", "antipodal_loop", "undecided", "aborted",
                        "frac_single", "ci_single", "frac_antipodal", "ci_antipodal", "frac_loop", "ci_loop",
                        "frac_undecided", "ci_undecided"})
    cols.emplace_back(n);
  if (r.metadata.experiment == "hybrid") {
    cols.emplace_back("max_fraction");
    cols.emplace_back("dominant");
  }
  cols.emplace_back("failed");
  return cols;
}

/// One row per cell. `frac_antipodal` counts pairs and loops together; the
/// `ci_*` columns are Wilson 95% half-widths.
inline void write_result_csv(std::ostream& os, const ExperimentResult& r) {
  detail::write_schema_line(os, r.metadata.experiment);
  detail::write_row(os, result_csv_columns(r));
  const auto extra = detail::extra_columns(r);
  for (const Cell& c : r.cells) {
    std::vector<std::string> row;
    for (double v : c.coords) row.push_back(format_real(v));
    if (extra.values) {
      for (auto& v : extra.values(c)) row.push_back(std::move(v));
    }
    row.push_back(std::to_string(c.trials));
    for (auto s : {TerminalState::SingleCluster, TerminalState::AntipodalPair, TerminalState::AntipodalLoop,
                   TerminalState::Undecided})
      row.push_back(std::to_string(c.count(s)));
    row.push_back(std::to_string(c.aborted));
    for (const Interval& iv :
         {c.single_fraction(), c.antipodal_fraction(), c.loop_fraction(), c.undecided_fraction()}) {
      row.push_back(format_real(iv.estimate));
      row.push_back(format_real(iv.half_width()));
    }
    if (r.metadata.experiment == "hybrid") {
      row.push_back(format_real(std::max(c.single_fraction().estimate, c.antipodal_fraction().estimate)));
      row.push_back(c.trials ? dominant_label(c) : "none");
    }
    row.push_back(c.failed() ? "1" : "0");
    detail::write_row(os, row);
  }
}

inline nlohmann::json metadata_json(const ExperimentMetadata& m) {
  nlohmann::json j;
  j["schema"] = "sphereflow/" + m.experiment + "/" + std::to_string(kCsvSchemaVersion);
  j["experiment"] = m.experiment;
  j["seed"] = m.seed;
  j["L"] = m.layers;
  j["T"] = m.horizon;
  j["noise"] = {{"distribution", to_string(m.noise.kind)}, {"sigma", m.noise.sigma}};
  if (m.noise.kind == NoiseKind::TruncatedGaussian) j["noise"]["truncation"] = m.noise.truncation;
  j["attention"] = to_string(m.attention);
  j["mode"] = m.mode;
  j["detector_tol"] = m.detector.tol;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["code_version"] = m.code_version;
  for (const auto& [k, v] : m.extra) j["parameters"][k] = v;
  return j;
}

inline nlohmann::json result_json(const ExperimentResult& r) {
  nlohmann::json j = metadata_json(r.metadata);
  j["axes"] = r.axes;
  j["cells"] = nlohmann::json::array();
  for (const Cell& c : r.cells) {
    nlohmann::json cell;
    for (std::size_t a = 0; a < r.axes.size(); ++a) cell[r.axes[a]] = c.coords[a];
    cell["trials"] = c.trials;
    for (auto s : {TerminalState::SingleCluster, TerminalState::AntipodalPair, TerminalState::AntipodalLoop,
                   TerminalState::Undecided})
      cell["counts"][to_string(s)] = c.count(s);
    cell["aborted"] = c.aborted;
    if (c.aborted) cell["abort_message"] = c.abort_message;
    cell["failed"] = c.failed();
    j["cells"].push_back(std::move(cell));
  }
  return j;
}

/// Wide snapshot table: step, time, then x<i>_<k> for token i, coordinate k.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
  detail::write_schema_line(os, "trajectory");
  std::vector<std::string> head{"step", "time"};
  const std::size_t n = t.params.n_tokens, d = t.params.d;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) head.push_back("x" + std::to_string(i) + "_" + std::to_string(k));
  detail::write_row(os, head);
  for (const Snapshot& s : t.snapshots) {
    std::vector<std::string> row{std::to_string(s.step), format_real(s.time)};
    for (double v : s.tokens.data()) row.push_back(format_real(v));
    detail::write_row(os, row);
  }
}

inline nlohmann::json trajectory_json(const Trajectory& t, std::uint64_t experiment_seed) {
  const SimParams& p = t.params;
  nlohmann::json j;
  j["schema"] = "sphereflow/trajectory/" + std::to_string(kCsvSchemaVersion);
  j["seed"] = experiment_seed;
  j["trajectory_index"] = t.base_key.trajectory_index;
  j["mode"] = mode_name(p.mode);
  j["d"] = p.d;
  j["N"] = p.n_tokens;
  j["L"] = p.layers;
  j["T"] = p.horizon;
  j["beta"] = p.attention.beta;
  j["attention"] = to_string(p.attention.kind);
  j["noise"] = {{"distribution", to_string(p.noise.kind)}, {"sigma", p.noise.sigma}};
  j["snapshot_stride"] = p.effective_stride();
  j["rows"] = t.snapshots.size();
  j["code_version"] = kVersion;
  if (t.abort) {
    j["abort"] = {{"step", t.abort->step}, {"message", t.abort->message}, {"norms", t.abort->norms}};
  }
  return j;
}

/// (z, drift, diffusion, s(z)) on a grid of the open interval, base point 0.
inline void write_oracle_csv(std::ostream& os, const OverlapModel& m, std::size_t points) {
  detail::write_schema_line(os, "oracle");
  detail::write_row(os, {"z", "drift", "diffusion", "scale_density"});
  for (std::size_t i = 1; i <= points; ++i) {
    const double z = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(points + 1);
    detail::write_row(os, {format_real(z), format_real(drift(m, z)), format_real(diffusion(m, z)),
                           format_real(scale_density(m, z, 0.0))});
  }
}

// ---------------------------------------------------------------------------
// SVG

namespace svg {

inline constexpr const char* kMagenta = "#d62ad6";  // single cluster
inline constexpr const char* kViolet = "#5b2a86";   // antipodal
inline constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};

struct Frame {
  double x0, x1, y0, y1;  // data ranges
  double left = 70, right = 170, top = 40, bottom = 60, width = 760, height = 480;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

inline void open(std::ostream& os, const Frame& f, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
     << "</text>\n";
}

inline void axes(std::ostream& os, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  const double xa = f.px(f.x0), xb = f.px(f.x1), ya = f.py(f.y0), yb = f.py(f.y1);
  os << "<rect x=\"" << num(xa) << "\" y=\"" << num(yb) << "\" width=\"" << num(xb - xa) << "\" height=\""
     << num(ya - yb) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 5.0;
    const double y = f.y0 + (f.y1 - f.y0) * i / 5.0;
    os << "<text x=\"" << num(f.px(x)) << "\" y=\"" << num(ya + 16) << "\" text-anchor=\"middle\">" << num(x)
       << "</text>\n";
    os << "<text x=\"" << num(xa - 6) << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
       << "</text>\n";
  }
  os << "<text x=\"" << num((xa + xb) / 2) << "\" y=\"" << num(f.height - 18) << "\" text-anchor=\"middle\">"
     << xlabel << "</text>\n";
  os << "<text transform=\"translate(18," << num((ya + yb) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << ylabel << "</text>\n";
}

inline void polyline(std::ostream& os, const Frame& f, const std::vector<double>& xs, const std::vector<double>& ys,
                     const std::string& color, bool dashed = false) {
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
     << (dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (std::isnan(ys[i])) continue;
    os << num(f.px(xs[i])) << ',' << num(f.py(ys[i])) << ' ';
  }
  os << "\"/>\n";
}

inline void legend(std::ostream& os, const Frame& f, std::size_t slot, const std::string& color,
                   const std::string& label, bool dashed = false) {
  const double x = f.width - f.right + 15, y = f.top + 20 + 20.0 * static_cast<double>(slot);
  os << "<line x1=\"" << num(x) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x + 24) << "\" y2=\"" << num(y)
     << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"6,4\"" : "")
     << "/>\n";
  os << "<text x=\"" << num(x + 30) << "\" y=\"" << num(y + 4) << "\">" << label << "</text>\n";
}

inline void close(std::ostream& os) { os << "</svg>\n"; }

}  // namespace svg

/// Static SVG for a result: heatmap for the hybrid diagram, curves otherwise.
/// Throws when there is nothing to draw.
inline void write_result_svg(std::ostream& os, const ExperimentResult& r) {
  if (r.cells.empty() || std::all_of(r.cells.begin(), r.cells.end(), [](const Cell& c) { return c.trials == 0; }))
    throw InvalidArgument("nothing to plot");
  const std::string& e = r.metadata.experiment;

  if (e == "hybrid") {
    std::vector<double> bs, es;
    for (const Cell& c : r.cells) {
      bs.push_back(c.coords[0]);
      es.push_back(c.coords[1]);
    }
    std::sort(bs.begin(), bs.end());
    bs.erase(std::unique(bs.begin(), bs.end()), bs.end());
    std::sort(es.begin(), es.end());
    es.erase(std::unique(es.begin(), es.end()), es.end());
    auto step = [](const std::vector<double>& v) { return v.size() > 1 ? v[1] - v[0] : 1.0; };
    const double db = step(bs), de = step(es);
    svg::Frame f{bs.front() - db / 2, bs.back() + db / 2, es.front() - de / 2, es.back() + de / 2};
    svg::open(os, f, "Hybrid model: dominant terminal state");
    for (const Cell& c : r.cells) {
      if (c.trials == 0) continue;
      const bool single = std::string(dominant_label(c)) == "single";
      const double frac =
          std::max(c.single_fraction().estimate, c.antipodal_fraction().estimate);
      const double x = f.px(c.coords[0] - db / 2), y = f.py(c.coords[1] + de / 2);
      os << "<rect x=\"" << svg::num(x) << "\" y=\"" << svg::num(y) << "\" width=\""
         << svg::num(f.px(c.coords[0] + db / 2) - x) << "\" height=\"" << svg::num(f.py(c.coords[1] - de / 2) - y)
         << "\" fill=\"" << (single ? svg::kMagenta : svg::kViolet) << "\" fill-opacity=\"" << svg::num(frac)
         << "\"/>\n";
    }
    std::vector<double> xs, ys;
    for (int i = 0; i <= 200; ++i) {
      const double b = f.x0 + (f.x1 - f.x0) * i / 200.0;
      const double eps = critical_epsilon(std::max(0.0, b));
      if (eps >= f.y0 && eps <= f.y1) {
        xs.push_back(b);
        ys.push_back(eps);
      }
    }
    svg::polyline(os, f, xs, ys, "black", true);
    svg::axes(os, f, "beta", "epsilon");
    svg::legend(os, f, 0, svg::kMagenta, "single cluster");
    svg::legend(os, f, 1, svg::kViolet, "antipodal");
    svg::legend(os, f, 2, "black", "sqrt(2 e^-beta)", true);
    svg::close(os);
    return;
  }

  if (e == "stability") {
    std::vector<double> ts;
    std::vector<double> single, anti, loop, undecided;
    for (const Cell& c : r.cells) {
      ts.push_back(c.coords[0]);
      single.push_back(c.single_fraction().estimate);
      anti.push_back(c.antipodal_fraction().estimate);
      loop.push_back(c.loop_fraction().estimate);
      undecided.push_back(c.undecided_fraction().estimate);
    }
    svg::Frame f{ts.front(), std::max(ts.back(), ts.front() + 1e-9), 0.0, 1.0};
    svg::open(os, f, "Terminal-state fractions over time");
    svg::polyline(os, f, ts, single, svg::kMagenta);
    svg::polyline(os, f, ts, anti, svg::kViolet);
    svg::polyline(os, f, ts, loop, svg::kPalette[0]);
    svg::polyline(os, f, ts, undecided, "gray");
    svg::axes(os, f, "t", "fraction");
    svg::legend(os, f, 0, svg::kMagenta, "single cluster");
    svg::legend(os, f, 1, svg::kViolet, "antipodal pair");
    svg::legend(os, f, 2, svg::kPalette[0], "antipodal loop");
    svg::legend(os, f, 3, "gray", "undecided");
    svg::close(os);
    return;
  }

  // Curves of the antipodal fraction against beta, one per value of the other axis.
  const bool phase = e == "phase2d";
  const std::size_t beta_axis = phase ? 0 : 1;
  const std::size_t series_axis = phase ? 1 : 0;
  std::vector<double> series;
  double bmin = INFINITY, bmax = -INFINITY;
  for (const Cell& c : r.cells) {
    series.push_back(c.coords[series_axis]);
    bmin = std::min(bmin, c.coords[beta_axis]);
    bmax = std::max(bmax, c.coords[beta_axis]);
  }
  std::sort(series.begin(), series.end());
  series.erase(std::unique(series.begin(), series.end()), series.end());
  if (bmax <= bmin) bmax = bmin + 1.0;
  svg::Frame f{bmin, bmax, 0.0, 1.0};
  svg::open(os, f, phase ? "Two tokens: antipodal fraction" : "At least one antipodal pair");
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::vector<std::pair<double, double>> pts;
    for (const Cell& c : r.cells)
      if (c.coords[series_axis] == series[s]) pts.emplace_back(c.coords[beta_axis], c.antipodal_fraction().estimate);
    std::sort(pts.begin(), pts.end());
    std::vector<double> xs, ys;
    for (auto [x, y] : pts) {
      xs.push_back(x);
      ys.push_back(y);
    }
    const char* color = svg::kPalette[s % std::size(svg::kPalette)];
    svg::polyline(os, f, xs, ys, color);
    const std::string name = (phase ? "d = " : "N = ") + std::to_string(static_cast<long>(series[s]));
    svg::legend(os, f, s, color, name);
    if (phase) {
      const double bc = critical_beta(series[s]);
      if (bc >= f.x0 && bc <= f.x1) svg::polyline(os, f, {bc, bc}, {0.0, 1.0}, color, true);
    }
  }
  svg::axes(os, f, "beta", "fraction");
  svg::close(os);
}

}  // namespace sphereflow

#endif  // SPHEREFLOW_IO_HPP
