#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "dietcl/harness.hpp"

namespace dietcl {

namespace fs = std::filesystem;

namespace {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Minimal line chart; the TSV next to it is the source of truth.
void write_line_chart(const fs::path& file, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series, bool log_x = false) {
  const double W = 640, H = 400, L = 60, R = 150, T = 40, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = 1e-9;
  const auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
  for (const auto& s : series) {
    for (double x : s.x) {
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
    }
    for (double y : s.y) y1 = std::max(y1, y);
  }
  if (x0 > x1) x0 = 0, x1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  y1 = std::min(1.0, y1 * 1.1 + 1e-3);
  const auto px = [&](double x) { return L + (tx(x) - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream out(file);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
      << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4.0;
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << std::setprecision(3) << y
        << "</text>\n";
  }
  std::set<double> ticks;
  for (const auto& s : series) ticks.insert(s.x.begin(), s.x.end());
  const std::size_t stride = std::max<std::size_t>(1, ticks.size() / 10);
  std::size_t tick = 0;
  for (double x : ticks) {
    if (tick++ % stride != 0) continue;
    out << "<text x=\"" << px(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(xlabel)
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
      << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* colour = kPalette[i % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) out << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    out << "\"/>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      out << "<circle cx=\"" << px(s.x[k]) << "\" cy=\"" << py(s.y[k]) << "\" r=\"2.5\" fill=\"" << colour
          << "\"/>\n";
    }
    const double ly = T + 14.0 * static_cast<double>(i);
    out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 28 << "\" y2=\"" << ly
        << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 32 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

std::string tag(const RunRecord& r, const std::string& key, const std::string& fallback = "-") {
  const auto it = r.tags.find(key);
  return it == r.tags.end() ? fallback : it->second;
}

struct Stats {
  double mean = 0;
  double sd = 0;
  std::size_t n = 0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// Mean A-bar per (method, axis value) for one swept axis.
void axis_figure(const std::vector<RunRecord>& records, const std::string& axis, const std::string& xlabel,
                 const fs::path& out_dir, std::vector<fs::path>& written) {
  std::map<std::string, std::map<double, std::vector<double>>> groups;
  std::map<std::string, std::map<double, std::vector<std::string>>> provenance;
  std::set<std::string> distinct;
  for (const auto& r : records) {
    if (r.evals.empty() || !r.tags.count(axis) || r.tags.count("ablation")) continue;
    distinct.insert(r.tags.at(axis));
    const double x = std::stod(r.tags.at(axis));
    groups[tag(r, "method")][x].push_back(r.average_accuracy());
    provenance[tag(r, "method")][x].push_back(r.run_id);
  }
  if (distinct.size() < 2) return;
  const fs::path table = out_dir / (axis + "_curve.tsv");
  std::ofstream out(table);
  out.precision(6);
  out << "#method\t" << axis << "\tmean_A_bar\tsd\tn\truns\n";
  std::vector<Series> series;
  for (const auto& [method, points] : groups) {
    Series s{method, {}, {}};
    for (const auto& [x, values] : points) {
      const Stats st = stats_of(values);
      out << method << '\t' << x << '\t' << st.mean << '\t' << st.sd << '\t' << st.n << '\t';
      const auto& ids = provenance[method][x];
      for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? "," : "") << ids[i];
      out << '\n';
      s.x.push_back(x);
      s.y.push_back(st.mean);
    }
    series.push_back(std::move(s));
  }
  written.push_back(table);
  const fs::path svg = out_dir / (axis + "_curve.svg");
  write_line_chart(svg, "Average accuracy vs " + xlabel, xlabel, "A-bar", series, axis != "num_tasks");
  written.push_back(svg);
}

void ablation_table(const std::vector<RunRecord>& records, const fs::path& out_dir, std::vector<fs::path>& written) {
  std::map<std::string, std::vector<double>> by_row;
  std::map<std::string, std::vector<std::string>> provenance;
  for (const auto& r : records) {
    if (!r.tags.count("ablation") || r.evals.empty()) continue;
    by_row[r.tags.at("ablation")].push_back(r.average_accuracy());
    provenance[r.tags.at("ablation")].push_back(r.run_id);
  }
  if (by_row.empty()) return;
  const fs::path table = out_dir / "ablation.tsv";
  std::ofstream out(table);
  out.precision(6);
  out << "#order\trow\treplay\tL_m\tbalanced_buffer\tL_r\tmean_A_bar\tsd\tn\truns\n";
  const auto& rows = ablation_rows();
  for (std::size_t o = 0; o < ablation_orders().size(); ++o) {
    for (const auto& name : ablation_orders()[o]) {
      const auto row = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.name == name; });
      if (!by_row.count(name)) continue;
      const Stats st = stats_of(by_row[name]);
      out << o << '\t' << name << "\tx\t" << (row->masked_loss ? "x" : "-") << '\t' << (row->balanced_buffer ? "x" : "-")
          << '\t' << (row->reconstruction ? "x" : "-") << '\t' << st.mean << '\t' << st.sd << '\t' << st.n << '\t';
      const auto& ids = provenance[name];
      for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? "," : "") << ids[i];
      out << '\n';
    }
  }
  written.push_back(table);
}

}  // namespace

std::vector<fs::path> emit_figures(const std::vector<RunRecord>& records, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;

  {
    const fs::path table = out_dir / "accuracy_curves.tsv";
    std::ofstream out(table);
    out.precision(17);
    out << "#run_id\tmethod\tseed\ttask\ta_t\tpooled\n";
    std::vector<Series> series;
    for (const auto& r : records) {
      Series s{r.run_id, {}, {}};
      for (const auto& e : r.evals) {
        out << r.run_id << '\t' << tag(r, "method") << '\t' << tag(r, "seed") << '\t' << e.task << '\t' << e.a_t
            << '\t' << e.pooled << '\n';
        s.x.push_back(e.task);
        s.y.push_back(e.a_t);
      }
      series.push_back(std::move(s));
    }
    written.push_back(table);
    if (series.size() <= 12) {
      const fs::path svg = out_dir / "accuracy_curves.svg";
      write_line_chart(svg, "Seen-task accuracy along the stream", "task", "a_t", series);
      written.push_back(svg);
    }
  }

  axis_figure(records, "budget", "per-task budget", out_dir, written);
  axis_figure(records, "label_rate", "label rate", out_dir, written);
  axis_figure(records, "num_tasks", "stream length", out_dir, written);
  ablation_table(records, out_dir, written);

  for (const auto& r : records) {
    if (!r.trace || r.trace->steps.empty()) continue;
    const fs::path table = out_dir / ("stability_" + r.run_id + ".tsv");
    std::ofstream out(table);
    out.precision(17);
    out << "#step\torigin\taccuracy\n";
    std::vector<Series> series;
    for (const auto& [origin, accs] : r.trace->accuracy) {
      Series s{"task " + std::to_string(origin), {}, {}};
      for (std::size_t i = 0; i < accs.size(); ++i) {
        out << r.trace->steps[i] << '\t' << origin << '\t' << accs[i] << '\n';
        s.x.push_back(static_cast<double>(r.trace->steps[i]));
        s.y.push_back(accs[i]);
      }
      series.push_back(std::move(s));
    }
    written.push_back(table);
    const fs::path svg = out_dir / ("stability_" + r.run_id + ".svg");
    write_line_chart(svg, "Probe accuracy during training: " + r.run_id, "optimizer step", "accuracy", series);
    written.push_back(svg);
  }
  return written;
}

}  // namespace dietcl
