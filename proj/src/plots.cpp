#include "ngfn/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ngfn {

namespace {

constexpr double kW = 640.0, kH = 400.0;
constexpr double kMarginL = 70.0, kMarginR = 20.0, kMarginT = 30.0, kMarginB = 45.0;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_one(const std::string& path, const std::string& title,
               const std::vector<double>& xs, const std::vector<double>& ys) {
  double x_lo = xs.front(), x_hi = xs.front();
  double y_lo = ys.front(), y_hi = ys.front();
  for (double x : xs) {
    x_lo = std::min(x_lo, x);
    x_hi = std::max(x_hi, x);
  }
  for (double y : ys) {
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double plot_w = kW - kMarginL - kMarginR;
  const double plot_h = kH - kMarginT - kMarginB;
  auto px = [&](double x) { return kMarginL + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return kH - kMarginB - (y - y_lo) / (y_hi - y_lo) * plot_h; };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("plots: cannot open '" + path + "' for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">"
    << title << "</text>\n"
    << "<line x1=\"" << kMarginL << "\" y1=\"" << kH - kMarginB << "\" x2=\"" << kW - kMarginR
    << "\" y2=\"" << kH - kMarginB << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT << "\" x2=\"" << kMarginL << "\" y2=\""
    << kH - kMarginB << "\" stroke=\"black\"/>\n";
  // axis extent labels
  f << "<text x=\"" << kMarginL << "\" y=\"" << kH - kMarginB + 18
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << fmt(x_lo)
    << "</text>\n"
    << "<text x=\"" << kW - kMarginR << "\" y=\"" << kH - kMarginB + 18
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << fmt(x_hi)
    << "</text>\n"
    << "<text x=\"" << kMarginL - 6 << "\" y=\"" << kH - kMarginB
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << fmt(y_lo)
    << "</text>\n"
    << "<text x=\"" << kMarginL - 6 << "\" y=\"" << kMarginT + 4
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << fmt(y_hi)
    << "</text>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 8
    << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
  if (xs.size() == 1) {
    f << "<circle cx=\"" << px(xs[0]) << "\" cy=\"" << py(ys[0])
      << "\" r=\"3\" fill=\"steelblue\"/>\n";
  } else {
    f << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
      f << (i ? " " : "") << px(xs[i]) << "," << py(ys[i]);
    }
    f << "\"/>\n";
  }
  f << "</svg>\n";
  if (!f) throw IoError("plots: write failed for '" + path + "'");
}

}  // namespace

void write_metric_plots(const std::vector<MetricsRecord>& records, const std::string& dir) {
  if (records.empty()) throw ConfigError("plots: no metric rows to plot");
  std::vector<double> xs;
  for (const MetricsRecord& r : records) xs.push_back(static_cast<double>(r.step));
  const std::pair<const char*, double MetricsRecord::*> columns[] = {
      {"mean_reward", &MetricsRecord::mean_reward},
      {"diversity", &MetricsRecord::diversity},
      {"prior_distance", &MetricsRecord::prior_distance},
      {"target_tv", &MetricsRecord::target_tv},
      {"terminal_g_norm", &MetricsRecord::terminal_g_norm},
      {"loss_fwd", &MetricsRecord::loss_fwd},
      {"loss_rev", &MetricsRecord::loss_rev},
      {"loss_terminal", &MetricsRecord::loss_terminal},
      {"loss_reg", &MetricsRecord::loss_reg}};
  for (const auto& [name, member] : columns) {
    std::vector<double> ys;
    for (const MetricsRecord& r : records) ys.push_back(r.*member);
    write_one(dir + "/plot_" + name + ".svg", name, xs, ys);
  }
}

}  // namespace ngfn
