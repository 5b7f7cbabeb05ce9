#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace resq {

// Hand-rolled SVG 1.1 line charts: axes, ticks, legend, one polyline per
// series. No dependencies, no scripting — a plain document any viewer renders.

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace svg_detail {

inline constexpr std::array<const char*, 6> kPalette = {
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo, hi;
  double map(double v, double a, double b) const {  // data value -> pixel in [a, b]
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

inline Range span_of(const std::vector<Series>& series, bool use_x) {
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& s : series) {
    for (double v : use_x ? s.x : s.y) {
      if (!std::isfinite(v)) continue;
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("chart has no finite data");
  if (lo == hi) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace svg_detail

inline std::string render_line_chart(const std::vector<Series>& series, const std::string& title,
                                     const std::string& x_label, const std::string& y_label,
                                     int width = 720, int height = 432) {
  using namespace svg_detail;
  if (series.empty()) throw std::invalid_argument("chart needs at least one series");
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series x/y lengths differ");
    if (s.x.empty()) throw std::invalid_argument("series " + s.name + " is empty");
  }
  const double ml = 64, mr = 16, mt = 34, mb = 44;  // margins
  const double x0 = ml, x1 = width - mr;
  const double y0 = height - mb, y1 = mt;           // pixel y grows downward
  const Range rx = span_of(series, true);
  const Range ry = span_of(series, false);

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
         std::to_string(width) + "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
         std::to_string(width) + " " + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  out += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\""
         " text-anchor=\"middle\">" + escape(title) + "</text>\n";

  // axes
  out += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" +
         num(y0) + "\" stroke=\"#333333\"/>\n";
  out += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" +
         num(y1) + "\" stroke=\"#333333\"/>\n";

  const int ticks = 5;
  for (int i = 0; i < ticks; ++i) {
    const double f = static_cast<double>(i) / (ticks - 1);
    const double xv = rx.lo + f * (rx.hi - rx.lo);
    const double xp = rx.map(xv, x0, x1);
    out += "<line x1=\"" + num(xp) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(xp) + "\" y2=\"" +
           num(y0 + 4) + "\" stroke=\"#333333\"/>\n";
    out += "<text x=\"" + num(xp) + "\" y=\"" + num(y0 + 18) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" +
           num(xv) + "</text>\n";
    const double yv = ry.lo + f * (ry.hi - ry.lo);
    const double yp = ry.map(yv, y0, y1);
    out += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(yp) + "\" x2=\"" + num(x0) + "\" y2=\"" +
           num(yp) + "\" stroke=\"#333333\"/>\n";
    out += "<text x=\"" + num(x0 - 8) + "\" y=\"" + num(yp + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + num(yv) +
           "</text>\n";
  }
  out += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(height - 8.0) +
         "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
  out += "<text x=\"14\" y=\"" + num((y0 + y1) / 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         num((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % kPalette.size()];
    std::string points;
    for (size_t j = 0; j < series[i].x.size(); ++j) {
      if (!points.empty()) points += ' ';
      points += num(rx.map(series[i].x[j], x0, x1)) + "," + num(ry.map(series[i].y[j], y0, y1));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    const double ly = mt + 16.0 * static_cast<double>(i);
    out += "<line x1=\"" + num(x1 - 110) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(x1 - 90) +
           "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + num(x1 - 84) + "\" y=\"" + num(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(series[i].name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

/// Terminal fallback: one character per bucket, ten brightness levels.
inline std::string ascii_sparkline(const std::vector<double>& values, size_t width = 60) {
  static constexpr char kLevels[] = " .:-=+*#%@";
  if (values.empty() || width == 0) return "";
  double lo = values[0], hi = values[0];
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;
  const size_t n = std::min(width, values.size());
  std::string out(n, ' ');
  for (size_t i = 0; i < n; ++i) {
    // average the bucket covering this column
    const size_t b = i * values.size() / n;
    const size_t e = std::max(b + 1, (i + 1) * values.size() / n);
    double sum = 0.0;
    size_t cnt = 0;
    for (size_t j = b; j < e; ++j) {
      if (std::isfinite(values[j])) {
        sum += values[j];
        ++cnt;
      }
    }
    const double v = cnt ? sum / static_cast<double>(cnt) : lo;
    const double f = (v - lo) / (hi - lo);
    const int idx = std::clamp(static_cast<int>(f * 9.0 + 0.5), 0, 9);
    out[i] = kLevels[idx];
  }
  return out;
}

}  // namespace resq
