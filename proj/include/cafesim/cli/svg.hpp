// Copyright 2026 The cafesim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// Minimal SVG line charts for diagnostic output.

#ifndef CAFESIM_CLI_SVG_HPP_
#define CAFESIM_CLI_SVG_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace cafesim::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<Series> series;
};

inline std::string escape(const std::string& s) {
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

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string render(const Chart& c) {
  constexpr double kW = 640, kH = 400, kL = 70, kR = 150, kT = 40, kB = 50;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto ty = [&](double y) { return c.log_y ? std::log10(y) : y; };
  for (const auto& s : c.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (c.log_y && !(s.y[i] > 0.0))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (ty(y) - y0) / (y1 - y0) * (kH - kT - kB); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  out += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(c.title) + "</text>\n";
  out += "<line x1=\"" + fmt(kL) + "\" y1=\"" + fmt(kH - kB) + "\" x2=\"" + fmt(kW - kR) + "\" y2=\"" +
         fmt(kH - kB) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt(kL) + "\" y1=\"" + fmt(kT) + "\" x2=\"" + fmt(kL) + "\" y2=\"" + fmt(kH - kB) +
         "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0;
    const double fy = y0 + (y1 - y0) * t / 4.0;
    const double yv = c.log_y ? std::pow(10.0, fy) : fy;
    out += "<text x=\"" + fmt(px(fx)) + "\" y=\"" + fmt(kH - kB + 16) + "\" text-anchor=\"middle\">" +
           fmt(fx) + "</text>\n";
    out += "<text x=\"" + fmt(kL - 6) + "\" y=\"" + fmt(kH - kB - (fy - y0) / (y1 - y0) * (kH - kT - kB) + 4) +
           "\" text-anchor=\"end\">" + fmt(yv) + "</text>\n";
  }
  out += "<text x=\"" + fmt((kL + kW - kR) / 2) + "\" y=\"" + fmt(kH - 10) + "\" text-anchor=\"middle\">" +
         escape(c.x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + fmt((kT + kH - kB) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt((kT + kH - kB) / 2) + ")\">" + escape(c.y_label) + "</text>\n";
  for (std::size_t si = 0; si < c.series.size(); ++si) {
    const auto& s = c.series[si];
    const char* color = colors[si % 5];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (c.log_y && !(s.y[i] > 0.0))) continue;
      pts += fmt(px(s.x[i])) + "," + fmt(py(s.y[i])) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    const double ly = kT + 16.0 * static_cast<double>(si);
    out += "<line x1=\"" + fmt(kW - kR + 10) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(kW - kR + 30) + "\" y2=\"" +
           fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(kW - kR + 34) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(s.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace cafesim::svg

#endif  // CAFESIM_CLI_SVG_HPP_
