#include "svg.hpp"

#include <algorithm>
#include <cmath>

#include "taigan/text_io.hpp"

namespace taigan::pipeline {

namespace {

const char* kColours[] = {"#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6d597a", "#2e4057"};

std::string num(double v) { return format_fixed(v, 2); }

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

/// Step of roughly `target` ticks across [lo, hi], from {1, 2, 5} x 10^k.
double tick_step(double lo, double hi, int target = 5) {
  const double raw = (hi - lo) / target;
  if (!(raw > 0)) return 1.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) return m * mag;
  return 10.0 * mag;
}

void expand(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
}

}  // namespace

struct Figure::Axes {
  Rect plot;
  double x0, x1, y0, y1;
  double px(double x) const { return plot.x + (x - x0) / (x1 - x0) * plot.w; }
  double py(double y) const { return plot.y + plot.h - (y - y0) / (y1 - y0) * plot.h; }
};

Figure::Figure(int width, int height) : width_(width), height_(height) {}

Figure::Axes Figure::axes(const Rect& a, double x0, double x1, double y0, double y1, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel) {
  expand(x0, x1);
  expand(y0, y1);
  const double xs = tick_step(x0, x1), ys = tick_step(y0, y1);
  x0 = std::floor(x0 / xs) * xs;
  x1 = std::ceil(x1 / xs) * xs;
  y0 = std::floor(y0 / ys) * ys;
  y1 = std::ceil(y1 / ys) * ys;
  Axes ax{{a.x + 60, a.y + 36, a.w - 80, a.h - 86}, x0, x1, y0, y1};
  const Rect& p = ax.plot;
  body_ << "<text x=\"" << num(a.x + a.w / 2) << "\" y=\"" << num(a.y + 22)
        << "\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  body_ << "<rect x=\"" << num(p.x) << "\" y=\"" << num(p.y) << "\" width=\"" << num(p.w) << "\" height=\"" << num(p.h)
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double t = x0; t <= x1 + 1e-9 * xs; t += xs) {
    body_ << "<line x1=\"" << num(ax.px(t)) << "\" y1=\"" << num(p.y + p.h) << "\" x2=\"" << num(ax.px(t))
          << "\" y2=\"" << num(p.y + p.h + 4) << "\" stroke=\"#333\"/>";
    body_ << "<text x=\"" << num(ax.px(t)) << "\" y=\"" << num(p.y + p.h + 16)
          << "\" text-anchor=\"middle\" font-size=\"10\">" << format_double(std::round(t / xs) * xs) << "</text>\n";
  }
  for (double t = y0; t <= y1 + 1e-9 * ys; t += ys) {
    body_ << "<line x1=\"" << num(p.x - 4) << "\" y1=\"" << num(ax.py(t)) << "\" x2=\"" << num(p.x) << "\" y2=\""
          << num(ax.py(t)) << "\" stroke=\"#333\"/>";
    body_ << "<text x=\"" << num(p.x - 6) << "\" y=\"" << num(ax.py(t) + 3)
          << "\" text-anchor=\"end\" font-size=\"10\">" << format_double(std::round(t / ys * 1e6) / 1e6 * ys)
          << "</text>\n";
  }
  body_ << "<text x=\"" << num(p.x + p.w / 2) << "\" y=\"" << num(p.y + p.h + 34)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(xlabel) << "</text>\n";
  body_ << "<text transform=\"translate(" << num(a.x + 14) << "," << num(p.y + p.h / 2)
        << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"11\">" << escape(ylabel) << "</text>\n";
  return ax;
}

void Figure::line_panel(const Rect& area, const std::string& title, const std::string& xlabel,
                        const std::string& ylabel, const std::vector<Series>& series) {
  double x0 = HUGE_VAL, x1 = -HUGE_VAL, y0 = 0, y1 = -HUGE_VAL;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y1 = 1;
  const Axes ax = axes(area, x0, x1, y0, y1, title, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* col = kColours[i % 6];
    body_ << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) body_ << (k ? " " : "") << num(ax.px(s.x[k])) << "," << num(ax.py(s.y[k]));
    body_ << "\"/>\n";
    const double ly = ax.plot.y + 12 + 14 * static_cast<double>(i);
    body_ << "<line x1=\"" << num(ax.plot.x + ax.plot.w - 130) << "\" y1=\"" << num(ly) << "\" x2=\""
          << num(ax.plot.x + ax.plot.w - 110) << "\" y2=\"" << num(ly) << "\" stroke=\"" << col
          << "\" stroke-width=\"2\"/>";
    body_ << "<text x=\"" << num(ax.plot.x + ax.plot.w - 106) << "\" y=\"" << num(ly + 3) << "\" font-size=\"10\">"
          << escape(s.label) << "</text>\n";
  }
}

void Figure::scatter_panel(const Rect& area, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const Series& pts) {
  double lo = HUGE_VAL, hi = -HUGE_VAL;
  for (double v : pts.x) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : pts.y) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  const Axes ax = axes(area, lo, hi, lo, hi, title, xlabel, ylabel);
  const double a0 = std::max(ax.x0, ax.y0), a1 = std::min(ax.x1, ax.y1);
  body_ << "<line x1=\"" << num(ax.px(a0)) << "\" y1=\"" << num(ax.py(a0)) << "\" x2=\"" << num(ax.px(a1))
        << "\" y2=\"" << num(ax.py(a1)) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t k = 0; k < pts.x.size(); ++k)
    body_ << "<circle cx=\"" << num(ax.px(pts.x[k])) << "\" cy=\"" << num(ax.py(pts.y[k]))
          << "\" r=\"3\" fill=\"" << kColours[0] << "\" fill-opacity=\"0.7\"/>\n";
  const std::size_t n = pts.x.size();
  if (n >= 2) {
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < n; ++k) mx += pts.x[k], my += pts.y[k];
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0;
    for (std::size_t k = 0; k < n; ++k) sxy += (pts.x[k] - mx) * (pts.y[k] - my), sxx += (pts.x[k] - mx) * (pts.x[k] - mx);
    if (sxx > 0) {
      const double slope = sxy / sxx, icpt = my - slope * mx;
      // Clip the fit line to the plotted y range.
      double xa = ax.x0, xb = ax.x1;
      if (slope != 0) {
        const double xl = (ax.y0 - icpt) / slope, xh = (ax.y1 - icpt) / slope;
        xa = std::max(xa, std::min(xl, xh));
        xb = std::min(xb, std::max(xl, xh));
      }
      if (xb > xa)
        body_ << "<line x1=\"" << num(ax.px(xa)) << "\" y1=\"" << num(ax.py(icpt + slope * xa)) << "\" x2=\""
              << num(ax.px(xb)) << "\" y2=\"" << num(ax.py(icpt + slope * xb)) << "\" stroke=\"" << kColours[1]
              << "\" stroke-width=\"1.5\"/>\n";
      body_ << "<text x=\"" << num(ax.plot.x + 8) << "\" y=\"" << num(ax.plot.y + 14) << "\" font-size=\"10\">y = "
            << format_fixed(slope, 3) << " x " << (icpt < 0 ? "- " : "+ ") << format_fixed(std::fabs(icpt), 3)
            << " (dashed: identity)</text>\n";
    }
  }
}

std::string Figure::str() const {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\"" << height_
    << "\" viewBox=\"0 0 " << width_ << " " << height_ << "\" font-family=\"sans-serif\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << body_.str() << "</svg>\n";
  return o.str();
}

}  // namespace taigan::pipeline
