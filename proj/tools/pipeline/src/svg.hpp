#pragma once

// Static SVG line and scatter charts for the report.

#include <sstream>
#include <string>
#include <vector>

namespace taigan::pipeline {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Rect {
  double x, y, w, h;
};

class Figure {
 public:
  Figure(int width, int height);
  void line_panel(const Rect& area, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                  const std::vector<Series>& series);
  /// Points plus the identity line and a least-squares fit line.
  void scatter_panel(const Rect& area, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const Series& points);
  std::string str() const;

 private:
  struct Axes;
  Axes axes(const Rect& area, double x0, double x1, double y0, double y1, const std::string& title,
            const std::string& xlabel, const std::string& ylabel);
  int width_, height_;
  std::ostringstream body_;
};

}  // namespace taigan::pipeline
