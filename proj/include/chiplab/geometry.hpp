#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

namespace chiplab {

/// Position in package coordinates, micrometres. Origin is the lower-left
/// corner of the first chiplet.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
  Point center() const noexcept { return {(x0 + x1) / 2, (y0 + y1) / 2}; }
  bool contains(Point p) const noexcept { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  bool contains(const Rect& r) const noexcept {
    return r.x0 >= x0 && r.x1 <= x1 && r.y0 >= y0 && r.y1 <= y1;
  }
  bool overlaps(const Rect& r) const noexcept {
    return x0 < r.x1 && r.x0 < x1 && y0 < r.y1 && r.y0 < y1;
  }
  Rect expanded(double d) const noexcept { return {x0 - d, y0 - d, x1 + d, y1 + d}; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

inline double disc_area(double r) noexcept { return std::numbers::pi * r * r; }

/// Area of the intersection of two discs of radii r1, r2 whose centres are d
/// apart.
inline double disc_intersection_area(double d, double r1, double r2) noexcept {
  if (d >= r1 + r2) return 0.0;
  const double rmin = std::min(r1, r2);
  if (d <= std::abs(r1 - r2)) return disc_area(rmin);
  const double a1 = std::clamp((d * d + r1 * r1 - r2 * r2) / (2 * d * r1), -1.0, 1.0);
  const double a2 = std::clamp((d * d + r2 * r2 - r1 * r1) / (2 * d * r2), -1.0, 1.0);
  const double k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
  return r1 * r1 * std::acos(a1) + r2 * r2 * std::acos(a2) - 0.5 * std::sqrt(std::max(0.0, k));
}

}  // namespace chiplab
