#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "taigan/random.hpp"
#include "taigan/volume.hpp"

namespace taigan::testing {

inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-12) {
  return std::fabs(a - b) <= rel * std::max(std::fabs(b), abs_floor) || std::fabs(a - b) <= abs_floor;
}

inline Volume random_volume(Rng& rng, Index3 dims, double lo = 0.0, double hi = 1.0) {
  Volume v(dims);
  for (auto& x : v.storage()) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

/// Fresh empty directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace taigan::testing
