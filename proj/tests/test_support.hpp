#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "firegen/ca.hpp"
#include "firegen/geofields.hpp"

namespace fgtest {

/// Upper-tail p-value of a chi-square statistic.
inline double chi2_pvalue(double statistic, double dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

inline firegen::geo::Ecoregion flat_ecoregion(int n, float veg = 0.5f, float canopy = 0.5f,
                                     double wind = 0.0, double dir = 0.0) {
  return {firegen::geo::RasterGrid::constant(n, n, veg, 30.0f, "vegetation_density"),
          firegen::geo::RasterGrid::constant(n, n, canopy, 30.0f, "canopy_cover"),
          firegen::geo::RasterGrid::constant(n, n, 0.0f, 30.0f, "elevation"), wind, dir};
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("firegen_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fgtest
