#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfnet {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;

/// Shannon rate in bits/s/Hz for a given SINR.
inline double shannon_rate(double sinr) { return std::log2(1.0 + sinr); }

inline double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace mfnet
