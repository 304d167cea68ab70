#pragma once

#include "liseco/types.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

namespace liseco {

/// Strictly monotone scalar map applied to the probe's linear score.
enum class Nonlinearity { sigmoid, identity, tanh };

inline std::string_view to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::sigmoid: return "sigmoid";
    case Nonlinearity::identity: return "identity";
    case Nonlinearity::tanh: return "tanh";
  }
  return "unknown";
}

inline std::optional<Nonlinearity> parse_nonlinearity(std::string_view s) {
  if (s == "sigmoid") return Nonlinearity::sigmoid;
  if (s == "identity") return Nonlinearity::identity;
  if (s == "tanh") return Nonlinearity::tanh;
  return std::nullopt;
}

/// Open image interval (lower, upper) of the map.
struct Image {
  double lower;
  double upper;
  bool contains_strictly(double a) const { return a > lower && a < upper; }
};

inline Image image(Nonlinearity nl) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (nl) {
    case Nonlinearity::sigmoid: return {0.0, 1.0};
    case Nonlinearity::tanh: return {-1.0, 1.0};
    case Nonlinearity::identity: return {-inf, inf};
  }
  return {-inf, inf};
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double apply(Nonlinearity nl, double z) {
  switch (nl) {
    case Nonlinearity::sigmoid: return sigmoid(z);
    case Nonlinearity::identity: return z;
    case Nonlinearity::tanh: return std::tanh(z);
  }
  return z;
}

/// Throws RangeError unless `a` is strictly inside image(nl). `what` names the bound.
inline void require_inside_image(Nonlinearity nl, double a, std::string_view what) {
  const Image im = image(nl);
  if (std::isnan(a)) {
    throw RangeError(std::string(what) + " is NaN");
  }
  if (a <= im.lower || a >= im.upper) {
    std::ostringstream os;
    os.precision(17);
    os << what << " = " << a << " is not strictly inside the image (" << im.lower << ", "
       << im.upper << ") of " << to_string(nl);
    throw RangeError(os.str());
  }
}

/// Inverse of the map on its open image.
inline double inverse_score(Nonlinearity nl, double a, std::string_view what = "alpha") {
  require_inside_image(nl, a, what);
  switch (nl) {
    case Nonlinearity::sigmoid: return std::log(a / (1.0 - a));
    case Nonlinearity::identity: return a;
    case Nonlinearity::tanh: return std::atanh(a);
  }
  return a;
}

}  // namespace liseco
