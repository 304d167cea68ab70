#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace liseco {

using Json = nlohmann::json;

/// Decimal with 17 significant digits; round-trips every finite double.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace detail {

inline void dump_json(const Json& j, int indent, int depth, std::string& out) {
  const auto newline = [&](int level) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * level), ' ');
  };
  switch (j.type()) {
    case Json::value_t::number_float: out += format_double(j.get<double>()); break;
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      out += '[';
      bool first = true;
      // Numeric arrays stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_number(); });
      for (const auto& e : j) {
        if (!first) out += indent >= 0 && flat ? ", " : ",";
        if (!flat) newline(depth + 1);
        dump_json(e, indent, depth + 1, out);
        first = false;
      }
      if (!flat) newline(depth);
      out += ']';
      break;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        newline(depth + 1);
        out += Json(it.key()).dump();
        out += indent >= 0 ? ": " : ":";
        dump_json(it.value(), indent, depth + 1, out);
        first = false;
      }
      newline(depth);
      out += '}';
      break;
    }
    default: out += j.dump(); break;
  }
}

}  // namespace detail

/// Serializes like Json::dump but with full-precision floats. indent < 0 gives one line.
inline std::string dump_json(const Json& j, int indent = -1) {
  std::string out;
  detail::dump_json(j, indent, 0, out);
  return out;
}

}  // namespace liseco
