#pragma once

// Plumbing shared by the ncmap subcommands: config files, config echoes,
// list parsing, CSV/SVG/JSON writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ncmap/mesh_io.hpp"
#include "ncmap/rotations.hpp"

namespace ncmap::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

/// Reads `key = value` lines ('#' starts a comment) into `--key=value`
/// arguments.
inline std::vector<std::string> config_file_args(const fs::path& path) {
  const std::string text = read_file_text(path);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError::at_line("'" + path.string() + "': expected key = value", line_no);
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ParseError::at_line("'" + path.string() + "': empty key", line_no);
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

/// Command line with config-file entries spliced in right after the
/// subcommand name, so flags given on the command line take precedence.
inline std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> from_file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      from_file = config_file_args(args[i + 1]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      from_file = config_file_args(args[i].substr(9));
    }
  }
  if (!args.empty()) args.insert(args.begin() + 1, from_file.begin(), from_file.end());
  return args;
}

/// Comma-separated list.
template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(t);
    } else {
      T v{};
      std::istringstream conv(t);
      conv >> v;
      if (conv.fail() || !conv.eof()) throw InputError("bad value '" + t + "' in " + what);
      out.push_back(v);
    }
  }
  if (out.empty()) throw InputError(what + " is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Config echo

struct ConfigEcho {
  std::string command;
  std::vector<std::pair<std::string, std::string>> entries;

  std::string text() const {
    std::string s = "command=" + command + "\nversion=" + NCMAP_VERSION + "\n";
    for (const auto& [k, v] : entries) s += k + "=" + v + "\n";
    return s;
  }

  /// FNV-1a over the entries that affect results (paths and worker counts
  /// are left out so runs on different files can be joined).
  std::string hash() const {
    static const std::set<std::string> skip = {"out", "config", "jobs", "mesh", "features", "model",
                                               "fixed-model", "moving-model", "fixed-mesh",
                                               "fixed-features", "moving-mesh", "moving-features",
                                               "fixed-labels", "moving-labels", "truth", "data",
                                               "no-svg"};
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const std::string& s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0xFF;
      h *= 1099511628211ULL;
    };
    feed(command);
    feed(NCMAP_VERSION);
    for (const auto& [k, v] : entries) {
      if (skip.count(k)) continue;
      feed(k);
      feed(v);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  Json json() const {
    Json j = Json::object();
    for (const auto& [k, v] : entries) j[k] = v;
    return j;
  }
};

/// Effective value of every option of a parsed subcommand.
inline ConfigEcho echo_options(const CLI::App& sub) {
  ConfigEcho e;
  e.command = sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::string value;
    if (opt->get_type_size() == 0) {
      value = opt->count() > 0 && opt->as<bool>() ? "true" : "false";
    } else if (opt->count() > 0) {
      value = opt->results().back();
    } else {
      value = opt->get_default_str();
    }
    e.entries.emplace_back(name, value);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Output helpers

inline std::string num(double v) { return detail::format_double(v); }

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_json(const fs::path& path, const Json& j) { write_file_text(path, j.dump(2) + "\n"); }

inline Json rotation_json(const Rotation& r) {
  const auto e = from_rotation(r, Parametrization::euler_zyx);
  Json j;
  j["quaternion_wxyz"] = {r.w(), r.x(), r.y(), r.z()};
  const Mat3 m = r.matrix();
  j["matrix"] = {{m(0, 0), m(0, 1), m(0, 2)}, {m(1, 0), m(1, 1), m(1, 2)}, {m(2, 0), m(2, 1), m(2, 2)}};
  j["yaw_deg"] = deg(e.values[0]);
  j["pitch_deg"] = deg(e.values[1]);
  j["roll_deg"] = deg(e.values[2]);
  return j;
}

/// Reads a rotation from a JSON object holding "quaternion_wxyz"
/// (possibly nested under "rotation").
inline Rotation read_rotation_json(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what(), static_cast<std::int64_t>(e.byte));
  }
  const Json* node = &j;
  if (j.contains("rotation")) node = &j["rotation"];
  if (!node->contains("quaternion_wxyz")) throw InputError("'" + path.string() + "' has no quaternion_wxyz");
  const auto& q = (*node)["quaternion_wxyz"];
  if (!q.is_array() || q.size() != 4) throw InputError("'" + path.string() + "': quaternion_wxyz needs 4 numbers");
  return Rotation::from_quaternion(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
}

// ---------------------------------------------------------------------------
// SVG

inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Loss trace on a log axis; vertical ticks mark descent boundaries.
inline std::string svg_loss_plot(const std::vector<double>& loss, const std::vector<int>& descent,
                                 const std::string& title) {
  const double w = 800, h = 400, left = 70, right = 20, top = 40, bottom = 50;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"800\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"400\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + svg_escape(title) + "</text>\n";
  if (loss.empty()) return s + "</svg>\n";
  const double floor = 1e-12;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double l : loss) {
    const double v = std::log10(std::max(l, floor));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  lo = std::floor(lo);
  hi = std::ceil(hi);
  if (hi <= lo) hi = lo + 1;
  const double pw = w - left - right, ph = h - top - bottom;
  auto X = [&](std::size_t i) { return left + pw * static_cast<double>(i) / std::max<std::size_t>(loss.size() - 1, 1); };
  auto Y = [&](double l) { return top + ph * (hi - std::log10(std::max(l, floor))) / (hi - lo); };
  for (int e = static_cast<int>(lo); e <= static_cast<int>(hi); ++e) {
    const double y = top + ph * (hi - e) / (hi - lo);
    s += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(y, 1) + "\" x2=\"" + fixed(w - right, 1) + "\" y2=\"" +
         fixed(y, 1) + "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + fixed(left - 6, 1) + "\" y=\"" + fixed(y + 4, 1) + "\" text-anchor=\"end\">1e" +
         std::to_string(e) + "</text>\n";
  }
  for (std::size_t i = 1; i < descent.size() && i < loss.size(); ++i) {
    if (descent[i] != descent[i - 1]) {
      s += "<line x1=\"" + fixed(X(i), 1) + "\" y1=\"" + fixed(top, 1) + "\" x2=\"" + fixed(X(i), 1) + "\" y2=\"" +
           fixed(h - bottom, 1) + "\" stroke=\"#f2c4c4\"/>\n";
    }
  }
  s += "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < loss.size(); ++i) s += fixed(X(i), 2) + "," + fixed(Y(loss[i]), 2) + " ";
  s += "\"/>\n";
  s += "<text x=\"" + fixed(left + pw / 2, 1) + "\" y=\"" + fixed(h - 12, 1) +
       "\" text-anchor=\"middle\">step (red lines: new descent)</text>\n";
  s += "<text x=\"16\" y=\"" + fixed(top + ph / 2, 1) + "\" transform=\"rotate(-90 16 " + fixed(top + ph / 2, 1) +
       ")\" text-anchor=\"middle\">loss</text>\n";
  return s + "</svg>\n";
}

struct Bar {
  std::string label;
  double value;
  double half_width;  // NaN draws no whisker
};

inline std::string svg_bar_chart(const std::vector<Bar>& bars, const std::string& title, const std::string& y_label) {
  const double w = std::max(400.0, 90.0 * static_cast<double>(bars.size()) + 100), h = 420;
  const double left = 70, right = 20, top = 40, bottom = 110;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(w, 0) + "\" height=\"420\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(w / 2, 1) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + svg_escape(title) +
       "</text>\n";
  double hi = 0.0;
  for (const auto& b : bars) hi = std::max(hi, b.value + (std::isnan(b.half_width) ? 0.0 : b.half_width));
  if (!(hi > 0.0)) hi = 1.0;
  const double pw = w - left - right, ph = h - top - bottom;
  auto Y = [&](double v) { return top + ph * (1.0 - std::max(v, 0.0) / hi); };
  for (int t = 0; t <= 4; ++t) {
    const double v = hi * t / 4.0;
    s += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(Y(v), 1) + "\" x2=\"" + fixed(w - right, 1) + "\" y2=\"" +
         fixed(Y(v), 1) + "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + fixed(left - 6, 1) + "\" y=\"" + fixed(Y(v) + 4, 1) + "\" text-anchor=\"end\">" + fixed(v, 3) +
         "</text>\n";
  }
  const double slot = pw / std::max<std::size_t>(bars.size(), 1);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x = left + slot * static_cast<double>(i) + slot * 0.2, bw = slot * 0.6;
    s += "<rect x=\"" + fixed(x, 1) + "\" y=\"" + fixed(Y(b.value), 1) + "\" width=\"" + fixed(bw, 1) +
         "\" height=\"" + fixed(top + ph - Y(b.value), 1) + "\" fill=\"#5b8bd0\"/>\n";
    if (!std::isnan(b.half_width)) {
      const double cx = x + bw / 2;
      s += "<line x1=\"" + fixed(cx, 1) + "\" y1=\"" + fixed(Y(b.value + b.half_width), 1) + "\" x2=\"" + fixed(cx, 1) +
           "\" y2=\"" + fixed(Y(b.value - b.half_width), 1) + "\" stroke=\"black\"/>\n";
    }
    const double lx = x + bw / 2, ly = top + ph + 10;
    s += "<text x=\"" + fixed(lx, 1) + "\" y=\"" + fixed(ly, 1) + "\" transform=\"rotate(40 " + fixed(lx, 1) + " " +
         fixed(ly, 1) + ")\">" + svg_escape(b.label) + "</text>\n";
  }
  s += "<text x=\"16\" y=\"" + fixed(top + ph / 2, 1) + "\" transform=\"rotate(-90 16 " + fixed(top + ph / 2, 1) +
       ")\" text-anchor=\"middle\">" + svg_escape(y_label) + "</text>\n";
  return s + "</svg>\n";
}

}  // namespace ncmap::cli
