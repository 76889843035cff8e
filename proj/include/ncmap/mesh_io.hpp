#pragma once

// Mesh, feature and label file formats.
//
// FreeSurfer triangle surface (big-endian):
//   bytes 0..2   magic FF FF FE
//   comment      text terminated by two newline bytes ("\n\n")
//   int32        vertex count
//   int32        face count
//   float32 x3   per vertex
//   int32 x3     per face
//
// FreeSurfer curv "new" format (big-endian):
//   bytes 0..2   magic FF FF FF
//   int32        vertex count, face count, values per vertex (= 1)
//   float32      per vertex
//
// OFF:     "OFF", "V F 0", V lines "x y z", F lines "3 i j k".
// CSV:     header row of channel names, one row per vertex.
// Labels:  one non-negative integer per line.
// Text formats print doubles with 17 significant digits.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ncmap/error.hpp"
#include "ncmap/geometry.hpp"

namespace ncmap {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, ByteView bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_file_text(const std::filesystem::path& path) {
  const Bytes b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

inline void write_file_text(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace detail {

class BigEndianReader {
 public:
  explicit BigEndianReader(ByteView bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw ParseError(std::string("truncated stream while reading ") + what,
                       static_cast<std::int64_t>(pos_));
    }
  }
  std::uint8_t u8() {
    need(1, "byte");
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }
  std::int32_t i32(const char* what) { return std::bit_cast<std::int32_t>(u32(what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  ByteView bytes_;
  std::size_t pos_ = 0;
};

class BigEndianWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
  }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void text(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::int64_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ParseError::at_line("malformed number '" + std::string(s) + "'", line);
  }
  return v;
}

inline long long parse_int(std::string_view s, std::int64_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ParseError::at_line("malformed integer '" + std::string(s) + "'", line);
  }
  return v;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    out.push_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

/// Unit vertices plus the raw coordinates, which are dropped when every
/// vertex is already unit.
inline SphericalMesh mesh_from_raw(const std::vector<Vec3>& raw, std::vector<Face> faces) {
  std::vector<UnitPoint> verts;
  verts.reserve(raw.size());
  bool all_unit = true;
  for (const Vec3& p : raw) {
    const UnitPoint u(p);
    if (u.vec() != p) all_unit = false;
    verts.push_back(u);
  }
  return SphericalMesh(std::move(verts), std::move(faces), all_unit ? std::vector<Vec3>{} : raw);
}

inline Vec3 raw_vertex(const SphericalMesh& mesh, std::size_t i) {
  return mesh.raw_coordinates().empty() ? mesh.vertices()[i].vec() : mesh.raw_coordinates()[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FreeSurfer binary surface

inline constexpr std::uint8_t kTriangleMagic[3] = {0xFF, 0xFF, 0xFE};
inline constexpr std::uint8_t kCurvMagic[3] = {0xFF, 0xFF, 0xFF};

inline SphericalMesh read_freesurfer_surface(ByteView bytes) {
  detail::BigEndianReader in(bytes);
  in.need(3, "magic");
  std::uint8_t magic[3] = {in.u8(), in.u8(), in.u8()};
  if (std::memcmp(magic, kTriangleMagic, 3) != 0) {
    throw UnsupportedFormat("not a FreeSurfer triangle surface (magic " + std::to_string(magic[0]) + " " +
                            std::to_string(magic[1]) + " " + std::to_string(magic[2]) + ")");
  }
  // Comment runs up to and including the first "\n\n".
  std::uint8_t prev = 0;
  while (true) {
    const std::uint8_t c = in.u8();
    if (c == '\n' && prev == '\n') break;
    prev = c;
  }
  const std::int64_t count_offset = static_cast<std::int64_t>(in.offset());
  const std::int32_t nv = in.i32("vertex count");
  const std::int32_t nf = in.i32("face count");
  if (nv < 0 || nf < 0) throw ParseError("negative vertex or face count", count_offset);
  in.need(static_cast<std::size_t>(nv) * 12, "vertex coordinates");
  std::vector<Vec3> raw(static_cast<std::size_t>(nv));
  for (auto& p : raw) {
    const float x = in.f32("x"), y = in.f32("y"), z = in.f32("z");
    p = Vec3(x, y, z);
  }
  in.need(static_cast<std::size_t>(nf) * 12, "faces");
  std::vector<Face> faces(static_cast<std::size_t>(nf));
  for (auto& f : faces) {
    const auto off = static_cast<std::int64_t>(in.offset());
    for (auto& idx : f) idx = in.i32("face index");
    for (auto idx : f) {
      if (idx < 0 || idx >= nv) throw ParseError("face index out of range", off);
    }
  }
  return detail::mesh_from_raw(raw, std::move(faces));
}

inline Bytes write_freesurfer_surface(const SphericalMesh& mesh,
                                      std::string_view comment = "created by ncmap") {
  detail::BigEndianWriter out;
  for (auto b : kTriangleMagic) out.u8(b);
  out.text(comment);
  out.text("\n\n");
  out.i32(static_cast<std::int32_t>(mesh.vertex_count()));
  out.i32(static_cast<std::int32_t>(mesh.face_count()));
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 p = detail::raw_vertex(mesh, i);
    out.f32(static_cast<float>(p.x()));
    out.f32(static_cast<float>(p.y()));
    out.f32(static_cast<float>(p.z()));
  }
  for (const Face& f : mesh.faces()) {
    for (auto idx : f) out.i32(idx);
  }
  return out.take();
}

// ---------------------------------------------------------------------------
// FreeSurfer curv

inline FeatureMap read_freesurfer_curv(ByteView bytes, std::size_t vertex_count,
                                       std::string channel_name = "curv") {
  detail::BigEndianReader in(bytes);
  in.need(3, "magic");
  std::uint8_t magic[3] = {in.u8(), in.u8(), in.u8()};
  if (std::memcmp(magic, kCurvMagic, 3) != 0) {
    throw UnsupportedFormat("not a FreeSurfer new-format curv file");
  }
  const std::int32_t vnum = in.i32("vertex count");
  in.i32("face count");
  const std::int32_t per_vertex = in.i32("values per vertex");
  if (per_vertex != 1) {
    throw UnsupportedFormat("curv files with " + std::to_string(per_vertex) +
                            " values per vertex are not supported");
  }
  if (vnum < 0 || static_cast<std::size_t>(vnum) != vertex_count) {
    throw ShapeError("curv file has " + std::to_string(vnum) + " values, expected " +
                     std::to_string(vertex_count));
  }
  in.need(static_cast<std::size_t>(vnum) * 4, "values");
  Eigen::MatrixXd values(vnum, 1);
  for (std::int32_t i = 0; i < vnum; ++i) values(i, 0) = in.f32("value");
  return FeatureMap(std::move(values), {std::move(channel_name)});
}

inline Bytes write_freesurfer_curv(const FeatureMap& feat, int channel, std::size_t face_count) {
  detail::BigEndianWriter out;
  for (auto b : kCurvMagic) out.u8(b);
  out.i32(static_cast<std::int32_t>(feat.rows()));
  out.i32(static_cast<std::int32_t>(face_count));
  out.i32(1);
  for (Eigen::Index i = 0; i < feat.rows(); ++i) out.f32(static_cast<float>(feat.values(i, channel)));
  return out.take();
}

// ---------------------------------------------------------------------------
// OFF

inline std::string write_off(const SphericalMesh& mesh) {
  std::string s = "OFF\n" + std::to_string(mesh.vertex_count()) + " " + std::to_string(mesh.face_count()) +
                  " 0\n";
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 p = detail::raw_vertex(mesh, i);
    s += detail::format_double(p.x()) + " " + detail::format_double(p.y()) + " " +
         detail::format_double(p.z()) + "\n";
  }
  for (const Face& f : mesh.faces()) {
    s += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  }
  return s;
}

inline SphericalMesh read_off(std::string_view text) {
  const auto lines = detail::split_lines(text);
  std::size_t li = 0;
  auto next = [&]() -> std::pair<std::vector<std::string_view>, std::int64_t> {
    while (li < lines.size()) {
      std::string_view l = lines[li++];
      if (auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
      auto tok = detail::split_ws(l);
      if (!tok.empty()) return {tok, static_cast<std::int64_t>(li)};
    }
    throw ParseError::at_line("unexpected end of OFF file", static_cast<std::int64_t>(li));
  };
  auto [head, head_line] = next();
  if (head.size() != 1 || head[0] != "OFF") throw UnsupportedFormat("missing OFF header");
  auto [counts, counts_line] = next();
  if (counts.size() < 2) throw ParseError::at_line("expected vertex and face counts", counts_line);
  const long long nv = detail::parse_int(counts[0], counts_line);
  const long long nf = detail::parse_int(counts[1], counts_line);
  if (nv < 0 || nf < 0) throw ParseError::at_line("negative counts", counts_line);
  std::vector<Vec3> raw(static_cast<std::size_t>(nv));
  for (auto& p : raw) {
    auto [tok, line] = next();
    if (tok.size() != 3) throw ParseError::at_line("expected 3 coordinates", line);
    p = Vec3(detail::parse_double(tok[0], line), detail::parse_double(tok[1], line),
             detail::parse_double(tok[2], line));
  }
  std::vector<Face> faces(static_cast<std::size_t>(nf));
  for (auto& f : faces) {
    auto [tok, line] = next();
    if (tok.size() != 4 || detail::parse_int(tok[0], line) != 3) {
      throw ParseError::at_line("only triangular faces are supported", line);
    }
    for (int k = 0; k < 3; ++k) {
      const long long idx = detail::parse_int(tok[static_cast<std::size_t>(k) + 1], line);
      if (idx < 0 || idx >= nv) throw ParseError::at_line("face index out of range", line);
      f[static_cast<std::size_t>(k)] = static_cast<std::int32_t>(idx);
    }
  }
  return detail::mesh_from_raw(raw, std::move(faces));
}

// ---------------------------------------------------------------------------
// CSV features

inline std::string write_features_csv(const FeatureMap& feat) {
  std::string s;
  for (std::size_t c = 0; c < feat.channel_names.size(); ++c) {
    if (c) s += ',';
    s += feat.channel_names[c];
  }
  s += '\n';
  for (Eigen::Index i = 0; i < feat.rows(); ++i) {
    for (Eigen::Index c = 0; c < feat.values.cols(); ++c) {
      if (c) s += ',';
      s += detail::format_double(feat.values(i, c));
    }
    s += '\n';
  }
  return s;
}

inline FeatureMap read_features_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw ParseError::at_line("empty CSV", 1);
  std::vector<std::string> names;
  for (auto n : detail::split(lines[0], ',')) {
    while (!n.empty() && (n.back() == '\r' || n.back() == ' ')) n.remove_suffix(1);
    while (!n.empty() && n.front() == ' ') n.remove_prefix(1);
    if (n.empty()) throw ParseError::at_line("empty channel name in header", 1);
    names.emplace_back(n);
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    std::string_view l = lines[li];
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (l.empty()) continue;
    const auto cells = detail::split(l, ',');
    const auto line = static_cast<std::int64_t>(li + 1);
    if (cells.size() != names.size()) {
      throw ParseError::at_line("expected " + std::to_string(names.size()) + " columns, got " +
                                    std::to_string(cells.size()),
                                line);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) row.push_back(detail::parse_double(c, line));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < names.size(); ++c) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
  }
  return FeatureMap(std::move(values), std::move(names));
}

// ---------------------------------------------------------------------------
// Labels

inline std::string write_labels(const Parcellation& parc) {
  std::string s;
  for (int l : parc.labels) s += std::to_string(l) + "\n";
  return s;
}

inline Parcellation read_labels(std::string_view text) {
  Parcellation p;
  const auto lines = detail::split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::string_view l = lines[li];
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (l.empty()) continue;
    const auto line = static_cast<std::int64_t>(li + 1);
    const long long v = detail::parse_int(l, line);
    if (v < 0) throw ParseError::at_line("negative label " + std::to_string(v), line);
    if (v > std::numeric_limits<int>::max()) throw ParseError::at_line("label out of range", line);
    p.labels.push_back(static_cast<int>(v));
  }
  return p;
}

// File conveniences.

inline SphericalMesh load_mesh(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".off" || ext == ".OFF") return read_off(read_file_text(path));
  return read_freesurfer_surface(read_file_bytes(path));
}

inline void save_mesh(const std::filesystem::path& path, const SphericalMesh& mesh) {
  const auto ext = path.extension().string();
  if (ext == ".off" || ext == ".OFF") {
    write_file_text(path, write_off(mesh));
  } else {
    write_file_bytes(path, write_freesurfer_surface(mesh));
  }
}

/// Loads features from a CSV or a single-channel curv file.
inline FeatureMap load_features(const std::filesystem::path& path, std::size_t vertex_count) {
  if (path.extension() == ".csv") {
    FeatureMap f = read_features_csv(read_file_text(path));
    if (static_cast<std::size_t>(f.rows()) != vertex_count) {
      throw ShapeError("'" + path.string() + "' has " + std::to_string(f.rows()) + " rows, expected " +
                       std::to_string(vertex_count));
    }
    return f;
  }
  return read_freesurfer_curv(read_file_bytes(path), vertex_count, path.stem().string());
}

}  // namespace ncmap
