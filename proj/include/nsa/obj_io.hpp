#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nsa/errors.hpp"
#include "nsa/mesh.hpp"

namespace nsa {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view tok, int line) {
  // from_chars for double is available in libstdc++ 11.
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  return value;
}

inline int parse_index(std::string_view tok, int count, int line) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || value == 0)
    throw ParseError("line " + std::to_string(line) + ": bad index '" + std::string(tok) + "'");
  const int idx = value > 0 ? value - 1 : count + value;
  if (idx < 0 || idx >= count)
    throw ParseError("line " + std::to_string(line) + ": index out of range");
  return idx;
}

}  // namespace detail

/// Parses Wavefront OBJ text. Polygons are fan-triangulated. The result is
/// validated (manifold, consistently oriented) but not normalized.
inline TriangleMesh parse_obj(std::string_view text) {
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector2d> uvs;
  std::vector<Eigen::Vector3i> faces;
  std::vector<Eigen::Vector3i> face_uvs;
  bool all_faces_textured = true;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto tok = detail::split_ws(line);
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError("line " + std::to_string(line_no) + ": short vertex");
      verts.emplace_back(detail::parse_double(tok[1], line_no), detail::parse_double(tok[2], line_no),
                         detail::parse_double(tok[3], line_no));
    } else if (tok[0] == "vt") {
      if (tok.size() < 3) throw ParseError("line " + std::to_string(line_no) + ": short texcoord");
      uvs.emplace_back(detail::parse_double(tok[1], line_no), detail::parse_double(tok[2], line_no));
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError("line " + std::to_string(line_no) + ": face needs 3 vertices");
      std::vector<int> vi, ti;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const std::string_view t = tok[k];
        const auto slash = t.find('/');
        vi.push_back(detail::parse_index(t.substr(0, slash), static_cast<int>(verts.size()), line_no));
        if (slash != std::string_view::npos) {
          const auto rest = t.substr(slash + 1);
          const auto slash2 = rest.find('/');
          const auto vt = rest.substr(0, slash2);
          if (!vt.empty())
            ti.push_back(detail::parse_index(vt, static_cast<int>(uvs.size()), line_no));
        }
      }
      const bool textured = ti.size() == vi.size();
      all_faces_textured = all_faces_textured && textured;
      for (std::size_t k = 1; k + 1 < vi.size(); ++k) {
        faces.emplace_back(vi[0], vi[k], vi[k + 1]);
        if (textured) face_uvs.emplace_back(ti[0], ti[k], ti[k + 1]);
      }
    }
    // Other statements (vn, o, g, s, usemtl, mtllib, ...) are ignored.
  }

  TriangleMesh mesh;
  mesh.V.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.V.row(i) = verts[i].transpose();
  mesh.F.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) mesh.F.row(i) = faces[i].transpose();
  if (all_faces_textured && !uvs.empty() && face_uvs.size() == faces.size()) {
    mesh.UV.resize(static_cast<Eigen::Index>(uvs.size()), 2);
    for (std::size_t i = 0; i < uvs.size(); ++i) mesh.UV.row(i) = uvs[i].transpose();
    mesh.FUV.resize(static_cast<Eigen::Index>(face_uvs.size()), 3);
    for (std::size_t i = 0; i < face_uvs.size(); ++i) mesh.FUV.row(i) = face_uvs[i].transpose();
  }
  validate(mesh);
  return mesh;
}

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_obj(ss.str());
}

/// OBJ text with positions at six fractional digits.
inline std::string format_obj(const TriangleMesh& mesh) {
  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.V.rows()) * 40 + mesh.F.rows() * 24);
  char buf[128];
  for (Eigen::Index v = 0; v < mesh.V.rows(); ++v) {
    std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", mesh.V(v, 0), mesh.V(v, 1), mesh.V(v, 2));
    out += buf;
  }
  const bool textured = mesh.FUV.rows() == mesh.F.rows() && mesh.UV.rows() > 0;
  if (textured) {
    for (Eigen::Index t = 0; t < mesh.UV.rows(); ++t) {
      std::snprintf(buf, sizeof buf, "vt %.6f %.6f\n", mesh.UV(t, 0), mesh.UV(t, 1));
      out += buf;
    }
  }
  for (Eigen::Index f = 0; f < mesh.F.rows(); ++f) {
    if (textured)
      std::snprintf(buf, sizeof buf, "f %d/%d %d/%d %d/%d\n", mesh.F(f, 0) + 1, mesh.FUV(f, 0) + 1,
                    mesh.F(f, 1) + 1, mesh.FUV(f, 1) + 1, mesh.F(f, 2) + 1, mesh.FUV(f, 2) + 1);
    else
      std::snprintf(buf, sizeof buf, "f %d %d %d\n", mesh.F(f, 0) + 1, mesh.F(f, 1) + 1, mesh.F(f, 2) + 1);
    out += buf;
  }
  return out;
}

inline void save_obj(const TriangleMesh& mesh, const std::string& path) {
  if (path.empty()) throw IoError("empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  const std::string text = format_obj(mesh);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace nsa
