#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nsa/errors.hpp"
#include "nsa/mesh.hpp"
#include "nsa/parallel.hpp"
#include "nsa/primitives.hpp"

namespace nsa {

/// The identity style: every direction maps to itself.
struct AnalyticSphere {};

/// Finite set of unit normals; lookups snap to the closest one.
struct DiscreteNormalSet {
  std::vector<Eigen::Vector3d> normals;
};

/// Style mesh together with a bijective map of its vertices onto the unit
/// sphere. Lookups return the style face normal of the spherical triangle
/// containing the query direction.
struct SphericalParam {
  TriangleMesh style;
  Positions sphere;        // per style vertex, unit length
  Positions faceNormals;   // unit normals of the original style faces
  Positions faceCentroids; // normalized centroid of each spherical triangle

  // Latitude/longitude buckets of candidate faces.
  int rows = 0, cols = 0;
  std::vector<int> bucketOffsets;
  std::vector<int> bucketFaces;
};

/// Equirectangular RGB image painted with target normals.
struct NormalCaptureImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, row 0 is the north pole
};

using StyleField = std::variant<AnalyticSphere, DiscreteNormalSet, SphericalParam, NormalCaptureImage>;

enum class ElementMode { vertex, face };

/// One unit target vector per vertex or per face.
struct TargetNormals {
  ElementMode mode = ElementMode::vertex;
  Positions vectors;
};

// ---------------------------------------------------------------------------
// Discrete normal sets

/// Closest member of the set; ties go to the lowest index.
inline Eigen::Vector3d snap_closest_normal(const DiscreteNormalSet& set, const Eigen::Vector3d& d) {
  std::size_t best = 0;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.normals.size(); ++i) {
    const double dot = set.normals[i].dot(d);
    if (dot > best_dot) {
      best_dot = dot;
      best = i;
    }
  }
  return set.normals[best];
}

/// Normalizes the directions and checks that there are at least four of
/// them spanning 3D. Throws SpanError otherwise.
inline DiscreteNormalSet axis_normal_set(const std::vector<Eigen::Vector3d>& directions) {
  DiscreteNormalSet set;
  for (const auto& d : directions) {
    const double n = d.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) throw SpanError("zero or non-finite direction");
    set.normals.push_back(d / n);
  }
  if (set.normals.size() < 4) throw SpanError("a polytope needs at least four directions");
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& n : set.normals) scatter += n * n.transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(scatter).singularValues();
  if (sv(2) < 1e-9 * sv(0)) throw SpanError("directions do not span 3D");
  return set;
}

/// The six signed coordinate axes.
inline DiscreteNormalSet cube_normal_set() {
  return axis_normal_set({Eigen::Vector3d::UnitX(), -Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(),
                          -Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(), -Eigen::Vector3d::UnitZ()});
}

/// Face normals of a convex primitive.
inline DiscreteNormalSet face_normal_set(const TriangleMesh& convex) {
  const Positions N = face_normals(convex.V, convex.F);
  std::vector<Eigen::Vector3d> dirs;
  for (Eigen::Index f = 0; f < N.rows(); ++f) {
    const Eigen::Vector3d n = N.row(f);
    const bool seen = std::any_of(dirs.begin(), dirs.end(), [&](const Eigen::Vector3d& d) { return d.dot(n) > 1 - 1e-9; });
    if (!seen) dirs.push_back(n);
  }
  return axis_normal_set(dirs);
}

/// Six equatorial directions 60 degrees apart plus +-y.
inline DiscreteNormalSet hexagonal_prism_normal_set() {
  std::vector<Eigen::Vector3d> dirs;
  for (int i = 0; i < 6; ++i) {
    const double a = M_PI / 3.0 * i;
    dirs.emplace_back(std::cos(a), 0.0, std::sin(a));
  }
  dirs.push_back(Eigen::Vector3d::UnitY());
  dirs.push_back(-Eigen::Vector3d::UnitY());
  return axis_normal_set(dirs);
}

/// Named sets: cube, icosahedron, tetrahedron, hexagonal-prism.
inline DiscreteNormalSet axis_normal_set(const std::string& kind) {
  if (kind == "cube") return cube_normal_set();
  if (kind == "icosahedron") return face_normal_set(primitives::icosahedron());
  if (kind == "tetrahedron") return face_normal_set(primitives::tetrahedron());
  if (kind == "hexagonal-prism") return hexagonal_prism_normal_set();
  throw InvalidArgument("unknown normal set '" + kind + "'");
}

/// Polytope direction list: one "x y z" triple per line, '#' comments and
/// blank lines skipped. Throws ParseError or SpanError.
inline DiscreteNormalSet parse_direction_list(std::string_view text) {
  std::vector<Eigen::Vector3d> dirs;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Eigen::Vector3d d;
    std::string extra;
    if (!(ls >> d.x() >> d.y() >> d.z()) || (ls >> extra))
      throw ParseError("direction list line " + std::to_string(line_no) + ": expected 'x y z'");
    if (!d.allFinite() || d.norm() == 0.0)
      throw ParseError("direction list line " + std::to_string(line_no) + ": zero or non-finite direction");
    dirs.push_back(d);
  }
  return axis_normal_set(dirs);
}

inline DiscreteNormalSet load_direction_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_direction_list(ss.str());
}

// ---------------------------------------------------------------------------
// Spherical parameterization lookup

namespace detail {

inline double latitude(const Eigen::Vector3d& d) { return std::asin(std::clamp(d.y(), -1.0, 1.0)); }
inline double longitude(const Eigen::Vector3d& d) { return std::atan2(d.z(), d.x()); }

inline int lat_bucket(double lat, int rows) {
  const int r = static_cast<int>((M_PI / 2 - lat) / M_PI * rows);
  return std::clamp(r, 0, rows - 1);
}
inline int lon_bucket(double lon, int cols) {
  int c = static_cast<int>(std::floor((lon + M_PI) / (2 * M_PI) * cols));
  c %= cols;
  return c < 0 ? c + cols : c;
}

}  // namespace detail

/// Builds the lookup structure. `sphere` holds one point per style vertex;
/// points are renormalized onto the unit sphere.
inline SphericalParam make_spherical_param(const TriangleMesh& style, const Positions& sphere) {
  if (sphere.rows() != style.V.rows()) throw InvalidArgument("sphere positions do not match the style mesh");
  SphericalParam p;
  p.style = style;
  p.sphere = sphere.rowwise().normalized();
  p.faceNormals = face_normals(style.V, style.F);
  const Eigen::Index nf = style.F.rows();
  p.faceCentroids.resize(nf, 3);

  p.rows = std::clamp(static_cast<int>(std::sqrt(static_cast<double>(nf) / 2.0)), 4, 256);
  p.cols = 2 * p.rows;
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(p.rows) * p.cols);
  const double cell_lat = M_PI / p.rows;
  const double cell_lon = 2 * M_PI / p.cols;

  for (Eigen::Index f = 0; f < nf; ++f) {
    const Eigen::Vector3d a = p.sphere.row(style.F(f, 0));
    const Eigen::Vector3d b = p.sphere.row(style.F(f, 1));
    const Eigen::Vector3d c = p.sphere.row(style.F(f, 2));
    Eigen::Vector3d centroid = a + b + c;
    if (centroid.norm() < 1e-15) centroid = a;
    centroid.normalize();
    p.faceCentroids.row(f) = centroid.transpose();
    double radius = 0.0;
    for (const auto* q : {&a, &b, &c}) radius = std::max(radius, std::acos(std::clamp(centroid.dot(*q), -1.0, 1.0)));
    radius += 1e-9;

    const double lat = detail::latitude(centroid);
    const double lat_lo = lat - radius, lat_hi = lat + radius;
    const int r0 = detail::lat_bucket(std::min(lat_hi, M_PI / 2), p.rows);
    const int r1 = detail::lat_bucket(std::max(lat_lo, -M_PI / 2), p.rows);
    bool all_lon = lat_hi >= M_PI / 2 - cell_lat || lat_lo <= -M_PI / 2 + cell_lat;
    double half_width = M_PI;
    if (!all_lon) {
      const double s = std::sin(radius) / std::cos(std::max(std::abs(lat_lo), std::abs(lat_hi)));
      if (s >= 1.0) all_lon = true;
      else half_width = std::asin(s);
    }
    int c0 = 0, c1 = p.cols - 1;
    if (!all_lon) {
      const double lon = detail::longitude(centroid);
      c0 = static_cast<int>(std::floor((lon - half_width + M_PI) / cell_lon)) - 1;
      c1 = static_cast<int>(std::floor((lon + half_width + M_PI) / cell_lon)) + 1;
      if (c1 - c0 + 1 >= p.cols) {
        c0 = 0;
        c1 = p.cols - 1;
      }
    }
    for (int r = std::max(0, r0 - 1); r <= std::min(p.rows - 1, r1 + 1); ++r) {
      for (int cc = c0; cc <= c1; ++cc) {
        const int col = ((cc % p.cols) + p.cols) % p.cols;
        buckets[static_cast<std::size_t>(r) * p.cols + col].push_back(static_cast<int>(f));
      }
    }
  }
  p.bucketOffsets.assign(buckets.size() + 1, 0);
  for (std::size_t i = 0; i < buckets.size(); ++i) p.bucketOffsets[i + 1] = p.bucketOffsets[i] + static_cast<int>(buckets[i].size());
  p.bucketFaces.reserve(p.bucketOffsets.back());
  for (const auto& b : buckets) p.bucketFaces.insert(p.bucketFaces.end(), b.begin(), b.end());
  return p;
}

/// Index of the spherical triangle containing d. Falls back to the face
/// whose centroid direction is closest when no triangle contains d
/// unambiguously.
inline int locate_spherical_face(const SphericalParam& p, const Eigen::Vector3d& d) {
  constexpr double kEps = 1e-12;
  const int bucket = detail::lat_bucket(detail::latitude(d), p.rows) * p.cols + detail::lon_bucket(detail::longitude(d), p.cols);
  for (int k = p.bucketOffsets[bucket]; k < p.bucketOffsets[bucket + 1]; ++k) {
    const int f = p.bucketFaces[k];
    const Eigen::Vector3d a = p.sphere.row(p.style.F(f, 0));
    const Eigen::Vector3d b = p.sphere.row(p.style.F(f, 1));
    const Eigen::Vector3d c = p.sphere.row(p.style.F(f, 2));
    if (d.dot(a + b + c) <= 0.0) continue;
    const double d1 = a.cross(b).dot(d);
    const double d2 = b.cross(c).dot(d);
    const double d3 = c.cross(a).dot(d);
    if (d1 > kEps && d2 > kEps && d3 > kEps) return f;
  }
  Eigen::Index best = 0;
  (p.faceCentroids * d).maxCoeff(&best);
  return static_cast<int>(best);
}

inline Eigen::Vector3d lookup_spherical(const SphericalParam& p, const Eigen::Vector3d& d) {
  return p.faceNormals.row(locate_spherical_face(p, d)).transpose();
}

// ---------------------------------------------------------------------------
// Normal capture images

/// Validates an RGB buffer as a normal capture. Throws DecodeError.
inline NormalCaptureImage decode_normcap(int width, int height, std::vector<std::uint8_t> rgb) {
  if (width <= 0 || height <= 0) throw DecodeError("normal capture image is empty");
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw DecodeError("normal capture buffer size does not match its dimensions");
  return NormalCaptureImage{width, height, std::move(rgb)};
}

/// RGB encoding of a unit normal, the inverse of the lookup decoding.
inline std::array<std::uint8_t, 3> encode_normal(const Eigen::Vector3d& n) {
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(std::clamp((n(k) + 1.0) * 0.5 * 255.0, 0.0, 255.0)));
  return c;
}

/// Unit direction at the center of pixel (x, y) of a width-by-height
/// equirectangular image.
inline Eigen::Vector3d normcap_pixel_direction(int x, int y, int width, int height) {
  const double lon = (x + 0.5) / width * 2.0 * M_PI - M_PI;
  const double lat = M_PI / 2.0 - (y + 0.5) / height * M_PI;
  return {std::cos(lat) * std::cos(lon), std::sin(lat), std::cos(lat) * std::sin(lon)};
}

/// Bilinear sample of the equirectangular image at direction d, decoded as
/// 2 * rgb / 255 - 1 and renormalized. Throws DecodeError when the decoded
/// vector is shorter than 0.1.
inline Eigen::Vector3d lookup_normcap(const NormalCaptureImage& img, const Eigen::Vector3d& d) {
  const double lon = detail::longitude(d);
  const double lat = detail::latitude(d);
  const double x = (lon + M_PI) / (2.0 * M_PI) * img.width - 0.5;
  const double y = (M_PI / 2.0 - lat) / M_PI * img.height - 0.5;
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double tx = x - fx0, ty = y - fy0;
  auto wrap = [&](int i) { return ((i % img.width) + img.width) % img.width; };
  const int x0 = wrap(static_cast<int>(fx0)), x1 = wrap(static_cast<int>(fx0) + 1);
  const int y0 = std::clamp(static_cast<int>(fy0), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, img.height - 1);
  auto px = [&](int xx, int yy) {
    const std::size_t o = (static_cast<std::size_t>(yy) * img.width + xx) * 3;
    return Eigen::Vector3d(img.rgb[o], img.rgb[o + 1], img.rgb[o + 2]);
  };
  const Eigen::Vector3d c = (1 - ty) * ((1 - tx) * px(x0, y0) + tx * px(x1, y0)) +
                            ty * ((1 - tx) * px(x0, y1) + tx * px(x1, y1));
  const Eigen::Vector3d n = 2.0 * c / 255.0 - Eigen::Vector3d::Ones();
  const double len = n.norm();
  if (len < 0.1) throw DecodeError("normal capture decodes to a near-zero vector");
  return n / len;
}

// ---------------------------------------------------------------------------

/// Target normal for direction d under the style.
inline Eigen::Vector3d lookup(const StyleField& style, const Eigen::Vector3d& d) {
  struct Visitor {
    const Eigen::Vector3d& d;
    Eigen::Vector3d operator()(const AnalyticSphere&) const { return d; }
    Eigen::Vector3d operator()(const DiscreteNormalSet& s) const { return snap_closest_normal(s, d); }
    Eigen::Vector3d operator()(const SphericalParam& p) const { return lookup_spherical(p, d); }
    Eigen::Vector3d operator()(const NormalCaptureImage& img) const { return lookup_normcap(img, d); }
  };
  return std::visit(Visitor{d}, style);
}

/// Gauss-map paste: t_k is the style lookup of the element normal n_k.
inline TargetNormals build_target_normals(const StyleField& style, const Positions& normals, ElementMode mode) {
  TargetNormals t;
  t.mode = mode;
  t.vectors.resize(normals.rows(), 3);
  if (std::holds_alternative<AnalyticSphere>(style)) {
    t.vectors = normals;
    return t;
  }
  // Lookups may throw; collect the first failure outside the parallel loop.
  std::vector<char> failed(static_cast<std::size_t>(normals.rows()), 0);
  parallel_for(normals.rows(), [&](long k) {
    try {
      t.vectors.row(k) = lookup(style, normals.row(k).transpose()).transpose();
    } catch (const Error&) {
      failed[k] = 1;
    }
  });
  for (std::size_t k = 0; k < failed.size(); ++k)
    if (failed[k]) lookup(style, normals.row(static_cast<Eigen::Index>(k)).transpose());  // rethrows
  return t;
}

}  // namespace nsa
