#pragma once

// Procedural meshes used as inputs, styles and test fixtures.

#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "nsa/mesh.hpp"

namespace nsa::primitives {

namespace detail {

inline TriangleMesh assemble(const std::vector<Eigen::Vector3d>& v, const std::vector<Eigen::Vector3i>& f) {
  TriangleMesh m;
  m.V.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.V.row(i) = v[i].transpose();
  m.F.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) m.F.row(i) = f[i].transpose();
  return m;
}

}  // namespace detail

/// Regular icosahedron with unit circumradius.
inline TriangleMesh icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                                    {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                                    {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Eigen::Vector3i> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return detail::assemble(v, f);
}

/// Regular tetrahedron with unit circumradius.
inline TriangleMesh tetrahedron() {
  std::vector<Eigen::Vector3d> v = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Eigen::Vector3i> f = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return detail::assemble(v, f);
}

/// Splits every triangle into four; new vertices are pushed to the unit
/// sphere when `spherical` is set.
inline TriangleMesh subdivide(const TriangleMesh& in, bool spherical) {
  std::vector<Eigen::Vector3d> v;
  for (Eigen::Index i = 0; i < in.V.rows(); ++i) v.emplace_back(in.V.row(i).transpose());
  std::map<std::pair<int, int>, int> mid;
  auto midpoint = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = mid.find(key);
    if (it != mid.end()) return it->second;
    Eigen::Vector3d p = 0.5 * (v[a] + v[b]);
    if (spherical) p.normalize();
    v.push_back(p);
    const int idx = static_cast<int>(v.size()) - 1;
    mid.emplace(key, idx);
    return idx;
  };
  std::vector<Eigen::Vector3i> f;
  for (Eigen::Index i = 0; i < in.F.rows(); ++i) {
    const int a = in.F(i, 0), b = in.F(i, 1), c = in.F(i, 2);
    const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
    f.emplace_back(a, ab, ca);
    f.emplace_back(b, bc, ab);
    f.emplace_back(c, ca, bc);
    f.emplace_back(ab, bc, ca);
  }
  return detail::assemble(v, f);
}

/// Unit icosphere: level 0 = 12 vertices, level 3 = 642, level 5 = 10242.
inline TriangleMesh icosphere(int level) {
  TriangleMesh m = icosahedron();
  for (int i = 0; i < level; ++i) m = subdivide(m, true);
  return m;
}

namespace detail {

// Cube lattice surface with n cells per edge, diagonals pointing at each
// face center so the triangulation has the cube's full symmetry.
inline TriangleMesh cube_lattice(int n, bool spherize) {
  std::map<std::array<int, 3>, int> index;
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  auto vertex = [&](const std::array<int, 3>& p) {
    auto [it, inserted] = index.emplace(p, static_cast<int>(v.size()));
    if (inserted) {
      Eigen::Vector3d x(p[0], p[1], p[2]);
      x = x / n - Eigen::Vector3d::Constant(0.5);
      if (spherize) x.normalize();
      v.push_back(x);
    }
    return it->second;
  };
  struct Side {
    std::array<int, 3> origin, u, w;
  };
  const std::array<Side, 6> sides = {{{{n, 0, 0}, {0, 1, 0}, {0, 0, 1}},
                                      {{0, 0, 0}, {0, 0, 1}, {0, 1, 0}},
                                      {{0, n, 0}, {0, 0, 1}, {1, 0, 0}},
                                      {{0, 0, 0}, {1, 0, 0}, {0, 0, 1}},
                                      {{0, 0, n}, {1, 0, 0}, {0, 1, 0}},
                                      {{0, 0, 0}, {0, 1, 0}, {1, 0, 0}}}};
  for (const Side& s : sides) {
    auto at = [&](int a, int b) {
      std::array<int, 3> p;
      for (int k = 0; k < 3; ++k) p[k] = s.origin[k] + a * s.u[k] + b * s.w[k];
      return vertex(p);
    };
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const int p00 = at(a, b), p10 = at(a + 1, b), p11 = at(a + 1, b + 1), p01 = at(a, b + 1);
        const bool main_diagonal = (2 * a < n) == (2 * b < n);
        if (main_diagonal) {
          f.emplace_back(p00, p10, p11);
          f.emplace_back(p00, p11, p01);
        } else {
          f.emplace_back(p00, p10, p01);
          f.emplace_back(p10, p11, p01);
        }
      }
    }
  }
  return assemble(v, f);
}

}  // namespace detail

/// Axis-aligned unit cube centered at the origin, n cells per edge.
inline TriangleMesh cube(int n = 2) { return detail::cube_lattice(n, false); }

/// Cube lattice pushed onto the unit sphere: 6n^2 + 2 vertices.
inline TriangleMesh cube_sphere(int n) { return detail::cube_lattice(n, true); }

/// Flat nx-by-ny grid in the z = 0 plane over [0, sx] x [0, sy], normal +z.
inline TriangleMesh grid(int nx, int ny, double sx = 1.0, double sy = 1.0) {
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) v.emplace_back(sx * i / nx, sy * j / ny, 0.0);
  auto id = [&](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      f.emplace_back(id(i, j), id(i + 1, j), id(i + 1, j + 1));
      f.emplace_back(id(i, j), id(i + 1, j + 1), id(i, j + 1));
    }
  }
  return detail::assemble(v, f);
}

/// Torus around the z axis.
inline TriangleMesh torus(double major, double minor, int nu, int nv) {
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  for (int i = 0; i < nu; ++i) {
    const double u = 2.0 * M_PI * i / nu;
    for (int j = 0; j < nv; ++j) {
      const double w = 2.0 * M_PI * j / nv;
      v.emplace_back((major + minor * std::cos(w)) * std::cos(u), (major + minor * std::cos(w)) * std::sin(u),
                     minor * std::sin(w));
    }
  }
  auto id = [&](int i, int j) { return (i % nu) * nv + (j % nv); };
  for (int i = 0; i < nu; ++i) {
    for (int j = 0; j < nv; ++j) {
      f.emplace_back(id(i, j), id(i + 1, j), id(i + 1, j + 1));
      f.emplace_back(id(i, j), id(i + 1, j + 1), id(i, j + 1));
    }
  }
  return detail::assemble(v, f);
}

/// Open cylinder of the given radius around the z axis, z in [0, height].
inline TriangleMesh cylinder(double radius, double height, int segments, int rings) {
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  for (int j = 0; j <= rings; ++j)
    for (int i = 0; i < segments; ++i) {
      const double t = 2.0 * M_PI * i / segments;
      v.emplace_back(radius * std::cos(t), radius * std::sin(t), height * j / rings);
    }
  auto id = [&](int i, int j) { return j * segments + (i % segments); };
  for (int j = 0; j < rings; ++j)
    for (int i = 0; i < segments; ++i) {
      f.emplace_back(id(i, j), id(i + 1, j), id(i + 1, j + 1));
      f.emplace_back(id(i, j), id(i + 1, j + 1), id(i, j + 1));
    }
  return detail::assemble(v, f);
}

/// Unit sphere scaled by per-axis radii.
inline TriangleMesh ellipsoid(double a, double b, double c, int level) {
  TriangleMesh m = icosphere(level);
  m.V.col(0) *= a;
  m.V.col(1) *= b;
  m.V.col(2) *= c;
  return m;
}

/// Sphere with radial bumps: r = 1 + amplitude * sin(k x) sin(k y) sin(k z).
inline TriangleMesh bumpy_sphere(int n, double amplitude, double frequency) {
  TriangleMesh m = cube_sphere(n);
  for (Eigen::Index i = 0; i < m.V.rows(); ++i) {
    const Eigen::Vector3d p = m.V.row(i);
    const double r = 1.0 + amplitude * std::sin(frequency * p.x()) * std::sin(frequency * p.y()) *
                               std::sin(frequency * p.z());
    m.V.row(i) *= r;
  }
  return m;
}

}  // namespace nsa::primitives
