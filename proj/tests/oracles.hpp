#pragma once

// Brute-force reference computations. They evaluate the stylization energy
// term by term from raw geometry and never call into the solver, so they can
// check its assembled matrices, rotations and solutions.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "nsa/mesh.hpp"

namespace nsa::oracle {

/// cot of the interior angle at corner c of face f, via acos.
inline double corner_cot(const Positions& V, const Faces& F, Eigen::Index f, int c) {
  const Eigen::Vector3d p = V.row(F(f, c));
  const Eigen::Vector3d a = (V.row(F(f, (c + 1) % 3)).transpose() - p).normalized();
  const Eigen::Vector3d b = (V.row(F(f, (c + 2) % 3)).transpose() - p).normalized();
  const double theta = std::acos(std::clamp(a.dot(b), -1.0, 1.0));
  return std::cos(theta) / std::sin(theta);
}

struct Edge {
  int i, j;
  double w;
};

/// Edge sets per element: spokes and rims of each vertex, or the three edges
/// of each face. Weights are half the cotangent opposite in the source face.
inline std::vector<std::vector<Edge>> element_edges(const Positions& V, const Faces& F, bool per_face) {
  std::vector<std::vector<Edge>> sets(per_face ? F.rows() : V.rows());
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    std::vector<Edge> face;
    for (int c = 0; c < 3; ++c) face.push_back({F(f, (c + 1) % 3), F(f, (c + 2) % 3), 0.5 * corner_cot(V, F, f, c)});
    if (per_face) {
      sets[f] = face;
    } else {
      for (int c = 0; c < 3; ++c) sets[F(f, c)].insert(sets[F(f, c)].end(), face.begin(), face.end());
    }
  }
  return sets;
}

struct Problem {
  Positions rest;
  std::vector<std::vector<Edge>> sets;
  std::vector<Eigen::Vector3d> normals;  // rest unit normal per element
  std::vector<double> areas;
  std::vector<Eigen::Vector3d> targets;
  double lambda = 1.0;
};

inline Problem make_problem(const Positions& V, const Faces& F, bool per_face, double lambda) {
  Problem p;
  p.rest = V;
  p.sets = element_edges(V, F, per_face);
  p.lambda = lambda;
  std::vector<Eigen::Vector3d> fn(F.rows());
  std::vector<double> fa(F.rows());
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    const Eigen::Vector3d a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
    const Eigen::Vector3d x = (b - a).cross(c - a);
    fn[f] = x;
    fa[f] = 0.5 * x.norm();
  }
  if (per_face) {
    for (Eigen::Index f = 0; f < F.rows(); ++f) {
      p.normals.push_back(fn[f].normalized());
      p.areas.push_back(fa[f]);
    }
  } else {
    p.normals.assign(V.rows(), Eigen::Vector3d::Zero());
    p.areas.assign(V.rows(), 0.0);
    for (Eigen::Index f = 0; f < F.rows(); ++f)
      for (int c = 0; c < 3; ++c) {
        p.normals[F(f, c)] += fn[f];
        p.areas[F(f, c)] += fa[f] / 3.0;
      }
    for (auto& n : p.normals) n.normalize();
  }
  p.targets = p.normals;
  return p;
}

/// Energy of element k for a given (scaled) rotation and positions.
inline double element_energy(const Problem& p, std::size_t k, const Eigen::Matrix3d& SR, const Positions& U) {
  double e = 0.0;
  for (const Edge& ed : p.sets[k]) {
    const Eigen::Vector3d r = (p.rest.row(ed.j) - p.rest.row(ed.i)).transpose();
    const Eigen::Vector3d d = (U.row(ed.j) - U.row(ed.i)).transpose();
    e += ed.w * (SR * r - d).squaredNorm();
  }
  return e + p.lambda * p.areas[k] * (SR * p.normals[k] - p.targets[k]).squaredNorm();
}

inline double total_energy(const Problem& p, const std::vector<Eigen::Matrix3d>& SR, const Positions& U) {
  double e = 0.0;
  for (std::size_t k = 0; k < p.sets.size(); ++k) e += element_energy(p, k, SR[k], U);
  return e;
}

/// Dense quadratic in U for fixed rotations, recovered by polarization of
/// total_energy: E(U) = 1/2 u^T H u + g^T u + const per coordinate column.
struct Quadratic {
  Eigen::MatrixXd H;  // n x n, shared by the three coordinates
  Eigen::MatrixXd g;  // n x 3
};

inline Quadratic polarize(const Problem& p, const std::vector<Eigen::Matrix3d>& SR) {
  const Eigen::Index n = p.rest.rows();
  Quadratic q;
  q.H.resize(n, n);
  q.g.resize(n, 3);
  auto f = [&](const Positions& U) { return total_energy(p, SR, U); };
  const Positions zero = Positions::Zero(n, 3);
  const double f0 = f(zero);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd fi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Positions U = zero;
      U(i, c) = 1.0;
      fi(i) = f(U);
    }
    if (c == 0) {
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          Positions U = zero;
          U(i, 0) += 1.0;
          U(j, 0) += 1.0;
          q.H(i, j) = i == j ? f(U) - 2.0 * fi(i) + f0 : f(U) - fi(i) - fi(j) + f0;
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) q.g(i, c) = fi(i) - f0 - 0.5 * q.H(i, i);
  }
  return q;
}

/// Minimizer of the dense quadratic with vertex `pin` held at `pinned`.
inline Positions dense_minimizer(const Quadratic& q, int pin, const Eigen::RowVector3d& pinned) {
  const Eigen::Index n = q.H.rows();
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != pin) free.push_back(i);
  const Eigen::Index m = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd A(m, m), rhs(m, 3);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) A(a, b) = q.H(free[a], free[b]);
    rhs.row(a) = -q.g.row(free[a]) - q.H(free[a], pin) * pinned;
  }
  const Eigen::MatrixXd x = A.fullPivLu().solve(rhs);
  Positions U(n, 3);
  U.row(pin) = pinned;
  for (Eigen::Index a = 0; a < m; ++a) U.row(free[a]) = x.row(a);
  return U;
}

/// Uniformly random rotation (normalized Gaussian quaternion).
inline Eigen::Matrix3d random_rotation(std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

/// Golden-section minimization of a unimodal function on [lo, hi].
inline double golden_section(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace nsa::oracle
