#pragma once

// Styles defined by an energy rather than a shape: developable surfaces and
// PolyCube-like axis snapping. Both run the solver loop with targets rebuilt
// from the current positions.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsa/errors.hpp"
#include "nsa/mesh.hpp"
#include "nsa/parallel.hpp"
#include "nsa/solver.hpp"
#include "nsa/style_field.hpp"

namespace nsa {

struct DevelopableParams {
  // Below this ratio of the two largest eigenvalues the one-ring is projected
  // to a hinge. Higher values give more hinges.
  double creaseThreshold = 0.5;

  void validate() const {
    if (!(creaseThreshold > 0.0 && creaseThreshold < 1.0))
      throw InvalidArgument("creaseThreshold must lie in (0, 1)");
  }
};

struct PolyCubeParams {
  DiscreteNormalSet axisSet = cube_normal_set();
  double qualityThreshold = 0.05;
  double smoothingStep = 0.1;

  void validate() const {
    axis_normal_set(axisSet.normals);
    if (!(qualityThreshold > 0.0 && qualityThreshold < 1.0))
      throw InvalidArgument("qualityThreshold must lie in (0, 1)");
    if (!(smoothingStep > 0.0 && smoothingStep < 1.0)) throw InvalidArgument("smoothingStep must lie in (0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Developable targets

/// Projects a one-ring's normals onto their principal plane (or line, for a
/// hinge). `normals` are unit face normals with `weights` (face areas).
/// Projection is affine about the weighted mean so a one-ring whose normals
/// already lie on the kept subspace is unchanged.
inline std::vector<Eigen::Vector3d> project_one_ring_normals(const std::vector<Eigen::Vector3d>& normals,
                                                            const std::vector<double>& weights,
                                                            double creaseThreshold) {
  double total = 0.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < normals.size(); ++i) {
    mean += weights[i] * normals[i];
    total += weights[i];
  }
  if (!(total > 0.0)) return normals;
  mean /= total;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < normals.size(); ++i) {
    const Eigen::Vector3d d = normals[i] - mean;
    cov += weights[i] * d * d.transpose();
  }
  cov /= total;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Ascending order: column 2 is the largest.
  const Eigen::Vector3d ev = eig.eigenvalues();
  const double l1 = ev(2), l2 = ev(1);
  if (l1 < 1e-12) return normals;
  const Eigen::Matrix3d E = eig.eigenvectors();
  Eigen::Matrix3d P = E.col(2) * E.col(2).transpose();
  if (l2 / l1 >= creaseThreshold) P += E.col(1) * E.col(1).transpose();

  std::vector<Eigen::Vector3d> out(normals.size());
  for (std::size_t i = 0; i < normals.size(); ++i) {
    const Eigen::Vector3d p = mean + P * (normals[i] - mean);
    const double len = p.norm();
    out[i] = len > 1e-12 ? Eigen::Vector3d(p / len) : normals[i];
  }
  return out;
}

/// Per-face targets for a developable style: every vertex projects the
/// normals of its one-ring, each face averages the three projections it
/// received.
inline TargetNormals developable_targets(const Positions& U, const Faces& F, const DevelopableParams& params = {}) {
  params.validate();
  if (!U.allFinite()) throw NonFiniteError("developable targets need finite positions");
  const Positions N = face_normals(U, F);
  const Eigen::VectorXd A = face_areas(U, F);
  const Eigen::Index nv = U.rows(), nf = F.rows();

  std::vector<std::vector<std::pair<int, int>>> ring(nv);  // (face, corner)
  for (Eigen::Index f = 0; f < nf; ++f)
    for (int c = 0; c < 3; ++c) ring[F(f, c)].emplace_back(static_cast<int>(f), c);

  // corner(f, c) holds the projection computed at vertex F(f, c).
  Eigen::MatrixXd corners = Eigen::MatrixXd::Zero(nf, 9);
  parallel_for(nv, [&](long v) {
    const auto& r = ring[v];
    std::vector<Eigen::Vector3d> normals;
    std::vector<double> weights;
    normals.reserve(r.size());
    weights.reserve(r.size());
    for (const auto& [f, c] : r) {
      normals.emplace_back(N.row(f).transpose());
      weights.push_back(A(f));
    }
    const auto projected = project_one_ring_normals(normals, weights, params.creaseThreshold);
    for (std::size_t i = 0; i < r.size(); ++i)
      corners.block<1, 3>(r[i].first, 3 * r[i].second) = projected[i].transpose();
  });

  TargetNormals t{ElementMode::face, Positions(nf, 3)};
  parallel_for(nf, [&](long f) {
    const Eigen::Vector3d sum = (corners.block<1, 3>(f, 0) + corners.block<1, 3>(f, 3) + corners.block<1, 3>(f, 6)).transpose();
    const double len = sum.norm();
    t.vectors.row(f) = len > 1e-12 ? Eigen::RowVector3d(sum.transpose() / len) : Eigen::RowVector3d(N.row(f));
  });
  return t;
}

inline TargetRule developable_rule(const DevelopableParams& params) {
  params.validate();
  return [params](const Positions& U, const Faces& F, ElementMode mode) {
    if (mode != ElementMode::face) throw InvalidArgument("developable targets are per face; use FARAP");
    return developable_targets(U, F, params);
  };
}

/// Solver parameters forced to what the developable flow needs.
inline SolverParams developable_solver_params(SolverParams params) {
  if (params.regularization != Regularization::farap)
    throw InvalidArgument("developable flow requires FARAP regularization");
  params.dynamicTargets = true;
  return params;
}

inline SolverState developable_flow(const TriangleMesh& mesh, const DevelopableParams& params, SolverParams solver,
                                    const IterationObserver& observer = {}) {
  NormalDrivenSolver loop(mesh, developable_solver_params(solver), developable_rule(params));
  return loop.run(observer);
}

// ---------------------------------------------------------------------------
// PolyCube

/// 2 * inradius / circumradius; 1 for an equilateral triangle, 0 when
/// degenerate.
inline double triangle_quality(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1, const Eigen::Vector3d& p2) {
  const double a = (p1 - p2).norm(), b = (p2 - p0).norm(), c = (p0 - p1).norm();
  const double area = 0.5 * (p1 - p0).cross(p2 - p0).norm();
  const double s = 0.5 * (a + b + c);
  const double denom = s * a * b * c;
  if (!(denom > 0.0)) return 0.0;
  return std::clamp(8.0 * area * area / denom, 0.0, 1.0);
}

inline Eigen::VectorXd triangle_qualities(const Positions& V, const Faces& F) {
  Eigen::VectorXd q(F.rows());
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    q(f) = triangle_quality(V.row(F(f, 0)).transpose(), V.row(F(f, 1)).transpose(), V.row(F(f, 2)).transpose());
  return q;
}

/// Moves each vertex touching a face of quality below the threshold a step
/// toward its one-ring average, keeping the move only if the minimum quality
/// of its one-ring strictly improves. Vertices are visited in index order,
/// each at most once. Returns the number of vertices moved.
inline int rescue_low_quality(Positions& U, const Faces& F, double threshold, double step) {
  const Eigen::Index nv = U.rows();
  std::vector<std::vector<int>> faces_of(nv);
  std::vector<std::vector<int>> neighbors(nv);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      faces_of[F(f, c)].push_back(static_cast<int>(f));
      neighbors[F(f, c)].push_back(F(f, (c + 1) % 3));
      neighbors[F(f, c)].push_back(F(f, (c + 2) % 3));
    }
  }
  for (auto& n : neighbors) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  auto quality = [&](int f) {
    return triangle_quality(U.row(F(f, 0)).transpose(), U.row(F(f, 1)).transpose(), U.row(F(f, 2)).transpose());
  };
  auto ring_min = [&](int v) {
    double q = 1.0;
    for (int f : faces_of[v]) q = std::min(q, quality(f));
    return q;
  };

  std::vector<bool> flagged(nv, false);
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    if (quality(static_cast<int>(f)) < threshold)
      for (int c = 0; c < 3; ++c) flagged[F(f, c)] = true;

  int moved = 0;
  for (Eigen::Index v = 0; v < nv; ++v) {
    if (!flagged[v] || neighbors[v].empty()) continue;
    const Eigen::RowVector3d before_pos = U.row(v);
    const double before = ring_min(static_cast<int>(v));
    Eigen::RowVector3d avg = Eigen::RowVector3d::Zero();
    for (int n : neighbors[v]) avg += U.row(n);
    avg /= static_cast<double>(neighbors[v].size());
    U.row(v) = before_pos + step * (avg - before_pos);
    if (ring_min(static_cast<int>(v)) > before)
      ++moved;
    else
      U.row(v) = before_pos;
  }
  return moved;
}

/// Snaps the current element normals to the axis set.
inline TargetRule polycube_rule(const DiscreteNormalSet& axes) {
  return [axes](const Positions& U, const Faces& F, ElementMode mode) {
    return build_target_normals(StyleField{axes}, element_normals(U, F, mode), mode);
  };
}

inline LoopHooks polycube_hooks(const PolyCubeParams& params) {
  LoopHooks hooks;
  hooks.reprecompute = true;
  hooks.afterGlobal = [threshold = params.qualityThreshold, step = params.smoothingStep](Positions& U, const Faces& F) {
    rescue_low_quality(U, F, threshold, step);
  };
  return hooks;
}

inline SolverParams polycube_solver_params(SolverParams params) {
  if (params.regularization == Regularization::acap)
    throw InvalidArgument("polycube flow requires FARAP or ARAP regularization");
  params.dynamicTargets = true;
  return params;
}

inline SolverState polycube_flow(const TriangleMesh& mesh, const PolyCubeParams& params, SolverParams solver,
                                 const IterationObserver& observer = {}) {
  params.validate();
  NormalDrivenSolver loop(mesh, polycube_solver_params(solver), polycube_rule(params.axisSet), polycube_hooks(params));
  return loop.run(observer);
}

// ---------------------------------------------------------------------------
// Statistics

/// Angle in degrees from each face normal to the closest direction in the set.
inline Eigen::VectorXd axis_deviation_deg(const Positions& V, const Faces& F, const DiscreteNormalSet& axes) {
  const Positions N = face_normals(V, F);
  Eigen::VectorXd d(N.rows());
  for (Eigen::Index f = 0; f < N.rows(); ++f) {
    const Eigen::Vector3d n = N.row(f).transpose();
    d(f) = angle_between(n, snap_closest_normal(axes, n)) * 180.0 / M_PI;
  }
  return d;
}

inline double mean_axis_deviation_deg(const Positions& V, const Faces& F, const DiscreteNormalSet& axes) {
  const Eigen::VectorXd d = axis_deviation_deg(V, F, axes);
  return d.size() ? d.mean() : 0.0;
}

/// Fraction of total area whose face normal is within `degrees` of an axis.
inline double axis_aligned_area_fraction(const Positions& V, const Faces& F, const DiscreteNormalSet& axes,
                                         double degrees) {
  const Eigen::VectorXd d = axis_deviation_deg(V, F, axes);
  const Eigen::VectorXd a = face_areas(V, F);
  double aligned = 0.0;
  for (Eigen::Index f = 0; f < d.size(); ++f)
    if (d(f) <= degrees) aligned += a(f);
  return aligned / a.sum();
}

/// Dihedral angle in degrees (0 for coplanar faces) for every interior edge.
inline std::vector<double> dihedral_angles_deg(const Positions& V, const Faces& F) {
  const Positions N = face_normals(V, F);
  std::unordered_map<std::uint64_t, int> first;
  std::vector<double> out;
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const auto key = detail::edge_key(F(f, c), F(f, (c + 1) % 3));
      auto [it, inserted] = first.emplace(key, static_cast<int>(f));
      if (!inserted)
        out.push_back(angle_between(N.row(it->second).transpose(), N.row(f).transpose()) * 180.0 / M_PI);
    }
  }
  return out;
}

inline int crease_edge_count(const Positions& V, const Faces& F, double degrees = 30.0) {
  const auto d = dihedral_angles_deg(V, F);
  return static_cast<int>(std::count_if(d.begin(), d.end(), [&](double a) { return a > degrees; }));
}

inline std::vector<double> interior_angle_defects(const Positions& V, const Faces& F) {
  const auto boundary = boundary_vertices(F, V.rows());
  const Eigen::VectorXd d = angle_defects(V, F);
  std::vector<double> out;
  for (Eigen::Index v = 0; v < V.rows(); ++v)
    if (!boundary[v]) out.push_back(d(v));
  return out;
}

/// Fraction of interior vertices with |angle defect| below `tolerance`.
inline double flat_vertex_fraction(const Positions& V, const Faces& F, double tolerance = 1e-3) {
  const auto d = interior_angle_defects(V, F);
  if (d.empty()) return 0.0;
  const auto n = std::count_if(d.begin(), d.end(), [&](double x) { return std::abs(x) < tolerance; });
  return static_cast<double>(n) / static_cast<double>(d.size());
}

/// Share of total |angle defect| held by the top `fraction` of interior
/// vertices ranked by |angle defect|.
inline double top_defect_share(const Positions& V, const Faces& F, double fraction = 0.05) {
  auto d = interior_angle_defects(V, F);
  for (double& x : d) x = std::abs(x);
  std::sort(d.begin(), d.end(), std::greater<>());
  double total = 0.0;
  for (double x : d) total += x;
  if (!(total > 0.0)) return 0.0;
  const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(d.size())));
  double top = 0.0;
  for (std::size_t i = 0; i < std::min(count, d.size()); ++i) top += d[i];
  return top / total;
}

/// Histogram CSV with header "kind,bin_start,bin_end,count". Dihedral bins
/// span [0, 180] degrees, angle-defect bins span [-pi, pi] radians; values
/// outside land in the edge bins.
inline std::string crease_statistics_csv(const Positions& V, const Faces& F, int bins = 36) {
  if (bins < 1) throw InvalidArgument("bins must be >= 1");
  std::string out = "kind,bin_start,bin_end,count\n";
  auto histogram = [&](const char* kind, const std::vector<double>& values, double lo, double hi) {
    std::vector<int> counts(bins, 0);
    for (double x : values) {
      const int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
      ++counts[std::clamp(b, 0, bins - 1)];
    }
    char buf[128];
    for (int b = 0; b < bins; ++b) {
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%d\n", kind, lo + (hi - lo) * b / bins,
                    lo + (hi - lo) * (b + 1) / bins, counts[b]);
      out += buf;
    }
  };
  histogram("dihedral_deg", dihedral_angles_deg(V, F), 0.0, 180.0);
  histogram("angle_defect_rad", interior_angle_defects(V, F), -M_PI, M_PI);
  return out;
}

inline void write_crease_statistics_csv(const std::string& path, const Positions& V, const Faces& F, int bins = 36) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << crease_statistics_csv(V, F, bins);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace nsa
