#pragma once

#include <Eigen/SparseCholesky>

#include <cmath>
#include <string>

#include "nsa/errors.hpp"
#include "nsa/mesh.hpp"
#include "nsa/style_field.hpp"

namespace nsa {

struct FlowParams {
  double timeStep = 1e-2;
  int maxIterations = 500;
  double sphericityThreshold = 0.01;
};

/// stddev(|v|) / mean(|v|) of positions about the origin.
inline double sphericity(const Positions& X) {
  const Eigen::VectorXd r = X.rowwise().norm();
  const double mean = r.mean();
  const double var = (r.array() - mean).square().mean();
  return std::sqrt(var) / mean;
}

/// Throws GenusError unless the mesh is a single closed genus-0 surface.
inline void require_sphere_topology(const TriangleMesh& mesh) {
  const auto boundary = boundary_vertices(mesh.F, mesh.V.rows());
  for (bool b : boundary)
    if (b) throw GenusError("style mesh has a boundary");
  if (connected_components(mesh.F, mesh.V.rows()) != 1)
    throw GenusError("style mesh has more than one connected component");
  const long chi = static_cast<long>(mesh.V.rows()) - edge_count(mesh.F) + static_cast<long>(mesh.F.rows());
  if (chi != 2) throw GenusError("style mesh has Euler characteristic " + std::to_string(chi) + ", expected 2");
}

struct FlowResult {
  Positions sphere;  // unit-length positions per vertex
  int iterations = 0;
  double sphericity = 0.0;
};

namespace detail {

// Area-weighted centroid to the origin, total area to one. The time step
// is calibrated for unit area.
inline void recenter_rescale(Positions& X, const Faces& F) {
  const Eigen::VectorXd a = vertex_areas(X, F);
  const double area = a.sum();
  const Eigen::Vector3d c = (X.transpose() * a) / area;
  X.rowwise() -= c.transpose();
  X /= std::sqrt(area);
}

}  // namespace detail

/// Conformalized mean curvature flow: iterates
///   (M_t + dt * L_0) X_{t+1} = M_t X_t
/// with L_0 the (positive semidefinite) cotangent Laplacian of the input and
/// M_t the lumped mass of the current surface, until the surface is round.
inline FlowResult conformalized_mcf_positions(const TriangleMesh& input, const FlowParams& params = {}) {
  require_sphere_topology(input);
  const TriangleMesh mesh = normalize_mesh(input);
  const SparseMatrix L0 = cotangent_laplacian(mesh.V, mesh.F);

  Positions X = mesh.V;
  detail::recenter_rescale(X, mesh.F);
  FlowResult result;
  result.sphericity = sphericity(X);

  Eigen::SimplicialLDLT<SparseMatrix> solver;
  bool analyzed = false;
  while (result.sphericity >= params.sphericityThreshold) {
    if (result.iterations >= params.maxIterations)
      throw NonConvergenceError("mean curvature flow did not reach sphericity " +
                                std::to_string(params.sphericityThreshold) + " in " +
                                std::to_string(params.maxIterations) + " iterations (at " +
                                std::to_string(result.sphericity) + ")");
    const Eigen::VectorXd m = vertex_areas(X, mesh.F);
    SparseMatrix A = params.timeStep * L0;
    for (Eigen::Index i = 0; i < m.size(); ++i) A.coeffRef(i, i) += m(i);
    if (!analyzed) {
      solver.analyzePattern(A);
      analyzed = true;
    }
    solver.factorize(A);
    if (solver.info() != Eigen::Success) throw FactorizationError("flow system is not positive definite");
    const Positions rhs = m.asDiagonal() * X;
    X = solver.solve(rhs);
    if (!X.allFinite()) throw NonFiniteError("mean curvature flow produced non-finite positions");
    detail::recenter_rescale(X, mesh.F);
    ++result.iterations;
    result.sphericity = sphericity(X);
  }
  result.sphere = X.rowwise().normalized();
  return result;
}

/// Spherical parameterization of a genus-0 style mesh by conformalized mean
/// curvature flow, ready for lookups.
inline SphericalParam conformalized_mcf(const TriangleMesh& style, const FlowParams& params = {}) {
  const FlowResult flow = conformalized_mcf_positions(style, params);
  return make_spherical_param(style, flow.sphere);
}

}  // namespace nsa
