#pragma once

// Normal-driven local/global solver.
//
// For every element k (a vertex for ARAP/ACAP, a face for FARAP) the energy is
//
//   sum_{(i,j) in N_k} w_ij |s_k R_k e_ij - e'_ij|^2 + lambda a_k |s_k R_k n_k - t_k|^2
//
// where e_ij are rest edge vectors, e'_ij deformed ones, n_k the rest normal
// and t_k the target normal (s_k = 1 except for ACAP). The local step fits
// R_k (and s_k) by Procrustes, the global step solves Q U = K R for U with one
// vertex pinned.

#include <Eigen/Core>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "nsa/errors.hpp"
#include "nsa/mesh.hpp"
#include "nsa/parallel.hpp"
#include "nsa/style_field.hpp"

namespace nsa {

enum class Regularization { arap, farap, acap };

inline ElementMode element_mode(Regularization r) {
  return r == Regularization::farap ? ElementMode::face : ElementMode::vertex;
}

inline const char* to_string(Regularization r) {
  switch (r) {
    case Regularization::arap: return "arap";
    case Regularization::farap: return "farap";
    case Regularization::acap: return "acap";
  }
  return "?";
}

inline Regularization parse_regularization(const std::string& s) {
  if (s == "arap") return Regularization::arap;
  if (s == "farap") return Regularization::farap;
  if (s == "acap") return Regularization::acap;
  throw InvalidArgument("unknown regularization '" + s + "'");
}

struct SolverParams {
  double lambda = 1.0;
  Regularization regularization = Regularization::arap;
  int maxIterations = 500;
  double convergenceTol = 1e-5;  // relative energy change
  bool dynamicTargets = false;
  int pinnedVertex = -1;         // -1 picks the vertex nearest the centroid

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
    if (maxIterations < 0) throw InvalidArgument("maxIterations must be >= 0");
    if (!(convergenceTol > 0.0)) throw InvalidArgument("convergenceTol must be > 0");
  }
};

struct SolverState {
  Positions U;
  std::vector<Eigen::Matrix3d> R;
  Eigen::VectorXd s;  // ACAP scales; ones otherwise
  std::vector<double> energyHistory;
  double initialEnergy = 0.0;
  int iteration = 0;
  bool converged = false;
};

/// One directed edge in an element's edge set, with its rest vector.
struct ElementEdge {
  int i = 0;
  int j = 0;
  double weight = 0.0;
  Eigen::Vector3d rest = Eigen::Vector3d::Zero();
};

struct Precomputed {
  Regularization regularization = Regularization::arap;
  Positions restPositions;
  Faces faces;
  std::vector<int> edgeOffsets;  // element k owns edges[edgeOffsets[k], edgeOffsets[k+1])
  std::vector<ElementEdge> edges;
  Eigen::VectorXd areas;         // a_k
  Positions restNormals;         // n_k
  Eigen::VectorXd restEdgeMass;  // sum of w |e|^2 per element
  SparseMatrix Q;                // before the gauge fix
  SparseMatrix K;                // |V| x 3|elements|
  int pinned = 0;
  Eigen::VectorXd pinnedColumn;  // column of Q at the pinned vertex
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> factor;

  int element_count() const { return static_cast<int>(edgeOffsets.size()) - 1; }
  ElementMode mode() const { return element_mode(regularization); }
};

/// Assembles Q and K from the rest mesh and factorizes the gauge-fixed Q.
///
/// Each face contributes half the cotangent of the angle opposite an edge
/// as that edge's weight, so summed over both faces the weight is the edge's
/// cotangent weight. With that convention Q is the cotangent Laplacian for
/// FARAP and three times it for the spokes-and-rims sets of ARAP/ACAP.
inline Precomputed precompute(const TriangleMesh& mesh, const SolverParams& params) {
  params.validate();
  Precomputed pre;
  pre.regularization = params.regularization;
  pre.restPositions = mesh.V;
  pre.faces = mesh.F;
  const Positions& V = mesh.V;
  const Faces& F = mesh.F;
  const Eigen::Index nv = V.rows(), nf = F.rows();
  const Positions C = half_cotangents(V, F);

  auto push_face_edges = [&](Eigen::Index f) {
    for (int c = 0; c < 3; ++c) {
      ElementEdge e;
      e.i = F(f, (c + 1) % 3);
      e.j = F(f, (c + 2) % 3);
      e.weight = C(f, c);
      e.rest = (V.row(e.j) - V.row(e.i)).transpose();
      pre.edges.push_back(e);
    }
  };

  if (params.regularization == Regularization::farap) {
    pre.edgeOffsets.resize(nf + 1);
    pre.edges.reserve(nf * 3);
    for (Eigen::Index f = 0; f < nf; ++f) {
      pre.edgeOffsets[f] = static_cast<int>(pre.edges.size());
      push_face_edges(f);
    }
    pre.edgeOffsets[nf] = static_cast<int>(pre.edges.size());
    pre.areas = face_areas(V, F);
    pre.restNormals = face_normals(V, F);
  } else {
    std::vector<std::vector<int>> incident(nv);
    for (Eigen::Index f = 0; f < nf; ++f)
      for (int c = 0; c < 3; ++c) incident[F(f, c)].push_back(static_cast<int>(f));
    pre.edgeOffsets.resize(nv + 1);
    pre.edges.reserve(nf * 9);
    for (Eigen::Index v = 0; v < nv; ++v) {
      pre.edgeOffsets[v] = static_cast<int>(pre.edges.size());
      for (int f : incident[v]) push_face_edges(f);
    }
    pre.edgeOffsets[nv] = static_cast<int>(pre.edges.size());
    pre.areas = vertex_areas(V, F);
    pre.restNormals = vertex_normals(V, F);
  }

  const int m = pre.element_count();
  pre.restEdgeMass = Eigen::VectorXd::Zero(m);
  std::vector<Eigen::Triplet<double>> qt, kt;
  qt.reserve(pre.edges.size() * 4);
  kt.reserve(pre.edges.size() * 6);
  for (int k = 0; k < m; ++k) {
    for (int e = pre.edgeOffsets[k]; e < pre.edgeOffsets[k + 1]; ++e) {
      const ElementEdge& E = pre.edges[e];
      pre.restEdgeMass(k) += E.weight * E.rest.squaredNorm();
      qt.emplace_back(E.i, E.i, E.weight);
      qt.emplace_back(E.j, E.j, E.weight);
      qt.emplace_back(E.i, E.j, -E.weight);
      qt.emplace_back(E.j, E.i, -E.weight);
      for (int c = 0; c < 3; ++c) {
        kt.emplace_back(E.j, 3 * k + c, E.weight * E.rest(c));
        kt.emplace_back(E.i, 3 * k + c, -E.weight * E.rest(c));
      }
    }
  }
  pre.Q.resize(nv, nv);
  pre.Q.setFromTriplets(qt.begin(), qt.end());
  pre.K.resize(nv, 3 * static_cast<Eigen::Index>(m));
  pre.K.setFromTriplets(kt.begin(), kt.end());

  pre.pinned = params.pinnedVertex >= 0 ? params.pinnedVertex : vertex_nearest_centroid(V, F);
  if (pre.pinned >= nv) throw InvalidArgument("pinned vertex out of range");
  const int p = pre.pinned;
  pre.pinnedColumn = Eigen::VectorXd(pre.Q.col(p));

  std::vector<Eigen::Triplet<double>> ft;
  ft.reserve(pre.Q.nonZeros() + 1);
  for (int col = 0; col < pre.Q.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(pre.Q, col); it; ++it)
      if (it.row() != p && it.col() != p) ft.emplace_back(it.row(), it.col(), it.value());
  ft.emplace_back(p, p, 1.0);
  SparseMatrix fixed(nv, nv);
  fixed.setFromTriplets(ft.begin(), ft.end());
  pre.factor = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>();
  pre.factor->compute(fixed);
  if (pre.factor->info() != Eigen::Success)
    throw FactorizationError("global matrix could not be factorized");
  // LDLT succeeds on indefinite matrices; positive definiteness is checked
  // on the pivots.
  const Eigen::VectorXd& pivots = pre.factor->vectorD();
  if ((pivots.array() <= 1e-12 * pivots.cwiseAbs().maxCoeff()).any())
    throw FactorizationError("gauge-fixed global matrix is not positive definite");
  return pre;
}

// ---------------------------------------------------------------------------
// Local step

/// Maximizer of tr(R X) over SO(3): R = V U^T from X = U S V^T, flipping the
/// last column of U when det < 0. When the flip is ambiguous (two smallest
/// singular values within 1e-12 of each other) and `previous` is equally
/// optimal, `previous` is kept.
inline Eigen::Matrix3d fit_rotation(const Eigen::Matrix3d& X, const Eigen::Matrix3d* previous = nullptr) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(X, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU();
  const Eigen::Matrix3d& V = svd.matrixV();
  Eigen::Matrix3d R = V * U.transpose();
  if (R.determinant() < 0.0) {
    const Eigen::Vector3d sv = svd.singularValues();
    U.col(2) *= -1.0;
    R = V * U.transpose();
    if (previous && sv(1) - sv(2) < 1e-12 * std::max(1.0, sv(0))) {
      const double slack = 1e-12 * std::max(1.0, sv.sum());
      if ((*previous * X).trace() >= (R * X).trace() - slack) return *previous;
    }
  }
  return R;
}

namespace detail {

inline Eigen::Matrix3d element_cross_covariance(const Precomputed& pre, const Positions& U, int k, double lambda,
                                                const Eigen::Vector3d& target) {
  Eigen::Matrix3d X = Eigen::Matrix3d::Zero();
  for (int e = pre.edgeOffsets[k]; e < pre.edgeOffsets[k + 1]; ++e) {
    const ElementEdge& E = pre.edges[e];
    const Eigen::Vector3d def = (U.row(E.j) - U.row(E.i)).transpose();
    X.noalias() += E.weight * E.rest * def.transpose();
  }
  X.noalias() += lambda * pre.areas(k) * pre.restNormals.row(k).transpose() * target.transpose();
  return X;
}

}  // namespace detail

/// Optimal uniform scale for a fixed rotation: tr(R X) / denominator, where
/// denominator = sum w |e|^2 + lambda a. Clamped to [1e-6, inf).
inline double isotropic_scale(const Eigen::Matrix3d& X, const Eigen::Matrix3d& R, double denominator) {
  if (!(denominator > 0.0)) return 1.0;
  return std::max((R * X).trace() / denominator, 1e-6);
}

/// Fits R_k (and s_k for ACAP) for every element against the current U.
inline void local_step(SolverState& state, const Precomputed& pre, const TargetNormals& targets,
                       const SolverParams& params) {
  const int m = pre.element_count();
  if (targets.vectors.rows() != m) throw InvalidArgument("target count does not match the element count");
  if (static_cast<int>(state.R.size()) != m) state.R.assign(m, Eigen::Matrix3d::Identity());
  if (state.s.size() != m) state.s = Eigen::VectorXd::Ones(m);
  const bool acap = pre.regularization == Regularization::acap;
  parallel_for(m, [&](long k) {
    const Eigen::Vector3d t = targets.vectors.row(k).transpose();
    const Eigen::Matrix3d X = detail::element_cross_covariance(pre, state.U, static_cast<int>(k), params.lambda, t);
    const Eigen::Matrix3d previous = state.R[k];
    state.R[k] = fit_rotation(X, &previous);
    if (acap) state.s(k) = isotropic_scale(X, state.R[k], pre.restEdgeMass(k) + params.lambda * pre.areas(k));
  });
}

// ---------------------------------------------------------------------------
// Global step

/// Stacks s_k R_k^T into a 3|elements| x 3 matrix, the layout K expects.
inline Eigen::MatrixXd stack_rotations(const std::vector<Eigen::Matrix3d>& R, const Eigen::VectorXd& s) {
  Eigen::MatrixXd stacked(3 * R.size(), 3);
  for (std::size_t k = 0; k < R.size(); ++k) {
    const double scale = s.size() == static_cast<Eigen::Index>(R.size()) ? s(k) : 1.0;
    stacked.block<3, 3>(3 * k, 0) = scale * R[k].transpose();
  }
  return stacked;
}

/// Right-hand side K * stack(s R^T) of the normal equations.
inline Positions global_rhs(const std::vector<Eigen::Matrix3d>& R, const Eigen::VectorXd& s, const Precomputed& pre) {
  return pre.K * stack_rotations(R, s);
}

/// Positions minimizing the energy for fixed rotations. The pinned vertex
/// keeps its rest position.
inline Positions global_step(const std::vector<Eigen::Matrix3d>& R, const Eigen::VectorXd& s, const Precomputed& pre) {
  if (static_cast<int>(R.size()) != pre.element_count()) throw InvalidArgument("rotation count mismatch");
  const int p = pre.pinned;
  const Eigen::RowVector3d pin = pre.restPositions.row(p);
  Positions rhs = global_rhs(R, s, pre);
  rhs -= pre.pinnedColumn * pin;
  rhs.row(p) = pin;
  Positions U = pre.factor->solve(rhs);
  if (pre.factor->info() != Eigen::Success || !U.allFinite()) throw SolveError("global solve failed");
  U.row(p) = pin;
  return U;
}

// ---------------------------------------------------------------------------
// Energy

struct EnergyTerms {
  double regularization = 0.0;
  double normal = 0.0;
  double total() const { return regularization + normal; }
};

inline EnergyTerms energy_terms(const SolverState& state, const Precomputed& pre, const TargetNormals& targets,
                                const SolverParams& params) {
  const int m = pre.element_count();
  Eigen::VectorXd reg(m), nrm(m);
  const bool scaled = state.s.size() == m && pre.regularization == Regularization::acap;
  parallel_for(m, [&](long k) {
    const Eigen::Matrix3d SR = (scaled ? state.s(k) : 1.0) * state.R[k];
    double r = 0.0;
    for (int e = pre.edgeOffsets[k]; e < pre.edgeOffsets[k + 1]; ++e) {
      const ElementEdge& E = pre.edges[e];
      const Eigen::Vector3d def = (state.U.row(E.j) - state.U.row(E.i)).transpose();
      r += E.weight * (SR * E.rest - def).squaredNorm();
    }
    reg(k) = r;
    nrm(k) = params.lambda * pre.areas(k) *
             (SR * pre.restNormals.row(k).transpose() - targets.vectors.row(k).transpose()).squaredNorm();
  });
  // Serial sums keep the result independent of the thread count.
  EnergyTerms t;
  for (int k = 0; k < m; ++k) {
    t.regularization += reg(k);
    t.normal += nrm(k);
  }
  return t;
}

inline double energy(const SolverState& state, const Precomputed& pre, const TargetNormals& targets,
                     const SolverParams& params) {
  return energy_terms(state, pre, targets, params).total();
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Current unit normals of U for the given element mode.
inline Positions element_normals(const Positions& U, const Faces& F, ElementMode mode) {
  return mode == ElementMode::face ? face_normals(U, F) : vertex_normals(U, F);
}

inline double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Mean angle in degrees between the current element normals and targets.
inline double mean_target_deviation_deg(const Positions& U, const Faces& F, const TargetNormals& targets) {
  const Positions N = element_normals(U, F, targets.mode);
  double sum = 0.0;
  for (Eigen::Index k = 0; k < N.rows(); ++k)
    sum += angle_between(N.row(k).transpose(), targets.vectors.row(k).transpose());
  return N.rows() ? sum / N.rows() * 180.0 / M_PI : 0.0;
}

/// Per element, the angle in degrees between R_k n_k and the actual normal
/// of the deformed mesh.
inline Eigen::VectorXd rotated_normal_error_deg(const SolverState& state, const Precomputed& pre) {
  const Positions N = element_normals(state.U, pre.faces, pre.mode());
  Eigen::VectorXd err(N.rows());
  for (Eigen::Index k = 0; k < N.rows(); ++k)
    err(k) = angle_between(state.R[k] * pre.restNormals.row(k).transpose(), N.row(k).transpose()) * 180.0 / M_PI;
  return err;
}

// ---------------------------------------------------------------------------
// The iteration loop

/// Produces targets for the current positions. `mode` is the element mode
/// of the active regularization.
using TargetRule = std::function<TargetNormals(const Positions& U, const Faces& F, ElementMode mode)>;

/// Called after every iteration with (iteration, positions, energy).
using IterationObserver = std::function<void(int, const Positions&, double)>;

struct LoopHooks {
  /// Rest state follows U: Q, K, rest normals are rebuilt every iteration.
  bool reprecompute = false;
  /// Runs after each global step, before the energy is evaluated.
  std::function<void(Positions& U, const Faces& F)> afterGlobal;
};

/// Targets from a style field: Gauss-map paste of the current normals.
inline TargetRule style_rule(StyleField style) {
  return [style = std::move(style)](const Positions& U, const Faces& F, ElementMode mode) {
    return build_target_normals(style, element_normals(U, F, mode), mode);
  };
}

/// Stateful local/global loop that can be stepped, steered and reset.
class NormalDrivenSolver {
 public:
  NormalDrivenSolver(TriangleMesh mesh, SolverParams params, TargetRule rule, LoopHooks hooks = {})
      : mesh_(std::move(mesh)), params_(params), rule_(std::move(rule)), hooks_(std::move(hooks)) {
    params_.validate();
    pre_ = precompute(mesh_, params_);
    reset();
  }

  const TriangleMesh& mesh() const { return mesh_; }
  const SolverParams& params() const { return params_; }
  const SolverState& state() const { return state_; }
  const Precomputed& precomputed() const { return pre_; }
  const TargetNormals& targets() const { return targets_; }
  bool converged() const { return state_.converged; }
  bool finished() const { return state_.converged || state_.iteration >= params_.maxIterations; }

  /// Back to U = V with identity rotations and fresh targets.
  void reset() {
    if (hooks_.reprecompute && pre_.restPositions != mesh_.V) pre_ = precompute(mesh_, params_);
    state_ = SolverState{};
    state_.U = mesh_.V;
    state_.R.assign(pre_.element_count(), Eigen::Matrix3d::Identity());
    state_.s = Eigen::VectorXd::Ones(pre_.element_count());
    targets_ = rule_(mesh_.V, mesh_.F, pre_.mode());
    rebaseline();
  }

  /// Warm-started parameter change: U and R are kept.
  void set_lambda(double lambda) {
    SolverParams p = params_;
    p.lambda = lambda;
    p.validate();
    params_ = p;
    rebaseline();
  }

  void set_limits(int maxIterations, double convergenceTol) {
    SolverParams p = params_;
    p.maxIterations = maxIterations;
    p.convergenceTol = convergenceTol;
    p.validate();
    params_ = p;
    state_.converged = false;
  }

  void set_dynamic_targets(bool dynamic) {
    params_.dynamicTargets = dynamic;
    rebuild_targets();
  }

  /// New style: targets are rebuilt, U and R are kept.
  void set_rule(TargetRule rule) {
    rule_ = std::move(rule);
    rebuild_targets();
  }

  /// Switching regularization re-precomputes; rotations restart from the
  /// identity when the element set changes.
  void set_regularization(Regularization r) {
    if (r == params_.regularization) return;
    SolverParams p = params_;
    p.regularization = r;
    TriangleMesh rest = mesh_;
    if (hooks_.reprecompute) rest.V = state_.U;
    Precomputed next = precompute(rest, p);
    const bool same_elements = next.element_count() == pre_.element_count();
    params_ = p;
    pre_ = std::move(next);
    if (!same_elements) state_.R.assign(pre_.element_count(), Eigen::Matrix3d::Identity());
    state_.s = Eigen::VectorXd::Ones(pre_.element_count());
    rebuild_targets();
  }

  /// Leaving a re-precomputing loop restores the input as rest state.
  void set_hooks(LoopHooks hooks) {
    hooks_ = std::move(hooks);
    if (!hooks_.reprecompute && pre_.restPositions != mesh_.V) {
      SolverParams p = params_;
      p.pinnedVertex = pre_.pinned;
      pre_ = precompute(mesh_, p);
      state_.R.assign(pre_.element_count(), Eigen::Matrix3d::Identity());
      state_.s = Eigen::VectorXd::Ones(pre_.element_count());
      rebaseline();
    }
  }

  /// One local/global iteration. Returns the energy after the global step
  /// under the targets used in this iteration.
  double step() {
    if (hooks_.reprecompute && state_.iteration > 0) {
      TriangleMesh rest = mesh_;
      rest.V = state_.U;
      SolverParams p = params_;
      p.pinnedVertex = pre_.pinned;
      pre_ = precompute(rest, p);
      state_.R.assign(pre_.element_count(), Eigen::Matrix3d::Identity());
      state_.s = Eigen::VectorXd::Ones(pre_.element_count());
    }
    local_step(state_, pre_, targets_, params_);
    state_.U = global_step(state_.R, state_.s, pre_);
    if (hooks_.afterGlobal) hooks_.afterGlobal(state_.U, mesh_.F);
    if (!state_.U.allFinite()) throw NonFiniteError("non-finite vertex position at iteration " + std::to_string(state_.iteration + 1));
    const double e = energy(state_, pre_, targets_, params_);
    if (!std::isfinite(e)) throw NonFiniteError("non-finite energy");
    state_.energyHistory.push_back(e);
    ++state_.iteration;
    const double change = std::abs(e - previous_energy_);
    state_.converged = change <= params_.convergenceTol * std::max(std::abs(previous_energy_), energy_floor());
    previous_energy_ = e;
    if (params_.dynamicTargets || hooks_.reprecompute) targets_ = rule_(state_.U, mesh_.F, pre_.mode());
    return e;
  }

  /// Iterates until converged or maxIterations is reached.
  const SolverState& run(const IterationObserver& observer = {}) {
    while (!finished()) {
      const double e = step();
      if (observer) observer(state_.iteration, state_.U, e);
    }
    return state_;
  }

 private:
  void rebuild_targets() {
    const Positions& source = params_.dynamicTargets || hooks_.reprecompute ? state_.U : mesh_.V;
    targets_ = rule_(source, mesh_.F, pre_.mode());
    rebaseline();
  }

  // Energies below this are roundoff around an exact zero.
  double energy_floor() const {
    return 1e-12 * (pre_.restEdgeMass.cwiseAbs().sum() + params_.lambda * pre_.areas.sum());
  }

  void rebaseline() {
    previous_energy_ = energy(state_, pre_, targets_, params_);
    if (state_.iteration == 0) state_.initialEnergy = previous_energy_;
    state_.converged = false;
  }

  TriangleMesh mesh_;
  SolverParams params_;
  TargetRule rule_;
  LoopHooks hooks_;
  Precomputed pre_;
  SolverState state_;
  TargetNormals targets_;
  double previous_energy_ = 0.0;
};

/// "iteration,energy" rows, iteration counted from 1.
inline std::string energy_history_csv(const SolverState& state) {
  std::string out = "iteration,energy\n";
  char buf[64];
  for (std::size_t i = 0; i < state.energyHistory.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, state.energyHistory[i]);
    out += buf;
  }
  return out;
}

/// Stylizes a normalized mesh toward the style. The observer sees every
/// iteration.
inline SolverState solve(const TriangleMesh& mesh, const StyleField& style, const SolverParams& params,
                         const IterationObserver& observer = {}) {
  NormalDrivenSolver solver(mesh, params, style_rule(style));
  return solver.run(observer);
}

}  // namespace nsa
