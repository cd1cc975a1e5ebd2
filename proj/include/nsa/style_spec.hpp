#pragma once

// Style selection by name, shared by the command line tool and the studio:
// "sphere", "cube", "icosahedron", "tetrahedron", "polytope:PATH",
// "mesh:PATH", "normcap:PATH", "developable", "polycube".

#include <string>
#include <utility>

#include "nsa/conformal_flow.hpp"
#include "nsa/errors.hpp"
#include "nsa/obj_io.hpp"
#include "nsa/png_io.hpp"
#include "nsa/solver.hpp"
#include "nsa/style_energies.hpp"
#include "nsa/style_field.hpp"

namespace nsa {

enum class StyleKind { sphere, cube, icosahedron, tetrahedron, polytope, mesh, normcap, developable, polycube };

struct StyleSpec {
  StyleKind kind = StyleKind::sphere;
  std::string path;  // polytope, mesh and normcap only

  bool energy_defined() const { return kind == StyleKind::developable || kind == StyleKind::polycube; }
};

inline StyleSpec parse_style_spec(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string path = colon == std::string::npos ? std::string() : text.substr(colon + 1);
  auto plain = [&](StyleKind k) {
    if (colon != std::string::npos) throw InvalidArgument("style '" + head + "' takes no path");
    return StyleSpec{k, {}};
  };
  auto with_path = [&](StyleKind k) {
    if (path.empty()) throw InvalidArgument("style '" + head + "' needs a path, as in " + head + ":PATH");
    return StyleSpec{k, path};
  };
  if (head == "sphere") return plain(StyleKind::sphere);
  if (head == "cube") return plain(StyleKind::cube);
  if (head == "icosahedron") return plain(StyleKind::icosahedron);
  if (head == "tetrahedron") return plain(StyleKind::tetrahedron);
  if (head == "developable") return plain(StyleKind::developable);
  if (head == "polycube") return plain(StyleKind::polycube);
  if (head == "polytope") return with_path(StyleKind::polytope);
  if (head == "mesh") return with_path(StyleKind::mesh);
  if (head == "normcap") return with_path(StyleKind::normcap);
  throw InvalidArgument("unknown style '" + text + "'");
}

/// Throws InvalidArgument when the regularization cannot drive the style.
inline void check_style_regularization(const StyleSpec& spec, Regularization r) {
  if (spec.kind == StyleKind::developable && r != Regularization::farap)
    throw InvalidArgument("style 'developable' requires --reg farap");
  if (spec.kind == StyleKind::polycube && r == Regularization::acap)
    throw InvalidArgument("style 'polycube' requires --reg farap or arap");
}

/// Loads the style field for a shape style. Energy-defined styles have none.
inline StyleField load_style_field(const StyleSpec& spec) {
  switch (spec.kind) {
    case StyleKind::sphere:
      return AnalyticSphere{};
    case StyleKind::cube:
      return cube_normal_set();
    case StyleKind::icosahedron:
      return axis_normal_set("icosahedron");
    case StyleKind::tetrahedron:
      return axis_normal_set("tetrahedron");
    case StyleKind::polytope:
      return load_direction_list(spec.path);
    case StyleKind::mesh:
      return conformalized_mcf(load_obj(spec.path));
    case StyleKind::normcap:
      return load_normcap(spec.path);
    case StyleKind::developable:
    case StyleKind::polycube:
      break;
  }
  throw InvalidArgument("energy-defined styles have no style field");
}

/// Everything the solver loop needs for one style.
struct StyleSetup {
  TargetRule rule;
  LoopHooks hooks;
  SolverParams params;
};

inline StyleSetup make_style_setup(const StyleSpec& spec, SolverParams params, const DevelopableParams& developable = {},
                                   const PolyCubeParams& polycube = {}) {
  check_style_regularization(spec, params.regularization);
  if (spec.kind == StyleKind::developable)
    return {developable_rule(developable), {}, developable_solver_params(params)};
  if (spec.kind == StyleKind::polycube) {
    polycube.validate();
    return {polycube_rule(polycube.axisSet), polycube_hooks(polycube), polycube_solver_params(params)};
  }
  return {style_rule(load_style_field(spec)), {}, params};
}

}  // namespace nsa
