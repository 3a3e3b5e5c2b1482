#pragma once

#include <functional>

#include "lapsim/tetmesh.hpp"
#include "lapsim/xpbd.hpp"

namespace lapsim {

struct MaterialParams {
  double lame_lambda = 5.0e4;  // Pa
  double lame_mu = 1.0e4;      // Pa
  // When set, the hydrostatic target becomes 1 + mu/lambda instead of 1,
  // compensating the deviatoric term's rest pressure. Off by default.
  bool hydro_correction = false;
  double density = 1000.0;  // kg/m^3

  double hydrostatic_compliance(double rest_volume) const;
  double deviatoric_compliance(double rest_volume) const;
  void validate() const;  // throws ConfigError

  static MaterialParams from_young_poisson(double E, double nu);
};

inline constexpr double kRestDeviatoricNorm = 1.7320508075688772;  // sqrt(3)

/// C_H = det(F) - 1 with dC_H/dF = cofactor(F); per-particle gradients via
/// the chain rule through D_s = F D_m (gradient of vertex 0 is the negative
/// sum of the other three). Well-defined for inverted F.
ConstraintEval hydrostatic_eval(const Mat3& F, const Mat3& inv_rest);

/// C_D = sqrt(tr(F^T F)) with dC_D/dF = F / C_D. The solver projects this
/// against the rest target sqrt(3). C_D < 1e-9 (collapsed tet) sets skip.
ConstraintEval deviatoric_eval(const Mat3& F, const Mat3& inv_rest);

/// Energy density (lambda/2)(det F - 1)^2 + (mu/2)(tr(F^T F) - 3).
/// Validation only; dynamics run on the constraints.
double neo_hookean_energy(const Mat3& F, const MaterialParams& params);

/// Appends one deviatoric and one hydrostatic constraint per alive tet, with
/// compliances 1/(mu * V_rest) and 1/(lambda * V_rest). Constraints are in
/// tet order within each pass; params_for maps tet label to material.
void build_constraints(const TetMesh& mesh,
                       const std::function<const MaterialParams&(uint16_t)>& params_for,
                       ConstraintBatches& out);

}  // namespace lapsim
