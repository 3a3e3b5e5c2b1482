#pragma once

#include <cstdint>

namespace lapsim {

/// Result of the analytic-vs-finite-difference gradient sweep over random
/// tet deformations. Relative error per degree of freedom is
/// |fd - analytic| / max(|fd|, |analytic|, 1e-4), central differences with
/// h = 1e-6.
struct GradCheckReport {
  int samples = 0;
  double max_rel_error_hydrostatic = 0.0;
  double max_rel_error_deviatoric = 0.0;
  double seconds = 0.0;

  double worst() const {
    return max_rel_error_hydrostatic > max_rel_error_deviatoric ? max_rel_error_hydrostatic
                                                                : max_rel_error_deviatoric;
  }
  bool pass(double tol) const { return worst() < tol; }
};

/// Draws `samples` random non-degenerate deformations (|det F| >= 0.05,
/// inversions included) of a unit tet and differences both constraint
/// evaluations over all 12 vertex dofs.
GradCheckReport run_gradient_check(int samples, uint64_t seed);

}  // namespace lapsim
