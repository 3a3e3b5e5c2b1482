#include "lapsim/neohookean.hpp"

#include <cmath>

namespace lapsim {
namespace {

// Per-particle gradients from dC/dF via the chain rule through
// D_s = F * D_m: dC/dD_s = G * D_m^{-T}, whose columns are the gradients of
// vertices 1..3; vertex 0 takes the negative sum.
void assemble_gradients(const Mat3& G, const Mat3& inv_rest, ConstraintEval& eval) {
  const Mat3 H = G * inv_rest.transpose();
  eval.n = 4;
  eval.grad[1] = H.col(0);
  eval.grad[2] = H.col(1);
  eval.grad[3] = H.col(2);
  eval.grad[0] = -(eval.grad[1] + eval.grad[2] + eval.grad[3]);
}

}  // namespace

double MaterialParams::hydrostatic_compliance(double rest_volume) const {
  return 1.0 / (lame_lambda * rest_volume);
}

double MaterialParams::deviatoric_compliance(double rest_volume) const {
  return 1.0 / (lame_mu * rest_volume);
}

void MaterialParams::validate() const {
  if (!(lame_lambda > 0.0)) throw ConfigError("lame_lambda must be > 0");
  if (!(lame_mu > 0.0)) throw ConfigError("lame_mu must be > 0");
  if (!(density > 0.0)) throw ConfigError("density must be > 0");
  if (!std::isfinite(lame_lambda) || !std::isfinite(lame_mu) || !std::isfinite(density))
    throw ConfigError("material parameters must be finite");
}

MaterialParams MaterialParams::from_young_poisson(double E, double nu) {
  if (!(E > 0.0) || !(nu > 0.0 && nu < 0.5))
    throw ConfigError("need E > 0 and poisson in (0, 0.5)");
  MaterialParams p;
  p.lame_lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  p.lame_mu = E / (2.0 * (1.0 + nu));
  return p;
}

ConstraintEval hydrostatic_eval(const Mat3& F, const Mat3& inv_rest) {
  ConstraintEval eval;
  eval.C = F.determinant() - 1.0;
  assemble_gradients(cofactor(F), inv_rest, eval);
  return eval;
}

ConstraintEval deviatoric_eval(const Mat3& F, const Mat3& inv_rest) {
  ConstraintEval eval;
  const double norm = F.norm();  // sqrt(tr(F^T F))
  if (norm < 1e-9) {
    eval.skip = true;  // fully collapsed tet, gradient direction undefined
    return eval;
  }
  eval.C = norm;
  assemble_gradients(F / norm, inv_rest, eval);
  return eval;
}

double neo_hookean_energy(const Mat3& F, const MaterialParams& params) {
  const double j = F.determinant() - 1.0;
  const double tr = F.squaredNorm();
  return 0.5 * params.lame_lambda * j * j + 0.5 * params.lame_mu * (tr - 3.0);
}

void build_constraints(const TetMesh& mesh,
                       const std::function<const MaterialParams&(uint16_t)>& params_for,
                       ConstraintBatches& out) {
  if (!mesh.rest_ready) throw ConfigError("rest state not computed");
  for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    const MaterialParams& mat = params_for(mesh.labels[t]);
    const double vol = mesh.rest_volume[t];

    Constraint dev;
    dev.type = ConstraintType::deviatoric;
    dev.tet = static_cast<int>(t);
    dev.particles = mesh.tets[t];
    dev.compliance = mat.deviatoric_compliance(vol);
    dev.offset = kRestDeviatoricNorm;
    out.deviatoric.push_back(dev);

    Constraint hyd;
    hyd.type = ConstraintType::hydrostatic;
    hyd.tet = static_cast<int>(t);
    hyd.particles = mesh.tets[t];
    hyd.compliance = mat.hydrostatic_compliance(vol);
    hyd.offset = mat.hydro_correction ? mat.lame_mu / mat.lame_lambda : 0.0;
    out.hydrostatic.push_back(hyd);
  }
}

}  // namespace lapsim
