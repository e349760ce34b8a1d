#include "homsurro/constitutive/plasticity.hpp"

#include <stdexcept>

namespace homsurro::constitutive {

double lame_lambda(const MaterialParams& m) {
  if (m.young <= 0.0 || m.poisson < 0.0 || m.poisson >= 0.5)
    throw std::invalid_argument("invalid elastic constants");
  return m.young * m.poisson / ((1.0 + m.poisson) * (1.0 - 2.0 * m.poisson));
}

double lame_mu(const MaterialParams& m) {
  if (m.young <= 0.0 || m.poisson < 0.0 || m.poisson >= 0.5)
    throw std::invalid_argument("invalid elastic constants");
  return m.young / (2.0 * (1.0 + m.poisson));
}

double von_mises(const Stress& s) {
  const double p = (s.xx + s.yy + s.zz) / 3.0;
  const double dx = s.xx - p, dy = s.yy - p, dz = s.zz - p;
  return std::sqrt(1.5 * (dx * dx + dy * dy + dz * dz + 2.0 * s.xy * s.xy));
}

Stress elastic_stress(const MaterialParams& m, const Strain& e) {
  const double lam = lame_lambda(m);
  const double mu = lame_mu(m);
  const double tr = e.xx + e.yy;  // eps_zz = 0 under plane strain
  Stress s;
  s.xx = lam * tr + 2.0 * mu * e.xx;
  s.yy = lam * tr + 2.0 * mu * e.yy;
  s.zz = lam * tr;
  s.xy = 2.0 * mu * e.xy;
  return s;
}

Stress j2_step(PlasticState& state, const Strain& total,
               const MaterialParams& m) {
  const double lam = lame_lambda(m);
  const double mu = lame_mu(m);

  // elastic trial on the elastic part of the strain
  const double exx = total.xx - state.xx;
  const double eyy = total.yy - state.yy;
  const double ezz = -state.zz;
  const double exy = total.xy - state.xy;
  const double tr = exx + eyy + ezz;

  Stress trial;
  trial.xx = lam * tr + 2.0 * mu * exx;
  trial.yy = lam * tr + 2.0 * mu * eyy;
  trial.zz = lam * tr + 2.0 * mu * ezz;
  trial.xy = 2.0 * mu * exy;

  if (!m.plastic()) return trial;

  const double vm = von_mises(trial);
  if (vm <= m.yield) return trial;

  const double p = (trial.xx + trial.yy + trial.zz) / 3.0;
  const double sxx = trial.xx - p, syy = trial.yy - p, szz = trial.zz - p;
  const double sxy = trial.xy;

  // radial return: scale the deviator back to the yield surface and advance
  // the plastic strain along the flow normal n = 1.5 s / vm
  const double dgamma = (vm - m.yield) / (3.0 * mu);
  const double nf = 1.5 / vm;
  state.xx += dgamma * nf * sxx;
  state.yy += dgamma * nf * syy;
  state.zz += dgamma * nf * szz;
  state.xy += dgamma * nf * sxy;

  const double f = m.yield / vm;
  Stress out;
  out.xx = f * sxx + p;
  out.yy = f * syy + p;
  out.zz = f * szz + p;
  out.xy = f * sxy;
  return out;
}

Stress mixture_step(MixtureState& state, const Strain& total, double fvr,
                    const MaterialParams& matrix, const MaterialParams& fiber) {
  if (fvr < 0.0 || fvr > 1.0)
    throw std::invalid_argument("fiber volume ratio outside [0,1]");
  const Stress sm = j2_step(state.matrix, total, matrix);
  const Stress sf = j2_step(state.fiber, total, fiber);
  Stress out;
  out.xx = fvr * sf.xx + (1.0 - fvr) * sm.xx;
  out.yy = fvr * sf.yy + (1.0 - fvr) * sm.yy;
  out.zz = fvr * sf.zz + (1.0 - fvr) * sm.zz;
  out.xy = fvr * sf.xy + (1.0 - fvr) * sm.xy;
  return out;
}

}  // namespace homsurro::constitutive
