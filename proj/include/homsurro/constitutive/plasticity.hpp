#pragma once

#include <array>
#include <cmath>

namespace homsurro::constitutive {

/// Isotropic material under plane strain. Stresses in MPa.
struct MaterialParams {
  double young = 0.0;    // MPa
  double poisson = 0.0;
  double yield = 0.0;    // MPa; <= 0 means purely elastic

  bool plastic() const { return yield > 0.0; }

  // defaults used throughout data generation
  static MaterialParams matrix() { return {1000.0, 0.4, 20.0}; }
  static MaterialParams fiber() { return {200000.0, 0.18, 0.0}; }
};

double lame_lambda(const MaterialParams& m);
double lame_mu(const MaterialParams& m);

/// Prescribed plane-strain components (tensor shear, not engineering).
struct Strain {
  double xx = 0.0, yy = 0.0, xy = 0.0;
};

/// Plane strain produces four non-zero stress components.
struct Stress {
  double xx = 0.0, yy = 0.0, zz = 0.0, xy = 0.0;
};

/// Accumulated plastic strain (deviatoric: trace stays zero).
struct PlasticState {
  double xx = 0.0, yy = 0.0, zz = 0.0, xy = 0.0;

  double trace() const { return xx + yy + zz; }
};

double von_mises(const Stress& s);

/// Linear elastic plane-strain response: sigma = lambda tr(eps) I + 2 mu eps,
/// with eps_zz = 0 so sigma_zz = lambda (eps_xx + eps_yy).
Stress elastic_stress(const MaterialParams& m, const Strain& e);

/// One step of incremental J2 plasticity with radial return; perfectly
/// plastic (no hardening). Elastic trial on (total - plastic); if the trial
/// von Mises stress exceeds the yield stress the deviator is scaled back to
/// the yield surface and the plastic strain advances along the flow normal.
/// For yield <= 0 the step is purely elastic.
Stress j2_step(PlasticState& state, const Strain& total,
               const MaterialParams& m);

/// Two-phase iso-strain (Voigt) mixture: both phases see the full strain and
/// stresses average by volume. A desk-scale stand-in for full-field
/// homogenization that keeps history dependence and volume-fraction
/// sensitivity.
struct MixtureState {
  PlasticState matrix;
  PlasticState fiber;
};

Stress mixture_step(MixtureState& state, const Strain& total, double fvr,
                    const MaterialParams& matrix, const MaterialParams& fiber);

}  // namespace homsurro::constitutive
