#ifndef CHOQUARD_ENERGY_HPP
#define CHOQUARD_ENERGY_HPP

// Energy of the coupled system on the grid,
//
//   E_V(u,v) = 1/2 (|grad u|^2 + |grad v|^2) + 1/2 int (V1 u^2 + V2 v^2)
//              - mu1/(2p) B(u,p) - mu2/(2q) B(v,q) - int beta u v,
//
// with B(u,p) = int (I_alpha * |u|^p) |u|^p, together with its L^2 gradient,
// the Lagrange multipliers and the residuals used as convergence
// certificates. Every discrete quantity here is the exact derivative of the
// discrete energy, so finite differences agree to roundoff.

#include <cmath>
#include <memory>
#include <utility>

#include "error.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "riesz.hpp"

namespace choquard {

/// Everything an energy evaluation needs, sampled once.
struct Problem {
  GridSpec grid;
  ModelParams params;
  std::shared_ptr<const RieszConvolver> conv;
  ScalarField beta;
  ScalarField beta_flux; ///< x . grad beta
  ScalarField v1;
  ScalarField v2;
  bool has_v1 = false;
  bool has_v2 = false;
  Regime regime;

  Problem(const ModelParams &m, const GridSpec &g,
          std::shared_ptr<const RieszConvolver> c = nullptr)
      : grid(g), params(m),
        conv(c ? std::move(c) : build_convolver(g, m.alpha)),
        beta(sample_coupling(m, g)), beta_flux(sample_coupling_flux(m, g)),
        v1(sample_potential(m.v1, g)), v2(sample_potential(m.v2, g)),
        has_v1(!m.v1.is_zero()), has_v2(!m.v2.is_zero()),
        regime(m.regime()) {
    g.validate();
    require(g.dim == m.dim, ErrorCode::GridMismatch,
            "grid dimension differs from the model dimension");
    require(conv->grid() == g && conv->alpha() == m.alpha,
            ErrorCode::GridMismatch, "convolver built for another grid/alpha");
  }
};

/// Raw integrals; `total` composes them with the weights of E_V.
struct EnergyBreakdown {
  double kinetic_u = 0.0;    ///< |grad u|^2
  double kinetic_v = 0.0;    ///< |grad v|^2
  double kinetic = 0.0;      ///< kinetic_u + kinetic_v
  double potential_v1 = 0.0; ///< int V1 u^2
  double potential_v2 = 0.0; ///< int V2 v^2
  double nonlocal_u = 0.0;   ///< B(u,p)
  double nonlocal_v = 0.0;   ///< B(v,q)
  double coupling = 0.0;     ///< int beta u v
  double total = 0.0;
};

struct Multipliers {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

namespace detail {

/// sign(u) |u|^{t}, continuous at 0 for t > 0.
inline double signed_pow(double u, double t) {
  return u == 0.0 ? 0.0 : std::copysign(std::pow(std::abs(u), t), u);
}

inline ScalarField abs_pow(const ScalarField &u, double p) {
  ScalarField r(u.grid());
  for (std::size_t i = 0; i < u.size(); ++i)
    r[i] = std::pow(std::abs(u[i]), p);
  return r;
}

inline double compose_total(EnergyBreakdown &e, const ModelParams &m) {
  e.kinetic = e.kinetic_u + e.kinetic_v;
  e.total = 0.5 * e.kinetic + 0.5 * (e.potential_v1 + e.potential_v2) -
            m.mu1 / (2.0 * m.p) * e.nonlocal_u -
            m.mu2 / (2.0 * m.q) * e.nonlocal_v - e.coupling;
  return e.total;
}

} // namespace detail

inline double nonlocal_B(const ScalarField &u, double p,
                         const RieszConvolver &conv) {
  require(u.grid() == conv.grid(), ErrorCode::GridMismatch,
          "field is not on the convolver's grid");
  const ScalarField rho = detail::abs_pow(u, p);
  if (rho.max_abs() == 0.0)
    return 0.0;
  return dot(conv.convolve(rho), rho);
}

inline EnergyBreakdown energy_total(const StatePair &s, const Problem &pb) {
  require(s.grid() == pb.grid, ErrorCode::GridMismatch,
          "state is not on the problem grid");
  const auto &m = pb.params;
  EnergyBreakdown e;
  e.kinetic_u = grad_norm_sq(s.u);
  e.kinetic_v = grad_norm_sq(s.v);
  if (pb.has_v1)
    e.potential_v1 = weighted_dot(pb.v1, s.u, s.u);
  if (pb.has_v2)
    e.potential_v2 = weighted_dot(pb.v2, s.v, s.v);
  e.nonlocal_u = nonlocal_B(s.u, m.p, *pb.conv);
  e.nonlocal_v = nonlocal_B(s.v, m.q, *pb.conv);
  e.coupling = weighted_dot(pb.beta, s.u, s.v);
  detail::compose_total(e, m);
  return e;
}

struct Evaluation {
  EnergyBreakdown energy;
  StatePair gradient;
};

namespace detail {

/// -Lap f + V f - mu (I * |f|^t) |f|^{t-2} f - beta g, and B(f, t).
inline ScalarField component_gradient(const ScalarField &f, const ScalarField &g,
                                      const Problem &pb, double t, double mu,
                                      const ScalarField *pot, double &b_out) {
  ScalarField grad = neg_laplacian(f);
  const ScalarField rho = abs_pow(f, t);
  b_out = 0.0;
  if (rho.max_abs() > 0.0) {
    const ScalarField phi = pb.conv->convolve(rho);
    b_out = dot(phi, rho);
    for (std::size_t i = 0; i < f.size(); ++i)
      grad[i] -= mu * phi[i] * signed_pow(f[i], t - 1.0);
  }
  if (pot)
    for (std::size_t i = 0; i < f.size(); ++i)
      grad[i] += (*pot)[i] * f[i];
  for (std::size_t i = 0; i < f.size(); ++i)
    grad[i] -= pb.beta[i] * g[i];
  return grad;
}

} // namespace detail

/// Energy and its L^2 gradient in one pass (one convolution per component).
inline Evaluation evaluate(const StatePair &s, const Problem &pb) {
  require(s.grid() == pb.grid, ErrorCode::GridMismatch,
          "state is not on the problem grid");
  const auto &m = pb.params;
  EnergyBreakdown e;
  ScalarField gu = detail::component_gradient(
      s.u, s.v, pb, m.p, m.mu1, pb.has_v1 ? &pb.v1 : nullptr, e.nonlocal_u);
  ScalarField gv = detail::component_gradient(
      s.v, s.u, pb, m.q, m.mu2, pb.has_v2 ? &pb.v2 : nullptr, e.nonlocal_v);
  e.kinetic_u = grad_norm_sq(s.u);
  e.kinetic_v = grad_norm_sq(s.v);
  if (pb.has_v1)
    e.potential_v1 = weighted_dot(pb.v1, s.u, s.u);
  if (pb.has_v2)
    e.potential_v2 = weighted_dot(pb.v2, s.v, s.v);
  e.coupling = weighted_dot(pb.beta, s.u, s.v);
  detail::compose_total(e, m);
  return {e, StatePair(std::move(gu), std::move(gv))};
}

inline StatePair el_gradient(const StatePair &s, const Problem &pb) {
  return evaluate(s, pb).gradient;
}

/// lambda = -<grad_u E, u> / |u|^2, which is the expression
/// -(|grad u|^2 + int V1 u^2 - mu1 B(u,p) - int beta u v) / |u|^2.
inline Multipliers lagrange_multipliers(const StatePair &s,
                                        const Evaluation &ev) {
  const double mu = s.u.mass(), mv = s.v.mass();
  require(mu > 0.0 && mv > 0.0, ErrorCode::ZeroMass,
          "Lagrange multipliers need both components nonzero");
  return {-dot(ev.gradient.u, s.u) / mu, -dot(ev.gradient.v, s.v) / mv};
}

inline Multipliers lagrange_multipliers(const StatePair &s, const Problem &pb) {
  return lagrange_multipliers(s, evaluate(s, pb));
}

/// Multiplier of one component, 0 for a vanishing component.
inline double component_multiplier(const ScalarField &f,
                                   const ScalarField &grad) {
  const double m = f.mass();
  return m > 0.0 ? -dot(grad, f) / m : 0.0;
}

struct Residuals {
  double el_u = 0.0;  ///< |grad_u E + lambda1 u|_2
  double el_v = 0.0;
  double el = 0.0;    ///< sqrt(el_u^2 + el_v^2)
};

inline Residuals el_residuals(const StatePair &s, const Evaluation &ev) {
  Residuals r;
  const double l1 = component_multiplier(s.u, ev.gradient.u);
  const double l2 = component_multiplier(s.v, ev.gradient.v);
  ScalarField ru = ev.gradient.u;
  ru.axpy(l1, s.u);
  ScalarField rv = ev.gradient.v;
  rv.axpy(l2, s.v);
  r.el_u = l2_norm(ru);
  r.el_v = l2_norm(rv);
  r.el = std::hypot(r.el_u, r.el_v);
  return r;
}

namespace detail {
inline void require_pohozaev_mode(const Problem &pb) {
  require(!pb.has_v1 && !pb.has_v2, ErrorCode::ModeMismatch,
          "the Pohozaev-type identity is only available without potentials");
  require(pb.params.p == pb.params.q, ErrorCode::ModeMismatch,
          "the Pohozaev-type identity needs p = q");
}
} // namespace detail

/// K - delta_p (mu1 B(u,p) + mu2 B(v,p)) + int (x . grad beta) u v,
/// the derivative of E(s * (u,v)) at s = 0.
inline double pohozaev_residual(const StatePair &s, const EnergyBreakdown &e,
                                const Problem &pb) {
  detail::require_pohozaev_mode(pb);
  const auto &m = pb.params;
  const double d = pb.regime.delta_p;
  return e.kinetic - d * (m.mu1 * e.nonlocal_u + m.mu2 * e.nonlocal_v) +
         weighted_dot(pb.beta_flux, s.u, s.v);
}

inline double pohozaev_residual(const StatePair &s, const Problem &pb) {
  detail::require_pohozaev_mode(pb);
  return pohozaev_residual(s, energy_total(s, pb), pb);
}

struct IdentitySides {
  double lhs = 0.0; ///< lambda1 |u|^2 + lambda2 |v|^2
  double rhs = 0.0; ///< (1/delta - 1) K + int (2 beta + x.grad beta / delta) u v

  double gap() const {
    const double scale = std::abs(lhs);
    return scale > 0.0 ? std::abs(lhs - rhs) / scale : std::abs(lhs - rhs);
  }
};

inline IdentitySides multiplier_sum_identity(const StatePair &s,
                                             const Evaluation &ev,
                                             const Problem &pb) {
  detail::require_pohozaev_mode(pb);
  const double d = pb.regime.delta_p;
  IdentitySides out;
  out.lhs = -dot(ev.gradient.u, s.u) - dot(ev.gradient.v, s.v);
  double cross = 0.0;
  const double w = s.grid().cell_volume();
  for (std::size_t i = 0; i < s.u.size(); ++i)
    cross += (2.0 * pb.beta[i] + pb.beta_flux[i] / d) * s.u[i] * s.v[i];
  out.rhs = (1.0 / d - 1.0) * ev.energy.kinetic + w * cross;
  return out;
}

inline IdentitySides multiplier_sum_identity(const StatePair &s,
                                             const Problem &pb) {
  detail::require_pohozaev_mode(pb);
  return multiplier_sum_identity(s, evaluate(s, pb), pb);
}

} // namespace choquard

#endif
