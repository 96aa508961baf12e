//! Modified Prüfer transformation for `u(n+1) + u(n-1) + V(n) u(n) = E u(n)`.
//!
//! With `E = 2 cos πk`, `s = sin πk` and
//!
//! ```text
//! Y(n) = (1/s) [[s, 0], [-cos πk, 1]] (u(n-1), u(n))ᵀ = R(n) (sin(πθ(n) - πk), cos(πθ(n) - πk))ᵀ
//! ```
//!
//! one has `u(n) = R(n) sin πθ(n)` and `u(n-1) = R(n) sin(πθ(n) - πk)`.
//! The direction of `Y` fixes `θ` modulo 2; the boundary conversion picks the
//! representative in `[0, 2)` so that the sign of `u` is reproduced exactly,
//! and every later angle is unwrapped by continuity.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{BoundaryAngle, EnergyPoint, Phase, PruferState};

/// Largest `|V|/s` for which the angle branch is unambiguous.
pub const STEP_LIMIT: f64 = 0.5;

/// Largest `|V|/s` for the second-order angle expansion.
pub const EXPANSION_LIMIT: f64 = 0.1;

/// `|sin πθ|` below this is treated as an exact zero.
pub const DEGENERATE_SIN: f64 = 1e-15;

/// `(u(n-1), u(n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionPair {
    pub u_prev: f64,
    pub u_cur: f64,
}

impl SolutionPair {
    pub fn new(u_prev: f64, u_cur: f64) -> Self {
        SolutionPair { u_prev, u_cur }
    }

    pub fn norm(&self) -> f64 {
        self.u_prev.hypot(self.u_cur)
    }
}

/// One step of the three-term recursion: `(u(n-1), u(n)) ↦ (u(n), u(n+1))`.
#[inline]
pub fn transfer_step(p: SolutionPair, v: f64, e: f64) -> SolutionPair {
    SolutionPair { u_prev: p.u_cur, u_cur: (e - v) * p.u_cur - p.u_prev }
}

/// Prüfer state at `n = 1` for `u(0) = cos θ`, `u(1) = sin θ`.
pub fn boundary_to_prufer(theta: BoundaryAngle, ep: &EnergyPoint) -> PruferState {
    let (u1, u0) = theta.radians().sin_cos();
    solution_to_prufer(SolutionPair::new(u0, u1), ep)
}

/// Prüfer variables of an arbitrary nonzero pair, angle in `[0, 2)`.
pub fn solution_to_prufer(p: SolutionPair, ep: &EnergyPoint) -> PruferState {
    let y0 = p.u_prev;
    let y1 = (p.u_cur - ep.c() * p.u_prev) / ep.s();
    let r = y0.hypot(y1);
    let mut theta = y0.atan2(y1) / PI + ep.k();
    if theta < 0.0 {
        theta += 2.0;
    }
    if theta >= 2.0 {
        theta -= 2.0;
    }
    PruferState::new(r.ln(), theta)
}

/// `(u(n-1), u(n))` from the Prüfer variables.
pub fn prufer_to_solution(st: &PruferState, ep: &EnergyPoint) -> SolutionPair {
    let unit = unit_solution(st, ep);
    let r = st.log_r.exp();
    SolutionPair { u_prev: r * unit.u_prev, u_cur: r * unit.u_cur }
}

/// The solution direction with `R = 1`; multiply by `exp(log_r)` for `u`.
pub fn unit_solution(st: &PruferState, ep: &EnergyPoint) -> SolutionPair {
    let sign = if st.phase.turns().rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let a = PI * st.phase.frac();
    SolutionPair { u_prev: sign * (a - PI * ep.k()).sin(), u_cur: sign * a.sin() }
}

/// Angle and log-radius increments of one exact step.
#[inline]
fn increments(frac: f64, v: f64, ep: &EnergyPoint) -> (f64, f64) {
    let (sa, ca) = (PI * frac).sin_cos();
    if sa.abs() < DEGENERATE_SIN {
        return (0.0, 0.0);
    }
    let x = v / ep.s();
    // cot(πθ' - πk) = cot πθ - x rotates (cos πθ, sin πθ) by this angle.
    let dtheta = (x * sa * sa).atan2(1.0 - x * sa * ca) / PI;
    let dlog = 0.5 * (x * (x * sa * sa - 2.0 * sa * ca)).ln_1p();
    (dtheta, dlog)
}

/// Advances only the angle. Shared by the generator and piece replay so both
/// produce identical bits.
#[inline]
pub(crate) fn advance_angle(phase: &mut Phase, v: f64, ep: &EnergyPoint) {
    let (dtheta, _) = increments(phase.frac(), v, ep);
    phase.advance(ep.k() + dtheta);
}

/// In-place step without the precondition check.
#[inline]
pub(crate) fn step_in_place(st: &mut PruferState, v: f64, ep: &EnergyPoint) {
    let (dtheta, dlog) = increments(st.phase.frac(), v, ep);
    st.log_r += dlog;
    st.phase.advance(ep.k() + dtheta);
}

/// Checks `|V|/s < 1/2`.
#[inline]
pub fn check_step(v: f64, ep: &EnergyPoint) -> Result<()> {
    let ratio = v.abs() / ep.s();
    if ratio >= STEP_LIMIT || !ratio.is_finite() {
        return Err(Error::StepTooLarge { ratio, limit: STEP_LIMIT });
    }
    Ok(())
}

/// Exact Prüfer step with potential value `v` at the current site.
///
/// The new angle satisfies `cot(πθ' - πk) = cot πθ - V/s` on the branch
/// `θ' - θ - k ∈ (-1/2, 1/2)`, and `R'^2/R^2 = 1 - (V/s) sin 2πθ + (V/s)^2 sin^2 πθ`.
pub fn prufer_step(st: &PruferState, v: f64, ep: &EnergyPoint) -> Result<PruferState> {
    check_step(v, ep)?;
    let mut next = *st;
    step_in_place(&mut next, v, ep);
    Ok(next)
}

/// `k + sin^2(πθ) V / (π s)`, the angle increment to second order in `V/s`.
pub fn predicted_angle_increment(st: &PruferState, v: f64, ep: &EnergyPoint) -> Result<f64> {
    let ratio = v.abs() / ep.s();
    if ratio >= EXPANSION_LIMIT {
        return Err(Error::StepTooLarge { ratio, limit: EXPANSION_LIMIT });
    }
    let sa = (PI * st.phase.frac()).sin();
    Ok(ep.k() + sa * sa * v / (PI * ep.s()))
}

/// Evolves a state through a run of potential values.
pub fn evolve(st: &PruferState, potential: &[f64], ep: &EnergyPoint) -> Result<PruferState> {
    let mut cur = *st;
    for &v in potential {
        check_step(v, ep)?;
        step_in_place(&mut cur, v, ep);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(e: f64) -> EnergyPoint {
        EnergyPoint::new(e).unwrap()
    }

    #[test]
    fn transfer_step_examples() {
        assert_eq!(transfer_step(SolutionPair::new(0.0, 1.0), 0.0, 0.0), SolutionPair::new(1.0, 0.0));
        let e = 2.0 * (PI / 3.0).cos();
        let p = transfer_step(SolutionPair::new(1.0, 1.0), 0.0, e);
        assert_eq!(p.u_prev, 1.0);
        assert!(p.u_cur.abs() < 1e-15);
        assert_eq!(transfer_step(SolutionPair::new(1.0, 2.0), 0.5, 1.0), SolutionPair::new(2.0, 0.0));
    }

    #[test]
    fn dirichlet_boundary_gives_angle_k() {
        for e in [-1.3, 0.0, 0.4, 1.0] {
            let p = ep(e);
            let st = boundary_to_prufer(BoundaryAngle::new(PI / 2.0).unwrap(), &p);
            assert!((st.log_r.exp() - 1.0 / p.s()).abs() < 1e-14);
            assert!((st.phi() - p.k()).abs() < 1e-15);
        }
    }

    #[test]
    fn neumann_like_boundary_at_half_k() {
        // u = (1, 0), k = 1/2: Y = (1, 0) and sin(πθ - π/2) = 1 gives θ = 1.
        let st = boundary_to_prufer(BoundaryAngle::new(0.0).unwrap(), &ep(0.0));
        assert!(st.log_r.abs() < 1e-15);
        assert!((st.phi() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_at_quarter_pi_k_third() {
        // Direct evaluation: Y = (cos π/4, (sin π/4 - cos(π/3) cos π/4)/sin(π/3)).
        let p = ep(1.0);
        let st = boundary_to_prufer(BoundaryAngle::new(PI / 4.0).unwrap(), &p);
        let h = 0.5f64.sqrt();
        let y = (h, (h - 0.5 * h) / (3f64.sqrt() / 2.0));
        let r = (y.0 * y.0 + y.1 * y.1).sqrt();
        assert!((st.log_r.exp() - r).abs() < 1e-14);
        let a = PI * st.phi() - PI / 3.0;
        assert!((r * a.sin() - y.0).abs() < 1e-14);
        assert!((r * a.cos() - y.1).abs() < 1e-14);
        assert!((0.0..2.0).contains(&st.phi()));
    }

    #[test]
    fn boundary_round_trip() {
        for e in [-1.7, -0.5, 0.0, 0.9, 1.6] {
            let p = ep(e);
            for i in 0..50 {
                let theta = PI * i as f64 / 50.0;
                let st = boundary_to_prufer(BoundaryAngle::new(theta).unwrap(), &p);
                let u = prufer_to_solution(&st, &p);
                assert!((u.u_prev - theta.cos()).abs() < 1e-12);
                assert!((u.u_cur - theta.sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solution_at_angle_k() {
        let p = ep(0.7);
        let st = PruferState::new(0.0, p.k());
        let u = prufer_to_solution(&st, &p);
        assert!(u.u_prev.abs() < 1e-15);
        assert!((u.u_cur - p.s()).abs() < 1e-15);
    }

    #[test]
    fn solution_matches_linear_solve() {
        // Solve (1/s)[[s,0],[-c,1]] (a, b) = R (sin α, cos α) by back substitution.
        let p = ep(-0.6);
        for (log_r, phi) in [(0.3, 0.17), (-1.2, 1.61), (2.0, 7.93), (0.0, -3.4)] {
            let st = PruferState::new(log_r, phi);
            let r = f64::exp(log_r);
            let alpha = PI * phi - PI * p.k();
            let a = r * alpha.sin();
            let b = p.s() * r * alpha.cos() + p.c() * a;
            let u = prufer_to_solution(&st, &p);
            assert!((u.u_prev - a).abs() < 1e-12 * r.max(1.0));
            assert!((u.u_cur - b).abs() < 1e-12 * r.max(1.0));
        }
    }

    #[test]
    fn reduced_angle_reproduces_direction_up_to_sign() {
        let p = ep(0.3);
        let st = PruferState::new(0.0, 12.345);
        let reduced = PruferState::new(0.0, st.phase.frac());
        let a = unit_solution(&st, &p);
        let b = unit_solution(&reduced, &p);
        let cross = a.u_prev * b.u_cur - a.u_cur * b.u_prev;
        assert!(cross.abs() < 1e-12);
    }

    #[test]
    fn zero_potential_step_is_pure_rotation() {
        let p = ep(1.0);
        let st = PruferState::new(0.7, 0.2);
        let next = prufer_step(&st, 0.0, &p).unwrap();
        assert_eq!(next.log_r, 0.7);
        assert_eq!(next.phi(), 0.2 + p.k());
    }

    #[test]
    fn degenerate_angle_step() {
        let p = ep(1.0);
        let st = PruferState::new(-0.4, 3.0);
        let next = prufer_step(&st, 0.3, &p).unwrap();
        assert_eq!(next.log_r, -0.4);
        assert_eq!(next.phase.frac(), p.k());
        assert_eq!(next.phase.turns(), 3);
    }

    #[test]
    fn step_matches_direct_formulas() {
        // k = 1/3, θ = 0.2, V = 0.05 via the cotangent relation and the ratio formula.
        let p = ep(1.0);
        let st = PruferState::new(0.0, 0.2);
        let v = 0.05;
        let next = prufer_step(&st, v, &p).unwrap();
        let x = v / p.s();
        let cot_new = 1.0 / (PI * 0.2).tan() - x;
        let mut theta1 = (1.0 / cot_new).atan() / PI + p.k();
        while theta1 - 0.2 - p.k() > 0.5 {
            theta1 -= 1.0;
        }
        while theta1 - 0.2 - p.k() <= -0.5 {
            theta1 += 1.0;
        }
        assert!((next.phi() - theta1).abs() < 1e-14);
        let ratio = 1.0 - x * (2.0 * PI * 0.2).sin() + x * x * (PI * 0.2).sin().powi(2);
        assert!((next.log_r - 0.5 * ratio.ln()).abs() < 1e-15);

        // Cross-check against the transfer recursion.
        let u0 = prufer_to_solution(&st, &p);
        let u1 = transfer_step(u0, v, p.energy());
        let back = solution_to_prufer(u1, &p);
        assert!((back.log_r - next.log_r).abs() < 1e-13);
        assert!((back.phase.frac() - next.phase.frac()).abs() < 1e-13);
    }

    #[test]
    fn step_rejects_large_potential() {
        let p = ep(1.0);
        let st = PruferState::new(0.0, 0.3);
        assert!(matches!(prufer_step(&st, 0.5 * p.s(), &p), Err(Error::StepTooLarge { .. })));
        assert!(prufer_step(&st, 0.49 * p.s(), &p).is_ok());
    }

    #[test]
    fn predicted_increment_examples() {
        let p = ep(1.0);
        let st = PruferState::new(0.0, 0.2);
        assert_eq!(predicted_angle_increment(&st, 0.0, &p).unwrap(), p.k());
        assert_eq!(predicted_angle_increment(&PruferState::new(0.0, 2.0), 0.05, &p).unwrap(), p.k());
        let expected = 1.0 / 3.0 + (0.2 * PI).sin().powi(2) * 0.05 / (PI * 3f64.sqrt() / 2.0);
        assert!((predicted_angle_increment(&st, 0.05, &p).unwrap() - expected).abs() < 1e-15);
        assert!(predicted_angle_increment(&st, 0.1 * p.s(), &p).is_err());
    }

    #[test]
    fn free_evolution_is_rotation() {
        let p = ep(1.0);
        let st0 = PruferState::new(0.25, 0.1);
        let st = evolve(&st0, &vec![0.0; 10_000], &p).unwrap();
        assert_eq!(st.log_r, 0.25);
        assert!((st.phase.minus(&st0.phase) - 10_000.0 / 3.0).abs() < 1e-9);
    }
}
