//! Reduced-order model of a PLL-synchronized current source behind an
//! impedance `Rg + jXg` to a voltage source `Ug`.
//!
//! The PLL has two states: the angle difference `delta` between the PLL frame
//! and the source phasor, and the PI integrator output `x_int` (rad/s). The
//! converter current follows its reference instantly, so the only dynamics
//! are those of the synchronization loop:
//!
//! ```text
//! U0      = Rg*Isq + Xg*Isd
//! den     = 1 - kp*Xg*Isd/ws
//! d(delta) = [kp*(U0 - Ug*sin(delta)) + x_int] / den
//! d(x_int) = [ki*(U0 - Ug*sin(delta)) + ki*(Xg*Isd/ws)*x_int] / den
//! ```
//!
//! Angles are never wrapped: a pole slip shows up as `delta` growing by 2π.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Lower bound on `1 - kp*xg*isd/omega_s`. Below it the parameter set is
/// treated as physically invalid rather than integrated through.
pub const SINGULARITY_GUARD: f64 = 0.05;

/// SRF-PLL PI gains and the synchronous frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllParams {
    /// Proportional gain, rad/s per p.u. voltage.
    pub kp: f64,
    /// Integral gain, rad/s² per p.u. voltage.
    pub ki: f64,
    /// Synchronous angular frequency, rad/s.
    pub omega_s: f64,
}

impl PllParams {
    pub fn new(kp: f64, ki: f64, omega_s: f64) -> Result<Self> {
        ensure(kp.is_finite() && kp > 0.0, "kp", format!("must be > 0, got {kp}"))?;
        ensure(ki.is_finite() && ki > 0.0, "ki", format!("must be > 0, got {ki}"))?;
        ensure(
            omega_s.is_finite() && omega_s > 0.0,
            "omega_s",
            format!("must be > 0, got {omega_s}"),
        )?;
        Ok(Self { kp, ki, omega_s })
    }
}

/// Electrical environment seen by the converter during one stage of the
/// fault sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    /// Source voltage magnitude, p.u.
    pub ug: f64,
    /// Grid resistance, p.u.
    pub rg: f64,
    /// Grid reactance at synchronous frequency, p.u.
    pub xg: f64,
}

impl StageParams {
    pub fn new(ug: f64, rg: f64, xg: f64) -> Result<Self> {
        ensure(ug.is_finite() && ug >= 0.0, "ug", format!("must be >= 0, got {ug}"))?;
        ensure(rg.is_finite() && rg >= 0.0, "rg", format!("must be >= 0, got {rg}"))?;
        ensure(xg.is_finite() && xg > 0.0, "xg", format!("must be > 0, got {xg}"))?;
        Ok(Self { ug, rg, xg })
    }

    pub fn impedance(&self) -> Complex64 {
        Complex64::new(self.rg, self.xg)
    }
}

/// dq current references of the converter, p.u. in the PLL frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentInjection {
    pub isd: f64,
    pub isq: f64,
}

impl CurrentInjection {
    pub const ZERO: Self = Self { isd: 0.0, isq: 0.0 };

    pub fn new(isd: f64, isq: f64) -> Self {
        Self { isd, isq }
    }

    pub fn magnitude(&self) -> f64 {
        self.isd.hypot(self.isq)
    }

    /// Scales the current down to `i_max` if it exceeds it, keeping its
    /// direction.
    pub fn capped(self, i_max: f64) -> Self {
        let mag = self.magnitude();
        if mag > i_max && mag > 0.0 {
            let k = i_max / mag;
            Self::new(self.isd * k, self.isq * k)
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PllState {
    /// PLL angle minus source angle, rad. Unwrapped.
    pub delta: f64,
    /// PI integrator state, rad/s.
    pub x_int: f64,
}

impl PllState {
    pub fn new(delta: f64, x_int: f64) -> Self {
        Self { delta, x_int }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.x_int.is_finite()
    }
}

/// Time derivative of a [`PllState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllRate {
    pub delta_dot: f64,
    pub x_int_dot: f64,
}

/// `U0 = rg*isq + xg*isd`, the voltage offset the PLL has to balance.
pub fn voltage_offset(stage: &StageParams, inj: &CurrentInjection) -> f64 {
    stage.rg * inj.isq + stage.xg * inj.isd
}

/// q-axis POC voltage with the impedance evaluated at the PLL frequency.
pub fn poc_voltage_q(
    state: &PllState,
    stage: &StageParams,
    inj: &CurrentInjection,
    pll: &PllParams,
    omega_pll: f64,
) -> f64 {
    -stage.ug * state.delta.sin()
        + stage.rg * inj.isq
        + omega_pll / pll.omega_s * stage.xg * inj.isd
}

/// `|Ug e^{-j delta} + (Rg + jXg)(Isd + jIsq)|`, with the reactance taken at
/// synchronous frequency.
pub fn poc_voltage_magnitude(state: &PllState, stage: &StageParams, inj: &CurrentInjection) -> f64 {
    let source = Complex64::from_polar(stage.ug, -state.delta);
    let drop = stage.impedance() * Complex64::new(inj.isd, inj.isq);
    (source + drop).norm()
}

/// `1 - kp*xg*isd/omega_s`, checked against [`SINGULARITY_GUARD`].
pub fn loop_denominator(stage: &StageParams, inj: &CurrentInjection, pll: &PllParams) -> Result<f64> {
    let value = 1.0 - pll.kp * stage.xg * inj.isd / pll.omega_s;
    if value >= SINGULARITY_GUARD {
        Ok(value)
    } else {
        Err(Error::SingularDenominator {
            value,
            guard: SINGULARITY_GUARD,
        })
    }
}

/// Explicit right-hand side of the PLL dynamics.
pub fn pll_rhs(
    state: &PllState,
    stage: &StageParams,
    inj: &CurrentInjection,
    pll: &PllParams,
) -> Result<PllRate> {
    let den = loop_denominator(stage, inj, pll)?;
    let error = voltage_offset(stage, inj) - stage.ug * state.delta.sin();
    let coupling = stage.xg * inj.isd / pll.omega_s;
    Ok(PllRate {
        delta_dot: (pll.kp * error + state.x_int) / den,
        x_int_dot: (pll.ki * error + pll.ki * coupling * state.x_int) / den,
    })
}

/// Right-hand side from the implicit pair `d(delta) = x_int + kp*Usq(omega_pll)`,
/// `d(x_int) = ki*Usq(omega_pll)` with `omega_pll = omega_s + d(delta)`.
///
/// The algebraic loop is resolved by fixed-point iteration; its contraction
/// factor is `kp*xg*isd/omega_s`, so the same guard as [`pll_rhs`] applies.
/// Kept as an independent route to the explicit form.
pub fn implicit_rhs(
    state: &PllState,
    stage: &StageParams,
    inj: &CurrentInjection,
    pll: &PllParams,
) -> Result<PllRate> {
    loop_denominator(stage, inj, pll)?;
    let mut delta_dot = state.x_int + pll.kp * poc_voltage_q(state, stage, inj, pll, pll.omega_s);
    let mut usq = 0.0;
    for _ in 0..500 {
        usq = poc_voltage_q(state, stage, inj, pll, pll.omega_s + delta_dot);
        let next = state.x_int + pll.kp * usq;
        let converged = (next - delta_dot).abs() <= 1e-15 * next.abs().max(1.0);
        delta_dot = next;
        if converged {
            break;
        }
    }
    Ok(PllRate {
        delta_dot,
        x_int_dot: pll.ki * usq,
    })
}

/// Coefficients of the swing-equation form
/// `H * d(omega_delta) = Tm - Ug*sin(delta) - D(delta)*omega_delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingCoefficients {
    /// Mechanical-torque analog, equal to `U0`.
    pub t_m: f64,
    /// Electrical-torque amplitude.
    pub ug: f64,
    /// Inertia analog `(1 - kp*xg*isd/omega_s) / ki`.
    pub h_pll: f64,
    kp: f64,
    ki: f64,
    coupling: f64,
}

/// State of the swing form: angle and its rate `omega_delta = d(delta)/dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingState {
    pub delta: f64,
    pub omega_delta: f64,
}

impl SwingCoefficients {
    /// `D(delta) = kp*Ug*cos(delta)/ki - xg*isd/omega_s`. Sign-indefinite.
    pub fn damping(&self, delta: f64) -> f64 {
        self.kp * self.ug * delta.cos() / self.ki - self.coupling
    }

    pub fn electrical_torque(&self, delta: f64) -> f64 {
        self.ug * delta.sin()
    }

    pub fn rhs(&self, s: &SwingState) -> (f64, f64) {
        let accel = (self.t_m - self.electrical_torque(s.delta) - self.damping(s.delta) * s.omega_delta)
            / self.h_pll;
        (s.omega_delta, accel)
    }

    /// Undamped variant used by the equal-area analysis.
    pub fn rhs_undamped(&self, s: &SwingState) -> (f64, f64) {
        (s.omega_delta, (self.t_m - self.electrical_torque(s.delta)) / self.h_pll)
    }

    fn den(&self) -> f64 {
        self.h_pll * self.ki
    }

    pub fn to_swing(&self, state: &PllState) -> SwingState {
        let error = self.t_m - self.ug * state.delta.sin();
        SwingState {
            delta: state.delta,
            omega_delta: (self.kp * error + state.x_int) / self.den(),
        }
    }

    pub fn from_swing(&self, s: &SwingState) -> PllState {
        let error = self.t_m - self.ug * s.delta.sin();
        PllState {
            delta: s.delta,
            x_int: self.den() * s.omega_delta - self.kp * error,
        }
    }
}

pub fn swing_coefficients(
    stage: &StageParams,
    inj: &CurrentInjection,
    pll: &PllParams,
) -> Result<SwingCoefficients> {
    let den = loop_denominator(stage, inj, pll)?;
    Ok(SwingCoefficients {
        t_m: voltage_offset(stage, inj),
        ug: stage.ug,
        h_pll: den / pll.ki,
        kp: pll.kp,
        ki: pll.ki,
        coupling: stage.xg * inj.isd / pll.omega_s,
    })
}

/// Result of the current-injection existence check `|Rg*Isq + Xg*Isd| < Ug`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryCheck {
    pub satisfied: bool,
    /// `Ug - |U0|`; negative when violated.
    pub margin: f64,
    /// The resistance-free form `|Xg*Isd| < Ug`.
    pub reduced_satisfied: bool,
}

pub fn injection_boundary(stage: &StageParams, inj: &CurrentInjection) -> BoundaryCheck {
    let u0 = voltage_offset(stage, inj);
    BoundaryCheck {
        satisfied: u0.abs() < stage.ug,
        margin: stage.ug - u0.abs(),
        reduced_satisfied: (stage.xg * inj.isd).abs() < stage.ug,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPair {
    pub sep: PllState,
    pub uep: PllState,
    /// Signed load ratio `U0/Ug`.
    pub m: f64,
}

impl EquilibriumPair {
    pub fn delta_s(&self) -> f64 {
        self.sep.delta
    }

    pub fn delta_cr(&self) -> f64 {
        self.uep.delta
    }
}

/// `m = U0/Ug`, or `None` when `Ug = 0`.
pub fn load_ratio(stage: &StageParams, inj: &CurrentInjection) -> Option<f64> {
    (stage.ug > 0.0).then(|| voltage_offset(stage, inj) / stage.ug)
}

/// Stable and unstable equilibria, or `None` when `|m| >= 1`.
///
/// The UEP is `pi - delta_s` for `m >= 0` and `-pi - delta_s` for `m < 0`.
pub fn equilibria(stage: &StageParams, inj: &CurrentInjection) -> Option<EquilibriumPair> {
    let m = load_ratio(stage, inj)?;
    if m.abs() >= 1.0 {
        return None;
    }
    let delta_s = m.asin();
    let delta_u = if m >= 0.0 { PI - delta_s } else { -PI - delta_s };
    Some(EquilibriumPair {
        sep: PllState::new(delta_s, 0.0),
        uep: PllState::new(delta_u, 0.0),
        m,
    })
}

/// Lower and upper edges `[-pi - delta_s, pi - delta_s]` of the angle window
/// around the SEP. Both edges are unstable equilibria (mod 2π).
pub fn angle_window(delta_s: f64) -> (f64, f64) {
    (-PI - delta_s, PI - delta_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn case1_pll() -> PllParams {
        PllParams::new(40.0, 1600.0, 100.0 * PI).unwrap()
    }

    #[test]
    fn voltage_offset_examples() {
        let s = StageParams::new(1.0, 0.0, 0.2).unwrap();
        assert_abs_diff_eq!(voltage_offset(&s, &CurrentInjection::new(1.0, 0.0)), 0.2, epsilon = 1e-15);
        assert_eq!(voltage_offset(&s, &CurrentInjection::ZERO), 0.0);
        let s = StageParams::new(1.0, 0.01, 0.17).unwrap();
        assert_abs_diff_eq!(
            voltage_offset(&s, &CurrentInjection::new(0.8, -0.6)),
            0.130,
            epsilon = 1e-12
        );
    }

    #[test]
    fn poc_voltage_q_examples() {
        let pll = case1_pll();
        let s = StageParams::new(1.0, 0.0, 0.2).unwrap();
        let inj = CurrentInjection::new(1.0, 0.0);
        let at_zero = poc_voltage_q(&PllState::new(0.0, 0.0), &s, &inj, &pll, pll.omega_s);
        assert_abs_diff_eq!(at_zero, voltage_offset(&s, &inj), epsilon = 1e-15);

        let eq = PllState::new((0.2f64).asin(), 0.0);
        assert_abs_diff_eq!(poc_voltage_q(&eq, &s, &inj, &pll, pll.omega_s), 0.0, epsilon = 1e-15);

        let v = poc_voltage_q(&PllState::new(0.5, 0.0), &s, &inj, &pll, 1.1 * pll.omega_s);
        assert_abs_diff_eq!(v, -0.259425538604203, epsilon = 1e-12);
    }

    #[test]
    fn poc_voltage_magnitude_examples() {
        let s = StageParams::new(1.0, 0.01, 0.2).unwrap();
        let m = poc_voltage_magnitude(&PllState::new(0.7, 3.0), &s, &CurrentInjection::ZERO);
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-15);

        let s = StageParams::new(0.0, 0.0, 0.2).unwrap();
        let m = poc_voltage_magnitude(&PllState::default(), &s, &CurrentInjection::new(1.2, 0.0));
        assert_abs_diff_eq!(m, 0.24, epsilon = 1e-15);

        // Real/imag parts written out by hand.
        let s = StageParams::new(0.5, 0.01, 0.2).unwrap();
        let (d, isd, isq) = (0.3f64, 1.0, -0.3);
        let re = 0.5 * d.cos() + 0.01 * isd - 0.2 * isq;
        let im = -0.5 * d.sin() + 0.01 * isq + 0.2 * isd;
        let m = poc_voltage_magnitude(&PllState::new(d, 0.0), &s, &CurrentInjection::new(isd, isq));
        assert_abs_diff_eq!(m, (re * re + im * im).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn pll_rhs_hand_evaluation() {
        let pll = case1_pll();
        let s = StageParams::new(1.0, 0.0, 0.2).unwrap();
        let inj = CurrentInjection::new(1.0, 0.0);
        let r = pll_rhs(&PllState::new(0.0, 10.0), &s, &inj, &pll).unwrap();
        let den = 1.0 - 40.0 * 0.2 / (100.0 * PI);
        assert_abs_diff_eq!(den, 0.97454, epsilon = 1e-5);
        assert_abs_diff_eq!(r.delta_dot, 18.470, epsilon = 1e-3);
        assert_abs_diff_eq!(r.x_int_dot, (320.0 + 1600.0 * 0.2 / (100.0 * PI) * 10.0) / den, epsilon = 1e-10);
        assert_abs_diff_eq!(r.x_int_dot, 338.814, epsilon = 1e-3);
    }

    #[test]
    fn pll_rhs_vanishes_at_equilibria() {
        let pll = case1_pll();
        for (ug, rg, xg, isd, isq) in [(1.0, 0.0, 0.2, 1.0, 0.0), (0.8, 0.02, 0.19, 0.6, -0.4), (1.0, 0.0, 0.2, -0.9, 0.0)] {
            let s = StageParams::new(ug, rg, xg).unwrap();
            let inj = CurrentInjection::new(isd, isq);
            let eq = equilibria(&s, &inj).unwrap();
            for p in [eq.sep, eq.uep] {
                let r = pll_rhs(&p, &s, &inj, &pll).unwrap();
                assert!(r.delta_dot.abs() < 1e-12 && r.x_int_dot.abs() < 1e-12, "{r:?}");
            }
        }
    }

    #[test]
    fn bolted_fault_drives_both_states_up() {
        let pll = case1_pll();
        let s = StageParams::new(0.0, 0.0, 0.2).unwrap();
        let inj = CurrentInjection::new(1.0, 0.0);
        for &(d, x) in &[(0.0, 0.0), (2.0, 5.0), (-1.0, 100.0), (10.0, 0.0)] {
            let r = pll_rhs(&PllState::new(d, x), &s, &inj, &pll).unwrap();
            assert!(r.delta_dot > 0.0 && r.x_int_dot > 0.0);
        }
    }

    #[test]
    fn singular_denominator_is_rejected() {
        let pll = PllParams::new(400.0, 1600.0, 100.0 * PI).unwrap();
        let s = StageParams::new(1.0, 0.0, 0.9).unwrap();
        let err = pll_rhs(&PllState::default(), &s, &CurrentInjection::new(1.0, 0.0), &pll);
        assert!(matches!(err, Err(Error::SingularDenominator { .. })));
        let err = swing_coefficients(&s, &CurrentInjection::new(1.0, 0.0), &pll);
        assert!(matches!(err, Err(Error::SingularDenominator { .. })));
    }

    #[test]
    fn swing_coefficient_examples() {
        let pll = case1_pll();
        let s = StageParams::new(1.0, 0.0, 0.2).unwrap();
        let c = swing_coefficients(&s, &CurrentInjection::new(1e-9, 0.0), &pll).unwrap();
        assert_abs_diff_eq!(c.h_pll, 6.25e-4, epsilon = 1e-12);

        let c = swing_coefficients(&s, &CurrentInjection::new(1.0, 0.0), &pll).unwrap();
        assert!(c.damping(PI / 2.0) < 0.0);
        assert!(c.damping(0.0) > 0.0);

        let c = swing_coefficients(&s, &CurrentInjection::ZERO, &pll).unwrap();
        assert_eq!(c.t_m, 0.0);
        assert_abs_diff_eq!(c.h_pll, 1.0 / 1600.0, epsilon = 1e-18);
    }

    #[test]
    fn swing_mapping_round_trips() {
        let pll = case1_pll();
        let s = StageParams::new(0.6, 0.01, 0.21).unwrap();
        let inj = CurrentInjection::new(0.9, -0.2);
        let c = swing_coefficients(&s, &inj, &pll).unwrap();
        let st = PllState::new(1.3, -12.0);
        let back = c.from_swing(&c.to_swing(&st));
        assert_abs_diff_eq!(back.x_int, st.x_int, epsilon = 1e-12);
        let r = pll_rhs(&st, &s, &inj, &pll).unwrap();
        assert_abs_diff_eq!(c.to_swing(&st).omega_delta, r.delta_dot, epsilon = 1e-12);
    }

    #[test]
    fn implicit_rhs_matches_explicit() {
        let pll = case1_pll();
        let s = StageParams::new(0.3, 0.015, 0.21).unwrap();
        let inj = CurrentInjection::new(1.1, -0.4);
        let st = PllState::new(2.2, 35.0);
        let a = pll_rhs(&st, &s, &inj, &pll).unwrap();
        let b = implicit_rhs(&st, &s, &inj, &pll).unwrap();
        assert_abs_diff_eq!(a.delta_dot, b.delta_dot, epsilon = 1e-11);
        assert_abs_diff_eq!(a.x_int_dot, b.x_int_dot, epsilon = 1e-9);
    }

    #[test]
    fn injection_boundary_examples() {
        let s = StageParams::new(0.5, 0.0, 0.2).unwrap();
        for isd in [0.0, 0.7, 1.5] {
            assert!(injection_boundary(&s, &CurrentInjection::new(isd, 0.0)).satisfied);
        }
        let s0 = StageParams::new(0.0, 0.01, 0.2).unwrap();
        let b = injection_boundary(&s0, &CurrentInjection::new(0.3, -0.1));
        assert!(!b.satisfied && !b.reduced_satisfied);
        let b = injection_boundary(&StageParams::new(0.8, 0.0, 0.2).unwrap(), &CurrentInjection::ZERO);
        assert!(b.satisfied);
        assert_eq!(b.margin, 0.8);
    }

    #[test]
    fn equilibria_examples() {
        let s = StageParams::new(1.0, 0.0, 0.2).unwrap();
        let eq = equilibria(&s, &CurrentInjection::ZERO).unwrap();
        assert_eq!(eq.sep, PllState::new(0.0, 0.0));
        assert_abs_diff_eq!(eq.uep.delta, PI, epsilon = 1e-15);

        let eq = equilibria(&s, &CurrentInjection::new(2.5, 0.0)).unwrap();
        assert_abs_diff_eq!(eq.delta_s(), PI / 6.0, epsilon = 1e-15);

        let eq = equilibria(&s, &CurrentInjection::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(eq.delta_s(), 0.201358, epsilon = 1e-6);
        assert_eq!(eq.sep.x_int, 0.0);

        let eq = equilibria(&s, &CurrentInjection::new(-1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(eq.delta_cr(), -PI + 0.201358, epsilon = 1e-6);

        let s0 = StageParams::new(0.0, 0.0, 0.2).unwrap();
        assert!(equilibria(&s0, &CurrentInjection::new(1.0, 0.0)).is_none());
        assert!(equilibria(&s, &CurrentInjection::new(5.0, 0.0)).is_none());
    }

    #[test]
    fn constructors_validate() {
        assert!(PllParams::new(0.0, 1.0, 1.0).is_err());
        assert!(PllParams::new(1.0, -1.0, 1.0).is_err());
        assert!(StageParams::new(-0.1, 0.0, 0.2).is_err());
        assert!(StageParams::new(1.0, 0.0, 0.0).is_err());
        assert!(StageParams::new(1.0, -0.01, 0.2).is_err());
    }
}
