//! Equal-area analysis of the undamped PLL swing equation.
//!
//! The mechanical-torque analog is `U0` and the electrical one `Ug*sin(delta)`.
//! Torques are frozen per stage, so the fault-on current is the one the
//! converter holds at the end of the fault.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    equilibria, swing_coefficients, voltage_offset, CurrentInjection, StageParams, SwingState,
};
use crate::sim::{run, Scenario, StageLabel};

pub const ANGLE_TOL: f64 = 1e-10;
pub const MAX_BISECTIONS: usize = 200;

/// `S_I = int_{d0}^{d1} (U0 - Ug*sin) = U0*(d1-d0) + Ug*(cos d1 - cos d0)`,
/// floored at zero.
pub fn accel_area(fault: &StageParams, inj_fault: &CurrentInjection, delta0: f64, delta1: f64) -> f64 {
    let u0 = voltage_offset(fault, inj_fault);
    (u0 * (delta1 - delta0) + fault.ug * (delta1.cos() - delta0.cos())).max(0.0)
}

fn post_critical(post: &StageParams, inj_post: &CurrentInjection) -> Result<f64> {
    equilibria(post, inj_post)
        .map(|e| e.delta_cr())
        .ok_or(Error::NoEquilibrium {
            u0: voltage_offset(post, inj_post).abs(),
            ug: post.ug,
        })
}

/// `S_II = int_{d1}^{d_cr} (Ug*sin - U0)` over the post-fault stage.
pub fn decel_area(post: &StageParams, inj_post: &CurrentInjection, delta1: f64) -> Result<f64> {
    let delta_cr = post_critical(post, inj_post)?;
    if delta1 > delta_cr {
        return Err(Error::AngleBeyondCritical { delta: delta1, delta_cr });
    }
    let u0 = voltage_offset(post, inj_post);
    Ok(post.ug * (delta1.cos() - delta_cr.cos()) - u0 * (delta_cr - delta1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "delta", rename_all = "snake_case")]
pub enum CriticalAngle {
    Angle(f64),
    /// The decelerating area is already short at the initial angle.
    NeverStable,
    /// The fault-on swing turns back before the areas balance.
    AlwaysStable,
}

/// Largest angle the undamped fault-on swing reaches from rest at `delta0`,
/// or `None` if it runs away.
fn fault_turning_point(fault: &StageParams, inj_fault: &CurrentInjection, delta0: f64) -> Option<f64> {
    let eq = equilibria(fault, inj_fault)?;
    let (ds, du) = (eq.delta_s(), eq.delta_cr());
    if du < ds || delta0 >= ds {
        return None;
    }
    // Net area from delta0 to the fault UEP; if positive the swing crosses it.
    let u0 = voltage_offset(fault, inj_fault);
    let signed = |d: f64| u0 * (d - delta0) + fault.ug * (d.cos() - delta0.cos());
    if signed(du) > 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (ds, du);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if signed(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < ANGLE_TOL {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Clearing angle at which `S_I(delta0, delta_c) = S_II(delta_c)`.
pub fn critical_clearing_angle(
    fault: &StageParams,
    inj_fault: &CurrentInjection,
    post: &StageParams,
    inj_post: &CurrentInjection,
    delta0: f64,
) -> Result<CriticalAngle> {
    let delta_cr = post_critical(post, inj_post)?;
    if voltage_offset(fault, inj_fault) - fault.ug * delta0.sin() <= 0.0 {
        return Ok(CriticalAngle::AlwaysStable);
    }
    if delta0 >= delta_cr {
        return Ok(CriticalAngle::NeverStable);
    }
    let surplus = |d: f64| -> f64 {
        accel_area(fault, inj_fault, delta0, d) - decel_area(post, inj_post, d).unwrap_or(0.0)
    };
    if surplus(delta0) > 0.0 {
        return Ok(CriticalAngle::NeverStable);
    }
    let reach = fault_turning_point(fault, inj_fault, delta0).map_or(delta_cr, |d| d.min(delta_cr));

    // First sign change of the surplus on the reachable arc.
    const SCAN: usize = 1000;
    let step = (reach - delta0) / SCAN as f64;
    let mut lo = delta0;
    let mut bracket = None;
    for k in 1..=SCAN {
        let d = if k == SCAN { reach } else { delta0 + k as f64 * step };
        if surplus(d) > 0.0 {
            bracket = Some((lo, d));
            break;
        }
        lo = d;
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(CriticalAngle::AlwaysStable);
    };
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < ANGLE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if surplus(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalAngle::Angle(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "seconds", rename_all = "snake_case")]
pub enum EacCct {
    Finite(f64),
    /// The fault-on swing does not reach the critical angle in the horizon.
    Unbounded,
    AlwaysStable,
    NeverStable,
}

impl EacCct {
    /// Equal-area verdict for a given clearing time.
    pub fn predicts_stable(&self, fct: f64) -> bool {
        match *self {
            EacCct::Finite(t) => fct <= t,
            EacCct::Unbounded | EacCct::AlwaysStable => true,
            EacCct::NeverStable => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EacReport {
    pub delta_0: f64,
    /// Simulated angle at clearing.
    pub delta_clear: f64,
    pub delta_cr_post: f64,
    /// Accelerating area up to `delta_clear`.
    pub s_accel: f64,
    /// Decelerating area left from `delta_clear`; zero past the critical angle.
    pub s_decel: f64,
    pub critical_angle: CriticalAngle,
    pub cct_eac: EacCct,
    pub inj_fault: CurrentInjection,
    pub inj_post: CurrentInjection,
}

/// Time for the undamped fault-on swing to travel from rest at `delta0` to
/// `target`, by RK4 with crossing interpolation. `None` past `horizon`.
pub fn swing_travel_time(
    fault: &StageParams,
    inj_fault: &CurrentInjection,
    pll: &crate::model::PllParams,
    delta0: f64,
    target: f64,
    dt: f64,
    horizon: f64,
) -> Result<Option<f64>> {
    if target <= delta0 {
        return Ok(Some(0.0));
    }
    let c = swing_coefficients(fault, inj_fault, pll)?;
    let f = |s: &SwingState| c.rhs_undamped(s);
    let mut s = SwingState {
        delta: delta0,
        omega_delta: 0.0,
    };
    let n = (horizon / dt).ceil() as usize;
    for k in 0..n {
        let k1 = f(&s);
        let at = |h: f64, k: (f64, f64)| SwingState {
            delta: s.delta + h * k.0,
            omega_delta: s.omega_delta + h * k.1,
        };
        let k2 = f(&at(0.5 * dt, k1));
        let k3 = f(&at(0.5 * dt, k2));
        let k4 = f(&at(dt, k3));
        let next = SwingState {
            delta: s.delta + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            omega_delta: s.omega_delta + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        };
        if next.delta >= target {
            let frac = (target - s.delta) / (next.delta - s.delta);
            return Ok(Some((k as f64 + frac) * dt));
        }
        s = next;
    }
    Ok(None)
}

/// Equal-area assessment of a scenario, including its EAC clearing time.
pub fn eac_report(scenario: &Scenario) -> Result<EacReport> {
    let stages = scenario.stages()?;
    let traj = run(scenario)?;
    let delta_0 = traj.samples[0].delta;
    let last_fault = traj
        .samples
        .iter()
        .rev()
        .find(|s| s.stage == StageLabel::Fault)
        .expect("fault stage spans at least one step");
    let inj_fault = CurrentInjection::new(last_fault.isd, last_fault.isq);
    let inj_post = scenario.post_injection()?;
    let delta_cr_post = post_critical(&stages.post, &inj_post)?;
    let delta_clear = traj.samples[traj.clearing_index()].delta;

    let critical_angle = critical_clearing_angle(&stages.fault, &inj_fault, &stages.post, &inj_post, delta_0)?;
    let cct_eac = match critical_angle {
        CriticalAngle::AlwaysStable => EacCct::AlwaysStable,
        CriticalAngle::NeverStable => EacCct::NeverStable,
        CriticalAngle::Angle(dc) => {
            match swing_travel_time(&stages.fault, &inj_fault, &scenario.pll, delta_0, dc, scenario.dt, 1.0)? {
                Some(t) => EacCct::Finite(t),
                None => EacCct::Unbounded,
            }
        }
    };
    Ok(EacReport {
        delta_0,
        delta_clear,
        delta_cr_post,
        s_accel: accel_area(&stages.fault, &inj_fault, delta_0, delta_clear),
        s_decel: decel_area(&stages.post, &inj_post, delta_clear).unwrap_or(0.0),
        critical_angle,
        cct_eac,
        inj_fault,
        inj_post,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PllParams;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn stage(ug: f64, xg: f64) -> StageParams {
        StageParams::new(ug, 0.0, xg).unwrap()
    }

    const ONE: CurrentInjection = CurrentInjection { isd: 1.0, isq: 0.0 };

    #[test]
    fn accel_area_examples() {
        let f = stage(0.0, 0.24);
        assert_abs_diff_eq!(accel_area(&f, &ONE, 0.2, 1.2), 0.24, epsilon = 1e-15);
        assert_eq!(accel_area(&f, &ONE, 0.7, 0.7), 0.0);
        assert_abs_diff_eq!(accel_area(&f, &ONE, 0.0, 2.5), 0.24 * 2.5, epsilon = 1e-15);
    }

    #[test]
    fn decel_area_examples() {
        let p = stage(1.0, 0.2);
        assert_abs_diff_eq!(decel_area(&p, &ONE, 0.5).unwrap(), 1.369331, epsilon = 1e-6);
        let dcr = PI - 0.2f64.asin();
        assert_abs_diff_eq!(decel_area(&p, &ONE, dcr).unwrap(), 0.0, epsilon = 1e-15);
        assert!(matches!(
            decel_area(&p, &ONE, dcr + 0.01),
            Err(Error::AngleBeyondCritical { .. })
        ));
    }

    #[test]
    fn heavier_post_fault_loading_shrinks_decel_area() {
        let light = decel_area(&stage(1.0, 0.19), &ONE, 0.4).unwrap();
        let heavy = decel_area(&stage(1.0, 0.21), &ONE, 0.4).unwrap();
        assert!(heavy < light);
    }

    #[test]
    fn zero_depth_fault_is_always_stable() {
        let p = stage(1.0, 0.2);
        let d0 = 0.2f64.asin();
        let r = critical_clearing_angle(&p, &ONE, &p, &ONE, d0).unwrap();
        assert_eq!(r, CriticalAngle::AlwaysStable);
    }

    #[test]
    fn bolted_fault_angle_balances_areas() {
        let f = stage(0.0, 0.209);
        let p = stage(1.0, 0.209);
        let d0 = (0.1891f64).asin();
        let CriticalAngle::Angle(dc) = critical_clearing_angle(&f, &ONE, &p, &ONE, d0).unwrap() else {
            panic!("expected a finite angle");
        };
        assert!(dc > d0 && dc < PI - 0.209f64.asin());
        let residual = accel_area(&f, &ONE, d0, dc) - decel_area(&p, &ONE, dc).unwrap();
        assert!(residual.abs() < 1e-9, "{residual}");
    }

    #[test]
    fn near_unity_loading_leaves_small_margin() {
        let f = stage(0.0, 0.95);
        let p = stage(1.0, 0.95);
        let d0 = 0.95f64.asin();
        let CriticalAngle::Angle(dc) = critical_clearing_angle(&f, &ONE, &p, &ONE, d0).unwrap() else {
            panic!("expected a finite angle");
        };
        assert!(dc - d0 < 0.5);
    }

    #[test]
    fn travel_time_zero_when_already_there() {
        let pll = PllParams::new(40.0, 1600.0, 100.0 * PI).unwrap();
        let f = stage(0.0, 0.2);
        assert_eq!(swing_travel_time(&f, &ONE, &pll, 0.3, 0.3, 5e-5, 1.0).unwrap(), Some(0.0));
    }

    #[test]
    fn bolted_travel_time_matches_parabola() {
        // Ug = 0: delta = d0 + U0*t^2/(2H).
        let pll = PllParams::new(40.0, 1600.0, 100.0 * PI).unwrap();
        let f = stage(0.0, 0.2);
        let c = swing_coefficients(&f, &ONE, &pll).unwrap();
        let t = swing_travel_time(&f, &ONE, &pll, 0.2, 1.2, 5e-5, 1.0).unwrap().unwrap();
        let expected = (2.0 * c.h_pll * 1.0 / 0.2).sqrt();
        assert_abs_diff_eq!(t, expected, epsilon = 1e-6);
    }

    #[test]
    fn deeper_sag_is_faster() {
        let pll = PllParams::new(40.0, 1600.0, 100.0 * PI).unwrap();
        let shallow = swing_travel_time(&stage(0.1, 0.2), &ONE, &pll, 0.2, 1.5, 5e-5, 2.0).unwrap().unwrap();
        let deep = swing_travel_time(&stage(0.05, 0.2), &ONE, &pll, 0.2, 1.5, 5e-5, 2.0).unwrap().unwrap();
        assert!(deep < shallow);
    }
}
