//! Energy-like Lyapunov function of the PLL and the stability index
//! `zeta = 1 - V/V_cr` built on it.
//!
//! The function is written in normalized coordinates: `x = x_int/sqrt(ki*Ug)`
//! and time scaled by `sqrt(ki*Ug)`. With `gamma = kp*sqrt(Ug/ki)` and
//! `h = xg*isd*sqrt(ki)/(omega_s*sqrt(Ug))` the post-fault dynamics read
//! `delta' = (gamma*e + x)/(1 - gamma*h)`, `x' = (e + h*x)/(1 - gamma*h)` with
//! `e = m - sin(delta)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{angle_window, load_ratio, voltage_offset, CurrentInjection, PllParams, PllState, StageParams};
use crate::sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovMode {
    /// Cross terms in `h` dropped.
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovParams {
    pub gamma: f64,
    pub h: f64,
    pub m: f64,
    pub delta_s: f64,
    pub delta_cr: f64,
    /// Level of the function at the UEP.
    pub v_cr: f64,
    pub mode: LyapunovMode,
    /// `sqrt(ki*Ug)`, the scale between `x_int` and `x`.
    pub x_scale: f64,
}

/// `m*delta + cos(delta)`, the potential part shared by both modes.
fn potential(m: f64, delta: f64) -> f64 {
    m * delta + delta.cos()
}

/// Critical level of the reduced function for load ratio `m`.
pub fn reduced_critical_level(m: f64) -> f64 {
    let delta_s = m.asin();
    let delta_cr = if m >= 0.0 { PI - delta_s } else { -PI - delta_s };
    potential(m, delta_s) - potential(m, delta_cr)
}

pub fn lf_params(
    stage: &StageParams,
    inj: &CurrentInjection,
    pll: &PllParams,
    mode: LyapunovMode,
) -> Result<LyapunovParams> {
    let no_eq = || Error::NoEquilibrium {
        u0: voltage_offset(stage, inj).abs(),
        ug: stage.ug,
    };
    let m = load_ratio(stage, inj).ok_or_else(no_eq)?;
    if m.abs() >= 1.0 {
        return Err(no_eq());
    }
    let sqrt_ug = stage.ug.sqrt();
    let sqrt_ki = pll.ki.sqrt();
    let gamma = pll.kp * sqrt_ug / sqrt_ki;
    let h = stage.xg * inj.isd * sqrt_ki / (pll.omega_s * sqrt_ug);
    let delta_s = m.asin();
    let delta_cr = if m >= 0.0 { PI - delta_s } else { -PI - delta_s };
    let mut v_cr = potential(m, delta_s) - potential(m, delta_cr);
    if mode == LyapunovMode::Full {
        let scale = 1.0 - gamma * h;
        if scale <= 0.0 {
            return Err(Error::InvalidParameter {
                field: "gamma*h",
                reason: format!("full-mode function needs gamma*h < 1, got {}", gamma * h),
            });
        }
        v_cr *= scale;
    }
    Ok(LyapunovParams {
        gamma,
        h,
        m,
        delta_s,
        delta_cr,
        v_cr,
        mode,
        x_scale: (pll.ki * stage.ug).sqrt(),
    })
}

impl LyapunovParams {
    pub fn normalize(&self, state: &PllState) -> (f64, f64) {
        (state.delta, state.x_int / self.x_scale)
    }

    /// Function value at the normalized point `(delta, x)`.
    pub fn value_normalized(&self, delta: f64, x: f64) -> f64 {
        match self.mode {
            LyapunovMode::Reduced => 0.5 * x * x - potential(self.m, delta) + potential(self.m, self.delta_s),
            LyapunovMode::Full => {
                let k = 1.0 - self.gamma * self.h;
                let shifted = x - self.h * (delta - self.delta_s);
                k * potential(self.m, self.delta_s) + 0.5 * shifted * shifted - k * potential(self.m, delta)
            }
        }
    }

    pub fn in_domain(&self, delta: f64) -> bool {
        let (lo, hi) = angle_window(self.delta_s);
        (lo..=hi).contains(&delta)
    }
}

pub fn lf_value(state: &PllState, p: &LyapunovParams) -> f64 {
    let (delta, x) = p.normalize(state);
    p.value_normalized(delta, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityIndex {
    pub zeta: f64,
    pub in_domain: bool,
}

impl StabilityIndex {
    /// `zeta > 0` inside the angle window guarantees re-synchronization.
    pub fn certified(&self) -> bool {
        self.in_domain && self.zeta > 0.0
    }
}

pub fn stability_index(state: &PllState, p: &LyapunovParams) -> StabilityIndex {
    StabilityIndex {
        zeta: 1.0 - lf_value(state, p) / p.v_cr,
        in_domain: p.in_domain(state.delta),
    }
}

/// Fills `zeta` and `in_domain` on every sample using fixed post-fault
/// parameters, fault-on samples included.
pub fn index_series(
    mut traj: Trajectory,
    post_stage: &StageParams,
    post_inj: &CurrentInjection,
    pll: &PllParams,
) -> Result<Trajectory> {
    let p = lf_params(post_stage, post_inj, pll, LyapunovMode::Reduced)?;
    for s in &mut traj.samples {
        let idx = stability_index(&s.state(), &p);
        s.zeta = Some(idx.zeta);
        s.in_domain = Some(idx.in_domain);
    }
    Ok(traj)
}
