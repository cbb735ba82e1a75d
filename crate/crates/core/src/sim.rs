//! Staged fault simulation: pre-fault steady state, fault-on interval,
//! post-fault network with one sending-cable circuit removed.
//!
//! Integration is classical RK4 on a fixed step. The stage switches at the
//! step boundaries nearest to `t_fault` and `t_fault + fct`. Current
//! references are recomputed once per step from the POC voltage measured at
//! the previous sample, which breaks the algebraic loop between the LVRT
//! rule and the voltage it responds to.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{
    angle_window, equilibria, poc_voltage_magnitude, poc_voltage_q, pll_rhs, CurrentInjection, PllParams,
    PllRate, PllState, StageParams,
};
use crate::network::{fault_stage, postfault_stage, prefault_stage, FaultSpec, MmcSource, NetworkSegments};

/// Settling ball around the post-fault SEP used by the classifier and the
/// region-of-attraction map.
pub const SETTLE_ANGLE_TOL: f64 = 0.01;
pub const SETTLE_RATE_TOL: f64 = 0.1;
pub const SETTLE_DWELL: f64 = 0.1;
/// Minimum simulated time after clearing before a verdict is given.
pub const MIN_POST_CLEARING: f64 = 0.5;

/// Low-voltage ride-through policy of the converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvrtPolicy {
    pub enabled: bool,
    #[serde(default = "LvrtPolicy::default_v_enter")]
    pub v_enter: f64,
    #[serde(default = "LvrtPolicy::default_v_exit")]
    pub v_exit: f64,
    /// Time the voltage has to stay above `v_exit` before LVRT is left, s.
    #[serde(default = "LvrtPolicy::default_hold")]
    pub hold: f64,
    #[serde(default = "LvrtPolicy::default_i_max")]
    pub i_max: f64,
    #[serde(default = "LvrtPolicy::default_k_q")]
    pub k_q: f64,
}

impl LvrtPolicy {
    fn default_v_enter() -> f64 {
        0.9
    }
    fn default_v_exit() -> f64 {
        0.92
    }
    fn default_hold() -> f64 {
        0.02
    }
    fn default_i_max() -> f64 {
        1.2
    }
    fn default_k_q() -> f64 {
        1.5
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.v_exit >= self.v_enter,
            "lvrt.v_exit",
            format!("must be >= v_enter ({}), got {}", self.v_enter, self.v_exit),
        )?;
        ensure(self.i_max > 0.0, "lvrt.i_max", format!("must be > 0, got {}", self.i_max))?;
        ensure(self.hold >= 0.0, "lvrt.hold", format!("must be >= 0, got {}", self.hold))?;
        ensure(self.k_q >= 0.0, "lvrt.k_q", format!("must be >= 0, got {}", self.k_q))
    }
}

impl Default for LvrtPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            v_enter: Self::default_v_enter(),
            v_exit: Self::default_v_exit(),
            hold: Self::default_hold(),
            i_max: Self::default_i_max(),
            k_q: Self::default_k_q(),
        }
    }
}

/// Reactive-current rule with q-axis priority:
/// `isq = -k_q*(v_enter - |Us|)` clamped to `[-i_max, 0]`, then `isd` limited
/// to what is left of the current budget.
pub fn lvrt_currents(us_mag: f64, base: &CurrentInjection, policy: &LvrtPolicy) -> CurrentInjection {
    let isq = (-policy.k_q * (policy.v_enter - us_mag)).clamp(-policy.i_max, 0.0);
    let headroom = (policy.i_max * policy.i_max - isq * isq).max(0.0).sqrt();
    CurrentInjection::new(base.isd.min(headroom), isq)
}

/// LVRT mode tracker with entry threshold and exit hysteresis.
#[derive(Debug, Clone)]
struct LvrtTracker {
    policy: LvrtPolicy,
    hold_steps: u64,
    active: bool,
    recovered_steps: u64,
}

impl LvrtTracker {
    fn new(policy: LvrtPolicy, dt: f64) -> Self {
        Self {
            policy,
            hold_steps: (policy.hold / dt - 1e-9).ceil().max(0.0) as u64,
            active: false,
            recovered_steps: 0,
        }
    }

    fn injection(&mut self, measured: f64, base: &CurrentInjection) -> CurrentInjection {
        let p = &self.policy;
        if p.enabled {
            if !self.active {
                if measured < p.v_enter {
                    self.active = true;
                    self.recovered_steps = 0;
                }
            } else if measured > p.v_exit {
                self.recovered_steps += 1;
                if self.recovered_steps >= self.hold_steps {
                    self.active = false;
                    self.recovered_steps = 0;
                }
            } else {
                self.recovered_steps = 0;
            }
        }
        if self.active {
            lvrt_currents(measured, base, p)
        } else {
            base.capped(p.i_max)
        }
    }
}

/// Everything needed to simulate one fault case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scenario {
    pub pll: PllParams,
    pub net: NetworkSegments,
    pub mmc: MmcSource,
    pub fault: FaultSpec,
    /// Pre-fault dispatch.
    pub base_injection: CurrentInjection,
    pub lvrt: LvrtPolicy,
    pub dt: f64,
    pub horizon: f64,
}

/// The three electrical environments of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stages {
    pub pre: StageParams,
    pub fault: StageParams,
    pub post: StageParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        ensure(self.dt.is_finite() && self.dt > 0.0, "dt", format!("must be > 0, got {}", self.dt))?;
        ensure(
            self.horizon > self.fault.t_clear(),
            "horizon",
            format!(
                "must exceed t_fault + fct = {}, got {}",
                self.fault.t_clear(),
                self.horizon
            ),
        )?;
        self.lvrt.validate()
    }

    pub fn stages(&self) -> Result<Stages> {
        Ok(Stages {
            pre: prefault_stage(&self.net)?,
            fault: fault_stage(&self.net, &self.mmc, &self.fault)?,
            post: postfault_stage(&self.net)?,
        })
    }

    /// Same scenario with another clearing time, keeping the simulated span
    /// after clearing unchanged.
    pub fn with_fct(&self, fct: f64) -> Self {
        let after = self.horizon - self.fault.t_clear();
        let mut s = *self;
        s.fault.fct = fct;
        s.horizon = s.fault.t_clear() + after;
        s
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..*self }
    }

    /// Dispatch as actually injected while LVRT is inactive.
    pub fn dispatch(&self) -> CurrentInjection {
        self.base_injection.capped(self.lvrt.i_max)
    }

    /// Steady current expected once the post-fault network has settled:
    /// the dispatch, unless the post-fault SEP voltage keeps LVRT engaged.
    pub fn post_injection(&self) -> Result<CurrentInjection> {
        let post = postfault_stage(&self.net)?;
        let mut inj = self.dispatch();
        if !self.lvrt.enabled {
            return Ok(inj);
        }
        for _ in 0..100 {
            let Some(eq) = equilibria(&post, &inj) else {
                break;
            };
            let us = poc_voltage_magnitude(&eq.sep, &post, &inj);
            if us >= self.lvrt.v_enter {
                break;
            }
            let next = lvrt_currents(us, &self.base_injection, &self.lvrt);
            if (next.isd - inj.isd).abs() < 1e-14 && (next.isq - inj.isq).abs() < 1e-14 {
                break;
            }
            inj = next;
        }
        Ok(inj)
    }

    fn step_index(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }

    /// Sample indices of fault inception and clearing.
    pub fn switch_steps(&self) -> (usize, usize) {
        let k_fault = self.step_index(self.fault.t_fault);
        let k_clear = self.step_index(self.fault.t_clear()).max(k_fault + 1);
        (k_fault, k_clear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageLabel {
    Pre,
    Fault,
    Post,
}

impl StageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::Pre => "pre",
            StageLabel::Fault => "fault",
            StageLabel::Post => "post",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub delta: f64,
    pub x_int: f64,
    /// `omega_s + d(delta)/dt`, rad/s.
    pub omega_pll: f64,
    pub usq: f64,
    pub us_mag: f64,
    pub isd: f64,
    pub isq: f64,
    pub stage: StageLabel,
    pub zeta: Option<f64>,
    pub in_domain: Option<bool>,
}

impl Sample {
    pub fn state(&self) -> PllState {
        PllState::new(self.delta, self.x_int)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub omega_s: f64,
    pub dt: f64,
    /// Time of the first fault-on sample.
    pub t_fault: f64,
    /// Time of the first post-fault sample.
    pub t_clear: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory is never empty")
    }

    /// Index of the first post-fault sample.
    pub fn clearing_index(&self) -> usize {
        self.samples
            .iter()
            .position(|s| s.stage == StageLabel::Post)
            .unwrap_or(self.samples.len())
    }

    pub fn delta_dot(&self, s: &Sample) -> f64 {
        s.omega_pll - self.omega_s
    }
}

/// One classical RK4 step.
pub fn rk4_step<F>(state: &PllState, dt: f64, mut f: F) -> Result<PllState>
where
    F: FnMut(&PllState) -> Result<PllRate>,
{
    let at = |s: &PllState, r: &PllRate, h: f64| PllState::new(s.delta + h * r.delta_dot, s.x_int + h * r.x_int_dot);
    let k1 = f(state)?;
    let k2 = f(&at(state, &k1, 0.5 * dt))?;
    let k3 = f(&at(state, &k2, 0.5 * dt))?;
    let k4 = f(&at(state, &k3, dt))?;
    Ok(PllState::new(
        state.delta + dt / 6.0 * (k1.delta_dot + 2.0 * k2.delta_dot + 2.0 * k3.delta_dot + k4.delta_dot),
        state.x_int + dt / 6.0 * (k1.x_int_dot + 2.0 * k2.x_int_dot + 2.0 * k3.x_int_dot + k4.x_int_dot),
    ))
}

/// Simulates the scenario from the pre-fault SEP to the horizon.
pub fn run(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let stages = scenario.stages()?;
    let pll = &scenario.pll;
    let dt = scenario.dt;
    let n = (scenario.horizon / dt).round() as usize;
    let (k_fault, k_clear) = scenario.switch_steps();

    let dispatch = scenario.dispatch();
    let sep = equilibria(&stages.pre, &dispatch).ok_or(Error::NoPrefaultEquilibrium {
        u0: crate::model::voltage_offset(&stages.pre, &dispatch).abs(),
        ug: stages.pre.ug,
    })?;
    let mut state = sep.sep;
    let mut tracker = LvrtTracker::new(scenario.lvrt, dt);
    let mut measured = poc_voltage_magnitude(&state, &stages.pre, &dispatch);

    let mut samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (label, stage) = if k < k_fault {
            (StageLabel::Pre, stages.pre)
        } else if k < k_clear {
            (StageLabel::Fault, stages.fault)
        } else {
            (StageLabel::Post, stages.post)
        };
        let inj = tracker.injection(measured, &scenario.base_injection);
        let rate = pll_rhs(&state, &stage, &inj, pll)?;
        let omega_pll = pll.omega_s + rate.delta_dot;
        let us_mag = poc_voltage_magnitude(&state, &stage, &inj);
        samples.push(Sample {
            t: k as f64 * dt,
            delta: state.delta,
            x_int: state.x_int,
            omega_pll,
            usq: poc_voltage_q(&state, &stage, &inj, pll, omega_pll),
            us_mag,
            isd: inj.isd,
            isq: inj.isq,
            stage: label,
            zeta: None,
            in_domain: None,
        });
        measured = us_mag;
        if k == n {
            break;
        }
        state = rk4_step(&state, dt, |s| pll_rhs(s, &stage, &inj, pll))?;
    }

    Ok(Trajectory {
        samples,
        omega_s: pll.omega_s,
        dt,
        t_fault: k_fault as f64 * dt,
        t_clear: k_clear as f64 * dt,
    })
}

/// Outcome of a fault case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Resynchronized { settle_time: f64 },
    LossOfSynchronization { first_slip_time: f64 },
    Marginal,
}

impl Verdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, Verdict::Resynchronized { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Resynchronized { .. } => "resynchronized",
            Verdict::LossOfSynchronization { .. } => "loss_of_synchronization",
            Verdict::Marginal => "marginal",
        }
    }
}

/// Offset of `delta` from the nearest SEP replica `delta_s + 2πk`.
pub fn distance_to_sep(delta: f64, delta_s: f64) -> f64 {
    let d = delta - delta_s;
    d - TAU * (d / TAU).round()
}

/// Index `k` of the angle window `[-π-δs, π-δs] + 2πk` containing `delta`.
pub fn window_branch(delta: f64, delta_s: f64) -> f64 {
    let (lo, _) = angle_window(delta_s);
    ((delta - lo) / TAU).floor()
}

/// Post-fault verdict.
///
/// The PLL angle is a phase, so the post-fault window is anchored at the
/// 2π-branch holding the clearing state. Departing that window by more than
/// 2π (a second pole slip after clearing) is loss of synchronization, as is
/// leaving it forward and never settling. Settling means staying within
/// 0.01 rad of an SEP replica at under 0.1 rad/s for 100 ms.
pub fn classify(traj: &Trajectory, post: &StageParams, inj_post: &CurrentInjection) -> Result<Verdict> {
    let i_clear = traj.clearing_index();
    let available = traj.last().t - traj.t_clear;
    if i_clear >= traj.samples.len() || available < MIN_POST_CLEARING - 1e-9 {
        return Err(Error::TrajectoryTooShort {
            available: available.max(0.0),
            required: MIN_POST_CLEARING,
        });
    }
    let after = &traj.samples[i_clear..];

    let Some(eq) = equilibria(post, inj_post) else {
        // Without a post-fault equilibrium nothing can re-lock.
        let d0 = after[0].delta;
        let slip = after
            .iter()
            .find(|s| (s.delta - d0).abs() > PI)
            .map_or(traj.t_clear, |s| s.t);
        return Ok(Verdict::LossOfSynchronization { first_slip_time: slip });
    };
    let delta_s = eq.delta_s();
    let (lo, hi) = angle_window(delta_s);
    let shift = TAU * window_branch(after[0].delta, delta_s);
    let (lo, hi) = (lo + shift, hi + shift);

    let first_exit = after.iter().find(|s| s.delta < lo || s.delta > hi);
    let departed = after.iter().any(|s| s.delta > hi + TAU || s.delta < lo - TAU);
    if departed {
        let t = first_exit.map_or(traj.t_clear, |s| s.t);
        return Ok(Verdict::LossOfSynchronization { first_slip_time: t });
    }

    let mut run_start: Option<f64> = None;
    for s in after {
        let inside = distance_to_sep(s.delta, delta_s).abs() < SETTLE_ANGLE_TOL
            && traj.delta_dot(s).abs() < SETTLE_RATE_TOL;
        match (inside, run_start) {
            (true, None) => run_start = Some(s.t),
            (true, Some(t0)) if s.t - t0 >= SETTLE_DWELL - 1e-9 => {
                return Ok(Verdict::Resynchronized { settle_time: t0 });
            }
            (false, _) => run_start = None,
            _ => {}
        }
    }

    if let Some(s) = first_exit {
        if traj.delta_dot(s) > 0.0 && s.delta > hi {
            return Ok(Verdict::LossOfSynchronization { first_slip_time: s.t });
        }
    }
    Ok(Verdict::Marginal)
}

/// Runs the scenario and classifies it against its own post-fault stage.
pub fn simulate(scenario: &Scenario) -> Result<(Trajectory, Verdict)> {
    let traj = run(scenario)?;
    let post = postfault_stage(&scenario.net)?;
    let verdict = classify(&traj, &post, &scenario.post_injection()?)?;
    Ok((traj, verdict))
}
