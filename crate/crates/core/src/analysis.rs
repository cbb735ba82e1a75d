//! Simulation-backed analyses: clearing-time bisection, brute-force
//! region-of-attraction maps, the audit of the stability index against those
//! maps, and the batch run over a set of named cases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lyapunov::{index_series, stability_index, LyapunovParams};
use crate::model::{angle_window, equilibria, loop_denominator, pll_rhs, CurrentInjection, PllParams, PllState, StageParams};
use crate::network::postfault_stage;
use crate::sim::{rk4_step, simulate, Scenario, Trajectory, Verdict, SETTLE_ANGLE_TOL, SETTLE_DWELL, SETTLE_RATE_TOL};

pub const DEFAULT_CCT_TOL: f64 = 1e-3;
pub const DEFAULT_CCT_UPPER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CctOutcome {
    /// `stable_fct` resynchronizes, `unstable_fct` does not, and they are
    /// within the requested tolerance.
    Critical { cct: f64, stable_fct: f64, unstable_fct: f64 },
    AlwaysStable,
    NeverStable,
}

impl CctOutcome {
    pub fn cct(&self) -> Option<f64> {
        match *self {
            CctOutcome::Critical { cct, .. } => Some(cct),
            _ => None,
        }
    }
}

pub fn is_stable_at(scenario: &Scenario, fct: f64) -> Result<bool> {
    Ok(simulate(&scenario.with_fct(fct))?.1.is_stable())
}

/// Largest resynchronizing clearing time, by bisection over simulated verdicts.
/// The simulated span after clearing is kept from `scenario`.
pub fn cct_bisection(scenario: &Scenario, tol: f64, upper: f64) -> Result<CctOutcome> {
    ensure(tol > 0.0, "tol", format!("must be > 0, got {tol}"))?;
    let mut lo = scenario.dt;
    ensure(upper > lo, "upper", format!("must exceed one step ({lo}), got {upper}"))?;
    if !is_stable_at(scenario, lo)? {
        return Ok(CctOutcome::NeverStable);
    }
    let mut hi = upper;
    if is_stable_at(scenario, hi)? {
        return Ok(CctOutcome::AlwaysStable);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if is_stable_at(scenario, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CctOutcome::Critical {
        cct: lo,
        stable_fct: lo,
        unstable_fct: hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaGridSpec {
    /// Angle span in rad; the post-fault window `[-π-δs, π-δs]` when absent.
    #[serde(default)]
    pub delta_range: Option<[f64; 2]>,
    /// Span of the normalized integrator state `x = x_int/sqrt(ki*Ug)`.
    #[serde(default = "RoaGridSpec::default_x_range")]
    pub x_range: [f64; 2],
    #[serde(default = "RoaGridSpec::default_resolution")]
    pub resolution: usize,
    #[serde(default = "RoaGridSpec::default_horizon")]
    pub horizon: f64,
    #[serde(default = "RoaGridSpec::default_dt")]
    pub dt: f64,
}

impl RoaGridSpec {
    fn default_x_range() -> [f64; 2] {
        [-3.0, 3.0]
    }
    fn default_resolution() -> usize {
        101
    }
    fn default_horizon() -> f64 {
        2.0
    }
    fn default_dt() -> f64 {
        1e-4
    }

    pub fn validate(&self) -> Result<()> {
        if let Some([lo, hi]) = self.delta_range {
            ensure(lo < hi, "roa.delta_range", format!("needs lo < hi, got [{lo}, {hi}]"))?;
        }
        let [lo, hi] = self.x_range;
        ensure(lo < hi, "roa.x_range", format!("needs lo < hi, got [{lo}, {hi}]"))?;
        ensure(self.resolution >= 3, "roa.resolution", format!("must be >= 3, got {}", self.resolution))?;
        ensure(self.horizon > 0.0, "roa.horizon", format!("must be > 0, got {}", self.horizon))?;
        ensure(self.dt > 0.0, "roa.dt", format!("must be > 0, got {}", self.dt))
    }
}

impl Default for RoaGridSpec {
    fn default() -> Self {
        Self {
            delta_range: None,
            x_range: Self::default_x_range(),
            resolution: Self::default_resolution(),
            horizon: Self::default_horizon(),
            dt: Self::default_dt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Converged,
    /// Includes runs that neither settled nor left within the horizon.
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoaPoint {
    pub delta: f64,
    /// Normalized integrator state.
    pub x: f64,
    pub x_int: f64,
    pub fate: Fate,
}

impl RoaPoint {
    pub fn state(&self) -> PllState {
        PllState::new(self.delta, self.x_int)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoaMap {
    pub spec: RoaGridSpec,
    pub delta_s: f64,
    /// Row-major: `x` outer, `delta` inner.
    pub points: Vec<RoaPoint>,
}

/// Fate of the autonomous post-fault system started at `state`. Converged
/// means holding the SEP ball itself (no 2π replica) for the settle dwell.
pub fn post_fault_fate(
    state: PllState,
    stage: &StageParams,
    inj: &CurrentInjection,
    pll: &PllParams,
    delta_s: f64,
    dt: f64,
    horizon: f64,
) -> Result<Fate> {
    let n = (horizon / dt).round() as usize;
    let dwell_steps = (SETTLE_DWELL / dt - 1e-9).ceil() as usize;
    let mut s = state;
    let mut held = 0usize;
    let runaway = 3.0 * std::f64::consts::PI;
    for k in 0..=n {
        let rate = pll_rhs(&s, stage, inj, pll)?;
        if (s.delta - delta_s).abs() < SETTLE_ANGLE_TOL && rate.delta_dot.abs() < SETTLE_RATE_TOL {
            if held >= dwell_steps {
                return Ok(Fate::Converged);
            }
            held += 1;
        } else {
            held = 0;
        }
        if (s.delta - delta_s).abs() > runaway || !s.is_finite() || k == n {
            break;
        }
        s = rk4_step(&s, dt, |z| pll_rhs(z, stage, inj, pll))?;
    }
    Ok(Fate::Diverged)
}

fn linspace(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

/// Brute-force basin map of the post-fault SEP.
pub fn roa_grid(stage: &StageParams, inj: &CurrentInjection, pll: &PllParams, spec: &RoaGridSpec) -> Result<RoaMap> {
    spec.validate()?;
    loop_denominator(stage, inj, pll)?;
    let eq = equilibria(stage, inj).ok_or(Error::NoEquilibrium {
        u0: crate::model::voltage_offset(stage, inj).abs(),
        ug: stage.ug,
    })?;
    let delta_s = eq.delta_s();
    let [d_lo, d_hi] = spec.delta_range.unwrap_or_else(|| {
        let (lo, hi) = angle_window(delta_s);
        [lo, hi]
    });
    let [x_lo, x_hi] = spec.x_range;
    let n = spec.resolution;
    let scale = (pll.ki * stage.ug).sqrt();
    let points = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let delta = linspace(d_lo, d_hi, n, idx % n);
            let x = linspace(x_lo, x_hi, n, idx / n);
            let x_int = x * scale;
            let fate = post_fault_fate(PllState::new(delta, x_int), stage, inj, pll, delta_s, spec.dt, spec.horizon)?;
            Ok(RoaPoint { delta, x, x_int, fate })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RoaMap {
        spec: *spec,
        delta_s,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservativenessReport {
    pub n_points: usize,
    pub n_converged: usize,
    /// Points with `zeta > 0` inside the angle window.
    pub n_certified: usize,
    pub n_certified_diverged: usize,
    pub n_uncertified_converged: usize,
    /// Share of the simulated basin the index fails to certify.
    pub fraction_conservative: f64,
    #[serde(skip)]
    pub violations: Vec<PllState>,
}

impl ConservativenessReport {
    pub fn passed(&self) -> bool {
        self.n_certified_diverged == 0
    }
}

/// Cross-tabulation of index certificates against simulated fates.
pub fn tabulate(map: &RoaMap, p: &LyapunovParams) -> ConservativenessReport {
    let mut r = ConservativenessReport {
        n_points: map.points.len(),
        n_converged: 0,
        n_certified: 0,
        n_certified_diverged: 0,
        n_uncertified_converged: 0,
        fraction_conservative: 0.0,
        violations: Vec::new(),
    };
    for pt in &map.points {
        let certified = stability_index(&pt.state(), p).certified();
        let converged = pt.fate == Fate::Converged;
        r.n_converged += usize::from(converged);
        r.n_certified += usize::from(certified);
        match (certified, converged) {
            (true, false) => {
                r.n_certified_diverged += 1;
                r.violations.push(pt.state());
            }
            (false, true) => r.n_uncertified_converged += 1,
            _ => {}
        }
    }
    if r.n_converged > 0 {
        r.fraction_conservative = r.n_uncertified_converged as f64 / r.n_converged as f64;
    }
    r
}

/// Like [`tabulate`], but any certified point that fails to converge is an error.
pub fn conservativeness_audit(map: &RoaMap, p: &LyapunovParams) -> Result<ConservativenessReport> {
    let r = tabulate(map, p);
    if r.passed() {
        Ok(r)
    } else {
        Err(Error::CertificationViolation { states: r.violations })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub verdict: Verdict,
    pub min_zeta: f64,
    /// Index at the first post-fault sample.
    pub clearing_zeta: f64,
    /// Index at the last sample.
    pub final_zeta: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSuite {
    pub cases: Vec<CaseResult>,
    /// Case names by decreasing final index.
    pub ranking: Vec<String>,
}

impl CaseSuite {
    pub fn get(&self, name: &str) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.name == name)
    }

    /// Whether the final index strictly decreases along `names`.
    pub fn strictly_ordered(&self, names: &[&str]) -> bool {
        let z: Option<Vec<f64>> = names.iter().map(|n| self.get(n).map(|c| c.final_zeta)).collect();
        z.is_some_and(|z| z.windows(2).all(|w| w[0] > w[1]))
    }
}

pub fn run_case(name: &str, scenario: &Scenario) -> Result<CaseResult> {
    let (traj, verdict) = simulate(scenario)?;
    let post = postfault_stage(&scenario.net)?;
    let traj = index_series(traj, &post, &scenario.post_injection()?, &scenario.pll)?;
    let zeta = |i: usize| traj.samples[i].zeta.expect("index filled");
    let min_zeta = traj
        .samples
        .iter()
        .filter_map(|s| s.zeta)
        .fold(f64::INFINITY, f64::min);
    Ok(CaseResult {
        name: name.to_owned(),
        verdict,
        min_zeta,
        clearing_zeta: zeta(traj.clearing_index()),
        final_zeta: zeta(traj.samples.len() - 1),
        trajectory: traj,
    })
}

pub fn case_suite(cases: &[(String, Scenario)]) -> Result<CaseSuite> {
    let cases = cases
        .par_iter()
        .map(|(name, s)| run_case(name, s))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<&CaseResult> = cases.iter().collect();
    order.sort_by(|a, b| b.final_zeta.total_cmp(&a.final_zeta).then_with(|| a.name.cmp(&b.name)));
    let ranking = order.iter().map(|c| c.name.clone()).collect();
    Ok(CaseSuite { cases, ranking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{lf_params, LyapunovMode};
    use std::f64::consts::PI;

    fn setup() -> (StageParams, CurrentInjection, PllParams) {
        (
            StageParams::new(1.0, 0.0134, 0.209).unwrap(),
            CurrentInjection::new(1.0, 0.0),
            PllParams::new(40.0, 1600.0, 100.0 * PI).unwrap(),
        )
    }

    #[test]
    fn sep_converges_and_outward_uep_diverges() {
        let (s, i, p) = setup();
        let eq = equilibria(&s, &i).unwrap();
        let ds = eq.delta_s();
        let sep = post_fault_fate(eq.sep, &s, &i, &p, ds, 1e-4, 2.0).unwrap();
        assert_eq!(sep, Fate::Converged);
        let x_int = 0.5 * (p.ki * s.ug).sqrt();
        let out = post_fault_fate(PllState::new(eq.delta_cr() + 0.1, x_int), &s, &i, &p, ds, 1e-4, 2.0).unwrap();
        assert_eq!(out, Fate::Diverged);
    }

    #[test]
    fn grid_spec_validation() {
        let bad = RoaGridSpec {
            resolution: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RoaGridSpec {
            x_range: [1.0, 1.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn degenerate_grid_at_sep() {
        let (s, i, p) = setup();
        let ds = equilibria(&s, &i).unwrap().delta_s();
        let spec = RoaGridSpec {
            delta_range: Some([ds - 1e-12, ds + 1e-12]),
            x_range: [-1e-12, 1e-12],
            resolution: 3,
            ..Default::default()
        };
        let map = roa_grid(&s, &i, &p, &spec).unwrap();
        let lp = lf_params(&s, &i, &p, LyapunovMode::Reduced).unwrap();
        let r = conservativeness_audit(&map, &lp).unwrap();
        assert_eq!(r.n_certified, 9);
        assert_eq!(r.n_converged, 9);
        assert_eq!(r.n_uncertified_converged, 0);
    }

    #[test]
    fn audit_flags_forged_violation() {
        let (s, i, p) = setup();
        let ds = equilibria(&s, &i).unwrap().delta_s();
        let lp = lf_params(&s, &i, &p, LyapunovMode::Reduced).unwrap();
        let map = RoaMap {
            spec: RoaGridSpec::default(),
            delta_s: ds,
            points: vec![RoaPoint {
                delta: ds,
                x: 0.0,
                x_int: 0.0,
                fate: Fate::Diverged,
            }],
        };
        match conservativeness_audit(&map, &lp) {
            Err(Error::CertificationViolation { states }) => assert_eq!(states.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coarse_grid_is_sound_and_conservative() {
        let (s, i, p) = setup();
        let spec = RoaGridSpec {
            resolution: 15,
            ..Default::default()
        };
        let map = roa_grid(&s, &i, &p, &spec).unwrap();
        assert_eq!(map.points.len(), 225);
        let lp = lf_params(&s, &i, &p, LyapunovMode::Reduced).unwrap();
        let r = conservativeness_audit(&map, &lp).unwrap();
        assert!(r.n_certified > 0);
        assert!(r.n_uncertified_converged > 0);
        assert!(r.fraction_conservative > 0.0 && r.fraction_conservative < 1.0);
    }
}
