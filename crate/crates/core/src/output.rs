//! Plot-ready CSV and deterministic JSON writers.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;

use crate::analysis::{Fate, RoaMap};
use crate::lyapunov::{stability_index, LyapunovParams};
use crate::sim::Trajectory;

pub const TRAJECTORY_HEADER: &str = "t,delta,x_int,omega_pll,usq,us_mag,isd,isq,stage,zeta,in_domain";
pub const ROA_HEADER: &str = "delta,x,zeta,fate";

/// Nine significant digits.
fn num(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else {
        write!(out, "{v:.8e}").expect("writing to a String");
    }
}

pub fn trajectory_csv(traj: &Trajectory, stride: usize) -> String {
    let stride = stride.max(1);
    let last = traj.samples.len().saturating_sub(1);
    let mut out = String::with_capacity(160 * (traj.samples.len() / stride + 2));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (i, s) in traj.samples.iter().enumerate() {
        if i % stride != 0 && i != last {
            continue;
        }
        for v in [s.t, s.delta, s.x_int, s.omega_pll, s.usq, s.us_mag, s.isd, s.isq] {
            num(&mut out, v);
            out.push(',');
        }
        out.push_str(s.stage.as_str());
        out.push(',');
        if let Some(z) = s.zeta {
            num(&mut out, z);
        }
        out.push(',');
        if let Some(d) = s.in_domain {
            out.push_str(if d { "true" } else { "false" });
        }
        out.push('\n');
    }
    out
}

pub fn roa_csv(map: &RoaMap, p: &LyapunovParams) -> String {
    let mut out = String::with_capacity(64 * (map.points.len() + 1));
    out.push_str(ROA_HEADER);
    out.push('\n');
    for pt in &map.points {
        num(&mut out, pt.delta);
        out.push(',');
        num(&mut out, pt.x);
        out.push(',');
        num(&mut out, stability_index(&pt.state(), p).zeta);
        out.push(',');
        out.push_str(match pt.fate {
            Fate::Converged => "converged",
            Fate::Diverged => "diverged",
        });
        out.push('\n');
    }
    out
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_all(mut w: impl Write, text: &str) -> io::Result<()> {
    w.write_all(text.as_bytes())?;
    w.flush()
}
