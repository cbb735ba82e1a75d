//! Per-unit aggregation of the WTG-to-MMC path and the positive-sequence
//! fault divider that produces the pre-fault, fault-on and post-fault stages.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::StageParams;

/// Transformer nameplate data. `units` identical transformers in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerData {
    pub rating_mva: f64,
    pub uk_percent: f64,
    #[serde(default = "one")]
    pub units: u32,
}

/// A lumped ohmic element at a given nominal voltage. Shunt susceptance is
/// accepted for completeness and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LumpedImpedance {
    pub kv: f64,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_ohm: Option<f64>,
}

/// Sending cable with per-km data; `circuits` identical circuits in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CableData {
    pub kv: f64,
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
    pub length_km: f64,
    pub circuits: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_mohm_km: Option<f64>,
}

/// Physical description of the aggregated OWF connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalNetwork {
    pub wtg_transformer: TransformerData,
    pub feeder: LumpedImpedance,
    pub owf_transformer: TransformerData,
    pub sending_cable: CableData,
}

fn one() -> u32 {
    1
}

/// The four series segments between the aggregated WTG and the MMC, p.u. on
/// the system base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkSegments {
    pub z_wtg_tr: Complex64,
    pub z_feeder: Complex64,
    pub z_owf_tr: Complex64,
    /// One circuit of the sending cable.
    pub z_cable_single: Complex64,
    pub n_circuits: u8,
}

impl NetworkSegments {
    pub fn new(
        z_wtg_tr: Complex64,
        z_feeder: Complex64,
        z_owf_tr: Complex64,
        z_cable_single: Complex64,
        n_circuits: u8,
    ) -> Result<Self> {
        for (field, z) in [
            ("z_wtg_tr", z_wtg_tr),
            ("z_feeder", z_feeder),
            ("z_owf_tr", z_owf_tr),
            ("z_cable_single", z_cable_single),
        ] {
            ensure(
                z.re >= 0.0 && z.im >= 0.0 && z.re.is_finite() && z.im.is_finite(),
                field,
                format!("resistance and reactance must be >= 0, got {z}"),
            )?;
        }
        ensure(
            matches!(n_circuits, 1 | 2),
            "n_circuits",
            format!("must be 1 or 2, got {n_circuits}"),
        )?;
        Ok(Self {
            z_wtg_tr,
            z_feeder,
            z_owf_tr,
            z_cable_single,
            n_circuits,
        })
    }

    fn upstream(&self) -> Complex64 {
        self.z_wtg_tr + self.z_feeder + self.z_owf_tr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    SinglePhaseGround,
    Interphase,
    TwoPhaseGround,
    ThreePhaseGround,
}

impl FaultType {
    pub const ALL: [FaultType; 4] = [
        FaultType::SinglePhaseGround,
        FaultType::Interphase,
        FaultType::TwoPhaseGround,
        FaultType::ThreePhaseGround,
    ];

    /// Positive-sequence fault-point voltage each preset is calibrated to,
    /// with the fault at the MMC terminal.
    pub fn preset_residual_voltage(self) -> f64 {
        match self {
            FaultType::SinglePhaseGround => 0.57,
            FaultType::Interphase => 0.50,
            FaultType::TwoPhaseGround => 0.01,
            FaultType::ThreePhaseGround => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultSpec {
    pub fault_type: FaultType,
    /// Position along the faulted circuit from the OWF end; 1 is at the MMC.
    pub location: f64,
    /// Negative/zero-sequence equivalent, treated as a pure reactance, p.u.
    pub z_eq: f64,
    pub t_fault: f64,
    pub fct: f64,
}

impl FaultSpec {
    pub fn new(fault_type: FaultType, location: f64, z_eq: f64, t_fault: f64, fct: f64) -> Result<Self> {
        ensure(
            (0.0..=1.0).contains(&location),
            "location",
            format!("must lie in [0, 1], got {location}"),
        )?;
        ensure(z_eq.is_finite() && z_eq >= 0.0, "z_eq", format!("must be >= 0, got {z_eq}"))?;
        ensure(t_fault.is_finite() && t_fault >= 0.0, "t_fault", format!("must be >= 0, got {t_fault}"))?;
        ensure(fct.is_finite() && fct > 0.0, "fct", format!("must be > 0, got {fct}"))?;
        Ok(Self {
            fault_type,
            location,
            z_eq,
            t_fault,
            fct,
        })
    }

    pub fn t_clear(&self) -> f64 {
        self.t_fault + self.fct
    }
}

/// Positive-sequence behaviour of the grid-forming MMC under fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmcSource {
    /// Internal positive-sequence voltage cap, p.u.
    pub u_mmc_pos: f64,
    /// Current limit, p.u.
    pub i_lim: f64,
}

impl MmcSource {
    pub fn new(u_mmc_pos: f64, i_lim: f64) -> Result<Self> {
        ensure(
            (0.0..=1.1).contains(&u_mmc_pos),
            "u_mmc_pos",
            format!("must lie in [0, 1.1], got {u_mmc_pos}"),
        )?;
        ensure(i_lim.is_finite() && i_lim > 0.0, "i_lim", format!("must be > 0, got {i_lim}"))?;
        Ok(Self { u_mmc_pos, i_lim })
    }
}

/// Re-expresses a per-unit impedance given on `from_mva` on `to_mva`.
pub fn rebase_impedance(z_pu: f64, from_mva: f64, to_mva: f64) -> f64 {
    z_pu * to_mva / from_mva
}

/// `kV² / MVA`.
pub fn base_impedance(kv: f64, mva: f64) -> f64 {
    kv * kv / mva
}

fn transformer_pu(t: &TransformerData, base_mva: f64) -> Result<Complex64> {
    ensure(t.rating_mva > 0.0, "rating_mva", format!("must be > 0, got {}", t.rating_mva))?;
    ensure(t.uk_percent >= 0.0, "uk_percent", format!("must be >= 0, got {}", t.uk_percent))?;
    ensure(t.units >= 1, "units", "must be >= 1")?;
    let bank_mva = t.rating_mva * f64::from(t.units);
    Ok(Complex64::new(0.0, rebase_impedance(t.uk_percent / 100.0, bank_mva, base_mva)))
}

/// Converts nameplate and ohmic data to per-unit segments on `base_mva`. Each
/// ohmic element uses its own nominal voltage as the voltage base.
pub fn per_unit_network(physical: &PhysicalNetwork, base_mva: f64) -> Result<NetworkSegments> {
    if !(base_mva > 0.0 && base_mva.is_finite()) {
        return Err(Error::NonPositiveBase("base_mva"));
    }
    if physical.feeder.kv.is_nan() || physical.feeder.kv <= 0.0 {
        return Err(Error::NonPositiveBase("feeder.kv"));
    }
    if physical.sending_cable.kv.is_nan() || physical.sending_cable.kv <= 0.0 {
        return Err(Error::NonPositiveBase("sending_cable.kv"));
    }

    let f = &physical.feeder;
    let z_feeder = Complex64::new(f.r_ohm, f.x_ohm) / base_impedance(f.kv, base_mva);

    let c = &physical.sending_cable;
    ensure(c.length_km >= 0.0, "length_km", format!("must be >= 0, got {}", c.length_km))?;
    let z_cable = Complex64::new(c.r_ohm_per_km * c.length_km, c.x_ohm_per_km * c.length_km)
        / base_impedance(c.kv, base_mva);

    NetworkSegments::new(
        transformer_pu(&physical.wtg_transformer, base_mva)?,
        z_feeder,
        transformer_pu(&physical.owf_transformer, base_mva)?,
        z_cable,
        c.circuits,
    )
}

/// Healthy network: all circuits in service and the source at 1 p.u.
pub fn prefault_stage(net: &NetworkSegments) -> Result<StageParams> {
    let z = net.upstream() + net.z_cable_single / f64::from(net.n_circuits);
    StageParams::new(1.0, z.re, z.im)
}

/// Positive-sequence fault-point voltage and the MMC current it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultDivider {
    /// Impedance between the WTG and the fault point.
    pub z_wtg_side: Complex64,
    /// Impedance between the MMC and the fault point.
    pub z_mmc_side: Complex64,
    pub residual_voltage: f64,
    pub current_limited: bool,
}

/// Fault-point voltage `U_mmc*|Zeq| / |Zg2 + Zeq|`, replaced by `I_lim*|Zeq|`
/// when the MMC would exceed its current limit. The healthy parallel circuit
/// and the WTG's own contribution are left out.
pub fn fault_divider(net: &NetworkSegments, mmc: &MmcSource, location: f64, z_eq: f64) -> FaultDivider {
    let z_wtg_side = net.upstream() + net.z_cable_single * location;
    let z_mmc_side = net.z_cable_single * (1.0 - location);
    let loop_z = (z_mmc_side + Complex64::new(0.0, z_eq)).norm();
    let limited = loop_z == 0.0 || mmc.u_mmc_pos / loop_z > mmc.i_lim;
    let residual_voltage = if limited {
        mmc.i_lim * z_eq
    } else {
        mmc.u_mmc_pos * z_eq / loop_z
    };
    FaultDivider {
        z_wtg_side,
        z_mmc_side,
        residual_voltage,
        current_limited: limited,
    }
}

pub fn fault_stage(net: &NetworkSegments, mmc: &MmcSource, fault: &FaultSpec) -> Result<StageParams> {
    let d = fault_divider(net, mmc, fault.location, fault.z_eq);
    StageParams::new(d.residual_voltage, d.z_wtg_side.re, d.z_wtg_side.im)
}

/// The faulted circuit is removed; the remaining circuits carry the power.
pub fn postfault_stage(net: &NetworkSegments) -> Result<StageParams> {
    if net.n_circuits < 2 && net.z_cable_single != Complex64::new(0.0, 0.0) {
        return Err(Error::NoRemainingCircuit);
    }
    let remaining = f64::from(net.n_circuits.saturating_sub(1).max(1));
    let z = net.upstream() + net.z_cable_single / remaining;
    StageParams::new(1.0, z.re, z.im)
}

/// Finds the `z_eq` that puts the fault-point voltage at `target` for a fault
/// at `location`. The divider is monotone in `z_eq`, so bisection suffices.
pub fn calibrate_z_eq(net: &NetworkSegments, mmc: &MmcSource, location: f64, target: f64) -> Result<f64> {
    ensure(
        target >= 0.0 && target < mmc.u_mmc_pos,
        "target",
        format!("must lie in [0, u_mmc_pos), got {target}"),
    )?;
    if target == 0.0 {
        return Ok(0.0);
    }
    let voltage = |z: f64| fault_divider(net, mmc, location, z).residual_voltage;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while voltage(hi) < target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::InvalidParameter {
                field: "target",
                reason: "unreachable with this MMC source".into(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if voltage(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `z_eq` preset for a fault type, calibrated at the MMC terminal.
pub fn preset_z_eq(net: &NetworkSegments, mmc: &MmcSource, fault_type: FaultType) -> Result<f64> {
    calibrate_z_eq(net, mmc, 1.0, fault_type.preset_residual_voltage())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn reference_network() -> PhysicalNetwork {
        PhysicalNetwork {
            wtg_transformer: TransformerData {
                rating_mva: 4.5,
                uk_percent: 7.0,
                units: 100,
            },
            feeder: LumpedImpedance {
                kv: 35.0,
                r_ohm: 0.038,
                x_ohm: 0.06,
                b_ohm: Some(172.0),
            },
            owf_transformer: TransformerData {
                rating_mva: 480.0,
                uk_percent: 10.5,
                units: 1,
            },
            sending_cable: CableData {
                kv: 220.0,
                r_ohm_per_km: 0.02,
                x_ohm_per_km: 0.4,
                length_km: 12.0,
                circuits: 2,
                b_mohm_km: Some(0.16),
            },
        }
    }

    fn mmc() -> MmcSource {
        MmcSource::new(1.0, 1.1).unwrap()
    }

    #[test]
    fn per_unit_examples() {
        let net = per_unit_network(&reference_network(), 400.0).unwrap();
        assert_abs_diff_eq!(net.z_owf_tr.im, 0.0875, epsilon = 1e-12);
        assert_abs_diff_eq!(net.z_cable_single.im, 4.8 / 121.0, epsilon = 1e-12);
        assert_abs_diff_eq!(net.z_cable_single.im, 0.03967, epsilon = 1e-5);

        let mut short = reference_network();
        short.sending_cable.length_km = 0.0;
        let net = per_unit_network(&short, 400.0).unwrap();
        assert_eq!(net.z_cable_single, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn non_positive_base_rejected() {
        assert_eq!(per_unit_network(&reference_network(), 0.0), Err(Error::NonPositiveBase("base_mva")));
        let mut p = reference_network();
        p.sending_cable.kv = 0.0;
        assert!(matches!(per_unit_network(&p, 400.0), Err(Error::NonPositiveBase(_))));
    }

    #[test]
    fn rebase_round_trip() {
        for z in [0.07, 0.105, 0.3333] {
            let there = rebase_impedance(z, 480.0, 400.0);
            assert_abs_diff_eq!(rebase_impedance(there, 400.0, 480.0), z, epsilon = 1e-12);
        }
    }

    #[test]
    fn prefault_aggregate_is_near_0_2() {
        let net = per_unit_network(&reference_network(), 400.0).unwrap();
        let pre = prefault_stage(&net).unwrap();
        assert!((0.18..=0.2).contains(&pre.xg), "xg = {}", pre.xg);
    }

    #[test]
    fn zero_network_rejected_by_stage_invariant() {
        let z = Complex64::new(0.0, 0.0);
        let net = NetworkSegments::new(z, z, z, z, 2).unwrap();
        assert!(prefault_stage(&net).is_err());
    }

    #[test]
    fn single_circuit_doubles_cable_term() {
        let net2 = per_unit_network(&reference_network(), 400.0).unwrap();
        let mut p = reference_network();
        p.sending_cable.circuits = 1;
        let net1 = per_unit_network(&p, 400.0).unwrap();
        let up = net2.upstream().im;
        let (x1, x2) = (prefault_stage(&net1).unwrap().xg, prefault_stage(&net2).unwrap().xg);
        assert_abs_diff_eq!(x1 - up, 2.0 * (x2 - up), epsilon = 1e-12);
    }

    #[test]
    fn postfault_cable_term_doubles() {
        let net = per_unit_network(&reference_network(), 400.0).unwrap();
        let pre = prefault_stage(&net).unwrap();
        let post = postfault_stage(&net).unwrap();
        let up = net.upstream().im;
        assert_abs_diff_eq!(pre.xg - up, 0.0198, epsilon = 1e-4);
        assert_abs_diff_eq!(post.xg - up, 0.0397, epsilon = 1e-4);
        assert_eq!(post.ug, 1.0);
        assert!(post.xg * 1.0 > pre.xg * 1.0);

        let mut short = reference_network();
        short.sending_cable.length_km = 0.0;
        let net = per_unit_network(&short, 400.0).unwrap();
        assert_eq!(prefault_stage(&net).unwrap(), postfault_stage(&net).unwrap());
    }

    #[test]
    fn presets_hit_calibration_targets() {
        let net = per_unit_network(&reference_network(), 400.0).unwrap();
        for ft in FaultType::ALL {
            let z = preset_z_eq(&net, &mmc(), ft).unwrap();
            let f = FaultSpec::new(ft, 1.0, z, 1.3, 0.2).unwrap();
            let s = fault_stage(&net, &mmc(), &f).unwrap();
            assert_abs_diff_eq!(s.ug, ft.preset_residual_voltage(), epsilon = 1e-9);
        }
        assert_eq!(preset_z_eq(&net, &mmc(), FaultType::ThreePhaseGround).unwrap(), 0.0);
    }

    #[test]
    fn fault_near_mmc_maximizes_wtg_side_impedance() {
        let net = per_unit_network(&reference_network(), 400.0).unwrap();
        let at = |loc| fault_divider(&net, &mmc(), loc, 0.0).z_wtg_side.im;
        assert!(at(1.0) > at(0.5) && at(0.5) > at(0.0));
        let s = fault_stage(&net, &mmc(), &FaultSpec::new(FaultType::ThreePhaseGround, 1.0, 0.0, 1.0, 0.1).unwrap())
            .unwrap();
        assert_eq!(s.ug, 0.0);
    }

    #[test]
    fn divider_monotone_in_z_eq_and_location() {
        let net = per_unit_network(&reference_network(), 400.0).unwrap();
        let m = MmcSource::new(1.0, 1.1).unwrap();
        let mut prev = -1.0;
        for i in 0..=200 {
            let z = i as f64 * 0.01;
            let v = fault_divider(&net, &m, 0.6, z).residual_voltage;
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        // Moving the fault toward the MMC shortens the MMC-side path.
        for z in [0.0, 0.01, 0.2, 0.5, 2.0] {
            let mut prev = -1.0;
            for i in 0..=100 {
                let v = fault_divider(&net, &m, i as f64 / 100.0, z).residual_voltage;
                assert!(v >= prev - 1e-15, "z_eq {z}");
                prev = v;
            }
        }
    }

    #[test]
    fn postfault_needs_a_remaining_circuit() {
        let mut p = reference_network();
        p.sending_cable.circuits = 1;
        let net = per_unit_network(&p, 400.0).unwrap();
        assert_eq!(postfault_stage(&net), Err(Error::NoRemainingCircuit));
    }

    #[test]
    fn fault_spec_validation() {
        assert!(FaultSpec::new(FaultType::Interphase, 1.2, 0.0, 1.0, 0.1).is_err());
        assert!(FaultSpec::new(FaultType::Interphase, 1.0, -0.1, 1.0, 0.1).is_err());
        assert!(FaultSpec::new(FaultType::Interphase, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(MmcSource::new(1.2, 1.0).is_err());
    }
}
