//! Square-law nMOS model.
//!
//! The cell uses nMOS devices only; the foundry PDK is replaced by a
//! level-1 square law with symmetric source/drain swap and zero
//! channel-length modulation.

use serde::{Deserialize, Serialize};

/// Square-law transistor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosParams {
    /// Threshold voltage (V).
    pub vth_v: f64,
    /// Transconductance factor k (A/V^2).
    pub k_a_per_v2: f64,
    /// Off-state leakage (A).
    pub ioff_a: f64,
}

impl MosParams {
    pub fn new(vth_v: f64, k_a_per_v2: f64) -> Self {
        MosParams {
            vth_v,
            k_a_per_v2,
            ioff_a: 0.0,
        }
    }

    /// Shipped default: representative 0.18 um-class values.
    pub fn default_nmos() -> Self {
        MosParams::new(0.5, 2e-4)
    }

    /// Apply corner multipliers.
    pub fn scaled(&self, vth_scale: f64, k_scale: f64) -> Self {
        MosParams {
            vth_v: self.vth_v * vth_scale,
            k_a_per_v2: self.k_a_per_v2 * k_scale,
            ioff_a: self.ioff_a,
        }
    }

    pub fn valid(&self) -> bool {
        self.vth_v > 0.0 && self.k_a_per_v2 > 0.0 && self.ioff_a >= 0.0
    }
}

/// Drain current for terminal voltages expressed as (vgs, vds).
/// Cutoff below vth (plus `ioff`), square-law triode/saturation above,
/// symmetric swap for vds < 0.
pub fn mos_current(p: &MosParams, vgs: f64, vds: f64) -> f64 {
    if vds < 0.0 {
        // Swap source and drain: gate-to-new-source voltage is vgs - vds.
        return -mos_current(p, vgs - vds, -vds);
    }
    let vov = vgs - p.vth_v;
    if vov <= 0.0 {
        return if vds > 0.0 { p.ioff_a } else { 0.0 };
    }
    if vds >= vov {
        0.5 * p.k_a_per_v2 * vov * vov
    } else {
        p.k_a_per_v2 * (vov * vds - 0.5 * vds * vds)
    }
}

/// Drain current and its partial derivatives with respect to the three
/// terminal voltages, for Newton assembly. Current is positive drain -> source.
pub fn mos_eval(p: &MosParams, vd: f64, vg: f64, vs: f64) -> (f64, f64, f64, f64) {
    if vd >= vs {
        let (i, gm, gds) = ids_normal(p, vg - vs, vd - vs);
        (i, gds, gm, -gm - gds)
    } else {
        // Swapped mode: treat the nominal drain as the source.
        let (i, gm, gds) = ids_normal(p, vg - vd, vs - vd);
        (-i, gm + gds, -gm, -gds)
    }
}

fn ids_normal(p: &MosParams, vgs: f64, vds: f64) -> (f64, f64, f64) {
    let vov = vgs - p.vth_v;
    if vov <= 0.0 {
        return (if vds > 0.0 { p.ioff_a } else { 0.0 }, 0.0, 0.0);
    }
    if vds >= vov {
        let i = 0.5 * p.k_a_per_v2 * vov * vov;
        (i, p.k_a_per_v2 * vov, 0.0)
    } else {
        let i = p.k_a_per_v2 * (vov * vds - 0.5 * vds * vds);
        (i, p.k_a_per_v2 * vds, p.k_a_per_v2 * (vov - vds))
    }
}

/// Current through the series Q2/Q3 stack (the double-gated pulldown), given
/// drain, both gates, and source voltages. Solves the shared internal node by
/// bisection, then returns the current and its partials via the chain rule.
///
/// Returns (i_ds, d/d_vd, d/d_g_upper, d/d_g_lower, d/d_vs).
pub fn double_gate_eval(
    upper: &MosParams,
    lower: &MosParams,
    vd: f64,
    vg_upper: f64,
    vg_lower: f64,
    vs: f64,
) -> (f64, f64, f64, f64, f64) {
    if vd < vs {
        // Mirror the whole stack.
        let (i, dd, dgu, dgl, ds) = double_gate_eval(lower, upper, vs, vg_lower, vg_upper, vd);
        return (-i, -ds, -dgl, -dgu, -dd);
    }
    // Quick cutoff: if either device cannot conduct at any internal voltage,
    // the stack is off.
    if vg_upper - vs <= upper.vth_v && upper.ioff_a == 0.0 {
        return (0.0, 0.0, 0.0, 0.0, 0.0);
    }
    if vg_lower - vs <= lower.vth_v && lower.ioff_a == 0.0 {
        return (0.0, 0.0, 0.0, 0.0, 0.0);
    }

    // Internal node vx in [vs, vd]; upper current falls with vx, lower rises.
    let f = |vx: f64| {
        let (iu, ..) = mos_eval(upper, vd, vg_upper, vx);
        let (il, ..) = mos_eval(lower, vx, vg_lower, vs);
        iu - il
    };
    let (mut lo, mut hi) = (vs, vd);
    if f(lo) <= 0.0 {
        // No conduction margin on the upper device.
        let (il, d_dd, d_dg, d_ds) = mos_eval(lower, lo, vg_lower, vs);
        let _ = (il, d_dd, d_dg, d_ds);
        return (0.0, 0.0, 0.0, 0.0, 0.0);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let vx = 0.5 * (lo + hi);

    let (iu, du_dd, du_dg, du_dx) = mos_eval(upper, vd, vg_upper, vx);
    let (il, dl_dx, dl_dg, dl_ds) = mos_eval(lower, vx, vg_lower, vs);
    let i = 0.5 * (iu + il);

    // Implicit differentiation of iu(vd, vg_u, vx) = il(vx, vg_l, vs).
    let den = dl_dx - du_dx;
    if den.abs() < 1e-18 {
        return (i, 0.0, 0.0, 0.0, 0.0);
    }
    let dvx_dd = du_dd / den;
    let dvx_dgu = du_dg / den;
    let dvx_dgl = -dl_dg / den;
    let dvx_ds = -dl_ds / den;

    let di_dd = du_dd + du_dx * dvx_dd;
    let di_dgu = du_dg + du_dx * dvx_dgu;
    let di_dgl = du_dx * dvx_dgl;
    let di_ds = du_dx * dvx_ds;
    (i, di_dd, di_dgu, di_dgl, di_ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_returns_leakage() {
        let p = MosParams::new(0.5, 2e-4);
        assert_eq!(mos_current(&p, 0.4, 1.0), 0.0);
        let leaky = MosParams {
            ioff_a: 1e-12,
            ..p
        };
        assert_eq!(mos_current(&leaky, 0.4, 1.0), 1e-12);
    }

    #[test]
    fn saturation_square_law_value() {
        // vth 0.5, k 2e-4, vgs = vds = 1.8: 0.5 * 2e-4 * 1.3^2 = 169 uA.
        let p = MosParams::new(0.5, 2e-4);
        let i = mos_current(&p, 1.8, 1.8);
        assert!((i - 0.5 * 2e-4 * 1.3 * 1.3).abs() < 1e-15);
        assert!((i - 169e-6).abs() < 1e-9);
    }

    #[test]
    fn continuous_at_triode_saturation_boundary() {
        let p = MosParams::new(0.5, 2e-4);
        let vov = 0.7;
        let i_sat = mos_current(&p, p.vth_v + vov, vov + 1e-15);
        let i_tri = mos_current(&p, p.vth_v + vov, vov - 1e-15);
        assert!((i_sat - i_tri).abs() < 1e-12);
    }

    #[test]
    fn drain_source_swap_is_antisymmetric() {
        let p = MosParams::new(0.5, 2e-4);
        // Same physical device seen from both sides.
        let (i_fwd, ..) = mos_eval(&p, 1.0, 1.5, 0.2);
        let (i_rev, ..) = mos_eval(&p, 0.2, 1.5, 1.0);
        assert!((i_fwd + i_rev).abs() < 1e-18);
    }

    #[test]
    fn mos_eval_partials_match_finite_differences() {
        let p = MosParams::new(0.5, 2e-4);
        let h = 1e-7;
        for &(vd, vg, vs) in &[
            (1.0, 1.5, 0.0),
            (0.1, 1.5, 0.0),
            (0.0, 1.2, 0.6),
            (1.8, 0.9, 0.3),
        ] {
            let (i, dd, dg, ds) = mos_eval(&p, vd, vg, vs);
            let fd_d = (mos_eval(&p, vd + h, vg, vs).0 - mos_eval(&p, vd - h, vg, vs).0) / (2.0 * h);
            let fd_g = (mos_eval(&p, vd, vg + h, vs).0 - mos_eval(&p, vd, vg - h, vs).0) / (2.0 * h);
            let fd_s = (mos_eval(&p, vd, vg, vs + h).0 - mos_eval(&p, vd, vg, vs - h).0) / (2.0 * h);
            assert!((dd - fd_d).abs() < 1e-9, "at ({vd},{vg},{vs}): i={i}");
            assert!((dg - fd_g).abs() < 1e-9);
            assert!((ds - fd_s).abs() < 1e-9);
        }
    }

    #[test]
    fn double_gate_off_when_either_gate_low() {
        let q = MosParams::new(0.5, 2e-4);
        let (i, ..) = double_gate_eval(&q, &q, 1.18, 0.3, 1.8, 0.0);
        assert_eq!(i, 0.0);
        let (i, ..) = double_gate_eval(&q, &q, 1.18, 1.0, 0.2, 0.0);
        assert_eq!(i, 0.0);
    }

    #[test]
    fn double_gate_current_continuity_at_internal_node() {
        let q = MosParams::new(0.5, 2e-4);
        let (i, ..) = double_gate_eval(&q, &q, 1.18, 0.9, 1.8, 0.0);
        assert!(i > 0.0);
        // The stack current can never exceed either device alone.
        let i_upper_alone = mos_current(&q, 0.9, 1.18);
        let i_lower_alone = mos_current(&q, 1.8, 1.18);
        assert!(i < i_upper_alone && i < i_lower_alone);
    }

    #[test]
    fn double_gate_partials_match_finite_differences() {
        let q = MosParams::new(0.5, 2e-4);
        let h = 1e-6;
        let at = |vd: f64, gu: f64, gl: f64| double_gate_eval(&q, &q, vd, gu, gl, 0.0);
        for &(vd, gu, gl) in &[(1.18, 0.9, 1.8), (0.4, 1.1, 1.8), (1.0, 0.7, 0.9)] {
            let (_, dd, dgu, dgl, _) = at(vd, gu, gl);
            let fd_d = (at(vd + h, gu, gl).0 - at(vd - h, gu, gl).0) / (2.0 * h);
            let fd_gu = (at(vd, gu + h, gl).0 - at(vd, gu - h, gl).0) / (2.0 * h);
            let fd_gl = (at(vd, gu, gl + h).0 - at(vd, gu, gl - h).0) / (2.0 * h);
            assert!((dd - fd_d).abs() < 1e-8, "dd {dd} vs fd {fd_d}");
            assert!((dgu - fd_gu).abs() < 1e-8);
            assert!((dgl - fd_gl).abs() < 1e-8);
        }
    }
}
