//! DC operating point.

use std::collections::BTreeMap;

use super::{newton_solve, source_current, Circuit, ElementKind, NetId, SolverConfig, GND};
use crate::error::{Error, Result};

/// Solve the DC operating point. Capacitors are open; every source net is
/// held at its source value; `fixed_biases` pins further nets by name (and
/// may override source values, which is how initially-charged nets are
/// declared).
///
/// Newton iteration with damping; a scalar bisection fallback covers
/// one-unknown stacks that Newton cannot crack from a cold start.
pub fn dc_operating_point(
    circuit: &Circuit,
    fixed_biases: &BTreeMap<String, f64>,
    cfg: &SolverConfig,
) -> Result<BTreeMap<String, f64>> {
    circuit.validate()?;
    let n_nets = circuit.nets.len();
    let mut v = vec![0.0; n_nets];
    let mut driven = vec![false; n_nets];
    driven[GND] = true;

    for e in &circuit.elements {
        match &e.kind {
            ElementKind::FixedSource { net, volts } => {
                driven[*net] = true;
                v[*net] = *volts;
            }
            ElementKind::PwlSource { net, wf } => {
                driven[*net] = true;
                v[*net] = wf.as_ref().map(|w| w.value_at(0.0)).unwrap_or(0.0);
            }
            _ => {}
        }
    }
    for (name, volts) in fixed_biases {
        let id = circuit
            .net(name)
            .ok_or_else(|| Error::invalid(format!("unknown net '{name}' in fixed biases")))?;
        driven[id] = true;
        v[id] = *volts;
    }

    let unknowns: Vec<NetId> = (0..n_nets).filter(|&k| !driven[k]).collect();
    let mut index_of = vec![None; n_nets];
    for (k, &net) in unknowns.iter().enumerate() {
        index_of[net] = Some(k);
    }

    let newton = newton_solve(circuit, &mut v, None, &unknowns, &index_of, cfg, Some(cfg.dc_residual_tol_a));
    let converged = match newton {
        Ok(out) => out.worst_residual_a <= cfg.dc_residual_tol_a,
        Err(_) => false,
    };
    if !converged {
        if unknowns.len() == 1 {
            bisect_single(circuit, &mut v, unknowns[0], cfg)?;
        } else {
            let (worst_net, worst) = worst_residual(circuit, &v, &unknowns, cfg.gmin_s);
            if worst > cfg.dc_residual_tol_a {
                return Err(Error::DcNoConvergence {
                    net: circuit.net_name(worst_net).to_string(),
                    residual_a: worst,
                    last: named_voltages(circuit, &v).into_iter().collect(),
                });
            }
        }
    }

    // Final KCL check.
    let (worst_net, worst) = worst_residual(circuit, &v, &unknowns, cfg.gmin_s);
    if worst > cfg.dc_residual_tol_a {
        return Err(Error::DcNoConvergence {
            net: circuit.net_name(worst_net).to_string(),
            residual_a: worst,
            last: named_voltages(circuit, &v).into_iter().collect(),
        });
    }

    Ok(named_voltages(circuit, &v))
}

/// Branch current delivered by the source driving `net` at a DC solution.
pub fn dc_source_current(
    circuit: &Circuit,
    solution: &BTreeMap<String, f64>,
    net: &str,
) -> Result<f64> {
    let id = circuit
        .net(net)
        .ok_or_else(|| Error::invalid(format!("unknown net '{net}'")))?;
    let v: Vec<f64> = circuit
        .nets
        .iter()
        .map(|nd| solution.get(&nd.name).copied().unwrap_or(0.0))
        .collect();
    Ok(source_current(circuit, id, &v, None))
}

fn named_voltages(circuit: &Circuit, v: &[f64]) -> BTreeMap<String, f64> {
    circuit
        .nets
        .iter()
        .enumerate()
        .map(|(k, nd)| (nd.name.clone(), v[k]))
        .collect()
}

fn worst_residual(
    circuit: &Circuit,
    v: &[f64],
    unknowns: &[NetId],
    gmin_s: f64,
) -> (NetId, f64) {
    let mut worst = (GND, 0.0f64);
    for &net in unknowns {
        let r = source_current(circuit, net, v, None) + gmin_s * v[net];
        if r.abs() > worst.1 {
            worst = (net, r.abs());
        }
    }
    worst
}

/// Scalar bisection on the KCL residual of the single unknown net.
fn bisect_single(circuit: &Circuit, v: &mut [f64], net: NetId, cfg: &SolverConfig) -> Result<()> {
    let residual_at = |v: &mut [f64], x: f64| -> f64 {
        v[net] = x;
        source_current(circuit, net, v, None) + cfg.gmin_s * x
    };
    let vmax = v.iter().cloned().fold(0.0f64, f64::max) + 2.0;
    let vmin = v.iter().cloned().fold(0.0f64, f64::min) - 2.0;

    // Scan for a sign change, then bisect.
    let scan = 512;
    let mut lo = vmin;
    let mut f_lo = residual_at(v, lo);
    let mut bracket = None;
    for k in 1..=scan {
        let x = vmin + (vmax - vmin) * k as f64 / scan as f64;
        let f = residual_at(v, x);
        if f_lo.signum() != f.signum() {
            bracket = Some((lo, x));
            break;
        }
        lo = x;
        f_lo = f;
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| Error::DcNoConvergence {
        net: circuit.net_name(net).to_string(),
        residual_a: f_lo.abs(),
        last: named_voltages(circuit, v).into_iter().collect(),
    })?;
    let mut f_lo = residual_at(v, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = residual_at(v, mid);
        if f_lo.signum() == f_mid.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    v[net] = 0.5 * (lo + hi);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::mos::MosParams;
    use crate::circuit::{ElementKind, NetRole};
    use crate::device::RramParams;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn equal_divider_splits_supply() {
        let mut c = Circuit::new();
        let top = c.add_net("top", NetRole::Internal);
        let mid = c.add_net("mid", NetRole::Mid);
        c.add_element("v", ElementKind::FixedSource { net: top, volts: 1.8 });
        c.add_element("r1", ElementKind::Resistor { a: top, b: mid, ohms: 10e3 });
        c.add_element("r2", ElementKind::Resistor { a: mid, b: GND, ohms: 10e3 });
        let sol = dc_operating_point(&c, &BTreeMap::new(), &cfg()).unwrap();
        // gmin shifts the midpoint by a few nV; the step tolerance is 1 uV.
        assert!((sol["mid"] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rram_readout_stack_reproduces_definition() {
        // 112 kOhm device from 0.2 V to a grounded mid: 1.7857 uA.
        let mut c = Circuit::new();
        let top = c.add_net("top", NetRole::Cue);
        let mid = c.add_net("mid", NetRole::Mid);
        c.add_element("v", ElementKind::FixedSource { net: top, volts: 0.2 });
        c.add_element(
            "rram",
            ElementKind::Rram {
                plus: top,
                minus: mid,
                params: RramParams::default_lrs(),
            },
        );
        // Ideal closed switch to ground stands in as a tiny resistance.
        c.add_element("sw", ElementKind::Resistor { a: mid, b: GND, ohms: 1e-3 });
        let sol = dc_operating_point(&c, &BTreeMap::new(), &cfg()).unwrap();
        assert!(sol["mid"].abs() < 1e-8);
        let i = dc_source_current(&c, &sol, "top").unwrap();
        assert!(((i - 0.2 / 112e3) / (0.2 / 112e3)).abs() < 1e-6, "i = {i}");
    }

    #[test]
    fn forward_write_stack_matches_scalar_bisection_oracle() {
        // cue = 1.8 V -> RRAM(LRS) -> Q1 (gate 1.8) -> grounded psw.
        let q1 = MosParams::new(0.5, 2e-4);
        let lrs = RramParams::default_lrs();
        let mut c = Circuit::new();
        let cue = c.add_net("cue", NetRole::Cue);
        let mid = c.add_net("mid", NetRole::Mid);
        let sw = c.add_net("sw", NetRole::Sw);
        let psw = c.add_net("psw", NetRole::Psw);
        c.add_element("vcue", ElementKind::FixedSource { net: cue, volts: 1.8 });
        c.add_element("vsw", ElementKind::FixedSource { net: sw, volts: 1.8 });
        c.add_element("vpsw", ElementKind::FixedSource { net: psw, volts: 0.0 });
        c.add_element(
            "rram",
            ElementKind::Rram { plus: cue, minus: mid, params: lrs },
        );
        c.add_element(
            "q1",
            ElementKind::Mosfet { d: mid, g: sw, s: psw, p: q1 },
        );
        let sol = dc_operating_point(&c, &BTreeMap::new(), &cfg()).unwrap();

        // Independent oracle: bisect i_rram(1.8 - v) = i_mos(v) on [0, 1.8].
        let f = |v: f64| {
            crate::device::branch_current(&lrs, 1.8 - v)
                - crate::circuit::mos::mos_current(&q1, 1.8, v)
        };
        let (mut lo, mut hi) = (0.0f64, 1.8f64);
        for _ in 0..60 {
            let m = 0.5 * (lo + hi);
            if f(lo).signum() == f(m).signum() {
                lo = m;
            } else {
                hi = m;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(
            (sol["mid"] - oracle).abs() < 1e-6,
            "newton {} vs bisection {}",
            sol["mid"],
            oracle
        );
    }

    #[test]
    fn non_convergence_reports_residual() {
        // A floating net tied only by capacitors has no DC path; with gmin it
        // settles to 0 rather than erroring.
        let mut c = Circuit::new();
        let a = c.add_net("a", NetRole::Internal);
        let top = c.add_net("top", NetRole::Internal);
        c.add_element("v", ElementKind::FixedSource { net: top, volts: 1.0 });
        c.add_element("c1", ElementKind::Capacitor { a: top, b: a, farads: 1e-15 });
        let sol = dc_operating_point(&c, &BTreeMap::new(), &cfg()).unwrap();
        assert!(sol["a"].abs() < 1e-9);
    }
}
