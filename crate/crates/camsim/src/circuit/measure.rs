//! Trace measurements and export.

use serde::{Deserialize, Serialize};

use super::transient::TransientTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossDirection {
    Rising,
    Falling,
}

/// Threshold-crossing search result. The absence of a crossing is a value,
/// not a fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    At { time_s: f64 },
    NoCrossing,
}

impl Crossing {
    pub fn time(self) -> Option<f64> {
        match self {
            Crossing::At { time_s } => Some(time_s),
            Crossing::NoCrossing => None,
        }
    }
}

/// First crossing of `threshold_v` on `net` in the given direction at or
/// after `after_s`, linearly interpolated between samples.
pub fn measure_delay(
    trace: &TransientTrace,
    net: &str,
    threshold_v: f64,
    direction: CrossDirection,
    after_s: f64,
) -> Result<Crossing> {
    let series = trace
        .node_voltages
        .get(net)
        .ok_or_else(|| Error::invalid(format!("trace has no net '{net}'")))?;
    let times = &trace.times;
    for k in 1..times.len() {
        if times[k] < after_s {
            continue;
        }
        let (v0, v1) = (series[k - 1], series[k]);
        let crossed = match direction {
            CrossDirection::Rising => v0 < threshold_v && v1 >= threshold_v,
            CrossDirection::Falling => v0 > threshold_v && v1 <= threshold_v,
        };
        if crossed {
            let (t0, t1) = (times[k - 1], times[k]);
            let t = t0 + (t1 - t0) * (threshold_v - v0) / (v1 - v0);
            if t >= after_s {
                return Ok(Crossing::At { time_s: t });
            }
        }
    }
    Ok(Crossing::NoCrossing)
}

/// Export selected nets as CSV: one time column plus one column per net,
/// 12 significant digits.
pub fn trace_to_csv(trace: &TransientTrace, nets: &[String]) -> Result<String> {
    for net in nets {
        if !trace.node_voltages.contains_key(net) {
            return Err(Error::invalid(format!("trace has no net '{net}'")));
        }
    }
    let mut out = String::from("# camsim transient trace; voltages in volts\n");
    out.push_str("time_s");
    for net in nets {
        out.push_str(&format!(",{net}_v"));
    }
    out.push('\n');
    for (k, &t) in trace.times.iter().enumerate() {
        out.push_str(&format!("{t:.12e}"));
        for net in nets {
            out.push_str(&format!(",{:.12e}", trace.node_voltages[net][k]));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::schedule::PhaseSchedule;
    use crate::circuit::transient::transient_solve;
    use crate::circuit::waveform::PwlWaveform;
    use crate::circuit::{Circuit, ElementKind, NetRole, SolverConfig};
    use std::collections::BTreeMap;

    fn rc_discharge(r: f64, c: f64, dt: f64, t_end: f64) -> TransientTrace {
        let mut ckt = Circuit::new();
        let n = ckt.add_net("n", NetRole::Internal);
        ckt.add_element("r", ElementKind::Resistor { a: n, b: 0, ohms: r });
        ckt.add_element("c", ElementKind::Capacitor { a: n, b: 0, farads: c });
        let schedule = PhaseSchedule::new("rc", 1e-9, t_end);
        let mut initial = BTreeMap::new();
        initial.insert("n".to_string(), 1.0);
        transient_solve(&ckt, &schedule, dt, t_end, &initial, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn rc_discharge_matches_analytic_solution() {
        // R = 100 kOhm, C = 10 fF: tau = 1 ns; dt = tau/1000.
        let tau = 1e-9;
        let trace = rc_discharge(100e3, 10e-15, tau / 1000.0, 2.0 * tau);
        let v_tau = trace.voltage_at("n", tau).unwrap();
        let expect = (-1.0f64).exp();
        assert!(
            ((v_tau - expect) / expect).abs() < 1e-3,
            "v(tau) = {v_tau}, analytic {expect}"
        );
    }

    #[test]
    fn delay_measurement_recovers_rc_time_constant() {
        let tau = 1e-9;
        let trace = rc_discharge(100e3, 10e-15, tau / 1000.0, 2.0 * tau);
        let cross = measure_delay(&trace, "n", (-1.0f64).exp(), CrossDirection::Falling, 0.0)
            .unwrap()
            .time()
            .expect("must cross 1/e");
        assert!(
            ((cross - tau) / tau).abs() < 5e-3,
            "crossing at {cross}, expected {tau}"
        );
    }

    #[test]
    fn constant_trace_never_crosses() {
        let mut ckt = Circuit::new();
        let n = ckt.add_net("n", NetRole::Internal);
        let src = ckt.add_net("src", NetRole::Internal);
        ckt.add_element("v", ElementKind::FixedSource { net: src, volts: 1.0 });
        ckt.add_element("r", ElementKind::Resistor { a: src, b: n, ohms: 1e3 });
        ckt.add_element("c", ElementKind::Capacitor { a: n, b: 0, farads: 1e-15 });
        let schedule = PhaseSchedule::new("hold", 1e-9, 1e-9);
        let mut initial = BTreeMap::new();
        initial.insert("n".to_string(), 1.0);
        let trace =
            transient_solve(&ckt, &schedule, 1e-12, 1e-9, &initial, &SolverConfig::default())
                .unwrap();
        let cross = measure_delay(&trace, "n", 0.5, CrossDirection::Falling, 0.0).unwrap();
        assert_eq!(cross, Crossing::NoCrossing);
    }

    #[test]
    fn equilibrium_stays_put() {
        // All sources constant, no initial imbalance: every voltage constant.
        let mut ckt = Circuit::new();
        let a = ckt.add_net("a", NetRole::Internal);
        let b = ckt.add_net("b", NetRole::Internal);
        let src = ckt.add_net("src", NetRole::Internal);
        ckt.add_element("v", ElementKind::FixedSource { net: src, volts: 1.5 });
        ckt.add_element("r1", ElementKind::Resistor { a: src, b: a, ohms: 1e4 });
        ckt.add_element("r2", ElementKind::Resistor { a, b, ohms: 1e4 });
        ckt.add_element("r3", ElementKind::Resistor { a: b, b: 0, ohms: 1e4 });
        ckt.add_element("c1", ElementKind::Capacitor { a, b: 0, farads: 1e-14 });
        let schedule = PhaseSchedule::new("hold", 1e-9, 1e-9);
        let mut initial = BTreeMap::new();
        initial.insert("a".to_string(), 1.0);
        initial.insert("b".to_string(), 0.5);
        let trace =
            transient_solve(&ckt, &schedule, 1e-12, 1e-9, &initial, &SolverConfig::default())
                .unwrap();
        for series in trace.node_voltages.values() {
            let first = series[0];
            for &v in series {
                assert!((v - first).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn step_charging_splits_energy_evenly() {
        // Charging 50 fF to 1.18 V through a resistor: the source delivers
        // C*V^2, half stored, half dissipated.
        let (c, vdd, r) = (50e-15, 1.18, 10e3);
        let tau = r * c;
        let mut ckt = Circuit::new();
        let n = ckt.add_net("n", NetRole::Ml);
        let src = ckt.add_net("src", NetRole::Vsec);
        ckt.add_element("rail", ElementKind::FixedSource { net: src, volts: vdd });
        ckt.add_element("r", ElementKind::Resistor { a: src, b: n, ohms: r });
        ckt.add_element("c", ElementKind::Capacitor { a: n, b: 0, farads: c });
        let schedule = PhaseSchedule::new("charge", 1e-9, 14.0 * tau);
        let trace = transient_solve(
            &ckt,
            &schedule,
            tau / 200.0,
            14.0 * tau,
            &BTreeMap::new(),
            &SolverConfig::default(),
        )
        .unwrap();

        let e_src = trace.total_source_energy();
        let e_diss = trace.total_dissipation();
        let e_stored = *trace.stored_energy.last().unwrap();
        let cv2 = c * vdd * vdd;
        assert!(((e_src - cv2) / cv2).abs() < 0.01, "source {e_src} vs CV^2 {cv2}");
        assert!(((e_stored - cv2 / 2.0) / (cv2 / 2.0)).abs() < 0.01);
        assert!(((e_diss - cv2 / 2.0) / (cv2 / 2.0)).abs() < 0.01);
        // The balance closes far tighter than the 1 % criterion.
        let closure = (e_src - e_stored - e_diss).abs() / e_src;
        assert!(closure < 1e-9, "closure error {closure}");
        // Delivered charge equals C*V.
        let q = trace.source_charge_at("rail", 14.0 * tau);
        assert!(((q - c * vdd) / (c * vdd)).abs() < 1e-6);
    }

    #[test]
    fn csv_export_shape() {
        let trace = rc_discharge(100e3, 10e-15, 1e-11, 1e-10);
        let csv = trace_to_csv(&trace, &["n".to_string()]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        // comment + header + N samples
        assert_eq!(lines.len(), 2 + trace.len());
        assert!(lines[1].starts_with("time_s,n_v"));
    }

    #[test]
    fn dt_precondition_enforced_against_source_rise() {
        let mut ckt = Circuit::new();
        let n = ckt.add_net("n", NetRole::Internal);
        let src = ckt.add_net("src", NetRole::Internal);
        ckt.add_element("v", ElementKind::PwlSource { net: src, wf: None });
        ckt.add_element("r", ElementKind::Resistor { a: src, b: n, ohms: 1e3 });
        ckt.add_element("c", ElementKind::Capacitor { a: n, b: 0, farads: 1e-15 });
        let mut schedule = PhaseSchedule::new("ramp", 1e-9, 1e-9);
        schedule.set_waveform("src", PwlWaveform::ramp(0.0, 0.1e-9, 0.0, 1.0));
        let r = transient_solve(
            &ckt,
            &schedule,
            0.02e-9,
            1e-9,
            &BTreeMap::new(),
            &SolverConfig::default(),
        );
        assert!(r.is_err());
    }
}
