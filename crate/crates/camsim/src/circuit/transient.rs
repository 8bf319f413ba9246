//! Fixed-step implicit-Euler transient solver with per-source metering.

use std::collections::BTreeMap;

use super::schedule::PhaseSchedule;
use super::waveform::PwlWaveform;
use super::{
    element_flow, newton_solve, CapState, Circuit, ElementKind, NetId, SolverConfig, GND,
};
use crate::error::{Error, Result};

/// Time series produced by [`transient_solve`]: node voltages plus cumulative
/// per-source delivered charge and energy and per-label dissipated energy.
/// All sequences share the length of `times`.
///
/// Source energy follows the CMOS-rail convention: only sourcing flows are
/// credited to the driver; energy pushed back into a driver is booked as
/// `periphery.driver_dump` dissipation, the way a totem-pole output stage
/// dumps returned charge. The balance `sum(source_energy) =
/// delta(stored) + sum(dissipation)` closes exactly either way.
#[derive(Debug, Clone)]
pub struct TransientTrace {
    pub times: Vec<f64>,
    pub node_voltages: BTreeMap<String, Vec<f64>>,
    /// Cumulative delivered charge per source label (C).
    pub source_charge: BTreeMap<String, Vec<f64>>,
    /// Cumulative delivered energy per source label (J).
    pub source_energy: BTreeMap<String, Vec<f64>>,
    /// Cumulative dissipated energy per element label (J).
    pub dissipation: BTreeMap<String, Vec<f64>>,
    /// Stored capacitor energy at each sample (J).
    pub stored_energy: Vec<f64>,
    pub markers: BTreeMap<String, f64>,
}

impl TransientTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linearly interpolated node voltage at time `t`.
    pub fn voltage_at(&self, net: &str, t: f64) -> Result<f64> {
        let series = self
            .node_voltages
            .get(net)
            .ok_or_else(|| Error::invalid(format!("trace has no net '{net}'")))?;
        Ok(interp(&self.times, series, t))
    }

    /// Interpolated cumulative source energy at time `t`.
    pub fn source_energy_at(&self, label: &str, t: f64) -> f64 {
        self.source_energy
            .get(label)
            .map(|s| interp(&self.times, s, t))
            .unwrap_or(0.0)
    }

    pub fn source_charge_at(&self, label: &str, t: f64) -> f64 {
        self.source_charge
            .get(label)
            .map(|s| interp(&self.times, s, t))
            .unwrap_or(0.0)
    }

    pub fn dissipation_at(&self, label: &str, t: f64) -> f64 {
        self.dissipation
            .get(label)
            .map(|s| interp(&self.times, s, t))
            .unwrap_or(0.0)
    }

    pub fn total_source_energy(&self) -> f64 {
        self.source_energy
            .values()
            .map(|s| *s.last().unwrap_or(&0.0))
            .sum()
    }

    pub fn total_dissipation(&self) -> f64 {
        self.dissipation
            .values()
            .map(|s| *s.last().unwrap_or(&0.0))
            .sum()
    }
}

pub(crate) fn interp(times: &[f64], series: &[f64], t: f64) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    if t <= times[0] {
        return series[0];
    }
    if t >= times[times.len() - 1] {
        return series[series.len() - 1];
    }
    match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(k) => series[k],
        Err(k) => {
            let (t0, t1) = (times[k - 1], times[k]);
            let (v0, v1) = (series[k - 1], series[k]);
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        }
    }
}

struct Meter {
    /// Running totals keyed by label index.
    source_totals_q: Vec<f64>,
    source_totals_e: Vec<f64>,
    diss_totals: Vec<f64>,
    /// Scratch: net source current per net for the step being credited.
    net_current: Vec<f64>,
}

/// Solve the circuit over `[0, t_end]` with fixed step `dt` under the
/// schedule's waveforms. Floating nets start from `initial` (default 0 V).
///
/// Implicit-Euler with a Newton inner loop. A failed step is retried with
/// halved sub-steps up to `cfg.step_halving_levels` times before the solve is
/// abandoned. Delivered source energy is credited per step as
/// `i_end * dt * v_mid`, which closes the energy balance against stored
/// capacitor energy exactly.
pub fn transient_solve(
    circuit: &Circuit,
    schedule: &PhaseSchedule,
    dt: f64,
    t_end: f64,
    initial: &BTreeMap<String, f64>,
    cfg: &SolverConfig,
) -> Result<TransientTrace> {
    circuit.validate()?;
    schedule.validate()?;
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }

    // Resolve one waveform per source: the schedule overrides element
    // defaults by net name.
    let n_nets = circuit.nets.len();
    let mut drive: Vec<Option<Drive>> = vec![None; n_nets];
    for e in &circuit.elements {
        match &e.kind {
            ElementKind::FixedSource { net, volts } => {
                drive[*net] = Some(Drive {
                    wf: PwlWaveform::constant(*volts),
                    label: e.label.clone(),
                });
            }
            ElementKind::PwlSource { net, wf } => {
                let name = circuit.net_name(*net);
                let resolved = schedule
                    .waveforms
                    .get(name)
                    .cloned()
                    .or_else(|| wf.clone())
                    .ok_or_else(|| {
                        Error::invalid(format!(
                            "source on net '{name}' has no waveform in schedule '{}'",
                            schedule.name
                        ))
                    })?;
                drive[*net] = Some(Drive {
                    wf: resolved,
                    label: e.label.clone(),
                });
            }
            _ => {}
        }
    }

    // dt must resolve the fastest source transition.
    if let Some(min_rise) = schedule.min_transition_s().or_else(|| {
        drive
            .iter()
            .flatten()
            .filter_map(|d| d.wf.min_transition_s())
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
    }) {
        if dt > min_rise / 20.0 * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "dt = {dt:.3e} s exceeds 1/20 of the fastest source transition ({min_rise:.3e} s)"
            )));
        }
    }

    // Initial state.
    let mut v = vec![0.0; n_nets];
    for (k, d) in drive.iter().enumerate() {
        if let Some(d) = d {
            v[k] = d.wf.value_at(0.0);
        }
    }
    for (name, volts) in initial {
        let id = circuit
            .net(name)
            .ok_or_else(|| Error::invalid(format!("unknown net '{name}' in initial state")))?;
        v[id] = *volts;
    }

    let driven: Vec<bool> = (0..n_nets).map(|k| k == GND || drive[k].is_some()).collect();
    let unknowns: Vec<NetId> = (0..n_nets).filter(|&k| !driven[k]).collect();
    let mut index_of = vec![None; n_nets];
    for (k, &net) in unknowns.iter().enumerate() {
        index_of[net] = Some(k);
    }

    // Label tables for metering.
    let mut source_labels: Vec<String> = Vec::new();
    let mut source_of_net: Vec<Option<usize>> = vec![None; n_nets];
    for (net, d) in drive.iter().enumerate() {
        if let Some(d) = d {
            let idx = source_labels.iter().position(|l| l == &d.label).unwrap_or_else(|| {
                source_labels.push(d.label.clone());
                source_labels.len() - 1
            });
            source_of_net[net] = Some(idx);
        }
    }
    let mut diss_labels: Vec<String> = Vec::new();
    let mut diss_of_element: Vec<Option<usize>> = vec![None; circuit.elements.len()];
    for (k, e) in circuit.elements.iter().enumerate() {
        let resistive = matches!(
            e.kind,
            ElementKind::Resistor { .. }
                | ElementKind::Rram { .. }
                | ElementKind::Mosfet { .. }
                | ElementKind::DoubleGateNmos { .. }
                | ElementKind::Switch { .. }
        );
        if resistive {
            let idx = diss_labels.iter().position(|l| l == &e.label).unwrap_or_else(|| {
                diss_labels.push(e.label.clone());
                diss_labels.len() - 1
            });
            diss_of_element[k] = Some(idx);
        }
    }
    let gmin_slot = diss_labels.len();
    diss_labels.push("gmin".to_string());
    let dump_slot = diss_labels.len();
    diss_labels.push("periphery.driver_dump".to_string());

    let n_steps_est = (t_end / dt).ceil() as usize + 2;
    let mut trace = TraceBuilder::new(circuit, &source_labels, &diss_labels, n_steps_est);
    let mut meter = Meter::zeroed(source_labels.len(), diss_labels.len(), n_nets);
    trace.record(0.0, &v, &meter, circuit);
    let mut t = 0.0;
    let mut step = 0usize;
    while t < t_end - 1e-9 * dt {
        let t_next = (t + dt).min(t_end);
        advance(
            circuit,
            &drive,
            &unknowns,
            &index_of,
            &source_of_net,
            &diss_of_element,
            gmin_slot,
            dump_slot,
            &mut v,
            t,
            t_next,
            0,
            cfg,
            &mut meter,
        )
        .map_err(|reason| Error::Transient {
            step,
            time_s: t_next,
            reason,
        })?;
        trace.record(t_next, &v, &meter, circuit);
        t = t_next;
        step += 1;
    }

    Ok(trace.finish(circuit, schedule))
}

#[derive(Clone)]
struct Drive {
    wf: PwlWaveform,
    label: String,
}

impl Meter {
    fn zeroed(n_sources: usize, n_diss: usize, n_nets: usize) -> Self {
        Meter {
            source_totals_q: vec![0.0; n_sources],
            source_totals_e: vec![0.0; n_sources],
            diss_totals: vec![0.0; n_diss],
            net_current: vec![0.0; n_nets],
        }
    }
}

/// Advance from `t0` to `t1` (one step), recursing into halved sub-steps on
/// Newton failure.
#[allow(clippy::too_many_arguments)]
fn advance(
    circuit: &Circuit,
    drive: &[Option<Drive>],
    unknowns: &[NetId],
    index_of: &[Option<usize>],
    source_of_net: &[Option<usize>],
    diss_of_element: &[Option<usize>],
    gmin_slot: usize,
    dump_slot: usize,
    v: &mut Vec<f64>,
    t0: f64,
    t1: f64,
    depth: u32,
    cfg: &SolverConfig,
    meter: &mut Meter,
) -> std::result::Result<(), String> {
    let v_start = v.clone();
    let dt_sub = t1 - t0;
    for (net, d) in drive.iter().enumerate() {
        if let Some(d) = d {
            v[net] = d.wf.value_at(t1);
        }
    }
    let cap = CapState {
        dt: dt_sub,
        v_prev: &v_start,
    };
    match newton_solve(circuit, v, Some(&cap), unknowns, index_of, cfg, None) {
        Ok(_) => {
            accumulate(
                circuit,
                &v_start,
                v,
                dt_sub,
                &cap,
                source_of_net,
                diss_of_element,
                gmin_slot,
                dump_slot,
                unknowns,
                cfg.gmin_s,
                meter,
            );
            Ok(())
        }
        Err(reason) => {
            if depth >= cfg.step_halving_levels {
                return Err(format!("{reason} (after {depth} halvings)"));
            }
            *v = v_start;
            let tm = 0.5 * (t0 + t1);
            advance(
                circuit, drive, unknowns, index_of, source_of_net, diss_of_element, gmin_slot,
                dump_slot, v, t0, tm, depth + 1, cfg, meter,
            )?;
            advance(
                circuit, drive, unknowns, index_of, source_of_net, diss_of_element, gmin_slot,
                dump_slot, v, tm, t1, depth + 1, cfg, meter,
            )
        }
    }
}

/// Credit this step's flows: sources get `i_end * dt` charge and midpoint
/// voltage energy, resistive elements get midpoint branch-voltage dissipation.
/// Sourcing and sinking are split per driven net: delivered energy goes to
/// the driver label, absorbed energy to the driver-dump dissipation slot.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    circuit: &Circuit,
    v_start: &[f64],
    v_end: &[f64],
    dt: f64,
    cap: &CapState,
    source_of_net: &[Option<usize>],
    diss_of_element: &[Option<usize>],
    gmin_slot: usize,
    dump_slot: usize,
    unknowns: &[NetId],
    gmin_s: f64,
    meter: &mut Meter,
) {
    meter.net_current.fill(0.0);
    for (k, e) in circuit.elements.iter().enumerate() {
        if let Some(flow) = element_flow(e, v_end, Some(cap)) {
            if source_of_net[flow.a].is_some() {
                meter.net_current[flow.a] += flow.i;
            }
            if source_of_net[flow.b].is_some() {
                meter.net_current[flow.b] -= flow.i;
            }
            if !flow.is_capacitive {
                if let Some(slot) = diss_of_element[k] {
                    let vm = 0.5
                        * ((v_start[flow.a] - v_start[flow.b])
                            + (v_end[flow.a] - v_end[flow.b]));
                    meter.diss_totals[slot] += flow.i * dt * vm;
                }
            }
        }
    }
    for (net, slot) in source_of_net.iter().enumerate() {
        if let Some(slot) = *slot {
            let dq = meter.net_current[net] * dt;
            if dq == 0.0 {
                continue;
            }
            let vm = 0.5 * (v_start[net] + v_end[net]);
            let de = dq * vm;
            meter.source_totals_q[slot] += dq;
            if de >= 0.0 {
                meter.source_totals_e[slot] += de;
            } else {
                meter.diss_totals[dump_slot] -= de;
            }
        }
    }
    // gmin ties on floating nets.
    for &net in unknowns {
        let i = gmin_s * v_end[net];
        let vm = 0.5 * (v_start[net] + v_end[net]);
        meter.diss_totals[gmin_slot] += i * dt * vm;
    }
}

struct TraceBuilder {
    times: Vec<f64>,
    node_series: Vec<Vec<f64>>,
    source_q: Vec<Vec<f64>>,
    source_e: Vec<Vec<f64>>,
    diss: Vec<Vec<f64>>,
    stored: Vec<f64>,
    source_labels: Vec<String>,
    diss_labels: Vec<String>,
}

impl TraceBuilder {
    fn new(circuit: &Circuit, source_labels: &[String], diss_labels: &[String], cap: usize) -> Self {
        TraceBuilder {
            times: Vec::with_capacity(cap),
            node_series: vec![Vec::with_capacity(cap); circuit.nets.len()],
            source_q: vec![Vec::with_capacity(cap); source_labels.len()],
            source_e: vec![Vec::with_capacity(cap); source_labels.len()],
            diss: vec![Vec::with_capacity(cap); diss_labels.len()],
            stored: Vec::with_capacity(cap),
            source_labels: source_labels.to_vec(),
            diss_labels: diss_labels.to_vec(),
        }
    }

    fn record(&mut self, t: f64, v: &[f64], meter: &Meter, circuit: &Circuit) {
        self.times.push(t);
        for (k, series) in self.node_series.iter_mut().enumerate() {
            series.push(v[k]);
        }
        for (k, series) in self.source_q.iter_mut().enumerate() {
            series.push(meter.source_totals_q[k]);
        }
        for (k, series) in self.source_e.iter_mut().enumerate() {
            series.push(meter.source_totals_e[k]);
        }
        for (k, series) in self.diss.iter_mut().enumerate() {
            series.push(meter.diss_totals[k]);
        }
        self.stored.push(circuit.stored_energy(v));
    }

    fn finish(self, circuit: &Circuit, schedule: &PhaseSchedule) -> TransientTrace {
        let mut node_voltages = BTreeMap::new();
        for (k, series) in self.node_series.into_iter().enumerate() {
            node_voltages.insert(circuit.net_name(k).to_string(), series);
        }
        let mut source_charge = BTreeMap::new();
        let mut source_energy = BTreeMap::new();
        for (k, label) in self.source_labels.iter().enumerate() {
            source_charge.insert(label.clone(), self.source_q[k].clone());
            source_energy.insert(label.clone(), self.source_e[k].clone());
        }
        let mut dissipation = BTreeMap::new();
        for (k, label) in self.diss_labels.iter().enumerate() {
            dissipation.insert(label.clone(), self.diss[k].clone());
        }
        TransientTrace {
            times: self.times,
            node_voltages,
            source_charge,
            source_energy,
            dissipation,
            stored_energy: self.stored,
            markers: schedule.markers.clone(),
        }
    }
}
