//! The 3T1R1C CAM cell: netlist construction and control-waveform schedules
//! for content-addressable read (CAR), address-addressable read (AAR), and
//! write (WRT).
//!
//! Cell topology (one bit):
//!
//! ```text
//!   cue ──[RRAM ∥ C_mr]── mid ──[C_b]── cue_bar
//!                          │
//!                         Q1 (gate sw) ── psw
//!                          │
//!   ml ──[Q2 (gate mid) · Q3 (gate en)]── gnd     (shared-terminal pair)
//!   ml ──[ideal switch, pre active low]── V_SEC
//! ```
//!
//! The stored bit lives in the RRAM resistive state: HRS encodes binary '1',
//! LRS binary '0'. During CAR the device either bypasses C_mr (LRS) or lets
//! the C_mr-C_b divider run (HRS), which decides whether Q2 can discharge
//! the match-line.

use serde::{Deserialize, Serialize};

use crate::circuit::mos::MosParams;
use crate::circuit::schedule::{markers, PhaseSchedule};
use crate::circuit::waveform::PwlWaveform;
use crate::circuit::{Circuit, ElementKind, NetRole, SolverConfig};
use crate::device::{RramParams, StateLabel};
use crate::error::{Error, Result};

/// Internal clock: 875 MHz.
pub const DEFAULT_CLOCK_PERIOD_S: f64 = 1.0 / 875.0e6;
/// Bottom MOM capacitor.
pub const DEFAULT_C_B_F: f64 = 4e-15;
/// Primary supply.
pub const DEFAULT_VDD_V: f64 = 1.8;
/// Adjustable secondary supply, shipped at the reference measurement point.
pub const DEFAULT_VSEC_V: f64 = 1.18;
/// Pre-charge switch on-resistance.
pub const DEFAULT_PRE_SWITCH_R_OHMS: f64 = 5e3;
/// Rise/fall time of digital control edges.
pub const DEFAULT_CONTROL_EDGE_S: f64 = 0.2e-9;
/// Cue/cue_bar ramp duration.
pub const DEFAULT_CUE_RISE_S: f64 = 2e-9;
/// Default 64-cell match-line capacitance.
pub const DEFAULT_C_ML_F: f64 = 50e-15;
/// One cell's share of the default match line, used by the one-cell
/// truth-table run.
pub const TRUTH_TABLE_C_ML_F: f64 = DEFAULT_C_ML_F / 64.0;

pub const VSEC_RANGE_V: (f64, f64) = (1.0, 1.4);

/// Supply rails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Supplies {
    pub vdd_v: f64,
    pub vsec_v: f64,
}

impl Default for Supplies {
    fn default() -> Self {
        Supplies {
            vdd_v: DEFAULT_VDD_V,
            vsec_v: DEFAULT_VSEC_V,
        }
    }
}

/// Write-event thresholds across the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WriteThresholds {
    /// Forward bias at or above this sets the device to LRS.
    pub set_v: f64,
    /// Reverse bias at or beyond this magnitude resets to HRS.
    pub reset_v: f64,
}

impl Default for WriteThresholds {
    fn default() -> Self {
        WriteThresholds {
            set_v: 1.0,
            reset_v: 1.0,
        }
    }
}

/// Full electrical description of one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    /// Device in its currently stored state.
    pub rram: RramParams,
    /// State palette used when words are built or the state is rewritten.
    pub lrs: RramParams,
    pub hrs: RramParams,
    pub c_b_f: f64,
    pub q1: MosParams,
    pub q2: MosParams,
    pub q3: MosParams,
    pub supplies: Supplies,
    pub pre_switch_r_ohms: f64,
    pub clock_period_s: f64,
    pub control_edge_s: f64,
    pub cue_rise_s: f64,
    pub write: WriteThresholds,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            rram: RramParams::default_hrs(),
            lrs: RramParams::default_lrs(),
            hrs: RramParams::default_hrs(),
            c_b_f: DEFAULT_C_B_F,
            q1: MosParams::default_nmos(),
            q2: MosParams::default_nmos(),
            q3: MosParams::default_nmos(),
            supplies: Supplies::default(),
            pre_switch_r_ohms: DEFAULT_PRE_SWITCH_R_OHMS,
            clock_period_s: DEFAULT_CLOCK_PERIOD_S,
            control_edge_s: DEFAULT_CONTROL_EDGE_S,
            cue_rise_s: DEFAULT_CUE_RISE_S,
            write: WriteThresholds::default(),
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        self.rram.validate()?;
        self.lrs.validate()?;
        self.hrs.validate()?;
        if self.lrs.state.rs_ohms >= self.hrs.state.rs_ohms {
            return Err(Error::invalid(format!(
                "LRS resistance {} must be below HRS resistance {}",
                self.lrs.state.rs_ohms, self.hrs.state.rs_ohms
            )));
        }
        if !(self.c_b_f > 0.0) {
            return Err(Error::invalid("c_b_f must be positive"));
        }
        let (lo, hi) = VSEC_RANGE_V;
        if !(self.supplies.vsec_v >= lo && self.supplies.vsec_v <= hi) {
            return Err(Error::invalid(format!(
                "vsec_v = {} outside the supported range [{lo}, {hi}] V",
                self.supplies.vsec_v
            )));
        }
        if self.supplies.vdd_v < self.supplies.vsec_v {
            return Err(Error::invalid("vdd_v must be at least vsec_v"));
        }
        for (name, q) in [("q1", &self.q1), ("q2", &self.q2), ("q3", &self.q3)] {
            if !q.valid() {
                return Err(Error::invalid(format!("{name} parameters invalid")));
            }
        }
        if !(self.pre_switch_r_ohms > 0.0
            && self.clock_period_s > 0.0
            && self.control_edge_s > 0.0
            && self.cue_rise_s > 0.0)
        {
            return Err(Error::invalid("timing/resistance fields must be positive"));
        }
        Ok(())
    }

    /// Copy of this config with the stored state replaced from the palette.
    pub fn with_stored(&self, state: StateLabel) -> CellConfig {
        let mut cfg = self.clone();
        cfg.rram = match state {
            StateLabel::Lrs => self.lrs,
            StateLabel::Hrs => self.hrs,
            StateLabel::Custom => self.rram,
        };
        cfg
    }

    /// Largest transient step compatible with the control edges.
    pub fn max_dt_s(&self) -> f64 {
        self.control_edge_s / 20.0
    }
}

/// Searched value driven on a cell's cue pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueValue {
    One,
    Zero,
    DontCare,
}

impl CueValue {
    /// Drive levels (cue, cue_bar) for this value at supply `vsec`.
    pub fn drive_pair(&self, vsec: f64) -> (f64, f64) {
        match self {
            CueValue::One => (vsec, 0.0),
            CueValue::Zero => (0.0, vsec),
            CueValue::DontCare => (0.0, 0.0),
        }
    }

    /// Pure-logic match rule: a cell misses iff the cue seeks the opposite
    /// stored bit; don't-care never misses.
    pub fn misses(&self, stored: StateLabel) -> bool {
        matches!(
            (self, stored),
            (CueValue::One, StateLabel::Lrs) | (CueValue::Zero, StateLabel::Hrs)
        )
    }
}

/// CAR timing instants derived from the clock. The sw clear pulse occupies a
/// slot ahead of the three operation cycles, matching the between-search
/// clear; cue and pre start together at cycle 1.
#[derive(Debug, Clone, Copy)]
pub struct CarTiming {
    pub t_clear_on: f64,
    pub t_clear_off: f64,
    /// Cycle 1 start: pre-charge asserts, cue ramp begins.
    pub t_cycle1: f64,
    pub t_pre_off: f64,
    pub t_cue_end: f64,
    /// Enable strobe 50 % points (second half of cycle 2).
    pub t_en_on: f64,
    pub t_en_off: f64,
    /// Centre of the enable window; the ramp has just completed here.
    pub t_en_mid: f64,
    pub t_sample: f64,
    pub t_sw_end_on: f64,
    pub t_sw_end_off: f64,
    pub t_end: f64,
    /// Energy-phase boundary between pre-charge and evaluate.
    pub t_eval_start: f64,
}

impl CarTiming {
    pub fn from_config(cfg: &CellConfig) -> Self {
        let t = cfg.clock_period_s;
        let t_cycle1 = t;
        CarTiming {
            t_clear_on: 0.25 * t,
            t_clear_off: 0.75 * t,
            t_cycle1,
            t_pre_off: 2.0 * t,
            t_cue_end: t_cycle1 + cfg.cue_rise_s,
            t_en_on: 2.5 * t,
            t_en_off: 3.0 * t,
            t_en_mid: 2.75 * t,
            t_sample: 3.5 * t,
            t_sw_end_on: 3.5 * t + 0.25 * t,
            t_sw_end_off: 4.0 * t,
            t_end: 4.0 * t,
            t_eval_start: 2.0 * t,
        }
    }
}

/// Net names of the single-cell netlist.
pub mod nets {
    pub const CUE: &str = "cue";
    pub const CUE_BAR: &str = "cue_bar";
    pub const MID: &str = "mid";
    pub const ML: &str = "ml";
    pub const PSW: &str = "psw";
    pub const SW: &str = "sw";
    pub const PRE: &str = "pre";
    pub const EN: &str = "en";
    pub const VSEC_RAIL: &str = "vsec_rail";
    pub const CLR: &str = "clr";
    pub const SEC: &str = "sec";
}

/// Add one cell instance to `ckt`. Control nets are passed in so the array
/// can share columns; `prefix` scopes the per-cell nets (mid) and labels.
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_cell_instance(
    ckt: &mut Circuit,
    cfg: &CellConfig,
    rram: &RramParams,
    prefix: &str,
    cue: usize,
    cue_bar: usize,
    psw: usize,
    sw: usize,
    en: usize,
    ml: usize,
) -> usize {
    let mid = ckt.add_net(&format!("{prefix}mid"), NetRole::Mid);
    ckt.add_element(
        "core.rram",
        ElementKind::Rram {
            plus: cue,
            minus: mid,
            params: *rram,
        },
    );
    ckt.add_element(
        "core.c_mr",
        ElementKind::Capacitor {
            a: cue,
            b: mid,
            farads: rram.c_mr_f,
        },
    );
    ckt.add_element(
        "core.c_b",
        ElementKind::Capacitor {
            a: mid,
            b: cue_bar,
            farads: cfg.c_b_f,
        },
    );
    ckt.add_element(
        "core.q1",
        ElementKind::Mosfet {
            d: mid,
            g: sw,
            s: psw,
            p: cfg.q1,
        },
    );
    // Q2/Q3 share one terminal as a double-gated pulldown.
    ckt.add_element(
        "core.q2q3",
        ElementKind::DoubleGateNmos {
            d: ml,
            g_upper: mid,
            g_lower: en,
            s: crate::circuit::GND,
            upper: cfg.q2,
            lower: cfg.q3,
        },
    );
    mid
}

/// Build the single-cell netlist: nets {cue, cue_bar, mid, ml, psw, sw, pre,
/// en}, the cell elements, and the active-low pre-charge switch from ml to
/// the V_SEC rail. The match-line capacitance is the array's business; the
/// truth-table runner adds it explicitly.
pub fn build_cell_netlist(cfg: &CellConfig) -> Result<Circuit> {
    cfg.validate()?;
    let mut ckt = Circuit::new();
    let cue = ckt.add_net(nets::CUE, NetRole::Cue);
    let cue_bar = ckt.add_net(nets::CUE_BAR, NetRole::CueBar);
    let psw = ckt.add_net(nets::PSW, NetRole::Psw);
    let sw = ckt.add_net(nets::SW, NetRole::Sw);
    let pre = ckt.add_net(nets::PRE, NetRole::Pre);
    let en = ckt.add_net(nets::EN, NetRole::En);
    let ml = ckt.add_net(nets::ML, NetRole::Ml);

    for (name, net) in [
        ("cue", cue),
        ("cue_bar", cue_bar),
        ("psw", psw),
        ("sw", sw),
        ("pre", pre),
        ("en", en),
    ] {
        ckt.add_element(name, ElementKind::PwlSource { net, wf: None });
    }

    let rail = ckt.add_net(nets::VSEC_RAIL, NetRole::Vsec);
    ckt.add_element(
        "pre",
        ElementKind::FixedSource {
            net: rail,
            volts: cfg.supplies.vsec_v,
        },
    );
    ckt.add_element(
        "periphery.pre_switch",
        ElementKind::Switch {
            a: rail,
            b: ml,
            ctrl: pre,
            r_on_ohms: cfg.pre_switch_r_ohms,
            active_high: false,
            threshold_v: cfg.supplies.vdd_v / 2.0,
        },
    );

    add_cell_instance(&mut ckt, cfg, &cfg.rram, "", cue, cue_bar, psw, sw, en, ml);
    Ok(ckt)
}

fn pulse(cfg: &CellConfig, t_on: f64, t_off: f64, level: f64) -> PwlWaveform {
    PwlWaveform::pulse(t_on, t_off, cfg.control_edge_s, 0.0, level)
}

/// Cue-pair waveforms for one cell value: a shared-timing ramp on whichever
/// line is active. psw always mirrors cue_bar during CAR.
pub(crate) fn car_cue_waveforms(
    cue: CueValue,
    cfg: &CellConfig,
    timing: &CarTiming,
) -> (PwlWaveform, PwlWaveform, PwlWaveform) {
    let (v_cue, v_cue_bar) = cue.drive_pair(cfg.supplies.vsec_v);
    let ramp = |level: f64| {
        if level == 0.0 {
            PwlWaveform::constant(0.0)
        } else {
            PwlWaveform::ramp(timing.t_cycle1, timing.t_cue_end, 0.0, level)
        }
    };
    let cue_wf = ramp(v_cue);
    let cue_bar_wf = ramp(v_cue_bar);
    let psw_wf = cue_bar_wf.clone();
    (cue_wf, cue_bar_wf, psw_wf)
}

/// Shared CAR control waveforms (sw, pre, en) and markers.
pub(crate) fn car_control_schedule(cfg: &CellConfig, timing: &CarTiming) -> PhaseSchedule {
    let vdd = cfg.supplies.vdd_v;
    let mut s = PhaseSchedule::new("car", cfg.clock_period_s, timing.t_end);

    let sw_wf = pulse(cfg, timing.t_clear_on, timing.t_clear_off, vdd).with_pulse(
        timing.t_sw_end_on,
        timing.t_sw_end_off - cfg.control_edge_s,
        cfg.control_edge_s,
        vdd,
    );
    s.set_waveform(nets::SW, sw_wf);
    // pre is active low: idle at VDD, low across cycle 1.
    s.set_waveform(
        nets::PRE,
        PwlWaveform::pulse(timing.t_cycle1, timing.t_pre_off, cfg.control_edge_s, vdd, 0.0),
    );
    s.set_waveform(nets::EN, pulse(cfg, timing.t_en_on, timing.t_en_off, vdd));

    s.set_marker(markers::CLEAR, timing.t_clear_on);
    s.set_marker(markers::PRE_CHARGE, timing.t_cycle1);
    s.set_marker(markers::CUE_RISE, timing.t_cycle1);
    s.set_marker(markers::ENABLE, timing.t_en_on);
    s.set_marker("enable_mid", timing.t_en_mid);
    s.set_marker(markers::EVALUATE_START, timing.t_eval_start);
    s.set_marker(markers::SAMPLE, timing.t_sample);
    s
}

/// Content-addressable read schedule for a single cell.
///
/// The mid-clear sw pulse (psw grounded, cue lines still idle) precedes the
/// three operation cycles: cycle 1 pre-charges ml and ramps cue/cue_bar over
/// the configured rise, cycle 2 strobes en once mid has stabilized, cycle 3
/// carries the sample marker, and sw reasserts at the end.
pub fn schedule_car(cue: CueValue, cfg: &CellConfig) -> PhaseSchedule {
    let timing = CarTiming::from_config(cfg);
    let mut s = car_control_schedule(cfg, &timing);
    let (cue_wf, cue_bar_wf, psw_wf) = car_cue_waveforms(cue, cfg, &timing);
    s.set_waveform(nets::CUE, cue_wf);
    s.set_waveform(nets::CUE_BAR, cue_bar_wf);
    s.set_waveform(nets::PSW, psw_wf);
    s
}

/// AAR timing: clr clears the psw line, a 1 ns sec pulse charges it to
/// V_SEC, then sw lets the charge tank discharge through Q1 and the device.
#[derive(Debug, Clone, Copy)]
pub struct AarTiming {
    pub t_clr_on: f64,
    pub t_clr_off: f64,
    pub t_sec_on: f64,
    pub t_sec_off: f64,
    pub t_sw_on: f64,
    pub t_sample: f64,
    pub t_end: f64,
}

impl AarTiming {
    pub fn from_config(cfg: &CellConfig) -> Self {
        let t = cfg.clock_period_s;
        let e = cfg.control_edge_s;
        let t_sec_on = t;
        let t_sec_off = t + 1e-9;
        let t_sw_on = t_sec_off + 2.0 * e;
        let t_sample = t_sw_on + 3e-9;
        AarTiming {
            t_clr_on: 0.25 * t,
            t_clr_off: 0.75 * t,
            t_sec_on,
            t_sec_off,
            t_sw_on,
            t_sample,
            t_end: t_sample + 2.0 * e,
        }
    }
}

/// Address-addressable read schedule. cue and cue_bar stay grounded; the psw
/// line is a floating charge tank driven only through the clr/sec periphery
/// switches.
pub fn schedule_aar(cfg: &CellConfig) -> PhaseSchedule {
    let timing = AarTiming::from_config(cfg);
    let vdd = cfg.supplies.vdd_v;
    let mut s = PhaseSchedule::new("aar", cfg.clock_period_s, timing.t_end);
    s.set_waveform(nets::CUE, PwlWaveform::constant(0.0));
    s.set_waveform(nets::CUE_BAR, PwlWaveform::constant(0.0));
    s.set_waveform(nets::EN, PwlWaveform::constant(0.0));
    s.set_waveform(nets::PRE, PwlWaveform::constant(vdd));
    s.set_waveform(nets::CLR, pulse(cfg, timing.t_clr_on, timing.t_clr_off, vdd));
    s.set_waveform(nets::SEC, pulse(cfg, timing.t_sec_on, timing.t_sec_off, vdd));
    // sw rises and stays asserted through the sample.
    s.set_waveform(
        nets::SW,
        PwlWaveform::ramp(
            timing.t_sw_on - cfg.control_edge_s / 2.0,
            timing.t_sw_on + cfg.control_edge_s / 2.0,
            0.0,
            vdd,
        ),
    );
    s.set_marker(markers::CLEAR, timing.t_clr_on);
    s.set_marker(markers::DISCHARGE, timing.t_sw_on);
    s.set_marker(markers::EVALUATE_START, timing.t_sw_on);
    s.set_marker(markers::SAMPLE, timing.t_sample);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteDirection {
    Forward,
    Reverse,
}

/// Write schedule: bias cue/psw per direction, keep cue_bar grounded, and
/// pulse sw to apply the bias across the device.
pub fn schedule_write(direction: WriteDirection, cfg: &CellConfig) -> PhaseSchedule {
    let t = cfg.clock_period_s;
    let e = cfg.control_edge_s;
    let vdd = cfg.supplies.vdd_v;
    let t_end = 4.0 * t;
    let (t_pulse_on, t_pulse_off) = (t, 3.0 * t);

    let mut s = PhaseSchedule::new("write", cfg.clock_period_s, t_end);
    let bias = PwlWaveform::ramp(0.0, 2.0 * e, 0.0, vdd);
    let grounded = PwlWaveform::constant(0.0);
    match direction {
        WriteDirection::Forward => {
            s.set_waveform(nets::CUE, bias);
            s.set_waveform(nets::PSW, grounded.clone());
        }
        WriteDirection::Reverse => {
            s.set_waveform(nets::CUE, grounded.clone());
            s.set_waveform(nets::PSW, bias);
        }
    }
    s.set_waveform(nets::CUE_BAR, grounded.clone());
    s.set_waveform(nets::EN, grounded);
    s.set_waveform(nets::PRE, PwlWaveform::constant(vdd));
    s.set_waveform(nets::SW, pulse(cfg, t_pulse_on, t_pulse_off, vdd));
    s.set_marker(markers::WRITE_PULSE_START, t_pulse_on);
    s.set_marker(markers::WRITE_PULSE_END, t_pulse_off);
    s.set_marker(markers::SAMPLE, 0.5 * (t_pulse_on + t_pulse_off));
    s.set_marker(markers::EVALUATE_START, t_pulse_on);
    s
}

/// Outcome of applying a write pulse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WriteOutcome {
    /// DC bias across the device (plus terminal at cue) during the pulse.
    pub v_rram_v: f64,
    pub state_before: StateLabel,
    pub state_after: StateLabel,
    pub changed: bool,
}

/// Apply a write pulse as a discrete event: solve the DC operating point of
/// the biased stack and flip the stored state when the device bias passes
/// the configured set/reset threshold.
pub fn apply_write(
    direction: WriteDirection,
    cfg: &CellConfig,
    solver: &SolverConfig,
) -> Result<WriteOutcome> {
    let ckt = build_cell_netlist(cfg)?;
    let vdd = cfg.supplies.vdd_v;
    let mut biases = std::collections::BTreeMap::new();
    let (v_cue, v_psw) = match direction {
        WriteDirection::Forward => (vdd, 0.0),
        WriteDirection::Reverse => (0.0, vdd),
    };
    biases.insert(nets::CUE.to_string(), v_cue);
    biases.insert(nets::PSW.to_string(), v_psw);
    biases.insert(nets::CUE_BAR.to_string(), 0.0);
    biases.insert(nets::SW.to_string(), vdd);
    biases.insert(nets::EN.to_string(), 0.0);
    biases.insert(nets::PRE.to_string(), vdd);
    let sol = crate::circuit::dc::dc_operating_point(&ckt, &biases, solver)?;
    let v_rram = sol[nets::CUE] - sol[nets::MID];

    let before = cfg.rram.state.label;
    let after = if v_rram >= cfg.write.set_v {
        StateLabel::Lrs
    } else if v_rram <= -cfg.write.reset_v {
        StateLabel::Hrs
    } else {
        before
    };
    Ok(WriteOutcome {
        v_rram_v: v_rram,
        state_before: before,
        state_after: after,
        changed: after != before,
    })
}

/// Write stack with the device replaced by a linear stand-in resistor, for
/// equivalent-static-resistance sweeps. Returns the circuit; bias it like
/// [`apply_write`] does.
pub fn build_write_stack_with_esr(cfg: &CellConfig, esr_ohms: f64) -> Result<Circuit> {
    cfg.validate()?;
    if !(esr_ohms > 0.0) {
        return Err(Error::invalid("ESR must be positive"));
    }
    let mut ckt = Circuit::new();
    let cue = ckt.add_net(nets::CUE, NetRole::Cue);
    let psw = ckt.add_net(nets::PSW, NetRole::Psw);
    let sw = ckt.add_net(nets::SW, NetRole::Sw);
    let mid = ckt.add_net(nets::MID, NetRole::Mid);
    for (name, net) in [("cue", cue), ("psw", psw), ("sw", sw)] {
        ckt.add_element(name, ElementKind::PwlSource { net, wf: None });
    }
    ckt.add_element(
        "esr",
        ElementKind::Resistor {
            a: cue,
            b: mid,
            ohms: esr_ohms,
        },
    );
    ckt.add_element(
        "core.q1",
        ElementKind::Mosfet {
            d: mid,
            g: sw,
            s: psw,
            p: cfg.q1,
        },
    );
    Ok(ckt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

/// Truth-table entry measured from a transient run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthTableRow {
    pub cue: CueValue,
    pub stored: StateLabel,
    pub mid_level: Level,
    pub ml_level: Level,
    pub v_mid_at_enable_v: f64,
    pub v_ml_at_sample_v: f64,
}

/// Run one (cue, stored) combination through the transient engine. mid is
/// thresholded at q2's threshold at the enable instant, ml at half of V_SEC
/// at the sample marker.
pub fn evaluate_truth_table(
    cue: CueValue,
    stored: StateLabel,
    cfg: &CellConfig,
    solver: &SolverConfig,
) -> Result<TruthTableRow> {
    let cell_cfg = cfg.with_stored(stored);
    let mut ckt = build_cell_netlist(&cell_cfg)?;
    let ml = ckt.net(nets::ML).expect("cell has ml");
    ckt.add_element(
        "periphery.c_ml",
        ElementKind::Capacitor {
            a: ml,
            b: crate::circuit::GND,
            farads: TRUTH_TABLE_C_ML_F,
        },
    );
    let schedule = schedule_car(cue, &cell_cfg);
    let dt = solver.dt_s.min(cell_cfg.max_dt_s());
    let trace = crate::circuit::transient::transient_solve(
        &ckt,
        &schedule,
        dt,
        schedule.t_end_s,
        &Default::default(),
        solver,
    )?;
    let v_mid = trace.voltage_at(nets::MID, schedule.marker("enable_mid")?)?;
    let v_ml = trace.voltage_at(nets::ML, schedule.marker(markers::SAMPLE)?)?;
    Ok(TruthTableRow {
        cue,
        stored,
        mid_level: if v_mid > cell_cfg.q2.vth_v {
            Level::High
        } else {
            Level::Low
        },
        ml_level: if v_ml >= 0.5 * cell_cfg.supplies.vsec_v {
            Level::High
        } else {
            Level::Low
        },
        v_mid_at_enable_v: v_mid,
        v_ml_at_sample_v: v_ml,
    })
}

/// The six (cue, stored) combinations in table order.
pub const TRUTH_TABLE_CASES: [(CueValue, StateLabel); 6] = [
    (CueValue::One, StateLabel::Hrs),
    (CueValue::One, StateLabel::Lrs),
    (CueValue::Zero, StateLabel::Hrs),
    (CueValue::Zero, StateLabel::Lrs),
    (CueValue::DontCare, StateLabel::Hrs),
    (CueValue::DontCare, StateLabel::Lrs),
];

/// Expected (mid, ml) levels for the six rows.
pub fn expected_truth_table(cue: CueValue, stored: StateLabel) -> (Level, Level) {
    if cue.misses(stored) {
        (Level::High, Level::Low)
    } else {
        (Level::Low, Level::High)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::transient::transient_solve;

    fn solver() -> SolverConfig {
        SolverConfig::default()
    }

    fn run_car(
        cue: CueValue,
        stored_rs: f64,
        cfg: &CellConfig,
    ) -> crate::circuit::transient::TransientTrace {
        let mut cfg = cfg.clone();
        cfg.rram = crate::device::RramParams::calibrated(crate::device::ResistiveState::custom(
            stored_rs,
        ));
        let mut ckt = build_cell_netlist(&cfg).unwrap();
        let ml = ckt.net(nets::ML).unwrap();
        ckt.add_element(
            "periphery.c_ml",
            ElementKind::Capacitor {
                a: ml,
                b: crate::circuit::GND,
                farads: DEFAULT_C_ML_F,
            },
        );
        let schedule = schedule_car(cue, &cfg);
        let dt = solver().dt_s.min(cfg.max_dt_s());
        transient_solve(&ckt, &schedule, dt, schedule.t_end_s, &Default::default(), &solver())
            .unwrap()
    }

    /// Charge-conservation oracle for the settled divider: a floating mid
    /// between C_mr (to the driven plate) and C_b picks up the capacitive
    /// fraction of whichever plate is driven.
    fn divider_oracle(cfg: &CellConfig, driven_top: bool) -> f64 {
        let c_mr = cfg.hrs.c_mr_f;
        let c_b = cfg.c_b_f;
        let v = cfg.supplies.vsec_v;
        if driven_top {
            v * c_mr / (c_mr + c_b)
        } else {
            v * c_b / (c_mr + c_b)
        }
    }

    #[test]
    fn quasi_static_divider_follows_charge_conservation() {
        // A near-open device isolates the divider from any leak.
        let cfg = CellConfig::default();
        let timing = CarTiming::from_config(&cfg);

        let trace = run_car(CueValue::One, 1e12, &cfg);
        let v_mid = trace.voltage_at(nets::MID, timing.t_en_mid).unwrap();
        let oracle = divider_oracle(&cfg, true);
        assert!(
            ((v_mid - oracle) / oracle).abs() < 0.01,
            "cue=1: mid {v_mid} vs divider {oracle}"
        );
        // Shipped default (0.4187 V at V_SEC = 1.18): tolerance covers the
        // finite-HRS drift.
        assert!((oracle - 0.4187).abs() < 1e-3);

        let trace = run_car(CueValue::Zero, 1e12, &cfg);
        let v_mid = trace.voltage_at(nets::MID, timing.t_en_mid).unwrap();
        let oracle = divider_oracle(&cfg, false);
        assert!(
            ((v_mid - oracle) / oracle).abs() < 0.01,
            "cue=0: mid {v_mid} vs divider {oracle}"
        );
        assert!((oracle - 0.7613).abs() < 1e-3);
    }

    #[test]
    fn dont_care_leaves_mid_grounded() {
        let cfg = CellConfig::default();
        let timing = CarTiming::from_config(&cfg);
        let trace = run_car(CueValue::DontCare, 8.04e6, &cfg);
        let v_mid = trace.voltage_at(nets::MID, timing.t_en_mid).unwrap();
        assert!(v_mid.abs() < 1e-3, "mid = {v_mid}");
    }

    #[test]
    fn divider_limits_open_and_shorted_device() {
        let cfg = CellConfig::default();
        let timing = CarTiming::from_config(&cfg);
        // rs -> infinity: pure divider.
        let trace = run_car(CueValue::One, 1e13, &cfg);
        let v_mid = trace.voltage_at(nets::MID, timing.t_en_mid).unwrap();
        let div = divider_oracle(&cfg, true);
        assert!(((v_mid - div) / div).abs() < 0.01);
        // rs -> 0: mid follows the cue drive.
        let trace = run_car(CueValue::One, 10.0, &cfg);
        let v_mid = trace.voltage_at(nets::MID, timing.t_en_mid).unwrap();
        let vsec = cfg.supplies.vsec_v;
        assert!(((v_mid - vsec) / vsec).abs() < 0.01, "mid {v_mid} vs cue {vsec}");
    }

    #[test]
    fn truth_table_reproduces_all_six_rows() {
        let cfg = CellConfig::default();
        for (cue, stored) in TRUTH_TABLE_CASES {
            let row = evaluate_truth_table(cue, stored, &cfg, &solver()).unwrap();
            let (mid_exp, ml_exp) = expected_truth_table(cue, stored);
            assert_eq!(
                row.mid_level, mid_exp,
                "mid for {cue:?}/{stored:?}: v_mid = {}",
                row.v_mid_at_enable_v
            );
            assert_eq!(
                row.ml_level, ml_exp,
                "ml for {cue:?}/{stored:?}: v_ml = {}",
                row.v_ml_at_sample_v
            );
        }
    }

    #[test]
    fn or_matchline_rule_holds_on_every_row() {
        // ml discharges iff v_mid exceeds q2's threshold at the enable
        // instant.
        let cfg = CellConfig::default();
        for (cue, stored) in TRUTH_TABLE_CASES {
            let row = evaluate_truth_table(cue, stored, &cfg, &solver()).unwrap();
            let mid_high = row.v_mid_at_enable_v > cfg.q2.vth_v;
            let ml_low = row.v_ml_at_sample_v < 0.5 * cfg.supplies.vsec_v;
            assert_eq!(mid_high, ml_low, "{cue:?}/{stored:?}");
        }
    }

    #[test]
    fn forward_write_fires_set_event() {
        let mut cfg = CellConfig::default();
        cfg.rram = cfg.hrs;
        let out = apply_write(WriteDirection::Forward, &cfg, &solver()).unwrap();
        assert!(out.v_rram_v > cfg.write.set_v, "bias {}", out.v_rram_v);
        assert_eq!(out.state_after, StateLabel::Lrs);
        assert!(out.changed);
    }

    #[test]
    fn reverse_write_fires_reset_event() {
        let mut cfg = CellConfig::default();
        cfg.rram = cfg.lrs;
        let out = apply_write(WriteDirection::Reverse, &cfg, &solver()).unwrap();
        assert!(out.v_rram_v < -cfg.write.reset_v, "bias {}", out.v_rram_v);
        assert_eq!(out.state_after, StateLabel::Hrs);
        assert!(out.changed);
    }

    #[test]
    fn unpulsed_write_stack_carries_no_current() {
        // sw grounded: Q1 off, the stack is dead and the state would stand.
        let cfg = CellConfig::default();
        let ckt = build_cell_netlist(&cfg).unwrap();
        let mut biases = std::collections::BTreeMap::new();
        biases.insert(nets::CUE.to_string(), cfg.supplies.vdd_v);
        biases.insert(nets::PSW.to_string(), 0.0);
        biases.insert(nets::CUE_BAR.to_string(), 0.0);
        biases.insert(nets::SW.to_string(), 0.0);
        biases.insert(nets::EN.to_string(), 0.0);
        biases.insert(nets::PRE.to_string(), cfg.supplies.vdd_v);
        let sol = crate::circuit::dc::dc_operating_point(&ckt, &biases, &solver()).unwrap();
        let i = crate::circuit::dc::dc_source_current(&ckt, &sol, nets::CUE).unwrap();
        assert!(i.abs() < 1e-9, "cue current {i}");
    }

    #[test]
    fn no_dc_path_after_settling() {
        // Hold the post-ramp CAR drive for many RC constants: the average
        // current drawn from the V_SEC-driven lines must vanish.
        let cfg = CellConfig::default();
        let mut ckt = build_cell_netlist(&cfg).unwrap();
        let ml = ckt.net(nets::ML).unwrap();
        ckt.add_element(
            "periphery.c_ml",
            ElementKind::Capacitor {
                a: ml,
                b: crate::circuit::GND,
                farads: DEFAULT_C_ML_F,
            },
        );
        let vsec = cfg.supplies.vsec_v;
        let t_end = 400e-9;
        let mut s = PhaseSchedule::new("hold", cfg.clock_period_s, t_end);
        s.set_waveform(nets::CUE, PwlWaveform::ramp(0.0, 2e-9, 0.0, vsec));
        s.set_waveform(nets::CUE_BAR, PwlWaveform::constant(0.0));
        s.set_waveform(nets::PSW, PwlWaveform::constant(0.0));
        s.set_waveform(nets::SW, PwlWaveform::constant(0.0));
        s.set_waveform(nets::EN, PwlWaveform::constant(0.0));
        s.set_waveform(nets::PRE, PwlWaveform::constant(cfg.supplies.vdd_v));
        let trace = transient_solve(&ckt, &s, 0.1e-9, t_end, &Default::default(), &solver())
            .unwrap();
        // Average cue-driver current over the final 50 ns.
        let q1 = trace.source_charge_at("cue", 350e-9);
        let q2 = trace.source_charge_at("cue", 400e-9);
        let i_avg = (q2 - q1) / 50e-9;
        assert!(i_avg.abs() < 1e-9, "settled cue current {i_avg}");
    }

    #[test]
    fn config_validation_rejects_out_of_range_vsec() {
        let mut cfg = CellConfig::default();
        cfg.supplies.vsec_v = 0.8;
        assert!(cfg.validate().is_err());
        cfg.supplies.vsec_v = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_exports_waveform_table() {
        let cfg = CellConfig::default();
        let s = schedule_car(CueValue::One, &cfg);
        let csv = s.to_csv();
        assert!(csv.contains("cue,"));
        assert!(csv.contains("pre,"));
    }
}
