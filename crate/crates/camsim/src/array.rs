//! Match-line columns and the 64x64 array: data/cue words, search execution,
//! latch-comparator decisions, AAR row reads, and energy accounting.
//!
//! Data is stored column-wise; one column's cells share a match-line,
//! pre/en/sw run per column, and cue/cue_bar/psw run per row. A search
//! simulates one column; the parallel-array view runs the columns
//! independently and charges each row driver once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell::{
    add_cell_instance, car_control_schedule, car_cue_waveforms, nets, CarTiming, CellConfig,
    CueValue,
};
use crate::circuit::schedule::{markers, PhaseSchedule};
use crate::circuit::transient::{transient_solve, TransientTrace};
use crate::circuit::{Circuit, ElementKind, NetRole, SolverConfig, GND};
use crate::device::{ResistiveState, StateLabel};
use crate::error::{Error, Result};

/// Minimum AAR level separation for a usable reference.
pub const AAR_MIN_SEPARATION_V: f64 = 10e-3;

/// Array geometry, line parasitics, and comparator references.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Match-line capacitance per column (F).
    pub c_ml_f: f64,
    /// psw line capacitance per row (F).
    pub c_psw_f: f64,
    /// Extra load a heavy driver charges, per 64 cells driven (F).
    pub driver_load_f: f64,
    pub cell: CellConfig,
    /// CAR comparator reference; set by calibration.
    pub vref_car_v: Option<f64>,
    /// AAR comparator reference; set by calibration.
    pub vref_aar_v: Option<f64>,
    /// Input-referred comparator offset sigma (V); 0 disables.
    pub comparator_offset_sigma_v: f64,
    pub seed: u64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            rows: 64,
            cols: 64,
            c_ml_f: 50e-15,
            c_psw_f: 100e-15,
            driver_load_f: 20e-15,
            cell: CellConfig::default(),
            vref_car_v: None,
            vref_aar_v: None,
            comparator_offset_sigma_v: 0.0,
            seed: 0,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("rows and cols must be at least 1"));
        }
        for (name, v) in [
            ("c_ml_f", self.c_ml_f),
            ("c_psw_f", self.c_psw_f),
            ("driver_load_f", self.driver_load_f),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.comparator_offset_sigma_v < 0.0 {
            return Err(Error::invalid("comparator offset sigma must be >= 0"));
        }
        self.cell.validate()
    }

    fn vref_car(&self) -> Result<f64> {
        self.vref_car_v
            .ok_or_else(|| Error::Calibration("vref_car is not calibrated".into()))
    }

    fn vref_aar(&self) -> Result<f64> {
        self.vref_aar_v
            .ok_or_else(|| Error::Calibration("vref_aar is not calibrated".into()))
    }

    /// Effective transient step for this configuration.
    pub fn dt_s(&self, solver: &SolverConfig) -> f64 {
        solver.dt_s.min(self.cell.max_dt_s())
    }
}

/// A stored column word, one resistive state per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataWord(pub Vec<ResistiveState>);

/// A searched word, one cue value per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueWord(pub Vec<CueValue>);

impl DataWord {
    /// Parse 'H'/'L' characters against the config's state palette.
    pub fn parse(text: &str, cfg: &ArrayConfig) -> Result<Self> {
        let mut word = Vec::with_capacity(text.len());
        for (pos, ch) in text.chars().enumerate() {
            match ch {
                'H' | 'h' => word.push(cfg.cell.hrs.state),
                'L' | 'l' => word.push(cfg.cell.lrs.state),
                other => {
                    return Err(Error::invalid(format!(
                        "data pattern position {pos}: expected 'H' or 'L', got '{other}'"
                    )))
                }
            }
        }
        let w = DataWord(word);
        w.check_len(cfg.rows)?;
        Ok(w)
    }

    pub fn uniform(state: ResistiveState, rows: usize) -> Self {
        DataWord(vec![state; rows])
    }

    pub fn check_len(&self, rows: usize) -> Result<()> {
        if self.0.len() != rows {
            return Err(Error::invalid(format!(
                "data word length {} does not match rows = {rows}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl CueWord {
    /// Parse '1'/'0'/'X' characters.
    pub fn parse(text: &str, cfg: &ArrayConfig) -> Result<Self> {
        let mut word = Vec::with_capacity(text.len());
        for (pos, ch) in text.chars().enumerate() {
            match ch {
                '1' => word.push(CueValue::One),
                '0' => word.push(CueValue::Zero),
                'X' | 'x' => word.push(CueValue::DontCare),
                other => {
                    return Err(Error::invalid(format!(
                        "cue pattern position {pos}: expected '1', '0' or 'X', got '{other}'"
                    )))
                }
            }
        }
        let w = CueWord(word);
        w.check_len(cfg.rows)?;
        Ok(w)
    }

    pub fn uniform(value: CueValue, rows: usize) -> Self {
        CueWord(vec![value; rows])
    }

    pub fn check_len(&self, rows: usize) -> Result<()> {
        if self.0.len() != rows {
            return Err(Error::invalid(format!(
                "cue word length {} does not match rows = {rows}",
                self.0.len()
            )));
        }
        Ok(())
    }

    /// Pure-logic miss count against a stored word; the decision oracle.
    pub fn miss_count(&self, data: &DataWord) -> usize {
        self.0
            .iter()
            .zip(&data.0)
            .filter(|(cue, state)| cue.misses(state.label))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Hit,
    Miss,
}

/// Ideal clocked comparator: ties resolve toward Hit.
pub fn decide(ml_sample_v: f64, vref_v: f64) -> Decision {
    if ml_sample_v >= vref_v {
        Decision::Hit
    } else {
        Decision::Miss
    }
}

/// Comparator with an input-referred offset added to the sampled voltage.
pub fn decide_with_offset(ml_sample_v: f64, vref_v: f64, offset_v: f64) -> Decision {
    decide(ml_sample_v + offset_v, vref_v)
}

/// Deterministic Gaussian offset for a (seed, scenario) pair.
pub(crate) fn gaussian_offset(seed: u64, scenario_hash: u64, sigma_v: f64) -> f64 {
    if sigma_v == 0.0 {
        return 0.0;
    }
    let mut x = seed ^ scenario_hash.wrapping_mul(0x9e3779b97f4a7c15);
    let mut next = || {
        x = x.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    };
    let u1 = (next() >> 11) as f64 / (1u64 << 53) as f64;
    let u2 = (next() >> 11) as f64 / (1u64 << 53) as f64;
    let u1 = u1.max(1e-300);
    sigma_v * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn scenario_hash(data: &DataWord, cue: &CueWord) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |b: u64| {
        h ^= b;
        h = h.wrapping_mul(0x100000001b3);
    };
    for s in &data.0 {
        eat(match s.label {
            StateLabel::Hrs => 1,
            StateLabel::Lrs => 2,
            StateLabel::Custom => 3,
        });
    }
    for c in &cue.0 {
        eat(match c {
            CueValue::One => 5,
            CueValue::Zero => 6,
            CueValue::DontCare => 7,
        });
    }
    h
}

/// Build one column: `rows` cells share the match-line with `c_ml_f`;
/// pre/en/sw are column-shared; cue/cue_bar/psw run per row. Row-driver
/// loads carry this column's share (1/cols) of the row-line parasitics.
pub fn build_matchline(data: &DataWord, cfg: &ArrayConfig) -> Result<Circuit> {
    cfg.validate()?;
    data.check_len(cfg.rows)?;

    let mut ckt = Circuit::new();
    let ml = ckt.add_net(nets::ML, NetRole::Ml);
    let sw = ckt.add_net(nets::SW, NetRole::Sw);
    let pre = ckt.add_net(nets::PRE, NetRole::Pre);
    let en = ckt.add_net(nets::EN, NetRole::En);
    for (name, net) in [("sw", sw), ("pre", pre), ("en", en)] {
        ckt.add_element(name, ElementKind::PwlSource { net, wf: None });
    }

    ckt.add_element(
        "periphery.c_ml",
        ElementKind::Capacitor {
            a: ml,
            b: GND,
            farads: cfg.c_ml_f,
        },
    );
    let rail = ckt.add_net(nets::VSEC_RAIL, NetRole::Vsec);
    ckt.add_element(
        "pre",
        ElementKind::FixedSource {
            net: rail,
            volts: cfg.cell.supplies.vsec_v,
        },
    );
    ckt.add_element(
        "periphery.pre_switch",
        ElementKind::Switch {
            a: rail,
            b: ml,
            ctrl: pre,
            r_on_ohms: cfg.cell.pre_switch_r_ohms,
            active_high: false,
            threshold_v: cfg.cell.supplies.vdd_v / 2.0,
        },
    );

    // Column-driver loads: pre/en/sw serve `rows` cells each.
    let col_load = cfg.driver_load_f * cfg.rows as f64 / 64.0;
    for (name, net) in [("sw", sw), ("pre", pre), ("en", en)] {
        ckt.add_element(
            &format!("periphery.load.{name}"),
            ElementKind::Capacitor {
                a: net,
                b: GND,
                farads: col_load,
            },
        );
    }

    // Row-driver loads and psw line share attributed to this column.
    let row_load = cfg.driver_load_f / cfg.cols as f64;
    let psw_line_share = cfg.c_psw_f / cfg.cols as f64;
    for row in 0..cfg.rows {
        let cue = ckt.add_net(&format!("cue_{row}"), NetRole::Cue);
        let cue_bar = ckt.add_net(&format!("cue_bar_{row}"), NetRole::CueBar);
        let psw = ckt.add_net(&format!("psw_{row}"), NetRole::Psw);
        ckt.add_element("cue", ElementKind::PwlSource { net: cue, wf: None });
        ckt.add_element("cue_bar", ElementKind::PwlSource { net: cue_bar, wf: None });
        ckt.add_element("psw", ElementKind::PwlSource { net: psw, wf: None });
        for (name, net) in [("cue", cue), ("cue_bar", cue_bar)] {
            ckt.add_element(
                &format!("periphery.load.{name}"),
                ElementKind::Capacitor {
                    a: net,
                    b: GND,
                    farads: row_load,
                },
            );
        }
        ckt.add_element(
            "periphery.load.psw",
            ElementKind::Capacitor {
                a: psw,
                b: GND,
                farads: row_load + psw_line_share,
            },
        );
        add_cell_instance(
            &mut ckt,
            &cfg.cell,
            &state_params(&cfg.cell, data.0[row]),
            &format!("r{row}_"),
            cue,
            cue_bar,
            psw,
            sw,
            en,
            ml,
        );
    }
    Ok(ckt)
}

fn state_params(cell: &CellConfig, state: ResistiveState) -> crate::device::RramParams {
    match state.label {
        StateLabel::Lrs => cell.lrs,
        StateLabel::Hrs => cell.hrs,
        StateLabel::Custom => {
            let mut p = cell.rram;
            p.state = state;
            p
        }
    }
}

/// CAR schedule for a full cue word: shared sw/pre/en controls plus per-row
/// cue/cue_bar/psw waveforms.
pub fn schedule_car_word(cue: &CueWord, cfg: &ArrayConfig) -> PhaseSchedule {
    let timing = CarTiming::from_config(&cfg.cell);
    let mut s = car_control_schedule(&cfg.cell, &timing);
    for (row, value) in cue.0.iter().enumerate() {
        let (cue_wf, cue_bar_wf, psw_wf) = car_cue_waveforms(*value, &cfg.cell, &timing);
        s.set_waveform(&format!("cue_{row}"), cue_wf);
        s.set_waveform(&format!("cue_bar_{row}"), cue_bar_wf);
        s.set_waveform(&format!("psw_{row}"), psw_wf);
    }
    s
}

/// Per-phase, per-driver energy report with the core/periphery split and
/// per-bit-search normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Source energy split at the evaluate-start marker (J).
    pub per_phase_j: BTreeMap<String, f64>,
    /// Source energy per driver class (J).
    pub per_driver_j: BTreeMap<String, f64>,
    /// Energy dissipated inside cell elements (J).
    pub core_j: f64,
    /// Everything else delivered by the sources (J).
    pub periphery_j: f64,
    pub total_source_j: f64,
    /// Change in stored capacitor energy over the window (J).
    pub stored_delta_j: f64,
    pub dissipated_j: f64,
    /// total / (rows * searches).
    pub per_bit_search_j: f64,
}

/// Split the trace's source energy by phase marker and driver class and
/// compute the core-vs-periphery view. Core is dissipation in cell-labelled
/// elements; periphery is the rest of the delivered energy.
///
/// The accounting window ends at the sample marker: the operation is over
/// once the comparator has its input, and the between-operation clear
/// belongs to the next search's budget.
pub fn account_energy(trace: &TransientTrace, rows: usize, searches: usize) -> Result<EnergyReport> {
    let t_last = *trace.times.last().unwrap_or(&0.0);
    let t_end = trace.markers.get(markers::SAMPLE).copied().unwrap_or(t_last);
    let t_eval = trace
        .markers
        .get(markers::EVALUATE_START)
        .copied()
        .unwrap_or(t_end);

    let mut per_phase = BTreeMap::new();
    let mut pre_charge = 0.0;
    let mut evaluate = 0.0;
    let mut per_driver: BTreeMap<String, f64> = BTreeMap::new();
    for class in ["cue", "cue_bar", "psw", "pre", "en", "sw", "comparators"] {
        per_driver.insert(class.to_string(), 0.0);
    }
    let mut total = 0.0;
    for (label, series) in &trace.source_energy {
        let _ = series;
        let end = trace.source_energy_at(label, t_end);
        let at_eval = trace.source_energy_at(label, t_eval);
        pre_charge += at_eval;
        evaluate += end - at_eval;
        total += end;
        *per_driver.entry(label.clone()).or_insert(0.0) += end;
    }
    per_phase.insert("pre_charge".to_string(), pre_charge);
    per_phase.insert("evaluate".to_string(), evaluate);

    let core: f64 = trace
        .dissipation
        .keys()
        .filter(|label| label.starts_with("core"))
        .map(|label| trace.dissipation_at(label, t_end))
        .sum();
    let dissipated: f64 = trace
        .dissipation
        .keys()
        .map(|label| trace.dissipation_at(label, t_end))
        .sum();
    let stored_delta = {
        let at_end = crate::circuit::transient::interp(&trace.times, &trace.stored_energy, t_end);
        at_end - *trace.stored_energy.first().unwrap_or(&0.0)
    };

    Ok(EnergyReport {
        per_phase_j: per_phase,
        per_driver_j: per_driver,
        core_j: core,
        periphery_j: total - core,
        total_source_j: total,
        stored_delta_j: stored_delta,
        dissipated_j: dissipated,
        per_bit_search_j: total / (rows.max(1) as f64 * searches.max(1) as f64),
    })
}

/// Outcome of one column search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub ml_sample_v: f64,
    pub decision: Decision,
    /// Pure-logic miss count, the decision oracle.
    pub miss_count_truth: usize,
    pub energy: EnergyReport,
}

/// Run one content-addressable search on a column. Requires a calibrated
/// CAR reference.
pub fn run_search(
    data: &DataWord,
    cue: &CueWord,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<SearchOutcome> {
    let vref = cfg.vref_car()?;
    let (trace, schedule) = run_search_trace(data, cue, cfg, solver)?;
    let ml_sample_v = trace.voltage_at(nets::ML, schedule.marker(markers::SAMPLE)?)?;
    let offset = gaussian_offset(
        cfg.seed,
        scenario_hash(data, cue),
        cfg.comparator_offset_sigma_v,
    );
    Ok(SearchOutcome {
        ml_sample_v,
        decision: decide_with_offset(ml_sample_v, vref, offset),
        miss_count_truth: cue.miss_count(data),
        energy: account_energy(&trace, cfg.rows, 1)?,
    })
}

/// Transient run behind [`run_search`], exposed for calibration and
/// measurements that do not need a comparator reference.
pub fn run_search_trace(
    data: &DataWord,
    cue: &CueWord,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<(TransientTrace, PhaseSchedule)> {
    data.check_len(cfg.rows)?;
    cue.check_len(cfg.rows)?;
    let ckt = build_matchline(data, cfg)?;
    let schedule = schedule_car_word(cue, cfg);
    let trace = transient_solve(
        &ckt,
        &schedule,
        cfg.dt_s(solver),
        schedule.t_end_s,
        &Default::default(),
        solver,
    )?;
    Ok((trace, schedule))
}

/// Sampled match-line voltage for a (data, cue) pair, without a decision.
pub fn ml_sample(
    data: &DataWord,
    cue: &CueWord,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<f64> {
    let (trace, schedule) = run_search_trace(data, cue, cfg, solver)?;
    trace.voltage_at(nets::ML, schedule.marker(markers::SAMPLE)?)
}

/// CAR calibration: place the reference at the midpoint between the lowest
/// all-hit level and the highest worst-case 1-bit-miss level over the four
/// canonical data patterns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarCalibration {
    pub vref_car_v: f64,
    pub min_hit_v: f64,
    pub max_worst_miss_v: f64,
    pub gap_v: f64,
}

/// The four canonical word patterns at length `rows`: all-HRS, all-LRS,
/// (n-1) HRS + 1 LRS, 1 HRS + (n-1) LRS. The minority bit sits at the last
/// row.
pub fn canonical_data_patterns(cfg: &ArrayConfig) -> [DataWord; 4] {
    let n = cfg.rows;
    let h = cfg.cell.hrs.state;
    let l = cfg.cell.lrs.state;
    let mut p3 = vec![h; n];
    p3[n - 1] = l;
    let mut p4 = vec![l; n];
    p4[n - 1] = h;
    [
        DataWord(vec![h; n]),
        DataWord(vec![l; n]),
        DataWord(p3),
        DataWord(p4),
    ]
}

/// Cue patterns matching [`canonical_data_patterns`] bit-for-bit.
pub fn canonical_cue_patterns(cfg: &ArrayConfig) -> [CueWord; 4] {
    let n = cfg.rows;
    let mut p3 = vec![CueValue::One; n];
    p3[n - 1] = CueValue::Zero;
    let mut p4 = vec![CueValue::Zero; n];
    p4[n - 1] = CueValue::One;
    [
        CueWord(vec![CueValue::One; n]),
        CueWord(vec![CueValue::Zero; n]),
        CueWord(p3),
        CueWord(p4),
    ]
}

/// Index pairs (cue, data) of the worst-case 1-bit misses in the canonical
/// 4x4 matrix.
pub const WORST_MISS_CELLS: [(usize, usize); 4] = [(0, 2), (1, 3), (2, 0), (3, 1)];

pub fn calibrate_vref_car(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<CarCalibration> {
    let data = canonical_data_patterns(cfg);
    let cues = canonical_cue_patterns(cfg);

    let mut min_hit = f64::INFINITY;
    for k in 0..4 {
        let v = ml_sample(&data[k], &cues[k], cfg, solver)?;
        min_hit = min_hit.min(v);
    }
    let mut max_miss = f64::NEG_INFINITY;
    for (c, d) in WORST_MISS_CELLS {
        let v = ml_sample(&data[d], &cues[c], cfg, solver)?;
        max_miss = max_miss.max(v);
    }
    if min_hit <= max_miss {
        return Err(Error::Calibration(format!(
            "hit/miss levels overlap: min hit {min_hit:.4} V <= max worst miss {max_miss:.4} V"
        )));
    }
    Ok(CarCalibration {
        vref_car_v: 0.5 * (min_hit + max_miss),
        min_hit_v: min_hit,
        max_worst_miss_v: max_miss,
        gap_v: min_hit - max_miss,
    })
}

/// One AAR row: the cell plus the psw charge tank and its clr/sec periphery
/// switches. cue and cue_bar stay grounded.
pub fn build_aar_row(state: ResistiveState, cfg: &ArrayConfig) -> Result<Circuit> {
    cfg.validate()?;
    let cell = &cfg.cell;
    let mut ckt = Circuit::new();
    let cue = ckt.add_net(nets::CUE, NetRole::Cue);
    let cue_bar = ckt.add_net(nets::CUE_BAR, NetRole::CueBar);
    let psw = ckt.add_net(nets::PSW, NetRole::Psw);
    let sw = ckt.add_net(nets::SW, NetRole::Sw);
    let en = ckt.add_net(nets::EN, NetRole::En);
    let ml = ckt.add_net(nets::ML, NetRole::Ml);
    let clr = ckt.add_net(nets::CLR, NetRole::Clr);
    let sec = ckt.add_net(nets::SEC, NetRole::Sec);
    for (name, net) in [
        ("cue", cue),
        ("cue_bar", cue_bar),
        ("sw", sw),
        ("en", en),
        ("clr", clr),
        ("sec", sec),
    ] {
        ckt.add_element(name, ElementKind::PwlSource { net, wf: None });
    }

    // psw is a floating charge tank reached only through the periphery
    // switches.
    ckt.add_element(
        "periphery.c_psw",
        ElementKind::Capacitor {
            a: psw,
            b: GND,
            farads: cfg.c_psw_f,
        },
    );
    ckt.add_element(
        "periphery.clr_switch",
        ElementKind::Switch {
            a: psw,
            b: GND,
            ctrl: clr,
            r_on_ohms: 1e3,
            active_high: true,
            threshold_v: cell.supplies.vdd_v / 2.0,
        },
    );
    let sec_rail = ckt.add_net("vsec_rail_sec", NetRole::Vsec);
    ckt.add_element(
        "psw",
        ElementKind::FixedSource {
            net: sec_rail,
            volts: cell.supplies.vsec_v,
        },
    );
    ckt.add_element(
        "periphery.sec_switch",
        ElementKind::Switch {
            a: sec_rail,
            b: psw,
            ctrl: sec,
            r_on_ohms: 1e3,
            active_high: true,
            threshold_v: cell.supplies.vdd_v / 2.0,
        },
    );

    // Column driver load on sw; the sw driver serves the whole column.
    ckt.add_element(
        "periphery.load.sw",
        ElementKind::Capacitor {
            a: sw,
            b: GND,
            farads: cfg.driver_load_f * cfg.rows as f64 / 64.0,
        },
    );

    add_cell_instance(
        &mut ckt,
        cell,
        &state_params(cell, state),
        "",
        cue,
        cue_bar,
        psw,
        sw,
        en,
        ml,
    );
    Ok(ckt)
}

/// Outcome of one AAR row read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AarReadOutcome {
    pub bit: u8,
    pub psw_sample_v: f64,
    pub energy: EnergyReport,
}

/// Sampled psw level for one stored state, without a comparator.
pub fn aar_level(
    state: ResistiveState,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<(TransientTrace, PhaseSchedule)> {
    let ckt = build_aar_row(state, cfg)?;
    let schedule = crate::cell::schedule_aar(&cfg.cell);
    let trace = transient_solve(
        &ckt,
        &schedule,
        cfg.dt_s(solver),
        schedule.t_end_s,
        &Default::default(),
        solver,
    )?;
    Ok((trace, schedule))
}

/// Read one row: charge the psw tank, let it discharge through the device,
/// compare against the AAR reference. HRS reads '1', LRS reads '0'.
pub fn run_aar_row(
    state: ResistiveState,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<AarReadOutcome> {
    let vref = cfg.vref_aar()?;
    let (trace, schedule) = aar_level(state, cfg, solver)?;
    let psw_sample_v = trace.voltage_at(nets::PSW, schedule.marker(markers::SAMPLE)?)?;
    let offset = gaussian_offset(cfg.seed, 0x5157, cfg.comparator_offset_sigma_v);
    let bit = if psw_sample_v + offset >= vref { 1 } else { 0 };
    Ok(AarReadOutcome {
        bit,
        psw_sample_v,
        energy: account_energy(&trace, 1, 1)?,
    })
}

/// AAR calibration from the two state extremes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AarCalibration {
    pub vref_aar_v: f64,
    pub hrs_level_v: f64,
    pub lrs_level_v: f64,
    pub separation_v: f64,
}

pub fn calibrate_vref_aar(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<AarCalibration> {
    let sample = |state: ResistiveState| -> Result<f64> {
        let (trace, schedule) = aar_level(state, cfg, solver)?;
        trace.voltage_at(nets::PSW, schedule.marker(markers::SAMPLE)?)
    };
    let hrs = sample(cfg.cell.hrs.state)?;
    let lrs = sample(cfg.cell.lrs.state)?;
    let separation = hrs - lrs;
    if separation < AAR_MIN_SEPARATION_V {
        return Err(Error::Calibration(format!(
            "AAR levels are not separable: HRS {hrs:.4} V vs LRS {lrs:.4} V \
             (separation {separation:.4e} V < {AAR_MIN_SEPARATION_V:.1e} V)"
        )));
    }
    Ok(AarCalibration {
        vref_aar_v: 0.5 * (hrs + lrs),
        hrs_level_v: hrs,
        lrs_level_v: lrs,
        separation_v: separation,
    })
}

/// Run the same cue against every column and aggregate. Row-driver energy is
/// charged once per row by construction: each column's circuit carries a
/// 1/cols share of the row-line loads.
pub fn array_search_parallel(
    all_data: &[DataWord],
    cue: &CueWord,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<Vec<SearchOutcome>> {
    if all_data.len() != cfg.cols {
        return Err(Error::invalid(format!(
            "expected {} columns, got {}",
            cfg.cols,
            all_data.len()
        )));
    }
    use rayon::prelude::*;
    let results: Vec<Result<SearchOutcome>> = all_data
        .par_iter()
        .map(|data| run_search(data, cue, cfg, solver))
        .collect();
    let failures: Vec<String> = results
        .iter()
        .enumerate()
        .filter_map(|(col, r)| r.as_ref().err().map(|e| format!("column {col}: {e}")))
        .collect();
    if !failures.is_empty() {
        return Err(Error::invalid(format!(
            "{} column(s) failed: {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

/// Aggregate per-bit energy across a parallel search: totals summed over
/// columns, normalized by rows x columns.
pub fn aggregate_per_bit_j(outcomes: &[SearchOutcome], rows: usize) -> f64 {
    let total: f64 = outcomes.iter().map(|o| o.energy.total_source_j).sum();
    total / (rows as f64 * outcomes.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ArrayConfig {
        ArrayConfig {
            rows: 4,
            cols: 4,
            ..ArrayConfig::default()
        }
    }

    fn solver() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn word_parsers_reject_bad_positions() {
        let cfg = small_cfg();
        let err = DataWord::parse("HHXa"[..4].into(), &cfg).unwrap_err();
        assert!(err.to_string().contains("position 2"));
        let err = CueWord::parse("10Z1", &cfg).unwrap_err();
        assert!(err.to_string().contains("position 2"));
        assert!(DataWord::parse("HH", &cfg).is_err());
    }

    #[test]
    fn miss_count_oracle() {
        let cfg = small_cfg();
        let data = DataWord::parse("HHLL", &cfg).unwrap();
        let cue = CueWord::parse("10X0", &cfg).unwrap();
        // row0: 1 vs H hit; row1: 0 vs H miss; row2: X never; row3: 0 vs L hit.
        assert_eq!(cue.miss_count(&data), 1);
    }

    #[test]
    fn comparator_decision_rules() {
        assert_eq!(decide(0.905, 0.887), Decision::Hit);
        assert_eq!(decide(0.869, 0.887), Decision::Miss);
        // Tie resolves toward Hit.
        assert_eq!(decide(0.887, 0.887), Decision::Hit);
    }

    #[test]
    fn gaussian_offset_deterministic_and_zero_at_sigma_zero() {
        assert_eq!(gaussian_offset(1, 2, 0.0), 0.0);
        let a = gaussian_offset(42, 7, 5e-3);
        let b = gaussian_offset(42, 7, 5e-3);
        assert_eq!(a, b);
        assert!(a.abs() < 0.05);
    }

    #[test]
    fn single_row_matchline_matches_cell_plus_cml() {
        // rows = 1: the netlist is the single cell plus c_ml_f and loads.
        let mut cfg = small_cfg();
        cfg.rows = 1;
        let data = DataWord::uniform(cfg.cell.hrs.state, 1);
        let ckt = build_matchline(&data, &cfg).unwrap();
        assert!(ckt.net("mid").is_none());
        assert!(ckt.net("r0_mid").is_some());
        let kinds = ckt
            .elements
            .iter()
            .filter(|e| e.label.starts_with("core"))
            .count();
        assert_eq!(kinds, 5); // rram, c_mr, c_b, q1, q2q3
    }

    #[test]
    fn calibrated_search_separates_hit_and_miss() {
        let mut cfg = small_cfg();
        let cal = calibrate_vref_car(&cfg, &solver()).unwrap();
        assert!(cal.gap_v > 5e-3, "gap {}", cal.gap_v);
        cfg.vref_car_v = Some(cal.vref_car_v);

        let data = DataWord::uniform(cfg.cell.hrs.state, cfg.rows);
        let hit = run_search(&data, &CueWord::uniform(CueValue::One, cfg.rows), &cfg, &solver())
            .unwrap();
        assert_eq!(hit.decision, Decision::Hit);
        assert_eq!(hit.miss_count_truth, 0);

        let mut cue = vec![CueValue::One; cfg.rows];
        cue[0] = CueValue::Zero;
        let miss = run_search(&data, &CueWord(cue), &cfg, &solver()).unwrap();
        assert_eq!(miss.decision, Decision::Miss);
        assert_eq!(miss.miss_count_truth, 1);
    }

    #[test]
    fn dont_care_word_always_hits_near_rail() {
        let mut cfg = small_cfg();
        let cal = calibrate_vref_car(&cfg, &solver()).unwrap();
        cfg.vref_car_v = Some(cal.vref_car_v);
        let data = DataWord::parse("HLHL", &cfg).unwrap();
        let out = run_search(
            &data,
            &CueWord::uniform(CueValue::DontCare, cfg.rows),
            &cfg,
            &solver(),
        )
        .unwrap();
        assert_eq!(out.decision, Decision::Hit);
        let vsec = cfg.cell.supplies.vsec_v;
        assert!((out.ml_sample_v - vsec).abs() / vsec < 0.05);
    }

    #[test]
    fn energy_report_parts_sum_to_total() {
        let mut cfg = small_cfg();
        cfg.vref_car_v = Some(1.0);
        let data = DataWord::uniform(cfg.cell.hrs.state, cfg.rows);
        let out = run_search(&data, &CueWord::uniform(CueValue::One, cfg.rows), &cfg, &solver())
            .unwrap();
        let e = &out.energy;
        let phases: f64 = e.per_phase_j.values().sum();
        let drivers: f64 = e.per_driver_j.values().sum();
        assert!((phases - e.total_source_j).abs() <= 1e-3 * e.total_source_j.abs().max(1e-30));
        assert!((drivers - e.total_source_j).abs() <= 1e-3 * e.total_source_j.abs().max(1e-30));
        assert!((e.core_j + e.periphery_j - e.total_source_j).abs() <= 1e-12);
        // Energy closure: sources = change in stored + dissipated.
        let closure = (e.total_source_j - e.stored_delta_j - e.dissipated_j).abs();
        assert!(closure <= 1e-2 * e.total_source_j, "closure {closure}");
    }

    #[test]
    fn aar_levels_separate_and_read_correctly() {
        let mut cfg = small_cfg();
        let cal = calibrate_vref_aar(&cfg, &solver()).unwrap();
        // The psw tank gives up ~6 % of its charge to the cleared cell
        // capacitances through Q1 before the device leak matters.
        assert!(cal.hrs_level_v > 0.9 * cfg.cell.supplies.vsec_v);
        assert!(cal.lrs_level_v < cal.hrs_level_v);
        cfg.vref_aar_v = Some(cal.vref_aar_v);

        let hrs = run_aar_row(cfg.cell.hrs.state, &cfg, &solver()).unwrap();
        assert_eq!(hrs.bit, 1);
        let lrs = run_aar_row(cfg.cell.lrs.state, &cfg, &solver()).unwrap();
        assert_eq!(lrs.bit, 0);
    }

    #[test]
    fn oversized_psw_tank_flags_uncalibratable() {
        let mut cfg = small_cfg();
        cfg.c_psw_f *= 10.0;
        match calibrate_vref_aar(&cfg, &solver()) {
            Err(Error::Calibration(msg)) => assert!(msg.contains("separable")),
            other => panic!("expected calibration failure, got {other:?}"),
        }
    }

    #[test]
    fn parallel_columns_are_deterministic_and_independent() {
        let mut cfg = small_cfg();
        let cal = calibrate_vref_car(&cfg, &solver()).unwrap();
        cfg.vref_car_v = Some(cal.vref_car_v);
        let data: Vec<DataWord> = (0..cfg.cols)
            .map(|_| DataWord::uniform(cfg.cell.hrs.state, cfg.rows))
            .collect();
        let cue = CueWord::uniform(CueValue::One, cfg.rows);
        let a = array_search_parallel(&data, &cue, &cfg, &solver()).unwrap();
        let b = array_search_parallel(&data, &cue, &cfg, &solver()).unwrap();
        assert_eq!(a.len(), cfg.cols);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.decision, y.decision);
            assert_eq!(x.ml_sample_v.to_bits(), y.ml_sample_v.to_bits());
        }
        // Identical columns produce identical outcomes.
        for o in &a {
            assert_eq!(o.ml_sample_v.to_bits(), a[0].ml_sample_v.to_bits());
        }
    }
}
