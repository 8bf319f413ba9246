//! Desk-scale experiment harnesses: the functional 4x4 search suite, hit/miss
//! gap extraction, V_SEC and corner sweeps, search timing, energy maps, the
//! write ESR sweep, and the AAR read suite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{
    account_energy, calibrate_vref_aar, calibrate_vref_car, canonical_cue_patterns,
    canonical_data_patterns, ml_sample, run_aar_row, run_search, run_search_trace, ArrayConfig,
    CueWord, DataWord, Decision, EnergyReport, WORST_MISS_CELLS,
};
use crate::cell::{build_write_stack_with_esr, nets, CueValue, WriteDirection};
use crate::circuit::dc::{dc_operating_point, dc_source_current};
use crate::circuit::measure::{measure_delay, CrossDirection, Crossing};
use crate::circuit::schedule::markers;
use crate::circuit::SolverConfig;
use crate::device::StateLabel;
use crate::error::{Error, Result};

/// Measured-silicon reference figures at the shipped operating point,
/// carried in reports for side-by-side reading; never asserted (they depend
/// on a foundry PDK this behavioral model replaces).
pub const REFERENCE_GAP_V: f64 = 36.18e-3;
pub const REFERENCE_DEVELOPING_DELAY_HRS_S: f64 = 143e-12;
pub const REFERENCE_DEVELOPING_DELAY_LRS_S: f64 = 163e-12;
pub const REFERENCE_SEARCH_DELAY_S: f64 = 1.163e-9;

/// Process corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CornerName {
    Ff,
    Fs,
    Tt,
    Sf,
    Ss,
}

impl std::str::FromStr for CornerName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ff" => Ok(CornerName::Ff),
            "fs" => Ok(CornerName::Fs),
            "tt" => Ok(CornerName::Tt),
            "sf" => Ok(CornerName::Sf),
            "ss" => Ok(CornerName::Ss),
            other => Err(Error::invalid(format!(
                "unknown corner '{other}' (expected ff, fs, tt, sf, ss)"
            ))),
        }
    }
}

/// Threshold/transconductance multipliers applied to every transistor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerModel {
    pub name: CornerName,
    pub vth_scale: f64,
    pub k_scale: f64,
}

impl CornerModel {
    pub fn shipped(name: CornerName) -> Self {
        let (vth_scale, k_scale) = match name {
            CornerName::Ff => (0.90, 1.10),
            CornerName::Fs => (0.95, 1.05),
            CornerName::Tt => (1.00, 1.00),
            CornerName::Sf => (1.05, 0.95),
            CornerName::Ss => (1.10, 0.90),
        };
        CornerModel {
            name,
            vth_scale,
            k_scale,
        }
    }

    pub fn all_shipped() -> [CornerModel; 5] {
        [
            CornerModel::shipped(CornerName::Ff),
            CornerModel::shipped(CornerName::Fs),
            CornerModel::shipped(CornerName::Tt),
            CornerModel::shipped(CornerName::Sf),
            CornerModel::shipped(CornerName::Ss),
        ]
    }

    /// Apply the multipliers to every transistor of the array config.
    pub fn apply(&self, cfg: &ArrayConfig) -> ArrayConfig {
        let mut out = cfg.clone();
        for q in [
            &mut out.cell.q1,
            &mut out.cell.q2,
            &mut out.cell.q3,
        ] {
            *q = q.scaled(self.vth_scale, self.k_scale);
        }
        out
    }
}

/// A one-parameter sweep plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Dotted parameter path; `supplies.vsec` is the supported knob.
    pub parameter: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepPlan {
    pub fn vsec(start: f64, stop: f64, step: f64) -> Self {
        SweepPlan {
            parameter: "supplies.vsec".to_string(),
            start,
            stop,
            step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameter != "supplies.vsec" {
            return Err(Error::invalid(format!(
                "unsupported sweep parameter '{}'",
                self.parameter
            )));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid("sweep step must be positive"));
        }
        if self.start > self.stop {
            return Err(Error::invalid("sweep start must not exceed stop"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let v = self.start + k as f64 * self.step;
            if v > self.stop + 1e-12 {
                break;
            }
            out.push(v);
            k += 1;
        }
        out
    }
}

/// Hit/miss gap extracted from the canonical pattern suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub min_hit_v: f64,
    pub max_worst_miss_v: f64,
    pub gap_v: f64,
    /// Sampled match-line voltage for every (cue, data) case, keyed
    /// `cue{i}_data{j}`.
    pub per_case_ml_v: std::collections::BTreeMap<String, f64>,
}

/// Full functional-suite report: the 4x4 decision matrix against the four
/// canonical patterns, the gap, and any decisions that disagree with the
/// match-logic oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table2Report {
    pub vref_car_v: f64,
    /// Measured-silicon reference for the same gap measurement point,
    /// carried for side-by-side reading; never asserted.
    pub reference_gap_v: f64,
    /// decisions[cue][data].
    pub decisions: [[Decision; 4]; 4],
    pub ml_sample_v: [[f64; 4]; 4],
    pub miss_count_truth: [[usize; 4]; 4],
    pub gap: GapReport,
    pub mismatches: Vec<DecisionMismatch>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionMismatch {
    pub cue_index: usize,
    pub data_index: usize,
    pub ml_sample_v: f64,
    pub expected: Decision,
    pub got: Decision,
}

/// Run the 4x4 functional suite with one calibrated reference. The expected
/// matrix is Hit on the diagonal and Miss elsewhere.
pub fn run_table2_suite(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<Table2Report> {
    let mut cfg = cfg.clone();
    if cfg.vref_car_v.is_none() {
        let cal = calibrate_vref_car(&cfg, solver)?;
        cfg.vref_car_v = Some(cal.vref_car_v);
    }
    let vref = cfg.vref_car_v.unwrap();

    let data = canonical_data_patterns(&cfg);
    let cues = canonical_cue_patterns(&cfg);

    let cases: Vec<(usize, usize)> = (0..4)
        .flat_map(|c| (0..4).map(move |d| (c, d)))
        .collect();
    let outcomes: Vec<_> = cases
        .par_iter()
        .map(|&(c, d)| run_search(&data[d], &cues[c], &cfg, solver).map(|o| (c, d, o)))
        .collect::<Result<Vec<_>>>()?;

    let mut decisions = [[Decision::Miss; 4]; 4];
    let mut ml = [[0.0f64; 4]; 4];
    let mut truth = [[0usize; 4]; 4];
    let mut per_case = std::collections::BTreeMap::new();
    let mut mismatches = Vec::new();
    for (c, d, o) in outcomes {
        decisions[c][d] = o.decision;
        ml[c][d] = o.ml_sample_v;
        truth[c][d] = o.miss_count_truth;
        per_case.insert(format!("cue{c}_data{d}"), o.ml_sample_v);
        let expected = if c == d { Decision::Hit } else { Decision::Miss };
        if o.decision != expected {
            mismatches.push(DecisionMismatch {
                cue_index: c,
                data_index: d,
                ml_sample_v: o.ml_sample_v,
                expected,
                got: o.decision,
            });
        }
    }

    let min_hit = (0..4).map(|k| ml[k][k]).fold(f64::INFINITY, f64::min);
    let max_miss = WORST_MISS_CELLS
        .iter()
        .map(|&(c, d)| ml[c][d])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Table2Report {
        vref_car_v: vref,
        reference_gap_v: REFERENCE_GAP_V,
        decisions,
        ml_sample_v: ml,
        miss_count_truth: truth,
        gap: GapReport {
            min_hit_v: min_hit,
            max_worst_miss_v: max_miss,
            gap_v: min_hit - max_miss,
            per_case_ml_v: per_case,
        },
        mismatches,
    })
}

/// Gap from the eight highlighted cases only (four all-hit diagonals, four
/// worst-case 1-bit misses); the working set of the V_SEC sweep.
pub fn measure_gap(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<GapReport> {
    let data = canonical_data_patterns(cfg);
    let cues = canonical_cue_patterns(cfg);
    let mut per_case = std::collections::BTreeMap::new();
    let mut min_hit = f64::INFINITY;
    for k in 0..4 {
        let v = ml_sample(&data[k], &cues[k], cfg, solver)?;
        per_case.insert(format!("cue{k}_data{k}"), v);
        min_hit = min_hit.min(v);
    }
    let mut max_miss = f64::NEG_INFINITY;
    for (c, d) in WORST_MISS_CELLS {
        let v = ml_sample(&data[d], &cues[c], cfg, solver)?;
        per_case.insert(format!("cue{c}_data{d}"), v);
        max_miss = max_miss.max(v);
    }
    Ok(GapReport {
        min_hit_v: min_hit,
        max_worst_miss_v: max_miss,
        gap_v: min_hit - max_miss,
        per_case_ml_v: per_case,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VsecSweepPoint {
    pub vsec_v: f64,
    pub gap_v: Option<f64>,
    pub min_hit_v: Option<f64>,
    pub max_worst_miss_v: Option<f64>,
    /// Solver failure for this point, if any; the sweep continues.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VsecSweepReport {
    pub corner: CornerModel,
    pub points: Vec<VsecSweepPoint>,
    pub argmax_vsec_v: Option<f64>,
    pub max_gap_v: Option<f64>,
    /// True when the successful points form a single-peaked curve.
    pub unimodal: bool,
}

/// Sweep V_SEC under one corner and report the gap curve and its argmax.
pub fn sweep_vsec(
    plan: &SweepPlan,
    corner: &CornerModel,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<VsecSweepReport> {
    plan.validate()?;
    let (lo, hi) = crate::cell::VSEC_RANGE_V;
    if plan.start < lo - 1e-12 || plan.stop > hi + 1e-12 {
        return Err(Error::invalid(format!(
            "sweep range [{}, {}] outside the V_SEC range [{lo}, {hi}]",
            plan.start, plan.stop
        )));
    }
    let corner_cfg = corner.apply(cfg);
    let points: Vec<VsecSweepPoint> = plan
        .values()
        .par_iter()
        .map(|&vsec| {
            let mut point_cfg = corner_cfg.clone();
            point_cfg.cell.supplies.vsec_v = vsec;
            match measure_gap(&point_cfg, solver) {
                Ok(gap) => VsecSweepPoint {
                    vsec_v: vsec,
                    gap_v: Some(gap.gap_v),
                    min_hit_v: Some(gap.min_hit_v),
                    max_worst_miss_v: Some(gap.max_worst_miss_v),
                    error: None,
                },
                Err(e) => VsecSweepPoint {
                    vsec_v: vsec,
                    gap_v: None,
                    min_hit_v: None,
                    max_worst_miss_v: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let argmax = points
        .iter()
        .filter_map(|p| p.gap_v.map(|g| (p.vsec_v, g)))
        .fold(None, |best: Option<(f64, f64)>, (v, g)| match best {
            Some((_, bg)) if bg >= g => best,
            _ => Some((v, g)),
        });
    let gaps: Vec<f64> = points.iter().filter_map(|p| p.gap_v).collect();
    Ok(VsecSweepReport {
        corner: *corner,
        points,
        argmax_vsec_v: argmax.map(|(v, _)| v),
        max_gap_v: argmax.map(|(_, g)| g),
        unimodal: is_unimodal(&gaps, 1e-6),
    })
}

/// Single-peaked within tolerance: non-decreasing up to the maximum, then
/// non-increasing. Boundary peaks count.
pub fn is_unimodal(values: &[f64], tol: f64) -> bool {
    if values.len() < 3 {
        return true;
    }
    let peak = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .unwrap();
    values[..peak].windows(2).all(|w| w[1] >= w[0] - tol)
        && values[peak..].windows(2).all(|w| w[1] <= w[0] + tol)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    /// Developing delay under 64-bit all-miss, searching for '1' (HRS).
    pub ml_developing_delay_hrs_s: Option<f64>,
    /// Same, searching for '0' (LRS).
    pub ml_developing_delay_lrs_s: Option<f64>,
    /// Pre-charge start to sample validity.
    pub search_delay_s: f64,
    pub pre_charge_split_s: f64,
    pub evaluate_split_s: f64,
    /// Threshold used for "fully discharged".
    pub discharge_threshold_v: f64,
    /// Reference silicon figures for the same quantities; never asserted.
    pub reference_developing_delay_hrs_s: f64,
    pub reference_developing_delay_lrs_s: f64,
    pub reference_search_delay_s: f64,
}

/// Developing delay: enable assert to the match-line falling through 10 % of
/// V_SEC under an all-miss word.
pub fn measure_search_timing(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<TimingReport> {
    let threshold = 0.1 * cfg.cell.supplies.vsec_v;
    let delay_for = |data: DataWord, cue: CueWord| -> Result<Option<f64>> {
        let (trace, schedule) = run_search_trace(&data, &cue, cfg, solver)?;
        let t_en = schedule.marker(markers::ENABLE)?;
        let cross = measure_delay(&trace, nets::ML, threshold, CrossDirection::Falling, t_en)?;
        Ok(match cross {
            Crossing::At { time_s } => Some(time_s - t_en),
            Crossing::NoCrossing => None,
        })
    };

    let rows = cfg.rows;
    let hrs_delay = delay_for(
        DataWord::uniform(cfg.cell.lrs.state, rows),
        CueWord::uniform(CueValue::One, rows),
    )?;
    let lrs_delay = delay_for(
        DataWord::uniform(cfg.cell.hrs.state, rows),
        CueWord::uniform(CueValue::Zero, rows),
    )?;

    let timing = crate::cell::CarTiming::from_config(&cfg.cell);
    Ok(TimingReport {
        ml_developing_delay_hrs_s: hrs_delay,
        ml_developing_delay_lrs_s: lrs_delay,
        search_delay_s: timing.t_sample - timing.t_cycle1,
        pre_charge_split_s: timing.t_eval_start - timing.t_cycle1,
        evaluate_split_s: timing.t_sample - timing.t_eval_start,
        discharge_threshold_v: threshold,
        reference_developing_delay_hrs_s: REFERENCE_DEVELOPING_DELAY_HRS_S,
        reference_developing_delay_lrs_s: REFERENCE_DEVELOPING_DELAY_LRS_S,
        reference_search_delay_s: REFERENCE_SEARCH_DELAY_S,
    })
}

/// RC-proportionality oracle for the developing delay: the all-miss
/// discharge repeated over match-line capacitance factors under a settled
/// operating point, so the pulldown current is constant and the crossing
/// time scales with the line capacitance alone.
///
/// The cue pair is held DC (searching '0' against all-HRS data), every mid
/// starts at its settled divider value, the line is pre-charged, and en
/// strobes with a fast edge once everything is quiescent.
pub fn delay_scaling_oracle(
    cfg: &ArrayConfig,
    solver: &SolverConfig,
    factors: &[f64],
) -> Result<Vec<(f64, f64)>> {
    use crate::circuit::waveform::PwlWaveform;

    let mut out = Vec::new();
    for &factor in factors {
        let mut scaled = cfg.clone();
        scaled.c_ml_f *= factor;
        let data = DataWord::uniform(scaled.cell.hrs.state, scaled.rows);
        let ckt = crate::array::build_matchline(&data, &scaled)?;

        let vsec = scaled.cell.supplies.vsec_v;
        let vdd = scaled.cell.supplies.vdd_v;
        let edge = 50e-12;
        // Pre-charge long enough to top up the largest swept line.
        let t_en = 4.5e-9;
        let t_end = 7e-9;
        let mut s = crate::circuit::schedule::PhaseSchedule::new(
            "delay_oracle",
            scaled.cell.clock_period_s,
            t_end,
        );
        s.set_waveform(nets::SW, PwlWaveform::constant(0.0));
        s.set_waveform(
            nets::PRE,
            PwlWaveform::pulse(0.2e-9, 4.2e-9, edge, vdd, 0.0),
        );
        s.set_waveform(nets::EN, PwlWaveform::pulse(t_en, t_en + 1.2e-9, edge, 0.0, vdd));
        for row in 0..scaled.rows {
            s.set_waveform(&format!("cue_{row}"), PwlWaveform::constant(0.0));
            s.set_waveform(&format!("cue_bar_{row}"), PwlWaveform::constant(vsec));
            s.set_waveform(&format!("psw_{row}"), PwlWaveform::constant(vsec));
        }
        s.set_marker(markers::ENABLE, t_en);
        s.set_marker(markers::SAMPLE, t_end - 0.1e-9);

        // Settled divider level on every mid.
        let cell = &scaled.cell;
        let v_mid = vsec * cell.c_b_f / (cell.c_b_f + cell.hrs.c_mr_f);
        let mut initial = std::collections::BTreeMap::new();
        for row in 0..scaled.rows {
            initial.insert(format!("r{row}_mid"), v_mid);
        }

        let dt = solver.dt_s.min(edge / 20.0);
        let trace =
            crate::circuit::transient::transient_solve(&ckt, &s, dt, t_end, &initial, solver)?;
        let cross = measure_delay(
            &trace,
            nets::ML,
            0.1 * vsec,
            CrossDirection::Falling,
            t_en,
        )?;
        match cross {
            Crossing::At { time_s } => out.push((factor, time_s - t_en)),
            Crossing::NoCrossing => {
                return Err(Error::invalid(format!(
                    "delay oracle at {factor}x c_ml never crossed the threshold"
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyMapReport {
    /// Per-bit-search energy, [cue][data] (J).
    pub per_bit_j: [[f64; 4]; 4],
    pub worst_case: (usize, usize),
    pub best_case: (usize, usize),
    /// Aggregate over the sixteen cases.
    pub total_j: f64,
    pub core_j: f64,
    pub core_share: f64,
    pub per_driver_j: std::collections::BTreeMap<String, f64>,
    pub per_phase_j: std::collections::BTreeMap<String, f64>,
    /// Per-bit energy of a one-cell column under the matching all-hit
    /// search, for the isolated-vs-line comparison.
    pub isolated_cell_per_bit_j: f64,
    pub line_per_bit_j: f64,
}

/// Per-bit energy for each canonical (cue, data) case plus the aggregate
/// core/periphery breakdown.
pub fn energy_map(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<EnergyMapReport> {
    let mut cfg = cfg.clone();
    if cfg.vref_car_v.is_none() {
        let cal = calibrate_vref_car(&cfg, solver)?;
        cfg.vref_car_v = Some(cal.vref_car_v);
    }
    let data = canonical_data_patterns(&cfg);
    let cues = canonical_cue_patterns(&cfg);

    let cases: Vec<(usize, usize)> = (0..4)
        .flat_map(|c| (0..4).map(move |d| (c, d)))
        .collect();
    let energies: Vec<(usize, usize, EnergyReport)> = cases
        .par_iter()
        .map(|&(c, d)| run_search(&data[d], &cues[c], &cfg, solver).map(|o| (c, d, o.energy)))
        .collect::<Result<Vec<_>>>()?;

    let mut per_bit = [[0.0f64; 4]; 4];
    let mut total = 0.0;
    let mut core = 0.0;
    let mut per_driver = std::collections::BTreeMap::new();
    let mut per_phase = std::collections::BTreeMap::new();
    for (c, d, e) in &energies {
        per_bit[*c][*d] = e.per_bit_search_j;
        total += e.total_source_j;
        core += e.core_j;
        for (k, v) in &e.per_driver_j {
            *per_driver.entry(k.clone()).or_insert(0.0) += v;
        }
        for (k, v) in &e.per_phase_j {
            *per_phase.entry(k.clone()).or_insert(0.0) += v;
        }
    }
    let mut worst = (0, 0, f64::NEG_INFINITY);
    let mut best = (0, 0, f64::INFINITY);
    for (c, row) in per_bit.iter().enumerate() {
        for (d, &e) in row.iter().enumerate() {
            if e > worst.2 {
                worst = (c, d, e);
            }
            if e < best.2 {
                best = (c, d, e);
            }
        }
    }

    // Isolated cell: a one-row column under the matching all-hit search.
    let mut iso_cfg = cfg.clone();
    iso_cfg.rows = 1;
    iso_cfg.vref_car_v = Some(0.0);
    let iso = run_search(
        &DataWord::uniform(iso_cfg.cell.hrs.state, 1),
        &CueWord::uniform(CueValue::One, 1),
        &iso_cfg,
        solver,
    )?;
    let line = run_search(&data[0], &cues[0], &cfg, solver)?;

    Ok(EnergyMapReport {
        per_bit_j: per_bit,
        worst_case: (worst.0, worst.1),
        best_case: (best.0, best.1),
        total_j: total,
        core_j: core,
        core_share: core / total,
        per_driver_j: per_driver,
        per_phase_j: per_phase,
        isolated_cell_per_bit_j: iso.energy.per_bit_search_j,
        line_per_bit_j: line.energy.per_bit_search_j,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsrPoint {
    pub r_ohms: f64,
    pub v_across_r_v: f64,
    pub i_a: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsrSweepReport {
    pub direction: WriteDirection,
    pub points: Vec<EsrPoint>,
}

/// Default logarithmic ESR grid over [10, 100k] Ohm.
pub fn default_esr_grid() -> Vec<f64> {
    let n = 25;
    (0..n)
        .map(|k| 10.0 * (1e4f64).powf(k as f64 / (n - 1) as f64))
        .collect()
}

/// Sweep a linear stand-in resistor through the write stack and record the
/// DC voltage and current across it.
pub fn write_esr_sweep(
    direction: WriteDirection,
    resistances: &[f64],
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<EsrSweepReport> {
    if resistances.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("ESR values must be positive"));
    }
    let vdd = cfg.cell.supplies.vdd_v;
    let points = resistances
        .iter()
        .map(|&r| {
            let run = || -> Result<(f64, f64)> {
                let ckt = build_write_stack_with_esr(&cfg.cell, r)?;
                let mut biases = std::collections::BTreeMap::new();
                let (v_cue, v_psw) = match direction {
                    WriteDirection::Forward => (vdd, 0.0),
                    WriteDirection::Reverse => (0.0, vdd),
                };
                biases.insert(nets::CUE.to_string(), v_cue);
                biases.insert(nets::PSW.to_string(), v_psw);
                biases.insert(nets::SW.to_string(), vdd);
                let sol = dc_operating_point(&ckt, &biases, solver)?;
                let v_r = (sol[nets::CUE] - sol[nets::MID]).abs();
                let i = dc_source_current(&ckt, &sol, if v_cue > 0.0 { nets::CUE } else { nets::PSW })?;
                Ok((v_r, i.abs()))
            };
            match run() {
                Ok((v_r, i)) => EsrPoint {
                    r_ohms: r,
                    v_across_r_v: v_r,
                    i_a: i,
                    error: None,
                },
                Err(e) => EsrPoint {
                    r_ohms: r,
                    v_across_r_v: f64::NAN,
                    i_a: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(EsrSweepReport { direction, points })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AarRead {
    pub row: usize,
    pub stored: StateLabel,
    pub bit: u8,
    pub psw_sample_v: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AarSuiteReport {
    pub vref_aar_v: f64,
    pub hrs_level_v: f64,
    pub lrs_level_v: f64,
    pub reads: Vec<AarRead>,
    pub misreads: usize,
    pub all_correct: bool,
}

/// Read every row in both states against a calibrated AAR reference.
/// A reference outside the measured level interval is a calibration failure,
/// not a silent misread.
pub fn run_aar_suite(cfg: &ArrayConfig, solver: &SolverConfig) -> Result<AarSuiteReport> {
    let cal = calibrate_vref_aar(cfg, solver)?;
    let mut cfg = cfg.clone();
    let vref = match cfg.vref_aar_v {
        Some(v) => {
            if v <= cal.lrs_level_v || v >= cal.hrs_level_v {
                return Err(Error::Calibration(format!(
                    "vref_aar = {v:.4} V lies outside the measured level interval \
                     ({:.4}, {:.4}) V",
                    cal.lrs_level_v, cal.hrs_level_v
                )));
            }
            v
        }
        None => {
            cfg.vref_aar_v = Some(cal.vref_aar_v);
            cal.vref_aar_v
        }
    };

    let rows: Vec<usize> = (0..cfg.rows).collect();
    let reads: Vec<AarRead> = rows
        .par_iter()
        .flat_map(|&row| {
            [StateLabel::Hrs, StateLabel::Lrs]
                .into_iter()
                .map(move |stored| (row, stored))
                .collect::<Vec<_>>()
        })
        .map(|(row, stored)| -> Result<AarRead> {
            let state = match stored {
                StateLabel::Hrs => cfg.cell.hrs.state,
                _ => cfg.cell.lrs.state,
            };
            let out = run_aar_row(state, &cfg, solver)?;
            let expect = match stored {
                StateLabel::Hrs => 1,
                _ => 0,
            };
            Ok(AarRead {
                row,
                stored,
                bit: out.bit,
                psw_sample_v: out.psw_sample_v,
                correct: out.bit == expect,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let misreads = reads.iter().filter(|r| !r.correct).count();
    Ok(AarSuiteReport {
        vref_aar_v: vref,
        hrs_level_v: cal.hrs_level_v,
        lrs_level_v: cal.lrs_level_v,
        misreads,
        all_correct: misreads == 0,
        reads,
    })
}

/// Per-cell energy comparison for one search polarity: a one-row column run
/// for each stored state.
pub fn isolated_cell_energy(
    cue: CueValue,
    stored: StateLabel,
    cfg: &ArrayConfig,
    solver: &SolverConfig,
) -> Result<EnergyReport> {
    let mut iso = cfg.clone();
    iso.rows = 1;
    iso.vref_car_v = Some(0.0);
    let state = match stored {
        StateLabel::Hrs => iso.cell.hrs.state,
        _ => iso.cell.lrs.state,
    };
    let (trace, _schedule) = run_search_trace(
        &DataWord::uniform(state, 1),
        &CueWord::uniform(cue, 1),
        &iso,
        solver,
    )?;
    account_energy(&trace, 1, 1)
}
