//! Static RRAM IV model and data-driven fitting.
//!
//! The device is described by one exponential branch per polarity,
//!
//! ```text
//!   i(v) =  a_p * (1/RS) * (1 - exp(-b_p * v))      for v > 0
//!   i(v) = -a_n * (1/RS) * (1 - exp(-b_n * |v|))    for v < 0
//! ```
//!
//! so both branches saturate and a high-resistance device keeps behaving as
//! an open switch at cell-level voltages. `RS` is the resistance at the
//! 0.2 V read-out point; `a` is tied to it through [`calibrate_prefactor`].
//! Resistive states are frozen during read/search operations; writes update
//! the state as a discrete event elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Read-out voltage at which `rs_ohms` is defined.
pub const READOUT_V: f64 = 0.2;

/// Default parasitic MIM capacitance of the device stack.
pub const DEFAULT_C_MR_F: f64 = 2.2e-15;

/// Default branch curvature used when no fitted values are supplied.
pub const DEFAULT_B_PER_V: f64 = 5.0;

/// Low / high resistance state labels. `Custom` covers fitted or swept
/// devices that are neither shipped state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLabel {
    Lrs,
    Hrs,
    Custom,
}

/// A resistive state: label plus the resistance at the 0.2 V read-out point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistiveState {
    pub label: StateLabel,
    pub rs_ohms: f64,
}

impl ResistiveState {
    pub fn lrs(rs_ohms: f64) -> Self {
        ResistiveState {
            label: StateLabel::Lrs,
            rs_ohms,
        }
    }

    pub fn hrs(rs_ohms: f64) -> Self {
        ResistiveState {
            label: StateLabel::Hrs,
            rs_ohms,
        }
    }

    pub fn custom(rs_ohms: f64) -> Self {
        ResistiveState {
            label: StateLabel::Custom,
            rs_ohms,
        }
    }

    /// Stored binary value: HRS encodes '1', LRS encodes '0'.
    pub fn bit(&self) -> Option<u8> {
        match self.label {
            StateLabel::Hrs => Some(1),
            StateLabel::Lrs => Some(0),
            StateLabel::Custom => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rs_ohms > 0.0) || !self.rs_ohms.is_finite() {
            return Err(Error::invalid(format!(
                "rs_ohms must be positive and finite, got {}",
                self.rs_ohms
            )));
        }
        Ok(())
    }
}

/// Fitted model parameters for one resistive state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RramParams {
    pub state: ResistiveState,
    /// Positive-branch prefactor (V).
    pub a_p: f64,
    /// Positive-branch curvature (1/V).
    pub b_p: f64,
    /// Negative-branch prefactor (V).
    pub a_n: f64,
    /// Negative-branch curvature (1/V).
    pub b_n: f64,
    /// Parasitic MIM capacitance (F).
    pub c_mr_f: f64,
}

impl RramParams {
    /// Parameters calibrated so that i(±0.2 V) = ±0.2/RS exactly, with the
    /// shipped default curvature. Negative branch mirrors the positive one.
    pub fn calibrated(state: ResistiveState) -> Self {
        let b = DEFAULT_B_PER_V;
        let a = calibrate_prefactor(b, state.rs_ohms).expect("default b is positive");
        RramParams {
            state,
            a_p: a,
            b_p: b,
            a_n: a,
            b_n: b,
            c_mr_f: DEFAULT_C_MR_F,
        }
    }

    /// Shipped LRS: 112 kOhm at the read-out point.
    pub fn default_lrs() -> Self {
        Self::calibrated(ResistiveState::lrs(112e3))
    }

    /// Shipped HRS: 8.04 MOhm at the read-out point.
    pub fn default_hrs() -> Self {
        Self::calibrated(ResistiveState::hrs(8.04e6))
    }

    pub fn validate(&self) -> Result<()> {
        self.state.validate()?;
        for (name, v) in [
            ("a_p", self.a_p),
            ("b_p", self.b_p),
            ("a_n", self.a_n),
            ("b_n", self.b_n),
            ("c_mr_f", self.c_mr_f),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        // Read-out consistency: the positive branch must reproduce RS at 0.2 V
        // within 0.5 %.
        let i_readout = self.a_p * (1.0 - (-READOUT_V * self.b_p).exp()) / self.state.rs_ohms;
        let expect = READOUT_V / self.state.rs_ohms;
        if ((i_readout - expect) / expect).abs() > 5e-3 {
            return Err(Error::invalid(format!(
                "a_p = {} is not read-out calibrated for b_p = {}, rs = {}",
                self.a_p, self.b_p, self.state.rs_ohms
            )));
        }
        Ok(())
    }
}

/// Branch current of the exponential model. No input validation; used by the
/// solver hot path. See [`iv_current`] for the checked entry point.
#[inline]
pub(crate) fn branch_current(p: &RramParams, v: f64) -> f64 {
    if v > 0.0 {
        p.a_p * (1.0 / p.state.rs_ohms) * (-(-p.b_p * v).exp_m1())
    } else if v < 0.0 {
        -p.a_n * (1.0 / p.state.rs_ohms) * (-(-p.b_n * (-v)).exp_m1())
    } else {
        0.0
    }
}

/// di/dv of the exponential model; one-sided for the sign of `v`, the average
/// of both one-sided values at exactly v = 0.
#[inline]
pub(crate) fn branch_conductance(p: &RramParams, v: f64) -> f64 {
    let g_pos = |v: f64| p.a_p * p.b_p / p.state.rs_ohms * (-p.b_p * v).exp();
    let g_neg = |v: f64| p.a_n * p.b_n / p.state.rs_ohms * (-p.b_n * (-v)).exp();
    if v > 0.0 {
        g_pos(v)
    } else if v < 0.0 {
        g_neg(v)
    } else {
        0.5 * (g_pos(0.0) + g_neg(0.0))
    }
}

/// Static device current at bias `v`.
pub fn iv_current(params: &RramParams, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite bias voltage {v}")));
    }
    Ok(branch_current(params, v))
}

/// Small-signal conductance di/dv at bias `v`. Always positive.
pub fn small_signal_conductance(params: &RramParams, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite bias voltage {v}")));
    }
    Ok(branch_conductance(params, v))
}

/// Prefactor that pins the positive branch to the 0.2 V read-out point:
/// a = 0.2 / (1 - exp(-0.2 b)), so that i(0.2 V) = 0.2/RS exactly.
pub fn calibrate_prefactor(b_per_v: f64, rs_ohms: f64) -> Result<f64> {
    if !(b_per_v > 0.0) || !b_per_v.is_finite() {
        return Err(Error::invalid(format!(
            "curvature b must be positive, got {b_per_v}"
        )));
    }
    if !(rs_ohms > 0.0) || !rs_ohms.is_finite() {
        return Err(Error::invalid(format!(
            "rs_ohms must be positive, got {rs_ohms}"
        )));
    }
    Ok(READOUT_V / -(-READOUT_V * b_per_v).exp_m1())
}

/// A measured bipolar IV sweep: (voltage, current) pairs with strictly
/// increasing voltages. `noise_floor_a` declares the current magnitude below
/// which samples are treated as zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvSweep {
    pub points: Vec<(f64, f64)>,
    pub noise_floor_a: f64,
}

impl IvSweep {
    pub fn new(points: Vec<(f64, f64)>, noise_floor_a: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("IV sweep needs at least two points"));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(format!(
                    "sweep voltages must be strictly increasing: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(v, i) in &points {
            if !v.is_finite() || !i.is_finite() {
                return Err(Error::invalid("non-finite sample in IV sweep"));
            }
            if v == 0.0 && i.abs() > noise_floor_a {
                return Err(Error::invalid(format!(
                    "current at v = 0 is {i} A, above the declared noise floor"
                )));
            }
        }
        Ok(IvSweep {
            points,
            noise_floor_a,
        })
    }

    /// Parse a two-column CSV (volts, amperes). A header line is optional and
    /// `#` comments are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (va, ia) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::invalid(format!(
                        "line {}: expected two comma-separated columns",
                        lineno + 1
                    )))
                }
            };
            match (va.parse::<f64>(), ia.parse::<f64>()) {
                (Ok(v), Ok(i)) => points.push((v, i)),
                _ if points.is_empty() => continue, // header line
                _ => {
                    return Err(Error::invalid(format!(
                        "line {}: cannot parse '{raw}' as volts,amperes",
                        lineno + 1
                    )))
                }
            }
        }
        IvSweep::new(points, 1e-12)
    }

    fn polarity_points(&self, positive: bool) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .copied()
            .filter(|&(v, i)| {
                let keep = if positive { v > 0.0 } else { v < 0.0 };
                keep && i.abs() > self.noise_floor_a
            })
            .map(|(v, i)| (v.abs(), i.abs()))
            .collect()
    }
}

/// Outcome of a log-domain branch fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: RramParams,
    /// RMS of log|i| residuals over all fitted points.
    pub fit_rms_log: f64,
    /// True when the optimum pinned to a curvature search bound.
    pub boundary_hit: bool,
    /// True when only one polarity was present and the other was mirrored.
    pub mirrored_negative: bool,
}

/// Curvature search bounds (1/V).
pub const B_BOUNDS: (f64, f64) = (0.01, 100.0);

/// Fit Eq-style branch parameters from a measured sweep, judging residuals in
/// the logarithmic current domain. Polarities are fitted independently; a
/// single-polarity sweep gets mirrored negative parameters.
pub fn fit_iv_params(sweep: &IvSweep, rs_ohms: f64) -> Result<FitReport> {
    if !(rs_ohms > 0.0) || !rs_ohms.is_finite() {
        return Err(Error::invalid(format!(
            "rs_ohms must be positive, got {rs_ohms}"
        )));
    }
    let pos = sweep.polarity_points(true);
    let neg = sweep.polarity_points(false);
    if pos.len() < 8 {
        return Err(Error::Fit(format!(
            "need at least 8 positive-polarity points above the noise floor, got {}",
            pos.len()
        )));
    }

    let (a_p, b_p, sse_p, n_p, hit_p) = fit_branch(&pos, rs_ohms)?;
    let (a_n, b_n, sse_n, n_n, hit_n, mirrored) = if neg.len() >= 8 {
        let (a, b, sse, n, hit) = fit_branch(&neg, rs_ohms)?;
        (a, b, sse, n, hit, false)
    } else {
        (a_p, b_p, 0.0, 0, hit_p, true)
    };

    let fit_rms_log = ((sse_p + sse_n) / (n_p + n_n) as f64).sqrt();
    let params = RramParams {
        state: ResistiveState::custom(rs_ohms),
        a_p,
        b_p,
        a_n,
        b_n,
        c_mr_f: DEFAULT_C_MR_F,
    };
    Ok(FitReport {
        params,
        fit_rms_log,
        boundary_hit: hit_p || hit_n,
        mirrored_negative: mirrored,
    })
}

/// Fit one branch: ln|i| = ln a - ln RS + ln(1 - exp(-b u)) over u = |v|.
///
/// For a fixed b the optimal ln a is closed-form, which reduces the problem
/// to a 1-D search pre-seeded on a coarse log grid and refined with damped
/// Gauss-Newton on (ln a, b).
fn fit_branch(points: &[(f64, f64)], rs_ohms: f64) -> Result<(f64, f64, f64, usize, bool)> {
    let y: Vec<f64> = points.iter().map(|&(_, i)| (i * rs_ohms).ln()).collect();
    let u: Vec<f64> = points.iter().map(|&(v, _)| v).collect();

    let spread = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - y.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread < 1e-12 {
        return Err(Error::Fit(
            "degenerate sweep: all currents equal, curvature is unidentifiable".into(),
        ));
    }

    let ln_shape = |b: f64, u: f64| (-(-b * u).exp_m1()).ln();
    let sse_for = |la: f64, b: f64| -> f64 {
        u.iter()
            .zip(&y)
            .map(|(&ui, &yi)| {
                let r = la + ln_shape(b, ui) - yi;
                r * r
            })
            .sum()
    };
    // Closed-form optimal ln a for a fixed b.
    let la_for = |b: f64| -> f64 {
        let s: f64 = u.iter().zip(&y).map(|(&ui, &yi)| yi - ln_shape(b, ui)).sum();
        s / u.len() as f64
    };

    // Coarse pre-search over b on a log grid.
    let (lo, hi) = B_BOUNDS;
    let grid = 160;
    let mut best = (la_for(lo), lo, f64::INFINITY);
    for k in 0..=grid {
        let b = lo * (hi / lo).powf(k as f64 / grid as f64);
        let la = la_for(b);
        let sse = sse_for(la, b);
        if sse < best.2 {
            best = (la, b, sse);
        }
    }

    // Damped Gauss-Newton refinement on (ln a, b).
    let (mut la, mut b, mut sse) = (best.0, best.1, best.2);
    for _ in 0..50 {
        // Normal equations for the 2-parameter Jacobian [1, d ln_shape/db].
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for (&ui, &yi) in u.iter().zip(&y) {
            let e = (-b * ui).exp();
            let dshape_db = ui * e / (1.0 - e);
            let r = la + ln_shape(b, ui) - yi;
            jtj[0][0] += 1.0;
            jtj[0][1] += dshape_db;
            jtj[1][1] += dshape_db * dshape_db;
            jtr[0] += r;
            jtr[1] += r * dshape_db;
        }
        jtj[1][0] = jtj[0][1];
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-30 {
            break;
        }
        let dla = -(jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;

        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let la_try = la + scale * dla;
            let b_try = (b + scale * db).clamp(lo, hi);
            let sse_try = sse_for(la_try, b_try);
            if sse_try < sse {
                la = la_try;
                b = b_try;
                sse = sse_try;
                improved = true;
                break;
            }
            scale *= 0.7;
        }
        if !improved || (scale * db).abs() < 1e-10 * b {
            break;
        }
    }

    let boundary_hit = (b - lo).abs() < 1e-6 * lo || (hi - b).abs() < 1e-6 * hi;
    Ok((la.exp(), b, sse, u.len(), boundary_hit))
}

/// JSON model card for a fitted device, written by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCard {
    pub state: StateLabel,
    pub rs_ohms: f64,
    pub a_p: f64,
    pub b_p: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub c_mr_f: f64,
    pub fit_rms_log: f64,
}

impl ModelCard {
    pub fn from_fit(fit: &FitReport) -> Self {
        ModelCard {
            state: fit.params.state.label,
            rs_ohms: fit.params.state.rs_ohms,
            a_p: fit.params.a_p,
            b_p: fit.params.b_p,
            a_n: fit.params.a_n,
            b_n: fit.params.b_n,
            c_mr_f: fit.params.c_mr_f,
            fit_rms_log: fit.fit_rms_log,
        }
    }

    pub fn to_params(&self) -> RramParams {
        RramParams {
            state: ResistiveState {
                label: self.state,
                rs_ohms: self.rs_ohms,
            },
            a_p: self.a_p,
            b_p: self.b_p,
            a_n: self.a_n,
            b_n: self.b_n,
            c_mr_f: self.c_mr_f,
        }
    }
}

/// Generate a noiseless synthetic sweep from known parameters, for fit tests
/// and the CLI demo path.
pub fn synthetic_sweep(params: &RramParams, v_max: f64, points_per_side: usize) -> IvSweep {
    let mut pts = Vec::new();
    let n = points_per_side as f64;
    for k in (1..=points_per_side).rev() {
        let v = -v_max * k as f64 / n;
        pts.push((v, branch_current(params, v)));
    }
    pts.push((0.0, 0.0));
    for k in 1..=points_per_side {
        let v = v_max * k as f64 / n;
        pts.push((v, branch_current(params, v)));
    }
    IvSweep {
        points: pts,
        noise_floor_a: 1e-15,
    }
}
