//! Minimal nonlinear circuit engine.
//!
//! Networks of capacitors, RRAM branches, square-law nMOS devices, ideal
//! switches, and piecewise-linear sources, with a dense-Newton DC solver and
//! a fixed-step implicit-Euler transient solver that meters per-source
//! delivered charge and energy.

pub mod dc;
pub mod measure;
pub mod mos;
pub mod schedule;
pub mod transient;
pub mod waveform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::device::{branch_conductance, branch_current, RramParams};
use crate::error::{Error, Result};
use mos::{double_gate_eval, mos_eval, MosParams};
use waveform::PwlWaveform;

pub type NetId = usize;

/// Functional role of a net, mirroring the cell/array control names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Cue,
    CueBar,
    Psw,
    Sw,
    Pre,
    En,
    Ml,
    Mid,
    Clr,
    Sec,
    Pri,
    Supsw,
    Gnd,
    Vdd,
    Vsec,
    Internal,
}

#[derive(Debug, Clone)]
pub struct NetDef {
    pub name: String,
    pub role: NetRole,
}

/// Circuit element kinds. Sources are elements too: they mark their net as
/// driven and are the unit of energy attribution.
#[derive(Debug, Clone)]
pub enum ElementKind {
    Resistor {
        a: NetId,
        b: NetId,
        ohms: f64,
    },
    Capacitor {
        a: NetId,
        b: NetId,
        farads: f64,
    },
    /// Static RRAM branch; positive device bias is v(plus) - v(minus).
    Rram {
        plus: NetId,
        minus: NetId,
        params: RramParams,
    },
    Mosfet {
        d: NetId,
        g: NetId,
        s: NetId,
        p: MosParams,
    },
    /// Series Q2/Q3 pulldown sharing an internal terminal.
    DoubleGateNmos {
        d: NetId,
        g_upper: NetId,
        g_lower: NetId,
        s: NetId,
        upper: MosParams,
        lower: MosParams,
    },
    /// Ideal switch with on-resistance, controlled by a net voltage.
    Switch {
        a: NetId,
        b: NetId,
        ctrl: NetId,
        r_on_ohms: f64,
        active_high: bool,
        threshold_v: f64,
    },
    /// Piecewise-linear voltage source driving `net`. The waveform may be
    /// supplied or overridden by the schedule at solve time.
    PwlSource {
        net: NetId,
        wf: Option<PwlWaveform>,
    },
    /// Constant-voltage rail.
    FixedSource {
        net: NetId,
        volts: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ElementInst {
    /// Attribution label; sources aggregate energy per label, resistive
    /// elements aggregate dissipation per label.
    pub label: String,
    pub kind: ElementKind,
}

/// Solver settings shared by the DC and transient paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Transient step (s).
    pub dt_s: f64,
    pub newton_max_iters: usize,
    pub newton_damping: f64,
    /// Step-norm convergence threshold (V).
    pub newton_step_tol_v: f64,
    /// Post-solve KCL residual requirement for DC (A).
    pub dc_residual_tol_a: f64,
    /// Conductance to ground on every floating net.
    pub gmin_s: f64,
    /// Levels of step halving before a transient step is declared failed.
    pub step_halving_levels: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt_s: crate::cell::DEFAULT_CLOCK_PERIOD_S / 128.0,
            newton_max_iters: 50,
            newton_damping: 0.7,
            newton_step_tol_v: 1e-6,
            dc_residual_tol_a: 1e-12,
            gmin_s: 1e-12,
            step_halving_levels: 4,
        }
    }
}

/// A circuit: named nets plus elements. Net 0 is always ground.
#[derive(Debug, Clone)]
pub struct Circuit {
    pub nets: Vec<NetDef>,
    by_name: BTreeMap<String, NetId>,
    pub elements: Vec<ElementInst>,
}

pub const GND: NetId = 0;

impl Default for Circuit {
    fn default() -> Self {
        Self::new()
    }
}

impl Circuit {
    pub fn new() -> Self {
        let mut c = Circuit {
            nets: Vec::new(),
            by_name: BTreeMap::new(),
            elements: Vec::new(),
        };
        c.add_net("gnd", NetRole::Gnd);
        c
    }

    pub fn add_net(&mut self, name: &str, role: NetRole) -> NetId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = self.nets.len();
        self.nets.push(NetDef {
            name: name.to_string(),
            role,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn net(&self, name: &str) -> Option<NetId> {
        self.by_name.get(name).copied()
    }

    pub fn net_name(&self, id: NetId) -> &str {
        &self.nets[id].name
    }

    pub fn add_element(&mut self, label: &str, kind: ElementKind) {
        self.elements.push(ElementInst {
            label: label.to_string(),
            kind,
        });
    }

    /// Nets driven by a source element (plus ground).
    pub fn driven_nets(&self) -> Vec<bool> {
        let mut driven = vec![false; self.nets.len()];
        driven[GND] = true;
        for e in &self.elements {
            match e.kind {
                ElementKind::PwlSource { net, .. } | ElementKind::FixedSource { net, .. } => {
                    driven[net] = true;
                }
                _ => {}
            }
        }
        driven
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nets.len();
        let check = |id: NetId| -> Result<()> {
            if id >= n {
                return Err(Error::invalid(format!("element references missing net {id}")));
            }
            Ok(())
        };
        let mut drive_count = vec![0usize; n];
        for e in &self.elements {
            match &e.kind {
                ElementKind::Resistor { a, b, ohms } => {
                    check(*a)?;
                    check(*b)?;
                    if *ohms <= 0.0 {
                        return Err(Error::invalid(format!(
                            "resistor '{}' must have positive resistance",
                            e.label
                        )));
                    }
                }
                ElementKind::Capacitor { a, b, farads } => {
                    check(*a)?;
                    check(*b)?;
                    if *farads <= 0.0 {
                        return Err(Error::invalid(format!(
                            "capacitor '{}' must have positive capacitance",
                            e.label
                        )));
                    }
                }
                ElementKind::Rram { plus, minus, params } => {
                    check(*plus)?;
                    check(*minus)?;
                    params.validate()?;
                }
                ElementKind::Mosfet { d, g, s, p } => {
                    check(*d)?;
                    check(*g)?;
                    check(*s)?;
                    if !p.valid() {
                        return Err(Error::invalid(format!(
                            "mosfet '{}' has invalid parameters",
                            e.label
                        )));
                    }
                }
                ElementKind::DoubleGateNmos {
                    d,
                    g_upper,
                    g_lower,
                    s,
                    upper,
                    lower,
                } => {
                    check(*d)?;
                    check(*g_upper)?;
                    check(*g_lower)?;
                    check(*s)?;
                    if !upper.valid() || !lower.valid() {
                        return Err(Error::invalid(format!(
                            "double-gate '{}' has invalid parameters",
                            e.label
                        )));
                    }
                }
                ElementKind::Switch {
                    a, b, ctrl, r_on_ohms, ..
                } => {
                    check(*a)?;
                    check(*b)?;
                    check(*ctrl)?;
                    if *r_on_ohms <= 0.0 {
                        return Err(Error::invalid(format!(
                            "switch '{}' must have positive on-resistance",
                            e.label
                        )));
                    }
                }
                ElementKind::PwlSource { net, .. } | ElementKind::FixedSource { net, .. } => {
                    check(*net)?;
                    drive_count[*net] += 1;
                    if drive_count[*net] > 1 {
                        return Err(Error::invalid(format!(
                            "net '{}' is driven by more than one source",
                            self.net_name(*net)
                        )));
                    }
                    if *net == GND {
                        return Err(Error::invalid("ground cannot carry a source"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Total energy stored in capacitors at the given node voltages.
    pub fn stored_energy(&self, v: &[f64]) -> f64 {
        self.elements
            .iter()
            .map(|e| match e.kind {
                ElementKind::Capacitor { a, b, farads } => {
                    let dv = v[a] - v[b];
                    0.5 * farads * dv * dv
                }
                _ => 0.0,
            })
            .sum()
    }
}

/// Capacitor companion state for implicit-Euler steps.
pub(crate) struct CapState<'a> {
    pub dt: f64,
    pub v_prev: &'a [f64],
}

/// One resistive/capacitive branch flow at the current iterate, for KCL,
/// metering, and dissipation. Current is positive from `a` to `b`.
pub(crate) struct BranchFlow {
    pub a: NetId,
    pub b: NetId,
    pub i: f64,
    pub is_capacitive: bool,
}

pub(crate) fn switch_closed(
    v: &[f64],
    ctrl: NetId,
    active_high: bool,
    threshold_v: f64,
) -> bool {
    if active_high {
        v[ctrl] > threshold_v
    } else {
        v[ctrl] < threshold_v
    }
}

/// Branch current of one element at node voltages `v`. Sources return None.
pub(crate) fn element_flow(e: &ElementInst, v: &[f64], cap: Option<&CapState>) -> Option<BranchFlow> {
    match &e.kind {
        ElementKind::Resistor { a, b, ohms } => Some(BranchFlow {
            a: *a,
            b: *b,
            i: (v[*a] - v[*b]) / ohms,
            is_capacitive: false,
        }),
        ElementKind::Capacitor { a, b, farads } => {
            let cap = cap?;
            let dv_now = v[*a] - v[*b];
            let dv_prev = cap.v_prev[*a] - cap.v_prev[*b];
            Some(BranchFlow {
                a: *a,
                b: *b,
                i: farads * (dv_now - dv_prev) / cap.dt,
                is_capacitive: true,
            })
        }
        ElementKind::Rram { plus, minus, params } => Some(BranchFlow {
            a: *plus,
            b: *minus,
            i: branch_current(params, v[*plus] - v[*minus]),
            is_capacitive: false,
        }),
        ElementKind::Mosfet { d, g, s, p } => {
            let (i, ..) = mos_eval(p, v[*d], v[*g], v[*s]);
            Some(BranchFlow {
                a: *d,
                b: *s,
                i,
                is_capacitive: false,
            })
        }
        ElementKind::DoubleGateNmos {
            d,
            g_upper,
            g_lower,
            s,
            upper,
            lower,
        } => {
            let (i, ..) = double_gate_eval(upper, lower, v[*d], v[*g_upper], v[*g_lower], v[*s]);
            Some(BranchFlow {
                a: *d,
                b: *s,
                i,
                is_capacitive: false,
            })
        }
        ElementKind::Switch {
            a,
            b,
            ctrl,
            r_on_ohms,
            active_high,
            threshold_v,
        } => {
            let i = if switch_closed(v, *ctrl, *active_high, *threshold_v) {
                (v[*a] - v[*b]) / r_on_ohms
            } else {
                0.0
            };
            Some(BranchFlow {
                a: *a,
                b: *b,
                i,
                is_capacitive: false,
            })
        }
        ElementKind::PwlSource { .. } | ElementKind::FixedSource { .. } => None,
    }
}

/// Assemble the KCL residual and Jacobian over the unknown (floating) nets.
///
/// `residual[k]` is the total current leaving unknown net k, including the
/// gmin tie to ground. The Jacobian is dense, row-major, n x n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    circuit: &Circuit,
    v: &[f64],
    cap: Option<&CapState>,
    unknowns: &[NetId],
    index_of: &[Option<usize>],
    gmin_s: f64,
    jac: &mut [f64],
    residual: &mut [f64],
) {
    let n = unknowns.len();
    jac.fill(0.0);
    residual.fill(0.0);
    for (k, &net) in unknowns.iter().enumerate() {
        residual[k] += gmin_s * v[net];
        jac[k * n + k] += gmin_s;
    }

    let add = |jac: &mut [f64], row_net: NetId, col_net: NetId, g: f64| {
        if let (Some(r), Some(c)) = (index_of[row_net], index_of[col_net]) {
            jac[r * n + c] += g;
        } else if let Some(r) = index_of[row_net] {
            let _ = r; // column is driven; no Jacobian entry
        }
    };

    for e in &circuit.elements {
        match &e.kind {
            ElementKind::Resistor { a, b, ohms } => {
                let g = 1.0 / ohms;
                let i = (v[*a] - v[*b]) * g;
                if let Some(r) = index_of[*a] {
                    residual[r] += i;
                }
                if let Some(r) = index_of[*b] {
                    residual[r] -= i;
                }
                add(jac, *a, *a, g);
                add(jac, *a, *b, -g);
                add(jac, *b, *b, g);
                add(jac, *b, *a, -g);
            }
            ElementKind::Capacitor { a, b, farads } => {
                if let Some(cap) = cap {
                    let g = farads / cap.dt;
                    let i = g * ((v[*a] - v[*b]) - (cap.v_prev[*a] - cap.v_prev[*b]));
                    if let Some(r) = index_of[*a] {
                        residual[r] += i;
                    }
                    if let Some(r) = index_of[*b] {
                        residual[r] -= i;
                    }
                    add(jac, *a, *a, g);
                    add(jac, *a, *b, -g);
                    add(jac, *b, *b, g);
                    add(jac, *b, *a, -g);
                }
            }
            ElementKind::Rram { plus, minus, params } => {
                let dv = v[*plus] - v[*minus];
                let i = branch_current(params, dv);
                let g = branch_conductance(params, dv);
                if let Some(r) = index_of[*plus] {
                    residual[r] += i;
                }
                if let Some(r) = index_of[*minus] {
                    residual[r] -= i;
                }
                add(jac, *plus, *plus, g);
                add(jac, *plus, *minus, -g);
                add(jac, *minus, *minus, g);
                add(jac, *minus, *plus, -g);
            }
            ElementKind::Mosfet { d, g, s, p } => {
                let (i, di_dd, di_dg, di_ds) = mos_eval(p, v[*d], v[*g], v[*s]);
                if let Some(r) = index_of[*d] {
                    residual[r] += i;
                }
                if let Some(r) = index_of[*s] {
                    residual[r] -= i;
                }
                add(jac, *d, *d, di_dd);
                add(jac, *d, *g, di_dg);
                add(jac, *d, *s, di_ds);
                add(jac, *s, *d, -di_dd);
                add(jac, *s, *g, -di_dg);
                add(jac, *s, *s, -di_ds);
            }
            ElementKind::DoubleGateNmos {
                d,
                g_upper,
                g_lower,
                s,
                upper,
                lower,
            } => {
                let (i, di_dd, di_dgu, di_dgl, di_ds) =
                    double_gate_eval(upper, lower, v[*d], v[*g_upper], v[*g_lower], v[*s]);
                if let Some(r) = index_of[*d] {
                    residual[r] += i;
                }
                if let Some(r) = index_of[*s] {
                    residual[r] -= i;
                }
                add(jac, *d, *d, di_dd);
                add(jac, *d, *g_upper, di_dgu);
                add(jac, *d, *g_lower, di_dgl);
                add(jac, *d, *s, di_ds);
                add(jac, *s, *d, -di_dd);
                add(jac, *s, *g_upper, -di_dgu);
                add(jac, *s, *g_lower, -di_dgl);
                add(jac, *s, *s, -di_ds);
            }
            ElementKind::Switch {
                a,
                b,
                ctrl,
                r_on_ohms,
                active_high,
                threshold_v,
            } => {
                if switch_closed(v, *ctrl, *active_high, *threshold_v) {
                    let g = 1.0 / r_on_ohms;
                    let i = (v[*a] - v[*b]) * g;
                    if let Some(r) = index_of[*a] {
                        residual[r] += i;
                    }
                    if let Some(r) = index_of[*b] {
                        residual[r] -= i;
                    }
                    add(jac, *a, *a, g);
                    add(jac, *a, *b, -g);
                    add(jac, *b, *b, g);
                    add(jac, *b, *a, -g);
                }
            }
            ElementKind::PwlSource { .. } | ElementKind::FixedSource { .. } => {}
        }
    }
}

/// Solve the dense system J x = rhs in place by Gaussian elimination with
/// partial pivoting. Returns false on a singular pivot.
pub(crate) fn solve_dense(jac: &mut [f64], rhs: &mut [f64]) -> bool {
    let n = rhs.len();
    for col in 0..n {
        let mut piv = col;
        let mut best = jac[col * n + col].abs();
        for row in (col + 1)..n {
            let cand = jac[row * n + col].abs();
            if cand > best {
                best = cand;
                piv = row;
            }
        }
        if best < 1e-300 {
            return false;
        }
        if piv != col {
            for k in 0..n {
                jac.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        let diag = jac[col * n + col];
        for row in (col + 1)..n {
            let factor = jac[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            jac[row * n + col] = 0.0;
            for k in (col + 1)..n {
                jac[row * n + k] -= factor * jac[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    for col in (0..n).rev() {
        let mut x = rhs[col];
        for k in (col + 1)..n {
            x -= jac[col * n + k] * rhs[k];
        }
        rhs[col] = x / jac[col * n + col];
    }
    true
}

pub(crate) struct NewtonOutcome {
    #[allow(dead_code)]
    pub iterations: usize,
    pub worst_residual_a: f64,
}

/// Per-iteration voltage step clamp.
const MAX_NEWTON_STEP_V: f64 = 2.0;

/// Damped Newton iteration over the floating nets of `v` (in place).
/// `residual_goal_a` keeps the iteration polishing beyond step-norm
/// convergence until KCL closes to the goal (the DC path uses this).
pub(crate) fn newton_solve(
    circuit: &Circuit,
    v: &mut [f64],
    cap: Option<&CapState>,
    unknowns: &[NetId],
    index_of: &[Option<usize>],
    cfg: &SolverConfig,
    residual_goal_a: Option<f64>,
) -> std::result::Result<NewtonOutcome, String> {
    let n = unknowns.len();
    if n == 0 {
        return Ok(NewtonOutcome {
            iterations: 0,
            worst_residual_a: 0.0,
        });
    }
    let mut jac = vec![0.0; n * n];
    let mut res = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut trial = v.to_vec();

    let norm2 = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

    for iter in 1..=cfg.newton_max_iters {
        assemble(circuit, v, cap, unknowns, index_of, cfg.gmin_s, &mut jac, &mut res);
        let f0 = norm2(&res);
        if !f0.is_finite() {
            return Err("non-finite residual".into());
        }

        step.copy_from_slice(&res);
        for x in step.iter_mut() {
            *x = -*x;
        }
        let mut lu = jac.clone();
        if !solve_dense(&mut lu, &mut step) {
            return Err("singular Jacobian".into());
        }
        // Saturating branches have vanishing slope at large bias; clamp the
        // raw step so the iterate stays in a physical voltage range.
        for x in step.iter_mut() {
            *x = x.clamp(-MAX_NEWTON_STEP_V, MAX_NEWTON_STEP_V);
        }

        // Backtracking with the configured damping factor.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            trial.copy_from_slice(v);
            for (k, &net) in unknowns.iter().enumerate() {
                trial[net] += alpha * step[k];
            }
            assemble(
                circuit, &trial, cap, unknowns, index_of, cfg.gmin_s, &mut jac, &mut res,
            );
            let f1 = norm2(&res);
            if f1.is_finite() && (f1 <= f0 || f1 < 1e-30) {
                v.copy_from_slice(&trial);
                accepted = true;
                break;
            }
            alpha *= cfg.newton_damping;
        }
        if !accepted {
            // Take the most damped step anyway; stagnation is caught below.
            v.copy_from_slice(&trial);
        }

        let step_norm = step
            .iter()
            .map(|x| (alpha * x).abs())
            .fold(0.0f64, f64::max);
        if step_norm < cfg.newton_step_tol_v {
            // Polish further if a residual goal is set and not yet met.
            assemble(circuit, v, cap, unknowns, index_of, cfg.gmin_s, &mut jac, &mut res);
            let worst_now = res.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if residual_goal_a.is_none_or(|goal| worst_now <= goal) || !accepted {
                return Ok(NewtonOutcome {
                    iterations: iter,
                    worst_residual_a: worst_now,
                });
            }
        }
    }
    Err(format!(
        "no convergence after {} iterations",
        cfg.newton_max_iters
    ))
}

/// Current delivered by the source driving `net`: the sum of currents leaving
/// the net through all non-source elements.
pub(crate) fn source_current(
    circuit: &Circuit,
    net: NetId,
    v: &[f64],
    cap: Option<&CapState>,
) -> f64 {
    let mut i_total = 0.0;
    for e in &circuit.elements {
        if let Some(flow) = element_flow(e, v, cap) {
            if flow.a == net {
                i_total += flow.i;
            }
            if flow.b == net {
                i_total -= flow.i;
            }
        }
    }
    i_total
}
