//! Piecewise-linear control waveforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear waveform over strictly increasing breakpoint times.
/// Evaluation outside the breakpoint range clamps to the end values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlWaveform {
    pub breakpoints: Vec<(f64, f64)>,
}

impl PwlWaveform {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::invalid("waveform needs at least one breakpoint"));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(format!(
                    "waveform times must be strictly increasing: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(PwlWaveform { breakpoints })
    }

    pub fn constant(volts: f64) -> Self {
        PwlWaveform {
            breakpoints: vec![(0.0, volts)],
        }
    }

    /// Linear ramp from `v0` at `t0` to `v1` at `t1`, clamped outside.
    pub fn ramp(t0: f64, t1: f64, v0: f64, v1: f64) -> Self {
        PwlWaveform {
            breakpoints: vec![(t0, v0), (t1, v1)],
        }
    }

    /// Trapezoidal pulse from `v_idle` to `v_active`. The 50 % crossings sit
    /// at `t_on` and `t_off`; each transition takes `edge` seconds.
    pub fn pulse(t_on: f64, t_off: f64, edge: f64, v_idle: f64, v_active: f64) -> Self {
        let h = edge / 2.0;
        PwlWaveform {
            breakpoints: vec![
                (t_on - h, v_idle),
                (t_on + h, v_active),
                (t_off - h, v_active),
                (t_off + h, v_idle),
            ],
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.breakpoints;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        if t >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        for w in pts.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Shortest non-flat segment duration, used to validate the solver step.
    pub fn min_transition_s(&self) -> Option<f64> {
        self.breakpoints
            .windows(2)
            .filter(|w| w[1].1 != w[0].1)
            .map(|w| w[1].0 - w[0].0)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
    }

    /// Append another trapezoidal pulse to an existing waveform.
    pub fn with_pulse(mut self, t_on: f64, t_off: f64, edge: f64, v_active: f64) -> Self {
        let idle = self.breakpoints.last().map(|p| p.1).unwrap_or(0.0);
        let h = edge / 2.0;
        self.breakpoints.push((t_on - h, idle));
        self.breakpoints.push((t_on + h, v_active));
        self.breakpoints.push((t_off - h, v_active));
        self.breakpoints.push((t_off + h, idle));
        self
    }
}
