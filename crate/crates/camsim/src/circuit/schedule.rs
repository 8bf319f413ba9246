//! Control-phase schedules: per-net waveforms plus named time markers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::waveform::PwlWaveform;
use crate::error::{Error, Result};

/// Well-known marker names used by the cell and array schedules.
pub mod markers {
    /// Start of the mid-clear pulse.
    pub const CLEAR: &str = "clear";
    /// Start of match-line pre-charge (cycle 1).
    pub const PRE_CHARGE: &str = "pre_charge";
    /// Start of the cue/cue_bar ramp.
    pub const CUE_RISE: &str = "cue_rise";
    /// Enable strobe assert (50 % point).
    pub const ENABLE: &str = "enable";
    /// Boundary between the pre-charge and evaluate energy phases.
    pub const EVALUATE_START: &str = "evaluate_start";
    /// Decision sampling instant.
    pub const SAMPLE: &str = "sample";
    /// Write pulse window.
    pub const WRITE_PULSE_START: &str = "write_pulse_start";
    pub const WRITE_PULSE_END: &str = "write_pulse_end";
    /// AAR discharge start (sw assert).
    pub const DISCHARGE: &str = "discharge";
}

/// Piecewise-linear waveforms for every driven control net over one named
/// operation, with phase markers on the shared time axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub name: String,
    pub clock_period_s: f64,
    pub waveforms: BTreeMap<String, PwlWaveform>,
    pub markers: BTreeMap<String, f64>,
    pub t_end_s: f64,
}

impl PhaseSchedule {
    pub fn new(name: &str, clock_period_s: f64, t_end_s: f64) -> Self {
        PhaseSchedule {
            name: name.to_string(),
            clock_period_s,
            waveforms: BTreeMap::new(),
            markers: BTreeMap::new(),
            t_end_s,
        }
    }

    pub fn set_waveform(&mut self, net: &str, wf: PwlWaveform) {
        self.waveforms.insert(net.to_string(), wf);
    }

    pub fn set_marker(&mut self, name: &str, t: f64) {
        self.markers.insert(name.to_string(), t);
    }

    pub fn marker(&self, name: &str) -> Result<f64> {
        self.markers
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("schedule '{}' has no marker '{name}'", self.name)))
    }

    /// Markers must be ordered within the window and the sample marker must
    /// exist inside it.
    pub fn validate(&self) -> Result<()> {
        for (name, &t) in &self.markers {
            if !(0.0..=self.t_end_s).contains(&t) {
                return Err(Error::invalid(format!(
                    "marker '{name}' at {t} s lies outside the window [0, {}]",
                    self.t_end_s
                )));
            }
        }
        Ok(())
    }

    /// Shortest transition over all waveforms, for the dt precondition.
    pub fn min_transition_s(&self) -> Option<f64> {
        self.waveforms
            .values()
            .filter_map(|wf| wf.min_transition_s())
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
    }

    /// Export as a (net, time, voltage) waveform table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# net,time_s,voltage_v\n");
        for (net, wf) in &self.waveforms {
            for &(t, v) in &wf.breakpoints {
                out.push_str(&format!("{net},{t:.12e},{v:.12e}\n"));
            }
        }
        out
    }
}
