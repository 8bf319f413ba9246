//! Run configuration: device cards, cell/array overrides, solver settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::circuit::SolverConfig;
use crate::device::ModelCard;
use crate::error::{Error, Result};
use crate::experiments::SweepPlan;

/// Paths to fitted device model cards; absent entries keep the shipped
/// calibrated defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceCards {
    pub lrs_card: Option<PathBuf>,
    pub hrs_card: Option<PathBuf>,
}

/// Names accepted by the experiment selection list.
pub const EXPERIMENT_NAMES: [&str; 8] = [
    "truth-table",
    "table2",
    "energy-map",
    "timing",
    "aar",
    "write-sweep-fwd",
    "write-sweep-rev",
    "vsec-tt",
];

/// Top-level run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub device: DeviceCards,
    pub array: ArrayConfig,
    pub solver: SolverConfig,
    /// Experiments run by `suite all`; defaults to every known experiment.
    pub experiments: Option<Vec<String>>,
    /// Supply sweep plan used by the sweep subcommand.
    pub sweep_plan: Option<SweepPlan>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    /// Parse from JSON text, resolve model cards relative to `base_dir`, and
    /// validate.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.resolve_cards(base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn dump(&self) -> Result<String> {
        let mut synced = self.clone();
        synced.array.seed = synced.seed;
        Ok(serde_json::to_string_pretty(&synced)?)
    }

    fn resolve_cards(&mut self, base_dir: &Path) -> Result<()> {
        let load_card = |p: &PathBuf| -> Result<ModelCard> {
            let full = if p.is_absolute() {
                p.clone()
            } else {
                base_dir.join(p)
            };
            if !full.exists() {
                return Err(Error::invalid(format!(
                    "model card '{}' does not exist",
                    full.display()
                )));
            }
            let text = std::fs::read_to_string(&full)
                .map_err(|e| Error::io(full.display().to_string(), e))?;
            Ok(serde_json::from_str(&text)?)
        };
        if let Some(p) = &self.device.lrs_card {
            self.array.cell.lrs = load_card(p)?.to_params();
        }
        if let Some(p) = &self.device.hrs_card {
            self.array.cell.hrs = load_card(p)?.to_params();
        }
        self.array.seed = self.seed;
        Ok(())
    }

    /// Structural validation plus unit plausibility: farads, volts, ohms and
    /// seconds must sit in physically meaningful ranges.
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        let cell = &self.array.cell;
        let plaus = |name: &str, v: f64, lo: f64, hi: f64| -> Result<()> {
            if !(v > lo && v <= hi) {
                return Err(Error::invalid(format!(
                    "{name} = {v:e} outside the plausible range ({lo:e}, {hi:e}]"
                )));
            }
            Ok(())
        };
        plaus("array.c_ml_f", self.array.c_ml_f, 0.0, 1e-6)?;
        plaus("array.c_psw_f", self.array.c_psw_f, 0.0, 1e-6)?;
        plaus("array.driver_load_f", self.array.driver_load_f, 0.0, 1e-6)?;
        plaus("cell.c_b_f", cell.c_b_f, 0.0, 1e-6)?;
        plaus("cell.rram.c_mr_f", cell.rram.c_mr_f, 0.0, 1e-6)?;
        plaus("cell.supplies.vdd_v", cell.supplies.vdd_v, 0.0, 100.0)?;
        plaus("cell.pre_switch_r_ohms", cell.pre_switch_r_ohms, 0.0, 1e12)?;
        plaus("cell.clock_period_s", cell.clock_period_s, 0.0, 1e-3)?;
        plaus("cell.control_edge_s", cell.control_edge_s, 0.0, 1e-3)?;
        plaus("cell.cue_rise_s", cell.cue_rise_s, 0.0, 1e-3)?;
        plaus("solver.dt_s", self.solver.dt_s, 0.0, 1e-3)?;
        if self.solver.newton_max_iters == 0 {
            return Err(Error::invalid("solver.newton_max_iters must be positive"));
        }
        if let Some(list) = &self.experiments {
            for name in list {
                if !EXPERIMENT_NAMES.contains(&name.as_str()) {
                    return Err(Error::invalid(format!(
                        "unknown experiment '{name}' (expected one of {EXPERIMENT_NAMES:?})"
                    )));
                }
            }
        }
        if let Some(plan) = &self.sweep_plan {
            plan.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_preserves_config() {
        let mut cfg = RunConfig::default();
        cfg.array.rows = 8;
        cfg.array.cell.supplies.vsec_v = 1.25;
        cfg.seed = 7;
        let text = cfg.dump().unwrap();
        let back = RunConfig::from_json(&text, Path::new(".")).unwrap();
        let again = back.dump().unwrap();
        assert_eq!(text, again);
        assert_eq!(back.array.rows, 8);
        assert_eq!(back.array.cell.supplies.vsec_v, 1.25);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{ "array": { "rows": 4 }, "no_such_key": 1 }"#;
        assert!(RunConfig::from_json(text, Path::new(".")).is_err());
        let text = r#"{ "array": { "rows": 4, "bogus": true } }"#;
        assert!(RunConfig::from_json(text, Path::new(".")).is_err());
    }

    #[test]
    fn missing_card_reported() {
        let text = r#"{ "device": { "lrs_card": "does_not_exist.json" } }"#;
        let err = RunConfig::from_json(text, Path::new("/tmp")).unwrap_err();
        assert!(err.to_string().contains("does_not_exist.json"));
    }

    #[test]
    fn experiment_selection_validated() {
        let text = r#"{ "experiments": ["table2", "nope"] }"#;
        assert!(RunConfig::from_json(text, Path::new(".")).is_err());
        let text = r#"{ "experiments": ["table2", "aar"], "sweep_plan":
            { "parameter": "supplies.vsec", "start": 1.0, "stop": 1.1, "step": 0.01 } }"#;
        let cfg = RunConfig::from_json(text, Path::new(".")).unwrap();
        assert_eq!(cfg.experiments.unwrap().len(), 2);
        assert_eq!(cfg.sweep_plan.unwrap().values().len(), 11);
    }

    #[test]
    fn implausible_units_rejected() {
        let text = r#"{ "array": { "c_ml_f": 2.0 } }"#;
        assert!(RunConfig::from_json(text, Path::new(".")).is_err());
    }
}
