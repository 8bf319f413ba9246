//! Command-line entry points for the CAM simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use camsim::array::{calibrate_vref_car, run_search, ArrayConfig, CueWord, DataWord};
use camsim::cell::{evaluate_truth_table, expected_truth_table, WriteDirection, TRUTH_TABLE_CASES};
use camsim::circuit::SolverConfig;
use camsim::config::{RunConfig, EXPERIMENT_NAMES};
use camsim::device::{fit_iv_params, IvSweep, ModelCard, ResistiveState, StateLabel};
use camsim::error::Error;
use camsim::experiments::{
    default_esr_grid, energy_map, measure_search_timing, run_aar_suite, run_table2_suite,
    sweep_vsec, CornerModel, CornerName, SweepPlan,
};
use camsim::report::{
    curve_csv, resolve_out_dir, svg_line_plot, write_atomic, write_report, Report,
};

#[derive(Parser)]
#[command(name = "camsim", version, about = "Capacitive-RRAM ternary CAM simulator")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: $CAMSIM_OUT or ./camsim_out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Extra output formats next to the JSON report.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Vec<OutputFormat>,

    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Fwd,
    Rev,
}

#[derive(Subcommand)]
enum Command {
    /// Fit device parameters from a two-column IV sweep CSV.
    FitDevice {
        iv_csv: PathBuf,
        /// Resistance at the 0.2 V read-out point (Ohm).
        #[arg(long)]
        rs: f64,
        /// State label recorded in the model card.
        #[arg(long, default_value = "custom")]
        state: String,
    },
    /// Run the six-row cell truth table.
    TruthTable,
    /// Search one column: stored data 'H'/'L', cue '1'/'0'/'X'.
    Search {
        #[arg(long)]
        data: String,
        #[arg(long)]
        cue: String,
    },
    /// Run the AAR read suite over all rows and both states.
    Aar,
    /// Sweep a linear stand-in resistor through the write stack.
    WriteSweep {
        #[arg(long, value_enum)]
        direction: DirectionArg,
    },
    /// Named suites: `table2`, or `all` for the configured experiment list.
    Suite { name: String },
    /// Parameter sweeps.
    Sweep {
        /// Currently: vsec.
        parameter: String,
        #[arg(long, default_value = "tt")]
        corner: String,
    },
    /// Per-bit energy map over the canonical 4x4 cases.
    EnergyMap,
    /// Match-line developing delay and search-delay split.
    Timing,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::DcNoConvergence { .. } | Error::Transient { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

/// Everything a subcommand needs.
struct Ctx {
    array: ArrayConfig,
    solver: SolverConfig,
    out_dir: PathBuf,
    formats: Vec<OutputFormat>,
    sweep_plan: SweepPlan,
    experiments: Vec<String>,
}

impl Ctx {
    fn want(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

fn run(cli: &Cli) -> camsim::Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        array: cfg.array.clone(),
        solver: cfg.solver.clone(),
        out_dir: resolve_out_dir(cli.out.as_deref(), cfg.out_dir.as_deref()),
        formats: cli.format.clone(),
        sweep_plan: cfg
            .sweep_plan
            .clone()
            .unwrap_or_else(|| SweepPlan::vsec(1.0, 1.35, 0.01)),
        experiments: cfg
            .experiments
            .clone()
            .unwrap_or_else(|| EXPERIMENT_NAMES.iter().map(|s| s.to_string()).collect()),
    };

    match &cli.command {
        Command::FitDevice { iv_csv, rs, state } => cmd_fit_device(&ctx, iv_csv, *rs, state),
        Command::TruthTable => cmd_truth_table(&ctx),
        Command::Search { data, cue } => cmd_search(&ctx, data, cue),
        Command::Aar => cmd_aar(&ctx),
        Command::WriteSweep { direction } => {
            let dir = match direction {
                DirectionArg::Fwd => WriteDirection::Forward,
                DirectionArg::Rev => WriteDirection::Reverse,
            };
            cmd_write_sweep(&ctx, dir)
        }
        Command::Suite { name } => match name.as_str() {
            "table2" => cmd_table2(&ctx),
            "all" => cmd_suite_all(&ctx),
            other => Err(Error::invalid(format!(
                "unknown suite '{other}' (expected table2 or all)"
            ))),
        },
        Command::Sweep { parameter, corner } => {
            if parameter != "vsec" {
                return Err(Error::invalid(format!(
                    "unknown sweep parameter '{parameter}'"
                )));
            }
            let corner: CornerName = corner.parse()?;
            cmd_sweep_vsec(&ctx, CornerModel::shipped(corner))
        }
        Command::EnergyMap => cmd_energy_map(&ctx),
        Command::Timing => cmd_timing(&ctx),
    }
}

fn cmd_suite_all(ctx: &Ctx) -> camsim::Result<()> {
    for name in &ctx.experiments {
        println!("== {name}");
        match name.as_str() {
            "truth-table" => cmd_truth_table(ctx)?,
            "table2" => cmd_table2(ctx)?,
            "energy-map" => cmd_energy_map(ctx)?,
            "timing" => cmd_timing(ctx)?,
            "aar" => cmd_aar(ctx)?,
            "write-sweep-fwd" => cmd_write_sweep(ctx, WriteDirection::Forward)?,
            "write-sweep-rev" => cmd_write_sweep(ctx, WriteDirection::Reverse)?,
            "vsec-tt" => cmd_sweep_vsec(ctx, CornerModel::shipped(CornerName::Tt))?,
            other => return Err(Error::invalid(format!("unknown experiment '{other}'"))),
        }
    }
    Ok(())
}

fn cmd_fit_device(ctx: &Ctx, iv_csv: &Path, rs: f64, state: &str) -> camsim::Result<()> {
    let text =
        std::fs::read_to_string(iv_csv).map_err(|e| Error::io(iv_csv.display().to_string(), e))?;
    let sweep = IvSweep::from_csv(&text)?;
    let mut fit = fit_iv_params(&sweep, rs)?;
    fit.params.state = match state.to_ascii_lowercase().as_str() {
        "lrs" => ResistiveState::lrs(rs),
        "hrs" => ResistiveState::hrs(rs),
        _ => ResistiveState::custom(rs),
    };
    let card = ModelCard::from_fit(&fit);
    let path = write_report(&ctx.out_dir, "model_card.json", &Report::new("model-card", &card))?;
    println!(
        "fitted b_p = {:.4} /V, b_n = {:.4} /V, rms(log i) = {:.3e}{} -> {}",
        card.b_p,
        card.b_n,
        card.fit_rms_log,
        if fit.boundary_hit { " [curvature bound hit]" } else { "" },
        path.display()
    );
    Ok(())
}

fn cmd_truth_table(ctx: &Ctx) -> camsim::Result<()> {
    #[derive(Serialize)]
    struct Row {
        cue: String,
        stored: StateLabel,
        mid_level: camsim::cell::Level,
        ml_level: camsim::cell::Level,
        v_mid_at_enable_v: f64,
        v_ml_at_sample_v: f64,
        matches_expected: bool,
    }
    let mut rows = Vec::new();
    let mut all_ok = true;
    for (cue, stored) in TRUTH_TABLE_CASES {
        let row = evaluate_truth_table(cue, stored, &ctx.array.cell, &ctx.solver)?;
        let (mid_exp, ml_exp) = expected_truth_table(cue, stored);
        let ok = row.mid_level == mid_exp && row.ml_level == ml_exp;
        all_ok &= ok;
        println!(
            "cue {:?} stored {:?}: mid {:?} ({:.3} V), ml {:?} ({:.3} V) {}",
            cue,
            stored,
            row.mid_level,
            row.v_mid_at_enable_v,
            row.ml_level,
            row.v_ml_at_sample_v,
            if ok { "ok" } else { "MISMATCH" }
        );
        rows.push(Row {
            cue: format!("{cue:?}"),
            stored,
            mid_level: row.mid_level,
            ml_level: row.ml_level,
            v_mid_at_enable_v: row.v_mid_at_enable_v,
            v_ml_at_sample_v: row.v_ml_at_sample_v,
            matches_expected: ok,
        });
    }
    write_report(
        &ctx.out_dir,
        "truth_table_report.json",
        &Report::new("truth-table", &rows),
    )?;
    if !all_ok {
        return Err(Error::invalid("truth table mismatch; see report"));
    }
    Ok(())
}

fn cmd_search(ctx: &Ctx, data: &str, cue: &str) -> camsim::Result<()> {
    let mut array = ctx.array.clone();
    let data = DataWord::parse(data, &array)?;
    let cue = CueWord::parse(cue, &array)?;
    if array.vref_car_v.is_none() {
        let cal = calibrate_vref_car(&array, &ctx.solver)?;
        array.vref_car_v = Some(cal.vref_car_v);
    }
    let outcome = run_search(&data, &cue, &array, &ctx.solver)?;
    println!(
        "{:?}: ml = {:.4} V (vref {:.4} V), truth misses = {}",
        outcome.decision,
        outcome.ml_sample_v,
        array.vref_car_v.unwrap(),
        outcome.miss_count_truth
    );
    write_report(&ctx.out_dir, "search_report.json", &Report::new("search", &outcome))?;
    if ctx.want(OutputFormat::Csv) {
        let (trace, _schedule) = camsim::array::run_search_trace(&data, &cue, &array, &ctx.solver)?;
        let csv = camsim::circuit::measure::trace_to_csv(&trace, &["ml".to_string()])?;
        write_atomic(&ctx.out_dir.join("search_trace.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_aar(ctx: &Ctx) -> camsim::Result<()> {
    let report = run_aar_suite(&ctx.array, &ctx.solver)?;
    println!(
        "AAR: {}/{} correct (vref {:.4} V, levels {:.4}/{:.4} V)",
        report.reads.len() - report.misreads,
        report.reads.len(),
        report.vref_aar_v,
        report.lrs_level_v,
        report.hrs_level_v
    );
    write_report(&ctx.out_dir, "aar_report.json", &Report::new("aar-suite", &report))?;
    Ok(())
}

fn cmd_write_sweep(ctx: &Ctx, dir: WriteDirection) -> camsim::Result<()> {
    let sweep =
        camsim::experiments::write_esr_sweep(dir, &default_esr_grid(), &ctx.array, &ctx.solver)?;
    let tag = match dir {
        WriteDirection::Forward => "fwd",
        WriteDirection::Reverse => "rev",
    };
    write_report(
        &ctx.out_dir,
        &format!("write_sweep_{tag}.json"),
        &Report::new("write-esr-sweep", &sweep),
    )?;
    let pts: Vec<(f64, f64)> = sweep
        .points
        .iter()
        .map(|p| (p.r_ohms, p.v_across_r_v))
        .collect();
    if ctx.want(OutputFormat::Csv) {
        write_atomic(
            &ctx.out_dir.join(format!("write_sweep_{tag}.csv")),
            &curve_csv(
                "voltage across the stand-in resistor at the write DC operating point",
                "r_ohms",
                "v_across_r_v",
                &pts,
            ),
        )?;
    }
    if ctx.want(OutputFormat::Svg) {
        write_atomic(
            &ctx.out_dir.join(format!("write_sweep_{tag}.svg")),
            &svg_line_plot(
                &format!("write ESR sweep ({tag})"),
                "R (ohm)",
                "V across R (V)",
                &[(tag.to_string(), pts)],
            ),
        )?;
    }
    println!("write sweep ({tag}): {} points", sweep.points.len());
    Ok(())
}

fn cmd_table2(ctx: &Ctx) -> camsim::Result<()> {
    let report = run_table2_suite(&ctx.array, &ctx.solver)?;
    println!(
        "table2: gap = {:.2} mV (vref {:.4} V), mismatches: {}",
        report.gap.gap_v * 1e3,
        report.vref_car_v,
        report.mismatches.len()
    );
    for row in &report.decisions {
        println!("  {row:?}");
    }
    write_report(&ctx.out_dir, "table2_report.json", &Report::new("table2", &report))?;
    if ctx.want(OutputFormat::Csv) {
        let mut csv = String::from("# 4x4 decision matrix; rows cue, cols data\n");
        for c in 0..4 {
            let cells: Vec<String> = (0..4)
                .map(|d| format!("{:?}", report.decisions[c][d]))
                .collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        write_atomic(&ctx.out_dir.join("table2_matrix.csv"), &csv)?;
    }
    if report.mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid("decision matrix mismatches; see report"))
    }
}

fn cmd_sweep_vsec(ctx: &Ctx, corner: CornerModel) -> camsim::Result<()> {
    let report = sweep_vsec(&ctx.sweep_plan, &corner, &ctx.array, &ctx.solver)?;
    println!(
        "vsec sweep ({:?}): argmax = {:?} V, max gap = {:?} mV",
        corner.name,
        report.argmax_vsec_v,
        report.max_gap_v.map(|g| g * 1e3)
    );
    let tag = format!("{:?}", corner.name).to_lowercase();
    write_report(
        &ctx.out_dir,
        &format!("vsec_sweep_{tag}.json"),
        &Report::new("vsec-sweep", &report),
    )?;
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter_map(|p| p.gap_v.map(|g| (p.vsec_v, g)))
        .collect();
    if ctx.want(OutputFormat::Csv) {
        write_atomic(
            &ctx.out_dir.join(format!("vsec_sweep_{tag}.csv")),
            &curve_csv("hit/miss gap vs secondary supply", "vsec_v", "gap_v", &pts),
        )?;
    }
    if ctx.want(OutputFormat::Svg) {
        write_atomic(
            &ctx.out_dir.join(format!("vsec_sweep_{tag}.svg")),
            &svg_line_plot("gap vs V_SEC", "V_SEC (V)", "gap (V)", &[(tag, pts)]),
        )?;
    }
    Ok(())
}

fn cmd_energy_map(ctx: &Ctx) -> camsim::Result<()> {
    let report = energy_map(&ctx.array, &ctx.solver)?;
    println!(
        "energy map: worst cue{}/data{}, best cue{}/data{}, core share {:.1}%",
        report.worst_case.0,
        report.worst_case.1,
        report.best_case.0,
        report.best_case.1,
        report.core_share * 100.0
    );
    write_report(&ctx.out_dir, "energy_map.json", &Report::new("energy-map", &report))?;
    if ctx.want(OutputFormat::Csv) {
        let mut csv = String::from("# per-bit search energy (J); rows cue, cols data\n");
        for row in &report.per_bit_j {
            let cells: Vec<String> = row.iter().map(|e| format!("{e:.6e}")).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        write_atomic(&ctx.out_dir.join("energy_map.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_timing(ctx: &Ctx) -> camsim::Result<()> {
    let report = measure_search_timing(&ctx.array, &ctx.solver)?;
    println!(
        "developing delay: search-HRS {:?} ps, search-LRS {:?} ps; search delay {:.3} ns \
         (pre {:.3} + eval {:.3})",
        report.ml_developing_delay_hrs_s.map(|t| t * 1e12),
        report.ml_developing_delay_lrs_s.map(|t| t * 1e12),
        report.search_delay_s * 1e9,
        report.pre_charge_split_s * 1e9,
        report.evaluate_split_s * 1e9
    );
    write_report(&ctx.out_dir, "timing_report.json", &Report::new("timing", &report))?;
    Ok(())
}
