//! Command-line front end: thin argument parsing, output plumbing and
//! error-to-exit-code mapping around the library pipelines.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 I/O error, 4 pipeline error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::analysis::{boundedness_check, cper_sweep};
use crate::density::{local_bounds, DensityField};
use crate::grid::GridCluster;
use crate::infiltration::{density_zero_radius, infiltrate};
use crate::io::{
    load_cluster, load_density, save_csv, save_json_report, save_pgm, save_raw, with_suffix,
};
use crate::measures::{cluster_perimeter, weighted_volume};
use crate::surgery::{
    adjust_single_chamber, transfer, verify_transfer_bound, PlanOptions, TransferResult,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "isocluster",
    version,
    about = "Measure, adjust and analyze weighted grid clusters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Input cluster (.pgm or .raw with a .json sidecar).
    #[arg(long)]
    pub input: PathBuf,
    /// Density configuration JSON; uniform weights when omitted.
    #[arg(long)]
    pub density: Option<PathBuf>,
    /// Output prefix; reports, clusters and curves get suffixed names.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every randomized choice in the pipeline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SurgeryArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Chamber gaining volume.
    #[arg(long)]
    pub i: u8,
    /// Chamber giving volume.
    #[arg(long)]
    pub j: u8,
    /// Signed volume to move into chamber `i`.
    #[arg(long)]
    pub epsilon: f64,
    /// Fallback perimeter constant when the weight modulus vanishes.
    #[arg(long, default_value_t = 0.7)]
    pub k_user: f64,
    /// Include the per-term perimeter accounting in the report.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct InfiltrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// First retained chamber.
    #[arg(long)]
    pub i: u8,
    /// Second retained chamber.
    #[arg(long)]
    pub j: u8,
    /// Ball center, comma-separated coordinates.
    #[arg(long)]
    pub x: String,
    /// Ball radius; searched automatically when omitted.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Write the emptied-cell mask as a PGM overlay.
    #[arg(long)]
    pub dump_infiltration: bool,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Chamber whose volume changes by epsilon.
    #[arg(long)]
    pub h: u8,
    /// Signed volume change.
    #[arg(long)]
    pub epsilon: f64,
    /// Include every transfer plan in the report.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct CperArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Chamber adjusted during the sweep.
    #[arg(long, default_value_t = 1)]
    pub h: u8,
    /// Comma-separated volume scales.
    #[arg(long, default_value = "1e-2,1e-3,1e-4,1e-5,1e-6")]
    pub t_grid: String,
    /// Seeded adjustments per scale.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct BoundednessArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Constant in the differential inequality margin.
    #[arg(long, default_value_t = 1.0)]
    pub c_prime: f64,
    /// Comma-separated truncation radii; an even grid over the window
    /// when omitted.
    #[arg(long)]
    pub t_grid: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weighted volumes, perimeter and interface breakdown.
    Measure(CommonArgs),
    /// One localized volume transfer between two chambers.
    Surgery(SurgeryArgs),
    /// Empty a ball of chambers other than the named pair.
    Infiltrate(InfiltrateArgs),
    /// Chained transfers changing one chamber's volume by epsilon.
    Adjust(AdjustArgs),
    /// Run the invariant suite on the input; exit 0 iff all checks pass.
    Verify(CommonArgs),
    /// Measured perimeter-cost curve over a grid of volume scales.
    Cper(CperArgs),
    /// Truncation-function trace and boundedness verdict.
    Boundedness(BoundednessArgs),
}

/// Stable name of an error variant, used in failure reports.
fn error_name(e: &Error) -> &'static str {
    match e {
        Error::EmptyInterface { .. } => "EmptyInterface",
        Error::ConditionViolated { .. } => "ConditionViolated",
        Error::NoCandidateCube => "NoCandidateCube",
        Error::EpsilonTooLarge { .. } => "EpsilonTooLarge",
        Error::BisectionBracketFailure { .. } => "BisectionBracketFailure",
        Error::DisconnectedChamber(_) => "DisconnectedChamber",
        Error::BallPackingFailure => "BallPackingFailure",
        Error::BallNotBiphase { .. } => "BallNotBiphase",
        Error::NoValidRadius => "NoValidRadius",
        Error::CasePartitionFailure { .. } => "CasePartitionFailure",
        Error::CubeExceedsGrid => "CubeExceedsGrid",
        Error::ProfileCubeMismatch => "ProfileCubeMismatch",
        Error::InvalidDensity(_) => "InvalidDensity",
        Error::Parse(_) => "Parse",
        Error::InvalidInput(_) => "InvalidInput",
        Error::Config(_) => "Config",
        Error::Io(_) => "Io",
        Error::Json(_) => "Json",
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) => 3,
        Error::Config(_) | Error::Parse(_) | Error::InvalidInput(_) | Error::InvalidDensity(_) => {
            2
        }
        _ => 4,
    }
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad coordinate {t:?}")))
        })
        .collect()
}

fn load_inputs(common: &CommonArgs) -> Result<(GridCluster, DensityField)> {
    let cluster = load_cluster(&common.input)?;
    let field = load_density(common.density.as_deref())?;
    Ok((cluster, field))
}

fn emit_report(report: &Value, out: Option<&Path>) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    if let Some(prefix) = out {
        save_json_report(report, &with_suffix(prefix, ".report.json"))?;
    }
    Ok(())
}

fn emit_cluster(cluster: &GridCluster, out: Option<&Path>) -> Result<()> {
    if let Some(prefix) = out {
        save_raw(cluster, &with_suffix(prefix, ".raw"))?;
        if cluster.dims() == 2 {
            save_pgm(cluster, &with_suffix(prefix, ".pgm"))?;
        }
    }
    Ok(())
}

/// Run one command and convert errors to the documented exit codes.
pub fn run(cli: Cli) -> i32 {
    let out = out_prefix(&cli.command).cloned();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let report = json!({ "error": error_name(&e), "message": e.to_string() });
            if let Some(prefix) = out {
                let _ = save_json_report(&report, &with_suffix(&prefix, ".report.json"));
            }
            exit_code_for(&e)
        }
    }
}

fn out_prefix(cmd: &Command) -> Option<&PathBuf> {
    let common = match cmd {
        Command::Measure(c) | Command::Verify(c) => c,
        Command::Surgery(a) => &a.common,
        Command::Infiltrate(a) => &a.common,
        Command::Adjust(a) => &a.common,
        Command::Cper(a) => &a.common,
        Command::Boundedness(a) => &a.common,
    };
    common.out.as_ref()
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Measure(args) => {
            let (cluster, field) = load_inputs(&args)?;
            let report = cluster_perimeter(&cluster, &field)?;
            emit_report(&serde_json::to_value(&report)?, args.out.as_deref())?;
            Ok(0)
        }
        Command::Surgery(args) => {
            let (cluster, field) = load_inputs(&args.common)?;
            let opts = PlanOptions { k_user: args.k_user, seed: args.common.seed, ..Default::default() };
            match transfer(&cluster, &field, args.i, args.j, args.epsilon, &opts)? {
                TransferResult::Transferred(outcome) => {
                    let bound = verify_transfer_bound(&outcome);
                    let mut report = json!({
                        "branch": "transferred",
                        "plan": outcome.plan,
                        "before": outcome.before,
                        "after": outcome.after,
                        "perimeter_delta_exact": outcome.perimeter_delta_exact,
                        "delta": outcome.delta,
                        "bound": bound,
                    });
                    if args.trace {
                        report["terms"] = serde_json::to_value(&outcome.terms)?;
                    }
                    emit_report(&report, args.common.out.as_deref())?;
                    emit_cluster(&outcome.cluster, args.common.out.as_deref())?;
                }
                TransferResult::PerimeterDecreased { cluster, perimeter_drop } => {
                    let report = json!({
                        "branch": "perimeter-decreased",
                        "perimeter_drop": perimeter_drop,
                    });
                    emit_report(&report, args.common.out.as_deref())?;
                    emit_cluster(&cluster, args.common.out.as_deref())?;
                }
            }
            Ok(0)
        }
        Command::Infiltrate(args) => {
            let (cluster, field) = load_inputs(&args.common)?;
            let x = parse_point(&args.x)?;
            if x.len() != cluster.dims() {
                return Err(Error::Config(format!(
                    "center has {} coordinates for a {}-dimensional grid",
                    x.len(),
                    cluster.dims()
                )));
            }
            let radius = match args.radius {
                Some(r) => r,
                None => {
                    let lb = local_bounds(&field, &x, 4096)?;
                    let h_const = 10.0 * lb.m.powi(4);
                    density_zero_radius(&cluster, &x, args.i, args.j, h_const)?
                }
            };
            let (result, report) = infiltrate(&cluster, &field, &x, args.i, args.j, radius)?;
            if args.dump_infiltration {
                if let Some(prefix) = args.common.out.as_deref() {
                    let mask = infiltration_mask(&cluster, &x, radius, args.i, args.j)?;
                    save_pgm(&mask, &with_suffix(prefix, ".infiltration.pgm"))?;
                }
            }
            emit_report(&serde_json::to_value(&report)?, args.common.out.as_deref())?;
            emit_cluster(&result, args.common.out.as_deref())?;
            Ok(0)
        }
        Command::Adjust(args) => {
            let (cluster, field) = load_inputs(&args.common)?;
            let opts = PlanOptions { seed: args.common.seed, ..Default::default() };
            let (result, report) =
                adjust_single_chamber(&cluster, &field, args.h, args.epsilon, None, &opts)?;
            let mut value = serde_json::to_value(&report)?;
            if !args.trace {
                value.as_object_mut().unwrap().remove("plans");
            }
            emit_report(&value, args.common.out.as_deref())?;
            emit_cluster(&result, args.common.out.as_deref())?;
            Ok(0)
        }
        Command::Verify(args) => {
            let (cluster, field) = load_inputs(&args)?;
            let (all_pass, report) = run_invariant_suite(&cluster, &field)?;
            emit_report(&report, args.out.as_deref())?;
            Ok(if all_pass { 0 } else { 1 })
        }
        Command::Cper(args) => {
            let (cluster, field) = load_inputs(&args.common)?;
            let t_grid = parse_point(&args.t_grid)?;
            let curve = cper_sweep(
                &cluster,
                &field,
                args.h,
                &t_grid,
                args.batch,
                args.common.seed,
            )?;
            emit_report(&serde_json::to_value(&curve)?, args.common.out.as_deref())?;
            if let Some(prefix) = args.common.out.as_deref() {
                let rows: Vec<Vec<f64>> = curve
                    .t_grid
                    .iter()
                    .zip(curve.c_values.iter().zip(&curve.omega_curve))
                    .map(|(&t, (&c, &w))| vec![t, c, w])
                    .collect();
                save_csv(&["t", "c_value", "omega"], &rows, &with_suffix(prefix, ".csv"))?;
            }
            Ok(0)
        }
        Command::Boundedness(args) => {
            let (cluster, field) = load_inputs(&args.common)?;
            let t_grid = match &args.t_grid {
                Some(s) => parse_point(s)?,
                None => default_radius_grid(&cluster),
            };
            let (verdict, trace) = boundedness_check(&cluster, &field, args.c_prime, &t_grid)?;
            let report = json!({ "verdict": verdict, "trace": trace });
            emit_report(&report, args.common.out.as_deref())?;
            if let Some(prefix) = args.common.out.as_deref() {
                let rows: Vec<Vec<f64>> = (0..trace.t_grid.len())
                    .map(|k| {
                        vec![
                            trace.t_grid[k],
                            trace.v_values[k],
                            trace.perimeter_terms[k].0,
                            trace.perimeter_terms[k].1,
                            trace.differential_margin[k],
                        ]
                    })
                    .collect();
                save_csv(
                    &["t", "v", "perimeter_inside", "perimeter_outside", "margin"],
                    &rows,
                    &with_suffix(prefix, ".csv"),
                )?;
            }
            Ok(0)
        }
    }
}

/// Mask cluster marking the cells the infiltration step may relabel.
fn infiltration_mask(
    cluster: &GridCluster,
    x: &[f64],
    radius: f64,
    i: u8,
    j: u8,
) -> Result<GridCluster> {
    let mut labels = vec![0u8; cluster.num_cells()];
    for cell in cluster.cells() {
        let c = cluster.cell_center(&cell);
        let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let l = cluster.label(&cell);
        if d2.sqrt() <= radius && l != i && l != j && l != 0 {
            labels[cluster.flat_index(&cell)] = 1;
        }
    }
    GridCluster::new(
        cluster.shape.clone(),
        cluster.spacing,
        cluster.origin.clone(),
        labels,
        1,
    )
}

/// Evenly spaced truncation radii from two cells out to the far grid
/// corner, measured from the coordinate origin.
fn default_radius_grid(cluster: &GridCluster) -> Vec<f64> {
    let h = cluster.spacing;
    let mut r_max = 0.0f64;
    for corner in 0..(1usize << cluster.dims()) {
        let d2: f64 = (0..cluster.dims())
            .map(|d| {
                let lo = cluster.origin[d];
                let hi = cluster.origin[d] + cluster.shape[d] as f64 * h;
                let v = if corner >> d & 1 == 1 { hi } else { lo };
                v * v
            })
            .sum();
        r_max = r_max.max(d2.sqrt());
    }
    let lo = 2.0 * h;
    let steps = 32;
    (0..=steps)
        .map(|k| lo + (r_max - lo) * k as f64 / steps as f64)
        .collect()
}

/// The cross-module invariant suite behind `verify`.
fn run_invariant_suite(cluster: &GridCluster, field: &DensityField) -> Result<(bool, Value)> {
    let mut checks: Vec<Value> = Vec::new();
    let push = |name: &str, passed: bool, detail: String, checks: &mut Vec<Value>| {
        checks.push(json!({ "name": name, "passed": passed, "detail": detail }));
    };

    // Labels stay within the declared chamber count.
    let max_label = cluster.labels.iter().copied().max().unwrap_or(0);
    push(
        "label-range",
        max_label <= cluster.m,
        format!("max label {max_label} of {}", cluster.m),
        &mut checks,
    );

    // Weighted volumes are finite and nonnegative.
    let volumes = weighted_volume(cluster, field)?;
    let vols_ok = volumes.iter().all(|v| v.is_finite() && *v >= 0.0);
    push("volume-nonnegative", vols_ok, format!("{volumes:?}"), &mut checks);

    // The facet sweep and the per-chamber combination agree.
    let report = cluster_perimeter(cluster, field)?;
    let alt = report.perimeter_from_chambers();
    let route_ok = (report.perimeter - alt).abs() <= 1e-9 * (1.0 + report.perimeter);
    push(
        "perimeter-route-consistency",
        route_ok,
        format!("facet sweep {} vs chamber route {alt}", report.perimeter),
        &mut checks,
    );

    // A zero-volume transfer is the identity on any admissible pair.
    let mut identity: Option<(bool, String)> = None;
    'pairs: for i in 1..=cluster.m {
        for j in 0..=cluster.m {
            if i == j {
                continue;
            }
            match transfer(cluster, field, i, j, 0.0, &PlanOptions::default()) {
                Ok(TransferResult::Transferred(outcome)) => {
                    let same = outcome.cluster.labels == cluster.labels;
                    identity = Some((same, format!("pair ({i}, {j})")));
                    break 'pairs;
                }
                Ok(TransferResult::PerimeterDecreased { .. }) => {
                    identity = Some((true, format!("pair ({i}, {j}): degenerate pocket")));
                    break 'pairs;
                }
                Err(
                    Error::EmptyInterface { .. }
                    | Error::ConditionViolated { .. }
                    | Error::NoCandidateCube,
                ) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    match identity {
        Some((ok, detail)) => push("zero-transfer-identity", ok, detail, &mut checks),
        None => push(
            "zero-transfer-identity",
            true,
            "no admissible chamber pair; skipped".into(),
            &mut checks,
        ),
    }

    // The truncation function is nonincreasing on a coarse grid.
    let grid: Vec<f64> = default_radius_grid(cluster).into_iter().step_by(4).collect();
    let (_, trace) = boundedness_check(cluster, field, 1.0, &grid)?;
    let mono = trace.v_values.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    push("truncation-monotone", mono, format!("{:?}", trace.v_values), &mut checks);

    let all_pass = checks.iter().all(|c| c["passed"].as_bool() == Some(true));
    Ok((all_pass, json!({ "pass": all_pass, "checks": checks })))
}
