use std::fs;
use std::io::{self, Write};
use std::path::Path;

use deltagraph::dataset::ScatteringDataset;
use deltagraph::fleet::{self, FleetSpec};
use deltagraph::graph::{self, MetricGraph};
use deltagraph::inverse::{self, RecoveryOptions};
use deltagraph::linalg;
use deltagraph::oracle;
use deltagraph::scattering;
use deltagraph::verify::{self, relative_error, CheckResult};
use deltagraph::weyl::SpectralPoint;
use deltagraph::Error;
use serde_json::{json, Value};

use crate::args::{
    ContractArgs, ForwardArgs, GridArgs, InvertArgs, OracleArgs, RecoveryArgs, RoundtripArgs, VerifyArgs,
};
use crate::failure::{Failure, Outcome, NON_CONVERGENCE, SINGULAR, VERIFY};

/// Couplings drawn by `verify` fleets.
const FLEET_SPEC: FleetSpec = FleetSpec {
    max_vertices: 6,
    max_edges: 8,
    max_leads: 3,
    length_range: (0.5, 2.0),
    coupling_range: (-5.0, 5.0),
    loop_probability: 0.15,
};

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn load_graph(path: &Path) -> Result<MetricGraph, Failure> {
    let g = MetricGraph::from_json(&read(path)?).map_err(|e| Failure::io(path, e))?;
    g.ensure_valid()?;
    Ok(g)
}

fn load_dataset(path: &Path) -> Result<ScatteringDataset, Failure> {
    ScatteringDataset::from_json(&read(path)?).map_err(|e| Failure::io(path, e))
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| Failure::io(p, e)),
        None => {
            let mut out = io::stdout().lock();
            match writeln!(out, "{text}") {
                // A closed reader (`| head`) is not an error of ours.
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::input(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

fn json_failure(e: serde_json::Error) -> Failure {
    Failure::input(e.to_string())
}

fn is_singular(e: &Error) -> bool {
    matches!(
        e,
        Error::SpectralSingularity { .. }
            | Error::SingularMatrix { .. }
            | Error::SingularFactor { .. }
            | Error::SingularSystem { .. }
    )
}

/// Every point where Σ̂_e cannot be formed, listed in one failure.
fn reject_singular_points(g: &MetricGraph, points: &[SpectralPoint]) -> Outcome {
    let kappa = g.couplings();
    let mut offending = Vec::new();
    for &p in points {
        match scattering::sigma_external(g, &kappa, p) {
            Ok(_) => {}
            Err(e) if is_singular(&e) => offending.push(format!("{} ({e})", p.z())),
            Err(e) => return Err(e.into()),
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            SINGULAR,
            format!("scattering matrix singular at {} point(s):\n  {}", offending.len(), offending.join("\n  ")),
        ))
    }
}

fn synthesise(g: &MetricGraph, grids: &GridArgs, noise: f64, seed: u64) -> Result<ScatteringDataset, Failure> {
    let points = grids.points()?;
    if points.is_empty() {
        return Err(Failure::input("no spectral grid given (use --grid, --k-grid or --tau-grid)"));
    }
    reject_singular_points(g, &points)?;
    Ok(oracle::synth_dataset(g, &g.couplings(), &points, noise, seed)?)
}

fn recovery_options(args: &RecoveryArgs) -> RecoveryOptions {
    let d = RecoveryOptions::default();
    RecoveryOptions {
        bound: args.bound.unwrap_or(d.bound),
        restarts: args.restarts.unwrap_or(d.restarts),
        multistart: !args.no_multistart,
        ..d
    }
}

pub fn forward(args: ForwardArgs) -> Outcome {
    let g = load_graph(&args.graph)?;
    let dataset = synthesise(&g, &args.grids, args.noise, args.seed)?;
    emit(Some(&args.out), &dataset.to_json()?)?;
    let csv_path = args.csv.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    let file = fs::File::create(&csv_path).map_err(|e| Failure::io(&csv_path, e))?;
    dataset.write_csv(file)?;
    println!(
        "wrote {} samples to {} and {}",
        dataset.samples.len(),
        args.out.display(),
        csv_path.display()
    );
    Ok(())
}

pub fn invert(args: InvertArgs) -> Outcome {
    let g = load_graph(&args.graph)?;
    let dataset = load_dataset(&args.data)?;
    let report = inverse::recover_couplings(&dataset, &g, &recovery_options(&args.recovery))?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report).map_err(json_failure)?)?;
    if !report.converged {
        return Err(Failure::new(
            NON_CONVERGENCE,
            format!(
                "fit did not converge ({:?}, residual {:e}); best iterate written",
                report.termination, report.residual_norm
            ),
        ));
    }
    if args.out.is_some() {
        for (id, a) in report.vertices.iter().zip(&report.couplings) {
            println!("{id}\t{a}");
        }
    }
    Ok(())
}

fn summarise(checks: &[&CheckResult]) -> Vec<Value> {
    let mut names: Vec<&str> = Vec::new();
    for c in checks {
        if !names.contains(&c.name.as_str()) {
            names.push(&c.name);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let of_name: Vec<&&CheckResult> = checks.iter().filter(|c| c.name == name).collect();
            json!({
                "name": name,
                "passed": of_name.iter().all(|c| c.passed),
                "max_error": of_name.iter().map(|c| c.max_error).fold(0.0, f64::max),
                "tolerance": of_name[0].tolerance,
            })
        })
        .collect()
}

pub fn verify(args: VerifyArgs) -> Outcome {
    let tolerances = args.tolerances.resolve();
    let grids = if args.grids.is_empty() {
        GridArgs::verify_default()
    } else {
        args.grids.clone()
    };
    let points = grids.points()?;
    let graphs = match &args.graph {
        Some(path) => vec![load_graph(path)?],
        None => fleet::fleet(args.seed, args.count, &FLEET_SPEC),
    };
    let mut reports = Vec::with_capacity(graphs.len());
    for g in &graphs {
        reports.push(verify::verify_graph(g, &points, &tolerances)?);
    }
    let dataset_check = match &args.data {
        Some(path) => Some(verify::verify_dataset_unitarity(&load_dataset(path)?, tolerances.unitarity)?),
        None => None,
    };

    let mut all: Vec<&CheckResult> = reports.iter().flat_map(|r| &r.checks).collect();
    all.extend(dataset_check.iter());
    let summary = summarise(&all);
    let passed = all.iter().all(|c| c.passed);
    let graph_entries: Vec<Value> = graphs
        .iter()
        .zip(&reports)
        .map(|(g, r)| json!({ "geometry_hash": g.geometry_hash(), "report": r }))
        .collect();
    let document = json!({
        "seed": args.graph.is_none().then_some(args.seed),
        "tolerances": tolerances,
        "graphs": graph_entries,
        "dataset": dataset_check,
        "summary": summary,
        "passed": passed,
    });
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&document).map_err(json_failure)?)?;
    if args.out.is_some() {
        for s in &summary {
            println!(
                "[{}] {} max error {:e}",
                if s["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" },
                s["name"].as_str().unwrap_or_default(),
                s["max_error"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = summary
            .iter()
            .filter(|s| s["passed"].as_bool() != Some(true))
            .filter_map(|s| s["name"].as_str())
            .collect();
        Err(Failure::new(VERIFY, format!("failed suites: {}", failed.join(", "))))
    }
}

pub fn contract(args: ContractArgs) -> Outcome {
    let g = load_graph(&args.graph)?;
    let contracted = graph::contract_edge(&g, &args.edge)?;
    emit(args.out.as_deref(), &contracted.to_json()?)
}

pub fn oracle(args: OracleArgs) -> Outcome {
    let g = load_graph(&args.graph)?;
    let tolerance = args.tolerances.resolve().oracle;
    let points = GridArgs {
        grid: Some(args.grid.clone()),
        tau_grid: None,
        k_grid: None,
        k_imag: Vec::new(),
    }
    .points()?;
    let kappa = g.couplings();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut worst = 0.0f64;
    for p in points {
        let s = p.z().re;
        let result = scattering::sigma_external(&g, &kappa, p)
            .and_then(|sigma| Ok((sigma, oracle::planewave_scattering(&g, &kappa, s)?)));
        match result {
            Ok((sigma, pw)) => {
                let deviation = relative_error(&sigma.values, &pw.relative);
                worst = worst.max(if deviation.is_nan() { f64::INFINITY } else { deviation });
                samples.push(json!({
                    "s": s,
                    "energy_used": pw.energy,
                    "deviation": deviation,
                    "planewave": linalg::to_pairs(&pw.relative),
                }));
            }
            Err(e) if is_singular(&e) => skipped.push(s),
            Err(e) => return Err(e.into()),
        }
    }
    let passed = !samples.is_empty() && worst < tolerance;
    let document = json!({
        "samples": samples,
        "skipped": skipped,
        "max_deviation": worst,
        "tolerance": tolerance,
        "passed": passed,
    });
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&document).map_err(json_failure)?)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::new(
            VERIFY,
            format!("plane-wave deviation {worst:e} exceeds {tolerance:e}"),
        ))
    }
}

pub fn roundtrip(args: RoundtripArgs) -> Outcome {
    let g = load_graph(&args.graph)?;
    let grids = if args.grids.is_empty() {
        GridArgs::recovery_default()
    } else {
        args.grids.clone()
    };
    let dataset = synthesise(&g, &grids, args.noise, args.seed)?;
    let report = inverse::recover_couplings(&dataset, &g, &recovery_options(&args.recovery))?;
    let truth: Vec<f64> = g.vertices.iter().map(|v| v.coupling.re).collect();
    let max_error = truth
        .iter()
        .zip(&report.couplings)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let passed = report.converged && max_error < args.tol_couplings;
    let document = json!({
        "truth": truth,
        "recovered": report.couplings,
        "max_error": max_error,
        "tolerance": args.tol_couplings,
        "samples": dataset.samples.len(),
        "passed": passed,
        "report": report,
    });
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&document).map_err(json_failure)?)?;
    if !report.converged {
        return Err(Failure::new(NON_CONVERGENCE, "fit did not converge; best iterate written"));
    }
    if max_error >= args.tol_couplings {
        return Err(Failure::new(
            VERIFY,
            format!("max |â − a| = {max_error:e} exceeds {:e}", args.tol_couplings),
        ));
    }
    if args.out.is_some() {
        println!("max |â − a| = {max_error:e} over {} vertices", truth.len());
    }
    Ok(())
}
