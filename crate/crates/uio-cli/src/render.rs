//! Table and JSON rendering of reports. All numeric output is printed with
//! 12 significant digits.

use nalgebra::{Complex, DMatrix};
use serde_json::json;

use uio_core::datamat::{AssumptionReport, AssumptionVerdict, DataMatrices};
use uio_core::ddcheck;
use uio_core::ddsynth::{Baseline, Synthesis};
use uio_core::numkit::Tolerance;
use uio_core::oracle::{Construction, ExistenceReport, SystemModel, UioRealization};

pub fn sig(v: f64) -> String {
    format!("{v:.11e}")
}

fn complex_list(zs: &[Complex<f64>]) -> String {
    if zs.is_empty() {
        return "none".into();
    }
    zs.iter()
        .map(|z| {
            if z.im.abs() <= 1e-12 * z.re.abs().max(1.0) {
                sig(z.re)
            } else {
                format!("{}{}{}i", sig(z.re), if z.im < 0.0 { "-" } else { "+" }, sig(z.im.abs()))
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn print_tolerances(tol: &Tolerance) {
    println!(
        "tolerances: rank {} | residual {} | stability margin {}",
        sig(tol.rank_tol()),
        sig(tol.residual_tol()),
        sig(tol.stability_margin())
    );
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "FAILS"
    }
}

pub fn print_data_report(
    dm: &DataMatrices,
    assumption: &AssumptionReport,
    report: &ddcheck::ExistenceReport,
    tol: &Tolerance,
) {
    println!(
        "data-driven existence check (n={}, m={}, p={}, r={}, T={})",
        dm.n, dm.m, dm.p, dm.r, dm.horizon
    );
    match assumption.verdict {
        AssumptionVerdict::Holds => println!(
            "  data assumption          holds        rank[Up;Dp;Xp] = {}/{}",
            assumption.full_rank.unwrap_or(0),
            assumption.full_required
        ),
        AssumptionVerdict::Fails => println!(
            "  data assumption          FAILS        rank[Up;Dp;Xp] = {}/{}",
            assumption.full_rank.unwrap_or(0),
            assumption.full_required
        ),
        AssumptionVerdict::Unverifiable => println!(
            "  data assumption          unverifiable surrogate rank[Up;Xp] = {}/{} (necessary evidence only)",
            assumption.surrogate_rank, assumption.surrogate_required
        ),
    }
    println!(
        "  kernel inclusion         {:<12} residual {} (kernel dim {})",
        verdict(report.kernel.holds),
        sig(report.kernel.residual),
        report.kernel.kernel_dim
    );
    println!(
        "  unit-circle rank test    {:<12} normal rank {}/{}, offending z: {}",
        verdict(report.rank_condition.holds),
        report.rank_condition.normal_rank,
        report.rank_condition.expected_rank,
        complex_list(&report.rank_condition.offending)
    );
    if report.marginal {
        println!("  note: a verdict sits close to its threshold; treat it as marginal");
    }
    println!(
        "verdict: an unknown-input observer {} for the generating system",
        if report.exists {
            "EXISTS"
        } else {
            "does NOT exist"
        }
    );
    print_tolerances(tol);
}

pub fn print_model_report(model: &SystemModel, report: &ExistenceReport, tol: &Tolerance) {
    println!(
        "model-based existence check (n={}, m={}, p={}, r={})",
        model.state_dim(),
        model.input_dim(),
        model.output_dim(),
        model.disturbance_dim()
    );
    println!(
        "  rank(CE) = rank(E) = r   {:<12} rank(CE) = {}, rank(E) = {}",
        verdict(report.rank_ce_ok),
        report.rank_ce,
        report.rank_e
    );
    println!(
        "  unit-circle rank test    {:<12} normal rank {}/{}, offending z: {}",
        verdict(report.rosenbrock_ok),
        report.rosenbrock_normal_rank,
        report.rosenbrock_expected_rank,
        complex_list(&report.unstable_drop_points)
    );
    println!(
        "verdict: the system {} strong* detectable; an observer {}",
        if report.strong_star_detectable {
            "is"
        } else {
            "is NOT"
        },
        if report.strong_star_detectable {
            "exists"
        } else {
            "does not exist"
        }
    );
    print_tolerances(tol);
}

fn print_matrix(name: &str, m: &DMatrix<f64>) {
    if m.ncols() == 0 || m.nrows() == 0 {
        println!("  {name} = ({}x{} empty)", m.nrows(), m.ncols());
        return;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| sig(m[(i, j)])).collect();
        if i == 0 {
            println!("  {name} = [ {} ]", row.join("  "));
        } else {
            println!("  {}   [ {} ]", " ".repeat(name.len()), row.join("  "));
        }
    }
}

pub fn print_observer(uio: &UioRealization, tol: &Tolerance) {
    let spectrum = uio_core::numkit::spectrum(&uio.a_uio, tol).expect("observer spectrum");
    println!("observer realization:");
    print_matrix("A_uio", &uio.a_uio);
    print_matrix("B_u", &uio.b_u);
    print_matrix("B_y", &uio.b_y);
    print_matrix("D_uio", &uio.d);
    println!(
        "  spectrum: {} (radius {})",
        complex_list(&spectrum.eigenvalues),
        sig(spectrum.spectral_radius)
    );
}

pub fn print_synthesis(outcome: &Synthesis, tol: &Tolerance) {
    println!(
        "  kernel inclusion         {:<12} residual {}",
        verdict(outcome.report.kernel.holds),
        sig(outcome.report.kernel.residual)
    );
    println!(
        "  unit-circle rank test    {:<12} normal rank {}/{}, offending z: {}",
        verdict(outcome.report.rank_condition.holds),
        outcome.report.rank_condition.normal_rank,
        outcome.report.rank_condition.expected_rank,
        complex_list(&outcome.report.rank_condition.offending)
    );
    if let Some(uio) = &outcome.uio {
        print_observer(uio, tol);
    }
    print_tolerances(tol);
}

pub fn print_baseline(baseline: &Baseline) {
    println!(
        "baseline (minimum-norm, no pole choice): spectral radius {} -> {}",
        sig(baseline.spectrum.spectral_radius),
        if baseline.stable {
            "stable, usable as an observer"
        } else {
            "UNSTABLE, not an observer"
        }
    );
}

pub fn construction_label(c: &Construction) -> &'static str {
    match c {
        Construction::StrongStarDetectable => "detectable",
        Construction::RankDeficientCe => "rank-deficient CE",
        Construction::UnstableZero { .. } => "unstable zero",
    }
}

pub fn check_json(
    assumption: &AssumptionReport,
    report: &ddcheck::ExistenceReport,
    tol: &Tolerance,
) -> String {
    serde_json::to_string_pretty(&json!({
        "assumption": assumption,
        "report": report,
        "tolerances": tol,
    }))
    .expect("report serializes")
}

pub fn check_json_synth(outcome: &Synthesis, tol: &Tolerance) -> String {
    serde_json::to_string_pretty(&json!({
        "report": outcome.report,
        "observer_written": outcome.uio.is_some(),
        "tolerances": tol,
    }))
    .expect("report serializes")
}

pub fn oracle_json(report: &ExistenceReport, tol: &Tolerance) -> String {
    serde_json::to_string_pretty(&json!({
        "report": report,
        "tolerances": tol,
    }))
    .expect("report serializes")
}
