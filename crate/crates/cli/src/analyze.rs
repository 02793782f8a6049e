use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde_json::{json, Value};
use stepwedge::data::{read_csv, PeriodLayout, ValidationIssue};
use stepwedge::variance::variance;
use stepwedge::{
    compute_weights, estimate_with_policy, validate, Dataset, DesignSpec, ModelSpec, RankPolicy, Reference, WeightScheme,
};

use crate::{sink, EstimandArg, Format, ModelArg};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeArg {
    Db,
    Crse,
    Both,
}

#[derive(clap::Args, Debug)]
pub struct AnalyzeArgs {
    /// Trial data with columns cluster, period, treated, outcome, x_* and optionally cell_size.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    estimand: EstimandArg,
    #[arg(long, value_enum, default_value = "all")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "both")]
    se: SeArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Intervals from a t distribution with I - 1 degrees of freedom.
    #[arg(long)]
    t_reference: bool,
    /// Add the cluster-period size as a covariate.
    #[arg(long)]
    adjust_cell_size: bool,
    /// Drop covariate slope columns that are linearly dependent within their
    /// block instead of failing.
    #[arg(long)]
    drop_aliased: bool,
    /// The file holds rollout periods 1..=J only.
    #[arg(long)]
    rollout_only: bool,
    /// Expected cumulative treated counts; inferred from the data when absent.
    #[arg(long, value_delimiter = ',')]
    cumulative: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn design_dependent(issue: &ValidationIssue) -> bool {
    matches!(
        issue,
        ValidationIssue::ClusterCount { .. }
            | ValidationIssue::RolloutPeriodCount { .. }
            | ValidationIssue::ArmCountMismatch { .. }
    )
}

/// Design to validate against and every problem found, listed in full.
fn check(ds: &Dataset, declared: Option<&[usize]>) -> (Option<DesignSpec>, Vec<String>) {
    let mut problems = Vec::new();
    let spec = match declared {
        Some(c) => match DesignSpec::new(ds.num_clusters(), c.to_vec()) {
            Ok(s) => Some(s),
            Err(e) => {
                problems.push(format!("declared design: {e}"));
                None
            }
        },
        None => match ds.inferred_design() {
            Ok(s) => Some(s),
            Err(e) => {
                problems.push(format!("treatment pattern is not a stepped wedge design: {e}"));
                None
            }
        },
    };
    let issues = match &spec {
        Some(s) => validate(ds, s).issues,
        None => {
            // intrinsic checks still apply without a usable design
            let (n_i, n_j) = (ds.num_clusters(), ds.num_rollout_periods());
            match DesignSpec::new(n_i, (1..=n_j).map(|j| j * n_i / (n_j + 1)).collect()) {
                Ok(stand_in) => validate(ds, &stand_in).issues.into_iter().filter(|i| !design_dependent(i)).collect(),
                Err(_) => Vec::new(),
            }
        }
    };
    problems.extend(issues.iter().map(|i| i.to_string()));
    (if problems.is_empty() { spec } else { None }, problems)
}

struct Row {
    model: ModelSpec,
    scheme: WeightScheme,
    tau: f64,
    se_db: f64,
    se_crse: f64,
    json: Value,
}

pub fn run(args: AnalyzeArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("--alpha must lie in (0, 1)");
    }
    let layout = if args.rollout_only { PeriodLayout::RolloutOnly } else { PeriodLayout::Full };
    let file = File::open(&args.input).with_context(|| format!("cannot open {}", args.input.display()))?;
    let mut ds = read_csv(BufReader::new(file), layout).with_context(|| format!("reading {}", args.input.display()))?;

    let (spec, problems) = check(&ds, args.cumulative.as_deref());
    let Some(spec) = spec else {
        for p in &problems {
            eprintln!("invalid: {p}");
        }
        bail!("{} validation problem(s); nothing written", problems.len());
    };
    if args.adjust_cell_size {
        ds = ds.with_cell_size_covariate("cell_size");
    }
    let assignment = ds.adoption_assignment()?;
    let reference = if args.t_reference {
        Reference::StudentT {
            df: (ds.num_clusters() - 1) as f64,
        }
    } else {
        Reference::Normal
    };

    let schemes = args.estimand.schemes();
    let models = args.model.models();
    let want_db = args.se != SeArg::Crse;
    let want_crse = args.se != SeArg::Db;
    let policy = if args.drop_aliased { RankPolicy::DropAliasedCovariates } else { RankPolicy::Strict };
    let mut rows = Vec::new();
    for &scheme in &schemes {
        let wt = compute_weights(&ds, scheme)?;
        for &model in &models {
            let fit = match estimate_with_policy(&ds, model, &wt, policy) {
                Ok(fit) => fit,
                Err(e @ stepwedge::Error::SingularDesign { .. }) => {
                    bail!(
                        "{} under {}: {e} (rerun with --drop-aliased to remove dependent covariate columns)",
                        model.label(),
                        scheme.short_name()
                    )
                }
                Err(e) => return Err(e).with_context(|| format!("{} under {}", model.label(), scheme.short_name())),
            };
            let v = variance(&fit, &ds, &wt, &spec, &assignment, args.alpha, reference)?;
            for w in &fit.warnings {
                eprintln!("warning: {} {}: {w}", model.label(), scheme.short_name());
            }
            let mut entry = json!({
                "model": model,
                "scheme": scheme,
                "tau": fit.tau,
                "delta": fit.delta,
                "coefficients": serde_json::to_value(&fit)?["coefficients"],
                "warnings": fit.warnings,
                "dropped": fit.dropped.iter().map(|r| r.label(fit.covariate_names.as_slice())).collect::<Vec<_>>(),
            });
            if want_db {
                entry["se_db"] = json!(v.se_db);
                entry["ci_db"] = json!([v.ci_db.0, v.ci_db.1]);
            }
            if want_crse {
                entry["se_crse"] = json!(v.se_crse);
                entry["ci_crse"] = json!([v.ci_crse.0, v.ci_crse.1]);
            }
            rows.push(Row {
                model,
                scheme,
                tau: fit.tau,
                se_db: v.se_db,
                se_crse: v.se_crse,
                json: entry,
            });
        }
    }

    let report = json!({
        "config": {
            "input": args.input.display().to_string(),
            "layout": if args.rollout_only { "rollout_only" } else { "full" },
            "estimands": schemes,
            "models": models,
            "se": format!("{:?}", args.se).to_lowercase(),
            "alpha": args.alpha,
            "reference": match reference {
                Reference::Normal => json!("normal"),
                Reference::StudentT { df } => json!({ "t": df }),
            },
            "adjust_cell_size": args.adjust_cell_size,
            "drop_aliased": args.drop_aliased,
        },
        "design": spec,
        "clusters": ds.num_clusters(),
        "individuals": ds.total_size(),
        "results": rows.iter().map(|r| r.json.clone()).collect::<Vec<_>>(),
    });
    let pretty = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.json {
        std::fs::write(path, format!("{pretty}\n")).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let mut out = sink(args.output.as_deref())?;
    match args.format {
        Format::Json => writeln!(out, "{pretty}")?,
        Format::Table => render(&mut out, &rows, &schemes, &models, want_db, want_crse, reference)?,
    }
    out.flush()?;
    Ok(())
}

fn stars(tau: f64, se: f64, reference: Reference) -> &'static str {
    if se <= 0.0 {
        return "";
    }
    let z = (tau / se).abs();
    if z > reference.critical_value(0.05) {
        "**"
    } else if z > reference.critical_value(0.10) {
        "*"
    } else {
        ""
    }
}

/// Estimators down the side, estimands across the top with one column per
/// standard error flavor; standard errors in parentheses under each estimate.
fn render(
    out: &mut dyn Write,
    rows: &[Row],
    schemes: &[WeightScheme],
    models: &[ModelSpec],
    want_db: bool,
    want_crse: bool,
    reference: Reference,
) -> Result<()> {
    const W: usize = 12;
    let flavors: Vec<&str> = [(want_db, "DB"), (want_crse, "CRSE")]
        .iter()
        .filter(|f| f.0)
        .map(|f| f.1)
        .collect();
    let group = W * flavors.len();
    let mut line = format!("{:<12}", "");
    for s in schemes {
        line += &format!(" {:^group$}", format!("tau^{}", s.short_name()));
    }
    writeln!(out, "{}", line.trim_end())?;
    let mut line = format!("{:<12}", "Estimator");
    for _ in schemes {
        line.push(' ');
        for f in &flavors {
            line += &format!("{f:>W$}");
        }
    }
    writeln!(out, "{line}")?;
    writeln!(out, "{}", "-".repeat(line.len()))?;
    for &model in models {
        let mut est = format!("{:<12}", model.label());
        let mut ses = format!("{:<12}", "");
        for &scheme in schemes {
            let r = rows.iter().find(|r| r.model == model && r.scheme == scheme).expect("row computed");
            est.push(' ');
            ses.push(' ');
            for f in &flavors {
                let se = if *f == "DB" { r.se_db } else { r.se_crse };
                est += &format!("{:>W$}", format!("{:.4}{}", r.tau, stars(r.tau, se, reference)));
                ses += &format!("{:>W$}", format!("({se:.4})"));
            }
        }
        writeln!(out, "{est}")?;
        writeln!(out, "{ses}")?;
    }
    writeln!(out, "** significant at the 5% level, * at the 10% level, two-tailed")?;
    Ok(())
}
