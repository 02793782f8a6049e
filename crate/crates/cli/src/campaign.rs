use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stepwedge::simulate::VarianceComponents;
use stepwedge::{run_replications, DgpSpec, MetricsTable, ModelSpec, Scenario, WeightScheme};

pub const CONFIG_VERSION: u32 = 1;

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    /// Campaign file (TOML).
    config: PathBuf,
    /// Output prefix; writes <prefix>.csv, <prefix>.json and <prefix>.toml.
    #[arg(long, short)]
    output: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides `replications` in the config.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_rollout_periods() -> usize {
    5
}

fn default_alpha() -> f64 {
    0.05
}

fn all_models() -> Vec<ModelSpec> {
    ModelSpec::ALL.to_vec()
}

fn all_schemes() -> Vec<WeightScheme> {
    WeightScheme::ALL.to_vec()
}

/// A simulation campaign: every scenario crossed with every cluster count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub version: u32,
    pub scenarios: Vec<Scenario>,
    pub clusters: Vec<usize>,
    #[serde(default = "default_rollout_periods")]
    pub rollout_periods: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "all_models")]
    pub models: Vec<ModelSpec>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<WeightScheme>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub adjust_cell_size: bool,
    #[serde(default)]
    pub null_effect: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_cluster: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_cluster_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_intervention: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_individual: Option<f64>,
}

impl Campaign {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Campaign = toml::from_str(text)?;
        if c.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", c.version);
        }
        if c.scenarios.is_empty() || c.clusters.is_empty() {
            bail!("`scenarios` and `clusters` must be non-empty");
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            bail!("`alpha` must lie in (0, 1)");
        }
        Ok(c)
    }

    pub fn grid(&self) -> Vec<DgpSpec> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &n in &self.clusters {
                let mut d = DgpSpec::new(scenario, n, self.seed);
                d.num_rollout_periods = self.rollout_periods;
                d.adjust_cell_size = self.adjust_cell_size;
                d.null_effect = self.null_effect;
                let v: &mut VarianceComponents = &mut d.variances;
                v.cluster = self.var_cluster.unwrap_or(v.cluster);
                v.cluster_period = self.var_cluster_period.unwrap_or(v.cluster_period);
                v.intervention = self.var_intervention.unwrap_or(v.intervention);
                v.individual = self.var_individual.unwrap_or(v.individual);
                out.push(d);
            }
        }
        out
    }

    pub fn run(&self) -> Result<Vec<MetricsTable>> {
        self.grid()
            .iter()
            .map(|dgp| {
                eprintln!(
                    "running {} with {} clusters, {} replications",
                    dgp.scenario, dgp.num_clusters, self.replications
                );
                run_replications(dgp, &self.models, &self.schemes, self.replications, self.alpha)
                    .with_context(|| format!("grid point {} with {} clusters", dgp.scenario, dgp.num_clusters))
            })
            .collect()
    }
}

/// CSV, JSON and resolved-config renderings of a finished campaign.
pub fn render(campaign: &Campaign, tables: &[MetricsTable]) -> Result<(Vec<u8>, String, String)> {
    let mut csv = Vec::new();
    for (k, t) in tables.iter().enumerate() {
        t.write_csv(&mut csv, k == 0)?;
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "config": campaign,
        "tables": tables,
    }))?;
    let toml = toml::to_string(campaign)?;
    Ok((csv, json + "\n", toml))
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read {}", args.config.display()))?;
    let mut campaign = Campaign::parse(&text).with_context(|| format!("in {}", args.config.display()))?;
    if let Some(r) = args.reps {
        campaign.replications = r;
    }
    if let Some(s) = args.seed {
        campaign.seed = s;
    }
    let tables = match args.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| campaign.run())?,
        None => campaign.run()?,
    };
    let (csv, json, toml) = render(&campaign, &tables)?;
    let with_ext = |ext: &str| {
        let mut p = args.output.clone().into_os_string();
        p.push(".");
        p.push(ext);
        PathBuf::from(p)
    };
    for (path, bytes) in [
        (with_ext("csv"), csv.as_slice()),
        (with_ext("json"), json.as_bytes()),
        (with_ext("toml"), toml.as_bytes()),
    ] {
        std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
