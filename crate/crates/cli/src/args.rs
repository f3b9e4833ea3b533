use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use wfc_core::config::{PipelineConfig, RepresentationChoice};
use wfc_core::dataset::SplitRatios;

#[derive(Debug, Parser)]
#[command(
    name = "wfc",
    version,
    about = "GitHub Actions workflow completion toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Settings that can come from flags, `WFC_*` variables or a config file,
/// in that order of precedence.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML or JSON config file
    #[arg(long, global = true, env = "WFC_CONFIG")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = "WFC_CORPUS_ROOT")]
    pub corpus_root: Option<PathBuf>,

    #[arg(long, global = true, env = "WFC_WORKDIR")]
    pub workdir: Option<PathBuf>,

    #[arg(long, global = true, env = "WFC_SEED")]
    pub seed: Option<u64>,

    #[arg(long, global = true, env = "WFC_MASK_RATE")]
    pub mask_rate: Option<f64>,

    #[arg(long, global = true, env = "WFC_TOKEN_CAP")]
    pub token_cap: Option<usize>,

    /// Train, eval and test shares, e.g. `0.8,0.1,0.1`
    #[arg(long, global = true, env = "WFC_RATIOS", value_parser = parse_ratios)]
    pub ratios: Option<SplitRatios>,

    /// Candidate n-gram orders, e.g. `3,5,7`
    #[arg(long, global = true, env = "WFC_NGRAM_ORDERS", value_delimiter = ',')]
    pub ngram_orders: Option<Vec<usize>>,

    /// raw, abstracted or both
    #[arg(long, global = true, env = "WFC_REPRESENTATION")]
    pub representation: Option<RepresentationChoice>,

    /// Worker threads (default: one per logical core)
    #[arg(long, global = true, env = "WFC_WORKERS")]
    pub workers: Option<usize>,

    /// Keep a project split that misses the requested ratios
    #[arg(long, global = true, env = "WFC_ALLOW_IMBALANCED_SPLIT")]
    pub allow_imbalanced_split: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Walk the corpus and canonicalize every YAML file
    Ingest,
    /// Abstract the canonical corpus and report singleton coverage
    Abstract,
    /// Build NS/JC instances and the masked pre-training corpus
    BuildDataset,
    /// Assign projects to train/eval/test partitions
    Split,
    /// Train n-gram models and select the order on the eval partition
    TrainNgram,
    /// Suggest the next step of a workflow file
    Suggest(SuggestArgs),
    /// Predict every instance of an instance file with an n-gram model
    Predict(PredictArgs),
    /// Score a predictions file against its instances
    Evaluate(EvaluateArgs),
    /// Group predictions by confidence
    Buckets(BucketsArgs),
    /// Paired statistical comparison of per-instance score files
    CompareStats(CompareArgs),
    /// Run every stage from ingest to evaluation
    Run,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Workflow file to complete
    pub workflow: PathBuf,
    /// Job to complete (default: the last one)
    #[arg(long)]
    pub job: Option<String>,
    /// 1-based position of the new step (default: after the last step)
    #[arg(long)]
    pub step: Option<usize>,
    /// Abstract the input; use with models trained on abstracted text
    #[arg(long)]
    pub abstracted: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Compare predictions byte for byte instead of token by token
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct BucketsArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `label=a.csv,b.csv`; repeat for every comparison
    #[arg(long = "pair", required = true, value_parser = parse_pair)]
    pub pairs: Vec<(String, PathBuf, PathBuf)>,
    /// Use the within-pair sign variant of Cliff's delta
    #[arg(long)]
    pub paired_delta: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [train, eval, test] = parts[..] else {
        return Err("expected three comma-separated shares".to_string());
    };
    Ok(SplitRatios { train, eval, test })
}

fn parse_pair(s: &str) -> Result<(String, PathBuf, PathBuf), String> {
    let (label, files) = s.split_once('=').ok_or("expected label=a.csv,b.csv")?;
    let (a, b) = files
        .split_once(',')
        .ok_or("expected two files separated by a comma")?;
    if label.is_empty() || a.is_empty() || b.is_empty() {
        return Err("label and both files must be non-empty".to_string());
    }
    Ok((label.to_string(), PathBuf::from(a), PathBuf::from(b)))
}

pub fn load_config_file(path: &Path) -> Result<PipelineConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let config = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(config)
}

impl ConfigArgs {
    /// Defaults, then the config file, then anything set by flag or environment.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => load_config_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.corpus_root {
            c.corpus_root = Some(v.clone());
        }
        if let Some(v) = &self.workdir {
            c.workdir = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.mask_rate {
            c.mask_rate = v;
        }
        if let Some(v) = self.token_cap {
            c.token_cap = v;
        }
        if let Some(v) = self.ratios {
            c.ratios = v;
        }
        if let Some(v) = &self.ngram_orders {
            c.ngram_orders = v.clone();
        }
        if let Some(v) = self.representation {
            c.representation = v;
        }
        if let Some(v) = self.workers {
            c.workers = Some(v);
        }
        if let Some(v) = self.allow_imbalanced_split {
            c.allow_imbalanced_split = v;
        }
        if let Err(e) = c.validate() {
            bail!("invalid configuration: {e}");
        }
        Ok(c)
    }
}
