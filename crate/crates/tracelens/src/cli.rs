//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use tracelens_core::influence::Variant;

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::{self, Run};

#[derive(Debug, Parser)]
#[command(name = "tracelens", version, about = "Checkpoint-based training data attribution with cross-group analyses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or split) the corpus into train/dev/pool files.
    GenData(Common),
    /// Train the classifier and write one checkpoint per epoch.
    Train(Common),
    /// Select test samples and score them against every training sample.
    Influence(InfluenceArgs),
    /// Rank the most positively and negatively influential samples.
    Topk(Common),
    /// Run the retraining oracles and the removal curve.
    Validate(Common),
    /// Produce the group-level reports and figures.
    Analyze(Common),
    /// Run every stage from one config.
    Reproduce(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Dot,
    Cosine,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; the bundled default is used when absent.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core). Does not affect results.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Top-k size [config default: 100].
    #[arg(long)]
    pub k: Option<usize>,
    /// Run directory; overrides the config's output_dir.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Feature dimensions for samples given as text.
    #[arg(long)]
    pub dims: Option<usize>,
    /// Hash seed for text features.
    #[arg(long)]
    pub feature_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct InfluenceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also write the matrix as long-form CSV.
    #[arg(long)]
    pub csv: bool,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(v) = self.variant {
            c.influence.variant = match v {
                VariantArg::Dot => Variant::Dot,
                VariantArg::Cosine => Variant::Cosine,
            };
        }
        if let Some(k) = self.k {
            c.influence.k = k;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(d) = self.dims {
            c.data.dims = d;
        }
        if let Some(s) = self.feature_seed {
            c.data.feature_seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn execute(cli: &Cli) -> Result<Value> {
    let (common, stage): (&Common, fn(&mut Run) -> Result<Value>) = match &cli.command {
        Command::GenData(c) => (c, pipeline::gen_data),
        Command::Train(c) => (c, pipeline::train),
        Command::Influence(a) => (&a.common, pipeline::influence),
        Command::Topk(c) => (c, pipeline::topk),
        Command::Validate(c) => (c, pipeline::validate),
        Command::Analyze(c) => (c, pipeline::analyze),
        Command::Reproduce(c) => (c, pipeline::reproduce),
    };
    let mut config = common.resolve()?;
    if let Command::Influence(a) = &cli.command {
        config.influence.export_csv |= a.csv;
    }
    let root = config.output_dir.clone();
    let mut run = Run::new(config, &root, common.threads)?;
    stage(&mut run)
}
