use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cctune::customizer::CustomizerConfig;
use cctune::harness::{self, Arm, Scenario};
use cctune::rewards::{self, RewardSpec};
use cctune::{json, stats, Error, Result};

#[derive(Parser)]
#[command(name = "cctune", version, about = "Simulate and tune Vivace congestion control per traffic aggregate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the epoch loop on a scenario and write its CSVs.
    Run(Common),
    /// Run two arms on the same workload and write per-arm CSVs plus deltas.
    AbCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "vivace")]
        cc_a: Arm,
        #[arg(long, default_value = "customized")]
        cc_b: Arm,
    },
    /// Rank tunable parameters by how strongly they move the reward.
    ScreenParams(Common),
    /// Turn one column of a CSV into an empirical CDF.
    EmitCdf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Reward JSON; the moderate preset when omitted.
    #[arg(long)]
    reward: Option<PathBuf>,
    /// Customizer JSON (search box, hyperparameters, safe config).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

struct Inputs {
    scenario: Scenario,
    reward: RewardSpec,
    custom: CustomizerConfig,
}

impl Common {
    fn load(&self) -> Result<Inputs> {
        let mut scenario: Scenario = json::from_file(&self.scenario)?;
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        scenario.validate()?;
        let reward = match &self.reward {
            Some(p) => json::from_file(p)?,
            None => rewards::preset("moderate")?,
        };
        let custom: CustomizerConfig = match &self.params {
            Some(p) => json::from_file(p)?,
            None => CustomizerConfig::default(),
        };
        custom.validate()?;
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(Inputs { scenario, reward, custom })
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run(c) => {
            let i = c.load()?;
            let report = harness::run(&i.scenario, &i.reward, &i.custom)?;
            harness::write_run(&c.out, &report)
        }
        Cmd::AbCompare { common, cc_a, cc_b } => {
            let i = common.load()?;
            let ab = harness::ab_compare(&i.scenario, &i.reward, &i.custom, cc_a, cc_b)?;
            harness::write_ab(&common.out, &ab)
        }
        Cmd::ScreenParams(c) => {
            let i = c.load()?;
            let rep = harness::screen(&i.scenario, &i.reward, &i.custom)?;
            harness::write_screening(&c.out, &rep)
        }
        Cmd::EmitCdf { input, metric, out } => {
            let values = stats::read_column(open(&input)?, &metric)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            harness::emit_cdf(&values, &metric, &out.join(format!("cdf_{metric}.csv")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
