use std::path::PathBuf;

use clap::Args;
use sclo_core::io::checkpoint::{read_checkpoint, Checkpoint};
use sclo_core::io::config::RolloutSetting;
use sclo_core::io::report::{rollout_csv, settings_csv};
use sclo_core::rollout::{simulate_with_closure, ClosureSource, RolloutResult};
use sclo_core::{Error, Result};

use crate::ConfigArgs;

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Trained checkpoint (required for settings II–IV)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// Comma-separated settings to run: I (no closure), II (fast
    /// adaptive), III (fast uniform), IV (dense reference)
    #[arg(long, value_name = "LIST")]
    settings: Option<String>,

    /// Also run the recorded-truth closure as a bookkeeping check
    #[arg(long)]
    with_truth: bool,

    /// Directory for per-setting error CSVs and the comparison table
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ns = cfg.target_ns()?;

    let settings: Vec<RolloutSetting> = match &args.settings {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?,
        None => vec![cfg.setting],
    };

    let checkpoint: Option<Checkpoint> = match &args.checkpoint {
        Some(path) => Some(read_checkpoint(path)?),
        None => None,
    };
    if settings.iter().any(|s| s.sampler().is_some()) && checkpoint.is_none() {
        return Err(Error::Config(
            "settings II–IV sample from a model; pass --checkpoint".into(),
        ));
    }

    std::fs::create_dir_all(&args.output_dir)?;
    let mut results: Vec<(String, RolloutResult)> = Vec::new();
    let mut first_failure: Option<Error> = None;

    let mut runs: Vec<(String, Option<RolloutSetting>)> =
        settings.iter().map(|s| (s.to_string(), Some(*s))).collect();
    if args.with_truth {
        runs.push(("truth".into(), None));
    }

    for (label, setting) in runs {
        let mut run_cfg = cfg.rollout;
        if let Some(ck) = &checkpoint {
            run_cfg.kind = ck.kind;
        }
        let source = match setting {
            None => ClosureSource::Truth,
            Some(s) => match s.sampler() {
                None => ClosureSource::None,
                Some(spec) => {
                    run_cfg.sampler = spec;
                    let ck = checkpoint.as_ref().expect("checked above");
                    ClosureSource::Model {
                        net: &ck.network,
                        diff: &ck.diffusion,
                        norm: &ck.normalization,
                        method: ck.upscale_method,
                        sparse_n: ck.sparse_n,
                    }
                }
            },
        };
        println!(
            "setting {label}: closure {} over {} s at n={}",
            run_cfg.kind,
            run_cfg.horizon,
            ns.grid.n()
        );
        match simulate_with_closure(&ns, &cfg.grf, &run_cfg, source) {
            Ok(result) => {
                std::fs::write(
                    args.output_dir.join(format!("rollout_{label}.csv")),
                    rollout_csv(&result),
                )?;
                println!(
                    "  terminal d_fro {:.4e}, {} samples, {:.2} s total ({:.2} s sampling)",
                    result.terminal_error,
                    result.samples_drawn,
                    result.total_seconds,
                    result.sampling_seconds
                );
                results.push((label, result));
            }
            Err(err) => {
                eprintln!("setting {label} failed: {err}");
                first_failure.get_or_insert(err);
            }
        }
    }

    let rows: Vec<(String, &RolloutResult)> =
        results.iter().map(|(l, r)| (l.clone(), r)).collect();
    std::fs::write(args.output_dir.join("settings.csv"), settings_csv(&rows))?;

    match first_failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}
