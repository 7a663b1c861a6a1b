use std::path::PathBuf;

use clap::Args;
use sclo_core::analysis::augment_periodic_shifts;
use sclo_core::diffusion::{
    evaluate_dsm_loss, prepare_samples_normalized, prepare_training_samples, train_score_network,
    PreparedData,
};
use sclo_core::io::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, TensorDtype};
use sclo_core::io::dataset::read_dataset;
use sclo_core::io::report::loss_csv;
use sclo_core::network::ScoreNetwork;
use sclo_core::random::SeedStream;
use sclo_core::solver::Snapshot;
use sclo_core::{Error, Result};

use crate::ConfigArgs;

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Training dataset
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,

    /// Checkpoint output path
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// Closure kind to train on: G or H (default: rollout.closure_kind)
    #[arg(long, value_name = "KIND")]
    kind: Option<String>,

    /// Continue training from an existing checkpoint
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,

    /// Total dataset multiplier from random periodic shifts (1 = off)
    #[arg(long, value_name = "COPIES", default_value_t = 1)]
    augment: usize,

    /// Loss history CSV path (default: output path with .loss.csv)
    #[arg(long, value_name = "FILE")]
    loss_csv: Option<PathBuf>,

    /// Store checkpoint tensors as f32 instead of f64
    #[arg(long)]
    f32: bool,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = read_dataset(&args.dataset)?;

    let mut train_snaps: Vec<Snapshot> = ds.train_snapshots().cloned().collect();
    if args.augment > 1 {
        train_snaps = augment_periodic_shifts(
            &train_snaps,
            args.augment,
            SeedStream::root(cfg.root_seed).named("augment"),
        )?;
        println!("augmented to {} snapshots", train_snaps.len());
    }

    let (mut network, diffusion, kind, upscale_method, prepared) = match &args.resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            let with_sparse = ck.network.config().with_sparse;
            let prepared = prepare_samples_normalized(
                train_snaps.iter(),
                ck.kind,
                ck.upscale_method,
                with_sparse,
                ck.normalization,
            )?;
            println!("resuming from {}", path.display());
            (ck.network, ck.diffusion, ck.kind, ck.upscale_method, prepared)
        }
        None => {
            let kind = match &args.kind {
                Some(s) => s.parse()?,
                None => cfg.rollout.kind,
            };
            let prepared = prepare_training_samples(
                train_snaps.iter(),
                kind,
                cfg.upscale_method,
                cfg.network.with_sparse,
            )?;
            let network = ScoreNetwork::new(cfg.network)?;
            (network, cfg.diffusion, kind, cfg.upscale_method, prepared)
        }
    };
    if args.resume.is_some() && args.kind.is_some() {
        return Err(Error::Config(
            "--kind cannot change when resuming; the checkpoint fixes it".into(),
        ));
    }

    let PreparedData { samples, normalization } = prepared;
    let held_out = {
        let test: Vec<Snapshot> = ds.test_snapshots().cloned().collect();
        if test.is_empty() {
            None
        } else {
            Some(prepare_samples_normalized(
                test.iter(),
                kind,
                upscale_method,
                network.config().with_sparse,
                normalization,
            )?)
        }
    };
    let eval_samples = held_out.as_ref().map(|p| &p.samples[..]).unwrap_or(&samples);
    let eval_label = if held_out.is_some() { "held-out" } else { "training" };

    println!(
        "training {kind} closure: {} samples, {} parameters, {} epochs",
        samples.len(),
        network.param_count(),
        cfg.training.epochs
    );
    let before = evaluate_dsm_loss(&network, &diffusion, eval_samples, cfg.root_seed)?;
    println!("{eval_label} loss before: {before:.6e}");

    let report = train_score_network(&mut network, &diffusion, &samples, &cfg.training)?;

    let after = evaluate_dsm_loss(&network, &diffusion, eval_samples, cfg.root_seed)?;
    println!("{eval_label} loss after:  {after:.6e}");
    if let Some(epoch) = report.diverged_at {
        println!("warning: loss went non-finite at epoch {epoch}; kept the last finite state");
    }

    let loss_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.output.with_extension("loss.csv"));
    std::fs::write(&loss_path, loss_csv(&report.epoch_losses))?;

    let ckpt = Checkpoint {
        network,
        diffusion,
        normalization,
        kind,
        upscale_method,
        sparse_n: ds.protocol.sparse_n,
        train_report: Some(report),
    };
    let dtype = if args.f32 { TensorDtype::F32 } else { TensorDtype::F64 };
    let hash = write_checkpoint(&args.output, &ckpt, dtype)?;
    println!("wrote checkpoint {} (hash {hash})", args.output.display());
    Ok(())
}
