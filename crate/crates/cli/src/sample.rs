use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use sclo_core::analysis::{error_metrics, MetricsReport};
use sclo_core::conditioning::upscale;
use sclo_core::diffusion::sample_closure;
use sclo_core::io::checkpoint::read_checkpoint;
use sclo_core::io::dataset::read_dataset;
use sclo_core::io::report::metrics_csv;
use sclo_core::random::{SeedStream, STREAM_SAMPLER};
use sclo_core::solver::Snapshot;
use sclo_core::{Error, Result};

use crate::ConfigArgs;

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Dataset providing conditions and truth terms
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,

    /// Checkpoint(s) to sample from; each becomes one comparison row
    #[arg(long = "checkpoint", value_name = "FILE")]
    checkpoints: Vec<PathBuf>,

    /// Add a row scoring the upscaled sparse observation itself
    #[arg(long)]
    baseline: bool,

    /// Add a sanity row scoring the truth term against itself (all zeros)
    #[arg(long)]
    truth_as_prediction: bool,

    /// Closure kind for --baseline/--truth-as-prediction without a
    /// checkpoint (default: rollout.closure_kind)
    #[arg(long, value_name = "KIND")]
    kind: Option<String>,

    /// Use at most this many held-out snapshots
    #[arg(long, value_name = "N", default_value_t = 16)]
    limit: usize,

    /// Directory for per-row metrics CSVs and the summary table
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

struct Row {
    label: String,
    conditioned: bool,
    per_snapshot: Vec<(f64, MetricsReport)>,
    seconds_per_sample: f64,
}

fn mean(rows: &[(f64, MetricsReport)], pick: impl Fn(&MetricsReport) -> f64) -> f64 {
    rows.iter().map(|(_, m)| pick(m)).sum::<f64>() / rows.len() as f64
}

pub fn run(args: &SampleArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = read_dataset(&args.dataset)?;
    let schedule = cfg.sampler.schedule()?;

    let mut snaps: Vec<&Snapshot> = ds.test_snapshots().take(args.limit).collect();
    if snaps.is_empty() {
        println!("note: dataset has no held-out trajectories; using training snapshots");
        snaps = ds.snapshots.iter().take(args.limit).collect();
    }
    if snaps.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let grid = snaps[0].omega.grid();
    let sampler_stream = SeedStream::root(cfg.root_seed).named(STREAM_SAMPLER);

    let mut rows: Vec<Row> = Vec::new();
    let mut first_kind = None;

    for path in &args.checkpoints {
        let ck = read_checkpoint(path)?;
        first_kind.get_or_insert(ck.kind);
        if ck.network.config().min_grid() > grid.n() {
            return Err(Error::Config(format!(
                "checkpoint {} needs grids of at least {}, dataset is at n={}",
                path.display(),
                ck.network.config().min_grid(),
                grid.n()
            )));
        }
        let conditioned = ck.network.config().with_sparse;
        let mut per_snapshot = Vec::with_capacity(snaps.len());
        let started = Instant::now();
        for (i, snap) in snaps.iter().enumerate() {
            let truth = snap.closure_field(ck.kind);
            let sparse_up = if conditioned {
                Some(upscale(snap.sparse_observation(ck.kind), grid, ck.upscale_method)?)
            } else {
                None
            };
            let mut rng = sampler_stream.indexed(i as u64).rng();
            let pred = sample_closure(
                &ck.network,
                &ck.diffusion,
                &schedule,
                &snap.omega,
                sparse_up.as_ref(),
                &ck.normalization,
                &mut rng,
            )?;
            per_snapshot.push((snap.time, error_metrics(truth, &pred)?));
        }
        let seconds = started.elapsed().as_secs_f64() / snaps.len() as f64;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".into());
        rows.push(Row { label, conditioned, per_snapshot, seconds_per_sample: seconds });
    }

    let fallback_kind = match &args.kind {
        Some(s) => s.parse()?,
        None => first_kind.unwrap_or(cfg.rollout.kind),
    };

    if args.baseline {
        let kind = fallback_kind;
        let mut per_snapshot = Vec::with_capacity(snaps.len());
        for snap in &snaps {
            let pred = upscale(snap.sparse_observation(kind), grid, cfg.upscale_method)?;
            per_snapshot.push((snap.time, error_metrics(snap.closure_field(kind), &pred)?));
        }
        rows.push(Row {
            label: format!("{}-baseline", cfg.upscale_method),
            conditioned: true,
            per_snapshot,
            seconds_per_sample: 0.0,
        });
    }

    if args.truth_as_prediction {
        let mut per_snapshot = Vec::with_capacity(snaps.len());
        for snap in &snaps {
            let truth = snap.closure_field(fallback_kind);
            per_snapshot.push((snap.time, error_metrics(truth, truth)?));
        }
        rows.push(Row {
            label: "truth".into(),
            conditioned: false,
            per_snapshot,
            seconds_per_sample: 0.0,
        });
    }

    if rows.is_empty() {
        return Err(Error::Config(
            "nothing to do: pass --checkpoint, --baseline, or --truth-as-prediction".into(),
        ));
    }

    std::fs::create_dir_all(&args.output_dir)?;
    let mut summary = String::from(
        "label,conditioned,samples,mean_d_mse,mean_d_fro,mean_d_spe,mean_d_max,seconds_per_sample\n",
    );
    println!("{:<24} {:>12} {:>12} {:>12} {:>12}", "label", "d_mse", "d_fro", "d_spe", "d_max");
    for row in &rows {
        std::fs::write(
            args.output_dir.join(format!("{}_metrics.csv", row.label)),
            metrics_csv(&row.per_snapshot),
        )?;
        let (m_mse, m_fro, m_spe, m_max) = (
            mean(&row.per_snapshot, |m| m.d_mse),
            mean(&row.per_snapshot, |m| m.d_fro),
            mean(&row.per_snapshot, |m| m.d_spe),
            mean(&row.per_snapshot, |m| m.d_max),
        );
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            row.label,
            u8::from(row.conditioned),
            row.per_snapshot.len(),
            m_mse,
            m_fro,
            m_spe,
            m_max,
            row.seconds_per_sample
        );
        println!(
            "{:<24} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            row.label, m_mse, m_fro, m_spe, m_max
        );
    }
    std::fs::write(args.output_dir.join("summary.csv"), summary)?;
    Ok(())
}
