use std::path::PathBuf;

use clap::Args;
use sclo_core::analysis::{
    correlation_map, energy_spectrum, error_metrics, log_log_slope, SpectrumReport,
};
use sclo_core::field::RealField2D;
use sclo_core::io::dataset::read_dataset;
use sclo_core::io::report::{correlation_csv, metrics_csv, spectrum_csv};
use sclo_core::solver::{ClosureKind, Snapshot};
use sclo_core::{Error, Result};

use crate::ConfigArgs;

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Dataset to evaluate
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,

    /// Second dataset for snapshot-by-snapshot comparison (default: the
    /// dataset itself, which yields zero metrics)
    #[arg(long, value_name = "FILE")]
    against: Option<PathBuf>,

    /// Field the metrics and spectrum read: omega, g, or h
    #[arg(long, value_name = "FIELD", default_value = "omega")]
    field: String,

    /// Write per-snapshot comparison metrics to this CSV
    #[arg(long, value_name = "FILE")]
    metrics_out: Option<PathBuf>,

    /// Write the mean energy spectrum to this CSV and print its slope
    #[arg(long, value_name = "FILE")]
    spectrum_out: Option<PathBuf>,

    /// Shell band for the spectrum slope fit, e.g. 3,8 (default: 2 to
    /// a quarter of the resolution)
    #[arg(long, value_name = "LO,HI")]
    slope_band: Option<String>,

    /// Write a closure/vorticity correlation map to this CSV (pass g or h)
    #[arg(long, value_name = "KIND")]
    correlation: Option<String>,

    /// Correlation map output path
    #[arg(long, value_name = "FILE")]
    correlation_out: Option<PathBuf>,

    /// Reference cell for the correlation map, e.g. 16,16 (default:
    /// grid center)
    #[arg(long, value_name = "I,J")]
    x_c: Option<String>,

    /// Trajectory id the correlation series comes from (default: first
    /// held-out trajectory)
    #[arg(long, value_name = "ID")]
    trajectory: Option<usize>,
}

fn pick_field<'a>(snap: &'a Snapshot, field: &str) -> Result<&'a RealField2D> {
    match field {
        "omega" => Ok(&snap.omega),
        "g" | "G" => Ok(&snap.g_truth),
        "h" | "H" => Ok(&snap.h_truth),
        other => Err(Error::Config(format!(
            "unknown field '{other}' (expected omega, g, or h)"
        ))),
    }
}

fn parse_pair(text: &str, what: &str) -> Result<(usize, usize)> {
    let parts: Vec<_> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("{what} must look like A,B, got '{text}'")));
    }
    let a = parts[0].trim().parse().map_err(|_| {
        Error::Config(format!("{what}: cannot parse '{}' as an integer", parts[0]))
    })?;
    let b = parts[1].trim().parse().map_err(|_| {
        Error::Config(format!("{what}: cannot parse '{}' as an integer", parts[1]))
    })?;
    Ok((a, b))
}

fn torus_distance(a: (usize, usize), b: (usize, usize), n: usize) -> usize {
    let axis = |p: usize, q: usize| {
        let d = p.abs_diff(q);
        d.min(n - d)
    };
    axis(a.0, b.0).max(axis(a.1, b.1))
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    args.config.load()?;
    let ds = read_dataset(&args.dataset)?;
    if ds.snapshots.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let n = ds.protocol.target_n;
    let mut did_something = false;

    if let Some(out) = &args.metrics_out {
        let other = match &args.against {
            Some(path) => read_dataset(path)?,
            None => ds.clone(),
        };
        if other.snapshots.len() != ds.snapshots.len() {
            return Err(Error::Config(format!(
                "cannot compare {} snapshots against {}",
                ds.snapshots.len(),
                other.snapshots.len()
            )));
        }
        let mut rows = Vec::with_capacity(ds.snapshots.len());
        for (a, b) in ds.snapshots.iter().zip(other.snapshots.iter()) {
            let truth = pick_field(a, &args.field)?;
            let pred = pick_field(b, &args.field)?;
            rows.push((a.time, error_metrics(truth, pred)?));
        }
        let mean_fro =
            rows.iter().map(|(_, m)| m.d_fro).sum::<f64>() / rows.len() as f64;
        std::fs::write(out, metrics_csv(&rows))?;
        println!("metrics on {}: mean d_fro {:.6e} over {} snapshots", args.field, mean_fro, rows.len());
        did_something = true;
    }

    if let Some(out) = &args.spectrum_out {
        let mut mean: Option<SpectrumReport> = None;
        for snap in &ds.snapshots {
            let report = energy_spectrum(pick_field(snap, &args.field)?);
            match &mut mean {
                None => mean = Some(report),
                Some(acc) => {
                    for (a, e) in acc.energies.iter_mut().zip(report.energies.iter()) {
                        *a += e;
                    }
                }
            }
        }
        let mut mean = mean.expect("non-empty dataset");
        let count = ds.snapshots.len() as f64;
        for e in &mut mean.energies {
            *e /= count;
        }
        let (k_lo, k_hi) = match &args.slope_band {
            Some(text) => parse_pair(text, "slope band")?,
            None => (2, (n / 4).max(3)),
        };
        let slope = log_log_slope(&mean, k_lo, k_hi)?;
        std::fs::write(out, spectrum_csv(&mean))?;
        println!(
            "spectrum of {}: slope {slope:.3} over shells {k_lo}..{k_hi} (isotropic limit {})",
            args.field, mean.isotropic_limit
        );
        did_something = true;
    }

    if let Some(kind_text) = &args.correlation {
        let out = args.correlation_out.as_ref().ok_or_else(|| {
            Error::Config("--correlation needs --correlation-out".into())
        })?;
        let kind: ClosureKind = kind_text.parse()?;
        let trajectory = args.trajectory.unwrap_or(ds.protocol.train_trajectories);
        let series: Vec<&Snapshot> = ds
            .snapshots
            .iter()
            .filter(|s| s.trajectory == trajectory)
            .collect();
        if series.is_empty() {
            return Err(Error::Config(format!(
                "dataset has no trajectory {trajectory}"
            )));
        }
        let x_c = match &args.x_c {
            Some(text) => parse_pair(text, "x_c")?,
            None => (n / 2, n / 2),
        };
        let u_series: Vec<RealField2D> =
            series.iter().map(|s| s.closure_field(kind).clone()).collect();
        let omega_series: Vec<RealField2D> =
            series.iter().map(|s| s.omega.clone()).collect();
        let map = correlation_map(&u_series, &omega_series, x_c)?;
        std::fs::write(out, correlation_csv(&map))?;
        let peak = map.peak();
        println!(
            "correlation C_({kind},omega): peak |C|={:.3} at ({},{}), {} cells from x_c=({},{}); max/median prominence {:.2}",
            map.max_abs(),
            peak.0,
            peak.1,
            torus_distance(peak, x_c, n),
            x_c.0,
            x_c.1,
            map.max_abs() / map.median_abs()
        );
        did_something = true;
    }

    if !did_something {
        return Err(Error::Config(
            "nothing to do: pass --metrics-out, --spectrum-out, or --correlation".into(),
        ));
    }
    Ok(())
}
