use std::path::PathBuf;

use clap::Args;
use sclo_core::io::dataset::write_dataset;
use sclo_core::random::SeedStream;
use sclo_core::solver::generate_dataset;
use sclo_core::Result;

use crate::ConfigArgs;

#[derive(Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Dataset output path (a JSON manifest is written next to it)
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ds = generate_dataset(&cfg.ns, &cfg.grf, &cfg.protocol, SeedStream::root(cfg.root_seed))?;

    let mut enstrophy_min = f64::INFINITY;
    let mut enstrophy_max = f64::NEG_INFINITY;
    for snap in &ds.snapshots {
        let e = 0.5 * snap.omega.mean_square();
        enstrophy_min = enstrophy_min.min(e);
        enstrophy_max = enstrophy_max.max(e);
    }

    let hash = write_dataset(&args.output, &ds)?;
    println!(
        "wrote {} snapshots ({} train, {} test) at n={} to {}",
        ds.snapshots.len(),
        ds.train_snapshots().count(),
        ds.test_snapshots().count(),
        cfg.protocol.target_n,
        args.output.display()
    );
    println!("enstrophy range [{enstrophy_min:.6e}, {enstrophy_max:.6e}]");
    println!("content hash {hash}");
    Ok(())
}
