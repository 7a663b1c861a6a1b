use sclo_core::analysis::{energy_spectrum, log_log_slope};
use sclo_core::random::{sample_initial_vorticity, sample_noise_increment, GrfSpec, SeedStream};
use sclo_core::solver::{solve_stream_function, velocity_from_stream, CnStepper, NsConfig};
use sclo_core::{dft_forward, dft_inverse, Grid2D};

#[test]
fn probe_transition_to_turbulence() {
    let grid = Grid2D::new(64).unwrap();
    let ns = NsConfig::new(grid);
    let stepper = CnStepper::new(ns).unwrap();
    let mut init_rng = SeedStream::root(42).named("init").rng();
    let mut noise_rng = SeedStream::root(42).named("noise").rng();
    let mut omega_hat = dft_forward(&sample_initial_vorticity(grid, &GrfSpec::default(), &mut init_rng).unwrap());

    let seconds = 60usize;
    let steps_per_second = (1.0 / ns.dt).round() as usize;
    for sec in 1..=seconds {
        for _ in 0..steps_per_second {
            let xi = sample_noise_increment(grid, ns.dt, &mut noise_rng).unwrap();
            omega_hat = stepper.step(&omega_hat, &xi).unwrap();
        }
        if sec % 5 == 0 || sec <= 3 {
            let psi = solve_stream_function(&omega_hat);
            let (ux_hat, uy_hat) = velocity_from_stream(&psi);
            let ux = dft_inverse(&ux_hat).unwrap();
            let uy = dft_inverse(&uy_hat).unwrap();
            let u_rms = (ux.values().mapv(|v| v * v).mean().unwrap()
                + uy.values().mapv(|v| v * v).mean().unwrap())
            .sqrt();
            let omega = dft_inverse(&omega_hat).unwrap();
            let w_rms = omega.values().mapv(|v| v * v).mean().unwrap().sqrt();
            let mut spec = energy_spectrum(&ux);
            let spec_y = energy_spectrum(&uy);
            for (a, b) in spec.energies.iter_mut().zip(spec_y.energies.iter()) {
                *a += b;
            }
            let slope = log_log_slope(&spec, 3, 8).unwrap_or(f64::NAN);
            let shells: Vec<String> =
                spec.energies[1..10].iter().map(|e| format!("{e:.1e}")).collect();
            println!(
                "t={sec:2}s u_rms={u_rms:.3} w_rms={w_rms:.3} slope(3..8)={slope:.2} shells {}",
                shells.join(" ")
            );
        }
    }
}
