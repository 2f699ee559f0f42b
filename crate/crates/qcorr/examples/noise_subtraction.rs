//! Calibrates amplifier noise from a vacuum run and shows what the
//! cross-correlated noise `N̄_cd` leaves behind when it is not subtracted.

use num_complex::Complex64;
use qcorr::calibration::RecoveryOptions;
use qcorr::estimator::{EstimatorOptions, Variant};
use qcorr::model::{validate_config, AmplifierChannel, CavityPreparation, ExperimentConfig, TimeGrid};
use qcorr::pipeline::{analyze, correlate_source, simulate_calibration, AnalysisOptions, Simulation};

fn main() -> qcorr::Result<()> {
    let config = ExperimentConfig::hbt(1.0, TimeGrid::from_period(20.0, 32, 15))
        .with_channels([AmplifierChannel::new(1.0, 0.5); 2])
        .with_noise_cross(Complex64::new(0.5, 0.0));
    let config = validate_config(&config)?;
    let prep = CavityPreparation::superposition(2.0 / 3.0);

    let noise = simulate_calibration(&config, 11, 4_000, None)?;
    for (c, n) in noise.nbar.iter().enumerate() {
        println!("channel {c}: N = {:.4} +/- {:.4}", n.value, n.stderr);
    }
    println!("cross: N_cd = {:.4} +/- {:.4}", noise.nbar_cross.value, noise.nbar_cross.stderr);

    let mut opts = AnalysisOptions::new(Variant::Beta);
    opts.g2 = false;
    let mut signal = Simulation::new(&config, &prep, 12, 4_000)?;
    let gammas = correlate_source(&mut signal, opts.request(), EstimatorOptions::new(config.lag_periods), None)?;
    let with = analyze(gammas.clone(), &noise, &config, None, &opts)?;
    opts.recovery = RecoveryOptions {
        subtract_cross: false,
        ..RecoveryOptions::default()
    };
    let without = analyze(gammas, &noise, &config, None, &opts)?;
    for m in [-1isize, 0, 1] {
        println!(
            "lag {m:+}: subtracted {:.3} +/- {:.3}   raw {:.3}",
            with.g1.at_lag(m).re,
            with.g1.stderr_at_lag(m),
            without.g1.at_lag(m).re
        );
    }
    Ok(())
}
