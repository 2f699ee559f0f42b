//! Simulates a short HBT run, writes it as a record file and reads a shot back.

use qcorr::model::{validate_config, AmplifierChannel, CavityPreparation, ExperimentConfig, TimeGrid};
use qcorr::pipeline::{self, ShotSource};

fn main() -> qcorr::Result<()> {
    let config = ExperimentConfig::hbt(1.0, TimeGrid::from_period(20.0, 64, 7))
        .with_channels([AmplifierChannel::new(2.0, 1.0); 2])
        .with_preparation(CavityPreparation::single_photon());
    let config = validate_config(&config)?;
    println!("config digest {}", config.digest_hex());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("run.qenv");
    pipeline::simulate_to_file(&config, &config.preparation, 42, 500, &path)?;
    println!("wrote {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let mut reader = pipeline::open_records(&path, &config)?;
    let shot = reader.chunk(10, 1)?;
    let power: f64 = shot.channels[0].iter().map(|v| v.norm_sqr() as f64).sum::<f64>() / shot.shot_len() as f64;
    println!(
        "shot 10: {} bins per channel, mean |C|^2 = {power:.2} (noise floor (g + N) / dt = {:.2})",
        shot.shot_len(),
        3.0 / config.grid.dt
    );
    Ok(())
}
