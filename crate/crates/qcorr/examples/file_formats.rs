//! The on-disk formats: binary record files, calibration JSON, result JSON
//! and plot-ready CSV.

use qcorr::estimator::Variant;
use qcorr::formats::{curve_csv, read_records, Provenance, RecordHeader, ResultFile, HEADER_LEN};
use qcorr::model::{validate_config, CavityPreparation, ExperimentConfig, TimeGrid};
use qcorr::pipeline::{simulate_and_analyze, simulate_to_file, AnalysisOptions};

fn main() -> qcorr::Result<()> {
    let config = validate_config(&ExperimentConfig::hbt(1.0, TimeGrid::from_period(20.0, 32, 5)))?;
    let prep = CavityPreparation::single_photon();
    let dir = tempfile::tempdir()?;

    let records = dir.path().join("run.qenv");
    simulate_to_file(&config, &prep, 1, 100, &records)?;
    let bytes = std::fs::read(&records)?;
    let header = RecordHeader::decode(&bytes)?;
    println!("{header:?}");
    println!("file size {} = {HEADER_LEN} + {}", bytes.len(), header.payload_len());
    let set = read_records(&records, config.grid.periods)?;
    println!("{} shots read back, digest {}", set.shots, hex::encode(set.config_digest));

    let mut opts = AnalysisOptions::new(Variant::Beta);
    opts.reference = Some(prep);
    let (analysis, noise) = simulate_and_analyze(&config, &prep, [1, 2], [100, 100], None, &opts)?;
    let calib = dir.path().join("calibration.json");
    std::fs::write(&calib, noise.to_json())?;
    println!("calibration file: {} bytes", std::fs::metadata(&calib)?.len());

    let result = analysis.to_result_file(Provenance::new(config.digest_hex(), vec![1, 2]));
    let path = dir.path().join("result.json");
    result.write(&path)?;
    assert_eq!(ResultFile::read(&path)?, result);
    println!("result curves: {:?}", result.curves.iter().map(|c| c.name.as_str()).collect::<Vec<_>>());
    let csv = curve_csv(result.curve("g1").expect("g1 present"));
    for line in csv.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
