//! Gaussian filtering of the records replaces the `δ` noise floor by the
//! effective kernel `f_eff`, while the peak-height ratios of G1 are preserved.

use qcorr::estimator::{CorrelationFunction, CorrelationKind, LagGrid};
use qcorr::filtering::{effective_kernel, filter_reference_g1, FilterSpec};
use qcorr::model::{validate_config, AmplifierChannel, ExperimentConfig, TimeGrid};
use qcorr::model::CavityPreparation;
use qcorr::pipeline::simulate_calibration;
use qcorr::reference::{g1_analytic, peak_report, PeakMethod};

fn main() -> qcorr::Result<()> {
    let t_p = 20.0;
    let base = ExperimentConfig::hbt(1.0, TimeGrid::from_period(t_p, 128, 9))
        .with_channels([AmplifierChannel::new(1.0, 1.0); 2]);
    let config = validate_config(&base)?;
    let dt = config.grid.dt;
    let grid = LagGrid::new(dt, 128, 2);
    let prep = CavityPreparation::superposition(2.0 / 3.0);
    let g1 = |t: f64| g1_analytic(t, &prep, 1.0, t_p);

    for factor in [31.0, 14.0, 10.0] {
        let filters = FilterSpec::gaussian_pair(factor, t_p);
        let kernel = effective_kernel(&filters[0], &filters[1], dt)?;
        let values = filter_reference_g1(g1, &kernel, grid);
        let curve = CorrelationFunction::from_values(CorrelationKind::G1, grid, values, vec![0.0; grid.len()], 0, String::new());
        let report = peak_report(&curve, t_p, PeakMethod::WindowMax);
        let noise = simulate_calibration(&config, 9, 1_000, Some(&filters))?;
        println!(
            "B = {factor}/t_p: f_eff(0) = {:.3}, center {:.4}, side/center {:.4}, calibrated N = {:.3} +/- {:.3}",
            kernel.at(0),
            report.center_height,
            report.ratios[1],
            noise.nbar[0].value,
            noise.nbar[0].stderr
        );
    }
    Ok(())
}
