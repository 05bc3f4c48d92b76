//! Filter statistics measured during training, fed back into the analytic dynamics.

use jascl::bench::{run_protocol, BenchSettings, ConfigKind, ContinualProtocol};
use jascl::dynamics::{
    asymptotic_error, improvement_threshold, improves_on_supervised, DynamicsParams, FilterMode,
};

fn small_report() -> jascl::bench::ComparisonReport {
    let protocol = ContinualProtocol::joint_shift_3(3, 12).unwrap();
    let mut settings = BenchSettings { image_size: (16, 16), ..BenchSettings::default() };
    settings.base.epochs = 4;
    settings.incremental.epochs = 4;
    run_protocol(&protocol, &[ConfigKind::Jascl, ConfigKind::GasOnly], &[11, 12], &settings).unwrap()
}

#[test]
fn measured_coverage_and_precision_drive_the_recurrence() {
    let report = small_report();
    let mut checked = 0;
    for cell in report.cells.iter().filter(|c| c.config == ConfigKind::Jascl) {
        for log in cell.logs.iter().filter(|l| l.session > 0) {
            for e in &log.epochs {
                let (f, rho) = (e.measured_f.unwrap(), e.measured_rho.unwrap());
                assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&rho));
                assert!((e.accepted_pct.unwrap() - 100.0 * f).abs() < 1e-12);
                let p = DynamicsParams::new(0.3, 0.8, 0.9, f, rho).unwrap();
                let limit = asymptotic_error(&p, FilterMode::Filtered).unwrap();
                assert!(limit <= p.epsilon0);
                // Improvement needs both some coverage and some precision.
                assert_eq!(improves_on_supervised(&p).unwrap(), f > 0.0 && rho > 0.0);
                if f > 0.0 && rho > improvement_threshold(f, 0.8).unwrap() {
                    assert!(limit < p.epsilon0);
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 2 * 2 * 4);
}

#[test]
fn mechanisms_without_unlabeled_data_log_no_filter_statistics() {
    let report = small_report();
    for cell in report.cells.iter().filter(|c| c.config == ConfigKind::GasOnly) {
        for log in &cell.logs {
            assert!(log.epochs.iter().all(|e| e.measured_f.is_none() && e.consistency == 0.0));
            if log.session > 0 {
                assert!(log.epochs.iter().skip(1).all(|e| e.gas_scale_mean.is_some()));
            }
        }
    }
}
