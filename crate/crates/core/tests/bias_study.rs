use std::sync::OnceLock;

use wqes::optimize::MultiStartConfig;
use wqes::simulate::{mean_true_values, run_bias_study, BiasReport, BiasStudyConfig, DgpForm, DgpSpec};
use wqes::wq::EsVariantKind;

const ALPHA1: [f64; 3] = [0.005, 0.01, 0.015];

fn report() -> &'static BiasReport {
    static REPORT: OnceLock<BiasReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let spec = DgpSpec::new(DgpForm::AvGarchT).with_seed(606).with_reps(60);
        let cfg = BiasStudyConfig {
            kinds: vec![EsVariantKind::WqBeta, EsVariantKind::SaBc, EsVariantKind::SaNoBc],
            caviar: MultiStartConfig { n_candidates: 500, ..MultiStartConfig::default() },
            ..BiasStudyConfig::default()
        };
        run_bias_study(&spec, &cfg).unwrap()
    })
}

#[test]
fn report_shape() {
    let r = report();
    assert_eq!(r.cells.len(), 3 * 2 * 3);
    assert_eq!(r.n_failed, 0);
    assert!(r.cells.iter().all(|c| c.n_ok == r.n_reps));
    assert_eq!(r.weight_samples.len(), 2 * 3 * r.n_reps);
    assert!((r.mean_true_var - mean_true_values(&DgpSpec::new(DgpForm::AvGarchT).with_seed(606).with_reps(60), 0.025).unwrap().0).abs() < 1e-12);
    for c in &r.cells {
        assert!(c.es_delta >= 0.0 && c.es_mad >= c.es_delta - 1e-12);
    }
}

#[test]
fn bias_corrected_estimators_beat_plain_average() {
    let r = report();
    for a1 in ALPHA1 {
        for m in [3, 10] {
            let d = |k| r.cell(k, m, a1).unwrap().es_delta;
            let plain = d(EsVariantKind::SaNoBc);
            assert!(d(EsVariantKind::WqBeta) < plain, "M={m} a1={a1}: WQ-Beta {} vs SA-No-BC {plain}", d(EsVariantKind::WqBeta));
            assert!(d(EsVariantKind::SaBc) < plain, "M={m} a1={a1}: SA-BC {} vs SA-No-BC {plain}", d(EsVariantKind::SaBc));
        }
    }
}

#[test]
fn truncation_bias_grows_with_lower_level() {
    let r = report();
    for m in [3, 10] {
        let d: Vec<f64> = ALPHA1.iter().map(|&a| r.cell(EsVariantKind::SaNoBc, m, a).unwrap().es_delta).collect();
        assert!(d[0] < d[1] && d[1] < d[2], "M={m}: {d:?}");
    }
}

#[test]
fn fitted_weights_load_on_deepest_level() {
    let r = report();
    for m in [3, 10] {
        let samples: Vec<_> = r.weight_samples.iter().filter(|w| w.m == m).collect();
        let mean_at = |i: usize| samples.iter().map(|w| w.weights[i]).sum::<f64>() / samples.len() as f64;
        let median = m / 2;
        assert!(mean_at(0) > mean_at(median), "M={m}: level 1 {} vs median {}", mean_at(0), mean_at(median));
    }
}
