use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use wqes::baselines::{
    care_filter, es_caviar_filter, fit_care_sav, fit_es_caviar, fit_garch_t, CareParams, EsCaviarForm, EsCaviarParams,
};
use wqes::caviar::{CaviarParams, CaviarSpec};
use wqes::optimize::MultiStartConfig;
use wqes::simulate::{simulate_replication, DgpForm, DgpSpec};
use wqes::special::{std_t_var_es, StudentTParams};
use wqes::wq::aggregate_al_loss;

const ALPHA: f64 = 0.025;

fn desk() -> MultiStartConfig {
    MultiStartConfig { n_candidates: 1_000, ..MultiStartConfig::default() }
}

#[test]
fn mult_multiplier_matches_true_ratio() {
    let (var, es) = std_t_var_es(ALPHA, StudentTParams::new(10.0).unwrap()).unwrap();
    let ratio = es / var;
    assert!((ratio - 1.7428 / 1.3775).abs() < 1e-3);
    let spec = DgpSpec::new(DgpForm::AvGarchT).with_seed(31);
    let mults: Vec<f64> = (0..8)
        .into_par_iter()
        .map(|rep| {
            let r = simulate_replication(&spec, rep).unwrap().returns;
            let fit = fit_es_caviar(&r, ALPHA, EsCaviarForm::Mult, CaviarSpec::Sav, &desk().with_seed(rep as u64)).unwrap();
            fit.params.multiplier().unwrap()
        })
        .collect();
    let mean = mults.iter().sum::<f64>() / mults.len() as f64;
    assert!((mean - ratio).abs() <= 0.05, "mean multiplier {mean} vs {ratio} ({mults:?})");
}

#[test]
fn garch_recovers_persistence() {
    let spec = DgpSpec::new(DgpForm::GarchT).with_n(5_000).with_seed(17);
    let fits: Vec<f64> = (0..4)
        .into_par_iter()
        .map(|rep| {
            let r = simulate_replication(&spec, rep).unwrap().returns;
            let p = fit_garch_t(&r, ALPHA, &desk()).unwrap().params;
            p.gamma + p.delta
        })
        .collect();
    for (rep, s) in fits.iter().enumerate() {
        assert!((s - 0.95).abs() <= 0.05, "rep {rep}: gamma + delta = {s}");
    }
}

#[test]
fn care_selects_expectile_below_level_on_gaussian_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r: Vec<f64> = (0..1_500).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fit = fit_care_sav(&r, ALPHA, 50, &desk()).unwrap();
    assert!(fit.params.tau < ALPHA, "selected tau {}", fit.params.tau);
    let zero = CareParams { expectile: CaviarParams::sav(0.0, 0.0, 0.0), ..fit.params.clone() };
    let at_zero = care_filter(&zero, &r, fit.mu_init);
    let als = wqes::baselines::als_loss(&r, &at_zero.var_path, fit.params.tau).unwrap();
    assert!(fit.loss <= als, "fitted ALS {} above zero-parameter ALS {als}", fit.loss);
}

#[test]
fn baseline_paths_keep_es_below_var() {
    let spec = DgpSpec::new(DgpForm::AvGarchT).with_seed(44);
    let r = simulate_replication(&spec, 0).unwrap().returns;
    let cfg = desk();

    let add = fit_es_caviar(&r, ALPHA, EsCaviarForm::Add, CaviarSpec::Sav, &cfg).unwrap();
    let mult = fit_es_caviar(&r, ALPHA, EsCaviarForm::Mult, CaviarSpec::Sav, &cfg).unwrap();
    let care = fit_care_sav(&r, ALPHA, 50, &cfg).unwrap();
    let garch = fit_garch_t(&r, ALPHA, &cfg).unwrap();
    for (name, p) in [("add", &add.paths), ("mult", &mult.paths), ("care", &care.paths), ("garch", &garch.paths)] {
        for (t, (q, es)) in p.var_path.iter().zip(&p.es_path).enumerate() {
            assert!(es <= q && *q < 0.0, "{name} at {t}: VaR {q}, ES {es}");
        }
        assert!(p.es_forecast <= p.var_forecast && p.var_forecast < 0.0, "{name} forecast");
    }

    // The additive fit starts from the CAViaR solution with a frozen gap.
    let frozen = EsCaviarParams::new(EsCaviarForm::Add, add.params.quantile.clone(), vec![0.0, 0.0, 0.999]).unwrap();
    let start = es_caviar_filter(&frozen, &r, add.q_init, add.x_init);
    if start.es_path.iter().all(|e| *e < 0.0) {
        let l0 = aggregate_al_loss(&r, &start.var_path, &start.es_path, ALPHA).unwrap() / r.len() as f64;
        assert!(add.loss <= l0 + 1e-12);
    }
    let refit = es_caviar_filter(&add.params, &r, add.q_init, add.x_init);
    let agg = aggregate_al_loss(&r, &refit.var_path, &refit.es_path, ALPHA).unwrap();
    assert!((agg / r.len() as f64 - add.loss).abs() < 1e-10);
}

#[test]
fn garch_risk_scales_with_volatility() {
    let spec = DgpSpec::new(DgpForm::GarchT).with_seed(3);
    let r = simulate_replication(&spec, 0).unwrap().returns;
    let fit = fit_garch_t(&r, ALPHA, &desk()).unwrap();
    let (v1, e1) = std_t_var_es(ALPHA, StudentTParams::new(fit.params.nu).unwrap()).unwrap();
    assert!((fit.paths.var_forecast - fit.sigma_next * v1).abs() < 1e-12);
    assert!((fit.paths.es_forecast - fit.sigma_next * e1).abs() < 1e-12);
    assert!(fit.paths.es_forecast.abs() > fit.paths.var_forecast.abs());
}
