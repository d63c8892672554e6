use unfold_core::forward::CrystalBall;
use unfold_core::harness::{
    crystal_ball_loglik, fit_crystal_ball, synthesize_zboson, zboson_config, KernelSpec,
};

const M_Z: f64 = 91.1876;
const WIDTH: f64 = 2.4952;

#[test]
fn fit_beats_generating_parameters() {
    let truth = CrystalBall::new(0.56, 1.01, 1.95, 1.40).unwrap();
    for seed in [3u64, 4] {
        let mut cfg = zboson_config();
        cfg.seed = seed;
        let data = synthesize_zboson(&cfg).unwrap();
        let in_range = data.full.restrict(82.5, 97.5).unwrap().total();
        let fit_in_range = data.fit.restrict(82.5, 97.5).unwrap().total();
        assert_eq!(data.unfold.total() + fit_in_range, in_range);
        let fit = fit_crystal_ball(&data.fit, M_Z, WIDTH).unwrap();
        let (at_truth, _) = crystal_ball_loglik(&data.fit, &truth, M_Z, WIDTH).unwrap();
        assert!(fit.log_likelihood >= at_truth - 1e-9, "seed {seed}: {} < {at_truth}", fit.log_likelihood);
        assert!((fit.cb.delta_m - 0.56).abs() < 0.2 && (fit.cb.sigma - 1.01).abs() < 0.2);
    }
}

#[test]
fn narrow_kernel_gives_no_shift() {
    let mut cfg = zboson_config();
    cfg.kernel = KernelSpec::CrystalBall {
        delta_m_gev: 0.0,
        sigma_gev: 0.01,
        alpha: 1.95,
        gamma: 1.40,
    };
    let data = synthesize_zboson(&cfg).unwrap();
    let fit = fit_crystal_ball(&data.fit, M_Z, WIDTH).unwrap();
    assert!(fit.cb.delta_m.abs() < 0.02, "shift {}", fit.cb.delta_m);
}
