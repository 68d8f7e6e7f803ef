use proptest::prelude::*;

use odmr_core::spin::resonances;
use odmr_core::synth::{
    mw_response, photon_rate, shot_noise_sigma, synthesize_spectrum, AcquisitionConfig,
    CoverageWarning, MwResponseParams, SaturationParams,
};
use odmr_core::units::MHZ;
use odmr_core::{FieldVector, PhysicalConstants};

fn acquisition(points: usize, seed: Option<u64>) -> AcquisitionConfig {
    AcquisitionConfig {
        laser_mw: 85.0,
        mw_dbm: 18.0,
        f_start_hz: 50.0 * MHZ,
        f_stop_hz: 280.0 * MHZ,
        n_points: points,
        dwell_s: 0.01,
        seed,
    }
}

fn synth(cfg: &AcquisitionConfig, b_gauss: f64, theta_deg: f64) -> odmr_core::synth::OdmrSpectrum {
    synthesize_spectrum(
        cfg,
        &FieldVector::from_gauss_deg(b_gauss, theta_deg).unwrap(),
        &PhysicalConstants::default(),
        &SaturationParams::default(),
        &MwResponseParams::default(),
    )
    .unwrap()
}

#[test]
fn noiseless_spectrum_is_the_exact_lorentzian_sum() {
    let spec = synth(&acquisition(461, None), 60.0, 0.0);
    let c = PhysicalConstants::default();
    let pair = resonances(&FieldVector::from_gauss_deg(60.0, 0.0).unwrap(), &c);
    let m = mw_response(18.0, &MwResponseParams::default());
    let half = m.fwhm_hz / 2.0;
    for (f, s) in spec.freq_hz.iter().zip(&spec.signal) {
        let l = |c0: f64| m.contrast * half * half / ((f - c0) * (f - c0) + half * half);
        let expected = l(pair.nu1_hz) + l(pair.nu2_hz);
        assert!((s - expected).abs() <= 1e-12, "{f}: {s} vs {expected}");
    }
    assert_eq!(spec.freq_hz[0], 50.0 * MHZ);
    assert_eq!(*spec.freq_hz.last().unwrap(), 280.0 * MHZ);
    assert!(spec.meta.as_ref().unwrap().noise_sigma.is_none());
}

#[test]
fn noise_has_the_shot_noise_width() {
    let clean = synth(&acquisition(100_000, None), 60.0, 0.0);
    let noisy = synth(&acquisition(100_000, Some(7)), 60.0, 0.0);
    let rate = photon_rate(85.0, &SaturationParams::default()).unwrap();
    let sigma = shot_noise_sigma(rate, 0.01);
    assert_eq!(noisy.meta.as_ref().unwrap().noise_sigma, Some(sigma));
    let d: Vec<f64> = noisy
        .signal
        .iter()
        .zip(&clean.signal)
        .map(|(a, b)| a - b)
        .collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        (sd / sigma - 1.0).abs() < 0.02,
        "sample sd {sd}, expected {sigma}"
    );
    assert!(mean.abs() < 5.0 * sigma / n.sqrt());
}

#[test]
fn same_seed_same_spectrum() {
    let a = synth(&acquisition(461, Some(42)), 60.0, 10.0);
    let b = synth(&acquisition(461, Some(42)), 60.0, 10.0);
    let c = synth(&acquisition(461, Some(43)), 60.0, 10.0);
    assert_eq!(a, b);
    assert_ne!(a.signal, c.signal);
}

#[test]
fn warns_when_a_resonance_leaves_the_window() {
    let spec = synth(&acquisition(461, None), 120.0, 0.0);
    assert_eq!(
        spec.meta.unwrap().warnings,
        vec![CoverageWarning::Nu2OutsideSweep]
    );
    let spec = synth(&acquisition(461, None), 60.0, 0.0);
    assert!(spec.meta.unwrap().warnings.is_empty());
}

#[test]
fn rejects_bad_acquisitions() {
    let mut cfg = acquisition(461, None);
    cfg.f_stop_hz = cfg.f_start_hz;
    assert!(cfg.validate().is_err());
    let mut cfg = acquisition(1, None);
    assert!(cfg.validate().is_err());
    cfg.n_points = 10;
    cfg.dwell_s = 0.0;
    assert!(cfg.validate().is_err());
    assert!(photon_rate(0.0, &SaturationParams::default()).is_err());
    assert!(SaturationParams::new(-1.0, 300.0).is_err());
    assert!(MwResponseParams::new(0.0018, -1.0, 15.0).is_err());
}

proptest! {
    #[test]
    fn photon_rate_increases_and_bends_down(p in 0.1..2000.0f64, dp in 0.01..100.0f64) {
        let sat = SaturationParams::default();
        let r = |x: f64| photon_rate(x, &sat).unwrap();
        prop_assert!(r(p + dp) > r(p));
        prop_assert!(r(p) < sat.i_s_cps);
        // Midpoint concavity.
        prop_assert!(r(p + dp / 2.0) >= 0.5 * (r(p) + r(p + dp)));
    }

    #[test]
    fn mw_contrast_and_width_grow_with_power(p in -20.0..40.0f64, dp in 0.01..10.0f64) {
        let params = MwResponseParams::default();
        let a = mw_response(p, &params);
        let b = mw_response(p + dp, &params);
        prop_assert!(b.contrast > a.contrast && b.contrast < params.c_max);
        prop_assert!(b.fwhm_hz > a.fwhm_hz && a.fwhm_hz >= params.fwhm0_hz);
    }

    #[test]
    fn noiseless_signal_is_bounded(b in 0.0..200.0f64, t in 0.0..90.0f64) {
        let spec = synth(&acquisition(231, None), b, t);
        let peak = mw_response(18.0, &MwResponseParams::default()).contrast;
        prop_assert!(spec.signal.iter().all(|&s| s >= 0.0 && s <= 2.0 * peak + 1e-15));
    }
}
