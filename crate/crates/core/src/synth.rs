//! Synthetic ODMR spectra.
//!
//! Dips are stored as positive contrast: `signal = dPL/PL >= 0` on a zero
//! baseline. Laser power only sets the detected photon rate; contrast and
//! linewidth depend on microwave power alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::spin::{resonances, FieldVector, PhysicalConstants, TransitionPair};
use crate::units::{dbm_ratio, MCPS, MHZ};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianPeak {
    pub center_hz: f64,
    pub fwhm_hz: f64,
    pub amplitude: f64,
}

impl LorentzianPeak {
    pub fn new(center_hz: f64, fwhm_hz: f64, amplitude: f64) -> Result<Self> {
        if !(fwhm_hz.is_finite() && fwhm_hz > 0.0) {
            return Err(invalid(
                "fwhm_hz",
                format!("must be positive, got {fwhm_hz}"),
            ));
        }
        if !center_hz.is_finite() || !amplitude.is_finite() {
            return Err(invalid("peak", "center and amplitude must be finite"));
        }
        Ok(Self {
            center_hz,
            fwhm_hz,
            amplitude,
        })
    }

    pub fn value(&self, f_hz: f64) -> f64 {
        lorentzian_value(self, f_hz)
    }
}

/// amplitude / (1 + ((f - center) / (fwhm / 2))^2)
pub fn lorentzian_value(peak: &LorentzianPeak, f_hz: f64) -> f64 {
    let u = (f_hz - peak.center_hz) / (0.5 * peak.fwhm_hz);
    peak.amplitude / (1.0 + u * u)
}

/// Photoluminescence saturation I(P) = I_s / (1 + P0 / P).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationParams {
    pub i_s_cps: f64,
    pub p0_mw: f64,
}

impl SaturationParams {
    pub fn new(i_s_cps: f64, p0_mw: f64) -> Result<Self> {
        if !(i_s_cps.is_finite() && i_s_cps > 0.0) {
            return Err(invalid(
                "i_s_cps",
                format!("must be positive, got {i_s_cps}"),
            ));
        }
        if !(p0_mw.is_finite() && p0_mw > 0.0) {
            return Err(invalid("p0_mw", format!("must be positive, got {p0_mw}")));
        }
        Ok(Self { i_s_cps, p0_mw })
    }
}

impl Default for SaturationParams {
    /// 935 Mcps, 300 mW.
    fn default() -> Self {
        Self {
            i_s_cps: 935.0 * MCPS,
            p0_mw: 300.0,
        }
    }
}

pub fn photon_rate(laser_mw: f64, sat: &SaturationParams) -> Result<f64> {
    if !(laser_mw.is_finite() && laser_mw > 0.0) {
        return Err(invalid(
            "laser_mw",
            format!("must be positive, got {laser_mw}"),
        ));
    }
    Ok(sat.i_s_cps / (1.0 + sat.p0_mw / laser_mw))
}

/// Two-level saturation response to microwave drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwResponseParams {
    pub c_max: f64,
    pub fwhm0_hz: f64,
    pub p_sat_dbm: f64,
}

impl MwResponseParams {
    pub fn new(c_max: f64, fwhm0_hz: f64, p_sat_dbm: f64) -> Result<Self> {
        if !(c_max > 0.0 && c_max < 1.0) {
            return Err(invalid("c_max", format!("must lie in (0, 1), got {c_max}")));
        }
        if !(fwhm0_hz.is_finite() && fwhm0_hz > 0.0) {
            return Err(invalid(
                "fwhm0_hz",
                format!("must be positive, got {fwhm0_hz}"),
            ));
        }
        if !p_sat_dbm.is_finite() {
            return Err(invalid("p_sat_dbm", "must be finite"));
        }
        Ok(Self {
            c_max,
            fwhm0_hz,
            p_sat_dbm,
        })
    }
}

impl Default for MwResponseParams {
    /// Calibrated so that 18 dBm gives roughly 1.7e-3 and 12 MHz and the
    /// sensitivity optimum falls at 19 dBm.
    fn default() -> Self {
        Self {
            c_max: 2.7e-3,
            fwhm0_hz: 7.5 * MHZ,
            p_sat_dbm: 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwResponse {
    /// s = 10^((P - P_sat) / 10)
    pub saturation: f64,
    pub contrast: f64,
    pub fwhm_hz: f64,
}

pub fn mw_response(mw_dbm: f64, params: &MwResponseParams) -> MwResponse {
    let s = dbm_ratio(mw_dbm - params.p_sat_dbm);
    MwResponse {
        saturation: s,
        contrast: params.c_max * s / (1.0 + s),
        fwhm_hz: params.fwhm0_hz * (1.0 + s).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    pub laser_mw: f64,
    pub mw_dbm: f64,
    pub f_start_hz: f64,
    pub f_stop_hz: f64,
    pub n_points: usize,
    pub dwell_s: f64,
    /// `None` produces a noiseless spectrum.
    pub seed: Option<u64>,
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_start_hz.is_finite() && self.f_stop_hz.is_finite())
            || self.f_stop_hz <= self.f_start_hz
        {
            return Err(invalid(
                "frequency range",
                format!(
                    "need f_stop > f_start, got [{}, {}]",
                    self.f_start_hz, self.f_stop_hz
                ),
            ));
        }
        if self.n_points < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: self.n_points,
            });
        }
        if !(self.dwell_s.is_finite() && self.dwell_s > 0.0) {
            return Err(invalid(
                "dwell_s",
                format!("must be positive, got {}", self.dwell_s),
            ));
        }
        if !(self.laser_mw.is_finite() && self.laser_mw > 0.0) {
            return Err(invalid(
                "laser_mw",
                format!("must be positive, got {}", self.laser_mw),
            ));
        }
        if !self.mw_dbm.is_finite() {
            return Err(invalid("mw_dbm", "must be finite"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = (self.f_stop_hz - self.f_start_hz) / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| {
                if i + 1 == self.n_points {
                    self.f_stop_hz
                } else {
                    self.f_start_hz + step * i as f64
                }
            })
            .collect()
    }
}

/// Which model resonance falls outside the sweep window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageWarning {
    Nu1OutsideSweep,
    Nu2OutsideSweep,
}

/// Everything needed to regenerate a synthetic spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisMeta {
    pub acquisition: AcquisitionConfig,
    pub field: FieldVector,
    pub consts: PhysicalConstants,
    pub transitions: TransitionPair,
    pub peaks: [LorentzianPeak; 2],
    pub photon_rate_cps: f64,
    /// Per-point standard deviation, present when noise was added.
    pub noise_sigma: Option<f64>,
    pub warnings: Vec<CoverageWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrSpectrum {
    pub freq_hz: Vec<f64>,
    pub signal: Vec<f64>,
    pub meta: Option<SynthesisMeta>,
}

impl OdmrSpectrum {
    /// Wraps measured data after checking the container invariants.
    pub fn from_measured(freq_hz: Vec<f64>, signal: Vec<f64>) -> Result<Self> {
        check_grid(&freq_hz, &signal)?;
        Ok(Self {
            freq_hz,
            signal,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.freq_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_hz.is_empty()
    }
}

pub(crate) fn check_grid(freq_hz: &[f64], signal: &[f64]) -> Result<()> {
    if freq_hz.len() != signal.len() {
        return Err(invalid(
            "spectrum",
            format!(
                "{} frequencies but {} signal values",
                freq_hz.len(),
                signal.len()
            ),
        ));
    }
    if freq_hz.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = signal.iter().position(|s| !s.is_finite()) {
        return Err(invalid(
            "spectrum",
            format!("signal at index {i} is not finite"),
        ));
    }
    if let Some(i) = freq_hz.iter().position(|f| !f.is_finite()) {
        return Err(invalid(
            "spectrum",
            format!("frequency at index {i} is not finite"),
        ));
    }
    if let Some(i) = freq_hz.windows(2).position(|w| w[1] <= w[0]) {
        return Err(invalid(
            "spectrum",
            format!("frequency grid not strictly increasing at index {}", i + 1),
        ));
    }
    Ok(())
}

/// Shot-noise standard deviation of the normalized signal per point.
pub fn shot_noise_sigma(rate_cps: f64, dwell_s: f64) -> f64 {
    1.0 / (rate_cps * dwell_s).sqrt()
}

/// Two Lorentzian dips at the model resonances, plus optional seeded
/// Gaussian shot noise.
pub fn synthesize_spectrum(
    cfg: &AcquisitionConfig,
    field: &FieldVector,
    consts: &PhysicalConstants,
    sat: &SaturationParams,
    mw: &MwResponseParams,
) -> Result<OdmrSpectrum> {
    cfg.validate()?;
    let transitions = resonances(field, consts);
    let response = mw_response(cfg.mw_dbm, mw);
    let peaks = [
        LorentzianPeak::new(transitions.nu1_hz, response.fwhm_hz, response.contrast)?,
        LorentzianPeak::new(transitions.nu2_hz, response.fwhm_hz, response.contrast)?,
    ];
    let rate = photon_rate(cfg.laser_mw, sat)?;

    let freq_hz = cfg.grid();
    let mut signal: Vec<f64> = freq_hz
        .iter()
        .map(|&f| peaks.iter().map(|p| p.value(f)).sum())
        .collect();

    let noise_sigma = cfg.seed.map(|seed| {
        let sigma = shot_noise_sigma(rate, cfg.dwell_s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in signal.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += sigma * z;
        }
        sigma
    });

    let inside = |f: f64| f >= cfg.f_start_hz && f <= cfg.f_stop_hz;
    let mut warnings = Vec::new();
    if !inside(transitions.nu1_hz) {
        warnings.push(CoverageWarning::Nu1OutsideSweep);
    }
    if !inside(transitions.nu2_hz) {
        warnings.push(CoverageWarning::Nu2OutsideSweep);
    }

    Ok(OdmrSpectrum {
        freq_hz,
        signal,
        meta: Some(SynthesisMeta {
            acquisition: *cfg,
            field: *field,
            consts: *consts,
            transitions,
            peaks,
            photon_rate_cps: rate,
            noise_sigma,
            warnings,
        }),
    })
}
