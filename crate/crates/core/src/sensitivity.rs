//! Shot-noise-limited DC magnetic sensitivity of a continuous-wave ODMR
//! measurement, eta = 0.77 * fwhm / (gamma * C * sqrt(R)).

use crate::error::{invalid, Result};
use crate::spin::PhysicalConstants;
use crate::synth::{mw_response, photon_rate, MwResponseParams, SaturationParams};

/// Lorentzian slope factor of the shot-noise formula.
pub const LINESHAPE_FACTOR: f64 = 0.77;

/// Saturation parameter that minimizes (1 + s)^(3/2) / s.
pub const OPTIMAL_MW_SATURATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityBudget {
    contrast: f64,
    fwhm_hz: f64,
    rate_cps: f64,
    eta_t_per_sqrt_hz: f64,
}

impl SensitivityBudget {
    /// The only constructor, so `eta` always matches its inputs.
    pub fn new(
        contrast: f64,
        fwhm_hz: f64,
        rate_cps: f64,
        consts: &PhysicalConstants,
    ) -> Result<Self> {
        let eta = estimate_sensitivity(contrast, fwhm_hz, rate_cps, consts)?;
        Ok(Self {
            contrast,
            fwhm_hz,
            rate_cps,
            eta_t_per_sqrt_hz: eta,
        })
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn fwhm_hz(&self) -> f64 {
        self.fwhm_hz
    }

    pub fn rate_cps(&self) -> f64 {
        self.rate_cps
    }

    pub fn eta_t_per_sqrt_hz(&self) -> f64 {
        self.eta_t_per_sqrt_hz
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

/// Sensitivity in T/sqrt(Hz).
pub fn estimate_sensitivity(
    contrast: f64,
    fwhm_hz: f64,
    rate_cps: f64,
    consts: &PhysicalConstants,
) -> Result<f64> {
    positive("contrast", contrast)?;
    positive("fwhm_hz", fwhm_hz)?;
    positive("rate_cps", rate_cps)?;
    Ok(LINESHAPE_FACTOR * fwhm_hz / (consts.gyro_hz_per_t() * contrast * rate_cps.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserSweepRow {
    pub laser_mw: f64,
    pub rate_cps: f64,
    pub eta_t_per_sqrt_hz: f64,
}

/// Sensitivity versus laser power at fixed line shape.
pub fn laser_sweep_sensitivity(
    powers_mw: &[f64],
    contrast: f64,
    fwhm_hz: f64,
    sat: &SaturationParams,
    consts: &PhysicalConstants,
) -> Result<Vec<LaserSweepRow>> {
    powers_mw
        .iter()
        .map(|&p| {
            let rate = photon_rate(p, sat)?;
            Ok(LaserSweepRow {
                laser_mw: p,
                rate_cps: rate,
                eta_t_per_sqrt_hz: estimate_sensitivity(contrast, fwhm_hz, rate, consts)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwSweepRow {
    pub mw_dbm: f64,
    pub contrast: f64,
    pub fwhm_hz: f64,
    pub eta_t_per_sqrt_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwSweep {
    pub rows: Vec<MwSweepRow>,
    /// Index of the smallest eta; the first one wins a tie.
    pub argmin: usize,
}

impl MwSweep {
    pub fn optimum(&self) -> &MwSweepRow {
        &self.rows[self.argmin]
    }
}

/// Sensitivity versus microwave power at a fixed photon rate.
pub fn mw_sweep_sensitivity(
    mw_dbm: &[f64],
    params: &MwResponseParams,
    rate_cps: f64,
    consts: &PhysicalConstants,
) -> Result<MwSweep> {
    positive("rate_cps", rate_cps)?;
    if mw_dbm.is_empty() {
        return Err(crate::Error::EmptyInput);
    }
    let mut rows = Vec::with_capacity(mw_dbm.len());
    for &p in mw_dbm {
        if !p.is_finite() {
            return Err(invalid("mw_dbm", "must be finite"));
        }
        let resp = mw_response(p, params);
        rows.push(MwSweepRow {
            mw_dbm: p,
            contrast: resp.contrast,
            fwhm_hz: resp.fwhm_hz,
            eta_t_per_sqrt_hz: estimate_sensitivity(resp.contrast, resp.fwhm_hz, rate_cps, consts)?,
        });
    }
    let argmin = rows.iter().enumerate().fold(0, |best, (i, r)| {
        if r.eta_t_per_sqrt_hz < rows[best].eta_t_per_sqrt_hz {
            i
        } else {
            best
        }
    });
    Ok(MwSweep { rows, argmin })
}

/// Microwave power of the analytic optimum, s = 2.
pub fn mw_optimum_dbm(params: &MwResponseParams) -> f64 {
    params.p_sat_dbm + 10.0 * OPTIMAL_MW_SATURATION.log10()
}

/// Rescales a sensitivity measured at `laser_mw` to the saturated photon
/// rate, keeping contrast and linewidth.
pub fn project_saturation(
    eta_t_per_sqrt_hz: f64,
    laser_mw: f64,
    sat: &SaturationParams,
) -> Result<f64> {
    positive("eta_t_per_sqrt_hz", eta_t_per_sqrt_hz)?;
    let rate = photon_rate(laser_mw, sat)?;
    Ok(eta_t_per_sqrt_hz * (rate / sat.i_s_cps).sqrt())
}
