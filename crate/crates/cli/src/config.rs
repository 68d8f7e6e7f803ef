//! Flat `key = value` run configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use odmr_core::spin::{DEFAULT_D_HZ, DEFAULT_G_FACTOR};
use odmr_core::synth::{MwResponseParams, SaturationParams};
use odmr_core::units::MHZ;
use odmr_core::PhysicalConstants;

pub const CONFIG_ENV: &str = "ODMR_CONFIG";

/// Physical constants and acquisition defaults, in the
/// units people type: MHz, mW, dBm, ms, gauss.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_mhz: f64,
    pub g_factor: f64,
    pub sat_i_s_cps: f64,
    pub sat_p0_mw: f64,
    pub mw_c_max: f64,
    pub mw_fwhm0_mhz: f64,
    pub mw_p_sat_dbm: f64,
    pub laser_mw: f64,
    pub mw_dbm: f64,
    pub fmin_mhz: f64,
    pub fmax_mhz: f64,
    pub points: usize,
    pub dwell_ms: f64,
    pub b_max_gauss: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sat = SaturationParams::default();
        let mw = MwResponseParams::default();
        Self {
            d_mhz: DEFAULT_D_HZ / MHZ,
            g_factor: DEFAULT_G_FACTOR,
            sat_i_s_cps: sat.i_s_cps,
            sat_p0_mw: sat.p0_mw,
            mw_c_max: mw.c_max,
            mw_fwhm0_mhz: mw.fwhm0_hz / MHZ,
            mw_p_sat_dbm: mw.p_sat_dbm,
            laser_mw: 85.0,
            mw_dbm: 18.0,
            fmin_mhz: 50.0,
            fmax_mhz: 280.0,
            points: 461,
            dwell_ms: 10.0,
            b_max_gauss: 200.0,
        }
    }
}

impl RunConfig {
    /// `--config` wins over `ODMR_CONFIG`; with neither, the built-in defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty());
        let path = match (explicit, &from_env) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.into(),
            (None, None) => return Ok(Self::default()),
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {n}: expected `key = value`, got `{line}`");
            };
            let (key, value) = (key.trim(), value.trim());
            let num = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .with_context(|| format!("line {n}: `{key}` needs a number, got `{value}`"))
            };
            match key {
                "d_mhz" => cfg.d_mhz = num()?,
                "g_factor" => cfg.g_factor = num()?,
                "sat_i_s_cps" => cfg.sat_i_s_cps = num()?,
                "sat_p0_mw" => cfg.sat_p0_mw = num()?,
                "mw_c_max" => cfg.mw_c_max = num()?,
                "mw_fwhm0_mhz" => cfg.mw_fwhm0_mhz = num()?,
                "mw_p_sat_dbm" => cfg.mw_p_sat_dbm = num()?,
                "laser_mw" => cfg.laser_mw = num()?,
                "mw_dbm" => cfg.mw_dbm = num()?,
                "fmin_mhz" => cfg.fmin_mhz = num()?,
                "fmax_mhz" => cfg.fmax_mhz = num()?,
                "points" => {
                    cfg.points = value.parse().with_context(|| {
                        format!("line {n}: `points` needs a whole number, got `{value}`")
                    })?
                }
                "dwell_ms" => cfg.dwell_ms = num()?,
                "b_max_gauss" => cfg.b_max_gauss = num()?,
                other => bail!("line {n}: unknown key `{other}`"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.consts()?;
        self.saturation()?;
        self.mw()?;
        for (name, v) in [
            ("laser_mw", self.laser_mw),
            ("dwell_ms", self.dwell_ms),
            ("b_max_gauss", self.b_max_gauss),
        ] {
            if v.is_nan() || v <= 0.0 {
                bail!("`{name}` must be positive, got {v}");
            }
        }
        if self.fmax_mhz <= self.fmin_mhz {
            bail!("`fmax_mhz` must exceed `fmin_mhz`");
        }
        if self.points < 2 {
            bail!("`points` must be at least 2");
        }
        Ok(())
    }

    pub fn consts(&self) -> Result<PhysicalConstants> {
        Ok(PhysicalConstants::new(self.d_mhz * MHZ, self.g_factor)?)
    }

    pub fn saturation(&self) -> Result<SaturationParams> {
        Ok(SaturationParams::new(self.sat_i_s_cps, self.sat_p0_mw)?)
    }

    pub fn mw(&self) -> Result<MwResponseParams> {
        Ok(MwResponseParams::new(
            self.mw_c_max,
            self.mw_fwhm0_mhz * MHZ,
            self.mw_p_sat_dbm,
        )?)
    }
}
