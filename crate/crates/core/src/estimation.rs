//! Fits of ODMR spectra and of the other calibration curves.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::lsq::{solve, LeastSquaresProblem, Solution, SolverOptions};
use crate::synth::OdmrSpectrum;
use crate::units::MHZ;

/// Initial linewidth assigned to every automatically seeded peak.
pub const SEED_FWHM_HZ: f64 = 10.0 * MHZ;
/// Moving-average window used before peak seeding.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// Infinite for the center and width of a peak whose amplitude is
    /// consistent with zero.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_cosine: f64,
    /// Cost after the initial guess and after every accepted step.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Panics if `name` is not a parameter of this fit.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
            .value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
            .sigma
    }

    fn from_solution(names: Vec<String>, sol: Solution) -> Self {
        let params = names
            .into_iter()
            .zip(sol.x.iter().zip(&sol.sigmas))
            .map(|(name, (&value, &sigma))| FitParam { name, value, sigma })
            .collect();
        Self {
            params,
            residual_rms: sol.residual_rms,
            iterations: sol.iterations,
            converged: sol.converged,
            gradient_cosine: sol.gradient_cosine,
            cost_history: sol.cost_history,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakGuess {
    pub center_hz: f64,
    pub fwhm_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzianInit {
    pub baseline: f64,
    pub peaks: Vec<PeakGuess>,
}

impl LorentzianInit {
    fn to_vector(&self) -> Vec<f64> {
        let mut x = vec![self.baseline];
        for p in &self.peaks {
            x.extend([p.amplitude, p.center_hz, p.fwhm_hz]);
        }
        x
    }
}

/// baseline + sum_k A_k / (1 + ((f - c_k) / (w_k / 2))^2)
///
/// Parameter vector: `[baseline, A_1, c_1, w_1, A_2, c_2, w_2]`.
#[derive(Debug, Clone)]
pub struct LorentzianProblem<'a> {
    freq_hz: &'a [f64],
    signal: &'a [f64],
    n_peaks: usize,
    signal_scale: f64,
}

impl<'a> LorentzianProblem<'a> {
    pub fn new(freq_hz: &'a [f64], signal: &'a [f64], n_peaks: usize) -> Self {
        let med = median(signal);
        let spread = signal.iter().map(|s| (s - med).abs()).fold(0.0, f64::max);
        Self {
            freq_hz,
            signal,
            n_peaks,
            signal_scale: if spread > 0.0 { spread } else { 1.0 },
        }
    }

    pub fn model(x: &[f64], f: f64) -> f64 {
        let mut v = x[0];
        for k in x[1..].chunks_exact(3) {
            let u = 2.0 * (f - k[1]) / k[2];
            v += k[0] / (1.0 + u * u);
        }
        v
    }

    pub fn n_params(&self) -> usize {
        1 + 3 * self.n_peaks
    }
}

impl LeastSquaresProblem for LorentzianProblem<'_> {
    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["baseline".to_string()];
        for k in 1..=self.n_peaks {
            names.push(format!("amplitude_{k}"));
            names.push(format!("center_{k}_hz"));
            names.push(format!("fwhm_{k}_hz"));
        }
        names
    }

    fn n_residuals(&self) -> usize {
        self.freq_hz.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        for (i, (&f, &y)) in self.freq_hz.iter().zip(self.signal).enumerate() {
            out[i] = Self::model(x, f) - y;
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        for (i, &f) in self.freq_hz.iter().enumerate() {
            out[(i, 0)] = 1.0;
            for (k, p) in x[1..].chunks_exact(3).enumerate() {
                let (a, c, w) = (p[0], p[1], p[2]);
                let u = 2.0 * (f - c) / w;
                let l = 1.0 / (1.0 + u * u);
                let col = 1 + 3 * k;
                out[(i, col)] = l;
                // dL/du = -2u L^2; du/dc = -2/w; du/dw = -u/w
                out[(i, col + 1)] = a * 4.0 * u * l * l / w;
                out[(i, col + 2)] = a * 2.0 * u * u * l * l / w;
            }
        }
    }

    fn scales(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![self.signal_scale];
        for p in x[1..].chunks_exact(3) {
            let w = p[2].abs();
            s.extend([self.signal_scale, w, w]);
        }
        s
    }

    fn gated_params(&self) -> Vec<(usize, Vec<usize>)> {
        (0..self.n_peaks)
            .map(|k| (1 + 3 * k, vec![2 + 3 * k, 3 + 3 * k]))
            .collect()
    }
}

/// I(P) = I_s / (1 + P0 / P). Parameter vector `[i_s_cps, p0_mw]`.
///
/// Residuals are relative, `model / counts - 1`: count-rate errors grow with
/// the rate, and over two or more decades of laser power an absolute misfit
/// would let the brightest points dominate.
#[derive(Debug, Clone)]
pub struct SaturationProblem<'a> {
    powers_mw: &'a [f64],
    counts_cps: &'a [f64],
}

impl<'a> SaturationProblem<'a> {
    pub fn new(powers_mw: &'a [f64], counts_cps: &'a [f64]) -> Self {
        Self {
            powers_mw,
            counts_cps,
        }
    }

    pub fn model(x: &[f64], p: f64) -> f64 {
        x[0] * p / (p + x[1])
    }
}

impl LeastSquaresProblem for SaturationProblem<'_> {
    fn param_names(&self) -> Vec<String> {
        vec!["i_s_cps".into(), "p0_mw".into()]
    }

    fn n_residuals(&self) -> usize {
        self.powers_mw.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        for (i, (&p, &c)) in self.powers_mw.iter().zip(self.counts_cps).enumerate() {
            out[i] = Self::model(x, p) / c - 1.0;
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        for (i, (&p, &c)) in self.powers_mw.iter().zip(self.counts_cps).enumerate() {
            let denom = p + x[1];
            out[(i, 0)] = p / denom / c;
            out[(i, 1)] = -x[0] * p / (denom * denom) / c;
        }
    }

    fn scales(&self, x: &[f64]) -> Vec<f64> {
        // Both are scale parameters: a saturation power that collapses
        // toward zero is unidentifiable.
        vec![x[0].abs(), x[1].abs()]
    }
}

/// Multi-Lorentzian fit of an ODMR spectrum with a free constant baseline.
///
/// `n_peaks` must be 1 (zero field, magic angle) or 2. Without `init`, peaks
/// are seeded from the most prominent maxima of a 5-point moving average.
pub fn fit_lorentzian_multi(
    spec: &OdmrSpectrum,
    n_peaks: usize,
    init: Option<&LorentzianInit>,
) -> Result<FitResult> {
    fit_lorentzian_with(spec, n_peaks, init, &SolverOptions::default())
}

pub fn fit_lorentzian_with(
    spec: &OdmrSpectrum,
    n_peaks: usize,
    init: Option<&LorentzianInit>,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if !(1..=2).contains(&n_peaks) {
        return Err(invalid("n_peaks", format!("must be 1 or 2, got {n_peaks}")));
    }
    let needed = 4 + 3 * n_peaks;
    if spec.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: spec.len(),
        });
    }
    crate::synth::check_grid(&spec.freq_hz, &spec.signal)?;
    let seeded;
    let init = match init {
        Some(i) => {
            if i.peaks.len() != n_peaks {
                return Err(invalid(
                    "init",
                    format!("{} peak guesses for a {n_peaks}-peak model", i.peaks.len()),
                ));
            }
            i
        }
        None => {
            seeded = seed_peaks(&spec.freq_hz, &spec.signal, n_peaks);
            &seeded
        }
    };
    let problem = LorentzianProblem::new(&spec.freq_hz, &spec.signal, n_peaks);
    let sol = solve(&problem, &init.to_vector(), opts)?;
    let mut result = FitResult::from_solution(problem.param_names(), sol);
    canonicalize_peaks(&mut result, n_peaks);
    Ok(result)
}

/// Widths enter squared, so report |w|, and order peaks by center.
fn canonicalize_peaks(result: &mut FitResult, n_peaks: usize) {
    let mut groups: Vec<[FitParam; 3]> = (0..n_peaks)
        .map(|k| {
            let base = 1 + 3 * k;
            let mut g = [
                result.params[base].clone(),
                result.params[base + 1].clone(),
                result.params[base + 2].clone(),
            ];
            g[2].value = g[2].value.abs();
            g
        })
        .collect();
    groups.sort_by(|a, b| a[1].value.total_cmp(&b[1].value));
    for (k, g) in groups.into_iter().enumerate() {
        let base = 1 + 3 * k;
        for (j, mut p) in g.into_iter().enumerate() {
            p.name = result.params[base + j].name.clone();
            result.params[base + j] = p;
        }
    }
}

/// Seeds `n_peaks` peaks from the most prominent maxima of the smoothed signal.
pub fn seed_peaks(freq_hz: &[f64], signal: &[f64], n_peaks: usize) -> LorentzianInit {
    let smoothed = moving_average(signal, SMOOTHING_WINDOW);
    let baseline = median(signal);
    let mut candidates: Vec<(usize, f64)> = local_maxima(&smoothed)
        .into_iter()
        .map(|i| (i, prominence(&smoothed, i)))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picks: Vec<usize> = candidates.iter().take(n_peaks).map(|c| c.0).collect();

    if picks.len() < n_peaks {
        let top = smoothed
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
            .0;
        while picks.len() < n_peaks {
            picks.push(top);
        }
    }
    picks.sort_unstable();

    let mut peaks: Vec<PeakGuess> = picks
        .iter()
        .map(|&i| PeakGuess {
            center_hz: freq_hz[i],
            fwhm_hz: SEED_FWHM_HZ,
            amplitude: smoothed[i] - baseline,
        })
        .collect();
    // Coincident seeds would make the two peak columns identical.
    if peaks.len() == 2 && peaks[0].center_hz == peaks[1].center_hz {
        peaks[0].center_hz -= 0.5 * SEED_FWHM_HZ;
        peaks[1].center_hz += 0.5 * SEED_FWHM_HZ;
    }
    LorentzianInit { baseline, peaks }
}

/// Centered moving average, truncated at the edges.
pub fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = y.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in y {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Indices of interior local maxima; a flat top reports its first sample.
fn local_maxima(y: &[f64]) -> Vec<usize> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Topographic prominence: height above the higher of the two lowest points
/// reached before climbing past the peak on either side.
fn prominence(y: &[f64], peak: usize) -> f64 {
    let h = y[peak];
    let mut left_min = h;
    for &v in y[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &y[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Fits I(P) = I_s / (1 + P0 / P), starting from I_s = 2 max(counts), P0 = median(powers).
pub fn fit_saturation(powers_mw: &[f64], counts_cps: &[f64]) -> Result<FitResult> {
    if powers_mw.len() != counts_cps.len() {
        return Err(invalid(
            "saturation data",
            format!("{} powers but {} counts", powers_mw.len(), counts_cps.len()),
        ));
    }
    if let Some(p) = powers_mw.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(invalid("power", format!("must be positive, got {p}")));
    }
    if let Some(c) = counts_cps.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(invalid("counts", format!("must be positive, got {c}")));
    }
    let mut distinct = powers_mw.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: distinct.len(),
        });
    }
    let max_count = counts_cps.iter().cloned().fold(f64::MIN, f64::max);
    let x0 = [2.0 * max_count, median(powers_mw)];
    let problem = SaturationProblem::new(powers_mw, counts_cps);
    let sol = solve(&problem, &x0, &SolverOptions::default())?;
    Ok(FitResult::from_solution(problem.param_names(), sol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfsPoint {
    pub laser_mw: f64,
    pub zfs_hz: f64,
    pub sigma_hz: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfsSeries {
    pub points: Vec<ZfsPoint>,
    pub mean_hz: f64,
    /// max |zfs - mean|
    pub flatness_hz: f64,
    pub max_sigma_hz: f64,
}

/// Single-Lorentzian center of each zero-field spectrum, and how much the
/// centers wander across laser powers.
pub fn fit_zfs_series(spectra: &[OdmrSpectrum], laser_mw: &[f64]) -> Result<ZfsSeries> {
    if spectra.is_empty() {
        return Err(Error::EmptyInput);
    }
    if spectra.len() != laser_mw.len() {
        return Err(invalid(
            "zfs series",
            format!(
                "{} spectra but {} laser powers",
                spectra.len(),
                laser_mw.len()
            ),
        ));
    }
    let mut points = Vec::with_capacity(spectra.len());
    for (spec, &p) in spectra.iter().zip(laser_mw) {
        let fit = fit_lorentzian_multi(spec, 1, None)?;
        points.push(ZfsPoint {
            laser_mw: p,
            zfs_hz: fit.value("center_1_hz"),
            sigma_hz: fit.sigma("center_1_hz"),
            converged: fit.converged,
        });
    }
    let mean_hz = points.iter().map(|z| z.zfs_hz).sum::<f64>() / points.len() as f64;
    let flatness_hz = points
        .iter()
        .map(|z| (z.zfs_hz - mean_hz).abs())
        .fold(0.0, f64::max);
    let max_sigma_hz = points.iter().map(|z| z.sigma_hz).fold(0.0, f64::max);
    Ok(ZfsSeries {
        points,
        mean_hz,
        flatness_hz,
        max_sigma_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_edges() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = moving_average(&y, 5);
        assert_eq!(s[0], 2.0); // (1+2+3)/3
        assert_eq!(s[2], 3.0);
        assert_eq!(s[5], 5.0); // (4+5+6)/3
    }

    #[test]
    fn prominence_of_two_bumps() {
        let y = [0.0, 3.0, 1.0, 2.0, 0.5];
        let maxima = local_maxima(&y);
        assert_eq!(maxima, vec![1, 3]);
        assert_eq!(prominence(&y, 1), 2.5);
        assert_eq!(prominence(&y, 3), 1.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rejects_bad_peak_count_and_short_data() {
        let s =
            OdmrSpectrum::from_measured((0..20).map(f64::from).collect(), vec![0.0; 20]).unwrap();
        assert!(fit_lorentzian_multi(&s, 3, None).is_err());
        let s = OdmrSpectrum::from_measured((0..9).map(f64::from).collect(), vec![0.0; 9]).unwrap();
        assert!(matches!(
            fit_lorentzian_multi(&s, 2, None),
            Err(Error::InsufficientData { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn saturation_preconditions() {
        assert!(matches!(
            fit_saturation(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]),
            Err(Error::InsufficientData { needed: 3, got: 2 })
        ));
        assert!(fit_saturation(&[1.0, 2.0], &[1.0]).is_err());
        assert!(fit_saturation(&[0.0, 1.0, 2.0], &[1.0, 1.0, 2.0]).is_err());
        assert!(fit_saturation(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn zfs_series_needs_data() {
        assert_eq!(fit_zfs_series(&[], &[]), Err(Error::EmptyInput));
    }
}
