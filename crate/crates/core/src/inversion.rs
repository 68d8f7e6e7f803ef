//! Recovers the field (B0, theta) from a measured resonance pair.
//!
//! The general solver seeds a damped Gauss-Newton refinement from a coarse
//! (B0, theta) table and reports how trustworthy the answer is. Close to the
//! magic angle, and anywhere below the anticrossing, the forward map folds
//! over and a pair of frequencies no longer pins down a unique field.

use std::f64::consts::FRAC_PI_2;

use crate::error::{invalid, Error, Result};
use crate::spin::{closed_form_axial, resonances, FieldVector, PhysicalConstants};
use crate::units::{GAUSS, MHZ};

/// Tunables for [`Inverter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    pub b_points: usize,
    pub theta_points: usize,
    /// Standard deviation of the measured frequencies, Hz. Zero for exact data.
    pub sigma_hz: f64,
    /// Two lines closer than this cannot be told apart in a spectrum, so their
    /// assignment to nu1 and nu2 is ambiguous. Defaults to a typical linewidth.
    pub line_resolution_hz: f64,
    pub condition_threshold: f64,
    /// Best residual above which the pair is declared unreachable.
    pub max_residual_hz: f64,
    pub max_iterations: usize,
    /// How many grid basins beyond the best one are refined to look for
    /// competing solutions.
    pub extra_basins: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            b_points: 201,
            theta_points: 91,
            sigma_hz: 0.0,
            line_resolution_hz: 13.0 * MHZ,
            condition_threshold: 1e4,
            max_residual_hz: 1.0 * MHZ,
            max_iterations: 100,
            extra_basins: 6,
        }
    }
}

impl InversionOptions {
    fn validate(&self) -> Result<()> {
        if self.b_points < 2 || self.theta_points < 2 {
            return Err(invalid("grid", "needs at least two points per axis"));
        }
        for (name, v) in [
            ("sigma_hz", self.sigma_hz),
            ("line_resolution_hz", self.line_resolution_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and non-negative"));
            }
        }
        if !(self.condition_threshold > 0.0 && self.max_residual_hz > 0.0) {
            return Err(invalid("thresholds", "must be positive"));
        }
        Ok(())
    }
}

/// A field consistent with the data, distinct from the reported one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alternative {
    pub b0_t: f64,
    pub theta_rad: f64,
    pub residual_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub b0_t: f64,
    pub theta_rad: f64,
    /// RMS of the two frequency misfits.
    pub residual_hz: f64,
    pub degenerate: bool,
    /// Condition number of d(nu1, nu2)/d(B0 in gauss, cos^2 theta).
    pub condition: f64,
    pub reasons: Vec<DegeneracyReason>,
    pub alternatives: Vec<Alternative>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneracyReason {
    /// Zeeman energy below what the data can resolve.
    ZeroField,
    /// nu1 and nu2 overlap, so which line is which is unknown.
    LinesOverlap,
    IllConditioned,
    /// Another, clearly different field fits equally well.
    MultipleSolutions,
}

impl DegeneracyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DegeneracyReason::ZeroField => "zero_field",
            DegeneracyReason::LinesOverlap => "lines_overlap",
            DegeneracyReason::IllConditioned => "ill_conditioned",
            DegeneracyReason::MultipleSolutions => "multiple_solutions",
        }
    }
}

const FD_STEP_B_T: f64 = 1e-7;
const FD_STEP_U: f64 = 1e-6;
/// Residual differences below this are treated as ties.
const TIE_HZ: f64 = 1e-3;
/// Solutions closer than this are the same solution.
const SAME_B_T: f64 = 0.1 * GAUSS;
const SAME_THETA: f64 = 0.5 * std::f64::consts::PI / 180.0;

struct GridNode {
    b0_t: f64,
    theta: f64,
    nu: [f64; 2],
}

/// Reusable solver with a precomputed seed table.
pub struct Inverter {
    consts: PhysicalConstants,
    b_max_t: f64,
    opts: InversionOptions,
    grid: Vec<GridNode>,
}

impl Inverter {
    pub fn new(consts: PhysicalConstants, b_max_t: f64, opts: InversionOptions) -> Result<Self> {
        if !(b_max_t.is_finite() && b_max_t > 0.0) {
            return Err(invalid("b_max_t", "must be finite and positive"));
        }
        opts.validate()?;
        let nb = opts.b_points;
        let nt = opts.theta_points;
        let mut grid = Vec::with_capacity(nb * nt);
        for i in 0..nb {
            let b0_t = b_max_t * i as f64 / (nb - 1) as f64;
            for j in 0..nt {
                let theta = FRAC_PI_2 * j as f64 / (nt - 1) as f64;
                grid.push(GridNode {
                    b0_t,
                    theta,
                    nu: forward(b0_t, theta, &consts),
                });
            }
        }
        Ok(Self {
            consts,
            b_max_t,
            opts,
            grid,
        })
    }

    pub fn consts(&self) -> &PhysicalConstants {
        &self.consts
    }

    pub fn options(&self) -> &InversionOptions {
        &self.opts
    }

    /// Same solver with a different noise level; the seed table is reused.
    pub fn with_sigma(mut self, sigma_hz: f64) -> Result<Self> {
        self.opts.sigma_hz = sigma_hz;
        self.opts.validate()?;
        Ok(self)
    }

    pub fn invert(&self, nu1_hz: f64, nu2_hz: f64) -> Result<InversionResult> {
        for (name, v) in [("nu1_hz", nu1_hz), ("nu2_hz", nu2_hz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be finite and positive"));
            }
        }
        let target = [nu1_hz, nu2_hz];
        let seeds = self.seeds(target);

        let mut found: Vec<Alternative> = Vec::with_capacity(seeds.len());
        for &k in &seeds {
            let node = &self.grid[k];
            let (b, t) = self.refine(target, node.b0_t, node.theta);
            let residual_hz = rms_misfit(forward(b, t, &self.consts), target);
            found.push(Alternative {
                b0_t: b,
                theta_rad: t,
                residual_hz,
            });
        }
        // Lowest residual wins; near-ties go to smaller B0, then smaller theta.
        let floor = found
            .iter()
            .map(|a| a.residual_hz)
            .fold(f64::INFINITY, f64::min);
        let tier = |a: &Alternative| a.residual_hz > floor + TIE_HZ;
        found.sort_by(|a, b| {
            tier(a)
                .cmp(&tier(b))
                .then_with(|| {
                    if tier(a) {
                        a.residual_hz.total_cmp(&b.residual_hz)
                    } else {
                        std::cmp::Ordering::Equal
                    }
                })
                .then(a.b0_t.total_cmp(&b.b0_t))
                .then(a.theta_rad.total_cmp(&b.theta_rad))
        });
        let best = found[0];
        if best.residual_hz > self.opts.max_residual_hz {
            return Err(Error::NoSolution {
                best_residual_hz: best.residual_hz,
            });
        }

        let zeeman_floor = (3.0 * self.opts.sigma_hz).max(1e3);
        // At zero field theta is meaningless; report the canonical axis.
        let zero_field = self.consts.gyro_hz_per_t() * best.b0_t <= zeeman_floor;

        // A competitor must fit as well as the data allow.
        let accept = best.residual_hz.max(1e3).max(3.0 * self.opts.sigma_hz);
        let mut alternatives: Vec<Alternative> = Vec::new();
        if !zero_field {
            for cand in &found[1..] {
                if cand.residual_hz > accept {
                    continue;
                }
                let distinct = |a: &Alternative| {
                    (a.b0_t - cand.b0_t).abs() > SAME_B_T
                        || (a.theta_rad - cand.theta_rad).abs() > SAME_THETA
                };
                if distinct(&best) && alternatives.iter().all(distinct) {
                    alternatives.push(*cand);
                }
            }
        }

        let condition = self.condition(best.b0_t, best.theta_rad);
        let mut reasons = Vec::new();
        if zero_field {
            reasons.push(DegeneracyReason::ZeroField);
        }
        let overlap = self.opts.line_resolution_hz.max(3.0 * self.opts.sigma_hz);
        if (nu1_hz - nu2_hz).abs() <= overlap {
            reasons.push(DegeneracyReason::LinesOverlap);
        }
        if condition.is_nan() || condition > self.opts.condition_threshold {
            reasons.push(DegeneracyReason::IllConditioned);
        }
        if !alternatives.is_empty() {
            reasons.push(DegeneracyReason::MultipleSolutions);
        }

        Ok(InversionResult {
            b0_t: best.b0_t,
            theta_rad: if zero_field { 0.0 } else { best.theta_rad },
            residual_hz: best.residual_hz,
            degenerate: !reasons.is_empty(),
            condition,
            reasons,
            alternatives,
        })
    }

    /// Grid indices to refine: the best node first, then the lowest local
    /// minima of the misfit surface.
    fn seeds(&self, target: [f64; 2]) -> Vec<usize> {
        let nb = self.opts.b_points;
        let nt = self.opts.theta_points;
        let cost: Vec<f64> = self.grid.iter().map(|g| sq_misfit(g.nu, target)).collect();
        let order = |a: &usize, b: &usize| cost[*a].total_cmp(&cost[*b]).then(a.cmp(b));

        let mut minima: Vec<usize> = Vec::new();
        for i in 0..nb {
            for j in 0..nt {
                let k = i * nt + j;
                let mut is_min = true;
                'nbr: for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if ii < 0 || jj < 0 || ii >= nb as i64 || jj >= nt as i64 {
                            continue;
                        }
                        let kk = ii as usize * nt + jj as usize;
                        if order(&kk, &k).is_lt() {
                            is_min = false;
                            break 'nbr;
                        }
                    }
                }
                if is_min {
                    minima.push(k);
                }
            }
        }
        minima.sort_by(order);
        minima.truncate(1 + self.opts.extra_basins);
        minima
    }

    /// Damped Gauss-Newton, projected onto the search box. The angle is
    /// carried as u = cos^2 theta: the resonances are smooth in u, and unlike
    /// theta = 0 or 90 degrees the edges u = 1 or 0 are not stationary points
    /// that would trap the iteration.
    fn refine(&self, target: [f64; 2], b0: f64, theta0: f64) -> (f64, f64) {
        let mut x = [b0, theta0.cos().powi(2)];
        let mut nu = forward_u(x[0], x[1], &self.consts);
        let mut cost = sq_misfit(nu, target);
        let mut lambda = 1e-3;
        for _ in 0..self.opts.max_iterations {
            if cost == 0.0 {
                break;
            }
            let j = self.jacobian(x[0], x[1]);
            let r = [target[0] - nu[0], target[1] - nu[1]];
            // Normal equations, column-scaled.
            let mut a = [[0.0; 2]; 2];
            let mut g = [0.0; 2];
            for p in 0..2 {
                for q in 0..2 {
                    a[p][q] = j[0][p] * j[0][q] + j[1][p] * j[1][q];
                }
                g[p] = j[0][p] * r[0] + j[1][p] * r[1];
            }
            let col = |v: f64| {
                if v > 0.0 && v.is_normal() {
                    v.sqrt()
                } else {
                    1.0
                }
            };
            let d = [col(a[0][0]), col(a[1][1])];
            let mut improved = false;
            let mut tiny = false;
            while lambda < 1e12 {
                let m = [
                    [a[0][0] / (d[0] * d[0]) + lambda, a[0][1] / (d[0] * d[1])],
                    [a[1][0] / (d[1] * d[0]), a[1][1] / (d[1] * d[1]) + lambda],
                ];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                if det.abs() < 1e-300 {
                    lambda *= 10.0;
                    continue;
                }
                let gs = [g[0] / d[0], g[1] / d[1]];
                let s0 = (m[1][1] * gs[0] - m[0][1] * gs[1]) / det / d[0];
                let s1 = (m[0][0] * gs[1] - m[1][0] * gs[0]) / det / d[1];
                let trial = [
                    (x[0] + s0).clamp(0.0, self.b_max_t),
                    (x[1] + s1).clamp(0.0, 1.0),
                ];
                let step = ((trial[0] - x[0]).abs() / self.b_max_t).max((trial[1] - x[1]).abs());
                if step < 1e-14 {
                    tiny = true;
                    break;
                }
                let nu_t = forward_u(trial[0], trial[1], &self.consts);
                let cost_t = sq_misfit(nu_t, target);
                if cost_t < cost {
                    x = trial;
                    nu = nu_t;
                    cost = cost_t;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    break;
                }
                lambda *= 10.0;
            }
            if tiny || !improved {
                break;
            }
        }
        (x[0], u_to_theta(x[1]))
    }

    /// d(nu1, nu2)/d(B0, u) by central differences, one-sided at the box
    /// edges.
    fn jacobian(&self, b: f64, u: f64) -> [[f64; 2]; 2] {
        let c = &self.consts;
        let fb = |v: f64| forward_u(v, u, c);
        let db = if b >= FD_STEP_B_T {
            diff(fb, b, FD_STEP_B_T, true)
        } else {
            diff(fb, b, FD_STEP_B_T, false)
        };
        let fu = |v: f64| forward_u(b, v, c);
        let du = if u < FD_STEP_U {
            diff(fu, u, FD_STEP_U, false)
        } else if u > 1.0 - FD_STEP_U {
            diff(fu, u, -FD_STEP_U, false)
        } else {
            diff(fu, u, FD_STEP_U, true)
        };
        [[db[0], du[0]], [db[1], du[1]]]
    }

    /// Condition number in (B0 in gauss, u = cos^2 theta). These coordinates
    /// keep the map smooth at theta = 0 and 90 degrees, where d/dtheta
    /// vanishes by symmetry without any loss of information.
    pub fn condition(&self, b0_t: f64, theta: f64) -> f64 {
        let mut j = self.jacobian(b0_t, theta.cos().powi(2));
        j[0][0] *= GAUSS;
        j[1][0] *= GAUSS;
        condition_2x2(j)
    }
}

fn u_to_theta(u: f64) -> f64 {
    u.clamp(0.0, 1.0).sqrt().acos()
}

fn forward_u(b0_t: f64, u: f64, consts: &PhysicalConstants) -> [f64; 2] {
    forward(b0_t, u_to_theta(u), consts)
}

fn forward(b0_t: f64, theta: f64, consts: &PhysicalConstants) -> [f64; 2] {
    let field = FieldVector::new(b0_t.abs(), theta).expect("grid and search stay in range");
    let p = resonances(&field, consts);
    [p.nu1_hz, p.nu2_hz]
}

fn diff(f: impl Fn(f64) -> [f64; 2], x: f64, h: f64, central: bool) -> [f64; 2] {
    if central {
        let (p, m) = (f(x + h), f(x - h));
        [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
    } else {
        let (p, z) = (f(x + h), f(x));
        [(p[0] - z[0]) / h, (p[1] - z[1]) / h]
    }
}

fn condition_2x2(j: [[f64; 2]; 2]) -> f64 {
    // Singular values from the eigenvalues of J^T J.
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let d = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let hi = 0.5 * (tr + disc);
    let det = a * d - b * b;
    let lo = if hi > 0.0 { det / hi } else { 0.0 };
    if lo <= 0.0 || hi <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

fn sq_misfit(nu: [f64; 2], target: [f64; 2]) -> f64 {
    (nu[0] - target[0]).powi(2) + (nu[1] - target[1]).powi(2)
}

fn rms_misfit(nu: [f64; 2], target: [f64; 2]) -> f64 {
    (0.5 * sq_misfit(nu, target)).sqrt()
}

/// One-shot inversion with default options. Build an [`Inverter`] instead
/// when inverting many pairs.
pub fn invert_field(
    nu1_hz: f64,
    nu2_hz: f64,
    consts: &PhysicalConstants,
    b_max_t: f64,
) -> Result<InversionResult> {
    Inverter::new(*consts, b_max_t, InversionOptions::default())?.invert(nu1_hz, nu2_hz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialInversion {
    pub b0_t: f64,
    /// |nu2 - nu1 - 4D|; zero for a field along the c-axis above the
    /// anticrossing.
    pub consistency_residual_hz: f64,
}

pub const DEFAULT_AXIAL_TOLERANCE_HZ: f64 = 2.0 * MHZ;

/// Closed-form inversion assuming the field lies on the c-axis and
/// gamma B0 > 2D.
pub fn axial_invert(
    nu1_hz: f64,
    nu2_hz: f64,
    consts: &PhysicalConstants,
) -> Result<AxialInversion> {
    axial_invert_with(nu1_hz, nu2_hz, consts, DEFAULT_AXIAL_TOLERANCE_HZ)
}

pub fn axial_invert_with(
    nu1_hz: f64,
    nu2_hz: f64,
    consts: &PhysicalConstants,
    tolerance_hz: f64,
) -> Result<AxialInversion> {
    if !(nu1_hz.is_finite() && nu1_hz > 0.0 && nu2_hz.is_finite()) {
        return Err(invalid("nu1_hz", "must be finite and positive"));
    }
    if nu2_hz < nu1_hz {
        return Err(invalid("nu2_hz", "must not be below nu1_hz"));
    }
    let b0_t = (nu1_hz + nu2_hz) / (2.0 * consts.gyro_hz_per_t());
    let residual_hz = (nu2_hz - nu1_hz - 4.0 * consts.d_hz()).abs();
    if residual_hz > tolerance_hz {
        return Err(Error::AxialModelViolated {
            residual_hz,
            tolerance_hz,
        });
    }
    Ok(AxialInversion {
        b0_t,
        consistency_residual_hz: residual_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// B0 in tesla for a field sweep, theta in radians for an angle sweep.
    pub x: f64,
    pub nu1_hz: f64,
    pub nu2_hz: f64,
}

pub fn angle_sweep(
    b0_t: f64,
    thetas_rad: &[f64],
    consts: &PhysicalConstants,
) -> Result<Vec<SweepRow>> {
    if !(b0_t.is_finite() && b0_t > 0.0) {
        return Err(invalid("b0_t", "must be finite and positive"));
    }
    thetas_rad
        .iter()
        .map(|&t| {
            let p = resonances(&FieldVector::new(b0_t, t)?, consts);
            Ok(SweepRow {
                x: t,
                nu1_hz: p.nu1_hz,
                nu2_hz: p.nu2_hz,
            })
        })
        .collect()
}

pub fn field_sweep(
    b0s_t: &[f64],
    theta_rad: f64,
    consts: &PhysicalConstants,
) -> Result<Vec<SweepRow>> {
    b0s_t
        .iter()
        .map(|&b| {
            let p = resonances(&FieldVector::new(b, theta_rad)?, consts);
            Ok(SweepRow {
                x: b,
                nu1_hz: p.nu1_hz,
                nu2_hz: p.nu2_hz,
            })
        })
        .collect()
}

/// The c-axis pair from the closed form, for quick tables and checks.
pub fn axial_sweep(b0s_t: &[f64], consts: &PhysicalConstants) -> Vec<SweepRow> {
    b0s_t
        .iter()
        .map(|&b| {
            let p = closed_form_axial(b, consts);
            SweepRow {
                x: b,
                nu1_hz: p.nu1_hz,
                nu2_hz: p.nu2_hz,
            }
        })
        .collect()
}
