//! Ground-state spin Hamiltonian of the V2 silicon vacancy (S = 3/2) and its
//! ODMR transition frequencies.
//!
//! All quantities are SI: frequencies in Hz, fields in tesla, angles in
//! radians. Matrices use the basis m = +3/2, +1/2, -1/2, -3/2.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::eigen::{jacobi_hermitian, DenseHermitian};
use crate::error::{invalid, Error, Result};

/// Bohr magneton over Planck's constant, Hz per tesla (CODATA).
pub const MU_B_OVER_H_HZ_PER_T: f64 = 1.399_624_49e10;

pub const DEFAULT_D_HZ: f64 = 35.0e6;
pub const DEFAULT_G_FACTOR: f64 = 2.0023;

pub const SPIN: f64 = 1.5;
pub const DIM: usize = 4;

/// Magnetic quantum numbers in basis order.
pub const M_VALUES: [f64; DIM] = [1.5, 0.5, -0.5, -1.5];

/// Relative Hermiticity tolerance accepted by [`diagonalize`].
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Jacobi stops once every off-diagonal element is below this fraction of max|H|.
pub const JACOBI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    d_hz: f64,
    g_factor: f64,
    gyro_hz_per_t: f64,
}

impl PhysicalConstants {
    pub fn new(d_hz: f64, g_factor: f64) -> Result<Self> {
        if !(d_hz.is_finite() && d_hz > 0.0) {
            return Err(invalid("d_hz", format!("must be positive, got {d_hz}")));
        }
        if !(g_factor.is_finite() && g_factor > 0.0) {
            return Err(invalid(
                "g_factor",
                format!("must be positive, got {g_factor}"),
            ));
        }
        Ok(Self {
            d_hz,
            g_factor,
            gyro_hz_per_t: g_factor * MU_B_OVER_H_HZ_PER_T,
        })
    }

    pub fn d_hz(&self) -> f64 {
        self.d_hz
    }

    pub fn g_factor(&self) -> f64 {
        self.g_factor
    }

    /// g * mu_B / h in Hz/T.
    pub fn gyro_hz_per_t(&self) -> f64 {
        self.gyro_hz_per_t
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::new(DEFAULT_D_HZ, DEFAULT_G_FACTOR).expect("defaults are valid")
    }
}

/// Static field with magnitude `b0_t` and polar angle from the c-axis.
///
/// The angle is folded into [0, pi/2]; the spectrum is unchanged under
/// theta -> -theta and theta -> pi - theta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldVector {
    b0_t: f64,
    theta_rad: f64,
}

impl FieldVector {
    pub fn new(b0_t: f64, theta_rad: f64) -> Result<Self> {
        if !(b0_t.is_finite() && b0_t >= 0.0) {
            return Err(invalid(
                "b0_t",
                format!("must be finite and >= 0, got {b0_t}"),
            ));
        }
        if !theta_rad.is_finite() {
            return Err(invalid("theta_rad", "must be finite"));
        }
        Ok(Self {
            b0_t,
            theta_rad: canonical_theta(theta_rad),
        })
    }

    pub fn from_gauss_deg(b0_gauss: f64, theta_deg: f64) -> Result<Self> {
        Self::new(b0_gauss * crate::units::GAUSS, theta_deg.to_radians())
    }

    pub fn b0_t(&self) -> f64 {
        self.b0_t
    }

    pub fn theta_rad(&self) -> f64 {
        self.theta_rad
    }

    /// Unit vector of the field in the (x, y, z) crystal frame.
    pub fn direction(&self) -> [f64; 3] {
        [self.theta_rad.sin(), 0.0, self.theta_rad.cos()]
    }
}

fn canonical_theta(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let t = theta.rem_euclid(pi);
    let t = if t > FRAC_PI_2 { pi - t } else { t };
    t.clamp(0.0, FRAC_PI_2)
}

/// 4x4 complex matrix in frequency units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinMatrix(pub [[Complex64; DIM]; DIM]);

impl SpinMatrix {
    pub fn zeros() -> Self {
        SpinMatrix([[Complex64::new(0.0, 0.0); DIM]; DIM])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..DIM {
            m.0[i][i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[i][j]
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> Complex64 {
        (0..DIM).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|z| *z *= k);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for i in 0..DIM {
            for j in 0..DIM {
                out.0[i][j] += other.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                out.0[i][j] = (0..DIM).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                out.0[i][j] = self.0[j][i].conj();
            }
        }
        out
    }

    /// Largest |H[i][j] - conj(H[j][i])| and where it occurs.
    pub fn hermiticity_defect(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..DIM {
            for j in i..DIM {
                let d = (self.0[i][j] - self.0[j][i].conj()).norm();
                if d > worst.0 {
                    worst = (d, i, j);
                }
            }
        }
        worst
    }

    /// <a| M |b>
    pub fn sandwich(&self, a: &[Complex64; DIM], b: &[Complex64; DIM]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (ai, mi) in a.iter().zip(&self.0) {
            let row: Complex64 = mi.iter().zip(b).map(|(m, bj)| m * bj).sum();
            acc += ai.conj() * row;
        }
        acc
    }
}

/// Dimensionless spin-3/2 operators.
#[derive(Debug, Clone, Copy)]
pub struct SpinOperators {
    pub sx: SpinMatrix,
    pub sy: SpinMatrix,
    pub sz: SpinMatrix,
}

impl SpinOperators {
    /// S . axis for a (not necessarily unit) 3-vector.
    pub fn along(&self, axis: [f64; 3]) -> SpinMatrix {
        self.sx
            .scale(axis[0])
            .add(&self.sy.scale(axis[1]))
            .add(&self.sz.scale(axis[2]))
    }
}

/// Spin matrices from the ladder operators,
/// <m+1|S+|m> = sqrt(S(S+1) - m(m+1)).
pub fn spin_operators() -> SpinOperators {
    let mut s_plus = SpinMatrix::zeros();
    // Row i has m = M_VALUES[i]; S+ raises m, i.e. moves from index i+1 to i.
    for i in 0..DIM - 1 {
        let m = M_VALUES[i + 1];
        s_plus.0[i][i + 1] = Complex64::new((SPIN * (SPIN + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let s_minus = s_plus.adjoint();
    let sx = s_plus.add(&s_minus).scale(0.5);
    let mut sy = s_plus.sub(&s_minus);
    // (S+ - S-) / (2i)
    sy.0.iter_mut()
        .flatten()
        .for_each(|z| *z *= Complex64::new(0.0, -0.5));
    let mut sz = SpinMatrix::zeros();
    for (i, m) in M_VALUES.iter().enumerate() {
        sz.0[i][i] = Complex64::new(*m, 0.0);
    }
    SpinOperators { sx, sy, sz }
}

/// H = D [Sz^2 - S(S+1)/3] + g mu_B B0 [Sz cos(theta) + Sx sin(theta)], in Hz.
pub fn build_hamiltonian(field: &FieldVector, consts: &PhysicalConstants) -> SpinMatrix {
    let ops = spin_operators();
    let offset = SpinMatrix::identity().scale(SPIN * (SPIN + 1.0) / 3.0);
    let zfs = ops.sz.matmul(&ops.sz).sub(&offset).scale(consts.d_hz());
    let zeeman = ops
        .along(field.direction())
        .scale(consts.gyro_hz_per_t() * field.b0_t());
    zfs.add(&zeeman)
}

/// Ascending eigenvalues with orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub energies_hz: [f64; DIM],
    pub vectors: [[Complex64; DIM]; DIM],
}

impl EigenSystem {
    /// max |<v_i|v_j> - delta_ij|
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..DIM {
            for j in 0..DIM {
                let dot: Complex64 = (0..DIM)
                    .map(|k| self.vectors[i][k].conj() * self.vectors[j][k])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).norm());
            }
        }
        worst
    }

    /// V diag(E) V^dagger
    pub fn reconstruct(&self) -> SpinMatrix {
        let mut out = SpinMatrix::zeros();
        for (e, v) in self.energies_hz.iter().zip(self.vectors.iter()) {
            for i in 0..DIM {
                for j in 0..DIM {
                    out.0[i][j] += v[i] * v[j].conj() * *e;
                }
            }
        }
        out
    }
}

pub fn diagonalize(h: &SpinMatrix) -> Result<EigenSystem> {
    let scale = h.max_abs();
    let (defect, row, col) = h.hermiticity_defect();
    let tolerance = HERMITIAN_TOL * scale;
    if defect > tolerance || !defect.is_finite() {
        return Err(Error::NonHermitian {
            row,
            col,
            deviation: defect,
            tolerance,
        });
    }
    let dense = DenseHermitian::from_fn(DIM, |i, j| h.0[i][j]);
    let raw = jacobi_hermitian(&dense, JACOBI_TOL);

    let mut order: Vec<usize> = (0..DIM).collect();
    // Stable sort: exact ties keep Jacobi output order.
    order.sort_by(|&a, &b| raw.values[a].total_cmp(&raw.values[b]));

    let mut energies_hz = [0.0; DIM];
    let mut vectors = [[Complex64::new(0.0, 0.0); DIM]; DIM];
    for (slot, &k) in order.iter().enumerate() {
        energies_hz[slot] = raw.values[k];
        let mut v = [Complex64::new(0.0, 0.0); DIM];
        v.copy_from_slice(&raw.vectors[k]);
        fix_phase(&mut v);
        vectors[slot] = v;
    }
    Ok(EigenSystem {
        energies_hz,
        vectors,
    })
}

/// Rotates the global phase so the first non-negligible component is real
/// and positive.
fn fix_phase(v: &mut [Complex64; DIM]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if let Some(lead) = v.iter().find(|z| z.norm() > 1e-10 * norm).copied() {
        let ph = lead.conj() / lead.norm();
        v.iter_mut().for_each(|z| *z *= ph);
    }
}

/// The two ODMR resonances and their drive strengths |<i|S.drive|j>|^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionPair {
    pub nu1_hz: f64,
    pub nu2_hz: f64,
    pub strength1: f64,
    pub strength2: f64,
}

/// Lab x, transverse to the c-axis.
pub const DEFAULT_DRIVE_AXIS: [f64; 3] = [1.0, 0.0, 0.0];

/// Energy clusters closer than this fraction of the spectral scale are
/// treated as degenerate when labeling states.
const DEGENERACY_TOL: f64 = 1e-9;

/// Identifies the two dipole-allowed resonances.
///
/// Eigenstates are labeled m_n = +3/2, +1/2, -1/2, -3/2 by descending
/// projection <S.n> on the field direction n; nu2 links m_n = +3/2 and +1/2,
/// nu1 links -1/2 and -3/2. Inside degenerate clusters the states are first
/// re-diagonalized against S.n so the labels are those of the B0 -> 0+
/// limit. On the c-axis this gives nu = |gamma B0 -/+ 2D| exactly; above the
/// level anticrossing it coincides with the two outer gaps of the sorted
/// spectrum.
pub fn transition_frequencies(
    eig: &EigenSystem,
    field: &FieldVector,
    drive_axis: [f64; 3],
) -> TransitionPair {
    let ops = spin_operators();
    let s_n = ops.along(field.direction());
    let vectors = resolve_degenerate_clusters(eig, &s_n);

    let proj: Vec<f64> = vectors.iter().map(|v| s_n.sandwich(v, v).re).collect();
    let mut labels: Vec<usize> = (0..DIM).collect();
    labels.sort_by(|&a, &b| proj[b].total_cmp(&proj[a]));
    let [top, upper, lower, bottom] = [labels[0], labels[1], labels[2], labels[3]];

    let e = &eig.energies_hz;
    let drive = ops.along(drive_axis);
    let strength = |i: usize, j: usize| drive.sandwich(&vectors[i], &vectors[j]).norm_sqr();
    TransitionPair {
        nu1_hz: (e[lower] - e[bottom]).abs(),
        nu2_hz: (e[top] - e[upper]).abs(),
        strength1: strength(lower, bottom),
        strength2: strength(top, upper),
    }
}

fn resolve_degenerate_clusters(eig: &EigenSystem, s_n: &SpinMatrix) -> [[Complex64; DIM]; DIM] {
    let mut vectors = eig.vectors;
    let e = &eig.energies_hz;
    let scale = e
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < DIM {
        let mut end = start + 1;
        while end < DIM && (e[end] - e[start]).abs() <= DEGENERACY_TOL * scale {
            end += 1;
        }
        let k = end - start;
        if k > 1 {
            let block = DenseHermitian::from_fn(k, |a, b| {
                s_n.sandwich(&eig.vectors[start + a], &eig.vectors[start + b])
            });
            let raw = jacobi_hermitian(&block, JACOBI_TOL);
            for (slot, coeffs) in raw.vectors.iter().enumerate() {
                let mut v = [Complex64::new(0.0, 0.0); DIM];
                for (a, c) in coeffs.iter().enumerate() {
                    for (vi, ei) in v.iter_mut().zip(&eig.vectors[start + a]) {
                        *vi += ei * c;
                    }
                }
                vectors[start + slot] = v;
            }
        }
        start = end;
    }
    vectors
}

/// Closed-form pair on the c-axis: nu1 = |gamma B0 - 2D|, nu2 = gamma B0 + 2D.
pub fn closed_form_axial(b0_t: f64, consts: &PhysicalConstants) -> TransitionPair {
    let zeeman = consts.gyro_hz_per_t() * b0_t;
    let two_d = 2.0 * consts.d_hz();
    // |<+3/2|Sx|+1/2>|^2 = |<-1/2|Sx|-3/2>|^2 = 3/4 for a transverse drive.
    TransitionPair {
        nu1_hz: (zeeman - two_d).abs(),
        nu2_hz: zeeman + two_d,
        strength1: 0.75,
        strength2: 0.75,
    }
}

/// Forward model: (B0, theta) -> resonance pair with the default drive axis.
pub fn resonances(field: &FieldVector, consts: &PhysicalConstants) -> TransitionPair {
    let h = build_hamiltonian(field, consts);
    let eig = diagonalize(&h).expect("model Hamiltonian is Hermitian by construction");
    transition_frequencies(&eig, field, DEFAULT_DRIVE_AXIS)
}
