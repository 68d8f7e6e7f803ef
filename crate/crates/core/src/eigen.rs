//! Cyclic Jacobi diagonalization for small dense Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot element, then applies
//! the classical real Jacobi rotation, so the combined transform is unitary
//! and zeroes the pivot exactly. Sweeps run in fixed row-major pivot order and
//! use no randomization, so results are bit-for-bit reproducible.

use num_complex::Complex64;

const MAX_SWEEPS: usize = 64;

/// Row-major `n x n` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHermitian {
    n: usize,
    data: Vec<Complex64>,
}

impl DenseHermitian {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn max_off_diagonal(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    m = m.max(self.get(i, j).norm());
                }
            }
        }
        m
    }
}

/// Unsorted eigenpairs: `vectors[k]` is the eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct RawEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<Complex64>>,
    pub sweeps: usize,
}

/// Diagonalizes `a` until the largest off-diagonal magnitude is at most
/// `rel_tol * max|a|`. The caller is responsible for Hermiticity.
pub fn jacobi_hermitian(a: &DenseHermitian, rel_tol: f64) -> RawEigen {
    let n = a.dim();
    let mut h = a.clone();
    // Accumulated unitary, columns are eigenvectors.
    let mut v = DenseHermitian::from_fn(n, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    for i in 0..n {
        let d = h.get(i, i).re;
        h.set(i, i, Complex64::new(d, 0.0));
    }

    let threshold = rel_tol * a.max_abs();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && h.max_off_diagonal() > threshold {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut h, &mut v, p, q);
            }
        }
    }

    let values = (0..n).map(|i| h.get(i, i).re).collect();
    let vectors = (0..n)
        .map(|k| (0..n).map(|i| v.get(i, k)).collect())
        .collect();
    RawEigen {
        values,
        vectors,
        sweeps,
    }
}

fn rotate(h: &mut DenseHermitian, v: &mut DenseHermitian, p: usize, q: usize) {
    let n = h.dim();
    let apq = h.get(p, q);
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    // Phase that makes the pivot real and positive.
    let phase = apq / mag;
    let app = h.get(p, p).re;
    let aqq = h.get(q, q).re;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // W restricted to the (p, q) plane.
    let wpp = Complex64::new(c, 0.0);
    let wpq = Complex64::new(s, 0.0);
    let wqp = -phase.conj() * s;
    let wqq = phase.conj() * c;

    // H <- H W
    for k in 0..n {
        let hkp = h.get(k, p);
        let hkq = h.get(k, q);
        h.set(k, p, hkp * wpp + hkq * wqp);
        h.set(k, q, hkp * wpq + hkq * wqq);
    }
    // H <- W^dagger H
    for k in 0..n {
        let hpk = h.get(p, k);
        let hqk = h.get(q, k);
        h.set(p, k, wpp.conj() * hpk + wqp.conj() * hqk);
        h.set(q, k, wpq.conj() * hpk + wqq.conj() * hqk);
    }
    let zero = Complex64::new(0.0, 0.0);
    h.set(p, q, zero);
    h.set(q, p, zero);
    let dp = h.get(p, p).re;
    let dq = h.get(q, q).re;
    h.set(p, p, Complex64::new(dp, 0.0));
    h.set(q, q, Complex64::new(dq, 0.0));

    // V <- V W
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, vkp * wpp + vkq * wqp);
        v.set(k, q, vkp * wpq + vkq * wqq);
    }
}
