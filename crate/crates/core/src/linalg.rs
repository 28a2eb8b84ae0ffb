//! Small dense linear-algebra helpers: matrix exponential, symmetrisation,
//! PSD checks and jittered Cholesky.

use nalgebra::{DMatrix, SMatrix};

use crate::error::{Error, Result};

// Higham (2005) backward-error bounds for the [m/m] Padé approximants.
const PADE_THETA: [(usize, f64); 5] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
    (13, 5.371_920_351_148_152),
];

fn pade_coefficients(m: usize) -> Vec<f64> {
    // c_j = (2m - j)! m! / ((2m)! j! (m - j)!), built incrementally
    let mut c = vec![1.0; m + 1];
    for j in 1..=m {
        c[j] = c[j - 1] * ((m - j + 1) as f64) / (((2 * m - j + 1) * j) as f64);
    }
    c
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Padé approximant whose
/// degree is chosen from the 1-norm.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::Numerical(format!(
            "expm input has non-finite entries (1-norm = {norm})"
        )));
    }

    let (degree, squarings) = match PADE_THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some(&(m, _)) => (m, 0u32),
        None => {
            let theta13 = PADE_THETA[4].1;
            let s = (norm / theta13).log2().ceil().max(0.0) as u32;
            (13, s)
        }
    };
    let scaled = if squarings > 0 {
        a / 2f64.powi(squarings as i32)
    } else {
        a.clone()
    };

    let c = pade_coefficients(degree);
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    // even powers A^0, A^2, ..., A^(degree-1)
    let mut even = vec![ident.clone(), a2.clone()];
    while even.len() * 2 <= degree {
        let next = even.last().unwrap() * &a2;
        even.push(next);
    }
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for (k, pow) in even.iter().enumerate() {
        let j_even = 2 * k;
        if j_even <= degree {
            v += pow * c[j_even];
        }
        if j_even + 1 <= degree {
            u_inner += pow * c[j_even + 1];
        }
    }
    let u = &scaled * u_inner;

    let p = &v + &u;
    let q = &v - &u;
    let lu = q.lu();
    let mut r = lu.solve(&p).ok_or_else(|| {
        Error::Numerical(format!(
            "expm: singular Padé denominator (degree {degree}, 1-norm {norm:.3e}, {squarings} squarings)"
        ))
    })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "expm did not converge: non-finite result (degree {degree}, 1-norm {norm:.3e}, {squarings} squarings)"
        )));
    }
    Ok(r)
}

/// LU factorisation with partial pivoting of a fixed-size square matrix.
struct FixedLu<const N: usize> {
    lu: SMatrix<f64, N, N>,
    perm: [usize; N],
}

impl<const N: usize> FixedLu<N> {
    fn new(mut a: SMatrix<f64, N, N>) -> Option<Self> {
        let mut perm = [0usize; N];
        let scale = a.abs().max();
        for k in 0..N {
            let (pivot, value) = (k..N)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(value > f64::EPSILON * scale * 1e-6) {
                return None;
            }
            perm[k] = pivot;
            a.swap_rows(k, pivot);
            let inv = 1.0 / a[(k, k)];
            for i in k + 1..N {
                let f = a[(i, k)] * inv;
                a[(i, k)] = f;
                for j in k + 1..N {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        Some(Self { lu: a, perm })
    }

    fn solve(&self, mut b: SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
        for k in 0..N {
            b.swap_rows(k, self.perm[k]);
        }
        for c in 0..N {
            for i in 1..N {
                let mut s = b[(i, c)];
                for j in 0..i {
                    s -= self.lu[(i, j)] * b[(j, c)];
                }
                b[(i, c)] = s;
            }
            for i in (0..N).rev() {
                let mut s = b[(i, c)];
                for j in i + 1..N {
                    s -= self.lu[(i, j)] * b[(j, c)];
                }
                b[(i, c)] = s / self.lu[(i, i)];
            }
        }
        b
    }
}

/// Block upper-triangular matrix `[[x, y], [0, z]]`.
#[derive(Clone, Copy)]
struct BlockTri<const N: usize> {
    x: SMatrix<f64, N, N>,
    y: SMatrix<f64, N, N>,
    z: SMatrix<f64, N, N>,
}

impl<const N: usize> BlockTri<N> {
    fn identity() -> Self {
        Self {
            x: SMatrix::identity(),
            y: SMatrix::zeros(),
            z: SMatrix::identity(),
        }
    }

    fn mul(&self, o: &Self) -> Self {
        Self {
            x: self.x * o.x,
            y: self.x * o.y + self.y * o.z,
            z: self.z * o.z,
        }
    }

    fn axpy(&mut self, c: f64, o: &Self) {
        self.x += o.x * c;
        self.y += o.y * c;
        self.z += o.z * c;
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            x: self.x * c,
            y: self.y * c,
            z: self.z * c,
        }
    }

    fn one_norm(&self) -> f64 {
        let col = |m: &SMatrix<f64, N, N>, j: usize| m.column(j).iter().map(|v| v.abs()).sum::<f64>();
        (0..N)
            .map(|j| col(&self.x, j).max(col(&self.y, j) + col(&self.z, j)))
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).chain(self.z.iter()).all(|v| v.is_finite())
    }
}

/// Exponential of the block upper-triangular matrix `[[x, y], [0, z]]`,
/// returned as its right-hand blocks `(E₁₂, E₂₂)`.
///
/// Same scaling-and-squaring Padé scheme as [`expm`], with products and the
/// final solve carried out blockwise.
pub fn expm_block_triangular<const N: usize>(
    x: &SMatrix<f64, N, N>,
    y: &SMatrix<f64, N, N>,
    z: &SMatrix<f64, N, N>,
) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, N, N>)> {
    let a = BlockTri { x: *x, y: *y, z: *z };
    let norm = a.one_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical(format!(
            "expm input has non-finite entries (1-norm = {norm})"
        )));
    }
    let (degree, squarings) = match PADE_THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some(&(m, _)) => (m, 0u32),
        None => {
            let theta13 = PADE_THETA[4].1;
            (13, (norm / theta13).log2().ceil().max(0.0) as u32)
        }
    };
    let scaled = a.scaled(0.5f64.powi(squarings as i32));
    let c = pade_coefficients(degree);
    let a2 = scaled.mul(&scaled);
    let mut u_inner = BlockTri::identity().scaled(c[1]);
    let mut v = BlockTri::identity().scaled(c[0]);
    let mut pow = a2;
    let mut j = 2;
    loop {
        v.axpy(c[j], &pow);
        u_inner.axpy(c[j + 1], &pow);
        j += 2;
        if j > degree {
            break;
        }
        pow = pow.mul(&a2);
    }
    let u = scaled.mul(&u_inner);
    let mut p = v;
    p.axpy(1.0, &u);
    let mut q = v;
    q.axpy(-1.0, &u);

    let singular = || {
        Error::Numerical(format!(
            "expm: singular Padé denominator (degree {degree}, 1-norm {norm:.3e}, {squarings} squarings)"
        ))
    };
    let lu_x = FixedLu::new(q.x).ok_or_else(singular)?;
    let rz = FixedLu::new(q.z).ok_or_else(singular)?.solve(p.z);
    let ry = lu_x.solve(p.y - q.y * rz);
    // the top-left block is only needed while squaring
    let rx = if squarings > 0 { lu_x.solve(p.x) } else { SMatrix::zeros() };
    let mut r = BlockTri { x: rx, y: ry, z: rz };
    for _ in 0..squarings {
        r = r.mul(&r);
    }
    if !r.is_finite() {
        return Err(Error::Numerical(format!(
            "expm did not converge: non-finite result (degree {degree}, 1-norm {norm:.3e}, {squarings} squarings)"
        )));
    }
    Ok((r.y, r.z))
}

/// `(P + Pᵀ) / 2`.
pub fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

pub fn is_symmetric<const N: usize>(p: &SMatrix<f64, N, N>, rel_tol: f64) -> bool {
    let scale = p.abs().max().max(f64::MIN_POSITIVE);
    (p - p.transpose()).abs().max() <= rel_tol * scale
}

pub fn min_eigenvalue<const N: usize>(p: &SMatrix<f64, N, N>) -> f64 {
    let sym = DMatrix::from_iterator(N, N, symmetrize(p).iter().copied());
    sym.symmetric_eigenvalues().min()
}

/// Symmetric and PSD up to `-jitter_rel · trace` on the smallest eigenvalue.
pub fn is_psd<const N: usize>(p: &SMatrix<f64, N, N>, jitter_rel: f64) -> bool {
    let sym = symmetrize(p);
    if sym.cholesky().is_some() {
        return true;
    }
    let tol = jitter_rel * p.trace().abs();
    if (sym + SMatrix::<f64, N, N>::identity() * tol).cholesky().is_some() {
        return true;
    }
    min_eigenvalue(p) >= -tol
}

/// Clamps negative eigenvalues of the symmetric part to zero.
pub fn project_psd<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    clamp_eigenvalues(&symmetrize(p), 0.0)
}

fn clamp_eigenvalues<const N: usize>(sym: &SMatrix<f64, N, N>, keep_above: f64) -> SMatrix<f64, N, N> {
    let eig = DMatrix::from_iterator(N, N, sym.iter().copied()).symmetric_eigen();
    if eig.eigenvalues.min() >= keep_above {
        return *sym;
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, l) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l.max(0.0));
    }
    let rebuilt = scaled * eig.eigenvectors.transpose();
    symmetrize(&SMatrix::<f64, N, N>::from_iterator(rebuilt.iter().copied()))
}

/// Symmetric part of `p`, projected onto the PSD cone when its smallest
/// eigenvalue is below `-jitter_rel · trace`.
pub fn condition_psd<const N: usize>(p: &SMatrix<f64, N, N>, jitter_rel: f64) -> SMatrix<f64, N, N> {
    let sym = symmetrize(p);
    if sym.cholesky().is_some() {
        return sym;
    }
    let tol = jitter_rel * sym.trace().abs();
    if (sym + SMatrix::<f64, N, N>::identity() * tol).cholesky().is_some() {
        return sym;
    }
    clamp_eigenvalues(&sym, -tol)
}

/// Lower Cholesky factor. On failure retries once with `1e-12·trace·I` added.
pub fn cholesky_with_jitter<const N: usize>(
    p: &SMatrix<f64, N, N>,
) -> Result<SMatrix<f64, N, N>> {
    if p.iter().all(|v| *v == 0.0) {
        return Ok(SMatrix::zeros());
    }
    if let Some(c) = p.cholesky() {
        return Ok(c.l());
    }
    let jitter = 1e-12 * p.trace().abs();
    let jittered = p + SMatrix::<f64, N, N>::identity() * jitter;
    jittered.cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::Numerical(format!(
            "Cholesky failed after jitter {jitter:.3e} (min eigenvalue {:.3e})",
            min_eigenvalue(p)
        ))
    })
}
