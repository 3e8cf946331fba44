//! Dense complex linear algebra and seeded sampling shared by the rest of the
//! crate.
//!
//! Matrices are `nalgebra` dynamic matrices over `Complex<f64>`. Large
//! products are routed through real-valued GEMM (`adjoint_mul`, `matmul`),
//! which is several times faster than nalgebra's generic complex kernel.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Generator used for every random draw in the crate. ChaCha with 8 rounds,
/// seeded from a `u64` through `SeedableRng::seed_from_u64`.
pub type SimRng = ChaCha8Rng;

/// Relative singular-value threshold for pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-10;

/// Eigen-solves below this relative eigenvalue are treated as singular.
pub const INV_SQRT_RTOL: f64 = 1e-12;

/// Products with fewer multiply-adds than this stay on the complex kernel.
const REAL_GEMM_THRESHOLD: usize = 1 << 15;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded by `seed`. Used to
/// give every passage, step or trial its own generator so results do not
/// depend on evaluation order.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw from CN(0, 1): real and imaginary parts each N(0, 1/2).
pub fn standard_complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn standard_complex_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| standard_complex(rng))
}

fn check_finite(m: &CMatrix, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// (M + M^H) / 2
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues non-increasing.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, ordered like `eigenvalues`.
    pub eigenvectors: CMatrix,
}

impl HermitianEig {
    /// The `r` leading eigenvectors as an n x r matrix.
    pub fn leading(&self, r: usize) -> CMatrix {
        self.eigenvectors.columns(0, r).into_owned()
    }

    pub fn reconstruct(&self) -> CMatrix {
        let mut scaled = self.eigenvectors.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(lambda);
        }
        &scaled * self.eigenvectors.adjoint()
    }
}

/// Full spectrum of a Hermitian matrix. The input is symmetrized first.
/// Each eigenvector's first entry of largest magnitude is rotated to be real
/// and positive, so bases are reproducible.
pub fn hermitian_eig(m: &CMatrix) -> Result<HermitianEig> {
    check_square(m, "hermitian_eig input")?;
    check_finite(m, "hermitian_eig input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(HermitianEig {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let sym = hermitian_part(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_phase(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

fn fix_phase(v: &mut CVector) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    // near-ties resolve to the first index
    let pivot = v.iter().position(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap_or(0);
    let z = v[pivot];
    let rot = z.conj() / z.norm();
    v.iter_mut().for_each(|x| *x *= rot);
    v[pivot] = C64::new(v[pivot].re, 0.0);
}

fn spectral_function(eig: &HermitianEig, f: impl Fn(f64) -> f64) -> CMatrix {
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(f(lambda));
    }
    hermitian_part(&(&scaled * eig.eigenvectors.adjoint()))
}

fn check_positive_definite(eig: &HermitianEig) -> Result<()> {
    let largest = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let smallest = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if largest <= 0.0 || smallest <= INV_SQRT_RTOL * largest {
        return Err(Error::Conditioning {
            eigenvalue: smallest,
            largest,
        });
    }
    Ok(())
}

/// Hermitian inverse square root S of a positive-definite matrix, so that
/// S M S^H = I.
pub fn inv_sqrt_hermitian(m: &CMatrix) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    check_positive_definite(&eig)?;
    Ok(spectral_function(&eig, |l| 1.0 / l.sqrt()))
}

/// Hermitian square root of a positive-definite matrix.
pub fn sqrt_hermitian(m: &CMatrix) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    check_positive_definite(&eig)?;
    Ok(spectral_function(&eig, f64::sqrt))
}

/// Hermitian square root of a positive semi-definite matrix. Eigenvalues
/// slightly below zero (rounding) are clamped; clearly negative ones are an
/// error.
pub fn sqrt_psd(m: &CMatrix) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    let largest = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let smallest = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if smallest < -1e-10 * largest.abs().max(1.0) {
        return Err(Error::Conditioning {
            eigenvalue: smallest,
            largest,
        });
    }
    Ok(spectral_function(&eig, |l| l.max(0.0).sqrt()))
}

/// Moore-Penrose pseudo-inverse. Singular values at or below
/// `PINV_RTOL` times the largest are treated as zero.
pub fn pseudo_inverse(a: &CMatrix) -> Result<CMatrix> {
    check_finite(a, "pseudo_inverse input")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(CMatrix::zeros(n, m));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(CMatrix::zeros(n, m));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = CMatrix::zeros(n, m);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_RTOL * smax {
            let vi = v_t.row(i).adjoint();
            let ui = u.column(i).adjoint();
            out += (vi * ui).scale(1.0 / s);
        }
    }
    Ok(out)
}

pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Number of singular values above `rtol` times the largest.
pub fn numerical_rank(a: &CMatrix, rtol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > rtol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the column space, dropping directions with singular
/// value at or below `rtol` times the largest.
pub fn orthonormal_basis(a: &CMatrix, rtol: f64) -> CMatrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return CMatrix::zeros(m, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > rtol * smax)
        .collect();
    let mut out = CMatrix::zeros(m, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &u.column(src));
    }
    out
}

/// Principal angles (radians, ascending) between the column spaces of `a`
/// and `b`. Computed from sines, which keeps small angles accurate.
/// Returns `min(rank a, rank b)` angles.
pub fn principal_angles(a: &CMatrix, b: &CMatrix) -> Vec<f64> {
    let qa = orthonormal_basis(a, 1e-12);
    let qb = orthonormal_basis(b, 1e-12);
    let (small, large) = if qa.ncols() <= qb.ncols() { (qa, qb) } else { (qb, qa) };
    if small.ncols() == 0 {
        return vec![];
    }
    let residual = &small - &large * (large.adjoint() * &small);
    let mut angles: Vec<f64> = singular_values(&residual)
        .into_iter()
        .map(|s| s.min(1.0).asin())
        .collect();
    angles.resize(small.ncols(), 0.0);
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    angles
}

pub fn max_principal_angle(a: &CMatrix, b: &CMatrix) -> f64 {
    principal_angles(a, b).last().copied().unwrap_or(0.0)
}

fn split(a: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|z| z.re), a.map(|z| z.im))
}

fn join(re: DMatrix<f64>, im: DMatrix<f64>) -> CMatrix {
    re.zip_map(&im, C64::new)
}

/// A^H B.
pub fn adjoint_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.nrows(), b.nrows(), "adjoint_mul: row mismatch");
    if a.nrows() * a.ncols() * b.ncols() < REAL_GEMM_THRESHOLD {
        return a.adjoint() * b;
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = ar.tr_mul(&br) + ai.tr_mul(&bi);
    let im = ar.tr_mul(&bi) - ai.tr_mul(&br);
    join(re, im)
}

/// A B.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimension mismatch");
    if a.nrows() * a.ncols() * b.ncols() < REAL_GEMM_THRESHOLD {
        return a * b;
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join(re, im)
}

/// Sampler for CN(0, cov) built once from the covariance square root.
#[derive(Debug, Clone)]
pub enum GaussianSampler {
    /// cov = std^2 I
    Scaled { dim: usize, std: f64 },
    /// cov = F F^H with F the Hermitian square root
    Full { factor: CMatrix },
}

impl GaussianSampler {
    pub fn new(cov: &CMatrix) -> Result<Self> {
        check_square(cov, "covariance")?;
        check_finite(cov, "covariance")?;
        let n = cov.nrows();
        let d = cov[(0, 0)];
        let scaled_identity = n > 0
            && (0..n).all(|i| {
                (0..n).all(|j| {
                    let z = cov[(i, j)];
                    if i == j {
                        z == d
                    } else {
                        z == C64::new(0.0, 0.0)
                    }
                })
            })
            && d.im == 0.0;
        if scaled_identity {
            if d.re < 0.0 {
                return Err(Error::Conditioning {
                    eigenvalue: d.re,
                    largest: d.re,
                });
            }
            return Ok(GaussianSampler::Scaled {
                dim: n,
                std: d.re.sqrt(),
            });
        }
        Ok(GaussianSampler::Full { factor: sqrt_psd(cov)? })
    }

    pub fn dim(&self) -> usize {
        match self {
            GaussianSampler::Scaled { dim, .. } => *dim,
            GaussianSampler::Full { factor } => factor.nrows(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let z = standard_complex_vector(rng, self.dim());
        match self {
            GaussianSampler::Scaled { std, .. } => z.scale(*std),
            GaussianSampler::Full { factor } => factor * z,
        }
    }
}

/// One circularly-symmetric complex Gaussian vector with covariance `cov`,
/// generated as cov^{1/2} times a standard draw.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, cov: &CMatrix) -> Result<CVector> {
    if cov.nrows() != n {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, sample length {n}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    Ok(GaussianSampler::new(cov)?.sample(rng))
}

/// Kronecker product A ⊗ B.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// x^H y for two equally long slices.
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Plain-data form of a complex matrix: row-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension(format!(
                "{} entries recorded for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if self.data.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix record".into()));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            C64::new(re, im)
        }))
    }
}

/// Largest deviation of U^H U from the identity.
pub fn orthonormality_error(u: &CMatrix) -> f64 {
    let g = u.adjoint() * u;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let mut rng = seeded_rng(seed);
        let a = CMatrix::from_fn(n, n, |_, _| standard_complex(&mut rng));
        hermitian_part(&a)
    }

    #[test]
    fn identity_spectrum() {
        let eig = hermitian_eig(&CMatrix::identity(3, 3)).unwrap();
        assert_eq!(eig.eigenvalues.len(), 3);
        for l in &eig.eigenvalues {
            assert!(close(*l, 1.0, 1e-14));
        }
    }

    #[test]
    fn diagonal_spectrum_and_vectors() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]));
        let eig = hermitian_eig(&m).unwrap();
        assert!(close(eig.eigenvalues[0], 2.0, 1e-14));
        assert!(close(eig.eigenvalues[1], 1.0, 1e-14));
        // e2 then e1, phases fixed real-positive
        assert!((eig.eigenvectors[(1, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((eig.eigenvectors[(0, 1)] - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_orthonormal_and_reconstructs() {
        let m = random_hermitian(24, 3);
        let eig = hermitian_eig(&m).unwrap();
        let v = &eig.eigenvectors;
        let gram = v.adjoint() * v;
        assert!((gram - CMatrix::identity(24, 24)).norm() < 1e-10);
        assert!((eig.reconstruct() - &m).norm() < 1e-10 * m.norm());
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..24 {
            let col = v.column(j);
            let max = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let pivot = col.iter().position(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap();
            assert!(col[pivot].im == 0.0 && col[pivot].re > 0.0);
        }
    }

    #[test]
    fn eig_rejects_bad_input() {
        let rect = CMatrix::zeros(2, 3);
        assert!(matches!(hermitian_eig(&rect), Err(Error::Dimension(_))));
        let mut nan = CMatrix::identity(2, 2);
        nan[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(hermitian_eig(&nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn inv_sqrt_cases() {
        let s = inv_sqrt_hermitian(&CMatrix::identity(3, 3)).unwrap();
        assert!((s - CMatrix::identity(3, 3)).norm() < 1e-14);

        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(4.0, 0.0), C64::new(1.0, 0.0)]));
        let s = inv_sqrt_hermitian(&m).unwrap();
        assert!((s[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((s[(1, 1)] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(s[(0, 1)].norm() < 1e-14);

        let mut rng = seeded_rng(11);
        let a = CMatrix::from_fn(4, 4, |_, _| standard_complex(&mut rng));
        let m = &a * a.adjoint() + CMatrix::identity(4, 4);
        let s = inv_sqrt_hermitian(&m).unwrap();
        let check = &s * &m * s.adjoint();
        assert!((check - CMatrix::identity(4, 4)).norm() < 1e-8);
        assert!((&s - s.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
        match inv_sqrt_hermitian(&m) {
            Err(Error::Conditioning { eigenvalue, .. }) => assert_eq!(eigenvalue, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        let indefinite = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]));
        assert!(inv_sqrt_hermitian(&indefinite).is_err());
    }

    #[test]
    fn pinv_cases() {
        let id = CMatrix::identity(4, 4);
        assert!((pseudo_inverse(&id).unwrap() - &id).norm() < 1e-14);

        let z = CMatrix::zeros(3, 5);
        let p = pseudo_inverse(&z).unwrap();
        assert_eq!(p.shape(), (5, 3));
        assert_eq!(p.norm(), 0.0);

        let mut rng = seeded_rng(5);
        let a = CMatrix::from_fn(8, 5, |_, _| standard_complex(&mut rng));
        let p = pseudo_inverse(&a).unwrap();
        assert!((&p * &a - CMatrix::identity(5, 5)).norm() < 1e-8);
    }

    #[test]
    fn pinv_moore_penrose_identities_rank_deficient() {
        let mut rng = seeded_rng(9);
        let b = CMatrix::from_fn(6, 2, |_, _| standard_complex(&mut rng));
        let c = CMatrix::from_fn(2, 5, |_, _| standard_complex(&mut rng));
        let a = &b * &c;
        let p = pseudo_inverse(&a).unwrap();
        let scale = a.norm();
        assert!((&a * &p * &a - &a).norm() < 1e-8 * scale);
        assert!((&p * &a * &p - &p).norm() < 1e-8 * p.norm());
        let ap = &a * &p;
        assert!((&ap - ap.adjoint()).norm() < 1e-8);
        let pa = &p * &a;
        assert!((&pa - pa.adjoint()).norm() < 1e-8);
    }

    #[test]
    fn gaussian_zero_cov_and_determinism() {
        let mut rng = seeded_rng(1);
        let v = complex_gaussian(&mut rng, 3, &CMatrix::zeros(3, 3)).unwrap();
        assert!(v.iter().all(|z| z.norm() == 0.0));

        let cov = CMatrix::identity(2, 2);
        let a = complex_gaussian(&mut seeded_rng(42), 2, &cov).unwrap();
        let b = complex_gaussian(&mut seeded_rng(42), 2, &cov).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_sample_covariance_identity() {
        let mut rng = seeded_rng(77);
        let cov = CMatrix::identity(2, 2);
        let sampler = GaussianSampler::new(&cov).unwrap();
        let n = 100_000;
        let mut acc = CMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sampler.sample(&mut rng);
            acc += &x * x.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((acc[(i, j)] - C64::new(target, 0.0)).norm() < 0.05, "{acc}");
            }
        }
    }

    #[test]
    fn gaussian_colored_covariance() {
        let mut rng = seeded_rng(78);
        let a = CMatrix::from_fn(3, 3, |_, _| standard_complex(&mut rng));
        let cov = &a * a.adjoint();
        let sampler = GaussianSampler::new(&cov).unwrap();
        let n = 100_000;
        let mut acc = CMatrix::zeros(3, 3);
        for _ in 0..n {
            let x = sampler.sample(&mut rng);
            acc += &x * x.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        assert!((acc - &cov).norm() < 0.05 * cov.norm());
    }

    #[test]
    fn gaussian_rejects_non_psd() {
        let cov = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-0.5, 0.0)]));
        assert!(matches!(
            complex_gaussian(&mut seeded_rng(0), 2, &cov),
            Err(Error::Conditioning { .. })
        ));
        assert!(complex_gaussian(&mut seeded_rng(0), 3, &CMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn real_split_products_match_complex_kernel() {
        let mut rng = seeded_rng(123);
        let a = CMatrix::from_fn(70, 40, |_, _| standard_complex(&mut rng));
        let b = CMatrix::from_fn(70, 30, |_, _| standard_complex(&mut rng));
        let c = CMatrix::from_fn(40, 50, |_, _| standard_complex(&mut rng));
        assert!((adjoint_mul(&a, &b) - a.adjoint() * &b).norm() < 1e-10);
        assert!((matmul(&a, &c) - &a * &c).norm() < 1e-10);
    }

    #[test]
    fn principal_angles_basics() {
        let mut rng = seeded_rng(8);
        let a = CMatrix::from_fn(6, 2, |_, _| standard_complex(&mut rng));
        let mix = CMatrix::from_fn(2, 2, |_, _| standard_complex(&mut rng));
        let b = &a * mix;
        assert!(max_principal_angle(&a, &b) < 1e-12);

        let e1 = CMatrix::from_fn(3, 1, |i, _| C64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        let e2 = CMatrix::from_fn(3, 1, |i, _| C64::new(if i == 1 { 1.0 } else { 0.0 }, 0.0));
        assert!((max_principal_angle(&e1, &e2) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);

        let tilted = CMatrix::from_fn(3, 1, |i, _| match i {
            0 => C64::new(1e-3f64.cos(), 0.0),
            1 => C64::new(1e-3f64.sin(), 0.0),
            _ => C64::new(0.0, 0.0),
        });
        assert!((max_principal_angle(&e1, &tilted) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn rank_of_product() {
        let mut rng = seeded_rng(4);
        let b = CMatrix::from_fn(7, 3, |_, _| standard_complex(&mut rng));
        let c = CMatrix::from_fn(3, 9, |_, _| standard_complex(&mut rng));
        assert_eq!(numerical_rank(&(&b * &c), 1e-8), 3);
        assert_eq!(orthonormal_basis(&(&b * &c), 1e-8).ncols(), 3);
    }
}
