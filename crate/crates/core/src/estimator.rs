//! U-ML estimation, whitening, sample correlations, eigenbasis extraction and
//! the Kronecker-factored low-rank projector.
//!
//! Vectorized channels use the index `(w * N_T + t) * N_R + r`. Under this
//! layout a tap view `Y[w]` (N_T x N_R) of a channel H[w] is `H[w]^T`, so the
//! receive-side and temporal correlations are formed as `Y^T Y*` and
//! `𝓨^T 𝓨*`; this makes every basis span the un-conjugated steering or pulse
//! matrix, and the projector uses plain `U U^H` factors.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::airlink::{NoiseModel, TrainingBurst};
use crate::channel::Dims;
use crate::error::{Error, Result};
use crate::numerics::{
    adjoint_mul, hermitian_eig, inv_sqrt_hermitian, matmul, orthonormality_error, sqrt_hermitian, CMatrix, CVector,
    MatrixRecord, C64,
};

/// Unconstrained ML (least-squares) channel estimate of one burst.
#[derive(Debug, Clone, PartialEq)]
pub struct UmlEstimate {
    pub dims: Dims,
    pub h_bar: CVector,
    /// tr((Φ^H Φ)^{-1}) / (N_T W): mean per-entry noise gain of the estimator.
    pub noise_gain: f64,
}

/// Regression matrix Φ, N_K x (W N_T), Φ[k, w N_T + t] = x_t[k] e^{-j2πkw/N_K}.
pub fn regression_matrix(pilots: &CMatrix, n_taps: usize) -> CMatrix {
    let (n_k, n_tx) = pilots.shape();
    let mut phi = CMatrix::zeros(n_k, n_taps * n_tx);
    for k in 0..n_k {
        for w in 0..n_taps {
            let arg = -2.0 * std::f64::consts::PI * ((k * w) % n_k) as f64 / n_k as f64;
            let ph = C64::from_polar(1.0, arg);
            for t in 0..n_tx {
                phi[(k, w * n_tx + t)] = pilots[(k, t)] * ph;
            }
        }
    }
    phi
}

/// Per receive antenna, least squares over all subcarriers. Solved through
/// the Cholesky factor of Φ^H Φ.
pub fn uml_estimate(burst: &TrainingBurst, n_taps: usize) -> Result<UmlEstimate> {
    let (n_k, n_tx) = burst.pilots.shape();
    let n_rx = burst.n_rx();
    if burst.received.nrows() != n_k {
        return Err(Error::Dimension(format!(
            "{} received rows for {n_k} pilot rows",
            burst.received.nrows()
        )));
    }
    if n_taps == 0 || n_k < n_tx * n_taps {
        return Err(Error::Config(format!(
            "{n_k} subcarriers cannot identify {n_tx} x {n_taps} unknowns"
        )));
    }
    let phi = regression_matrix(&burst.pilots, n_taps);
    let gram = adjoint_mul(&phi, &phi);
    let largest = gram.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    let chol = Cholesky::new(gram).ok_or(Error::Conditioning {
        eigenvalue: 0.0,
        largest,
    })?;
    let smallest_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|z| z.re * z.re)
        .fold(f64::INFINITY, f64::min);
    if !(smallest_pivot > 1e-12 * largest) {
        return Err(Error::Conditioning {
            eigenvalue: smallest_pivot,
            largest,
        });
    }
    let rhs = adjoint_mul(&phi, &burst.received);
    let est = chol.solve(&rhs);
    let inv = chol.inverse();
    let noise_gain = inv.trace().re / (n_tx * n_taps) as f64;
    // row (w N_T + t), column r: row-major flattening is the vectorized order
    let mut h_bar = CVector::zeros(est.len());
    let mut i = 0;
    for row in 0..est.nrows() {
        for r in 0..n_rx {
            h_bar[i] = est[(row, r)];
            i += 1;
        }
    }
    if h_bar.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("U-ML estimate".into()));
    }
    Ok(UmlEstimate {
        dims: Dims::new(n_taps, n_tx, n_rx),
        h_bar,
        noise_gain,
    })
}

/// Sample spatial covariance from signal-free bursts, (1/K) Σ_k n[k] n[k]^H.
pub fn estimate_noise_cov(bursts: &[TrainingBurst]) -> Result<CMatrix> {
    let first = bursts
        .first()
        .ok_or_else(|| Error::Degenerate("no bursts for noise estimation".into()))?;
    let n_rx = first.n_rx();
    let mut sum = CMatrix::zeros(n_rx, n_rx);
    let mut count = 0usize;
    for b in bursts {
        if b.n_rx() != n_rx {
            return Err(Error::Dimension("bursts with different receive arrays".into()));
        }
        // received rows are n[k]^T, so Σ n n^H = (R^H R)^*
        sum += adjoint_mul(&b.received, &b.received).conjugate();
        count += b.received.nrows();
    }
    Ok(sum / C64::new(count as f64, 0.0))
}

/// Factors of Ĉ = (1/σ_x²)(I_W ⊗ I_{N_T} ⊗ Q_n), kept per receive block.
#[derive(Debug, Clone, PartialEq)]
pub struct CFactors {
    pub pilot_power: f64,
    pub q_n: CMatrix,
    /// σ_x Q_n^{-1/2}: applied to each receive block when whitening.
    pub inv_half: CMatrix,
    /// σ_x^{-1} Q_n^{1/2}: the inverse map.
    pub half: CMatrix,
    /// The training data carried no noise; per-entry noise variance is zero.
    pub noise_free: bool,
}

impl CFactors {
    pub fn new(q_n: &CMatrix, pilot_power: f64, noise_free: bool) -> Result<Self> {
        if !(pilot_power > 0.0 && pilot_power.is_finite()) {
            return Err(Error::Config(format!(
                "pilot power must be positive, got {pilot_power}"
            )));
        }
        let s = pilot_power.sqrt();
        let inv_half = inv_sqrt_hermitian(q_n)? * C64::new(s, 0.0);
        let half = sqrt_hermitian(q_n)? / C64::new(s, 0.0);
        Ok(Self {
            pilot_power,
            q_n: q_n.clone(),
            inv_half,
            half,
            noise_free,
        })
    }

    pub fn identity(n_rx: usize) -> Self {
        let id = CMatrix::identity(n_rx, n_rx);
        Self {
            pilot_power: 1.0,
            q_n: id.clone(),
            inv_half: id.clone(),
            half: id,
            noise_free: false,
        }
    }

    pub fn n_rx(&self) -> usize {
        self.q_n.nrows()
    }

    fn apply_blocks(m: &CMatrix, v: &CVector) -> Result<CVector> {
        let n = m.nrows();
        if n == 0 || v.len() % n != 0 {
            return Err(Error::Dimension(format!(
                "vector of length {} is not a stack of {n}-blocks",
                v.len()
            )));
        }
        // columns of `blocks` are receive blocks
        let blocks = CMatrix::from_column_slice(n, v.len() / n, v.as_slice());
        let out = matmul(m, &blocks);
        Ok(CVector::from_column_slice(out.as_slice()))
    }

    /// Ĉ^{-H/2} v
    pub fn whiten_vec(&self, v: &CVector) -> Result<CVector> {
        Self::apply_blocks(&self.inv_half, v)
    }

    /// Ĉ^{H/2} v
    pub fn unwhiten_vec(&self, v: &CVector) -> Result<CVector> {
        Self::apply_blocks(&self.half, v)
    }
}

/// Builds Ĉ factors from the noise model of the training data. A noise-free
/// model keeps the supplied spatial shape for whitening.
pub fn build_c_factors(noise: &NoiseModel, shape: &CMatrix, pilot_power: f64) -> Result<CFactors> {
    if noise.is_noiseless() {
        CFactors::new(shape, pilot_power, true)
    } else {
        CFactors::new(&noise.q_n, pilot_power, false)
    }
}

/// Whitened U-ML output with its tap and space-time views.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedSeq {
    pub dims: Dims,
    pub y_ww: CVector,
    /// Expected per-entry noise variance after whitening.
    pub noise_var: f64,
}

impl WhitenedSeq {
    /// Ȳ̄[w], N_T x N_R with entry (t, r) = y_ww[(w N_T + t) N_R + r].
    pub fn tap(&self, w: usize) -> CMatrix {
        let d = self.dims;
        let block = &self.y_ww.as_slice()[w * d.n_tx * d.n_rx..(w + 1) * d.n_tx * d.n_rx];
        CMatrix::from_row_slice(d.n_tx, d.n_rx, block)
    }

    /// 𝓨̄, N_T N_R x W, column w is the row-major vectorization of Ȳ̄[w].
    pub fn st_matrix(&self) -> CMatrix {
        let d = self.dims;
        CMatrix::from_column_slice(d.n_tx * d.n_rx, d.n_taps, self.y_ww.as_slice())
    }

    /// All taps stacked vertically, (W N_T) x N_R.
    pub fn stacked(&self) -> CMatrix {
        let d = self.dims;
        CMatrix::from_row_slice(d.n_taps * d.n_tx, d.n_rx, self.y_ww.as_slice())
    }

    pub fn norm_sq(&self) -> f64 {
        self.y_ww.norm_squared()
    }
}

pub fn whiten(est: &UmlEstimate, c: &CFactors) -> Result<WhitenedSeq> {
    if c.n_rx() != est.dims.n_rx {
        return Err(Error::Dimension(format!(
            "whitening factor for {} receive antennas, estimate has {}",
            c.n_rx(),
            est.dims.n_rx
        )));
    }
    let noise_var = if c.noise_free {
        0.0
    } else {
        c.pilot_power * est.noise_gain
    };
    Ok(WhitenedSeq {
        dims: est.dims,
        y_ww: c.whiten_vec(&est.h_bar)?,
        noise_var,
    })
}

pub fn unwhiten(seq: &WhitenedSeq, c: &CFactors) -> Result<CVector> {
    c.unwhiten_vec(&seq.y_ww)
}

/// Running sums of the three sample correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationAccumulator {
    pub dims: Dims,
    sum_tx: CMatrix,
    sum_rx: CMatrix,
    sum_t: CMatrix,
    noise_var_sum: f64,
    count: usize,
}

impl CorrelationAccumulator {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            sum_tx: CMatrix::zeros(dims.n_tx, dims.n_tx),
            sum_rx: CMatrix::zeros(dims.n_rx, dims.n_rx),
            sum_t: CMatrix::zeros(dims.n_taps, dims.n_taps),
            noise_var_sum: 0.0,
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn accumulate(&mut self, seq: &WhitenedSeq) -> Result<()> {
        if seq.dims != self.dims {
            return Err(Error::Dimension(format!(
                "sequence dims {:?} do not match accumulator {:?}",
                seq.dims, self.dims
            )));
        }
        let d = self.dims;
        let stacked = seq.stacked();
        // Σ_w Ȳ[w] Ȳ[w]^H: diagonal blocks of the stacked Gram
        for w in 0..d.n_taps {
            let y = stacked.rows(w * d.n_tx, d.n_tx).into_owned();
            self.sum_tx += &y * y.adjoint();
        }
        // Σ_w Ȳ[w]^T Ȳ[w]^* = (S^H S)^*
        self.sum_rx += adjoint_mul(&stacked, &stacked).conjugate();
        // 𝓨^T 𝓨^* = (𝓨^H 𝓨)^*
        let st = seq.st_matrix();
        self.sum_t += adjoint_mul(&st, &st).conjugate();
        self.noise_var_sum += seq.noise_var;
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &CorrelationAccumulator) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::Dimension("merging accumulators of different dims".into()));
        }
        self.sum_tx += &other.sum_tx;
        self.sum_rx += &other.sum_rx;
        self.sum_t += &other.sum_t;
        self.noise_var_sum += other.noise_var_sum;
        self.count += other.count;
        Ok(())
    }

    fn scaled(&self, m: &CMatrix) -> CMatrix {
        if self.count == 0 {
            return m.clone();
        }
        m / C64::new(self.count as f64, 0.0)
    }

    pub fn r_tx(&self) -> CMatrix {
        self.scaled(&self.sum_tx)
    }

    pub fn r_rx(&self) -> CMatrix {
        self.scaled(&self.sum_rx)
    }

    pub fn r_t(&self) -> CMatrix {
        self.scaled(&self.sum_t)
    }

    /// Mean whitened per-entry noise variance of the accumulated sequences.
    pub fn noise_var(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.noise_var_sum / self.count as f64
        }
    }
}

/// How many leading eigenvectors each basis keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RankRule {
    Fixed {
        t: usize,
        tx: usize,
        rx: usize,
    },
    /// Smallest r capturing the fraction `eta` of the trace.
    Energy {
        eta: f64,
    },
    /// Eigenvalues above `gamma` times the noise contribution; the energy
    /// rule with `eta` applies when the data was noise-free.
    NoiseFloor {
        gamma: f64,
        eta: f64,
    },
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::NoiseFloor { gamma: 2.0, eta: 0.99 }
    }
}

impl RankRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankRule::Fixed { t, tx, rx } if t == 0 || tx == 0 || rx == 0 => {
                Err(Error::Config("fixed ranks must be at least 1".into()))
            }
            RankRule::Energy { eta } | RankRule::NoiseFloor { eta, .. } if !(eta > 0.0 && eta <= 1.0) => {
                Err(Error::Config(format!("energy fraction must lie in (0, 1], got {eta}")))
            }
            RankRule::NoiseFloor { gamma, .. } if !(gamma > 0.0 && gamma.is_finite()) => Err(Error::Config(format!(
                "noise-floor factor must be positive, got {gamma}"
            ))),
            _ => Ok(()),
        }
    }
}

fn energy_rank(eigs: &[f64], eta: f64) -> usize {
    let total: f64 = eigs.iter().map(|x| x.max(0.0)).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, e) in eigs.iter().enumerate() {
        acc += e.max(0.0);
        if acc >= eta * total * (1.0 - 1e-12) {
            return i + 1;
        }
    }
    eigs.len()
}

fn floor_rank(eigs: &[f64], threshold: f64) -> usize {
    eigs.iter().filter(|&&e| e > threshold).count().max(1)
}

/// Orthonormal temporal, Tx-spatial and Rx-spatial bases.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBases {
    pub u_t: CMatrix,
    pub u_tx: CMatrix,
    pub u_rx: CMatrix,
}

/// (r_T, r_Tx, r_Rx)
pub type Ranks = (usize, usize, usize);

impl SubspaceBases {
    pub fn ranks(&self) -> Ranks {
        (self.u_t.ncols(), self.u_tx.ncols(), self.u_rx.ncols())
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.u_t.nrows(), self.u_tx.nrows(), self.u_rx.nrows())
    }

    /// Full-dimensional bases, for which the projector is the identity.
    pub fn full(dims: Dims) -> Self {
        Self {
            u_t: CMatrix::identity(dims.n_taps, dims.n_taps),
            u_tx: CMatrix::identity(dims.n_tx, dims.n_tx),
            u_rx: CMatrix::identity(dims.n_rx, dims.n_rx),
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for (name, u) in [("temporal", &self.u_t), ("tx", &self.u_tx), ("rx", &self.u_rx)] {
            if u.ncols() == 0 || u.ncols() > u.nrows() {
                return Err(Error::Dimension(format!("{name} basis is {}x{}", u.nrows(), u.ncols())));
            }
            let err = orthonormality_error(u);
            if !(err <= tol) {
                return Err(Error::Degenerate(format!(
                    "{name} basis deviates from orthonormal by {err:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> BasesRecord {
        BasesRecord {
            u_t: MatrixRecord::from_matrix(&self.u_t),
            u_tx: MatrixRecord::from_matrix(&self.u_tx),
            u_rx: MatrixRecord::from_matrix(&self.u_rx),
        }
    }

    pub fn from_record(rec: &BasesRecord) -> Result<Self> {
        let b = Self {
            u_t: rec.u_t.to_matrix()?,
            u_tx: rec.u_tx.to_matrix()?,
            u_rx: rec.u_rx.to_matrix()?,
        };
        b.validate(1e-10)?;
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasesRecord {
    pub u_t: MatrixRecord,
    pub u_tx: MatrixRecord,
    pub u_rx: MatrixRecord,
}

pub fn extract_bases(acc: &CorrelationAccumulator, rule: &RankRule) -> Result<SubspaceBases> {
    if acc.count() == 0 {
        return Err(Error::Degenerate("no sequences accumulated".into()));
    }
    rule.validate()?;
    let d = acc.dims;
    let eig_t = hermitian_eig(&acc.r_t())?;
    let eig_tx = hermitian_eig(&acc.r_tx())?;
    let eig_rx = hermitian_eig(&acc.r_rx())?;
    let nu = acc.noise_var();
    let (rt, rtx, rrx) = match *rule {
        RankRule::Fixed { t, tx, rx } => {
            if t > d.n_taps || tx > d.n_tx || rx > d.n_rx {
                return Err(Error::Range(format!(
                    "fixed ranks ({t}, {tx}, {rx}) exceed dims ({}, {}, {})",
                    d.n_taps, d.n_tx, d.n_rx
                )));
            }
            (t, tx, rx)
        }
        RankRule::Energy { eta } => (
            energy_rank(&eig_t.eigenvalues, eta),
            energy_rank(&eig_tx.eigenvalues, eta),
            energy_rank(&eig_rx.eigenvalues, eta),
        ),
        RankRule::NoiseFloor { gamma, eta } => {
            if nu > 0.0 {
                (
                    floor_rank(&eig_t.eigenvalues, gamma * (d.n_tx * d.n_rx) as f64 * nu),
                    floor_rank(&eig_tx.eigenvalues, gamma * (d.n_taps * d.n_rx) as f64 * nu),
                    floor_rank(&eig_rx.eigenvalues, gamma * (d.n_taps * d.n_tx) as f64 * nu),
                )
            } else {
                (
                    energy_rank(&eig_t.eigenvalues, eta),
                    energy_rank(&eig_tx.eigenvalues, eta),
                    energy_rank(&eig_rx.eigenvalues, eta),
                )
            }
        }
    };
    Ok(SubspaceBases {
        u_t: eig_t.leading(rt),
        u_tx: eig_tx.leading(rtx),
        u_rx: eig_rx.leading(rrx),
    })
}

/// Π(L) = Ĉ^{H/2} Π̂ Ĉ^{-H/2} with Π̂ = P_T ⊗ P_Tx ⊗ P_Rx, applied mode by
/// mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub bases: SubspaceBases,
    pub c: CFactors,
    p_tx: CMatrix,
    /// P_Rx^T, right-multiplies the tap views.
    p_rx_t: CMatrix,
    /// P_T^T, right-multiplies the space-time view.
    p_t_t: CMatrix,
}

pub fn build_projector(bases: &SubspaceBases, c: &CFactors) -> Result<Projector> {
    if bases.u_rx.nrows() != c.n_rx() {
        return Err(Error::Dimension(format!(
            "receive basis has {} rows, whitening factor {}",
            bases.u_rx.nrows(),
            c.n_rx()
        )));
    }
    let proj = |u: &CMatrix| u * u.adjoint();
    Ok(Projector {
        p_tx: proj(&bases.u_tx),
        p_rx_t: proj(&bases.u_rx).transpose(),
        p_t_t: proj(&bases.u_t).transpose(),
        bases: bases.clone(),
        c: c.clone(),
    })
}

impl Projector {
    pub fn dims(&self) -> Dims {
        self.bases.dims()
    }

    /// Π̂ v in the whitened domain.
    pub fn apply_whitened(&self, v: &CVector) -> Result<CVector> {
        let d = self.dims();
        if v.len() != d.len() {
            return Err(Error::Dimension(format!(
                "vector of length {} for projector dims {:?}",
                v.len(),
                d
            )));
        }
        let block = d.n_tx * d.n_rx;
        let mut spatial = CVector::zeros(v.len());
        for w in 0..d.n_taps {
            let y = CMatrix::from_row_slice(d.n_tx, d.n_rx, &v.as_slice()[w * block..(w + 1) * block]);
            let z = matmul(&(&self.p_tx * y), &self.p_rx_t);
            let dst = &mut spatial.as_mut_slice()[w * block..(w + 1) * block];
            for t in 0..d.n_tx {
                for r in 0..d.n_rx {
                    dst[t * d.n_rx + r] = z[(t, r)];
                }
            }
        }
        if d.n_taps == 1 {
            // P_T is a scalar 0 or 1; only rank 1 is admissible
            return Ok(spatial);
        }
        let st = CMatrix::from_column_slice(block, d.n_taps, spatial.as_slice());
        let out = matmul(&st, &self.p_t_t);
        Ok(CVector::from_column_slice(out.as_slice()))
    }

    /// Π(L) h_bar.
    pub fn apply(&self, h_bar: &CVector) -> Result<CVector> {
        let white = self.c.whiten_vec(h_bar)?;
        let proj = self.apply_whitened(&white)?;
        self.c.unwhiten_vec(&proj)
    }
}

/// ĥ = Π(L) ȳ
pub fn lr_filter(proj: &Projector, est: &UmlEstimate) -> Result<CVector> {
    if est.dims != proj.dims() {
        return Err(Error::Dimension(format!(
            "estimate dims {:?}, projector dims {:?}",
            est.dims,
            proj.dims()
        )));
    }
    proj.apply(&est.h_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airlink::{gen_training, noise_cov, synth_burst, NoiseConfig};
    use crate::channel::{taps_to_frequency, ArrayConfig, ChannelTaps, Waveform};
    use crate::numerics::{kron, pseudo_inverse, seeded_rng, standard_complex_vector};

    fn random_burst(dims: Dims, n_k: usize, seed: u64, noise: &NoiseModel) -> (ChannelTaps, TrainingBurst) {
        let mut rng = seeded_rng(seed);
        let h = standard_complex_vector(&mut rng, dims.len());
        let ch = ChannelTaps::from_vectorized(dims, &h).unwrap();
        let wf = Waveform {
            n_subcarriers: n_k,
            n_taps: dims.n_taps,
            ..Waveform::flat()
        };
        let x = gen_training(&wf, dims.n_tx, &mut rng);
        let f = taps_to_frequency(&ch, n_k).unwrap();
        let b = synth_burst(&f, &x, 1.0, noise, &mut rng).unwrap();
        (ch, b)
    }

    #[test]
    fn noise_free_uml_is_exact() {
        let dims = Dims::new(3, 4, 5);
        let (ch, b) = random_burst(dims, 16, 1, &NoiseModel::noiseless(5));
        let est = uml_estimate(&b, 3).unwrap();
        assert!((&est.h_bar - &ch.vectorized).camax() < 1e-8);
    }

    #[test]
    fn uml_matches_pseudo_inverse() {
        let dims = Dims::new(1, 3, 2);
        let rx = ArrayConfig::new(1, 2);
        let noise = noise_cov(&NoiseConfig::white(0.5), &rx).unwrap();
        let (_, b) = random_burst(dims, 12, 2, &noise);
        let est = uml_estimate(&b, 1).unwrap();
        let phi = regression_matrix(&b.pilots, 1);
        let oracle = pseudo_inverse(&phi).unwrap() * &b.received;
        for t in 0..3 {
            for r in 0..2 {
                assert!((est.h_bar[t * 2 + r] - oracle[(t, r)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn uml_noise_energy() {
        let dims = Dims::new(2, 3, 4);
        let rx = ArrayConfig::new(2, 2);
        let sigma2 = 0.7;
        let noise = noise_cov(&NoiseConfig::white(sigma2), &rx).unwrap();
        let wf = Waveform {
            n_subcarriers: 16,
            n_taps: 2,
            ..Waveform::flat()
        };
        let mut rng = seeded_rng(5);
        let x = gen_training(&wf, 3, &mut rng);
        let phi = regression_matrix(&x, 2);
        let expected = sigma2 * (phi.adjoint() * &phi).try_inverse().unwrap().trace().re * 4.0;
        let zero = ChannelTaps::from_vectorized(dims, &CVector::zeros(dims.len())).unwrap();
        let f = taps_to_frequency(&zero, 16).unwrap();
        let trials = 4000;
        let mut energy = 0.0;
        for _ in 0..trials {
            let b = synth_burst(&f, &x, 1.0, &noise, &mut rng).unwrap();
            energy += uml_estimate(&b, 2).unwrap().h_bar.norm_squared();
        }
        let measured = energy / trials as f64;
        assert!((measured / expected - 1.0).abs() < 0.05, "{measured} vs {expected}");
    }

    #[test]
    fn rank_deficient_pilots() {
        let mut x = CMatrix::zeros(8, 2);
        for k in 0..8 {
            x[(k, 0)] = C64::new(1.0, 0.0);
            x[(k, 1)] = C64::new(1.0, 0.0);
        }
        let b = TrainingBurst {
            pilots: x,
            received: CMatrix::zeros(8, 1),
            pilot_power: 1.0,
        };
        assert!(matches!(uml_estimate(&b, 1), Err(Error::Conditioning { .. })));
        let b2 = TrainingBurst {
            pilots: CMatrix::zeros(4, 2),
            received: CMatrix::zeros(4, 1),
            pilot_power: 1.0,
        };
        assert!(uml_estimate(&b2, 3).is_err());
    }

    fn colored_q(n: usize, seed: u64) -> CMatrix {
        let mut rng = seeded_rng(seed);
        let a = CMatrix::from_fn(n, n, |_, _| crate::numerics::standard_complex(&mut rng));
        &a * a.adjoint() + CMatrix::identity(n, n)
    }

    #[test]
    fn c_factors_whiten_covariance() {
        let id = CFactors::new(&CMatrix::identity(3, 3), 1.0, false).unwrap();
        assert!((&id.inv_half - CMatrix::identity(3, 3)).camax() < 1e-12);
        let four = CFactors::new(&(CMatrix::identity(2, 2) * C64::new(4.0, 0.0)), 1.0, false).unwrap();
        assert!((four.inv_half[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-12);

        let dims = Dims::new(2, 2, 3);
        let q = colored_q(3, 7);
        let c = CFactors::new(&q, 2.0, false).unwrap();
        let c_full = kron(&CMatrix::identity(4, 4), &q) / C64::new(2.0, 0.0);
        let inv_full = kron(&CMatrix::identity(4, 4), &c.inv_half);
        let white = &inv_full * c_full * inv_full.adjoint();
        assert!((white - CMatrix::identity(dims.len(), dims.len())).camax() < 1e-10);
    }

    #[test]
    fn whiten_round_trip_and_views() {
        let dims = Dims::new(3, 2, 4);
        let mut rng = seeded_rng(8);
        let est = UmlEstimate {
            dims,
            h_bar: standard_complex_vector(&mut rng, dims.len()),
            noise_gain: 0.1,
        };
        let id = CFactors::identity(4);
        assert_eq!(whiten(&est, &id).unwrap().y_ww, est.h_bar);
        let c = CFactors::new(&colored_q(4, 3), 1.5, false).unwrap();
        let seq = whiten(&est, &c).unwrap();
        assert!((seq.noise_var - 0.15).abs() < 1e-15);
        let back = unwhiten(&seq, &c).unwrap();
        assert!((&back - &est.h_bar).camax() < 1e-12);
        let st = seq.st_matrix();
        for w in 0..3 {
            let y = seq.tap(w);
            for t in 0..2 {
                for r in 0..4 {
                    assert_eq!(y[(t, r)], seq.y_ww[(w * 2 + t) * 4 + r]);
                    assert_eq!(st[(t * 4 + r, w)], y[(t, r)]);
                }
            }
        }
    }

    fn seq_from(dims: Dims, v: CVector) -> WhitenedSeq {
        WhitenedSeq {
            dims,
            y_ww: v,
            noise_var: 0.0,
        }
    }

    #[test]
    fn accumulator_definitions() {
        let dims = Dims::new(1, 3, 4);
        let mut rng = seeded_rng(1);
        let s = seq_from(dims, standard_complex_vector(&mut rng, 12));
        let mut acc = CorrelationAccumulator::new(dims);
        acc.accumulate(&s).unwrap();
        let y = s.tap(0);
        assert!((acc.r_tx() - &y * y.adjoint()).camax() < 1e-12);
        assert!((acc.r_rx() - y.transpose() * y.conjugate()).camax() < 1e-12);
        let before = (acc.r_tx(), acc.r_rx(), acc.r_t());
        acc.accumulate(&s).unwrap();
        assert!((acc.r_tx() - before.0).camax() < 1e-12);
        assert!((acc.r_rx() - before.1).camax() < 1e-12);
        assert!((acc.r_t() - before.2).camax() < 1e-12);
        assert_eq!(acc.count(), 2);
        let other = seq_from(Dims::new(2, 3, 4), standard_complex_vector(&mut rng, 24));
        assert!(acc.accumulate(&other).is_err());
    }

    #[test]
    fn merge_equals_sequential() {
        let dims = Dims::new(2, 2, 3);
        let mut rng = seeded_rng(2);
        let seqs: Vec<_> = (0..6)
            .map(|_| seq_from(dims, standard_complex_vector(&mut rng, dims.len())))
            .collect();
        let mut all = CorrelationAccumulator::new(dims);
        let mut a = CorrelationAccumulator::new(dims);
        let mut b = CorrelationAccumulator::new(dims);
        for (i, s) in seqs.iter().enumerate() {
            all.accumulate(s).unwrap();
            if i < 3 {
                a.accumulate(s).unwrap()
            } else {
                b.accumulate(s).unwrap()
            }
        }
        a.merge(&b).unwrap();
        assert_eq!(a.count(), 6);
        assert!((a.r_t() - all.r_t()).camax() < 1e-12);
        assert!((a.r_rx() - all.r_rx()).camax() < 1e-12);
    }

    #[test]
    fn rank_rules() {
        let dims = Dims::new(2, 3, 4);
        let mut rng = seeded_rng(3);
        let base = standard_complex_vector(&mut rng, dims.len());
        let mut acc = CorrelationAccumulator::new(dims);
        for i in 0..5 {
            let scale = C64::from_polar(1.0 + i as f64, 0.3 * i as f64);
            acc.accumulate(&seq_from(dims, &base * scale)).unwrap();
        }
        // a single vectorized direction is rank 1 in none of the modes in
        // general, but a rank-1 tensor is
        let u = standard_complex_vector(&mut rng, 2);
        let v = standard_complex_vector(&mut rng, 3);
        let z = standard_complex_vector(&mut rng, 4);
        let mut t = CVector::zeros(24);
        for w in 0..2 {
            for a in 0..3 {
                for r in 0..4 {
                    t[(w * 3 + a) * 4 + r] = u[w] * v[a] * z[r];
                }
            }
        }
        let mut acc1 = CorrelationAccumulator::new(dims);
        acc1.accumulate(&seq_from(dims, t)).unwrap();
        let b = extract_bases(&acc1, &RankRule::Energy { eta: 0.99 }).unwrap();
        assert_eq!(b.ranks(), (1, 1, 1));
        let b = extract_bases(&acc1, &RankRule::default()).unwrap();
        assert_eq!(b.ranks(), (1, 1, 1));
        let fixed = extract_bases(&acc, &RankRule::Fixed { t: 2, tx: 3, rx: 2 }).unwrap();
        assert_eq!(fixed.ranks(), (2, 3, 2));
        assert_eq!(fixed.u_rx.shape(), (4, 2));
        assert!(matches!(
            extract_bases(&acc, &RankRule::Fixed { t: 3, tx: 1, rx: 1 }),
            Err(Error::Range(_))
        ));
        assert!(extract_bases(&CorrelationAccumulator::new(dims), &RankRule::default()).is_err());
    }

    fn random_bases(dims: Dims, ranks: Ranks, seed: u64) -> SubspaceBases {
        let mut rng = seeded_rng(seed);
        let mut basis = |n: usize, r: usize| {
            let a = CMatrix::from_fn(n, r, |_, _| crate::numerics::standard_complex(&mut rng));
            crate::numerics::orthonormal_basis(&a, 1e-12)
        };
        SubspaceBases {
            u_t: basis(dims.n_taps, ranks.0),
            u_tx: basis(dims.n_tx, ranks.1),
            u_rx: basis(dims.n_rx, ranks.2),
        }
    }

    #[test]
    fn factored_projector_matches_kronecker() {
        let dims = Dims::new(2, 2, 3);
        let bases = random_bases(dims, (1, 1, 2), 4);
        let c = CFactors::new(&colored_q(3, 9), 1.3, false).unwrap();
        let proj = build_projector(&bases, &c).unwrap();
        let p = |u: &CMatrix| u * u.adjoint();
        let pi_hat = kron(&kron(&p(&bases.u_t), &p(&bases.u_tx)), &p(&bases.u_rx));
        let mut rng = seeded_rng(5);
        let v = standard_complex_vector(&mut rng, dims.len());
        assert!((proj.apply_whitened(&v).unwrap() - &pi_hat * &v).camax() < 1e-12);

        let inv_full = kron(&CMatrix::identity(4, 4), &c.inv_half);
        let half_full = kron(&CMatrix::identity(4, 4), &c.half);
        let pi = &half_full * &pi_hat * &inv_full;
        assert!((proj.apply(&v).unwrap() - &pi * &v).camax() < 1e-12);

        assert!((&pi_hat * &pi_hat - &pi_hat).camax() < 1e-10);
        assert!((pi_hat.adjoint() - &pi_hat).camax() < 1e-10);
    }

    #[test]
    fn full_rank_projector_is_identity() {
        let dims = Dims::new(3, 2, 4);
        let c = CFactors::new(&colored_q(4, 1), 1.0, false).unwrap();
        let proj = build_projector(&SubspaceBases::full(dims), &c).unwrap();
        let v = standard_complex_vector(&mut seeded_rng(6), dims.len());
        assert!((proj.apply(&v).unwrap() - &v).camax() < 1e-10);
    }

    #[test]
    fn projection_keeps_in_subspace_vectors() {
        let dims = Dims::new(2, 3, 4);
        let bases = random_bases(dims, (1, 2, 2), 10);
        let proj = build_projector(&bases, &CFactors::identity(4)).unwrap();
        let mut rng = seeded_rng(11);
        let core = standard_complex_vector(&mut rng, 4);
        let core = CMatrix::from_column_slice(2, 2, core.as_slice());
        // Ȳ[w] = u_t[w] U_tx C U_rx^T
        let mut v = CVector::zeros(dims.len());
        for w in 0..2 {
            let y = &bases.u_tx * &core * bases.u_rx.transpose() * bases.u_t[(w, 0)];
            for t in 0..3 {
                for r in 0..4 {
                    v[(w * 3 + t) * 4 + r] = y[(t, r)];
                }
            }
        }
        assert!((proj.apply_whitened(&v).unwrap() - &v).camax() < 1e-10);
    }

    #[test]
    fn bases_record_round_trip() {
        let dims = Dims::new(2, 3, 4);
        let b = random_bases(dims, (1, 2, 3), 12);
        let rec = b.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back = SubspaceBases::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, b);
        let mut bad = rec.clone();
        bad.u_tx.data[0][0] += 0.1;
        assert!(SubspaceBases::from_record(&bad).is_err());
    }

    #[test]
    fn noise_covariance_estimate() {
        let rx = ArrayConfig::new(1, 3);
        let noise = noise_cov(&NoiseConfig::white(2.0), &rx).unwrap();
        let dims = Dims::new(1, 1, 3);
        let zero = ChannelTaps::from_vectorized(dims, &CVector::zeros(3)).unwrap();
        let f = taps_to_frequency(&zero, 2000).unwrap();
        let x = CMatrix::from_element(2000, 1, C64::new(1.0, 0.0));
        let b = synth_burst(&f, &x, 1.0, &noise, &mut seeded_rng(1)).unwrap();
        let q = estimate_noise_cov(&[b]).unwrap();
        assert!((q - &noise.q_n).camax() < 0.2);
    }
}
