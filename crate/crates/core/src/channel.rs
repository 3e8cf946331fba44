//! Geometric multipath MIMO channel synthesis.
//!
//! A channel is a sum of paths, each with a transmit direction, a receive
//! direction, a delay and a complex gain. The tap-domain channel is
//!
//! ```text
//! H[w] = sum_p alpha_p a_R(aoa_p) a_T(aod_p)^T g(w T - tau_p),   w = 0..W-1
//! ```
//!
//! and its space-time matrix stacks `vec(H[w])` (receive index fastest) as
//! columns, which factors as `(A_T ⋄ A_R) diag(alpha) G^T`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{numerical_rank, standard_complex, CMatrix, CVector, C64};

/// Relative singular-value threshold for diversity orders.
pub const DIVERSITY_RTOL: f64 = 1e-8;

/// Uniform planar array. Element (m, n) sits on row m (vertical axis) and
/// column n (horizontal axis); the response vector is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArrayConfig {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            spacing: 0.5,
        }
    }

    /// 8 x 8 base-station array.
    pub fn base_station() -> Self {
        Self::new(8, 8)
    }

    /// 4 x 4 vehicle array.
    pub fn user_equipment() -> Self {
        Self::new(4, 4)
    }

    pub fn n_elements(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!(
                "array must have at least one element, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Config(format!(
                "element spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotKind {
    /// i.i.d. CN(0, pilot_power) entries.
    #[default]
    Gaussian,
    /// Random QPSK symbols scaled to `pilot_power`.
    ConstantModulus,
}

/// OFDM waveform and pulse-shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_subcarriers: usize,
    pub n_taps: usize,
    /// Raised-cosine roll-off in [0, 1].
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
    /// Per-entry pilot variance (linear).
    #[serde(default = "default_pilot_power")]
    pub pilot_power: f64,
    /// Round path delays to the sample grid before synthesis.
    #[serde(default)]
    pub quantize_delays: bool,
    #[serde(default)]
    pub pilots: PilotKind,
}

fn default_rolloff() -> f64 {
    0.25
}

fn default_pilot_power() -> f64 {
    1.0
}

impl Waveform {
    /// 28 GHz, 1 MHz, 64 subcarriers, single tap.
    pub fn flat() -> Self {
        Self {
            carrier_hz: 28e9,
            bandwidth_hz: 1e6,
            n_subcarriers: 64,
            n_taps: 1,
            rolloff: 0.25,
            pilot_power: 1.0,
            quantize_delays: false,
            pilots: PilotKind::Gaussian,
        }
    }

    /// 28 GHz, 50 MHz, 512 subcarriers, 7 taps.
    pub fn selective() -> Self {
        Self {
            bandwidth_hz: 50e6,
            n_subcarriers: 512,
            n_taps: 7,
            ..Self::flat()
        }
    }

    /// Sampling time T = 1 / B.
    pub fn sample_time(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// Longest delay representable in the tap window, (W - 1) T.
    pub fn max_delay(&self) -> f64 {
        (self.n_taps as f64 - 1.0) * self.sample_time()
    }

    /// Checks the waveform on its own and the identifiability condition
    /// N_K >= N_T W for `n_tx` transmit antennas.
    pub fn validate(&self, n_tx: usize) -> Result<()> {
        if self.n_taps == 0 {
            return Err(Error::Config("number of taps must be at least 1".into()));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::Config(format!(
                "roll-off must lie in [0, 1], got {}",
                self.rolloff
            )));
        }
        if !(self.pilot_power >= 0.0 && self.pilot_power.is_finite()) {
            return Err(Error::Config(format!(
                "pilot power must be non-negative, got {}",
                self.pilot_power
            )));
        }
        if self.n_subcarriers < n_tx * self.n_taps {
            return Err(Error::Config(format!(
                "{} subcarriers cannot identify {} transmit antennas x {} taps",
                self.n_subcarriers, n_tx, self.n_taps
            )));
        }
        Ok(())
    }
}

/// Azimuth and elevation in radians, relative to an array's broadside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub az: f64,
    pub el: f64,
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Departure direction at the transmitter.
    pub aod: Direction,
    /// Arrival direction at the receiver.
    pub aoa: Direction,
    /// Delay relative to the earliest path, seconds.
    pub delay_s: f64,
    /// Average power (fading variance).
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
    /// Absolute propagation delay of the earliest path, removed from
    /// `delay_s` so the tap window starts at the first arrival.
    pub delay_offset_s: f64,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.power).sum()
    }

    /// Delays mapped into the tap window of `wf`: optionally rounded to the
    /// sample grid, then clamped to [0, (W - 1) T]. A single-tap waveform
    /// therefore always sees zero delays.
    pub fn fit_to_window(&self, wf: &Waveform) -> PathSet {
        let t = wf.sample_time();
        let max = wf.max_delay();
        let paths = self
            .paths
            .iter()
            .map(|p| {
                let mut d = p.delay_s.max(0.0);
                if wf.quantize_delays {
                    d = (d / t).round() * t;
                }
                Path {
                    delay_s: d.min(max),
                    ..*p
                }
            })
            .collect();
        PathSet {
            paths,
            delay_offset_s: self.delay_offset_s,
        }
    }
}

/// Complex path gains for one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub alphas: Vec<C64>,
}

impl FadingDraw {
    /// alpha_p ~ CN(0, power_p), independent across paths.
    pub fn draw<R: Rng + ?Sized>(paths: &PathSet, rng: &mut R) -> Self {
        let alphas = paths
            .paths
            .iter()
            .map(|p| standard_complex(rng) * p.power.sqrt())
            .collect();
        Self { alphas }
    }

    /// Rician gains: path p has a specular part of linear K-factor
    /// `k_factors[p]` (0 when absent) with a uniform random phase, so
    /// E[alpha] = 0 and E|alpha_p|^2 = power_p still hold.
    pub fn draw_rician<R: Rng + ?Sized>(paths: &PathSet, k_factors: &[f64], rng: &mut R) -> Self {
        let alphas = paths
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let k = k_factors.get(i).copied().unwrap_or(0.0).max(0.0);
                let phase = rng.random::<f64>() * 2.0 * PI;
                let diffuse = standard_complex(rng);
                let spec = C64::from_polar((k / (k + 1.0)).sqrt(), phase);
                (spec + diffuse * (1.0 / (k + 1.0)).sqrt()) * p.power.sqrt()
            })
            .collect();
        Self { alphas }
    }

    pub fn unit(n: usize) -> Self {
        Self {
            alphas: vec![C64::new(1.0, 0.0); n],
        }
    }
}

/// Tap, transmit and receive dimensions of a channel or estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n_taps: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl Dims {
    pub fn new(n_taps: usize, n_tx: usize, n_rx: usize) -> Self {
        Self { n_taps, n_tx, n_rx }
    }

    pub fn from_config(wf: &Waveform, tx: &ArrayConfig, rx: &ArrayConfig) -> Self {
        Self::new(wf.n_taps, tx.n_elements(), rx.n_elements())
    }

    /// W N_T N_R
    pub fn len(&self) -> usize {
        self.n_taps * self.n_tx * self.n_rx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of (tap, tx, rx) in a vectorized channel: tap slowest,
    /// receive antenna fastest.
    #[inline]
    pub fn index(&self, tap: usize, tx: usize, rx: usize) -> usize {
        (tap * self.n_tx + tx) * self.n_rx + rx
    }
}

/// One tap-domain MIMO channel realization in its three equivalent layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps {
    pub dims: Dims,
    /// H[w], each N_R x N_T.
    pub taps: Vec<CMatrix>,
    /// N_T N_R x W, column w is vec(H[w]).
    pub st_matrix: CMatrix,
    /// Column stack of `st_matrix`, length W N_T N_R.
    pub vectorized: CVector,
}

impl ChannelTaps {
    /// Rebuilds all layouts from a vectorized channel.
    pub fn from_vectorized(dims: Dims, v: &CVector) -> Result<Self> {
        if v.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "vector of length {} for dims {:?}",
                v.len(),
                dims
            )));
        }
        let st_matrix = CMatrix::from_column_slice(dims.n_tx * dims.n_rx, dims.n_taps, v.as_slice());
        let taps = (0..dims.n_taps)
            .map(|w| {
                CMatrix::from_column_slice(
                    dims.n_rx,
                    dims.n_tx,
                    &v.as_slice()[w * dims.n_tx * dims.n_rx..(w + 1) * dims.n_tx * dims.n_rx],
                )
            })
            .collect();
        Ok(Self {
            dims,
            taps,
            st_matrix,
            vectorized: v.clone(),
        })
    }

    pub fn energy(&self) -> f64 {
        self.vectorized.norm_squared()
    }

    pub fn to_record(&self) -> TapsRecord {
        let d = self.dims;
        let mut data = Vec::with_capacity(d.len());
        for h in &self.taps {
            for r in 0..d.n_rx {
                for t in 0..d.n_tx {
                    let z = h[(r, t)];
                    data.push([z.re, z.im]);
                }
            }
        }
        TapsRecord {
            dims: [d.n_taps, d.n_rx, d.n_tx],
            taps: data,
        }
    }

    pub fn from_record(rec: &TapsRecord) -> Result<Self> {
        let [w, nr, nt] = rec.dims;
        let dims = Dims::new(w, nt, nr);
        if rec.taps.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "record holds {} values for dims {:?}",
                rec.taps.len(),
                rec.dims
            )));
        }
        let mut v = CVector::zeros(dims.len());
        let mut it = rec.taps.iter();
        for tap in 0..w {
            for r in 0..nr {
                for t in 0..nt {
                    let [re, im] = *it.next().expect("length checked");
                    v[dims.index(tap, t, r)] = C64::new(re, im);
                }
            }
        }
        Self::from_vectorized(dims, &v)
    }
}

/// Serialized channel: `dims` is [W, N_R, N_T] and `taps` the row-major
/// [W][N_R][N_T] entries as (re, im) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapsRecord {
    pub dims: [usize; 3],
    pub taps: Vec<[f64; 2]>,
}

/// Per-subcarrier channel H[k], each N_R x N_T.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannel {
    pub subcarriers: Vec<CMatrix>,
}

impl FreqChannel {
    /// (1 / N_K) sum_k ||H[k]||^2
    pub fn mean_energy(&self) -> f64 {
        let n = self.subcarriers.len().max(1) as f64;
        self.subcarriers.iter().map(|h| h.norm_squared()).sum::<f64>() / n
    }
}

/// Response of a planar array. Element (m, n) has phase
/// 2 pi spacing (m sin(el) + n cos(el) sin(az)).
pub fn upa_response(cfg: &ArrayConfig, az: f64, el: f64) -> Result<CVector> {
    const EPS: f64 = 1e-12;
    if !(az > -PI - EPS && az <= PI + EPS) {
        return Err(Error::Range(format!("azimuth {az} outside (-pi, pi]")));
    }
    if !(el >= -PI / 2.0 - EPS && el <= PI / 2.0 + EPS) {
        return Err(Error::Range(format!("elevation {el} outside [-pi/2, pi/2]")));
    }
    let k = 2.0 * PI * cfg.spacing;
    let (sv, sh) = (el.sin(), el.cos() * az.sin());
    Ok(CVector::from_fn(cfg.n_elements(), |i, _| {
        let (m, n) = ((i / cfg.cols) as f64, (i % cfg.cols) as f64);
        C64::from_polar(1.0, k * (m * sv + n * sh))
    }))
}

/// Raised-cosine pulse at `x` sample periods.
pub fn raised_cosine(x: f64, rolloff: f64) -> f64 {
    let sinc = |u: f64| {
        if u.abs() < 1e-12 {
            1.0
        } else {
            (PI * u).sin() / (PI * u)
        }
    };
    let denom = 1.0 - (2.0 * rolloff * x).powi(2);
    if denom.abs() < 1e-10 {
        // limit at x = +-1 / (2 rolloff)
        PI / 4.0 * sinc(1.0 / (2.0 * rolloff))
    } else {
        sinc(x) * (PI * rolloff * x).cos() / denom
    }
}

/// Samples g(w T - tau) for w = 0..W-1.
pub fn psf_samples(wf: &Waveform, delay_s: f64) -> Result<Vec<f64>> {
    let t = wf.sample_time();
    let tol = 1e-9 * t;
    if delay_s < -tol || delay_s > wf.max_delay() + tol {
        return Err(Error::Range(format!(
            "delay {delay_s:e} s outside the {}-tap window [0, {:e}] s",
            wf.n_taps,
            wf.max_delay()
        )));
    }
    let x0 = delay_s / t;
    Ok((0..wf.n_taps)
        .map(|w| raised_cosine(w as f64 - x0, wf.rolloff))
        .collect())
}

pub fn steering_matrix(paths: &PathSet, array: &ArrayConfig, at_tx: bool) -> Result<CMatrix> {
    let mut a = CMatrix::zeros(array.n_elements(), paths.len());
    for (p, path) in paths.paths.iter().enumerate() {
        let d = if at_tx { path.aod } else { path.aoa };
        a.set_column(p, &upa_response(array, d.az, d.el)?);
    }
    Ok(a)
}

/// A_T: N_T x P
pub fn tx_steering(paths: &PathSet, tx: &ArrayConfig) -> Result<CMatrix> {
    steering_matrix(paths, tx, true)
}

/// A_R: N_R x P
pub fn rx_steering(paths: &PathSet, rx: &ArrayConfig) -> Result<CMatrix> {
    steering_matrix(paths, rx, false)
}

/// G: W x P, column p holds the delayed pulse samples of path p.
pub fn delay_matrix(paths: &PathSet, wf: &Waveform) -> Result<CMatrix> {
    let mut g = CMatrix::zeros(wf.n_taps, paths.len());
    for (p, path) in paths.paths.iter().enumerate() {
        for (w, s) in psf_samples(wf, path.delay_s)?.into_iter().enumerate() {
            g[(w, p)] = C64::new(s, 0.0);
        }
    }
    Ok(g)
}

/// Column-wise Kronecker (Khatri-Rao) product A ⋄ B.
pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.ncols(), "khatri_rao: column mismatch");
    let (ma, mb) = (a.nrows(), b.nrows());
    CMatrix::from_fn(ma * mb, a.ncols(), |i, p| a[(i / mb, p)] * b[(i % mb, p)])
}

/// Builds the tap-domain channel from the path sum, and independently from
/// the factored form (A_T ⋄ A_R) diag(alpha) G^T. The two must agree.
pub fn synth_taps(
    paths: &PathSet,
    fading: &FadingDraw,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    wf: &Waveform,
) -> Result<ChannelTaps> {
    if fading.alphas.len() != paths.len() {
        return Err(Error::Dimension(format!(
            "{} fading gains for {} paths",
            fading.alphas.len(),
            paths.len()
        )));
    }
    let dims = Dims::from_config(wf, tx, rx);
    let a_t = tx_steering(paths, tx)?;
    let a_r = rx_steering(paths, rx)?;
    let g = delay_matrix(paths, wf)?;

    let mut taps = vec![CMatrix::zeros(dims.n_rx, dims.n_tx); dims.n_taps];
    for (p, alpha) in fading.alphas.iter().enumerate() {
        let outer = a_r.column(p) * a_t.column(p).transpose();
        for (w, h) in taps.iter_mut().enumerate() {
            let gain = alpha * g[(w, p)];
            if gain != C64::new(0.0, 0.0) {
                *h += &outer * gain;
            }
        }
    }

    let mut scaled = khatri_rao(&a_t, &a_r);
    for (p, alpha) in fading.alphas.iter().enumerate() {
        let mut col = scaled.column_mut(p);
        col *= *alpha;
    }
    let st_matrix = scaled * g.transpose();

    let scale = st_matrix.norm().max(1.0);
    for (w, h) in taps.iter().enumerate() {
        let col = st_matrix.column(w);
        let diff = h
            .as_slice()
            .iter()
            .zip(col.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if diff > 1e-10 * scale {
            return Err(Error::NonFinite(format!(
                "path-sum and factored channel disagree by {diff:e} at tap {w}"
            )));
        }
    }
    ChannelTaps::from_vectorized(dims, &CVector::from_column_slice(st_matrix.as_slice()))
}

/// H[k] = sum_w H[w] exp(-j 2 pi k w / N_K), k = 0..N_K-1.
pub fn taps_to_frequency(ch: &ChannelTaps, n_subcarriers: usize) -> Result<FreqChannel> {
    let w_count = ch.dims.n_taps;
    if n_subcarriers < w_count {
        return Err(Error::Config(format!("{n_subcarriers} subcarriers for {w_count} taps")));
    }
    let nk = n_subcarriers as f64;
    let subcarriers = (0..n_subcarriers)
        .map(|k| {
            let mut h = ch.taps[0].clone();
            for (w, tap) in ch.taps.iter().enumerate().skip(1) {
                let phase = C64::from_polar(1.0, -2.0 * PI * ((k * w) % n_subcarriers) as f64 / nk);
                h += tap * phase;
            }
            h
        })
        .collect();
    Ok(FreqChannel { subcarriers })
}

/// Spatial and temporal diversity orders of a path set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityOrders {
    pub tx: usize,
    pub rx: usize,
    pub time: usize,
}

/// Numerical ranks of A_T, A_R and G.
pub fn diversity_orders(paths: &PathSet, tx: &ArrayConfig, rx: &ArrayConfig, wf: &Waveform) -> Result<DiversityOrders> {
    let fitted = paths.fit_to_window(wf);
    Ok(DiversityOrders {
        tx: numerical_rank(&tx_steering(&fitted, tx)?, DIVERSITY_RTOL),
        rx: numerical_rank(&rx_steering(&fitted, rx)?, DIVERSITY_RTOL),
        time: numerical_rank(&delay_matrix(&fitted, wf)?, DIVERSITY_RTOL),
    })
}
