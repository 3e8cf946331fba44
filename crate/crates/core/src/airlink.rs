//! Pilot generation, spatially colored noise and received-burst synthesis
//! for the per-subcarrier model y[k] = H[k] x[k] + n[k].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{upa_response, ArrayConfig, FreqChannel, PilotKind, Waveform};
use crate::error::{Error, Result};
use crate::numerics::{standard_complex, CMatrix, GaussianSampler, C64};

/// Directional interferer seen by the receive array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    /// Interference power per antenna (linear).
    pub power: f64,
    pub az: f64,
    #[serde(default)]
    pub el: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// White noise power per receive antenna (linear).
    pub white_power: f64,
    #[serde(default)]
    pub interferers: Vec<Interferer>,
}

impl NoiseConfig {
    pub fn white(power: f64) -> Self {
        Self {
            white_power: power,
            interferers: vec![],
        }
    }
}

/// Spatial noise covariance Q_n = s^2 I + sum_i s_i^2 a_R(i) a_R(i)^H with a
/// cached sampler.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub config: NoiseConfig,
    pub q_n: CMatrix,
    sampler: GaussianSampler,
}

impl PartialEq for NoiseModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.q_n == other.q_n
    }
}

fn assemble(cfg: &NoiseConfig, rx: &ArrayConfig) -> Result<CMatrix> {
    let n = rx.n_elements();
    let mut q = CMatrix::identity(n, n) * C64::new(cfg.white_power, 0.0);
    for i in &cfg.interferers {
        if !(i.power >= 0.0 && i.power.is_finite()) {
            return Err(Error::Config(format!(
                "interferer power must be non-negative, got {}",
                i.power
            )));
        }
        let a = upa_response(rx, i.az, i.el)?;
        q += (&a * a.adjoint()) * C64::new(i.power, 0.0);
    }
    Ok(q)
}

/// Assembles Q_n for the receive array. Requires positive white power, which
/// keeps Q_n positive definite.
pub fn noise_cov(cfg: &NoiseConfig, rx: &ArrayConfig) -> Result<NoiseModel> {
    if !(cfg.white_power > 0.0 && cfg.white_power.is_finite()) {
        return Err(Error::Config(format!(
            "white noise power must be positive, got {}",
            cfg.white_power
        )));
    }
    let q_n = assemble(cfg, rx)?;
    let sampler = GaussianSampler::new(&q_n)?;
    Ok(NoiseModel {
        config: cfg.clone(),
        q_n,
        sampler,
    })
}

impl NoiseModel {
    /// All-zero covariance, for noise-free bursts.
    pub fn noiseless(n_rx: usize) -> Self {
        let q_n = CMatrix::zeros(n_rx, n_rx);
        Self {
            config: NoiseConfig::white(0.0),
            sampler: GaussianSampler::Scaled { dim: n_rx, std: 0.0 },
            q_n,
        }
    }

    pub fn n_rx(&self) -> usize {
        self.q_n.nrows()
    }

    /// tr(Q_n) = E ||n[k]||^2
    pub fn trace(&self) -> f64 {
        self.q_n.trace().re
    }

    pub fn is_noiseless(&self) -> bool {
        self.config.white_power == 0.0 && self.config.interferers.iter().all(|i| i.power == 0.0)
    }

    /// Same spatial shape, every power multiplied by `factor`.
    pub fn scaled(&self, factor: f64, rx: &ArrayConfig) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::Range(format!("noise scale must be non-negative, got {factor}")));
        }
        if factor == 0.0 {
            return Ok(Self::noiseless(self.n_rx()));
        }
        let config = NoiseConfig {
            white_power: self.config.white_power * factor,
            interferers: self
                .config
                .interferers
                .iter()
                .map(|i| Interferer {
                    power: i.power * factor,
                    ..*i
                })
                .collect(),
        };
        noise_cov(&config, rx)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> crate::numerics::CVector {
        self.sampler.sample(rng)
    }
}

/// Noise scale s such that, with Q_n = s Q_shape, the average per-subcarrier
/// SNR over the given channels equals `target_snr_db`:
///
/// mean_i( pilot_power (1/N_K) sum_k ||H_i[k]||^2 ) / (s tr(Q_shape)) = SNR.
///
/// `mean_energies[i]` is (1/N_K) sum_k ||H_i[k]||^2. An infinite target
/// yields 0 (noise-free).
pub fn calibrate_noise(mean_energies: &[f64], pilot_power: f64, target_snr_db: f64, shape_trace: f64) -> Result<f64> {
    if mean_energies.is_empty() {
        return Err(Error::Degenerate("no channels to calibrate against".into()));
    }
    if target_snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !target_snr_db.is_finite() {
        return Err(Error::Range(format!("SNR target {target_snr_db} dB")));
    }
    let mean = mean_energies.iter().sum::<f64>() / mean_energies.len() as f64;
    if mean <= 0.0 || pilot_power <= 0.0 {
        return Err(Error::Degenerate("zero signal energy; SNR cannot be calibrated".into()));
    }
    if shape_trace <= 0.0 {
        return Err(Error::Degenerate("noise shape has zero trace".into()));
    }
    let snr = 10f64.powf(target_snr_db / 10.0);
    Ok(pilot_power * mean / (shape_trace * snr))
}

/// Pilot matrix, N_K x N_T (row k is x[k]^T).
pub fn gen_training<R: Rng + ?Sized>(wf: &Waveform, n_tx: usize, rng: &mut R) -> CMatrix {
    let std = wf.pilot_power.sqrt();
    match wf.pilots {
        PilotKind::Gaussian => {
            let mut x = CMatrix::zeros(wf.n_subcarriers, n_tx);
            for k in 0..wf.n_subcarriers {
                for t in 0..n_tx {
                    x[(k, t)] = standard_complex(rng) * std;
                }
            }
            x
        }
        PilotKind::ConstantModulus => {
            let a = std * std::f64::consts::FRAC_1_SQRT_2;
            let mut x = CMatrix::zeros(wf.n_subcarriers, n_tx);
            for k in 0..wf.n_subcarriers {
                for t in 0..n_tx {
                    let re = if rng.random::<bool>() { a } else { -a };
                    let im = if rng.random::<bool>() { a } else { -a };
                    x[(k, t)] = C64::new(re, im);
                }
            }
            x
        }
    }
}

/// Known pilots and what the receiver observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBurst {
    /// N_K x N_T
    pub pilots: CMatrix,
    /// N_K x N_R, row k is y[k]^T.
    pub received: CMatrix,
    pub pilot_power: f64,
}

impl TrainingBurst {
    pub fn n_subcarriers(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn n_rx(&self) -> usize {
        self.received.ncols()
    }
}

/// y[k] = H[k] x[k] + n[k], with an independent noise draw per subcarrier.
pub fn synth_burst<R: Rng + ?Sized>(
    h: &FreqChannel,
    pilots: &CMatrix,
    pilot_power: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<TrainingBurst> {
    let n_k = h.subcarriers.len();
    if pilots.nrows() != n_k {
        return Err(Error::Dimension(format!(
            "{} pilot rows for {n_k} subcarriers",
            pilots.nrows()
        )));
    }
    let (n_rx, n_tx) = h.subcarriers.first().map(|m| m.shape()).unwrap_or((0, 0));
    if pilots.ncols() != n_tx || noise.n_rx() != n_rx {
        return Err(Error::Dimension(format!(
            "channel is {n_rx}x{n_tx}, pilots have {} columns, noise is {}-dimensional",
            pilots.ncols(),
            noise.n_rx()
        )));
    }
    let mut received = CMatrix::zeros(n_k, n_rx);
    let noiseless = noise.is_noiseless();
    for (k, hk) in h.subcarriers.iter().enumerate() {
        let x = pilots.row(k).transpose();
        let mut y = hk * x;
        if !noiseless {
            y += noise.sample(rng);
        }
        received.set_row(k, &y.transpose());
    }
    Ok(TrainingBurst {
        pilots: pilots.clone(),
        received,
        pilot_power,
    })
}
