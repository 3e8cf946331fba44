//! MSE measurement, the projection-dimension bound, trajectory runs,
//! convergence sweeps and report files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airlink::{calibrate_noise, noise_cov, NoiseConfig, NoiseModel};
use crate::channel::{synth_taps, ArrayConfig, ChannelTaps, Dims, Waveform};
use crate::clustering::{ClusterModel, PositionGrouping, Silhouette};
use crate::error::{Error, Result};
use crate::estimator::{
    build_c_factors, build_projector, extract_bases, lr_filter, whiten, CorrelationAccumulator, RankRule, Ranks,
};
use crate::numerics::{db, stream_rng, CVector};
use crate::scenario::{observe, reference_trajectory, sample_passages, Location, Point3, Scenario};

/// ||h_true - h_est||^2 / ||h_true||^2
pub fn mse(h_true: &CVector, h_est: &CVector) -> Result<f64> {
    if h_true.len() != h_est.len() {
        return Err(Error::Dimension(format!(
            "lengths {} and {}",
            h_true.len(),
            h_est.len()
        )));
    }
    let e = h_true.norm_squared();
    if e == 0.0 {
        return Err(Error::Degenerate("true channel is zero".into()));
    }
    Ok((h_true - h_est).norm_squared() / e)
}

/// Noise fraction left after an exact orthogonal projection onto a separable
/// subspace of the given ranks: mse_uml r_T r_Tx r_Rx / (W N_T N_R).
pub fn lr_bound(dims: Dims, ranks: Ranks, mse_uml: f64) -> Result<f64> {
    let (t, tx, rx) = ranks;
    if t == 0 || tx == 0 || rx == 0 || t > dims.n_taps || tx > dims.n_tx || rx > dims.n_rx {
        return Err(Error::Range(format!("ranks {ranks:?} outside dims {dims:?}")));
    }
    Ok(mse_uml * (t * tx * rx) as f64 / dims.len() as f64)
}

/// Position-aware comparison: grid groups with their own projectors.
#[derive(Debug, Clone)]
pub struct PositionBaseline {
    pub grouping: PositionGrouping,
    pub model: ClusterModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    pub step_m: f64,
    pub n_repeats: usize,
    /// Defaults to the first non-training street.
    pub street: Option<usize>,
    pub snr_db: f64,
    pub noise_shape: NoiseConfig,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            step_m: 0.5,
            n_repeats: 50,
            street: None,
            snr_db: 0.0,
            noise_shape: NoiseConfig::white(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub position: Point3,
    pub region: usize,
    /// Most frequent cluster over the repeats.
    pub cluster: usize,
    /// Share of repeats assigned to `cluster`.
    pub cluster_share: f64,
    pub mse_uml: f64,
    pub mse_lr: f64,
    pub bound: f64,
    pub mse_position: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mse_uml: f64,
    pub mse_lr: f64,
    pub bound: f64,
    pub mse_uml_db: f64,
    pub mse_lr_db: f64,
    pub bound_db: f64,
    /// mse_uml / mse_lr in dB.
    pub gain_db: f64,
    /// mse_uml / bound in dB.
    pub bound_gain_db: f64,
    /// How far the LR MSE sits above the bound, dB.
    pub gap_db: f64,
    pub mse_position: Option<f64>,
    pub position_gain_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: Option<String>,
    pub seed: u64,
    pub snr_db: f64,
    pub step_m: f64,
    pub n_repeats: usize,
    pub k: usize,
    pub ranks: Vec<Ranks>,
    /// Run configuration as supplied by the caller.
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub meta: ReportMeta,
    pub aggregates: Option<Aggregates>,
    pub steps: Vec<StepResult>,
}

impl MseReport {
    fn aggregate(steps: &[StepResult]) -> Option<Aggregates> {
        if steps.is_empty() {
            return None;
        }
        let n = steps.len() as f64;
        let mean = |f: &dyn Fn(&StepResult) -> f64| steps.iter().map(f).sum::<f64>() / n;
        let (u, l, b) = (mean(&|s| s.mse_uml), mean(&|s| s.mse_lr), mean(&|s| s.bound));
        let pos = steps
            .iter()
            .map(|s| s.mse_position)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Some(Aggregates {
            mse_uml: u,
            mse_lr: l,
            bound: b,
            mse_uml_db: db(u),
            mse_lr_db: db(l),
            bound_db: db(b),
            gain_db: db(u / l),
            bound_gain_db: db(u / b),
            gap_db: db(l / b),
            mse_position: pos,
            position_gain_db: pos.map(|p| db(u / p)),
        })
    }
}

struct RepeatOutcome {
    energy: f64,
    err_uml: f64,
    err_lr: f64,
    err_bound: f64,
    err_position: Option<f64>,
    cluster: usize,
}

/// Fading for repeat `rep` of step `step`; identical in both passes.
fn step_channel(
    sc: &Scenario,
    loc: &Location,
    wf: &Waveform,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    seed: u64,
    step: usize,
    rep: usize,
) -> Result<ChannelTaps> {
    let paths = sc.paths_at(loc.position)?;
    let mut rng = stream_rng(seed, ((step as u64) << 32) | rep as u64);
    let fading = sc.draw_fading(&paths, &mut rng);
    synth_taps(&paths.fit_to_window(wf), &fading, tx, rx, wf)
}

/// Evaluates the clustered LR estimator along a trajectory held out from
/// training. Noise is calibrated over the trajectory channels to reach the
/// target SNR; every repeat draws fresh fading, pilots and noise.
pub fn run_trajectory<R: Rng + ?Sized>(
    sc: &Scenario,
    model: &ClusterModel,
    opts: &TrajectoryOptions,
    baseline: Option<&PositionBaseline>,
    rng: &mut R,
) -> Result<MseReport> {
    if opts.n_repeats == 0 {
        return Err(Error::Config("at least one repeat per step is required".into()));
    }
    let (wf, tx, rx) = (model.link.waveform, model.link.tx, model.link.rx);
    let dims = model.dims();
    if let Some(b) = baseline {
        if b.model.dims() != dims {
            return Err(Error::Dimension(
                "baseline model dims differ from the clustered model".into(),
            ));
        }
    }
    let seed = rng.random::<u64>();
    let fading_seed = rng.random::<u64>();
    let burst_seed = rng.random::<u64>();
    let traj = reference_trajectory(sc, opts.step_m, opts.street)?;
    let shape = noise_cov(&opts.noise_shape, &rx)?;

    let energies: Vec<f64> = traj
        .par_iter()
        .enumerate()
        .map(|(i, loc)| {
            (0..opts.n_repeats)
                .map(|r| Ok(step_channel(sc, loc, &wf, &tx, &rx, fading_seed, i, r)?.energy()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let noise = if traj.is_empty() {
        shape.scaled(0.0, &rx)?
    } else {
        shape.scaled(
            calibrate_noise(&energies, wf.pilot_power, opts.snr_db, shape.trace())?,
            &rx,
        )?
    };

    let steps: Vec<StepResult> = traj
        .par_iter()
        .enumerate()
        .map(|(i, loc)| {
            let mut brng = stream_rng(burst_seed, i as u64);
            let outcomes = (0..opts.n_repeats)
                .map(|r| {
                    let taps = step_channel(sc, loc, &wf, &tx, &rx, fading_seed, i, r)?;
                    let o = observe(&taps, &wf, &noise, &mut brng)?;
                    let (k, lr) = model.filter(&o.estimate)?;
                    let err_uml = (&taps.vectorized - &o.estimate.h_bar).norm_squared();
                    let err_position = match baseline {
                        Some(b) => {
                            let g = b.grouping.group_of([loc.position[0], loc.position[1]]);
                            let est = lr_filter(&b.model.clusters[g].projector, &o.estimate)?;
                            Some((&taps.vectorized - &est).norm_squared())
                        }
                        None => None,
                    };
                    Ok(RepeatOutcome {
                        energy: taps.vectorized.norm_squared(),
                        err_uml,
                        err_lr: (&taps.vectorized - &lr).norm_squared(),
                        err_bound: lr_bound(dims, model.clusters[k].ranks(), err_uml)?,
                        err_position,
                        cluster: k,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let energy: f64 = outcomes.iter().map(|o| o.energy).sum();
            if energy == 0.0 {
                return Err(Error::Degenerate(format!("zero channel energy at step {i}")));
            }
            let mut counts = vec![0usize; model.k()];
            for o in &outcomes {
                counts[o.cluster] += 1;
            }
            let cluster = (0..counts.len())
                .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
                .unwrap();
            let sum = |f: &dyn Fn(&RepeatOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / energy;
            Ok(StepResult {
                step: i,
                position: loc.position,
                region: loc.region,
                cluster,
                cluster_share: counts[cluster] as f64 / opts.n_repeats as f64,
                mse_uml: sum(&|o| o.err_uml),
                mse_lr: sum(&|o| o.err_lr),
                bound: sum(&|o| o.err_bound),
                mse_position: baseline.map(|_| sum(&|o| o.err_position.unwrap_or(0.0))),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MseReport {
        meta: ReportMeta {
            config_hash: model.config_hash.clone(),
            seed,
            snr_db: opts.snr_db,
            step_m: opts.step_m,
            n_repeats: opts.n_repeats,
            k: model.k(),
            ranks: model.clusters.iter().map(|c| c.ranks()).collect(),
            config: None,
        },
        aggregates: MseReport::aggregate(&steps),
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub region: usize,
    /// Held-out bursts scored at every L.
    pub n_test: usize,
    pub rule: RankRule,
    pub noise_shape: NoiseConfig,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            region: 0,
            n_test: 200,
            rule: RankRule::default(),
            noise_shape: NoiseConfig::white(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub l: usize,
    pub mse_uml: f64,
    pub mse_lr: f64,
    pub gain_db: f64,
    pub ranks: Ranks,
}

/// Single-region LR gain against the number of training sequences L. All
/// L share one pool of training bursts (the first L are used) and one test
/// set.
#[allow(clippy::too_many_arguments)]
pub fn sweep_convergence<R: Rng + ?Sized>(
    sc: &Scenario,
    wf: &Waveform,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    snr_db: f64,
    l_values: &[usize],
    opts: &SweepOptions,
    rng: &mut R,
) -> Result<Vec<SweepRow>> {
    if l_values.is_empty() {
        return Err(Error::Config("no L values to sweep".into()));
    }
    if l_values.windows(2).any(|w| w[1] <= w[0]) || l_values[0] == 0 {
        return Err(Error::Config(format!(
            "L values must be positive and ascending, got {l_values:?}"
        )));
    }
    if opts.region >= sc.n_regions() {
        return Err(Error::Config(format!("no region {}", opts.region)));
    }
    if opts.n_test == 0 {
        return Err(Error::Config("the test set is empty".into()));
    }
    opts.rule.validate()?;
    let l_max = *l_values.last().unwrap();
    let want = l_max + opts.n_test;
    let mut passages = Vec::with_capacity(want);
    let mut tries = 0usize;
    while passages.len() < want {
        tries += 1;
        if tries > 1000 {
            return Err(Error::Degenerate(format!("region {} is never visited", opts.region)));
        }
        passages.extend(
            sample_passages(sc, 4 * want, rng)?
                .into_iter()
                .filter(|p| p.location.region == opts.region),
        );
    }
    passages.truncate(want);
    let taps: Vec<ChannelTaps> = passages
        .par_iter()
        .map(|p| synth_taps(&p.paths.fit_to_window(wf), &p.fading, tx, rx, wf))
        .collect::<Result<_>>()?;
    let shape = noise_cov(&opts.noise_shape, rx)?;
    let energies: Vec<f64> = taps.iter().map(|t| t.energy()).collect();
    let noise: NoiseModel = shape.scaled(calibrate_noise(&energies, wf.pilot_power, snr_db, shape.trace())?, rx)?;
    let c = build_c_factors(&noise, &shape.q_n, wf.pilot_power)?;
    let burst_seed = rng.random::<u64>();
    let estimates = taps
        .par_iter()
        .enumerate()
        .map(|(i, t)| observe(t, wf, &noise, &mut stream_rng(burst_seed, i as u64)).map(|o| o.estimate))
        .collect::<Result<Vec<_>>>()?;
    let seqs = estimates.iter().map(|e| whiten(e, &c)).collect::<Result<Vec<_>>>()?;
    let test = l_max..want;
    let energy: f64 = test.clone().map(|i| taps[i].vectorized.norm_squared()).sum();
    let err_uml: f64 = test
        .clone()
        .map(|i| (&taps[i].vectorized - &estimates[i].h_bar).norm_squared())
        .sum();

    let dims = Dims::from_config(wf, tx, rx);
    let mut acc = CorrelationAccumulator::new(dims);
    let mut rows = Vec::with_capacity(l_values.len());
    let mut fed = 0;
    for &l in l_values {
        for s in &seqs[fed..l] {
            acc.accumulate(s)?;
        }
        fed = l;
        let bases = extract_bases(&acc, &opts.rule)?;
        let proj = build_projector(&bases, &c)?;
        let err_lr: f64 = test
            .clone()
            .into_par_iter()
            .map(|i| Ok((&taps[i].vectorized - &lr_filter(&proj, &estimates[i])?).norm_squared()))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        let (u, lr) = (err_uml / energy, err_lr / energy);
        rows.push(SweepRow {
            l,
            mse_uml: u,
            mse_lr: lr,
            gain_db: db(u / lr),
            ranks: bases.ranks(),
        });
    }
    Ok(rows)
}

/// Column order of the trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 11] = [
    "step",
    "x",
    "y",
    "z",
    "region",
    "cluster",
    "cluster_share",
    "mse_uml",
    "mse_lr",
    "bound",
    "mse_position",
];

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// CSV with an optional `# config_hash=...` comment line before the header.
fn write_csv<const N: usize>(
    path: &FsPath,
    config_hash: Option<&str>,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let mut out = create(path)?;
    if let Some(h) = config_hash {
        writeln!(out, "# config_hash={h}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `trajectory.csv` and `report.json` into `dir`.
pub fn emit_report(report: &MseReport, dir: &FsPath) -> Result<Vec<PathBuf>> {
    let csv = dir.join("trajectory.csv");
    write_csv(
        &csv,
        report.meta.config_hash.as_deref(),
        TRAJECTORY_COLUMNS,
        report.steps.iter().map(|s| {
            [
                s.step.to_string(),
                s.position[0].to_string(),
                s.position[1].to_string(),
                s.position[2].to_string(),
                s.region.to_string(),
                s.cluster.to_string(),
                s.cluster_share.to_string(),
                s.mse_uml.to_string(),
                s.mse_lr.to_string(),
                s.bound.to_string(),
                opt(s.mse_position),
            ]
        }),
    )?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::format(&json, e.to_string()))?;
    let mut out = create(&json)?;
    writeln!(out, "{text}").map_err(|e| Error::io(&json, e))?;
    out.flush().map_err(|e| Error::io(&json, e))?;
    Ok(vec![csv, json])
}

/// One row per point: cluster, rank within its cluster, coefficient.
pub fn write_silhouette_csv(sil: &Silhouette, path: &FsPath, config_hash: Option<&str>) -> Result<()> {
    write_csv(
        path,
        config_hash,
        ["cluster", "rank", "coefficient"],
        sil.per_cluster.iter().enumerate().flat_map(|(c, v)| {
            v.iter()
                .enumerate()
                .map(move |(i, s)| [c.to_string(), i.to_string(), s.to_string()])
        }),
    )
}

/// Training points with their ground-truth region and learned cluster.
pub fn write_assignment_csv(
    locations: &[Location],
    assignment: &[usize],
    path: &FsPath,
    config_hash: Option<&str>,
) -> Result<()> {
    if locations.len() != assignment.len() {
        return Err(Error::Dimension(format!(
            "{} locations, {} labels",
            locations.len(),
            assignment.len()
        )));
    }
    write_csv(
        path,
        config_hash,
        ["index", "x", "y", "z", "region", "cluster"],
        locations.iter().zip(assignment).enumerate().map(|(i, (l, a))| {
            [
                i.to_string(),
                l.position[0].to_string(),
                l.position[1].to_string(),
                l.position[2].to_string(),
                l.region.to_string(),
                a.to_string(),
            ]
        }),
    )
}

/// Sweep rows, optionally tagged with the seed that produced them.
pub fn write_sweep_csv(rows: &[(u64, SweepRow)], path: &FsPath, config_hash: Option<&str>) -> Result<()> {
    write_csv(
        path,
        config_hash,
        [
            "seed", "l", "mse_uml", "mse_lr", "gain_db", "rank_t", "rank_tx", "rank_rx",
        ],
        rows.iter().map(|(seed, r)| {
            [
                seed.to_string(),
                r.l.to_string(),
                r.mse_uml.to_string(),
                r.mse_lr.to_string(),
                r.gain_db.to_string(),
                r.ranks.0.to_string(),
                r.ranks.1.to_string(),
                r.ranks.2.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::C64;

    #[test]
    fn mse_arithmetic() {
        let h = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0)]);
        assert_eq!(mse(&h, &h).unwrap(), 0.0);
        assert_eq!(mse(&h, &CVector::zeros(2)).unwrap(), 1.0);
        let e = CVector::from_vec(vec![C64::new(0.5, 0.0), C64::new(0.0, 0.5)]);
        assert!((mse(&h, &(&h + &e)).unwrap() - 0.1).abs() < 1e-15);
        assert!(mse(&CVector::zeros(2), &h).is_err());
    }

    #[test]
    fn bound_arithmetic() {
        let d = Dims::new(1, 16, 64);
        assert_eq!(lr_bound(d, (1, 16, 64), 0.3).unwrap(), 0.3);
        let b = lr_bound(d, (1, 3, 3), 1.0).unwrap();
        assert!((db(b) + 20.56).abs() < 0.01);
        assert!(lr_bound(d, (2, 3, 3), 1.0).is_err());
    }

    #[test]
    fn empty_report_files() {
        let r = MseReport {
            meta: ReportMeta {
                config_hash: None,
                seed: 1,
                snr_db: 0.0,
                step_m: 0.5,
                n_repeats: 1,
                k: 1,
                ranks: vec![(1, 1, 1)],
                config: None,
            },
            aggregates: None,
            steps: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        let csv = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(csv.trim_end(), TRAJECTORY_COLUMNS.join(","));
        let back: MseReport = serde_json::from_str(&std::fs::read_to_string(&files[1]).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
