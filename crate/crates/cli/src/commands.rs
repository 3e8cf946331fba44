use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mvlr_core::airlink::noise_cov;
use mvlr_core::clustering::{
    clara, dissimilarity_matrix, group_by_position, label_agreement, pam, select_k_by, silhouette, train_models,
};
use mvlr_core::estimator::{build_c_factors, whiten};
use mvlr_core::eval::{
    emit_report, run_trajectory, sweep_convergence, write_assignment_csv, write_silhouette_csv, write_sweep_csv,
    PositionBaseline,
};
use mvlr_core::numerics::{stream_rng, SimRng};
use mvlr_core::scenario::{generate_dataset, read_dataset, write_dataset, DatasetOptions};
use mvlr_core::{
    ClusterModel, ClusteringResult, Dataset, Error, Result, Silhouette, SweepOptions, TrainOptions, TrajectoryOptions,
    WhitenedSeq,
};
use serde::Serialize;

use crate::config::{Algorithm, RunConfig};
/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use crate::{BaselineArg, Cli, Command, DatasetArgs, EvalArgs, SweepArgs, TrainArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.json";
pub const SUMMARY_FILE: &str = "summary.json";

// independent random streams per command
const STREAM_DATASET: u64 = 0;
const STREAM_CLUSTER: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_SWEEP: u64 = 1 << 16;

/// Silhouettes beyond this many points are computed on a random subsample
/// when the full dissimilarity matrix was not built.
const SILHOUETTE_SAMPLE: usize = 1000;

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // a pool that already exists (repeated calls in one process) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = RunConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    if let Some(seed) = cli.common.seed {
        cfg.dataset.seed = seed;
    }
    match cli.command {
        Command::Dataset(a) => {
            if let Some(s) = a.snr_db {
                cfg.dataset.snr_db = s;
            }
            cfg.validate()?;
            cmd_dataset(&cfg, &a).map(|_| ())
        }
        Command::Train(a) => {
            if let Some(alg) = a.algorithm {
                cfg.clustering.algorithm = alg.into();
            }
            if let Some(k) = a.k {
                cfg.clustering.k = k;
                cfg.clustering.k_range = None;
            }
            if let Some(r) = a.k_range {
                cfg.clustering.k_range = Some([r.0, r.1]);
            }
            cfg.validate()?;
            cmd_train(&cfg, &a).map(|_| ())
        }
        Command::Eval(a) => {
            if let Some(s) = a.snr_db {
                cfg.eval.snr_db = Some(s);
            }
            cfg.validate()?;
            cmd_eval(&cfg, &a).map(|_| ())
        }
        Command::Sweep(a) => {
            if let Some(s) = a.snr_db {
                cfg.dataset.snr_db = s;
            }
            cfg.validate()?;
            cmd_sweep(&cfg, &a).map(|_| ())
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let hash = cfg.hash()?;
    let path = dir.join(CONFIG_FILE);
    let text = format!("# config_hash = \"{hash}\"\n{}", cfg.canonical()?);
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(hash)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn rng_for(cfg: &RunConfig, stream: u64) -> SimRng {
    stream_rng(cfg.dataset.seed, stream)
}

/// Generates a dataset into `args.out`.
pub fn cmd_dataset(cfg: &RunConfig, args: &DatasetArgs) -> Result<PathBuf> {
    let start = Instant::now();
    let sc = cfg.build_scenario()?;
    let hash = prepare_out(&args.out, cfg)?;
    let mut rng = rng_for(cfg, STREAM_DATASET);
    let ds = generate_dataset(
        &sc,
        &cfg.waveform,
        &cfg.arrays.tx,
        &cfg.arrays.rx,
        &cfg.noise,
        cfg.dataset.snr_db,
        cfg.dataset.n,
        &DatasetOptions::default(),
        &mut rng,
    )?;
    let manifest = write_dataset(&ds, &args.out, Some(&hash))?;
    say!(
        "dataset: {} passages, {} regions, target SNR {} dB, measured {} dB",
        manifest.n,
        sc.n_regions(),
        cfg.dataset.snr_db,
        ds.measured_snr_db
    );
    say!("records sha256 {}", manifest.records_sha256);
    eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    Ok(args.out.clone())
}

fn whiten_dataset(ds: &Dataset) -> Result<(mvlr_core::CFactors, Vec<WhitenedSeq>)> {
    let shape = noise_cov(&ds.noise_shape, &ds.rx)?;
    let c = build_c_factors(&ds.noise, &shape.q_n, ds.waveform.pilot_power)?;
    let seqs = ds
        .records
        .iter()
        .map(|r| whiten(&r.estimate, &c))
        .collect::<Result<Vec<_>>>()?;
    Ok((c, seqs))
}

#[derive(Debug, Serialize)]
struct KRow {
    k: usize,
    total_dissimilarity: f64,
    mean_silhouette: f64,
    min_cluster_size: usize,
    admissible: bool,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    config_hash: String,
    n: usize,
    algorithm: Algorithm,
    k: usize,
    sizes: Vec<usize>,
    ranks: Vec<(usize, usize, usize)>,
    total_dissimilarity: f64,
    mean_silhouette: Option<f64>,
    /// Agreement with the ground-truth regions under the best relabeling.
    region_agreement: f64,
    k_selection: Vec<KRow>,
    elapsed_s: f64,
}

fn subsample_silhouette(seqs: &[WhitenedSeq], clustering: &ClusteringResult, rng: &mut SimRng) -> Result<Silhouette> {
    let n = seqs.len();
    let idx: Vec<usize> = if n <= SILHOUETTE_SAMPLE {
        (0..n).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, n, SILHOUETTE_SAMPLE).into_vec();
        v.sort_unstable();
        v
    };
    let sub: Vec<WhitenedSeq> = idx.iter().map(|&i| seqs[i].clone()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| clustering.assignment[i]).collect();
    silhouette(&dissimilarity_matrix(&sub)?, &labels)
}

/// Clusters a dataset and writes the model with its diagnostics.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<PathBuf> {
    let start = Instant::now();
    let ds = read_dataset(&args.dataset)?;
    if ds.dims() != cfg.dims() {
        return Err(Error::Config(format!(
            "dataset dims {:?} do not match the configured link {:?}",
            ds.dims(),
            cfg.dims()
        )));
    }
    let hash = prepare_out(&args.out, cfg)?;
    let cl = &cfg.clustering;
    let (c, seqs) = whiten_dataset(&ds)?;
    let mut rng = rng_for(cfg, STREAM_CLUSTER);

    let mut k_table = vec![];
    let (clustering, sil) = match (cl.k_range, cl.algorithm) {
        (Some([lo, hi]), alg) => {
            let d = dissimilarity_matrix(&seqs)?;
            let sel = select_k_by(&d, lo..=hi, cl.balance_floor, |k| match alg {
                Algorithm::Pam => pam(&d, k),
                Algorithm::Clara => clara(&seqs, k, &cl.clara, &mut rng),
            })?;
            k_table = sel
                .table
                .iter()
                .map(|r| KRow {
                    k: r.k,
                    total_dissimilarity: r.total_dissimilarity,
                    mean_silhouette: r.mean_silhouette,
                    min_cluster_size: r.min_cluster_size,
                    admissible: r.admissible,
                })
                .collect();
            (sel.result, Some(sel.silhouette))
        }
        (None, Algorithm::Pam) => {
            let d = dissimilarity_matrix(&seqs)?;
            let r = pam(&d, cl.k)?;
            let s = if cl.k >= 2 {
                Some(silhouette(&d, &r.assignment)?)
            } else {
                None
            };
            (r, s)
        }
        (None, Algorithm::Clara) => {
            let r = clara(&seqs, cl.k, &cl.clara, &mut rng)?;
            let s = if cl.k >= 2 {
                match subsample_silhouette(&seqs, &r, &mut rng) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        eprintln!("warning: silhouette skipped: {e}");
                        None
                    }
                }
            } else {
                None
            };
            (r, s)
        }
    };

    let link = mvlr_core::LinkConfig {
        waveform: ds.waveform,
        tx: ds.tx,
        rx: ds.rx,
    };
    let opts = TrainOptions {
        rule: cl.rank_rule,
        l_min: cl.l_min,
        allow_undersized: false,
    };
    let mut model = train_models(&seqs, &clustering, &link, &c, &opts)?;
    model.config_hash = Some(hash.clone());
    let model_path = args.out.join(MODEL_FILE);
    model.save(&model_path)?;

    let locations: Vec<_> = ds.records.iter().map(|r| r.location).collect();
    write_assignment_csv(
        &locations,
        &clustering.assignment,
        &args.out.join("assignments.csv"),
        Some(&hash),
    )?;
    if let Some(s) = &sil {
        write_silhouette_csv(s, &args.out.join("silhouette.csv"), Some(&hash))?;
    }
    let regions: Vec<usize> = locations.iter().map(|l| l.region).collect();
    let summary = TrainSummary {
        config_hash: hash,
        n: ds.len(),
        algorithm: cl.algorithm,
        k: model.k(),
        sizes: clustering.sizes(),
        ranks: model.clusters.iter().map(|c| c.ranks()).collect(),
        total_dissimilarity: clustering.total_dissimilarity,
        mean_silhouette: sil.as_ref().map(|s| s.mean),
        region_agreement: label_agreement(&clustering.assignment, &regions)?,
        k_selection: k_table,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    write_json(&args.out.join(SUMMARY_FILE), &summary)?;

    for row in &summary.k_selection {
        say!(
            "K={:<3} silhouette {:.4}  smallest cluster {:<5}{}",
            row.k,
            row.mean_silhouette,
            row.min_cluster_size,
            if row.admissible { "" } else { "  (below balance floor)" }
        );
    }
    say!("K = {}, cluster sizes {:?}", summary.k, summary.sizes);
    say!("ranks (T, Tx, Rx) {:?}", summary.ranks);
    if let Some(m) = summary.mean_silhouette {
        say!("mean silhouette {m:.4}");
    }
    say!("region agreement {:.4}", summary.region_agreement);
    eprintln!("elapsed {:.2} s", summary.elapsed_s);
    Ok(model_path)
}

fn position_baseline(cfg: &RunConfig, model: &ClusterModel, dir: &Path) -> Result<PositionBaseline> {
    let ds = read_dataset(dir)?;
    if ds.dims() != model.dims() {
        return Err(Error::Config(format!(
            "baseline dataset dims {:?} do not match the model {:?}",
            ds.dims(),
            model.dims()
        )));
    }
    let (c, seqs) = whiten_dataset(&ds)?;
    let positions: Vec<_> = ds.records.iter().map(|r| r.location.position).collect();
    let cl = &cfg.clustering;
    let grouping = group_by_position(&positions, cl.cell_size_m, cl.cell_origin, cl.l_min)?;
    let opts = TrainOptions {
        rule: cl.rank_rule,
        l_min: cl.l_min,
        allow_undersized: true,
    };
    let model = train_models(&seqs, &grouping.as_clustering(), &model.link, &c, &opts)?;
    Ok(PositionBaseline { grouping, model })
}

/// Scores a trained model along the reference trajectory.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<PathBuf> {
    let start = Instant::now();
    let model = ClusterModel::load(&args.model)?;
    if model.dims() != cfg.dims() {
        return Err(Error::Config(format!(
            "model dims {:?} do not match the configured link {:?}",
            model.dims(),
            cfg.dims()
        )));
    }
    let hash = prepare_out(&args.out, cfg)?;
    if let Some(h) = &model.config_hash {
        if *h != hash {
            eprintln!("note: model was trained under configuration {h}");
        }
    }
    let baseline = match (args.baseline, &args.dataset) {
        (Some(BaselineArg::PositionAware), Some(dir)) => Some(position_baseline(cfg, &model, dir)?),
        (Some(BaselineArg::PositionAware), None) => {
            return Err(Error::Config("--baseline position-aware needs --dataset".into()))
        }
        (None, _) => None,
    };
    let sc = cfg.build_scenario()?;
    let opts = TrajectoryOptions {
        step_m: cfg.eval.step_m,
        n_repeats: cfg.eval.n_repeats,
        street: cfg.eval.street,
        snr_db: cfg.eval_snr_db(),
        noise_shape: cfg.noise.clone(),
    };
    let mut rng = rng_for(cfg, STREAM_EVAL);
    let mut report = run_trajectory(&sc, &model, &opts, baseline.as_ref(), &mut rng)?;
    report.meta.config_hash = Some(hash);
    report.meta.config = serde_json::to_value(cfg).ok();
    emit_report(&report, &args.out)?;

    say!(
        "steps {}, repeats {}, SNR {} dB",
        report.steps.len(),
        opts.n_repeats,
        opts.snr_db
    );
    if let Some(a) = &report.aggregates {
        say!("mean U-ML MSE {:.3} dB", a.mse_uml_db);
        say!("mean LR MSE   {:.3} dB", a.mse_lr_db);
        say!("gain          {:.3} dB", a.gain_db);
        say!("bound         {:.3} dB (gain {:.3} dB)", a.bound_db, a.bound_gain_db);
        if let (Some(p), Some(g)) = (a.mse_position, a.position_gain_db) {
            say!("position-aware LR MSE {:.3} dB (gain {:.3} dB)", 10.0 * p.log10(), g);
        }
    }
    eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    Ok(args.out.clone())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Serialize)]
struct SweepMedian {
    l: usize,
    median_gain_db: f64,
}

/// Convergence of the single-region gain in L, one run per seed.
pub fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<PathBuf> {
    let start = Instant::now();
    let sc = cfg.build_scenario()?;
    let hash = prepare_out(&args.out, cfg)?;
    let opts = SweepOptions {
        region: cfg.sweep.region,
        n_test: cfg.sweep.n_test,
        rule: cfg.clustering.rank_rule,
        noise_shape: cfg.noise.clone(),
    };
    let mut rows = vec![];
    for s in 0..cfg.sweep.seeds as u64 {
        let mut rng = rng_for(cfg, STREAM_SWEEP + s);
        let out = sweep_convergence(
            &sc,
            &cfg.waveform,
            &cfg.arrays.tx,
            &cfg.arrays.rx,
            cfg.dataset.snr_db,
            &cfg.sweep.l_values,
            &opts,
            &mut rng,
        )?;
        rows.extend(out.into_iter().map(|r| (s, r)));
    }
    write_sweep_csv(&rows, &args.out.join("sweep.csv"), Some(&hash))?;
    let medians: Vec<SweepMedian> = cfg
        .sweep
        .l_values
        .iter()
        .map(|&l| {
            let mut g: Vec<f64> = rows.iter().filter(|(_, r)| r.l == l).map(|(_, r)| r.gain_db).collect();
            SweepMedian {
                l,
                median_gain_db: median(&mut g),
            }
        })
        .collect();
    write_json(
        &args.out.join(SUMMARY_FILE),
        &serde_json::json!({ "config_hash": hash, "seeds": cfg.sweep.seeds, "medians": medians }),
    )?;
    say!("{:>8}  {:>16}", "L", "median gain (dB)");
    for m in &medians {
        say!("{:>8}  {:>16.3}", m.l, m.median_gain_db);
    }
    eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    Ok(args.out.clone())
}
