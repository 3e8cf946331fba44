//! Synthetic radio cell: a base station, street polylines, facade scatterers
//! and regions with their own multipath geometry, plus dataset generation
//! from recurrent passages.
//!
//! The link is uplink: the vehicle array transmits, the base station array
//! receives. A path's `aod` is therefore measured at the vehicle and its
//! `aoa` at the base station.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airlink::{calibrate_noise, gen_training, noise_cov, synth_burst, NoiseConfig, NoiseModel, TrainingBurst};
use crate::channel::{
    synth_taps, taps_to_frequency, ArrayConfig, ChannelTaps, Dims, Direction, FadingDraw, Path, PathSet, Waveform,
};
use crate::error::{Error, Result};
use crate::estimator::{uml_estimate, UmlEstimate};
use crate::numerics::{stream_rng, CVector, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Positions closer than this to a street count as on it, meters.
pub const ON_STREET_TOL: f64 = 1e-3;

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Street {
    #[serde(default)]
    pub name: String,
    pub points: Vec<Point2>,
    /// Passages for training are drawn from training streets only.
    #[serde(default = "yes")]
    pub training: bool,
}

fn yes() -> bool {
    true
}

/// Vertical building face along a polyline; scatterers sit on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facade {
    pub points: Vec<Point2>,
    pub height_min: f64,
    pub height_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    pub position: Point3,
    /// Map azimuth of the array normal, degrees counter-clockwise from +x.
    pub broadside_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeConfig {
    pub height: f64,
    /// Rotation of the array normal away from the driving direction, degrees.
    #[serde(default)]
    pub mount_offset_deg: f64,
}

/// Where region anchors go. Regions are the nearest-anchor cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum RegionLayout {
    /// Centers of `count` equal-length pieces of the training streets.
    Even {
        count: usize,
    },
    /// Points on the training streets whose line-of-sight horizontal
    /// direction cosine at the base station equals
    /// `spacing * (i - (count - 1) / 2)`.
    BeamGrid {
        count: usize,
        spacing: f64,
    },
    Anchors {
        points: Vec<Point2>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryMode {
    /// Every position in a region sees the path set of the region anchor.
    #[default]
    RegionConstant,
    /// Angles and delays follow the actual position; scatterers stay fixed.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub min_paths: usize,
    pub max_paths: usize,
    /// Share of the total power carried by the line-of-sight path.
    pub los_power: f64,
    /// Rician K-factor of the line-of-sight gain, dB. `None` gives
    /// Rayleigh fading on every path.
    pub los_k_factor_db: Option<f64>,
    /// Reflection weights are drawn from this range, then normalized.
    pub reflection_weight: [f64; 2],
    pub max_excess_delay_s: f64,
    pub min_delay_separation_s: f64,
    /// Minimum distance between the array-plane direction cosines of two
    /// paths of one region, at either array.
    pub min_path_separation: f64,
    /// Minimum distance, at the base station, between a reflection and any
    /// path of another region.
    pub min_region_separation: f64,
    pub max_attempts: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            min_paths: 3,
            max_paths: 4,
            los_power: 0.6,
            los_k_factor_db: Some(10.0),
            reflection_weight: [0.6, 1.0],
            max_excess_delay_s: 100e-9,
            min_delay_separation_s: 20e-9,
            min_path_separation: 0.25,
            min_region_separation: 0.12,
            max_attempts: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub bs: BsConfig,
    pub ue: UeConfig,
    pub streets: Vec<Street>,
    #[serde(default)]
    pub facades: Vec<Facade>,
    pub regions: RegionLayout,
    #[serde(default)]
    pub paths: PathConfig,
    #[serde(default)]
    pub mode: GeometryMode,
}

fn arc(radius: f64, from_deg: f64, to_deg: f64, pieces: usize) -> Vec<Point2> {
    (0..=pieces)
        .map(|i| {
            let phi = (from_deg + (to_deg - from_deg) * i as f64 / pieces as f64).to_radians();
            [radius * phi.sin(), radius * phi.cos()]
        })
        .collect()
}

impl Default for ScenarioConfig {
    /// A curved avenue 30 m in front of a 6 m base station, an inner
    /// reference lane and a building row behind the avenue.
    fn default() -> Self {
        Self {
            bs: BsConfig {
                position: [0.0, 0.0, 6.0],
                broadside_deg: 90.0,
            },
            ue: UeConfig {
                height: 1.5,
                mount_offset_deg: 0.0,
            },
            streets: vec![
                Street {
                    name: "avenue".into(),
                    points: arc(30.0, -62.0, 62.0, 32),
                    training: true,
                },
                Street {
                    name: "reference".into(),
                    points: arc(26.5, -62.0, 62.0, 32),
                    training: false,
                },
            ],
            facades: vec![Facade {
                points: arc(34.0, -85.0, 85.0, 34),
                height_min: 0.0,
                height_max: 25.0,
            }],
            regions: RegionLayout::BeamGrid {
                count: 7,
                spacing: 0.25,
            },
            paths: PathConfig::default(),
            mode: GeometryMode::RegionConstant,
        }
    }
}

impl ScenarioConfig {
    /// One straight street along x with `regions` equal segments.
    pub fn straight(length: f64, regions: usize) -> Self {
        Self {
            streets: vec![Street {
                name: "street".into(),
                points: vec![[-length / 2.0, 0.0], [length / 2.0, 0.0]],
                training: true,
            }],
            facades: vec![Facade {
                points: vec![[-length / 2.0 - 20.0, 6.0], [length / 2.0 + 20.0, 6.0]],
                height_min: 0.0,
                height_max: 20.0,
            }],
            bs: BsConfig {
                position: [0.0, -20.0, 6.0],
                broadside_deg: 90.0,
            },
            regions: RegionLayout::Even { count: regions },
            ..Self::default()
        }
    }
}

fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Orientation of a planar array: horizontal broadside and left-hand axis.
#[derive(Debug, Clone, Copy)]
struct Frame {
    broadside: Point3,
    lateral: Point3,
}

impl Frame {
    fn from_azimuth(az: f64) -> Self {
        Self {
            broadside: [az.cos(), az.sin(), 0.0],
            lateral: [-az.sin(), az.cos(), 0.0],
        }
    }

    /// Direction of the unit vector `u` in array coordinates.
    fn direction(&self, u: Point3) -> Direction {
        let az = dot3(u, self.lateral).atan2(dot3(u, self.broadside));
        let el = u[2].clamp(-1.0, 1.0).asin();
        Direction { az, el }
    }
}

/// Array-plane direction cosines (cos el sin az, sin el), the coordinates a
/// planar array actually resolves.
pub fn direction_cosines(d: Direction) -> Point2 {
    [d.el.cos() * d.az.sin(), d.el.sin()]
}

fn cosine_distance(a: Direction, b: Direction) -> f64 {
    let (p, q) = (direction_cosines(a), direction_cosines(b));
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
struct Polyline {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(points: &[Point2]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("a polyline needs at least two points".into()));
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let l = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if !(l > 0.0) {
                return Err(Error::Config("polyline with a zero-length segment".into()));
            }
            cumulative.push(cumulative.last().unwrap() + l);
        }
        Ok(Self {
            points: points.to_vec(),
            cumulative,
        })
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and unit heading at arc length `s` (clamped).
    fn at(&self, s: f64) -> (Point2, Point2) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.iter().position(|&c| c >= s) {
            Some(0) => 1,
            Some(i) => i,
            None => self.points.len() - 1,
        };
        let (a, b) = (self.points[i - 1], self.points[i]);
        let l = self.cumulative[i] - self.cumulative[i - 1];
        let f = (s - self.cumulative[i - 1]) / l;
        let dir = [(b[0] - a[0]) / l, (b[1] - a[1]) / l];
        ([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], dir)
    }

    /// (distance, arc length, heading) of the closest point to `p`.
    fn project(&self, p: Point2) -> (f64, f64, Point2) {
        let mut best = (f64::INFINITY, 0.0, [1.0, 0.0]);
        for i in 1..self.points.len() {
            let (a, b) = (self.points[i - 1], self.points[i]);
            let l = self.cumulative[i] - self.cumulative[i - 1];
            let dir = [(b[0] - a[0]) / l, (b[1] - a[1]) / l];
            let t = ((p[0] - a[0]) * dir[0] + (p[1] - a[1]) * dir[1]).clamp(0.0, l);
            let q = [a[0] + t * dir[0], a[1] + t * dir[1]];
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d < best.0 {
                best = (d, self.cumulative[i - 1] + t, dir);
            }
        }
        best
    }
}

/// Point scatterer with the power share of its path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point3,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    pub anchor: Point2,
    pub anchor_street: usize,
    pub anchor_heading: Point2,
    pub los_power: f64,
    pub scatterers: Vec<Scatterer>,
    /// Path set seen at the anchor.
    pub paths: PathSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub regions: Vec<Region>,
    streets: Vec<Polyline>,
    bs_frame_az: f64,
}

/// A point on the street network with its ground-truth region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub position: Point3,
    pub street: usize,
    pub region: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub location: Location,
    pub paths: PathSet,
    pub fading: FadingDraw,
}

impl Scenario {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn street_length(&self, street: usize) -> f64 {
        self.streets[street].length()
    }

    /// Ground position at arc length `s` of a street, at vehicle height.
    pub fn point_on_street(&self, street: usize, s: f64) -> Result<Point3> {
        let line = self
            .streets
            .get(street)
            .ok_or_else(|| Error::Domain(format!("no street {street}")))?;
        let (p, _) = line.at(s);
        Ok([p[0], p[1], self.config.ue.height])
    }

    /// Nearest-anchor region of a ground point; ties go to the lowest id.
    pub fn region_of(&self, p: Point2) -> usize {
        let mut best = (f64::INFINITY, 0);
        for r in &self.regions {
            let d = (p[0] - r.anchor[0]).powi(2) + (p[1] - r.anchor[1]).powi(2);
            if d < best.0 {
                best = (d, r.id);
            }
        }
        best.1
    }

    /// Street, heading and region at a position.
    pub fn locate(&self, position: Point3) -> Result<(Location, Point2)> {
        let p = [position[0], position[1]];
        let mut best = (f64::INFINITY, 0, [1.0, 0.0]);
        for (i, line) in self.streets.iter().enumerate() {
            let (d, _, heading) = line.project(p);
            if d < best.0 {
                best = (d, i, heading);
            }
        }
        if !(best.0 <= ON_STREET_TOL) {
            return Err(Error::Domain(format!(
                "({:.3}, {:.3}) is {:.3} m from the nearest street",
                p[0], p[1], best.0
            )));
        }
        Ok((
            Location {
                position,
                street: best.1,
                region: self.region_of(p),
            },
            best.2,
        ))
    }

    fn ue_frame(&self, heading: Point2) -> Frame {
        let az = heading[1].atan2(heading[0]) + self.config.ue.mount_offset_deg.to_radians();
        Frame::from_azimuth(az)
    }

    fn bs_frame(&self) -> Frame {
        Frame::from_azimuth(self.bs_frame_az)
    }

    /// LOS plus one path per scatterer, as seen from `ue` with the given
    /// heading.
    fn geometry(&self, ue: Point3, heading: Point2, los_power: f64, scatterers: &[Scatterer]) -> PathSet {
        let bs = self.config.bs.position;
        let (uf, bf) = (self.ue_frame(heading), self.bs_frame());
        let to_bs = sub3(bs, ue);
        let d0 = norm3(to_bs);
        let unit = |v: Point3| {
            let n = norm3(v);
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let mut paths = vec![Path {
            aod: uf.direction(unit(to_bs)),
            aoa: bf.direction(unit(sub3(ue, bs))),
            delay_s: 0.0,
            power: los_power,
        }];
        for s in scatterers {
            let (a, b) = (sub3(s.position, ue), sub3(s.position, bs));
            let d = norm3(a) + norm3(b);
            paths.push(Path {
                aod: uf.direction(unit(a)),
                aoa: bf.direction(unit(b)),
                delay_s: ((d - d0) / SPEED_OF_LIGHT).max(0.0),
                power: s.power,
            });
        }
        PathSet {
            paths,
            delay_offset_s: d0 / SPEED_OF_LIGHT,
        }
    }

    /// Multipath geometry at a street position.
    pub fn paths_at(&self, position: Point3) -> Result<PathSet> {
        let (loc, heading) = self.locate(position)?;
        let region = &self.regions[loc.region];
        Ok(match self.config.mode {
            GeometryMode::RegionConstant => region.paths.clone(),
            GeometryMode::Smooth => self.geometry(position, heading, region.los_power, &region.scatterers),
        })
    }

    /// Linear K-factors per path of a region path set (LOS first).
    pub fn k_factors(&self) -> Vec<f64> {
        match self.config.paths.los_k_factor_db {
            Some(db) => vec![10f64.powf(db / 10.0)],
            None => vec![],
        }
    }

    pub fn draw_fading<R: Rng + ?Sized>(&self, paths: &PathSet, rng: &mut R) -> FadingDraw {
        FadingDraw::draw_rician(paths, &self.k_factors(), rng)
    }

    fn training_streets(&self) -> Vec<usize> {
        (0..self.streets.len())
            .filter(|&i| self.config.streets[i].training)
            .collect()
    }
}

fn validate(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.streets.is_empty() {
        return Err(Error::Config("at least one street is required".into()));
    }
    if !cfg.streets.iter().any(|s| s.training) {
        return Err(Error::Config("no training street".into()));
    }
    let p = &cfg.paths;
    if p.min_paths == 0 || p.max_paths < p.min_paths {
        return Err(Error::Config(format!(
            "path count range {}..={} is empty or zero",
            p.min_paths, p.max_paths
        )));
    }
    if !(p.los_power > 0.0 && p.los_power <= 1.0) {
        return Err(Error::Config(format!(
            "LOS power share must lie in (0, 1], got {}",
            p.los_power
        )));
    }
    if p.max_paths > 1 && p.los_power >= 1.0 {
        return Err(Error::Config(
            "LOS power share of 1 leaves nothing for reflections".into(),
        ));
    }
    let [w0, w1] = p.reflection_weight;
    if !(w0 > 0.0 && w1 >= w0) {
        return Err(Error::Config(format!("reflection weight range [{w0}, {w1}]")));
    }
    if p.max_paths > 1 && cfg.facades.is_empty() {
        return Err(Error::Config("reflections need at least one facade".into()));
    }
    for f in &cfg.facades {
        if !(f.height_max >= f.height_min) {
            return Err(Error::Config("facade height range is empty".into()));
        }
    }
    if !(p.max_excess_delay_s > p.min_delay_separation_s && p.min_delay_separation_s >= 0.0) {
        return Err(Error::Config("excess-delay range is empty".into()));
    }
    if !(cfg.ue.height.is_finite() && cfg.bs.position.iter().all(|x| x.is_finite())) {
        return Err(Error::Config("non-finite positions".into()));
    }
    Ok(())
}

fn bs_inside_map(cfg: &ScenarioConfig) -> Result<()> {
    let pts = cfg
        .streets
        .iter()
        .flat_map(|s| s.points.iter())
        .chain(cfg.facades.iter().flat_map(|f| f.points.iter()));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let b = cfg.bs.position;
    let margin = 0.25 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if (0..2).any(|i| b[i] < lo[i] - margin || b[i] > hi[i] + margin) {
        return Err(Error::Config(format!(
            "base station at ({}, {}) lies outside the map",
            b[0], b[1]
        )));
    }
    Ok(())
}

fn place_anchors(sc: &Scenario) -> Result<Vec<(Point2, usize, Point2)>> {
    let training = sc.training_streets();
    let total: f64 = training.iter().map(|&i| sc.streets[i].length()).sum();
    let at_global = |s: f64| {
        let mut rest = s;
        for &i in &training {
            let l = sc.streets[i].length();
            if rest <= l {
                let (p, h) = sc.streets[i].at(rest);
                return (p, i, h);
            }
            rest -= l;
        }
        let last = *training.last().unwrap();
        let (p, h) = sc.streets[last].at(rest);
        (p, last, h)
    };
    match &sc.config.regions {
        RegionLayout::Even { count } => {
            if *count < 2 {
                return Err(Error::Config("at least two regions are required".into()));
            }
            Ok((0..*count)
                .map(|i| at_global(total * (i as f64 + 0.5) / *count as f64))
                .collect())
        }
        RegionLayout::Anchors { points } => {
            if points.len() < 2 {
                return Err(Error::Config("at least two regions are required".into()));
            }
            points
                .iter()
                .map(|&p| {
                    let (loc, h) = sc.locate([p[0], p[1], sc.config.ue.height])?;
                    Ok((p, loc.street, h))
                })
                .collect()
        }
        RegionLayout::BeamGrid { count, spacing } => {
            if *count < 2 || !(*spacing > 0.0) {
                return Err(Error::Config(
                    "beam grid needs two regions and a positive spacing".into(),
                ));
            }
            let bs = sc.config.bs.position;
            let frame = sc.bs_frame();
            let cosine = |s: f64| {
                let (p, _, _) = at_global(s);
                let v = sub3([p[0], p[1], sc.config.ue.height], bs);
                dot3(v, frame.lateral) / norm3(v)
            };
            let step = 0.01;
            let n_steps = (total / step).ceil() as usize;
            (0..*count)
                .map(|i| {
                    let target = spacing * (i as f64 - (*count as f64 - 1.0) / 2.0);
                    let f = |s: f64| cosine(s) - target;
                    for j in 0..n_steps {
                        let (mut a, mut b) = (j as f64 * step, ((j + 1) as f64 * step).min(total));
                        let (fa, fb) = (f(a), f(b));
                        if fa == 0.0 || fa.signum() != fb.signum() {
                            for _ in 0..60 {
                                let m = 0.5 * (a + b);
                                if f(m).signum() == f(a).signum() {
                                    a = m;
                                } else {
                                    b = m;
                                }
                            }
                            return Ok(at_global(0.5 * (a + b)));
                        }
                    }
                    Err(Error::Config(format!(
                        "no training-street point has direction cosine {target:.3} at the base station"
                    )))
                })
                .collect()
        }
    }
}

fn sample_facade_point<R: Rng + ?Sized>(facades: &[(Polyline, f64, f64)], rng: &mut R) -> Point3 {
    let total: f64 = facades.iter().map(|f| f.0.length()).sum();
    let mut s = rng.random::<f64>() * total;
    for (line, h0, h1) in facades {
        if s <= line.length() {
            let (p, _) = line.at(s);
            return [p[0], p[1], h0 + rng.random::<f64>() * (h1 - h0)];
        }
        s -= line.length();
    }
    let (line, h0, h1) = facades.last().unwrap();
    let (p, _) = line.at(line.length());
    [p[0], p[1], h0 + rng.random::<f64>() * (h1 - h0)]
}

const RESTART_AFTER: usize = 500;

/// Builds the scenario. Each region draws its reflections from its own
/// random stream by rejection: excess delays within the configured window
/// and mutually separated, directions separated within the region at both
/// arrays, and separated at the base station from the paths of all other
/// regions built so far and from every region's LOS.
pub fn build_cell(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    validate(config)?;
    bs_inside_map(config)?;
    let streets = config
        .streets
        .iter()
        .map(|s| Polyline::new(&s.points))
        .collect::<Result<Vec<_>>>()?;
    let facades = config
        .facades
        .iter()
        .map(|f| Ok((Polyline::new(&f.points)?, f.height_min, f.height_max)))
        .collect::<Result<Vec<_>>>()?;
    let mut sc = Scenario {
        config: config.clone(),
        seed,
        regions: vec![],
        streets,
        bs_frame_az: config.bs.broadside_deg.to_radians(),
    };
    let anchors = place_anchors(&sc)?;
    let pc = &config.paths;
    let h = config.ue.height;

    let los: Vec<PathSet> = anchors
        .iter()
        .map(|(p, _, heading)| sc.geometry([p[0], p[1], h], *heading, 1.0, &[]))
        .collect();

    let mut regions: Vec<Region> = Vec::with_capacity(anchors.len());
    for (id, (anchor, street, heading)) in anchors.iter().enumerate() {
        let mut rng = stream_rng(seed, id as u64);
        let n_paths = rng.random_range(pc.min_paths..=pc.max_paths);
        let ue = [anchor[0], anchor[1], h];
        let los_path = los[id].paths[0];
        let mut accepted: Vec<(Point3, Path)> = vec![];
        let mut attempts = 0;
        let mut stalled = 0;
        while accepted.len() + 1 < n_paths {
            attempts += 1;
            stalled += 1;
            // early picks can box out the rest; start the region over
            if stalled > RESTART_AFTER {
                accepted.clear();
                stalled = 0;
            }
            if attempts > pc.max_attempts {
                return Err(Error::Config(format!(
                    "region {id}: could not place {} reflections within {} attempts; relax the separation constraints",
                    n_paths - 1,
                    pc.max_attempts
                )));
            }
            let s = sample_facade_point(&facades, &mut rng);
            let path = sc
                .geometry(
                    ue,
                    *heading,
                    1.0,
                    &[Scatterer {
                        position: s,
                        power: 0.0,
                    }],
                )
                .paths[1];
            if path.delay_s < pc.min_delay_separation_s || path.delay_s > pc.max_excess_delay_s {
                continue;
            }
            let own_ok = std::iter::once(&los_path)
                .chain(accepted.iter().map(|a| &a.1))
                .all(|q| {
                    (path.delay_s - q.delay_s).abs() >= pc.min_delay_separation_s
                        && cosine_distance(path.aod, q.aod) >= pc.min_path_separation
                        && cosine_distance(path.aoa, q.aoa) >= pc.min_path_separation
                });
            if !own_ok {
                continue;
            }
            let others_ok = los
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != id)
                .map(|(_, l)| &l.paths[0])
                .chain(regions.iter().flat_map(|r| r.paths.paths.iter().skip(1)))
                .all(|q| cosine_distance(path.aoa, q.aoa) >= pc.min_region_separation);
            if others_ok {
                accepted.push((s, path));
                stalled = 0;
            }
        }
        let weights: Vec<f64> = (1..n_paths)
            .map(|_| rng.random_range(pc.reflection_weight[0]..=pc.reflection_weight[1]))
            .collect();
        let wsum: f64 = weights.iter().sum();
        let los_power = if n_paths == 1 { 1.0 } else { pc.los_power };
        let scatterers: Vec<Scatterer> = accepted
            .iter()
            .zip(&weights)
            .map(|((s, _), w)| Scatterer {
                position: *s,
                power: (1.0 - los_power) * w / wsum,
            })
            .collect();
        let paths = sc.geometry(ue, *heading, los_power, &scatterers);
        regions.push(Region {
            id,
            anchor: *anchor,
            anchor_street: *street,
            anchor_heading: *heading,
            los_power,
            scatterers,
            paths,
        });
    }
    sc.regions = regions;
    Ok(sc)
}

/// Uniform positions along the training streets, each with its region's
/// geometry and a fresh fading draw.
pub fn sample_passages<R: Rng + ?Sized>(sc: &Scenario, n: usize, rng: &mut R) -> Result<Vec<Passage>> {
    let training = sc.training_streets();
    let total: f64 = training.iter().map(|&i| sc.streets[i].length()).sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = rng.random::<f64>() * total;
        let mut street = *training.last().unwrap();
        for &i in &training {
            let l = sc.streets[i].length();
            if s <= l {
                street = i;
                break;
            }
            s -= l;
        }
        let (p, heading) = sc.streets[street].at(s);
        let position = [p[0], p[1], sc.config.ue.height];
        let region = sc.region_of(p);
        let paths = match sc.config.mode {
            GeometryMode::RegionConstant => sc.regions[region].paths.clone(),
            GeometryMode::Smooth => sc.geometry(
                position,
                heading,
                sc.regions[region].los_power,
                &sc.regions[region].scatterers,
            ),
        };
        let fading = sc.draw_fading(&paths, rng);
        out.push(Passage {
            location: Location {
                position,
                street,
                region,
            },
            paths,
            fading,
        });
    }
    Ok(out)
}

/// Evenly spaced points along a street, both ends included. Defaults to the
/// first non-training street, else the first street.
pub fn reference_trajectory(sc: &Scenario, step_m: f64, street: Option<usize>) -> Result<Vec<Location>> {
    if !(step_m > 0.0 && step_m.is_finite()) {
        return Err(Error::Config(format!("trajectory step must be positive, got {step_m}")));
    }
    let street = match street {
        Some(i) if i < sc.streets.len() => i,
        Some(i) => return Err(Error::Config(format!("no street {i}"))),
        None => sc.config.streets.iter().position(|s| !s.training).unwrap_or(0),
    };
    let line = &sc.streets[street];
    let n = (line.length() / step_m * (1.0 + 1e-12)).floor() as usize + 1;
    Ok((0..n)
        .map(|i| {
            let (p, _) = line.at(i as f64 * step_m);
            Location {
                position: [p[0], p[1], sc.config.ue.height],
                street,
                region: sc.region_of(p),
            }
        })
        .collect())
}

/// One training burst reduced to what the learning stages consume.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub location: Location,
    pub estimate: UmlEstimate,
    /// True vectorized tap-domain channel.
    pub truth: CVector,
    pub burst: Option<TrainingBurst>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub waveform: Waveform,
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
    pub snr_db: f64,
    /// Spatial noise shape before calibration.
    pub noise_shape: NoiseConfig,
    /// Calibrated noise actually applied.
    pub noise: NoiseModel,
    /// SNR measured on the generated bursts.
    pub measured_snr_db: f64,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn dims(&self) -> Dims {
        Dims::from_config(&self.waveform, &self.tx, &self.rx)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub keep_bursts: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { keep_bursts: false }
    }
}

/// The per-burst outputs of one passage.
pub struct BurstOutcome {
    pub estimate: UmlEstimate,
    pub signal_energy: f64,
    pub noise_energy: f64,
    pub burst: TrainingBurst,
}

/// Pilots, received burst and U-ML estimate for one channel realization.
pub fn observe<R: Rng + ?Sized>(
    taps: &ChannelTaps,
    wf: &Waveform,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<BurstOutcome> {
    let freq = taps_to_frequency(taps, wf.n_subcarriers)?;
    let pilots = gen_training(wf, taps.dims.n_tx, rng);
    let burst = synth_burst(&freq, &pilots, wf.pilot_power, noise, rng)?;
    let mut signal_energy = 0.0;
    let mut noise_energy = 0.0;
    for (k, hk) in freq.subcarriers.iter().enumerate() {
        let clean = hk * pilots.row(k).transpose();
        signal_energy += clean.norm_squared();
        noise_energy += (burst.received.row(k).transpose() - clean).norm_squared();
    }
    let estimate = uml_estimate(&burst, wf.n_taps)?;
    Ok(BurstOutcome {
        estimate,
        signal_energy,
        noise_energy,
        burst,
    })
}

/// Synthesizes `n` passages, calibrates one noise level for the whole set,
/// then generates bursts and U-ML estimates. Burst randomness comes from
/// per-record streams, so the result does not depend on thread count.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset<R: Rng + ?Sized>(
    sc: &Scenario,
    wf: &Waveform,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    noise_shape: &NoiseConfig,
    snr_db: f64,
    n: usize,
    opts: &DatasetOptions,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    wf.validate(tx.n_elements())?;
    tx.validate()?;
    rx.validate()?;
    let shape = noise_cov(noise_shape, rx)?;
    let seed = rng.random::<u64>();
    let passages = sample_passages(sc, n, rng)?;
    let burst_seed = rng.random::<u64>();

    let truths: Vec<ChannelTaps> = passages
        .par_iter()
        .map(|p| synth_taps(&p.paths.fit_to_window(wf), &p.fading, tx, rx, wf))
        .collect::<Result<_>>()?;
    let energies: Vec<f64> = truths.iter().map(|t| t.energy()).collect();
    let scale = calibrate_noise(&energies, wf.pilot_power, snr_db, shape.trace())?;
    let noise = shape.scaled(scale, rx)?;

    let outcomes: Vec<(DatasetRecord, f64, f64)> = passages
        .par_iter()
        .zip(truths.into_par_iter())
        .enumerate()
        .map(|(i, (p, taps))| {
            let mut r = stream_rng(burst_seed, i as u64);
            let o = observe(&taps, wf, &noise, &mut r)?;
            Ok((
                DatasetRecord {
                    location: p.location,
                    estimate: o.estimate,
                    truth: taps.vectorized,
                    burst: opts.keep_bursts.then_some(o.burst),
                },
                o.signal_energy,
                o.noise_energy,
            ))
        })
        .collect::<Result<_>>()?;
    let (mut sig, mut noi) = (0.0, 0.0);
    let records = outcomes
        .into_iter()
        .map(|(r, s, e)| {
            sig += s;
            noi += e;
            r
        })
        .collect();
    let measured_snr_db = if noi > 0.0 {
        10.0 * (sig / noi).log10()
    } else {
        f64::INFINITY
    };
    Ok(Dataset {
        seed,
        waveform: *wf,
        tx: *tx,
        rx: *rx,
        snr_db,
        noise_shape: noise_shape.clone(),
        noise,
        measured_snr_db,
        records,
    })
}

const RECORDS_MAGIC: &[u8; 8] = b"MVLRREC1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.bin";
pub const DATASET_FORMAT: u32 = 1;

/// Dataset directory manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub seed: u64,
    pub n: usize,
    pub dims: Dims,
    pub waveform: Waveform,
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
    /// Target SNR; absent for noise-free data.
    pub snr_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
    pub noise_shape: NoiseConfig,
    pub noise: NoiseConfig,
    pub records_sha256: String,
    #[serde(default)]
    pub config_hash: Option<String>,
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_complex(buf: &mut Vec<u8>, v: &CVector) {
    for z in v.iter() {
        put_f64(buf, z.re);
        put_f64(buf, z.im);
    }
}

/// Writes `manifest.json` and `records.bin` into `dir`, returning the
/// manifest. Bursts are not persisted.
pub fn write_dataset(ds: &Dataset, dir: &FsPath, config_hash: Option<&str>) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = ds.dims();
    let path = dir.join(RECORDS_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut buf = Vec::with_capacity(64 + 32 * d.len());
    buf.extend_from_slice(RECORDS_MAGIC);
    for x in [ds.records.len(), d.n_taps, d.n_tx, d.n_rx] {
        put_u64(&mut buf, x as u64);
    }
    for rec in &ds.records {
        put_u64(&mut buf, rec.location.region as u64);
        put_u64(&mut buf, rec.location.street as u64);
        for x in rec.location.position {
            put_f64(&mut buf, x);
        }
        put_f64(&mut buf, rec.estimate.noise_gain);
        put_complex(&mut buf, &rec.estimate.h_bar);
        put_complex(&mut buf, &rec.truth);
        hasher.update(&buf);
        out.write_all(&buf).map_err(|e| Error::io(&path, e))?;
        buf.clear();
    }
    if !buf.is_empty() {
        hasher.update(&buf);
        out.write_all(&buf).map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT,
        seed: ds.seed,
        n: ds.records.len(),
        dims: d,
        waveform: ds.waveform,
        tx: ds.tx,
        rx: ds.rx,
        snr_db: ds.snr_db.is_finite().then_some(ds.snr_db),
        measured_snr_db: ds.measured_snr_db.is_finite().then_some(ds.measured_snr_db),
        noise_shape: ds.noise_shape.clone(),
        noise: ds.noise.config.clone(),
        records_sha256: hex::encode(hasher.finalize()),
        config_hash: config_hash.map(str::to_owned),
    };
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&mpath, e.to_string()))?;
    std::fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn complex(&mut self, n: usize) -> Option<CVector> {
        let mut v = CVector::zeros(n);
        for i in 0..n {
            v[i] = C64::new(self.f64()?, self.f64()?);
        }
        Some(v)
    }
}

/// Reads a dataset directory, verifying the record checksum.
pub fn read_dataset(dir: &FsPath) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::format(&mpath, format!("unsupported format {}", m.format)));
    }
    let path = dir.join(RECORDS_FILE);
    let mut bytes = vec![];
    BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&path, e))?;
    if hex::encode(Sha256::digest(&bytes)) != m.records_sha256 {
        return Err(Error::format(&path, "checksum does not match the manifest"));
    }
    let bad = |what: &str| Error::format(&path, what.to_string());
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(8) != Some(RECORDS_MAGIC.as_slice()) {
        return Err(bad("missing magic"));
    }
    let header: Vec<u64> = (0..4)
        .map(|_| c.u64())
        .collect::<Option<_>>()
        .ok_or_else(|| bad("truncated header"))?;
    let dims = Dims::new(header[1] as usize, header[2] as usize, header[3] as usize);
    if header[0] as usize != m.n || dims != m.dims {
        return Err(bad("header disagrees with the manifest"));
    }
    let mut records = Vec::with_capacity(m.n);
    for _ in 0..m.n {
        let rec = (|| {
            let region = c.u64()? as usize;
            let street = c.u64()? as usize;
            let position = [c.f64()?, c.f64()?, c.f64()?];
            let noise_gain = c.f64()?;
            let h_bar = c.complex(dims.len())?;
            let truth = c.complex(dims.len())?;
            Some(DatasetRecord {
                location: Location {
                    position,
                    street,
                    region,
                },
                estimate: UmlEstimate {
                    dims,
                    h_bar,
                    noise_gain,
                },
                truth,
                burst: None,
            })
        })()
        .ok_or_else(|| bad("truncated record"))?;
        records.push(rec);
    }
    if c.at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let noise = if m.noise.white_power > 0.0 {
        noise_cov(&m.noise, &m.rx)?
    } else {
        NoiseModel::noiseless(m.rx.n_elements())
    };
    Ok(Dataset {
        seed: m.seed,
        waveform: m.waveform,
        tx: m.tx,
        rx: m.rx,
        snr_db: m.snr_db.unwrap_or(f64::INFINITY),
        noise_shape: m.noise_shape,
        noise,
        measured_snr_db: m.measured_snr_db.unwrap_or(f64::INFINITY),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn default_scenario_builds_deterministically() {
        let cfg = ScenarioConfig::default();
        let a = build_cell(&cfg, 7).unwrap();
        let b = build_cell(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_regions(), 7);
        for r in &a.regions {
            assert!((3..=4).contains(&r.paths.len()));
            assert!((r.paths.total_power() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_grid_anchors_hit_targets() {
        let sc = build_cell(&ScenarioConfig::default(), 1).unwrap();
        for (i, r) in sc.regions.iter().enumerate() {
            let c = direction_cosines(r.paths.paths[0].aoa)[0];
            assert!((c - 0.25 * (i as f64 - 3.0)).abs() < 1e-6, "region {i}: {c}");
        }
    }

    #[test]
    fn straight_street_even_regions() {
        let cfg = ScenarioConfig::straight(210.0, 7);
        let sc = build_cell(&cfg, 3).unwrap();
        let mut last = 0;
        // walking the street visits regions 0..6 in order, contiguously
        for i in 0..=2100 {
            let p = sc.point_on_street(0, i as f64 * 0.1).unwrap();
            let r = sc.region_of([p[0], p[1]]);
            assert!(r == last || r == last + 1);
            last = r;
        }
        assert_eq!(last, 6);
    }

    #[test]
    fn los_delay_geometry() {
        let mut cfg = ScenarioConfig::default();
        cfg.ue.height = 0.0;
        cfg.mode = GeometryMode::Smooth;
        let sc = build_cell(&cfg, 0).unwrap();
        let p = sc.paths_at([0.0, 30.0, 0.0]).unwrap();
        let want = (30f64.powi(2) + 36.0).sqrt() / SPEED_OF_LIGHT;
        assert!((p.delay_offset_s - want).abs() < 1e-15);
        assert!((p.delay_offset_s - 102e-9).abs() < 0.5e-9);
        assert_eq!(p.paths[0].delay_s, 0.0);
    }

    #[test]
    fn region_constant_geometry() {
        let sc = build_cell(&ScenarioConfig::default(), 2).unwrap();
        let p = sc.point_on_street(0, 20.0).unwrap();
        let q = sc.point_on_street(0, 20.5).unwrap();
        assert_eq!(sc.region_of([p[0], p[1]]), sc.region_of([q[0], q[1]]));
        assert_eq!(sc.paths_at(p).unwrap(), sc.paths_at(q).unwrap());
        assert_eq!(sc.paths_at(p).unwrap(), sc.paths_at(p).unwrap());
        assert!(matches!(sc.paths_at([0.0, 0.0, 1.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn separation_constraints_hold() {
        let cfg = ScenarioConfig::default();
        let sc = build_cell(&cfg, 5).unwrap();
        let pc = &cfg.paths;
        for r in &sc.regions {
            let ps = &r.paths.paths;
            for i in 0..ps.len() {
                for j in 0..i {
                    assert!(cosine_distance(ps[i].aoa, ps[j].aoa) >= pc.min_path_separation);
                    assert!(cosine_distance(ps[i].aod, ps[j].aod) >= pc.min_path_separation);
                    assert!((ps[i].delay_s - ps[j].delay_s).abs() >= pc.min_delay_separation_s);
                }
                assert!(ps[i].delay_s <= pc.max_excess_delay_s);
            }
        }
        for a in &sc.regions {
            for b in &sc.regions {
                if a.id == b.id {
                    continue;
                }
                for p in a.paths.paths.iter().skip(1) {
                    for q in &b.paths.paths {
                        assert!(cosine_distance(p.aoa, q.aoa) >= pc.min_region_separation);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_separation_is_allowed() {
        let mut cfg = ScenarioConfig::default();
        cfg.paths.min_region_separation = 0.0;
        cfg.paths.min_path_separation = 0.0;
        assert!(build_cell(&cfg, 9).is_ok());
    }

    #[test]
    fn degenerate_configs() {
        let mut cfg = ScenarioConfig::straight(100.0, 3);
        cfg.streets[0].points = vec![[0.0, 0.0], [0.0, 0.0]];
        assert!(matches!(build_cell(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::straight(100.0, 1);
        cfg.regions = RegionLayout::Even { count: 1 };
        assert!(build_cell(&cfg, 0).is_err());
        let mut cfg = ScenarioConfig::straight(100.0, 3);
        cfg.bs.position = [5000.0, 0.0, 6.0];
        assert!(build_cell(&cfg, 0).is_err());
    }

    #[test]
    fn trajectory_point_counts() {
        let cfg = ScenarioConfig::straight(50.0, 2);
        let sc = build_cell(&cfg, 0).unwrap();
        assert_eq!(reference_trajectory(&sc, 0.5, None).unwrap().len(), 101);
        assert_eq!(reference_trajectory(&sc, 80.0, None).unwrap().len(), 1);
        let traj = reference_trajectory(&sc, 0.5, None).unwrap();
        assert!(traj.iter().all(|l| l.region < 2));
        assert!(reference_trajectory(&sc, 0.0, None).is_err());
        let def = build_cell(&ScenarioConfig::default(), 0).unwrap();
        let t = reference_trajectory(&def, 0.5, None).unwrap();
        assert!(t.iter().all(|l| l.street == 1));
    }

    #[test]
    fn passages_fill_regions_by_length() {
        let cfg = ScenarioConfig::straight(140.0, 7);
        let sc = build_cell(&cfg, 0).unwrap();
        let ps = sample_passages(&sc, 20_000, &mut seeded_rng(1)).unwrap();
        let mut counts = [0usize; 7];
        for p in &ps {
            counts[p.location.region] += 1;
            assert_eq!(p.fading.alphas.len(), p.paths.len());
        }
        for c in counts {
            let f = c as f64 / 20_000.0;
            assert!((f - 1.0 / 7.0).abs() < 0.05 / 7.0 * 3.0, "{counts:?}");
        }
    }

    #[test]
    fn fading_is_wssus() {
        let sc = build_cell(&ScenarioConfig::default(), 4).unwrap();
        let paths = &sc.regions[0].paths;
        let mut rng = seeded_rng(2);
        let n = paths.len();
        let mut cov = vec![vec![C64::new(0.0, 0.0); n]; n];
        let trials = 10_000;
        for _ in 0..trials {
            let f = sc.draw_fading(paths, &mut rng);
            for i in 0..n {
                for j in 0..n {
                    cov[i][j] += f.alphas[i] * f.alphas[j].conj();
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = cov[i][j] / trials as f64;
                if i == j {
                    assert!((v.re / paths.paths[i].power - 1.0).abs() < 0.05);
                } else {
                    assert!(v.norm() < 0.05 * (paths.paths[i].power * paths.paths[j].power).sqrt() + 0.01);
                }
            }
        }
    }

    #[test]
    fn dataset_round_trip_and_noise_free() {
        let sc = build_cell(&ScenarioConfig::default(), 1).unwrap();
        let wf = Waveform {
            n_subcarriers: 16,
            ..Waveform::flat()
        };
        let (tx, rx) = (ArrayConfig::new(2, 2), ArrayConfig::new(2, 3));
        let ds = generate_dataset(
            &sc,
            &wf,
            &tx,
            &rx,
            &NoiseConfig::white(1.0),
            f64::INFINITY,
            12,
            &DatasetOptions { keep_bursts: true },
            &mut seeded_rng(3),
        )
        .unwrap();
        for r in &ds.records {
            assert!((&r.estimate.h_bar - &r.truth).norm() < 1e-8 * r.truth.norm());
        }
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&ds, dir.path(), Some("abc")).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.records.len(), 12);
        for (a, b) in ds.records.iter().zip(&back.records) {
            assert_eq!(a.estimate, b.estimate);
            assert_eq!(a.truth, b.truth);
            assert_eq!(a.location, b.location);
        }
        let m2 = write_dataset(&back, dir.path(), Some("abc")).unwrap();
        assert_eq!(m.records_sha256, m2.records_sha256);
        std::fs::write(dir.path().join(RECORDS_FILE), b"MVLRREC1").unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn measured_snr_matches_target() {
        let sc = build_cell(&ScenarioConfig::default(), 1).unwrap();
        let wf = Waveform {
            n_subcarriers: 16,
            ..Waveform::flat()
        };
        let (tx, rx) = (ArrayConfig::new(2, 2), ArrayConfig::new(2, 2));
        let ds = generate_dataset(
            &sc,
            &wf,
            &tx,
            &rx,
            &NoiseConfig::white(1.0),
            0.0,
            1000,
            &DatasetOptions::default(),
            &mut seeded_rng(4),
        )
        .unwrap();
        assert!(ds.measured_snr_db.abs() < 0.1, "{}", ds.measured_snr_db);
    }
}
