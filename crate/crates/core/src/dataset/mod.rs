//! Labeled and collocation datasets in the `(x0, t) -> x` layout.
//!
//! Trajectories always start at `t = 0`; `t` is elapsed time from the
//! initial condition.

mod io;

pub use io::{load_dataset, save_dataset, TableFormat, DATASET_FORMAT_VERSION};

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::component::{check_dim, ComponentModel};
use crate::error::{Error, Result};
use crate::solver::{integrate_adaptive, sample_on_grid, SolveConfig, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub trajectory_id: usize,
    pub x0: Vec<f64>,
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationPoint {
    pub trajectory_id: usize,
    pub x0: Vec<f64>,
    pub t: f64,
}

pub trait TrajectoryMember {
    fn trajectory_id(&self) -> usize;
}

impl TrajectoryMember for LabeledPoint {
    fn trajectory_id(&self) -> usize {
        self.trajectory_id
    }
}

impl TrajectoryMember for CollocationPoint {
    fn trajectory_id(&self) -> usize {
        self.trajectory_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub state_dim: usize,
    pub train: Vec<LabeledPoint>,
    pub validation: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
    pub collocation: Vec<CollocationPoint>,
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl SplitDataset {
    pub fn empty(state_dim: usize) -> Self {
        Self {
            state_dim,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            collocation: Vec::new(),
            split_ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }

    pub fn train_ids(&self) -> Vec<usize> {
        distinct_ids(&self.train)
    }

    pub fn validation_ids(&self) -> Vec<usize> {
        distinct_ids(&self.validation)
    }

    pub fn test_ids(&self) -> Vec<usize> {
        distinct_ids(&self.test)
    }
}

/// Trajectory ids in order of first appearance.
pub fn distinct_ids<P: TrajectoryMember>(points: &[P]) -> Vec<usize> {
    let mut ids = Vec::new();
    for p in points {
        if ids.last() != Some(&p.trajectory_id()) && !ids.contains(&p.trajectory_id()) {
            ids.push(p.trajectory_id());
        }
    }
    ids
}

/// Flattens a trajectory into one labeled point per grid time.
pub fn trajectory_points(traj: &Trajectory) -> Vec<LabeledPoint> {
    traj.times
        .iter()
        .zip(traj.states.rows())
        .map(|(&t, row)| LabeledPoint {
            trajectory_id: traj.trajectory_id,
            x0: traj.x0.clone(),
            t,
            x: row.to_vec(),
        })
        .collect()
}

/// Regroups points (ordered by grid time within each trajectory) into
/// trajectories.
pub fn points_to_trajectories(points: &[LabeledPoint]) -> Vec<Trajectory> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let k = *index.entry(p.trajectory_id).or_insert_with(|| {
            out.push(Trajectory {
                trajectory_id: p.trajectory_id,
                x0: p.x0.clone(),
                times: Vec::new(),
                states: Array2::zeros((0, p.x.len())),
            });
            rows.push(Vec::new());
            out.len() - 1
        });
        out[k].times.push(p.t);
        rows[k].extend_from_slice(&p.x);
    }
    for (traj, flat) in out.iter_mut().zip(rows) {
        let d = traj.x0.len();
        traj.states = Array2::from_shape_vec((traj.times.len(), d), flat).expect("consistent rows");
    }
    out
}

/// Integrates every initial condition (rows of `ics`) over `[0, horizon]`
/// and samples it every `dt`. Trajectory ids are row indices. Any failure
/// aborts the whole batch.
pub fn generate_trajectories(
    model: &dyn ComponentModel,
    ics: &Array2<f64>,
    horizon: f64,
    dt: f64,
    solver: &SolveConfig,
) -> Result<Vec<Trajectory>> {
    check_dim(model.state_dim(), ics.ncols())?;
    let cfg = SolveConfig {
        t_span: [0.0, horizon],
        ..*solver
    };
    cfg.validate()?;
    let rows: Vec<Vec<f64>> = ics.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.par_iter()
        .enumerate()
        .map(|(id, x0)| {
            let annotate = |e| Error::TrajectoryFailed {
                id,
                source: Box::new(e),
            };
            let sol = integrate_adaptive(model, x0, &cfg).map_err(annotate)?;
            let mut traj = sample_on_grid(&sol, dt).map_err(annotate)?;
            traj.trajectory_id = id;
            Ok(traj)
        })
        .collect()
}

pub fn generate_labeled(
    model: &dyn ComponentModel,
    ics: &Array2<f64>,
    horizon: f64,
    dt: f64,
    solver: &SolveConfig,
) -> Result<(Vec<Trajectory>, Vec<LabeledPoint>)> {
    let trajs = generate_trajectories(model, ics, horizon, dt, solver)?;
    let points = trajs.iter().flat_map(trajectory_points).collect();
    Ok((trajs, points))
}

/// Keeps grid indices `offset, offset + stride, ...` of every trajectory.
/// The grid index of a point is its position among the points of the same
/// trajectory.
pub fn thin<P: TrajectoryMember + Clone>(points: &[P], stride: usize, offset: usize) -> Vec<P> {
    assert!(stride >= 1 && offset < stride, "need stride >= 1 and offset < stride");
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    points
        .iter()
        .filter(|p| {
            let k = seen.entry(p.trajectory_id()).or_insert(0);
            let keep = *k >= offset && (*k - offset) % stride == 0;
            *k += 1;
            keep
        })
        .cloned()
        .collect()
}

/// Points per trajectory left by [`thin`] with offset 0.
pub fn thinned_len(n_grid: usize, stride: usize) -> usize {
    (n_grid - 1) / stride + 1
}

/// Pairs every collocation initial condition with the grid times at
/// indices `0, stride, 2*stride, ...`.
pub fn build_collocation(ics: &Array2<f64>, time_grid: &[f64], stride: usize) -> Vec<CollocationPoint> {
    assert!(stride >= 1, "stride must be at least 1");
    let times: Vec<f64> = time_grid.iter().copied().step_by(stride).collect();
    ics.rows()
        .into_iter()
        .enumerate()
        .flat_map(|(id, row)| {
            let x0 = row.to_vec();
            times.iter().map(move |&t| CollocationPoint {
                trajectory_id: id,
                x0: x0.clone(),
                t,
            })
        })
        .collect()
}

/// Splits trajectory counts by largest remainder (ties go to the earlier
/// split).
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidRatios(format!("ratios must be positive: {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(format!("ratios sum to {sum}, not 1")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &k in order.iter().take(n - assigned) {
        counts[k] += 1;
    }
    const NAMES: [&str; 3] = ["train", "validation", "test"];
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::TooFewTrajectories {
                split: NAMES[k],
                available: n,
            });
        }
    }
    Ok(counts)
}

/// Assigns whole trajectories to train/validation/test after a seeded
/// shuffle of their ids. Points keep their original order within a split.
pub fn split_by_trajectory(
    points: &[LabeledPoint],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitDataset> {
    let mut ids = distinct_ids(points);
    let counts = split_counts(ids.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut which: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, id) in ids.iter().enumerate() {
        let split = if pos < counts[0] {
            0
        } else if pos < counts[0] + counts[1] {
            1
        } else {
            2
        };
        which.insert(*id, split);
    }
    let state_dim = points.first().map_or(0, |p| p.x.len());
    let mut ds = SplitDataset {
        split_ratios: ratios,
        seed,
        ..SplitDataset::empty(state_dim)
    };
    for p in points {
        match which[&p.trajectory_id] {
            0 => ds.train.push(p.clone()),
            1 => ds.validation.push(p.clone()),
            _ => ds.test.push(p.clone()),
        }
    }
    Ok(ds)
}

/// Dataset-level settings recorded next to the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u8,
    pub state_names: Vec<String>,
    pub domain: BTreeMap<String, crate::sampling::BoundSpec>,
    pub n_trajectories: usize,
    pub horizon_s: f64,
    pub dt_s: f64,
    pub grid_points: usize,
    pub data_stride: usize,
    pub collocation_stride: usize,
    pub thin_offset: usize,
    pub split_ratios: [f64; 3],
    pub seed_data: u64,
    pub seed_collocation: u64,
    pub seed_split: u64,
    pub solver: SolveConfig,
    pub counts: BTreeMap<String, usize>,
}
