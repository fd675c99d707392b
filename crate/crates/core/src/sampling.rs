//! Initial-condition sampling over a box-shaped input domain.
//!
//! Every dimension draws from its own ChaCha stream (`stream = dimension
//! index`), so a sample matrix depends only on the seed and never on how
//! work is scheduled.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_CAP: usize = 1_000_000;

/// Per-state closed intervals. A zero-width interval fixes that state.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDomain {
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

/// One domain entry in a config file: either `[low, high]` or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Range([f64; 2]),
    Fixed(f64),
}

impl BoundSpec {
    fn pair(self) -> (f64, f64) {
        match self {
            BoundSpec::Range([lo, hi]) => (lo, hi),
            BoundSpec::Fixed(v) => (v, v),
        }
    }
}

impl InputDomain {
    pub fn new(names: Vec<String>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if names.len() != bounds.len() {
            return Err(Error::InvalidDomain(format!(
                "{} names for {} bounds",
                names.len(),
                bounds.len()
            )));
        }
        if bounds.is_empty() {
            return Err(Error::InvalidDomain("no dimensions".into()));
        }
        for (name, &(lo, hi)) in names.iter().zip(&bounds) {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidDomain(format!("`{name}` has non-finite bounds")));
            }
            if lo > hi {
                return Err(Error::InvalidDomain(format!(
                    "`{name}`: low {lo} exceeds high {hi}"
                )));
            }
        }
        Ok(Self { names, bounds })
    }

    /// Unnamed dimensions `x1..xd`.
    pub fn from_bounds(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let names = (1..=bounds.len()).map(|i| format!("x{i}")).collect();
        Self::new(names, bounds)
    }

    /// Builds a domain ordered like `state_names` from a name-keyed table.
    pub fn from_map(state_names: &[String], map: &BTreeMap<String, BoundSpec>) -> Result<Self> {
        if let Some(extra) = map.keys().find(|k| !state_names.contains(k)) {
            return Err(Error::config(
                format!("domain.{extra}"),
                "not a state of the selected component",
            ));
        }
        let bounds = state_names
            .iter()
            .map(|n| {
                map.get(n)
                    .map(|b| b.pair())
                    .ok_or_else(|| Error::config(format!("domain.{n}"), "missing bounds"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(state_names.to_vec(), bounds)
    }

    pub fn to_map(&self) -> BTreeMap<String, BoundSpec> {
        self.names
            .iter()
            .zip(&self.bounds)
            .map(|(n, &(lo, hi))| {
                let spec = if lo == hi {
                    BoundSpec::Fixed(lo)
                } else {
                    BoundSpec::Range([lo, hi])
                };
                (n.clone(), spec)
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        let (lo, hi) = self.bounds[i];
        lo == hi
    }

    pub fn free_dims(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.is_fixed(i)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(v, &(lo, hi))| (lo..=hi).contains(v))
    }
}

/// Where a Latin-hypercube sample sits inside its stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LhsPlacement {
    #[default]
    Random,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    #[default]
    Lhs,
    Random,
    Grid,
}

fn stream_rng(seed: u64, dim: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(dim as u64);
    rng
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidDomain("sample count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Latin hypercube: each free dimension places exactly one sample in each
/// of its `n` equal-width strata.
pub fn lhs_sample(domain: &InputDomain, n: usize, seed: u64) -> Result<Array2<f64>> {
    lhs_sample_with(domain, n, seed, LhsPlacement::Random)
}

pub fn lhs_sample_with(
    domain: &InputDomain,
    n: usize,
    seed: u64,
    placement: LhsPlacement,
) -> Result<Array2<f64>> {
    check_count(n)?;
    let mut out = Array2::zeros((n, domain.dim()));
    for (j, &(lo, hi)) in domain.bounds().iter().enumerate() {
        if lo == hi {
            out.column_mut(j).fill(lo);
            continue;
        }
        let mut rng = stream_rng(seed, j);
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let width = hi - lo;
        for (i, &k) in strata.iter().enumerate() {
            let u = match placement {
                LhsPlacement::Random => rng.random::<f64>(),
                LhsPlacement::Midpoint => 0.5,
            };
            out[[i, j]] = (lo + (k as f64 + u) / n as f64 * width).min(hi);
        }
    }
    Ok(out)
}

/// Independent uniform draws per dimension.
pub fn random_sample(domain: &InputDomain, n: usize, seed: u64) -> Result<Array2<f64>> {
    check_count(n)?;
    let mut out = Array2::zeros((n, domain.dim()));
    for (j, &(lo, hi)) in domain.bounds().iter().enumerate() {
        if lo == hi {
            out.column_mut(j).fill(lo);
            continue;
        }
        let mut rng = stream_rng(seed, j);
        for i in 0..n {
            out[[i, j]] = (lo + rng.random::<f64>() * (hi - lo)).min(hi);
        }
    }
    Ok(out)
}

/// Cartesian grid with `points_per_dim` evenly spaced values (endpoints
/// included) on every free dimension; the first free dimension varies
/// slowest.
pub fn grid_sample(domain: &InputDomain, points_per_dim: usize) -> Result<Array2<f64>> {
    grid_sample_capped(domain, points_per_dim, DEFAULT_GRID_CAP)
}

pub fn grid_sample_capped(
    domain: &InputDomain,
    points_per_dim: usize,
    cap: usize,
) -> Result<Array2<f64>> {
    check_count(points_per_dim)?;
    let free = domain.free_dims();
    let total = (points_per_dim as u128).pow(free.len() as u32);
    if total > cap as u128 {
        return Err(Error::GridTooLarge { points: total, cap });
    }
    let total = total as usize;
    let axis = |j: usize| -> Vec<f64> {
        let (lo, hi) = domain.bounds()[j];
        if points_per_dim == 1 {
            return vec![0.5 * (lo + hi)];
        }
        let step = (hi - lo) / (points_per_dim - 1) as f64;
        (0..points_per_dim)
            .map(|i| {
                if i == points_per_dim - 1 {
                    hi
                } else {
                    lo + i as f64 * step
                }
            })
            .collect()
    };
    let axes: Vec<Vec<f64>> = free.iter().map(|&j| axis(j)).collect();

    let mut out = Array2::zeros((total, domain.dim()));
    for (j, &(lo, hi)) in domain.bounds().iter().enumerate() {
        if lo == hi {
            out.column_mut(j).fill(lo);
        }
    }
    for row in 0..total {
        let mut rem = row;
        for (a, &j) in free.iter().enumerate().rev() {
            out[[row, j]] = axes[a][rem % points_per_dim];
            rem /= points_per_dim;
        }
    }
    Ok(out)
}

/// Dispatches on `method`; `n` is the sample count, or points per free
/// dimension for the grid.
pub fn sample(domain: &InputDomain, method: SamplingMethod, n: usize, seed: u64) -> Result<Array2<f64>> {
    match method {
        SamplingMethod::Lhs => lhs_sample(domain, n, seed),
        SamplingMethod::Random => random_sample(domain, n, seed),
        SamplingMethod::Grid => grid_sample(domain, n),
    }
}

/// Checks that column `j` has exactly one sample per stratum.
pub fn is_stratified(samples: &Array2<f64>, domain: &InputDomain, j: usize) -> bool {
    let n = samples.nrows();
    let (lo, hi) = domain.bounds()[j];
    if lo == hi {
        return samples.column(j).iter().all(|&v| v == lo);
    }
    let mut seen = vec![false; n];
    for &v in samples.column(j) {
        let k = (((v - lo) / (hi - lo)) * n as f64).floor() as isize;
        let k = k.clamp(0, n as isize - 1) as usize;
        if seen[k] {
            return false;
        }
        seen[k] = true;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> InputDomain {
        InputDomain::from_bounds(vec![(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn four_strata_each_hit_once() {
        let s = lhs_sample(&unit(), 4, 7).unwrap();
        let mut bins = [0; 4];
        for &v in s.column(0) {
            bins[((v * 4.0).floor() as usize).min(3)] += 1;
        }
        assert_eq!(bins, [1, 1, 1, 1]);
    }

    #[test]
    fn fixed_dimension_is_constant() {
        let d = InputDomain::from_bounds(vec![(0.7048, 0.7048), (-1.0, 1.0)]).unwrap();
        let s = lhs_sample(&d, 50, 3).unwrap();
        assert!(s.column(0).iter().all(|&v| v == 0.7048));
        let s = random_sample(&d, 50, 3).unwrap();
        assert!(s.column(0).iter().all(|&v| v == 0.7048));
    }

    #[test]
    fn midpoint_placement() {
        let s = lhs_sample_with(&unit(), 4, 1, LhsPlacement::Midpoint).unwrap();
        let mut v: Vec<f64> = s.column(0).to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn grid_one_free_dim() {
        let d = InputDomain::from_bounds(vec![(-1.0, 1.0), (2.0, 2.0)]).unwrap();
        let g = grid_sample(&d, 3).unwrap();
        assert_eq!(g.column(0).to_vec(), vec![-1.0, 0.0, 1.0]);
        assert!(g.column(1).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn grid_two_free_dims() {
        let d = InputDomain::from_bounds(vec![(0.0, 1.0), (5.0, 5.0), (-1.0, 1.0)]).unwrap();
        let g = grid_sample(&d, 2).unwrap();
        assert_eq!(g.nrows(), 4);
        assert_eq!(g.row(1).to_vec(), vec![0.0, 5.0, 1.0]);
    }

    #[test]
    fn grid_cap() {
        let d = InputDomain::from_bounds(vec![(0.0, 1.0); 4]).unwrap();
        assert!(matches!(
            grid_sample_capped(&d, 100, 1000),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn random_mean() {
        let s = random_sample(&unit(), 1000, 11).unwrap();
        let mean = s.column(0).mean().unwrap();
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    #[test]
    fn invalid_domains() {
        assert!(InputDomain::from_bounds(vec![(1.0, 0.0)]).is_err());
        assert!(InputDomain::from_bounds(vec![(0.0, f64::INFINITY)]).is_err());
        assert!(lhs_sample(&unit(), 0, 1).is_err());
    }

    #[test]
    fn seeds_matter() {
        let d = InputDomain::from_bounds(vec![(0.0, 1.0); 3]).unwrap();
        assert_eq!(lhs_sample(&d, 20, 5).unwrap(), lhs_sample(&d, 20, 5).unwrap());
        assert_ne!(lhs_sample(&d, 20, 5).unwrap(), lhs_sample(&d, 20, 6).unwrap());
        assert_ne!(random_sample(&d, 20, 5).unwrap(), random_sample(&d, 20, 6).unwrap());
    }

    #[test]
    fn domain_from_map_checks_names() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), BoundSpec::Range([0.0, 1.0]));
        assert!(InputDomain::from_map(&names, &m).is_err());
        m.insert("b".to_string(), BoundSpec::Fixed(2.0));
        let d = InputDomain::from_map(&names, &m).unwrap();
        assert_eq!(d.bounds(), &[(0.0, 1.0), (2.0, 2.0)]);
        assert_eq!(d.to_map(), m);
        m.insert("c".to_string(), BoundSpec::Fixed(2.0));
        assert!(InputDomain::from_map(&names, &m).is_err());
    }

    proptest! {
        #[test]
        fn lhs_is_stratified_and_bounded(n in 1usize..200, seed in any::<u64>(),
                                         lo in -5.0..5.0f64, w in 0.001..10.0f64) {
            let d = InputDomain::from_bounds(vec![(lo, lo + w), (lo, lo), (-1.0, 1.0)]).unwrap();
            let s = lhs_sample(&d, n, seed).unwrap();
            for j in 0..3 {
                prop_assert!(is_stratified(&s, &d, j));
            }
            for row in s.rows() {
                prop_assert!(d.contains(row.as_slice().unwrap()));
            }
        }

        #[test]
        fn random_is_bounded(n in 1usize..100, seed in any::<u64>()) {
            let d = InputDomain::from_bounds(vec![(-2.0, 2.0), (0.9, 1.1)]).unwrap();
            let s = random_sample(&d, n, seed).unwrap();
            for row in s.rows() {
                prop_assert!(d.contains(row.as_slice().unwrap()));
            }
        }
    }
}
