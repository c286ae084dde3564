//! With-replacement resampling of observations, clusters and panel paths.
//!
//! Units are zero-based. A drawn [`IndexMultiset`] keeps both the unit ids in
//! draw order and their expansion into observation indices; repeated units
//! appear repeatedly in the expansion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How observations are grouped into resampling units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnitStructure {
    /// `n` independent observations, each its own unit.
    Iid { n: usize },
    /// Clusters of observations; member lists partition `0..n_obs`.
    Clustered { members: Vec<Vec<usize>> },
    /// `n` individual paths of `periods` observations each, stored path-major.
    Panel { n: usize, periods: usize },
}

impl UnitStructure {
    /// Validated cluster structure. Every cluster must be non-empty and the
    /// member lists must partition `0..n_obs`.
    pub fn clustered(members: Vec<Vec<usize>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("cluster structure has no clusters".into()));
        }
        let n_obs: usize = members.iter().map(Vec::len).sum();
        let mut seen = vec![false; n_obs];
        for (g, cluster) in members.iter().enumerate() {
            if cluster.is_empty() {
                return Err(Error::Config(format!("cluster {g} is empty")));
            }
            for &i in cluster {
                if i >= n_obs || seen[i] {
                    return Err(Error::Config(format!(
                        "cluster member lists do not partition 0..{n_obs} (index {i})"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(UnitStructure::Clustered { members })
    }

    /// `groups` consecutive clusters of `size` observations.
    pub fn equal_clusters(groups: usize, size: usize) -> Result<Self> {
        Self::clustered(
            (0..groups)
                .map(|g| (g * size..(g + 1) * size).collect())
                .collect(),
        )
    }

    /// Number of resampling units (observations, clusters or paths).
    pub fn unit_count(&self) -> usize {
        match self {
            UnitStructure::Iid { n } => *n,
            UnitStructure::Clustered { members } => members.len(),
            UnitStructure::Panel { n, .. } => *n,
        }
    }

    pub fn observation_count(&self) -> usize {
        match self {
            UnitStructure::Iid { n } => *n,
            UnitStructure::Clustered { members } => members.iter().map(Vec::len).sum(),
            UnitStructure::Panel { n, periods } => n * periods,
        }
    }

    fn expand_into(&self, unit: usize, out: &mut Vec<usize>) {
        match self {
            UnitStructure::Iid { .. } => out.push(unit),
            UnitStructure::Clustered { members } => out.extend_from_slice(&members[unit]),
            UnitStructure::Panel { periods, .. } => {
                out.extend(unit * periods..(unit + 1) * periods)
            }
        }
    }

    /// Multiset from an explicit list of unit ids.
    pub fn multiset(&self, units: Vec<usize>) -> Result<IndexMultiset> {
        let count = self.unit_count();
        if let Some(&bad) = units.iter().find(|&&u| u >= count) {
            return Err(Error::Config(format!("unit id {bad} out of range 0..{count}")));
        }
        let mut expansion = Vec::new();
        for &u in &units {
            self.expand_into(u, &mut expansion);
        }
        Ok(IndexMultiset { units, expansion })
    }

    /// Every unit exactly once, in order.
    pub fn full_sample(&self) -> IndexMultiset {
        self.multiset((0..self.unit_count()).collect())
            .expect("identity units are in range")
    }
}

/// Drawn units (repeats allowed) and the observation indices they expand to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMultiset {
    pub units: Vec<usize>,
    pub expansion: Vec<usize>,
}

impl IndexMultiset {
    pub fn unit_len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

fn check_draw_count(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "batch size m={m} must satisfy 1 <= m <= n={n}"
        )));
    }
    Ok(())
}

/// `m` uniform draws with replacement from `0..n`.
pub fn draw_iid<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<IndexMultiset> {
    check_draw_count(n, m)?;
    let units: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    Ok(IndexMultiset {
        expansion: units.clone(),
        units,
    })
}

/// As many clusters as the structure holds, drawn with replacement.
pub fn draw_clusters<R: Rng + ?Sized>(
    structure: &UnitStructure,
    rng: &mut R,
) -> Result<IndexMultiset> {
    let UnitStructure::Clustered { members } = structure else {
        return Err(Error::Config("cluster resampling needs a clustered structure".into()));
    };
    if members.is_empty() || members.iter().any(Vec::is_empty) {
        return Err(Error::Config("cluster structure has an empty cluster".into()));
    }
    let g = members.len();
    let units: Vec<usize> = (0..g).map(|_| rng.random_range(0..g)).collect();
    structure.multiset(units)
}

/// `m` of `n` panel paths with replacement; each path stays time-ordered.
pub fn draw_paths<R: Rng + ?Sized>(
    structure: &UnitStructure,
    m: usize,
    rng: &mut R,
) -> Result<IndexMultiset> {
    let UnitStructure::Panel { n, .. } = *structure else {
        return Err(Error::Config("path resampling needs a panel structure".into()));
    };
    check_draw_count(n, m)?;
    let units: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    structure.multiset(units)
}

/// Rule producing a batch for each chain iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResamplingPlan {
    /// `m` observations with replacement.
    Iid { m: usize },
    /// All clusters' count of clusters, with replacement.
    Clusters,
    /// `m` panel paths with replacement.
    Paths { m: usize },
    /// The whole sample, every unit once (no resampling noise).
    Full,
}

impl ResamplingPlan {
    /// The natural plan for a structure at batch size `m`.
    pub fn for_structure(structure: &UnitStructure, m: usize) -> Self {
        match structure {
            UnitStructure::Iid { .. } => ResamplingPlan::Iid { m },
            UnitStructure::Clustered { .. } => ResamplingPlan::Clusters,
            UnitStructure::Panel { .. } => ResamplingPlan::Paths { m },
        }
    }

    /// Batch size in resampling units.
    pub fn batch_units(&self, structure: &UnitStructure) -> usize {
        match *self {
            ResamplingPlan::Iid { m } | ResamplingPlan::Paths { m } => m,
            ResamplingPlan::Clusters | ResamplingPlan::Full => structure.unit_count(),
        }
    }

    pub fn validate(&self, structure: &UnitStructure) -> Result<()> {
        match (*self, structure) {
            (ResamplingPlan::Iid { m }, UnitStructure::Iid { n }) => check_draw_count(*n, m),
            (ResamplingPlan::Paths { m }, UnitStructure::Panel { n, .. }) => {
                check_draw_count(*n, m)
            }
            (ResamplingPlan::Clusters, UnitStructure::Clustered { .. }) => Ok(()),
            (ResamplingPlan::Full, _) => Ok(()),
            (plan, s) => Err(Error::Config(format!(
                "resampling plan {plan:?} is incompatible with unit structure {}",
                match s {
                    UnitStructure::Iid { .. } => "iid",
                    UnitStructure::Clustered { .. } => "clustered",
                    UnitStructure::Panel { .. } => "panel",
                }
            ))),
        }
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        structure: &UnitStructure,
        rng: &mut R,
    ) -> Result<IndexMultiset> {
        self.validate(structure)?;
        match *self {
            ResamplingPlan::Iid { m } => draw_iid(structure.unit_count(), m, rng),
            ResamplingPlan::Clusters => draw_clusters(structure, rng),
            ResamplingPlan::Paths { m } => draw_paths(structure, m, rng),
            ResamplingPlan::Full => Ok(structure.full_sample()),
        }
    }
}
