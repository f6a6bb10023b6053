//! Per-sample conditioning inputs and their batched tensor form.
//!
//! Everything is expressed relative to the last observed position (the
//! anchor), which makes the predictor translation-equivariant.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{Tensor, PATCH_SIZE};
use crate::sim::{Dataset, OccupancyGrid, Vec2, OBS_LEN, PRED_LEN};

/// Number of observed displacements.
pub const OBS_STEPS: usize = OBS_LEN - 1;
/// Cells of the attention grid after two 2×2 pools.
pub const ATT_CELLS: usize = (PATCH_SIZE / 4) * (PATCH_SIZE / 4);

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub obs_disp: Vec<Vec2>,
    /// Neighbour's last observed position minus the anchor.
    pub offset: Vec2,
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub anchor: Vec2,
    pub obs_disp: Vec<Vec2>,
    pub neighbors: Vec<Neighbor>,
    /// `[32, 32, 1]` occupancy patch; shared between samples in the same cell.
    pub patch: Arc<Tensor>,
    /// Future positions relative to the anchor, when known.
    pub future: Option<Vec<Vec2>>,
}

fn displacements(obs: &[Vec2]) -> Vec<Vec2> {
    obs.windows(2).map(|w| w[1] - w[0]).collect()
}

impl SceneSample {
    /// From raw world-frame observations. `neighbors` holds each neighbour's
    /// 8 observed positions.
    pub fn new(obs: &[Vec2], neighbors: &[&[Vec2]], patch: Arc<Tensor>) -> Result<Self> {
        if obs.len() != OBS_LEN || neighbors.iter().any(|n| n.len() != OBS_LEN) {
            return Err(Error::invalid(format!(
                "observations must have {OBS_LEN} positions"
            )));
        }
        if obs
            .iter()
            .chain(neighbors.iter().flat_map(|n| n.iter()))
            .any(|p| !p.is_finite())
        {
            return Err(Error::NonFinite("observed positions".into()));
        }
        if patch.shape() != [PATCH_SIZE, PATCH_SIZE, 1] {
            return Err(Error::shape(
                "scene patch",
                patch.shape(),
                &[PATCH_SIZE, PATCH_SIZE, 1],
            ));
        }
        let anchor = obs[OBS_LEN - 1];
        Ok(Self {
            anchor,
            obs_disp: displacements(obs),
            neighbors: neighbors
                .iter()
                .map(|n| Neighbor {
                    obs_disp: displacements(n),
                    offset: n[OBS_LEN - 1] - anchor,
                })
                .collect(),
            patch,
            future: None,
        })
    }

    pub fn with_future(mut self, future: &[Vec2]) -> Result<Self> {
        if future.len() != PRED_LEN {
            return Err(Error::invalid(format!(
                "future must have {PRED_LEN} positions"
            )));
        }
        self.future = Some(future.iter().map(|&p| p - self.anchor).collect());
        Ok(self)
    }

    pub fn last_disp(&self) -> Vec2 {
        self.obs_disp[OBS_STEPS - 1]
    }

    /// Shifts the sample by a world-frame offset. Only the anchor moves.
    pub fn translated(&self, delta: Vec2) -> Self {
        let mut s = self.clone();
        s.anchor += delta;
        s
    }
}

/// Crops patches through a per-cell cache so samples in the same cell share
/// one allocation (and one CNN evaluation per batch).
#[derive(Debug, Default)]
pub struct PatchCache {
    cache: HashMap<(i64, i64), Arc<Tensor>>,
}

impl PatchCache {
    pub fn get(&mut self, grid: &OccupancyGrid, p: Vec2) -> Arc<Tensor> {
        self.cache
            .entry(grid.cell_of(p))
            .or_insert_with(|| Arc::new(grid.crop_patch(p, PATCH_SIZE)))
            .clone()
    }
}

/// Conditioning samples for the given records, with ground-truth futures.
pub fn samples_from_dataset(ds: &Dataset, indices: &[usize]) -> Result<Vec<SceneSample>> {
    let mut patches = PatchCache::default();
    indices
        .iter()
        .map(|&i| {
            let r = &ds.records[i];
            let nbs: Vec<&[Vec2]> = ds
                .neighbors_of(i)
                .into_iter()
                .map(|j| ds.records[j].obs())
                .collect();
            let patch = patches.get(&ds.grid, r.positions[OBS_LEN - 1]);
            SceneSample::new(r.obs(), &nbs, patch)?.with_future(r.future())
        })
        .collect()
}

/// Batched encoder inputs for `n` samples with `m` neighbours in total.
#[derive(Debug, Clone)]
pub struct EncoderBatch {
    pub n: usize,
    /// Per observed step, `[n + m, 2]`: sample rows first, then neighbour rows.
    pub steps: Vec<Tensor>,
    /// Distinct patches `[u, 32, 32, 1]` and the patch index of each sample.
    pub patches: Tensor,
    pub patch_of: Vec<usize>,
    /// Neighbour count per sample.
    pub seg: Vec<usize>,
    /// Owning sample of each neighbour row.
    pub owner: Vec<usize>,
    /// `[m, 3]`: distance, cos and sin of the bearing.
    pub geometry: Tensor,
    pub last_disp: Tensor,
}

/// Bearing of `offset` relative to the heading `dir`, in `(−π, π]`.
pub fn bearing(dir: Vec2, offset: Vec2) -> f64 {
    let heading = if dir.norm() > 1e-6 { dir.angle() } else { 0.0 };
    let mut b = offset.angle() - heading;
    while b <= -std::f64::consts::PI {
        b += 2.0 * std::f64::consts::PI;
    }
    while b > std::f64::consts::PI {
        b -= 2.0 * std::f64::consts::PI;
    }
    b
}

impl EncoderBatch {
    pub fn new(samples: &[&SceneSample]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let m: usize = samples.iter().map(|s| s.neighbors.len()).sum();
        let mut steps = vec![vec![0.0; (n + m) * 2]; OBS_STEPS];
        let mut row = n;
        let mut seg = Vec::with_capacity(n);
        let mut owner = Vec::with_capacity(m);
        let mut geometry = Vec::with_capacity(m * 3);
        for (i, s) in samples.iter().enumerate() {
            if s.obs_disp.len() != OBS_STEPS {
                return Err(Error::invalid("sample must carry 7 displacements"));
            }
            for (t, d) in s.obs_disp.iter().enumerate() {
                steps[t][2 * i] = d.x;
                steps[t][2 * i + 1] = d.y;
            }
            seg.push(s.neighbors.len());
            for nb in &s.neighbors {
                for (t, d) in nb.obs_disp.iter().enumerate() {
                    steps[t][2 * row] = d.x;
                    steps[t][2 * row + 1] = d.y;
                }
                let b = bearing(s.last_disp(), nb.offset);
                geometry.extend([nb.offset.norm(), b.cos(), b.sin()]);
                owner.push(i);
                row += 1;
            }
        }
        let mut unique: Vec<&Arc<Tensor>> = Vec::new();
        let mut patch_of = Vec::with_capacity(n);
        for s in samples {
            let k = match unique
                .iter()
                .position(|u| Arc::ptr_eq(u, &s.patch) || ***u == *s.patch)
            {
                Some(k) => k,
                None => {
                    unique.push(&s.patch);
                    unique.len() - 1
                }
            };
            patch_of.push(k);
        }
        let mut pdata = Vec::with_capacity(unique.len() * PATCH_SIZE * PATCH_SIZE);
        for u in &unique {
            pdata.extend_from_slice(u.data());
        }
        let last: Vec<f64> = samples
            .iter()
            .flat_map(|s| [s.last_disp().x, s.last_disp().y])
            .collect();
        Ok(Self {
            n,
            steps: steps
                .into_iter()
                .map(|d| Tensor::new(&[n + m, 2], d))
                .collect::<Result<_>>()?,
            patches: Tensor::new(&[unique.len(), PATCH_SIZE, PATCH_SIZE, 1], pdata)?,
            patch_of,
            seg,
            owner,
            geometry: Tensor::new(&[m, 3], geometry)?,
            last_disp: Tensor::new(&[n, 2], last)?,
        })
    }

    pub fn neighbor_rows(&self) -> usize {
        self.owner.len()
    }
}

/// Flattened `[n, 24]` relative futures.
pub fn future_tensor(samples: &[&SceneSample]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * 2 * PRED_LEN);
    for s in samples {
        let f = s
            .future
            .as_ref()
            .ok_or_else(|| Error::invalid("sample has no future"))?;
        data.extend(f.iter().flat_map(|p| [p.x, p.y]));
    }
    Tensor::new(&[samples.len(), 2 * PRED_LEN], data)
}
