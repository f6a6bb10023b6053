//! Min-over-k displacement errors, manifold precision/recall and mode
//! counting.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::PredictionSet;
use crate::sim::{Dataset, Vec2, OBS_LEN};

pub const DEFAULT_R_MAX: f64 = 2.0;
pub const DEFAULT_K: usize = 20;

fn check_horizon(a: &[Vec2], b: &[Vec2]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("trajectory horizon", &[a.len()], &[b.len()]));
    }
    Ok(())
}

pub fn ade(pred: &[Vec2], y: &[Vec2]) -> Result<f64> {
    check_horizon(pred, y)?;
    Ok(pred.iter().zip(y).map(|(a, b)| a.dist(*b)).sum::<f64>() / y.len() as f64)
}

pub fn fde(pred: &[Vec2], y: &[Vec2]) -> Result<f64> {
    check_horizon(pred, y)?;
    Ok(pred[pred.len() - 1].dist(y[y.len() - 1]))
}

fn min_over<F: Fn(&[Vec2], &[Vec2]) -> Result<f64>>(
    preds: &[Vec<Vec2>],
    y: &[Vec2],
    f: F,
) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("need at least one prediction"));
    }
    preds
        .iter()
        .try_fold(f64::INFINITY, |m, p| Ok(m.min(f(p, y)?)))
}

pub fn ade_min_k(preds: &[Vec<Vec2>], y: &[Vec2]) -> Result<f64> {
    min_over(preds, y, ade)
}

pub fn fde_min_k(preds: &[Vec<Vec2>], y: &[Vec2]) -> Result<f64> {
    min_over(preds, y, fde)
}

/// Acceptance radius at step `t` (1-based) of a horizon `horizon`.
pub fn radius(r_max: f64, t: usize, horizon: usize) -> f64 {
    r_max * t as f64 / horizon as f64
}

/// 1 if every step of `phi` lies within the growing radius of the same step
/// of some member of `set`, else 0. The member may differ per step.
pub fn manifold_score(phi: &[Vec2], set: &[Vec<Vec2>], r_max: f64) -> u8 {
    if set.is_empty() {
        return 0;
    }
    let horizon = phi.len();
    let inside = (0..horizon).all(|t| {
        let r = radius(r_max, t + 1, horizon);
        set.iter()
            .any(|s| s.len() == horizon && phi[t].dist(s[t]) <= r)
    });
    u8::from(inside)
}

fn coverage(a: &[Vec<Vec2>], b: &[Vec<Vec2>], r_max: f64) -> f64 {
    a.iter()
        .map(|phi| manifold_score(phi, b, r_max) as f64)
        .sum::<f64>()
        / a.len() as f64
}

/// Share of generated trajectories inside the ground-truth manifold.
pub fn precision(generated: &[Vec<Vec2>], truth: &[Vec<Vec2>], r_max: f64) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::invalid("precision of an empty generated set"));
    }
    Ok(coverage(generated, truth, r_max))
}

/// Share of ground-truth trajectories inside the generated manifold.
pub fn recall(generated: &[Vec<Vec2>], truth: &[Vec<Vec2>], r_max: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("recall against an empty ground-truth set"));
    }
    Ok(coverage(truth, generated, r_max))
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ade: f64,
    pub fde: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub k: usize,
    pub r_max: f64,
    pub n_eval: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "ade,fde,precision,recall,f1,k,r_max,n_eval";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.ade,
            self.fde,
            self.precision,
            self.recall,
            self.f1,
            self.k,
            self.r_max,
            self.n_eval
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Scores predictions for dataset records `indices` (one set per record).
/// Precision and recall are computed per record against the futures of all
/// records sharing its observation, aligned to its last observed position,
/// and averaged over records.
pub fn evaluate(
    ds: &Dataset,
    indices: &[usize],
    preds: &[PredictionSet],
    r_max: f64,
) -> Result<MetricsReport> {
    if indices.is_empty() || indices.len() != preds.len() {
        return Err(Error::invalid(
            "need one prediction set per evaluated record",
        ));
    }
    let mut acc = [0.0; 4];
    for (&i, p) in indices.iter().zip(preds) {
        let y = ds.records[i].future();
        let truth = ds.gt.aligned_futures(&ds.records, i);
        acc[0] += ade_min_k(&p.trajectories, y)?;
        acc[1] += fde_min_k(&p.trajectories, y)?;
        acc[2] += precision(&p.trajectories, &truth, r_max)?;
        acc[3] += recall(&p.trajectories, &truth, r_max)?;
    }
    let n = indices.len() as f64;
    let [ade, fde, precision, recall] = acc.map(|v| v / n);
    Ok(MetricsReport {
        ade,
        fde,
        precision,
        recall,
        f1: f1(precision, recall),
        k: preds[0].len(),
        r_max,
        n_eval: indices.len(),
    })
}

/// Similarity and clearance thresholds for mode counting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCountParams {
    /// Max distance between first observed positions, m.
    pub start_radius: f64,
    /// Max heading difference over the observation, degrees.
    pub heading_tol_deg: f64,
    /// Max difference of mean observed speed, m/s.
    pub speed_tol: f64,
    /// Trajectories passing closer than this to another pedestrian are dropped, m.
    pub clearance: f64,
    pub r_max: f64,
}

impl Default for ModeCountParams {
    fn default() -> Self {
        Self {
            start_radius: 2.0,
            heading_tol_deg: 45.0,
            speed_tol: 0.5,
            clearance: 0.5,
            r_max: DEFAULT_R_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCount {
    pub per_step: Vec<usize>,
    pub average: f64,
    /// Trajectories that passed the similarity and clearance filters.
    pub n_similar: usize,
}

/// Connected components of the graph joining points closer than `2r`.
pub fn disc_components(points: &[Vec2], r: f64) -> usize {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    // Bucket points into cells of side 2r so only neighbouring cells are
    // compared.
    let side = 2.0 * r;
    let cell = |p: Vec2| ((p.x / side).floor() as i64, (p.y / side).floor() as i64);
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        cells.entry(cell(p)).or_default().push(i);
    }
    for (i, &p) in points.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket.iter().filter(|&&j| j > i) {
                    if p.dist(points[j]) <= side {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a] = b;
                    }
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Mode count of a set of futures: disc components per step and their mean.
pub fn count_modes_of(futures: &[Vec<Vec2>], r_max: f64) -> ModeCount {
    let Some(first) = futures.first() else {
        return ModeCount {
            per_step: Vec::new(),
            average: 0.0,
            n_similar: 0,
        };
    };
    let horizon = first.len();
    let per_step: Vec<usize> = (0..horizon)
        .map(|t| {
            let pts: Vec<Vec2> = futures.iter().map(|f| f[t]).collect();
            disc_components(&pts, radius(r_max, t + 1, horizon))
        })
        .collect();
    let average = per_step.iter().sum::<usize>() as f64 / horizon.max(1) as f64;
    ModeCount {
        per_step,
        average,
        n_similar: futures.len(),
    }
}

fn obs_heading_speed(obs: &[Vec2], dt: f64) -> (Vec2, f64) {
    let d = obs[obs.len() - 1] - obs[0];
    let speed = d.norm() / ((obs.len() - 1) as f64 * dt);
    (d, speed)
}

fn clear_of_others(ds: &Dataset, i: usize, clearance: f64) -> bool {
    let r = &ds.records[i];
    r.neighbors.iter().enumerate().all(|(t, ids)| {
        ids.iter()
            .filter_map(|&id| ds.find(r.scene_id, id))
            .all(|j| r.positions[t].dist(ds.records[j].positions[t]) >= clearance)
    })
}

/// Counts modes of the futures of trajectories similar to `anchor`, aligned
/// to the anchor's last observed position.
pub fn count_modes(ds: &Dataset, anchor: usize, params: &ModeCountParams) -> Result<ModeCount> {
    if ds.is_empty() || anchor >= ds.len() {
        return Err(Error::invalid("anchor outside a non-empty dataset"));
    }
    let a = &ds.records[anchor];
    let dt = crate::sim::FRAME_DT;
    let (a_dir, a_speed) = obs_heading_speed(a.obs(), dt);
    let a_last = a.positions[OBS_LEN - 1];
    let tol = params.heading_tol_deg.to_radians();
    let futures: Vec<Vec<Vec2>> = (0..ds.len())
        .filter(|&j| {
            let r = &ds.records[j];
            let (dir, speed) = obs_heading_speed(r.obs(), dt);
            let dh = if a_dir.norm() > 1e-9 && dir.norm() > 1e-9 {
                (dir.normalized().dot(a_dir.normalized()))
                    .clamp(-1.0, 1.0)
                    .acos()
            } else {
                0.0
            };
            r.positions[0].dist(a.positions[0]) <= params.start_radius
                && dh <= tol
                && (speed - a_speed).abs() <= params.speed_tol
                && clear_of_others(ds, j, params.clearance)
        })
        .map(|j| {
            let r = &ds.records[j];
            let shift = a_last - r.positions[OBS_LEN - 1];
            r.future().iter().map(|&p| p + shift).collect()
        })
        .collect();
    if futures.is_empty() {
        log::warn!("no trajectories similar to record {anchor}; reporting 0 modes");
    }
    Ok(count_modes_of(&futures, params.r_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(offset: Vec2, n: usize) -> Vec<Vec2> {
        (1..=n)
            .map(|t| Vec2::new(t as f64 * 0.5, 0.0) + offset)
            .collect()
    }

    #[test]
    fn ade_fde_examples() {
        let y = line(Vec2::ZERO, 12);
        assert_eq!(ade_min_k(std::slice::from_ref(&y), &y).unwrap(), 0.0);
        assert!((ade_min_k(&[line(Vec2::new(0.0, 1.0), 12)], &y).unwrap() - 1.0).abs() < 1e-12);
        let two = [line(Vec2::new(0.0, 2.0), 12), line(Vec2::new(0.0, 0.5), 12)];
        assert!((ade_min_k(&two, &y).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(fde_min_k(std::slice::from_ref(&y), &y).unwrap(), 0.0);
        let mut a = y.clone();
        a[11].y += 3.0;
        let mut b = y.clone();
        b[11].y += 1.2;
        assert!((fde_min_k(&[a, b], &y).unwrap() - 1.2).abs() < 1e-12);
        assert!(ade_min_k(&[line(Vec2::ZERO, 11)], &y).is_err());
        assert!(fde_min_k(&[line(Vec2::ZERO, 11)], &y).is_err());
    }

    #[test]
    fn manifold_score_examples() {
        let y = line(Vec2::ZERO, 12);
        let set = vec![y.clone()];
        assert_eq!(manifold_score(&y, &set, 2.0), 1);
        assert_eq!(manifold_score(&line(Vec2::new(0.0, 3.0), 12), &set, 2.0), 0);
        let one = line(Vec2::new(0.0, 1.0), 12);
        assert_eq!(manifold_score(&one, &set, 2.0), 0);
        assert_eq!(manifold_score(&one, &set, 13.0), 1);
        assert_eq!(manifold_score(&y, &[], 2.0), 0);
    }

    #[test]
    fn precision_recall_examples() {
        let y = line(Vec2::ZERO, 12);
        let far = line(Vec2::new(100.0, 0.0), 12);
        assert_eq!(precision(std::slice::from_ref(&y), std::slice::from_ref(&y), 2.0).unwrap(), 1.0);
        assert_eq!(precision(std::slice::from_ref(&far), std::slice::from_ref(&y), 2.0).unwrap(), 0.0);
        assert_eq!(
            precision(&[y.clone(), far.clone()], std::slice::from_ref(&y), 2.0).unwrap(),
            0.5
        );
        assert_eq!(recall(std::slice::from_ref(&y), std::slice::from_ref(&y), 2.0).unwrap(), 1.0);
        assert_eq!(
            recall(std::slice::from_ref(&y), &[y.clone(), far.clone()], 2.0).unwrap(),
            0.5
        );
        assert!(precision(&[], std::slice::from_ref(&y), 2.0).is_err());
        assert!(recall(&[y], &[], 2.0).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert!((f1(0.71, 0.89) - 0.79).abs() < 0.005);
        assert_eq!(f1(1.0, 0.0), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn radius_grows_to_r_max() {
        assert_eq!(radius(2.0, 12, 12), 2.0);
        assert!((1..12).all(|t| radius(2.0, t, 12) < radius(2.0, t + 1, 12)));
    }

    #[test]
    fn mode_count_examples() {
        let one = count_modes_of(&[line(Vec2::ZERO, 12)], 2.0);
        assert!(one.per_step.iter().all(|&c| c == 1));
        let two = count_modes_of(
            &[line(Vec2::ZERO, 12), line(Vec2::new(0.0, 100.0), 12)],
            2.0,
        );
        assert!(two.per_step.iter().all(|&c| c == 2));
        assert_eq!(two.average, 2.0);
        assert_eq!(count_modes_of(&[], 2.0).average, 0.0);
    }
}
