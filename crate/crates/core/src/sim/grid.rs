use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::sim::Vec2;

pub const DEFAULT_RESOLUTION: f64 = 0.7;

/// Binary walkable/blocked map. Cell `(ix, iy)` covers
/// `[ix·res, (ix+1)·res) × [iy·res, (iy+1)·res)` in world meters, so the
/// world origin is the lower-left corner of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    walkable: Vec<bool>,
}

impl OccupancyGrid {
    /// Builds a grid from row-major cells (`iy * width + ix`). Border cells
    /// are forced to blocked.
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        mut walkable: Vec<bool>,
    ) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        if width < 3 || height < 3 {
            return Err(Error::invalid(format!(
                "grid {width}x{height} is too small"
            )));
        }
        if walkable.len() != width * height {
            return Err(Error::shape(
                "occupancy grid",
                &[height, width],
                &[walkable.len()],
            ));
        }
        for ix in 0..width {
            walkable[ix] = false;
            walkable[(height - 1) * width + ix] = false;
        }
        for iy in 0..height {
            walkable[iy * width] = false;
            walkable[iy * width + width - 1] = false;
        }
        if !walkable.iter().any(|&w| w) {
            return Err(Error::invalid("grid has no walkable cell"));
        }
        Ok(Self {
            width,
            height,
            resolution,
            walkable,
        })
    }

    /// A grid of `width_m × height_m` meters whose cells are walkable where
    /// `pred(cell centre)` holds.
    pub fn from_fn(
        width_m: f64,
        height_m: f64,
        resolution: f64,
        pred: impl Fn(Vec2) -> bool,
    ) -> Result<Self> {
        let width = (width_m / resolution).ceil() as usize;
        let height = (height_m / resolution).ceil() as usize;
        let mut cells = vec![false; width * height];
        for iy in 0..height {
            for ix in 0..width {
                let c = Vec2::new(
                    (ix as f64 + 0.5) * resolution,
                    (iy as f64 + 0.5) * resolution,
                );
                cells[iy * width + ix] = pred(c);
            }
        }
        Self::new(width, height, resolution, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn extent(&self) -> Vec2 {
        Vec2::new(
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn cells(&self) -> &[bool] {
        &self.walkable
    }

    pub fn is_walkable_cell(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return false;
        }
        self.walkable[iy as usize * self.width + ix as usize]
    }

    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        (
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, ix: i64, iy: i64) -> Vec2 {
        Vec2::new(
            (ix as f64 + 0.5) * self.resolution,
            (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn is_walkable(&self, p: Vec2) -> bool {
        let (ix, iy) = self.cell_of(p);
        self.is_walkable_cell(ix, iy)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let e = self.extent();
        p.x >= 0.0 && p.y >= 0.0 && p.x < e.x && p.y < e.y
    }

    /// Closest point of the nearest blocked cell within `range` meters.
    /// Off-grid space counts as blocked.
    pub fn nearest_blocked(&self, p: Vec2, range: f64) -> Option<Vec2> {
        let r = (range / self.resolution).ceil() as i64 + 1;
        let (cx, cy) = self.cell_of(p);
        let mut best: Option<(f64, Vec2)> = None;
        for iy in cy - r..=cy + r {
            for ix in cx - r..=cx + r {
                if self.is_walkable_cell(ix, iy) {
                    continue;
                }
                let q = self.closest_point_in_cell(p, ix, iy);
                let d = p.dist(q);
                if d <= range && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, q));
                }
            }
        }
        best.map(|(_, q)| q)
    }

    /// Nearest point of a walkable cell, pulled slightly inside the cell.
    pub fn nearest_walkable_point(&self, p: Vec2) -> Option<Vec2> {
        let (cx, cy) = self.cell_of(p);
        let max_r = self.width.max(self.height) as i64;
        for r in 0..=max_r {
            let mut best: Option<(f64, Vec2)> = None;
            for iy in cy - r..=cy + r {
                for ix in cx - r..=cx + r {
                    if (ix - cx).abs().max((iy - cy).abs()) != r || !self.is_walkable_cell(ix, iy) {
                        continue;
                    }
                    let margin = 0.05 * self.resolution;
                    let lo = Vec2::new(
                        ix as f64 * self.resolution + margin,
                        iy as f64 * self.resolution + margin,
                    );
                    let hi = Vec2::new(
                        (ix + 1) as f64 * self.resolution - margin,
                        (iy + 1) as f64 * self.resolution - margin,
                    );
                    let q = Vec2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
                    let d = p.dist(q);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, q));
                    }
                }
            }
            if let Some((_, q)) = best {
                return Some(q);
            }
        }
        None
    }

    fn closest_point_in_cell(&self, p: Vec2, ix: i64, iy: i64) -> Vec2 {
        let res = self.resolution;
        Vec2::new(
            p.x.clamp(ix as f64 * res, (ix + 1) as f64 * res),
            p.y.clamp(iy as f64 * res, (iy + 1) as f64 * res),
        )
    }

    /// `size × size × 1` patch centred on the cell containing `p`: 1 for
    /// walkable, 0 for blocked. Patch row `r` maps to cell row
    /// `cy − size/2 + r`, column `c` to `cx − size/2 + c`; anything outside
    /// the grid is blocked.
    pub fn crop_patch(&self, p: Vec2, size: usize) -> Tensor {
        let (cx, cy) = self.cell_of(p);
        let half = (size / 2) as i64;
        let mut data = vec![0.0; size * size];
        for r in 0..size {
            for c in 0..size {
                let ix = cx - half + c as i64;
                let iy = cy - half + r as i64;
                if self.is_walkable_cell(ix, iy) {
                    data[r * size + c] = 1.0;
                }
            }
        }
        Tensor::new(&[size, size, 1], data).expect("patch sized")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(n: usize) -> OccupancyGrid {
        OccupancyGrid::new(n, n, 0.7, vec![true; n * n]).unwrap()
    }

    #[test]
    fn border_is_blocked() {
        let g = open(5);
        assert!(!g.is_walkable_cell(0, 2));
        assert!(!g.is_walkable_cell(4, 2));
        assert!(g.is_walkable_cell(2, 2));
        assert!(!g.is_walkable_cell(-1, 2));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(OccupancyGrid::new(5, 5, 0.0, vec![true; 25]).is_err());
        assert!(OccupancyGrid::new(5, 5, 0.7, vec![true; 24]).is_err());
        assert!(OccupancyGrid::new(4, 4, 0.7, vec![true; 16]).is_ok());
        assert!(OccupancyGrid::new(5, 5, 0.7, vec![false; 25]).is_err());
    }

    #[test]
    fn patch_at_centre_is_walkable() {
        let g = open(100);
        let c = g.extent() * 0.5;
        let p = g.crop_patch(c, 32);
        assert_eq!(p.shape(), &[32, 32, 1]);
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn patch_at_corner_is_mostly_blocked() {
        let g = open(100);
        let p = g.crop_patch(Vec2::new(0.1, 0.1), 32);
        let blocked = p.data().iter().filter(|&&v| v == 0.0).count();
        assert!(blocked * 4 >= 3 * 32 * 32, "{blocked}");
    }

    #[test]
    fn patch_orientation_follows_cells() {
        // One blocked cell to the east of the centre shows up at column half+1.
        let mut cells = vec![true; 40 * 40];
        cells[20 * 40 + 21] = false;
        let g = OccupancyGrid::new(40, 40, 0.7, cells).unwrap();
        let p = g.crop_patch(g.cell_center(20, 20), 32);
        assert_eq!(p.data()[16 * 32 + 17], 0.0);
        assert_eq!(p.data()[17 * 32 + 16], 1.0);
    }

    #[test]
    fn nearest_blocked_and_walkable() {
        let g = open(10);
        let p = Vec2::new(1.0, 3.0);
        let q = g.nearest_blocked(p, 2.0).unwrap();
        assert!((q.x - 0.7).abs() < 1e-12 && (q.y - 3.0).abs() < 1e-12);
        let w = g.nearest_walkable_point(Vec2::new(0.2, 3.0)).unwrap();
        assert!(g.is_walkable(w));
        assert!(g.nearest_blocked(g.extent() * 0.5, 0.5).is_none());
    }
}
