//! Static SVG figures: a prediction fan over the occupancy map and a
//! histogram of the mean generator distribution.

use std::fmt::Write;

use mgtraj::sampling::PredictionSet;
use mgtraj::sim::{Dataset, Vec2};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const PX_PER_M: f64 = 40.0;
const VIEW_MARGIN: f64 = 3.0;

fn colour(g: usize) -> &'static str {
    PALETTE[g % PALETTE.len()]
}

struct View {
    min: Vec2,
    max: Vec2,
}

impl View {
    fn around<'a>(points: impl Iterator<Item = &'a Vec2>) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        let m = Vec2::new(VIEW_MARGIN, VIEW_MARGIN);
        Self {
            min: min - m,
            max: max + m,
        }
    }

    fn size(&self) -> (f64, f64) {
        (
            (self.max.x - self.min.x) * PX_PER_M,
            (self.max.y - self.min.y) * PX_PER_M,
        )
    }

    /// World meters to pixels, y pointing up.
    fn px(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.min.x) * PX_PER_M,
            (self.max.y - p.y) * PX_PER_M,
        )
    }

    fn polyline(&self, pts: &[Vec2], stroke: &str, width: f64, extra: &str) -> String {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{extra}/>\n",
            coords.join(" ")
        )
    }
}

/// Observed track (black), ground-truth future (dashed) and the predicted
/// futures of one record, coloured by generator, over walkable space.
pub fn fan_svg(ds: &Dataset, record: usize, preds: &PredictionSet, n_generators: usize) -> String {
    let r = &ds.records[record];
    let view = View::around(
        r.positions
            .iter()
            .chain(preds.trajectories.iter().flatten()),
    );
    let (w, h) = view.size();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(s, "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#555\"/>");

    // Walkable cells, merged into horizontal runs per grid row.
    let g = &ds.grid;
    let res = g.resolution();
    let (x0, y0) = g.cell_of(view.min);
    let (x1, y1) = g.cell_of(view.max);
    for iy in y0.max(0)..=y1.min(g.height() as i64 - 1) {
        let mut ix = x0.max(0);
        let end = x1.min(g.width() as i64 - 1);
        while ix <= end {
            if !g.is_walkable_cell(ix, iy) {
                ix += 1;
                continue;
            }
            let start = ix;
            while ix <= end && g.is_walkable_cell(ix, iy) {
                ix += 1;
            }
            let (px, py) = view.px(Vec2::new(start as f64 * res, (iy + 1) as f64 * res));
            let _ = writeln!(
                s,
                "<rect x=\"{px:.1}\" y=\"{py:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#f4f4f4\"/>",
                (ix - start) as f64 * res * PX_PER_M,
                res * PX_PER_M
            );
        }
    }

    let last = r.obs()[r.obs().len() - 1];
    for (traj, &gid) in preds.trajectories.iter().zip(&preds.generator_ids) {
        let mut pts = vec![last];
        pts.extend_from_slice(traj);
        s += &view.polyline(&pts, colour(gid), 1.5, " stroke-opacity=\"0.8\"");
    }
    let mut fut = vec![last];
    fut.extend_from_slice(r.future());
    s += &view.polyline(&fut, "#000", 2.0, " stroke-dasharray=\"6 4\"");
    s += &view.polyline(r.obs(), "#000", 3.0, "");

    for g in 0..n_generators {
        let y = 18.0 + 16.0 * g as f64;
        let p = preds.pi.get(g).copied().unwrap_or(0.0);
        let _ = writeln!(
            s,
            "<rect x=\"8\" y=\"{:.0}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"22\" y=\"{y:.0}\" font-size=\"11\" font-family=\"sans-serif\" fill=\"#fff\">G{g} pi={p:.2}</text>",
            y - 9.0,
            colour(g)
        );
    }
    s += "</svg>\n";
    s
}

/// Bar chart of π averaged over the evaluated records.
pub fn pi_histogram_svg(sets: &[PredictionSet], n_generators: usize) -> String {
    let mut mean = vec![0.0; n_generators];
    for set in sets {
        for (m, p) in mean.iter_mut().zip(&set.pi) {
            *m += p / sets.len().max(1) as f64;
        }
    }
    let (bar, gap, h, top, bottom) = (40.0, 12.0, 200.0, 20.0, 30.0);
    let w = 40.0 + n_generators as f64 * (bar + gap);
    let total = h + top + bottom;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{total:.0}\" viewBox=\"0 0 {w:.0} {total:.0}\">"
    );
    let _ = writeln!(
        s,
        "<line x1=\"30\" y1=\"{0:.0}\" x2=\"{w:.0}\" y2=\"{0:.0}\" stroke=\"#000\"/>",
        top + h
    );
    for (g, &m) in mean.iter().enumerate() {
        let x = 36.0 + g as f64 * (bar + gap);
        let bh = m * h;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.0}\" y=\"{:.1}\" width=\"{bar:.0}\" height=\"{bh:.1}\" fill=\"{}\"/>",
            top + h - bh,
            colour(g)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"middle\">G{g}</text>",
            x + bar / 2.0,
            top + h + 16.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.0}\" y=\"{:.1}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"middle\">{m:.2}</text>",
            x + bar / 2.0,
            top + h - bh - 4.0
        );
    }
    s += "</svg>\n";
    s
}
