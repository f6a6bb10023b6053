//! On-disk dataset layout:
//!
//! ```text
//! <dir>/trajectories.csv   scene_id,ped_id,t,x,y,split
//! <dir>/occupancy.pgm      binary P5, 0 = blocked, 255 = walkable, top row = highest y
//! <dir>/occupancy.json     {"resolution_m": 0.7}
//! <dir>/gt_index.json      observation key and route per record
//! <dir>/dataset.json       generation metadata
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{
    Dataset, DatasetKind, GroundTruthSet, OccupancyGrid, SimLog, TrajectoryRecord, Vec2, OBS_LEN,
    SEQ_LEN,
};

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const OCCUPANCY: &str = "occupancy.pgm";
pub const OCCUPANCY_META: &str = "occupancy.json";
pub const GT_INDEX: &str = "gt_index.json";
pub const DATASET_META: &str = "dataset.json";

fn format_err(what: &'static str, path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        what,
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    scene_id: u32,
    ped_id: u32,
    t: usize,
    x: f64,
    y: f64,
    split: String,
}

pub fn write_trajectories_csv(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "scene_id,ped_id,t,x,y,split")?;
    for r in records {
        for (t, p) in r.positions.iter().enumerate() {
            let split = if t < OBS_LEN { "obs" } else { "fut" };
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{}",
                r.scene_id, r.ped_id, t, p.x, p.y, split
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads records in file order. Neighbour lists are rebuilt from
/// co-presence of pedestrians in the same scene at the same frame.
pub fn read_trajectories_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| format_err("trajectory csv", path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| format_err("trajectory csv", path, e))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["scene_id", "ped_id", "t", "x", "y", "split"] {
        return Err(format_err(
            "trajectory csv",
            path,
            format!("unexpected header {headers:?}"),
        ));
    }
    let mut order: Vec<(u32, u32)> = Vec::new();
    let mut rows: HashMap<(u32, u32), Vec<(usize, Vec2)>> = HashMap::new();
    for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| format_err("trajectory csv", path, e))?;
        let expected = if row.t < OBS_LEN { "obs" } else { "fut" };
        if row.split != expected || row.t >= SEQ_LEN {
            return Err(format_err(
                "trajectory csv",
                path,
                format!("row {}: bad split/t", line + 2),
            ));
        }
        let key = (row.scene_id, row.ped_id);
        rows.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        rows.get_mut(&key)
            .expect("inserted")
            .push((row.t, Vec2::new(row.x, row.y)));
    }
    let mut present: HashMap<(u32, usize), Vec<u32>> = HashMap::new();
    let mut records = Vec::with_capacity(order.len());
    for key in &order {
        let mut steps = rows.remove(key).expect("grouped");
        steps.sort_by_key(|(t, _)| *t);
        if steps.len() != SEQ_LEN || steps.iter().enumerate().any(|(i, (t, _))| *t != i) {
            return Err(format_err(
                "trajectory csv",
                path,
                format!(
                    "scene {} ped {} is not {SEQ_LEN} consecutive frames",
                    key.0, key.1
                ),
            ));
        }
        for (t, _) in &steps {
            present.entry((key.0, *t)).or_default().push(key.1);
        }
        records.push(TrajectoryRecord {
            scene_id: key.0,
            ped_id: key.1,
            positions: steps.into_iter().map(|(_, p)| p).collect(),
            neighbors: Vec::new(),
            route: 0,
        });
    }
    for r in &mut records {
        r.neighbors = (0..SEQ_LEN)
            .map(|t| {
                present[&(r.scene_id, t)]
                    .iter()
                    .copied()
                    .filter(|&p| p != r.ped_id)
                    .collect()
            })
            .collect();
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct OccupancyMeta {
    resolution_m: f64,
}

pub fn write_pgm(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    let (w, h) = (grid.width(), grid.height());
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for row in 0..h {
        let iy = h - 1 - row;
        for ix in 0..w {
            bytes.push(if grid.cells()[iy * w + ix] { 255 } else { 0 });
        }
    }
    fs::write(path, bytes)?;
    let meta = serde_json::to_string(&OccupancyMeta {
        resolution_m: grid.resolution(),
    })?;
    fs::write(path.with_extension("json"), meta)?;
    Ok(())
}

fn pgm_token<R: BufRead>(r: &mut R, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = String::new();
                r.read_line(&mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    String::from_utf8(tok).map_err(|e| format_err("pgm header", path, e))
}

pub fn read_pgm(path: &Path) -> Result<OccupancyGrid> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let magic = pgm_token(&mut r, path)?;
    if magic != "P5" {
        return Err(format_err(
            "pgm",
            path,
            format!("magic `{magic}`, expected P5"),
        ));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = pgm_token(&mut r, path)?;
        t.parse()
            .map_err(|_| format_err("pgm", path, format!("bad {what} `{t}`")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(format_err(
            "pgm",
            path,
            format!("maxval {maxval}, expected 255"),
        ));
    }
    let mut data = vec![0u8; w * h];
    r.read_exact(&mut data)
        .map_err(|e| format_err("pgm", path, e))?;
    let meta_path = path.with_extension("json");
    let meta: OccupancyMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| format_err("occupancy sidecar", &meta_path, e))?;
    let mut cells = vec![false; w * h];
    for row in 0..h {
        let iy = h - 1 - row;
        for ix in 0..w {
            cells[iy * w + ix] = data[row * w + ix] >= 128;
        }
    }
    OccupancyGrid::new(w, h, meta.resolution_m, cells)
}

#[derive(Debug, Serialize, Deserialize)]
struct GtEntry {
    scene_id: u32,
    ped_id: u32,
    key: String,
    route: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub seed: u64,
    pub n_records: usize,
    pub n_modes: usize,
    pub r_max: f64,
    pub resolution_m: f64,
    pub log: SimLog,
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectories_csv(&dir.join(TRAJECTORIES), &ds.records)?;
    write_pgm(&dir.join(OCCUPANCY), &ds.grid)?;
    let gt: Vec<GtEntry> = ds
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| GtEntry {
            scene_id: r.scene_id,
            ped_id: r.ped_id,
            key: ds.gt.key(i).to_string(),
            route: r.route,
        })
        .collect();
    fs::write(dir.join(GT_INDEX), serde_json::to_string_pretty(&gt)?)?;
    let meta = DatasetMeta {
        kind: ds.kind.name().to_string(),
        seed: ds.seed,
        n_records: ds.len(),
        n_modes: ds.n_modes,
        r_max: ds.r_max,
        resolution_m: ds.grid.resolution(),
        log: ds.log,
    };
    fs::write(dir.join(DATASET_META), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn kind_from_name(name: &str, path: &Path) -> Result<DatasetKind> {
    if name == "circle" {
        return Ok(DatasetKind::Circle);
    }
    crate::sim::SceneKind::parse(name)
        .map(DatasetKind::Junction)
        .map_err(|e| format_err("dataset metadata", path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let p = |f: &str| -> PathBuf { dir.join(f) };
    let meta_path = p(DATASET_META);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| format_err("dataset metadata", &meta_path, e))?;
    let mut records = read_trajectories_csv(&p(TRAJECTORIES))?;
    let grid = read_pgm(&p(OCCUPANCY))?;
    let gt_path = p(GT_INDEX);
    let gt: Vec<GtEntry> = serde_json::from_str(&fs::read_to_string(&gt_path)?)
        .map_err(|e| format_err("ground-truth index", &gt_path, e))?;
    if gt.len() != records.len() {
        return Err(format_err(
            "ground-truth index",
            &gt_path,
            format!("{} entries for {} records", gt.len(), records.len()),
        ));
    }
    let mut keys = Vec::with_capacity(gt.len());
    for (r, e) in records.iter_mut().zip(gt) {
        if (r.scene_id, r.ped_id) != (e.scene_id, e.ped_id) {
            return Err(format_err(
                "ground-truth index",
                &gt_path,
                "record order differs from trajectories.csv",
            ));
        }
        r.route = e.route;
        keys.push(e.key);
    }
    Dataset::new(
        kind_from_name(&meta.kind, &meta_path)?,
        grid,
        records,
        GroundTruthSet::from_keys(keys),
        meta.log,
        meta.n_modes,
        meta.r_max,
        meta.seed,
    )
}
