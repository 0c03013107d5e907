//! Benchmark map/scenario files and map rendering.
//!
//! Benchmark files store rows top-down with column/row coordinates measured
//! from the top-left corner. Internally `y` grows upward, so file row `r` is
//! internal `y = height - 1 - r`.

mod fetch;
mod image;

use std::path::Path;

use thiserror::Error;

use crate::grid::{Coord, GridError, GridMap, Instance};

pub use fetch::{fetch_benchmarks, BenchmarkFile, FetchOutcome, BENCHMARK_FILES, DEFAULT_BASE_URL};
pub use image::{render_image, render_image_with_markers, MapImage, Rgb};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("map header: {0}")]
    Header(String),
    #[error("map body has {got} rows, header says {expected}")]
    RowCount { expected: usize, got: usize },
    #[error("map row {row} has {got} cells, header says {expected}")]
    RowLength {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("unknown map character {ch:?} at row {row}, column {col}")]
    UnknownChar { ch: char, row: usize, col: usize },
    #[error("scenario file must start with a version line")]
    MissingVersion,
    #[error("scenario line {line}: {msg}")]
    ScenLine { line: usize, msg: String },
    #[error("need {requested} agents but only {available} scenario entries")]
    NotEnoughEntries { requested: usize, available: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("download {url}: {msg}")]
    Download { url: String, msg: String },
    #[error("checksum mismatch for {file}: expected {expected}, got {got}")]
    Checksum {
        file: String,
        expected: String,
        got: String,
    },
}

/// One agent line of a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenEntry {
    pub bucket: u32,
    pub map_name: String,
    pub map_width: usize,
    pub map_height: usize,
    pub start: Coord,
    pub goal: Coord,
    pub optimal_single_agent_distance: f64,
}

fn cell_is_obstacle(ch: char) -> Option<bool> {
    match ch {
        '.' | 'G' => Some(false),
        '@' | 'O' | 'T' => Some(true),
        _ => None,
    }
}

/// Parses a map in the `type / height / width / map` text format.
pub fn parse_map(text: &str) -> Result<GridMap, BenchError> {
    parse_map_named(text, "")
}

pub fn parse_map_named(text: &str, name: &str) -> Result<GridMap, BenchError> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    let mut width = None;
    let mut height = None;
    let mut saw_type = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| BenchError::Header("missing `map` line".into()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let value = parts.next();
        match key {
            "type" => saw_type = true,
            "height" | "width" => {
                let v: usize = value
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| BenchError::Header(format!("bad `{line}`")))?;
                if key == "height" {
                    height = Some(v);
                } else {
                    width = Some(v);
                }
            }
            "map" => break,
            _ => return Err(BenchError::Header(format!("unexpected line `{line}`"))),
        }
    }
    if !saw_type {
        return Err(BenchError::Header("missing `type` line".into()));
    }
    let width = width.ok_or_else(|| BenchError::Header("missing `width`".into()))?;
    let height = height.ok_or_else(|| BenchError::Header("missing `height`".into()))?;

    let rows: Vec<&str> = lines.collect();
    // Tolerate trailing blank lines only.
    let body_len = rows
        .iter()
        .rposition(|r| !r.trim().is_empty())
        .map_or(0, |p| p + 1);
    if body_len != height {
        return Err(BenchError::RowCount {
            expected: height,
            got: body_len,
        });
    }
    let mut obstacles = Vec::new();
    for (row, line) in rows[..body_len].iter().enumerate() {
        let cells: Vec<char> = line.chars().collect();
        if cells.len() != width {
            return Err(BenchError::RowLength {
                row,
                expected: width,
                got: cells.len(),
            });
        }
        for (col, &ch) in cells.iter().enumerate() {
            match cell_is_obstacle(ch) {
                Some(true) => obstacles.push(file_to_internal(col, row, height)),
                Some(false) => {}
                None => return Err(BenchError::UnknownChar { ch, row, col }),
            }
        }
    }
    Ok(GridMap::new(name, width, height, obstacles)?)
}

/// File (column, row-from-top) to internal coordinates.
pub fn file_to_internal(col: usize, row: usize, height: usize) -> Coord {
    Coord::new(col as i32, (height - 1 - row) as i32)
}

/// Inverse of [`file_to_internal`]; `None` for negative or out-of-range cells.
pub fn internal_to_file(c: Coord, height: usize) -> Option<(usize, usize)> {
    if c.x < 0 || c.y < 0 || c.y as usize >= height {
        return None;
    }
    Some((c.x as usize, height - 1 - c.y as usize))
}

/// Parses a scenario file against `map`, converting coordinates.
pub fn parse_scen(text: &str, map: &GridMap) -> Result<Vec<ScenEntry>, BenchError> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r')).enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_start().starts_with("version") => {}
        _ => return Err(BenchError::MissingVersion),
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let err = |msg: String| BenchError::ScenLine { line: line_no, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let int = |i: usize| -> Result<usize, BenchError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| err(format!("field {} is not an integer: {:?}", i + 1, fields[i])))
        };
        let bucket = int(0)? as u32;
        let map_width = int(2)?;
        let map_height = int(3)?;
        if map_width != map.width() || map_height != map.height() {
            return Err(err(format!(
                "scenario is for a {map_width}x{map_height} map, loaded map is {}x{}",
                map.width(),
                map.height()
            )));
        }
        let (sc, sr, gc, gr) = (int(4)?, int(5)?, int(6)?, int(7)?);
        let distance: f64 = fields[8]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad distance {:?}", fields[8])))?;
        for (what, col, row) in [("start", sc, sr), ("goal", gc, gr)] {
            if col >= map.width() || row >= map.height() {
                return Err(err(format!("{what} ({col},{row}) outside the map")));
            }
        }
        let start = file_to_internal(sc, sr, map.height());
        let goal = file_to_internal(gc, gr, map.height());
        for (what, c) in [("start", start), ("goal", goal)] {
            if !map.is_free(c) {
                return Err(err(format!("{what} {c} is an obstacle")));
            }
        }
        if start == goal && distance != 0.0 {
            return Err(err(format!("start equals goal but distance is {distance}")));
        }
        entries.push(ScenEntry {
            bucket,
            map_name: fields[1].to_string(),
            map_width,
            map_height,
            start,
            goal,
            optimal_single_agent_distance: distance,
        });
    }
    Ok(entries)
}

/// The first `n` scenario entries become agents `1..=n`.
pub fn make_instance(
    map: &GridMap,
    entries: &[ScenEntry],
    n: usize,
) -> Result<Instance, BenchError> {
    if n > entries.len() {
        return Err(BenchError::NotEnoughEntries {
            requested: n,
            available: entries.len(),
        });
    }
    let starts = entries[..n].iter().map(|e| e.start).collect();
    let goals = entries[..n].iter().map(|e| e.goal).collect();
    Ok(Instance::new(map.clone(), starts, goals)?)
}

/// Map rows top-down, `@` for obstacles and `.` for free cells, no trailing newline.
pub fn render_ascii(map: &GridMap) -> String {
    let mut rows = Vec::with_capacity(map.height());
    for y in (0..map.height() as i32).rev() {
        let row: String = (0..map.width() as i32)
            .map(|x| if map.is_obstacle(Coord::new(x, y)) { '@' } else { '.' })
            .collect();
        rows.push(row);
    }
    rows.join("\n")
}

/// Full map file text (header plus [`render_ascii`] body).
pub fn render_map_file(map: &GridMap) -> String {
    format!(
        "type octile\nheight {}\nwidth {}\nmap\n{}\n",
        map.height(),
        map.width(),
        render_ascii(map)
    )
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a map file; the map name is the file stem.
pub fn load_map(path: &Path) -> Result<GridMap, BenchError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_map_named(&read(path)?, &name)
}

pub fn load_scen(path: &Path, map: &GridMap) -> Result<Vec<ScenEntry>, BenchError> {
    parse_scen(&read(path)?, map)
}

/// Loads `<data_dir>/<map>.map` and `<data_dir>/<map>-<kind>-<index>.scen`
/// and takes the first `n` agents.
pub fn load_benchmark_instance(
    data_dir: &Path,
    map_name: &str,
    scen_kind: &str,
    scen_index: u32,
    n: usize,
) -> Result<Instance, BenchError> {
    let map = load_map(&data_dir.join(format!("{map_name}.map")))?;
    let entries = load_scen(
        &data_dir.join(format!("{map_name}-{scen_kind}-{scen_index}.scen")),
        &map,
    )?;
    make_instance(&map, &entries, n)
}

const SYMMETRY_MAP: &str = include_str!("../../assets/symmetry-4-4.map");
const SYMMETRY_SCEN: &str = include_str!("../../assets/symmetry-4-4.scen");

/// The 4x4 two-agent symmetry-breaking instance: every pair of shortest
/// paths collides, so one agent has to wait once.
pub fn symmetry_instance() -> Instance {
    let map = parse_map_named(SYMMETRY_MAP, "symmetry-4-4").expect("bundled map parses");
    let entries = parse_scen(SYMMETRY_SCEN, &map).expect("bundled scenario parses");
    make_instance(&map, &entries, entries.len()).expect("bundled instance is valid")
}
