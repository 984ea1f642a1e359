//! Ensemble files (a long-format CSV plus a JSON manifest) and atomic file
//! output.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ustate::{minimal_reset_sequence, TimeGrid, UPath};

/// One CSV row: a single component of a path at a grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub path_id: usize,
    pub time: f64,
    pub epoch: usize,
    pub dim: usize,
    pub component: usize,
    pub value: f64,
    /// The row holds `X(t+)` right after a reset.
    pub post_reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub grid: TimeGrid,
    pub seed: u64,
    pub model_id: String,
    pub paths: usize,
}

/// Appends the rows of path `id`.
pub fn path_rows(id: usize, x: &UPath, out: &mut Vec<EnsembleRow>) {
    let resets = minimal_reset_sequence(x);
    let times = x.grid().times();
    let mut push = |j: usize, epoch: usize, v: &[f64], post_reset: bool| {
        for (c, &value) in v.iter().enumerate() {
            out.push(EnsembleRow {
                path_id: id,
                time: times[j],
                epoch,
                dim: v.len(),
                component: c,
                value,
                post_reset,
            });
        }
    };
    for j in 0..times.len() {
        push(j, resets.epoch_of_time(j), x.value(j), false);
        if let Some(p) = x.post_values().get(&j) {
            push(j, resets.epoch_of_step(j), p, true);
        }
    }
}

pub fn write_ensemble_csv<W: Write>(w: W, paths: &[(usize, &UPath)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut rows = Vec::new();
    for (id, x) in paths {
        rows.clear();
        path_rows(*id, x, &mut rows);
        for r in &rows {
            wr.serialize(r)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Default)]
struct Building {
    values: Vec<Option<Vec<f64>>>,
    post: BTreeMap<usize, Vec<f64>>,
    epochs: BTreeMap<(usize, bool), usize>,
}

fn place(slot: &mut Vec<f64>, dim: usize, component: usize, value: f64, at: &str) -> Result<()> {
    if slot.is_empty() {
        slot.resize(dim, f64::NAN);
    }
    if slot.len() != dim {
        return Err(Error::Data(format!(
            "{at}: dimension {dim} disagrees with earlier rows ({})",
            slot.len()
        )));
    }
    if component >= dim {
        return Err(Error::Data(format!(
            "{at}: component {component} >= dim {dim}"
        )));
    }
    if !slot[component].is_nan() {
        return Err(Error::Data(format!(
            "{at}: component {component} given twice"
        )));
    }
    slot[component] = value;
    Ok(())
}

/// Reads an ensemble CSV against the manifest grid. Every path must cover
/// every grid time, components `0..dim` exactly once, and the epoch column
/// must match the resets implied by the post-reset rows.
pub fn read_ensemble_csv<R: Read>(r: R, grid: &TimeGrid) -> Result<Vec<(usize, UPath)>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut paths: BTreeMap<usize, Building> = BTreeMap::new();
    for (line, row) in rd.deserialize::<EnsembleRow>().enumerate() {
        let row = row?;
        let at = format!("row {}", line + 1);
        if !row.value.is_finite() {
            return Err(Error::Data(format!("{at}: value is not finite")));
        }
        if row.dim == 0 || row.dim > 1 << 16 {
            return Err(Error::Data(format!(
                "{at}: dimension {} out of range",
                row.dim
            )));
        }
        let j = grid
            .index_of(row.time)
            .ok_or_else(|| Error::Data(format!("{at}: time {} is not a grid time", row.time)))?;
        if row.post_reset && j == 0 {
            return Err(Error::Data(format!("{at}: post-reset value at t_0")));
        }
        let b = paths.entry(row.path_id).or_default();
        if b.values.is_empty() {
            b.values = vec![None; grid.len()];
        }
        if *b.epochs.entry((j, row.post_reset)).or_insert(row.epoch) != row.epoch {
            return Err(Error::Data(format!("{at}: inconsistent epoch")));
        }
        let slot = if row.post_reset {
            b.post.entry(j).or_default()
        } else {
            b.values[j].get_or_insert_with(Vec::new)
        };
        place(slot, row.dim, row.component, row.value, &at)?;
    }
    let mut out = Vec::with_capacity(paths.len());
    for (id, b) in paths {
        let mut values = Vec::with_capacity(grid.len());
        for (j, v) in b.values.into_iter().enumerate() {
            let v =
                v.ok_or_else(|| Error::Data(format!("path {id}: no value at grid index {j}")))?;
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Data(format!(
                    "path {id}: missing component at grid index {j}"
                )));
            }
            values.push(v);
        }
        if b.post.values().any(|v| v.iter().any(|x| x.is_nan())) {
            return Err(Error::Data(format!(
                "path {id}: missing post-reset component"
            )));
        }
        let x = UPath::new(grid.clone(), values, b.post)?;
        let resets = minimal_reset_sequence(&x);
        for (&(j, post), &epoch) in &b.epochs {
            let want = if post {
                resets.epoch_of_step(j)
            } else {
                resets.epoch_of_time(j)
            };
            if epoch != want {
                return Err(Error::Data(format!(
                    "path {id}: epoch {epoch} at grid index {j} but the resets imply {want}"
                )));
            }
        }
        out.push((id, x));
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |w| Ok(w.write_all(bytes)?))
}

/// Streams into a temporary file next to `path` and renames it into place
/// once `fill` succeeds; on error `path` is left untouched.
pub fn write_atomic_with(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut w = std::io::BufWriter::new(tmp);
    fill(&mut w)?;
    let tmp = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Serializes rows as CSV into memory.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wr.serialize(r)?;
    }
    wr.into_inner().map_err(|e| Error::Io(e.into_error()))
}
