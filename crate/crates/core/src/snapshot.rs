//! Field snapshot persistence: CSV with a metadata header for 1D and 2D
//! grids, raw little-endian `f64` plus a JSON sidecar for 3D grids.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Field, Grid};

/// Snapshot metadata; also the 3D sidecar document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub field: String,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub meta: SnapshotMeta,
    pub values: Field,
}

impl Snapshot {
    pub fn new(grid: &Grid, field: &str, t: f64, values: Field) -> Result<Self> {
        grid.check_field(&values)?;
        Ok(Snapshot {
            meta: SnapshotMeta {
                dim: grid.dim(),
                shape: grid.shape().to_vec(),
                spacing: grid.spacings(),
                field: field.to_string(),
                t,
            },
            values,
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        let lengths = self.meta.shape.iter().zip(&self.meta.spacing).map(|(n, h)| *n as f64 * h).collect();
        Grid::new(self.meta.shape.clone(), lengths)
    }

    /// Write next to `base` (extension replaced); returns the data path.
    pub fn write(&self, base: &Path) -> Result<PathBuf> {
        if let Some(parent) = base.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        if self.meta.dim == 3 {
            let data = base.with_extension("bin");
            let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&data, bytes).map_err(|e| Error::io(&data, e))?;
            let sidecar = base.with_extension("json");
            let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Snapshot {
                path: sidecar.display().to_string(),
                reason: e.to_string(),
            })?;
            fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
            return Ok(data);
        }
        let path = base.with_extension("csv");
        let mut out = String::new();
        out.push_str(&format!(
            "# dim={} shape={} spacing={} field={} t={}\n",
            self.meta.dim,
            join(&self.meta.shape, "x"),
            join(&self.meta.spacing, "x"),
            self.meta.field,
            self.meta.t
        ));
        let row = if self.meta.dim == 2 { self.meta.shape[1] } else { 1 };
        for chunk in self.values.chunks(row) {
            out.push_str(&join(chunk, ","));
            out.push('\n');
        }
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Read a `.csv` snapshot or a `.bin`/`.json` pair.
    pub fn read(path: &Path) -> Result<Snapshot> {
        let bad = |reason: String| Error::Snapshot {
            path: path.display().to_string(),
            reason,
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut lines = text.lines();
                let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
                let meta = parse_header(header).map_err(bad)?;
                let mut values = Vec::new();
                for line in lines.filter(|l| !l.trim().is_empty()) {
                    for v in line.split(',') {
                        values.push(v.trim().parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}")))?);
                    }
                }
                finish(meta, values).map_err(bad)
            }
            Some("bin") | Some("json") => {
                let sidecar = path.with_extension("json");
                let data = path.with_extension("bin");
                let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
                let meta: SnapshotMeta = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
                let bytes = fs::read(&data).map_err(|e| Error::io(&data, e))?;
                if bytes.len() % 8 != 0 {
                    return Err(bad("data length is not a multiple of 8 bytes".into()));
                }
                let values = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                finish(meta, values).map_err(bad)
            }
            other => Err(bad(format!("unknown snapshot extension {other:?}"))),
        }
    }
}

fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

fn parse_header(line: &str) -> std::result::Result<SnapshotMeta, String> {
    let body = line.strip_prefix('#').ok_or("missing '#' header")?;
    let mut dim = None;
    let mut shape = None;
    let mut spacing = None;
    let mut field = None;
    let mut t = None;
    for token in body.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or(format!("malformed header token {token:?}"))?;
        let list = |v: &str| -> std::result::Result<Vec<f64>, String> {
            v.split('x').map(|p| p.parse::<f64>().map_err(|e| format!("{key}: {e}"))).collect()
        };
        match key {
            "dim" => dim = Some(value.parse::<usize>().map_err(|e| format!("dim: {e}"))?),
            "shape" => {
                shape = Some(
                    value
                        .split('x')
                        .map(|p| p.parse::<usize>().map_err(|e| format!("shape: {e}")))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            }
            "spacing" => spacing = Some(list(value)?),
            "field" => field = Some(value.to_string()),
            "t" => t = Some(value.parse::<f64>().map_err(|e| format!("t: {e}"))?),
            _ => return Err(format!("unknown header key {key:?}")),
        }
    }
    Ok(SnapshotMeta {
        dim: dim.ok_or("missing dim")?,
        shape: shape.ok_or("missing shape")?,
        spacing: spacing.ok_or("missing spacing")?,
        field: field.ok_or("missing field")?,
        t: t.ok_or("missing t")?,
    })
}

fn finish(meta: SnapshotMeta, values: Field) -> std::result::Result<Snapshot, String> {
    if meta.shape.len() != meta.dim || meta.spacing.len() != meta.dim {
        return Err("shape/spacing length differs from dim".into());
    }
    let expected: usize = meta.shape.iter().product();
    if values.len() != expected {
        return Err(format!("expected {expected} values, found {}", values.len()));
    }
    Ok(Snapshot { meta, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(grid: Grid) {
        let dir = tempfile::tempdir().unwrap();
        let values: Field = (0..grid.len()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let snap = Snapshot::new(&grid, "rho", 0.25, values).unwrap();
        let path = snap.write(&dir.path().join("sub").join("snap")).unwrap();
        let back = Snapshot::read(&path).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.grid().unwrap().shape(), grid.shape());
    }

    #[test]
    fn csv_and_raw_round_trip() {
        round_trip(Grid::line(16, 4.0).unwrap());
        round_trip(Grid::new(vec![6, 8], vec![3.0, 2.0]).unwrap());
        round_trip(Grid::new(vec![5, 6, 7], vec![1.0, 2.0, 3.0]).unwrap());
    }

    #[test]
    fn two_dimensional_rows() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(vec![5, 6], vec![1.0, 1.0]).unwrap();
        let snap = Snapshot::new(&g, "phase", 0.0, vec![1.0; 30]).unwrap();
        let path = snap.write(&dir.path().join("s")).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("# dim=2 shape=5x6 spacing=0.2x"));
        assert_eq!(lines[1].split(',').count(), 6);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "# dim=1 shape=8 spacing=0.5 field=rho t=0\n1\n2\n").unwrap();
        assert!(matches!(Snapshot::read(&path), Err(Error::Snapshot { .. })));
    }
}
