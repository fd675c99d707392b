use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CollocationPoint, LabeledPoint, SplitDataset};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u8 = 1;

const MAGIC: &[u8; 4] = b"PNND";
const KIND_LABELED: u8 = 0;
const KIND_COLLOCATION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 2 + 8 + 4 + 4;
const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    /// Text tables only.
    Csv,
    /// Text tables plus the exact binary container.
    #[default]
    CsvAndBinary,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u8,
    state_dim: usize,
    split_ratios: [f64; 3],
    seed: u64,
    binary: bool,
    rows: [usize; 4],
}

const SPLITS: [&str; 4] = ["train", "validation", "test", "collocation"];

/// Rows as flat `f64` records: `trajectory_id, x0.., t[, x..]`.
struct Table {
    kind: u8,
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl Table {
    fn ncols(kind: u8, dim: usize) -> usize {
        match kind {
            KIND_LABELED => 2 * dim + 2,
            _ => dim + 2,
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["trajectory_id".to_string()];
        h.extend((1..=self.dim).map(|i| format!("x0_{i}")));
        h.push("t".into());
        if self.kind == KIND_LABELED {
            h.extend((1..=self.dim).map(|i| format!("x_{i}")));
        }
        h
    }

    fn from_labeled(points: &[LabeledPoint], dim: usize) -> Self {
        let mut data = Vec::with_capacity(points.len() * (2 * dim + 2));
        for p in points {
            data.push(p.trajectory_id as f64);
            data.extend_from_slice(&p.x0);
            data.push(p.t);
            data.extend_from_slice(&p.x);
        }
        Self { kind: KIND_LABELED, dim, rows: points.len(), data }
    }

    fn from_collocation(points: &[CollocationPoint], dim: usize) -> Self {
        let mut data = Vec::with_capacity(points.len() * (dim + 2));
        for p in points {
            data.push(p.trajectory_id as f64);
            data.extend_from_slice(&p.x0);
            data.push(p.t);
        }
        Self { kind: KIND_COLLOCATION, dim, rows: points.len(), data }
    }

    fn to_labeled(&self) -> Vec<LabeledPoint> {
        let d = self.dim;
        self.data
            .chunks_exact(2 * d + 2)
            .map(|r| LabeledPoint {
                trajectory_id: r[0] as usize,
                x0: r[1..=d].to_vec(),
                t: r[d + 1],
                x: r[d + 2..].to_vec(),
            })
            .collect()
    }

    fn to_collocation(&self) -> Vec<CollocationPoint> {
        let d = self.dim;
        self.data
            .chunks_exact(d + 2)
            .map(|r| CollocationPoint {
                trajectory_id: r[0] as usize,
                x0: r[1..=d].to_vec(),
                t: r[d + 1],
            })
            .collect()
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let map = |e: csv::Error| Error::io(path, e.into());
        w.write_record(self.header()).map_err(map)?;
        let ncols = Table::ncols(self.kind, self.dim);
        let mut buf: Vec<String> = Vec::with_capacity(ncols);
        for row in self.data.chunks_exact(ncols) {
            buf.clear();
            buf.push((row[0] as usize).to_string());
            buf.extend(row[1..].iter().map(|v| v.to_string()));
            w.write_record(&buf).map_err(map)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn read_csv(path: &Path, kind: u8, dim: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let ncols = Table::ncols(kind, dim);
        let found = r.headers().map_err(|e| Error::io(path, e.into()))?.len();
        if found != ncols {
            return Err(Error::FormatVersionMismatch(format!(
                "{}: expected {ncols} columns, found {found}",
                path.display()
            )));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } => Error::FormatVersionMismatch(format!(
                    "{}: row {} has the wrong column count",
                    path.display(),
                    rows + 1
                )),
                _ => Error::io(path, std::io::Error::other(e.to_string())),
            })?;
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::FormatVersionMismatch(format!(
                        "{}: unparsable value {field:?} in row {}",
                        path.display(),
                        rows + 1
                    ))
                })?;
                data.push(v);
            }
            rows += 1;
        }
        Ok(Self { kind, dim, rows, data })
    }

    fn write_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(HEADER_LEN + self.data.len() * 8 + 32);
        bytes.extend_from_slice(MAGIC);
        bytes.push(DATASET_FORMAT_VERSION);
        bytes.push(self.kind);
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&(self.rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&(Table::ncols(self.kind, self.dim) as u32).to_le_bytes());
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn read_binary(path: &Path, kind: u8, dim: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::FormatVersionMismatch(format!("{}: {msg}", path.display()));
        if bytes.len() < HEADER_LEN + 32 || &bytes[..4] != MAGIC {
            return Err(bad("not a PNND container"));
        }
        if bytes[4] != DATASET_FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let (file_dim, ncols) = (u32_at(16), u32_at(20));
        if body[5] != kind || file_dim != dim || ncols != Table::ncols(kind, dim) {
            return Err(bad(&format!(
                "layout kind={} dim={file_dim} ncols={ncols} does not match kind={kind} dim={dim}",
                body[5]
            )));
        }
        let payload = &body[HEADER_LEN..];
        if payload.len() != rows * ncols * 8 {
            return Err(bad("payload length does not match the row count"));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { kind, dim, rows, data })
    }
}

/// Writes `<split>.csv` (and `<split>.pnnd`) for every split plus a
/// `dataset.json` manifest into `dir`.
pub fn save_dataset(dataset: &SplitDataset, dir: &Path, format: TableFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = dataset.state_dim;
    let tables = [
        Table::from_labeled(&dataset.train, d),
        Table::from_labeled(&dataset.validation, d),
        Table::from_labeled(&dataset.test, d),
        Table::from_collocation(&dataset.collocation, d),
    ];
    let binary = format == TableFormat::CsvAndBinary;
    for (name, table) in SPLITS.iter().zip(&tables) {
        table.write_csv(&dir.join(format!("{name}.csv")))?;
        if binary {
            table.write_binary(&dir.join(format!("{name}.pnnd")))?;
        }
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        state_dim: d,
        split_ratios: dataset.split_ratios,
        seed: dataset.seed,
        binary,
        rows: [
            dataset.train.len(),
            dataset.validation.len(),
            dataset.test.len(),
            dataset.collocation.len(),
        ],
    };
    let path = dir.join(MANIFEST);
    let mut f = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| Error::io(&path, e.into()))?;
    writeln!(f).and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`save_dataset`], preferring the binary
/// container when present.
pub fn load_dataset(dir: &Path) -> Result<SplitDataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::FormatVersionMismatch(format!("{}: {e}", path.display())))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch(format!(
            "dataset version {} (expected {DATASET_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let d = manifest.state_dim;
    let mut tables = Vec::with_capacity(4);
    for (k, name) in SPLITS.iter().enumerate() {
        let kind = if k < 3 { KIND_LABELED } else { KIND_COLLOCATION };
        let bin = dir.join(format!("{name}.pnnd"));
        let table = if manifest.binary && bin.exists() {
            Table::read_binary(&bin, kind, d)?
        } else {
            Table::read_csv(&dir.join(format!("{name}.csv")), kind, d)?
        };
        if table.rows != manifest.rows[k] {
            return Err(Error::FormatVersionMismatch(format!(
                "{name}: {} rows, manifest says {}",
                table.rows, manifest.rows[k]
            )));
        }
        tables.push(table);
    }
    Ok(SplitDataset {
        state_dim: d,
        train: tables[0].to_labeled(),
        validation: tables[1].to_labeled(),
        test: tables[2].to_labeled(),
        collocation: tables[3].to_collocation(),
        split_ratios: manifest.split_ratios,
        seed: manifest.seed,
    })
}
