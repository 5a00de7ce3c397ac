//! Feature table format:
//!
//! ```text
//! # cellgraph-features v1 dim=<D> w=<W> h=<H> label=<L|none>
//! id,cx,cy,f0,...,f{D-1}
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a save
//! followed by a load reproduces every value bit for bit.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::features::check_dim;
use super::{CellFeatureSet, CellRecord, FeatureIoError, Result};

const MAGIC: &str = "# cellgraph-features v1";

pub fn write_features<W: Write>(set: &CellFeatureSet, mut out: W) -> Result<()> {
    set.validate()?;
    let label = set
        .label
        .map_or_else(|| "none".to_string(), |l| l.to_string());
    writeln!(
        out,
        "{MAGIC} dim={} w={} h={} label={label}",
        set.dim, set.image_dims.0, set.image_dims.1
    )?;
    let mut line = String::new();
    for c in &set.cells {
        line.clear();
        line.push_str(&format!("{},{},{}", c.id, c.centroid.0, c.centroid.1));
        for v in &c.features {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_features(set: &CellFeatureSet, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_features(set, &mut w)?;
    w.flush()?;
    Ok(())
}

fn format_err(line: usize, message: impl Into<String>) -> FeatureIoError {
    FeatureIoError::Format {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str) -> Result<((usize, usize), usize, Option<u8>)> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| format_err(1, format!("expected header starting with {MAGIC:?}")))?;
    let (mut dim, mut w, mut h, mut label) = (None, None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format_err(1, format!("malformed header field {field:?}")))?;
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| format_err(1, format!("bad value for {key}: {value:?}")))
        };
        match key {
            "dim" => dim = Some(num()?),
            "w" => w = Some(num()?),
            "h" => h = Some(num()?),
            "label" => {
                label = Some(match value {
                    "none" => None,
                    v => Some(
                        v.parse::<u8>()
                            .ok()
                            .filter(|&g| g <= 2)
                            .ok_or_else(|| format_err(1, format!("bad label {v:?}")))?,
                    ),
                })
            }
            other => return Err(format_err(1, format!("unknown header field {other:?}"))),
        }
    }
    let missing = |k: &str| format_err(1, format!("header lacks {k}="));
    let dim = dim.ok_or_else(|| missing("dim"))?;
    check_dim(dim)?;
    Ok((
        (
            w.ok_or_else(|| missing("w"))?,
            h.ok_or_else(|| missing("h"))?,
        ),
        dim,
        label.ok_or_else(|| missing("label"))?,
    ))
}

pub fn read_features<R: BufRead>(input: R) -> Result<CellFeatureSet> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(1, "empty feature file"))??;
    let (image_dims, dim, label) = parse_header(header.trim_end())?;
    let mut cells = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(format_err(
                line_no,
                format!(
                    "expected {} columns for dim={dim}, found {}",
                    dim + 3,
                    fields.len()
                ),
            ));
        }
        let id = fields[0]
            .parse::<u32>()
            .map_err(|_| format_err(line_no, format!("bad id {:?}", fields[0])))?;
        let mut values = Vec::with_capacity(dim + 2);
        for f in &fields[1..] {
            let v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(line_no, format!("bad number {f:?}")))?;
            values.push(v);
        }
        cells.push(CellRecord {
            id,
            centroid: (values[0], values[1]),
            features: values[2..].to_vec(),
        });
    }
    let set = CellFeatureSet {
        image_dims,
        dim,
        cells,
        label,
    };
    set.validate()?;
    Ok(set)
}

pub fn load_features(path: &Path) -> Result<CellFeatureSet> {
    read_features(BufReader::new(std::fs::File::open(path)?))
}
