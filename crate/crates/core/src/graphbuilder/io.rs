//! Graph container (`CGPH` v1).
//!
//! Binary layout, little-endian:
//!
//! ```text
//! b"CGPH" | version u32 | n u64 | f u64 | w u64 | h u64 | label i32 (-1 = none)
//! alpha f64 | beta f64 | d u64 | M u64
//! n × { id u64 | cx f64 | cy f64 | f × f64 }
//! upper triangle of A (diagonal included), row-major, n(n+1)/2 × f64
//! ```
//!
//! The text form carries the same fields: a `CGPH-TEXT v1` line, a
//! `key=value` header line, `n` node rows `id,cx,cy,f...`, then `n` rows with
//! the upper-triangle entries of each adjacency row. Floats use shortest
//! round-trip formatting, so both forms reload bit-exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{AugmentParams, CellGraph, GraphError, Result};

const MAGIC: &[u8; 4] = b"CGPH";
const TEXT_MAGIC: &str = "CGPH-TEXT v1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphFormat {
    #[default]
    Binary,
    Text,
}

fn fmt_err(msg: impl Into<String>) -> GraphError {
    GraphError::Format(msg.into())
}

pub fn write_graph<W: Write>(g: &CellGraph, format: GraphFormat, mut out: W) -> Result<()> {
    let n = g.n();
    match format {
        GraphFormat::Binary => {
            let mut buf = Vec::with_capacity(80 + n * (24 + 8 * g.f) + 4 * n * (n + 1));
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&VERSION.to_le_bytes());
            for v in [n, g.f, g.image_dims.0, g.image_dims.1] {
                buf.extend_from_slice(&(v as u64).to_le_bytes());
            }
            let label = g.label.map_or(-1i32, i32::from);
            buf.extend_from_slice(&label.to_le_bytes());
            buf.extend_from_slice(&g.params.alpha.to_le_bytes());
            buf.extend_from_slice(&g.params.beta.to_le_bytes());
            buf.extend_from_slice(&(g.params.d as u64).to_le_bytes());
            buf.extend_from_slice(&(g.params.m as u64).to_le_bytes());
            for k in 0..n {
                buf.extend_from_slice(&u64::from(g.ids[k]).to_le_bytes());
                buf.extend_from_slice(&g.coords[k].0.to_le_bytes());
                buf.extend_from_slice(&g.coords[k].1.to_le_bytes());
                for v in g.feature_row(k) {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            for k in 0..n {
                for m in k..n {
                    buf.extend_from_slice(&g.adj(k, m).to_le_bytes());
                }
            }
            out.write_all(&buf)?;
        }
        GraphFormat::Text => {
            writeln!(out, "{TEXT_MAGIC}")?;
            let label = g
                .label
                .map_or_else(|| "none".to_string(), |l| l.to_string());
            writeln!(
                out,
                "n={n} f={} w={} h={} label={label} alpha={} beta={} d={} M={}",
                g.f,
                g.image_dims.0,
                g.image_dims.1,
                g.params.alpha,
                g.params.beta,
                g.params.d,
                g.params.m
            )?;
            for k in 0..n {
                let mut row = format!("{},{},{}", g.ids[k], g.coords[k].0, g.coords[k].1);
                for v in g.feature_row(k) {
                    row.push(',');
                    row.push_str(&v.to_string());
                }
                writeln!(out, "{row}")?;
            }
            for k in 0..n {
                let row: Vec<String> = (k..n).map(|m| g.adj(k, m).to_string()).collect();
                writeln!(out, "{}", row.join(","))?;
            }
        }
    }
    Ok(())
}

pub fn write_graph_file(g: &CellGraph, format: GraphFormat, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_graph(g, format, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads either form, detected from the leading bytes.
pub fn read_graph<R: BufRead>(mut input: R) -> Result<CellGraph> {
    let head = input.fill_buf()?;
    if head.starts_with(TEXT_MAGIC.as_bytes()) {
        read_text(input)
    } else if head.starts_with(MAGIC) {
        read_binary(input)
    } else {
        Err(fmt_err("not a CGPH graph file"))
    }
}

pub fn read_graph_file(path: &Path) -> Result<CellGraph> {
    read_graph(BufReader::new(std::fs::File::open(path)?))
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| fmt_err(format!("truncated graph file: {e}")))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| fmt_err("size overflow"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

fn checked_label(raw: i64) -> Result<Option<u8>> {
    match raw {
        -1 => Ok(None),
        0..=2 => Ok(Some(raw as u8)),
        other => Err(fmt_err(format!("invalid label {other}"))),
    }
}

fn read_binary<R: Read>(input: R) -> Result<CellGraph> {
    let mut c = Cursor { inner: input };
    let magic: [u8; 4] = c.bytes()?;
    if &magic != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let (n, f, w, h) = (c.u64()?, c.u64()?, c.u64()?, c.u64()?);
    let label = checked_label(i64::from(i32::from_le_bytes(c.bytes()?)))?;
    let params = AugmentParams {
        alpha: c.f64()?,
        beta: c.f64()?,
        d: c.u64()?,
        m: c.u64()?,
    };
    let mut ids = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * f);
    for _ in 0..n {
        ids.push(u32::try_from(c.u64()?).map_err(|_| fmt_err("node id overflow"))?);
        coords.push((c.f64()?, c.f64()?));
        for _ in 0..f {
            features.push(c.f64()?);
        }
    }
    let mut adjacency = vec![0.0; n * n];
    for k in 0..n {
        for m in k..n {
            let v = c.f64()?;
            adjacency[k * n + m] = v;
            adjacency[m * n + k] = v;
        }
    }
    let mut trailing = [0u8; 1];
    if c.inner.read(&mut trailing)? != 0 {
        return Err(fmt_err("trailing bytes after adjacency"));
    }
    Ok(CellGraph {
        image_dims: (w, h),
        params,
        f,
        ids,
        coords,
        features,
        adjacency,
        label,
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| fmt_err(format!("bad {what}: {s:?}")))
}

fn read_text<R: BufRead>(input: R) -> Result<CellGraph> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| fmt_err(format!("missing {what}")))?
            .map_err(GraphError::from)
    };
    if next("magic")?.trim_end() != TEXT_MAGIC {
        return Err(fmt_err("bad text magic"));
    }
    let header = next("header")?;
    let field = |key: &str| -> Result<&str> {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| fmt_err(format!("header lacks {key}")))
    };
    let n: usize = parse_num(field("n")?, "n")?;
    let f: usize = parse_num(field("f")?, "f")?;
    let dims = (parse_num(field("w")?, "w")?, parse_num(field("h")?, "h")?);
    let label = match field("label")? {
        "none" => None,
        v => checked_label(parse_num(v, "label")?)?,
    };
    let params = AugmentParams {
        alpha: parse_num(field("alpha")?, "alpha")?,
        beta: parse_num(field("beta")?, "beta")?,
        d: parse_num(field("d")?, "d")?,
        m: parse_num(field("M")?, "M")?,
    };
    let mut ids = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * f);
    for k in 0..n {
        let row = next("node row")?;
        let cols: Vec<&str> = row.trim_end().split(',').collect();
        if cols.len() != f + 3 {
            return Err(fmt_err(format!(
                "node row {k} has {} columns, expected {}",
                cols.len(),
                f + 3
            )));
        }
        ids.push(parse_num(cols[0], "id")?);
        coords.push((parse_num(cols[1], "cx")?, parse_num(cols[2], "cy")?));
        for v in &cols[3..] {
            features.push(parse_num(v, "feature")?);
        }
    }
    let mut adjacency = vec![0.0; n * n];
    for k in 0..n {
        let row = next("adjacency row")?;
        let vals: Vec<&str> = row.trim_end().split(',').collect();
        if vals.len() != n - k {
            return Err(fmt_err(format!(
                "adjacency row {k} has {} entries, expected {}",
                vals.len(),
                n - k
            )));
        }
        for (off, v) in vals.iter().enumerate() {
            let v: f64 = parse_num(v, "weight")?;
            adjacency[k * n + k + off] = v;
            adjacency[(k + off) * n + k] = v;
        }
    }
    Ok(CellGraph {
        image_dims: dims,
        params,
        f,
        ids,
        coords,
        features,
        adjacency,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, f: usize, vals: &[f64]) -> CellGraph {
        let mut adjacency = vec![0.0; n * n];
        let mut it = vals.iter().cycle();
        for k in 0..n {
            for m in k..n {
                let v = *it.next().unwrap();
                adjacency[k * n + m] = v;
                adjacency[m * n + k] = v;
            }
        }
        CellGraph {
            image_dims: (640, 480),
            params: AugmentParams {
                alpha: 0.25,
                beta: 0.1 + 0.2,
                d: 16,
                m: 300,
            },
            f,
            ids: (1..=n as u32).collect(),
            coords: (0..n)
                .map(|k| (k as f64 * 1.1, 479.5 - k as f64 / 3.0))
                .collect(),
            features: (0..n * f)
                .map(|i| *vals.get(i % vals.len()).unwrap() * 17.0)
                .collect(),
            adjacency,
            label: Some(1),
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_graph(&b"nope"[..]).is_err());
        let g = graph(3, 2, &[1.0, 2.0]);
        let mut buf = Vec::new();
        write_graph(&g, GraphFormat::Binary, &mut buf).unwrap();
        buf.pop();
        assert!(matches!(
            read_graph(buf.as_slice()),
            Err(GraphError::Format(_))
        ));
    }

    #[test]
    fn empty_graph_round_trips() {
        let g = graph(0, 4, &[1.0]);
        for fmt in [GraphFormat::Binary, GraphFormat::Text] {
            let mut buf = Vec::new();
            write_graph(&g, fmt, &mut buf).unwrap();
            assert_eq!(read_graph(buf.as_slice()).unwrap(), g);
        }
    }

    proptest! {
        #[test]
        fn both_forms_round_trip_bit_exact(n in 1usize..7, f in 1usize..5, vals in prop::collection::vec(-1e6f64..1e6, 1..30)) {
            let g = graph(n, f, &vals);
            for fmt in [GraphFormat::Binary, GraphFormat::Text] {
                let mut buf = Vec::new();
                write_graph(&g, fmt, &mut buf).unwrap();
                let back = read_graph(buf.as_slice()).unwrap();
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&back.adjacency), bits(&g.adjacency));
                prop_assert_eq!(bits(&back.features), bits(&g.features));
                prop_assert_eq!(&back, &g);
            }
        }
    }
}
