use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{FeatureIoError, Result};

/// Per-pixel instance labels (0 = background) with an optional color image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    pub width: usize,
    pub height: usize,
    /// Row-major labels, `width * height` entries.
    pub labels: Vec<u32>,
    /// Row-major RGB, same extent as `labels` when present.
    pub rgb: Option<Vec<[u8; 3]>>,
}

impl LabeledMask {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<u32>,
        rgb: Option<Vec<[u8; 3]>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FeatureIoError::InvalidMask(format!(
                "dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if labels.len() != width * height {
            return Err(FeatureIoError::InvalidMask(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(rgb) = &rgb {
            if rgb.len() != labels.len() {
                return Err(FeatureIoError::InvalidMask(format!(
                    "{} color pixels for a {width}x{height} mask",
                    rgb.len()
                )));
            }
        }
        Ok(LabeledMask {
            width,
            height,
            labels,
            rgb,
        })
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Writes labels as a 16-bit binary PGM (P5, maxval 65535).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.labels.len() * 2);
        for &l in &self.labels {
            let l = u16::try_from(l).map_err(|_| {
                FeatureIoError::InvalidMask(format!("label {l} does not fit a 16-bit PGM"))
            })?;
            buf.extend_from_slice(&l.to_be_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Writes the color image as binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        let rgb = self.rgb.as_ref().ok_or(FeatureIoError::MissingColor)?;
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let buf: Vec<u8> = rgb.iter().flatten().copied().collect();
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, labels_path: &Path, color_path: Option<&Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(labels_path)?);
        self.write_pgm(&mut w)?;
        w.flush()?;
        if let Some(p) = color_path {
            let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
            self.write_ppm(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    /// Reads a label PGM and, optionally, a same-sized color PPM.
    pub fn load(labels_path: &Path, color_path: Option<&Path>) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(labels_path)?);
        let (w, h, maxval) = read_netpbm_header(&mut r, "P5")?;
        let wide = maxval > 255;
        let mut raw = vec![0u8; w * h * if wide { 2 } else { 1 }];
        r.read_exact(&mut raw)?;
        let labels = if wide {
            raw.chunks_exact(2)
                .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
                .collect()
        } else {
            raw.iter().map(|&b| u32::from(b)).collect()
        };
        let rgb = match color_path {
            Some(p) => {
                let mut r = BufReader::new(std::fs::File::open(p)?);
                let (cw, ch, cmax) = read_netpbm_header(&mut r, "P6")?;
                if (cw, ch) != (w, h) {
                    return Err(FeatureIoError::InvalidMask(format!(
                        "color image is {cw}x{ch}, labels are {w}x{h}"
                    )));
                }
                if cmax > 255 {
                    return Err(FeatureIoError::InvalidMask(
                        "16-bit color PPM is not supported".into(),
                    ));
                }
                let mut raw = vec![0u8; w * h * 3];
                r.read_exact(&mut raw)?;
                Some(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
            }
            None => None,
        };
        LabeledMask::new(w, h, labels, rgb)
    }
}

fn read_netpbm_header<R: BufRead>(r: &mut R, magic: &str) -> Result<(usize, usize, usize)> {
    let mut tokens = Vec::with_capacity(4);
    let mut line_no = 0;
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(FeatureIoError::Format {
                line: line_no,
                message: "truncated netpbm header".into(),
            });
        }
        line_no += 1;
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    if tokens[0] != magic || tokens.len() > 4 {
        return Err(FeatureIoError::Format {
            line: 1,
            message: format!("expected a {magic} header"),
        });
    }
    let num = |i: usize| {
        tokens[i]
            .parse::<usize>()
            .map_err(|_| FeatureIoError::Format {
                line: line_no,
                message: format!("bad header field {:?}", tokens[i]),
            })
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(FeatureIoError::Format {
            line: line_no,
            message: format!("unsupported header {w}x{h} maxval {maxval}"),
        });
    }
    Ok((w, h, maxval))
}
