//! Versioned, line-based region-table file.
//!
//! ```text
//! explicit-cbf-regions 1
//! dims <n> <m> <p>
//! lipschitz <L>
//! regions <count>
//! region <k>
//! set <indices joined by ';', or '-' when empty>
//! empty <0|1>
//! G <rows> <cols> <row-major values...>
//! g <len> <values...>
//! K <rows> <cols> <row-major values...>
//! kappa <len> <values...>
//! halfspaces <count>
//! h <strict 0|1> <offset> <normal values...>
//! end
//! ```
//!
//! Tokens are separated by single spaces. Floats are printed with the
//! shortest representation that parses back to the same value, so a
//! write/parse round trip is lossless. `lipschitz` is `nan` when no region
//! is non-empty.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::affine::{AffineRegionLaw, HalfSpace};
use crate::qp::ActiveSet;

pub const FORMAT_TAG: &str = "explicit-cbf-regions";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    pub state_dim: usize,
    pub input_dim: usize,
    pub row_count: usize,
    pub lipschitz: f64,
    pub regions: Vec<AffineRegionLaw>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct TableParseError {
    pub line: usize,
    pub message: String,
}

fn push_values<'a, I: Iterator<Item = &'a f64>>(out: &mut String, values: I) {
    for v in values {
        write!(out, " {v}").unwrap();
    }
}

fn push_matrix(out: &mut String, tag: &str, m: &DMatrix<f64>) {
    write!(out, "{tag} {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        push_values(out, m.row(r).iter());
    }
    out.push('\n');
}

fn push_vector(out: &mut String, tag: &str, v: &DVector<f64>) {
    write!(out, "{tag} {}", v.len()).unwrap();
    push_values(out, v.iter());
    out.push('\n');
}

impl RegionTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}").unwrap();
        writeln!(out, "dims {} {} {}", self.state_dim, self.input_dim, self.row_count).unwrap();
        writeln!(out, "lipschitz {}", self.lipschitz).unwrap();
        writeln!(out, "regions {}", self.regions.len()).unwrap();
        for (k, law) in self.regions.iter().enumerate() {
            writeln!(out, "region {k}").unwrap();
            let set = if law.index_set.is_empty() {
                "-".to_string()
            } else {
                law.index_set.to_csv_field()
            };
            writeln!(out, "set {set}").unwrap();
            writeln!(out, "empty {}", u8::from(law.empty)).unwrap();
            push_matrix(&mut out, "G", &law.multiplier_gain);
            push_vector(&mut out, "g", &law.multiplier_offset);
            push_matrix(&mut out, "K", &law.control_gain);
            push_vector(&mut out, "kappa", &law.control_offset);
            writeln!(out, "halfspaces {}", law.polyhedron.len()).unwrap();
            for h in &law.polyhedron {
                write!(out, "h {} {}", u8::from(h.strict), h.offset).unwrap();
                push_values(&mut out, h.normal.iter());
                out.push('\n');
            }
            writeln!(out, "end").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TableParseError> {
        let mut p = Parser {
            lines: text.lines().enumerate(),
            line: 0,
        };
        let header = p.fields()?;
        if header.len() != 2 || header[0] != FORMAT_TAG {
            return Err(p.err(format!("expected '{FORMAT_TAG} <version>'")));
        }
        let version: u32 = p.num(header[1])?;
        if version != FORMAT_VERSION {
            return Err(p.err(format!("unsupported version {version}")));
        }
        let dims = p.tagged("dims", 3)?;
        let (n, m, rows) = (p.num(dims[0])?, p.num(dims[1])?, p.num(dims[2])?);
        let lipschitz = {
            let f = p.tagged("lipschitz", 1)?;
            p.num(f[0])?
        };
        let count: usize = {
            let f = p.tagged("regions", 1)?;
            p.num(f[0])?
        };
        let mut regions = Vec::with_capacity(count);
        for k in 0..count {
            let f = p.tagged("region", 1)?;
            if p.num::<usize>(f[0])? != k {
                return Err(p.err(format!("expected region {k}")));
            }
            let f = p.tagged("set", 1)?;
            let index_set = ActiveSet::parse_csv_field(f[0]).map_err(|e| p.err(e))?;
            let f = p.tagged("empty", 1)?;
            let empty = p.flag(f[0])?;
            let multiplier_gain = p.matrix("G")?;
            let multiplier_offset = p.vector("g")?;
            let control_gain = p.matrix("K")?;
            let control_offset = p.vector("kappa")?;
            let f = p.tagged("halfspaces", 1)?;
            let hs: usize = p.num(f[0])?;
            let mut polyhedron = Vec::with_capacity(hs);
            for _ in 0..hs {
                let f = p.tagged("h", 2 + n)?;
                polyhedron.push(HalfSpace {
                    strict: p.flag(f[0])?,
                    offset: p.num(f[1])?,
                    normal: DVector::from_vec(p.nums(&f[2..])?),
                });
            }
            p.tagged("end", 0)?;
            if control_gain.shape() != (m, n) || multiplier_gain.shape() != (index_set.len(), n) {
                return Err(p.err(format!("region {k}: matrix shapes disagree with dims")));
            }
            regions.push(AffineRegionLaw {
                index_set,
                multiplier_gain,
                multiplier_offset,
                control_gain,
                control_offset,
                polyhedron,
                empty,
            });
        }
        if let Some(extra) = p.next_nonblank() {
            return Err(TableParseError {
                line: extra,
                message: "trailing content".into(),
            });
        }
        Ok(Self {
            state_dim: n,
            input_dim: m,
            row_count: rows,
            lipschitz,
            regions,
        })
    }
}

struct Parser<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Parser<'a, I> {
    fn err(&self, message: impl Into<String>) -> TableParseError {
        TableParseError {
            line: self.line,
            message: message.into(),
        }
    }

    fn fields(&mut self) -> Result<Vec<&'a str>, TableParseError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.split(' ').filter(|s| !s.is_empty()).collect())
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn next_nonblank(&mut self) -> Option<usize> {
        self.lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .map(|(i, _)| i + 1)
    }

    /// A line `tag v1 .. vk` with exactly `k` values.
    fn tagged(&mut self, tag: &str, k: usize) -> Result<Vec<&'a str>, TableParseError> {
        let f = self.fields()?;
        if f.first() != Some(&tag) {
            return Err(self.err(format!("expected '{tag}'")));
        }
        if f.len() != k + 1 {
            return Err(self.err(format!("'{tag}' takes {k} values, got {}", f.len() - 1)));
        }
        Ok(f[1..].to_vec())
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T, TableParseError> {
        s.parse().map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn nums(&self, fields: &[&str]) -> Result<Vec<f64>, TableParseError> {
        fields.iter().map(|s| self.num(s)).collect()
    }

    fn flag(&self, s: &str) -> Result<bool, TableParseError> {
        match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.err(format!("expected 0 or 1, got {s:?}"))),
        }
    }

    fn matrix(&mut self, tag: &str) -> Result<DMatrix<f64>, TableParseError> {
        let f = self.fields()?;
        if f.first() != Some(&tag) || f.len() < 3 {
            return Err(self.err(format!("expected '{tag} <rows> <cols> ...'")));
        }
        let (r, c): (usize, usize) = (self.num(f[1])?, self.num(f[2])?);
        if f.len() != 3 + r * c {
            return Err(self.err(format!("'{tag}' needs {} values", r * c)));
        }
        Ok(DMatrix::from_row_slice(r, c, &self.nums(&f[3..])?))
    }

    fn vector(&mut self, tag: &str) -> Result<DVector<f64>, TableParseError> {
        let f = self.fields()?;
        if f.first() != Some(&tag) || f.len() < 2 {
            return Err(self.err(format!("expected '{tag} <len> ...'")));
        }
        let len: usize = self.num(f[1])?;
        if f.len() != 2 + len {
            return Err(self.err(format!("'{tag}' needs {len} values")));
        }
        Ok(DVector::from_vec(self.nums(&f[2..])?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{enumerate_regions, lipschitz_constant, AffineProblem};
    use crate::qp::{Tolerances, WeightMatrix};
    use nalgebra::{dmatrix, dvector};

    fn table() -> RegionTable {
        let problem = AffineProblem::new(
            dmatrix![1.0, -0.5; 0.0, 1.0],
            dmatrix![1.0, 0.1; 0.2, -1.0],
            dvector![0.25, -1.0 / 3.0],
            dmatrix![0.5, 0.0; 0.0, 0.5],
            dvector![1.0, -1e-17],
            WeightMatrix::diagonal(&[1.0, 3.0]).unwrap(),
        )
        .unwrap();
        let regions = enumerate_regions(&problem, &Tolerances::default()).unwrap();
        RegionTable {
            state_dim: 2,
            input_dim: 2,
            row_count: 2,
            lipschitz: lipschitz_constant(&regions, |_| true).unwrap(),
            regions,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let t = table();
        let text = t.to_text();
        assert!(text.starts_with("explicit-cbf-regions 1\ndims 2 2 2\n"));
        assert_eq!(RegionTable::parse(&text).unwrap(), t);
    }

    #[test]
    fn empty_set_is_written_as_dash() {
        let text = table().to_text();
        assert!(text.contains("region 0\nset -\n"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = table().to_text().replace("empty 0", "empty 2");
        let err = RegionTable::parse(&text).unwrap_err();
        assert_eq!(err.line, 7);
        assert!(RegionTable::parse("explicit-cbf-regions 2\n").is_err());
        let truncated: String = table().to_text().lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(RegionTable::parse(&truncated).is_err());
    }
}
