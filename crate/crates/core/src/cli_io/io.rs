//! Field dumps (columnar text or compact binary) and JSON reports.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Discretization, MetricField};

const MAGIC: &[u8; 4] = b"TWMF";
const VERSION: u32 = 1;

/// Node values of a solved field: the metric relative to the model,
/// `h̃ = K₀^{-1/2} K K₀^{-1/2}`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub n: usize,
    pub patch: Vec<u32>,
    pub z: Vec<Complex64>,
    pub rel: Vec<Complex64>,
}

impl FieldDump {
    pub fn from_field(field: &MetricField) -> Self {
        let mesh = &field.disc.mesh;
        Self {
            n: field.n(),
            patch: mesh.nodes.iter().map(|x| x.patch as u32).collect(),
            z: mesh.nodes.iter().map(|x| x.z).collect(),
            rel: field.rel.clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.z.len()
    }

    /// Rebuilds the field on a matching discretization.
    pub fn into_field(self, disc: &Arc<Discretization>) -> Result<MetricField> {
        let mesh = &disc.mesh;
        let same = self.n == disc.n
            && self.z.len() == mesh.num_nodes()
            && mesh.nodes.iter().zip(&self.z).all(|(a, z)| a.z == *z);
        if !same {
            return Err(Error::Config("field dump does not match the grid".into()));
        }
        Ok(MetricField {
            disc: Arc::clone(disc),
            rel: self.rel,
        })
    }

    pub fn write_text(&self, w: &mut impl Write) -> Result<()> {
        let nn = self.n * self.n;
        writeln!(w, "# twistmetric field dump v{VERSION}")?;
        writeln!(
            w,
            "# columns: node patch x y then {nn} entries of h~ as re im"
        )?;
        writeln!(w, "n {} nodes {}", self.n, self.num_nodes())?;
        let mut line = String::new();
        for a in 0..self.num_nodes() {
            line.clear();
            let z = self.z[a];
            let _ = write!(line, "{} {} {} {}", a, self.patch[a], z.re, z.im);
            for v in &self.rel[a * nn..(a + 1) * nn] {
                let _ = write!(line, " {} {}", v.re, v.im);
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text(r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Serde(format!("field dump: {m}"));
        let mut lines = BufReader::new(r).lines();
        let mut header = None;
        for l in lines.by_ref() {
            let l = l?;
            if !l.starts_with('#') {
                header = Some(l);
                break;
            }
        }
        let header = header.ok_or_else(|| bad("missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (n, nodes) = match h.as_slice() {
            ["n", n, "nodes", m] => (
                n.parse::<usize>().map_err(|_| bad("rank"))?,
                m.parse::<usize>().map_err(|_| bad("node count"))?,
            ),
            _ => return Err(bad("malformed header")),
        };
        let nn = n * n;
        let mut out = Self {
            n,
            patch: Vec::with_capacity(nodes),
            z: Vec::with_capacity(nodes),
            rel: Vec::with_capacity(nodes * nn),
        };
        for (a, l) in lines.enumerate() {
            let l = l?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 4 + 2 * nn || t[0].parse::<usize>().ok() != Some(a) {
                return Err(bad(&format!("malformed row {a}")));
            }
            let f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(&format!("number in row {a}")))
            };
            out.patch.push(
                t[1].parse()
                    .map_err(|_| bad(&format!("patch in row {a}")))?,
            );
            out.z.push(Complex64::new(f(t[2])?, f(t[3])?));
            for k in 0..nn {
                out.rel
                    .push(Complex64::new(f(t[4 + 2 * k])?, f(t[5 + 2 * k])?));
            }
        }
        if out.z.len() != nodes {
            return Err(bad("row count differs from header"));
        }
        Ok(out)
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.num_nodes() as u64).to_le_bytes())?;
        let nn = self.n * self.n;
        for a in 0..self.num_nodes() {
            w.write_all(&self.patch[a].to_le_bytes())?;
            for x in [self.z[a].re, self.z[a].im] {
                w.write_all(&x.to_le_bytes())?;
            }
            for v in &self.rel[a * nn..(a + 1) * nn] {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)?;
            Ok(b)
        }
        let f64_of = |r: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        if &take::<4>(&mut r)? != MAGIC {
            return Err(Error::Serde("field dump: bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(Error::Serde(format!(
                "field dump: unknown version {version}"
            )));
        }
        let n = u32::from_le_bytes(take(&mut r)?) as usize;
        let nodes = u64::from_le_bytes(take(&mut r)?) as usize;
        let nn = n * n;
        let mut out = Self {
            n,
            patch: Vec::with_capacity(nodes),
            z: Vec::with_capacity(nodes),
            rel: Vec::with_capacity(nodes * nn),
        };
        for _ in 0..nodes {
            out.patch.push(u32::from_le_bytes(take(&mut r)?));
            let (x, y) = (f64_of(&mut r)?, f64_of(&mut r)?);
            out.z.push(Complex64::new(x, y));
            for _ in 0..nn {
                let (re, im) = (f64_of(&mut r)?, f64_of(&mut r)?);
                out.rel.push(Complex64::new(re, im));
            }
        }
        Ok(out)
    }

    /// Reads either format, sniffing the binary magic.
    pub fn read_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_text(bytes.as_slice())
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
