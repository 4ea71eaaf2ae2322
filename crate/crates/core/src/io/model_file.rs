//! Single-file model serialization.
//!
//! Layout, byte by byte:
//!
//! 1. An ASCII header of `\n`-terminated lines. The first is
//!    `TINV-MODEL <version>`, the last is `data`. In between, in this order:
//!    `family <tmg|tca|mtca|thmm>`, `shape <height> <width>`,
//!    `transforms <count> <wrap|zero-pad> <grid <rows> <cols>|nogrid>`,
//!    `clusters <C>`, `factors <K>`, `fast <0|1>`, and for `thmm` only
//!    `motion <vector|magnitude> <threshold> <shared|per-class>` and
//!    `initial <factorized|joint>`. A final `blocks ...` line names the
//!    parameter blocks in storage order.
//! 2. The transformation table: `count × height × width` little-endian `u32`
//!    source indices, op-major, with `0xFFFFFFFF` for a dropped pixel.
//! 3. The parameter blocks as little-endian `f64`, row-major per cluster;
//!    loading matrices are stored column by column.
//! 4. A 32-byte SHA-256 of everything before it.

use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, ModelFileError, Result};
use crate::models::{MtcaModel, TcaModel, TmgModel};
use crate::thmm::{InitialDist, MotionMode, MotionPrior, ThmmModel};
use crate::transform::{Boundary, ImageShape, ShiftGrid, TransformOp, TransformationSet};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "TINV-MODEL";
const DIGEST_LEN: usize = 32;

/// Any serializable model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tmg(TmgModel),
    Tca(TcaModel),
    Mtca(MtcaModel),
    Thmm(ThmmModel),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Tmg(_) => "tmg",
            Model::Tca(_) => "tca",
            Model::Mtca(_) => "mtca",
            Model::Thmm(_) => "thmm",
        }
    }

    pub fn transforms(&self) -> &TransformationSet {
        match self {
            Model::Tmg(m) => &m.transforms,
            Model::Tca(m) => &m.transforms,
            Model::Mtca(m) => &m.transforms,
            Model::Thmm(m) => &m.transforms,
        }
    }
}

fn family_tag(name: &str) -> Result<&'static str> {
    match name {
        "tmg" => Ok("tmg"),
        "tca" => Ok("tca"),
        "mtca" => Ok("mtca"),
        "thmm" => Ok("thmm"),
        other => Err(ModelFileError::UnknownFamily(other.to_string()).into()),
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    ModelFileError::Malformed(msg.into()).into()
}

struct Writer {
    header: String,
    body: Vec<u8>,
    blocks: Vec<&'static str>,
}

impl Writer {
    fn line(&mut self, text: String) {
        self.header.push_str(&text);
        self.header.push('\n');
    }

    fn block<'a>(&mut self, name: &'static str, values: impl IntoIterator<Item = &'a f64>) {
        self.blocks.push(name);
        for v in values {
            self.body.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// The canonical byte encoding of a model.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let set = model.transforms();
    let shape = set.shape();
    let mut w = Writer {
        header: String::new(),
        body: Vec::new(),
        blocks: Vec::new(),
    };
    w.line(format!("{MAGIC} {FORMAT_VERSION}"));
    w.line(format!("family {}", model.family()));
    w.line(format!("shape {} {}", shape.height, shape.width));
    let grid = match set.grid() {
        Some(g) => format!("grid {} {}", g.rows, g.cols),
        None => "nogrid".to_string(),
    };
    w.line(format!("transforms {} {} {grid}", set.len(), set.boundary().as_str()));
    for op in set.ops() {
        for &s in op.sources() {
            w.body.extend_from_slice(&s.to_le_bytes());
        }
    }
    match model {
        Model::Tmg(m) => {
            w.line(format!("clusters {}", m.pi.len()));
            w.line("factors 0".into());
            w.line("fast 0".into());
            w.block("pi", &m.pi);
            w.block("mu", m.mu.iter().flatten());
            w.block("phi", m.phi.iter().flatten());
            w.block("rho", m.rho.iter().flatten());
            w.block("psi", &m.psi);
        }
        Model::Tca(m) => {
            w.line("clusters 1".into());
            w.line(format!("factors {}", m.lambda.ncols()));
            w.line(format!("fast {}", m.fast_likelihood as u8));
            w.block("mu", &m.mu);
            w.block("lambda", m.lambda.as_slice());
            w.block("phi", &m.phi);
            w.block("rho", &m.rho);
            w.block("psi", &m.psi);
        }
        Model::Mtca(m) => {
            w.line(format!("clusters {}", m.pi.len()));
            w.line(format!("factors {}", m.lambda.first().map_or(0, DMatrix::ncols)));
            w.line(format!("fast {}", m.fast_likelihood as u8));
            w.block("pi", &m.pi);
            w.block("mu", m.mu.iter().flatten());
            w.block("lambda", m.lambda.iter().flat_map(|l| l.as_slice()));
            w.block("phi", m.phi.iter().flatten());
            w.block("rho", m.rho.iter().flatten());
            w.block("psi", &m.psi);
        }
        Model::Thmm(m) => {
            w.line(format!("clusters {}", m.clusters()));
            w.line("factors 0".into());
            w.line("fast 0".into());
            let sharing = if m.motion.per_class { "per-class" } else { "shared" };
            w.line(format!("motion {} {} {sharing}", m.motion.mode.as_str(), m.motion.threshold));
            let (kind, probs) = match &m.initial {
                InitialDist::Factorized(p) => ("factorized", p),
                InitialDist::Joint(p) => ("joint", p),
            };
            w.line(format!("initial {kind}"));
            w.block("mu", m.mu.iter().flatten());
            w.block("phi", m.phi.iter().flatten());
            w.block("psi", &m.psi);
            w.block("initial", probs);
            w.block("class_trans", m.class_trans.iter().flatten());
            w.block("motion", m.motion.tables.iter().flatten());
        }
    }
    let blocks = w.blocks.join(" ");
    w.line(format!("blocks {blocks}"));
    w.line("data".into());
    let mut out = w.header.into_bytes();
    out.extend_from_slice(&w.body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    lines: Vec<(&'a str, Vec<&'a str>)>,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn field(&self, key: &str) -> Result<&[&'a str]> {
        self.lines
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| malformed(format!("missing `{key}` header line")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str, at: usize) -> Result<T> {
        self.field(key)?
            .get(at)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(format!("bad value in `{key}` header line")))
    }

    fn take(&mut self, bytes: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(bytes)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| malformed("payload shorter than the header declares"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| malformed("block too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn rows(&mut self, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
        let flat = self.f64s(rows * cols)?;
        Ok(if cols == 0 {
            vec![Vec::new(); rows]
        } else {
            flat.chunks(cols).map(<[f64]>::to_vec).collect()
        })
    }
}

/// Parses and validates a model encoding.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let first_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header"))?;
    let first = std::str::from_utf8(&bytes[..first_end]).map_err(|_| malformed("header is not UTF-8"))?;
    let version: u32 = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("not a model file"))?;
    if version != FORMAT_VERSION {
        return Err(ModelFileError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    if bytes.len() < DIGEST_LEN {
        return Err(ModelFileError::Checksum.into());
    }
    let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(ModelFileError::Checksum.into());
    }
    let marker = b"\ndata\n";
    let header_end = payload
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| malformed("missing `data` line"))?;
    let header = std::str::from_utf8(&payload[..header_end]).map_err(|_| malformed("header is not UTF-8"))?;
    let mut r = Reader {
        lines: header
            .lines()
            .skip(1)
            .filter_map(|l| {
                let mut it = l.split_whitespace();
                it.next().map(|k| (k, it.collect()))
            })
            .collect(),
        data: &payload[header_end + marker.len()..],
        pos: 0,
    };

    let family = family_tag(r.field("family")?.first().copied().unwrap_or(""))?;
    let shape = ImageShape::new(r.num("shape", 0)?, r.num("shape", 1)?)?;
    let n = shape.n();
    let count: usize = r.num("transforms", 0)?;
    let boundary = Boundary::parse(r.field("transforms")?.get(1).copied().unwrap_or(""))?;
    let grid = match r.field("transforms")?.get(2).copied() {
        Some("grid") => Some(ShiftGrid {
            rows: r.num("transforms", 3)?,
            cols: r.num("transforms", 4)?,
        }),
        Some("nogrid") => None,
        _ => return Err(malformed("bad grid in `transforms` header line")),
    };
    let clusters: usize = r.num("clusters", 0)?;
    let factors: usize = r.num("factors", 0)?;
    let fast = r.num::<u8>("fast", 0)? != 0;

    let table = r.take(
        count
            .checked_mul(n)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| malformed("transformation table too large"))?,
    )?;
    let ops = table
        .chunks_exact(4 * n)
        .map(|op| {
            let source = op
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            TransformOp::new(shape, source)
        })
        .collect::<Result<Vec<_>>>()?;
    let transforms = TransformationSet::new(shape, ops, grid, boundary)?;
    let ls = transforms.len();

    let model = match family {
        "tmg" => {
            let pi = r.f64s(clusters)?;
            let mu = r.rows(clusters, n)?;
            let phi = r.rows(clusters, n)?;
            let rho = r.rows(clusters, ls)?;
            let psi = r.f64s(n)?;
            Model::Tmg(TmgModel::new(transforms, pi, mu, phi, rho, psi)?)
        }
        "tca" => {
            let mu = r.f64s(n)?;
            let lambda = DMatrix::from_vec(n, factors, r.f64s(n * factors)?);
            let phi = r.f64s(n)?;
            let rho = r.f64s(ls)?;
            let psi = r.f64s(n)?;
            Model::Tca(TcaModel::new(transforms, mu, lambda, phi, rho, psi, fast)?)
        }
        "mtca" => {
            let pi = r.f64s(clusters)?;
            let mu = r.rows(clusters, n)?;
            let lambda = (0..clusters)
                .map(|_| Ok(DMatrix::from_vec(n, factors, r.f64s(n * factors)?)))
                .collect::<Result<Vec<_>>>()?;
            let phi = r.rows(clusters, n)?;
            let rho = r.rows(clusters, ls)?;
            let psi = r.f64s(n)?;
            let m = MtcaModel {
                transforms,
                pi,
                mu,
                lambda,
                phi,
                rho,
                psi,
                fast_likelihood: fast,
            };
            m.validate()?;
            Model::Mtca(m)
        }
        _ => {
            let mode = MotionMode::parse(r.field("motion")?.first().copied().unwrap_or(""))?;
            let threshold: u32 = r.num("motion", 1)?;
            let per_class = match r.field("motion")?.get(2).copied() {
                Some("per-class") => true,
                Some("shared") => false,
                _ => return Err(malformed("bad sharing in `motion` header line")),
            };
            let joint = match r.field("initial")?.first().copied() {
                Some("joint") => true,
                Some("factorized") => false,
                _ => return Err(malformed("bad `initial` header line")),
            };
            let mu = r.rows(clusters, n)?;
            let phi = r.rows(clusters, n)?;
            let psi = r.f64s(n)?;
            let initial = if joint {
                InitialDist::Joint(r.f64s(clusters * ls)?)
            } else {
                InitialDist::Factorized(r.f64s(clusters)?)
            };
            let class_trans = r.rows(clusters, clusters)?;
            let tables = if per_class { clusters } else { 1 };
            let bins = MotionPrior::bin_count_for(mode, threshold);
            let motion = MotionPrior {
                mode,
                threshold,
                per_class,
                tables: r.rows(tables, bins)?,
            };
            Model::Thmm(ThmmModel::new(transforms, mu, phi, psi, initial, class_trans, motion)?)
        }
    };
    if r.pos != r.data.len() {
        return Err(malformed("trailing bytes after the last parameter block"));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}

fn mismatch(expected: &'static str, found: &Model) -> Error {
    ModelFileError::FamilyMismatch {
        expected,
        found: found.family(),
    }
    .into()
}

pub fn load_tmg(path: impl AsRef<Path>) -> Result<TmgModel> {
    match load_model(path)? {
        Model::Tmg(m) => Ok(m),
        other => Err(mismatch("tmg", &other)),
    }
}

pub fn load_tca(path: impl AsRef<Path>) -> Result<TcaModel> {
    match load_model(path)? {
        Model::Tca(m) => Ok(m),
        other => Err(mismatch("tca", &other)),
    }
}

pub fn load_mtca(path: impl AsRef<Path>) -> Result<MtcaModel> {
    match load_model(path)? {
        Model::Mtca(m) => Ok(m),
        other => Err(mismatch("mtca", &other)),
    }
}

pub fn load_thmm(path: impl AsRef<Path>) -> Result<ThmmModel> {
    match load_model(path)? {
        Model::Thmm(m) => Ok(m),
        other => Err(mismatch("thmm", &other)),
    }
}
