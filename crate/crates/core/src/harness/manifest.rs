//! Flat `key = value` experiment manifests.
//!
//! One entry per line, `#` starts a comment line. Every key must be known;
//! unset keys take the defaults listed in [`KEYS`]. Command-line `--set`
//! overrides are applied with [`Manifest::set`] before [`Experiment::from_manifest`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::read_pgm;
use crate::models::Reduction;
use crate::synth::{
    digit_glyphs, gen_occluded, gen_pacman, gen_sheared_glyphs, gen_shifted_template, Bar, GlyphParams,
    GroundTruth, PacmanParams, ShiftProcess, ShiftedTemplateParams,
};
use crate::thmm::MotionMode;
use crate::transform::{
    build_shear_translation_set, build_translation_set, Boundary, ImageShape, ShearFamily, TransformationSet,
};

/// Every accepted key with its default (empty: generator default or unset).
pub const KEYS: &[(&str, &str)] = &[
    ("name", "experiment"),
    ("seed", "0"),
    ("output", "out"),
    ("generator", "pacman"),
    ("frames_dir", ""),
    ("frames", ""),
    ("grid", ""),
    ("p_stay", ""),
    ("p_turn", ""),
    ("bg_noise", ""),
    ("sensor_noise", ""),
    ("template", "random:16x16"),
    ("shift_range", ""),
    ("process", "iid"),
    ("boundary", "wrap"),
    ("per_class", ""),
    ("thicken", ""),
    ("weight", ""),
    ("noise", ""),
    ("bar", ""),
    ("bar_level", "0"),
    ("family", "tmg"),
    ("transforms", "identity"),
    ("clusters", "1"),
    ("factors", "0"),
    ("freeze_rho", "false"),
    ("tie_psi", "false"),
    ("clamp_motion", "false"),
    ("fast_likelihood", "false"),
    ("motion", "vector"),
    ("motion_threshold", "3"),
    ("per_class_motion", "true"),
    ("class_stay", "0.5"),
    ("tmg_iterations", "20"),
    ("iterations", "30"),
    ("restarts", "1"),
    ("tolerance", "0"),
    ("reduction", "deterministic"),
    ("supervised", "false"),
];

fn manifest_error(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

/// Raw key/value pairs, validated against [`KEYS`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| manifest_error(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if m.entries.contains_key(k) {
                return Err(manifest_error(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            m.set(k, v.trim())?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| manifest_error(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets or overrides one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(manifest_error(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| manifest_error(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Explicit value, else the default; `None` when both are empty.
    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key).map(String::as_str).or_else(|| {
            KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
        })?;
        (!v.is_empty()).then_some(v)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| manifest_error(format!("`{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| manifest_error(format!("`{key}` must be set")))
    }

    /// Canonical text: every explicitly set key in sorted order.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn parse_shape(s: &str) -> Result<ImageShape> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| manifest_error(format!("shape `{s}` is not HxW")))?;
    let h = h.trim().parse().map_err(|_| manifest_error(format!("bad height in `{s}`")))?;
    let w = w.trim().parse().map_err(|_| manifest_error(format!("bad width in `{s}`")))?;
    ImageShape::new(h, w)
}

/// Model families a manifest can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Tmg,
    Tca,
    Mtca,
    Thmm,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tmg" => Ok(Family::Tmg),
            "tca" => Ok(Family::Tca),
            "mtca" => Ok(Family::Mtca),
            "thmm" => Ok(Family::Thmm),
            other => Err(manifest_error(format!("unknown family `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Tmg => "tmg",
            Family::Tca => "tca",
            Family::Mtca => "mtca",
            Family::Thmm => "thmm",
        }
    }
}

/// `identity`, `shift:RxC:wrap|zero-pad` or `shear:standard`.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    Identity,
    Shift { rows: usize, cols: usize, boundary: Boundary },
    Shear(ShearFamily),
}

impl TransformSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["identity"] => Ok(TransformSpec::Identity),
            ["shift", grid, boundary] => {
                let g = parse_shape(grid)?;
                Ok(TransformSpec::Shift {
                    rows: g.height,
                    cols: g.width,
                    boundary: Boundary::parse(boundary)?,
                })
            }
            ["shear", "standard"] => Ok(TransformSpec::Shear(ShearFamily::standard())),
            _ => Err(manifest_error(format!("unknown transform set `{s}`"))),
        }
    }

    pub fn build(&self, shape: ImageShape) -> Result<TransformationSet> {
        match self {
            TransformSpec::Identity => Ok(TransformationSet::identity(shape)),
            TransformSpec::Shift { rows, cols, boundary } => build_translation_set(shape, *rows, *cols, *boundary),
            TransformSpec::Shear(family) => build_shear_translation_set(shape, family),
        }
    }
}

/// Source of a shifted template.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateSpec {
    /// Seeded random field smoothed by `blur` box-filter passes; `binary`
    /// thresholds it at its median to 0 and 1.
    Random { shape: ImageShape, blur: usize, binary: bool },
    /// One of the ten 8×8 digit glyphs.
    Glyph(usize),
    File(PathBuf),
}

impl TemplateSpec {
    pub fn parse(s: &str) -> Result<Self> {
        for (prefix, binary) in [("random:", false), ("binary:", true)] {
            let Some(rest) = s.strip_prefix(prefix) else { continue };
            let (shape, blur) = match rest.split_once(':') {
                Some((shape, blur)) => (
                    shape,
                    blur.parse()
                        .map_err(|_| manifest_error(format!("bad blur pass count in `{s}`")))?,
                ),
                None => (rest, 2),
            };
            return Ok(TemplateSpec::Random {
                shape: parse_shape(shape)?,
                blur,
                binary,
            });
        }
        if let Some(d) = s.strip_prefix("glyph:") {
            let d: usize = d.parse().map_err(|_| manifest_error(format!("bad glyph `{s}`")))?;
            if d >= 10 {
                return Err(manifest_error(format!("glyph {d} out of range 0..10")));
            }
            return Ok(TemplateSpec::Glyph(d));
        }
        Ok(TemplateSpec::File(PathBuf::from(s)))
    }

    pub fn load(&self, seed: u64) -> Result<(ImageShape, Vec<f64>)> {
        match self {
            TemplateSpec::Random { shape, blur, binary } => {
                let img = random_template(seed, *shape, *blur);
                Ok((*shape, if *binary { threshold_at_median(&img) } else { img }))
            }
            TemplateSpec::Glyph(d) => Ok((ImageShape::new(8, 8)?, digit_glyphs()[*d].clone())),
            TemplateSpec::File(path) => read_pgm(path),
        }
    }
}

/// 1 at or above the median, 0 below.
pub fn threshold_at_median(img: &[f64]) -> Vec<f64> {
    let mut sorted = img.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    img.iter().map(|&v| if v >= median { 1.0 } else { 0.0 }).collect()
}

/// White noise box-blurred `blur` times on the torus, rescaled to `[0, 1]`.
pub fn random_template(seed: u64, shape: ImageShape, blur: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_6d70_6c61_7465);
    let mut img: Vec<f64> = (0..shape.n()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (h, w) = (shape.height as i64, shape.width as i64);
    for _ in 0..blur {
        let mut out = vec![0.0; img.len()];
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        s += img[shape.index((r + dr).rem_euclid(h) as usize, (c + dc).rem_euclid(w) as usize)];
                    }
                }
                out[shape.index(r as usize, c as usize)] = s / 9.0;
            }
        }
        img = out;
    }
    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.iter().map(|v| (v - lo) / span).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Pacman(PacmanParams),
    Shifted {
        template: TemplateSpec,
        params: ShiftedTemplateParams,
    },
    Glyphs(GlyphParams),
    Occluded {
        template: TemplateSpec,
        params: ShiftedTemplateParams,
        bar: Bar,
        level: f64,
    },
    Frames(PathBuf),
}

/// Frames plus ground truth when generated.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub shape: ImageShape,
    pub frames: Vec<Vec<f64>>,
    pub truth: Option<GroundTruth>,
}

impl DataSpec {
    fn from_manifest(m: &Manifest) -> Result<Self> {
        fn set<T: std::str::FromStr>(m: &Manifest, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = m.parsed(key)? {
                *slot = v;
            }
            Ok(())
        }
        let shifted = |m: &Manifest| -> Result<ShiftedTemplateParams> {
            let mut p = ShiftedTemplateParams::default();
            set(m, "frames", &mut p.frames)?;
            set(m, "shift_range", &mut p.shift_range)?;
            set(m, "sensor_noise", &mut p.sensor_noise)?;
            p.process = match m.get("process").unwrap_or("iid") {
                "iid" => ShiftProcess::Iid,
                "walk" => ShiftProcess::RandomWalk,
                other => return Err(manifest_error(format!("unknown shift process `{other}`"))),
            };
            p.boundary = Boundary::parse(m.get("boundary").unwrap_or("wrap"))?;
            Ok(p)
        };
        let generator = m.get("generator").unwrap_or("pacman");
        match generator {
            "pacman" => {
                let mut p = PacmanParams::default();
                set(m, "frames", &mut p.frames)?;
                if let Some(g) = m.get("grid") {
                    p.grid = parse_shape(g)?;
                }
                set(m, "p_stay", &mut p.p_stay)?;
                set(m, "p_turn", &mut p.p_turn)?;
                set(m, "bg_noise", &mut p.bg_noise)?;
                set(m, "sensor_noise", &mut p.sensor_noise)?;
                Ok(DataSpec::Pacman(p))
            }
            "shifted" => Ok(DataSpec::Shifted {
                template: TemplateSpec::parse(m.get("template").unwrap_or("random:16x16"))?,
                params: shifted(m)?,
            }),
            "glyphs" => {
                let mut p = GlyphParams::default();
                set(m, "per_class", &mut p.per_class)?;
                set(m, "thicken", &mut p.thicken)?;
                set(m, "weight", &mut p.weight)?;
                set(m, "noise", &mut p.noise)?;
                Ok(DataSpec::Glyphs(p))
            }
            "occluded" => {
                let bar = m.get("bar").ok_or_else(|| manifest_error("`bar` must be set for occluded data"))?;
                let v: Vec<usize> = bar
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| manifest_error(format!("bar `{bar}` is not top,left,height,width")))?;
                let [top, left, height, width] = v[..] else {
                    return Err(manifest_error(format!("bar `{bar}` is not top,left,height,width")));
                };
                Ok(DataSpec::Occluded {
                    template: TemplateSpec::parse(m.get("template").unwrap_or("random:16x16"))?,
                    params: shifted(m)?,
                    bar: Bar { top, left, height, width },
                    level: m.required("bar_level")?,
                })
            }
            "frames" => Ok(DataSpec::Frames(PathBuf::from(
                m.get("frames_dir").ok_or_else(|| manifest_error("`frames_dir` must be set"))?,
            ))),
            other => Err(manifest_error(format!("unknown generator `{other}`"))),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let labeled = |shape, (frames, truth)| Dataset {
            shape,
            frames,
            truth: Some(truth),
        };
        match self {
            DataSpec::Pacman(p) => Ok(labeled(p.grid, gen_pacman(seed, p)?)),
            DataSpec::Shifted { template, params } => {
                let (shape, t) = template.load(seed)?;
                Ok(labeled(shape, gen_shifted_template(seed, &t, shape, params)?))
            }
            DataSpec::Glyphs(p) => {
                let shape = ImageShape::new(8, 8)?;
                Ok(labeled(shape, gen_sheared_glyphs(seed, &digit_glyphs(), shape, p)?))
            }
            DataSpec::Occluded {
                template,
                params,
                bar,
                level,
            } => {
                let (shape, t) = template.load(seed)?;
                let (base, truth) = gen_shifted_template(seed, &t, shape, params)?;
                Ok(labeled(
                    shape,
                    gen_occluded(seed, &base, &truth, shape, *bar, *level, params.sensor_noise)?,
                ))
            }
            DataSpec::Frames(dir) => {
                let (shape, frames) = crate::io::read_frames(dir)?;
                Ok(Dataset {
                    shape,
                    frames,
                    truth: None,
                })
            }
        }
    }
}

/// A fully typed manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSpec,
    pub family: Family,
    pub transforms: TransformSpec,
    pub clusters: usize,
    pub factors: usize,
    pub freeze_rho: bool,
    pub tie_psi: bool,
    pub clamp_motion: bool,
    pub fast_likelihood: bool,
    pub motion: MotionMode,
    pub motion_threshold: u32,
    pub per_class_motion: bool,
    pub class_stay: f64,
    /// TMG warm-up iterations before THMM training.
    pub tmg_iterations: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub tolerance: f64,
    pub reduction: Reduction,
    /// Train one model per ground-truth class.
    pub supervised: bool,
}

impl Experiment {
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let reduction = match m.get("reduction").unwrap_or("deterministic") {
            "deterministic" => Reduction::Deterministic,
            "unordered" => Reduction::Unordered,
            other => return Err(manifest_error(format!("unknown reduction `{other}`"))),
        };
        let exp = Experiment {
            name: m.required("name")?,
            seed: m.required("seed")?,
            output: PathBuf::from(m.get("output").unwrap_or("out")),
            data: DataSpec::from_manifest(m)?,
            family: Family::parse(m.get("family").unwrap_or("tmg"))?,
            transforms: TransformSpec::parse(m.get("transforms").unwrap_or("identity"))?,
            clusters: m.required("clusters")?,
            factors: m.required("factors")?,
            freeze_rho: m.required("freeze_rho")?,
            tie_psi: m.required("tie_psi")?,
            clamp_motion: m.required("clamp_motion")?,
            fast_likelihood: m.required("fast_likelihood")?,
            motion: MotionMode::parse(m.get("motion").unwrap_or("vector"))?,
            motion_threshold: m.required("motion_threshold")?,
            per_class_motion: m.required("per_class_motion")?,
            class_stay: m.required("class_stay")?,
            tmg_iterations: m.required("tmg_iterations")?,
            iterations: m.required("iterations")?,
            restarts: m.required("restarts")?,
            tolerance: m.required("tolerance")?,
            reduction,
            supervised: m.required("supervised")?,
        };
        if exp.clusters == 0 {
            return Err(manifest_error("`clusters` must be at least 1"));
        }
        if exp.restarts == 0 {
            return Err(manifest_error("`restarts` must be at least 1"));
        }
        if exp.family == Family::Tca && exp.clusters != 1 {
            return Err(manifest_error("family tca has a single component; use mtca for clusters > 1"));
        }
        if exp.supervised && exp.family == Family::Thmm {
            return Err(manifest_error("supervised training is defined for the static families"));
        }
        Ok(exp)
    }
}
