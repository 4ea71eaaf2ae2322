//! Seeded synthetic data with retained ground truth.
//!
//! Every generator is a pure function of its seed and parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::transform::{
    build_shear_translation_set, Boundary, ImageShape, ShearFamily, TransformOp,
};

const PACMAN_FIXTURE: &str = include_str!("../fixtures/pacman.txt");
const GLYPH_FIXTURE: &str = include_str!("../fixtures/glyphs.txt");

/// Intensity of empty space in pac-man frames.
pub const PACMAN_FLOOR: f64 = 0.2;
/// Intensity of a lit sprite pixel.
pub const PACMAN_LIT: f64 = 0.9;

/// What a generator knows about its output.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Frames before sensor noise.
    pub clean: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    /// Index of the transformation applied, within the generator's set.
    pub transforms: Vec<usize>,
    /// Signed `(Δv, Δh)` displacement of the object.
    pub shifts: Vec<(i64, i64)>,
    pub params: Vec<(String, String)>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Parses `#`/`.` art blocks, each preceded by a name line.
fn parse_art(text: &str) -> Vec<(String, Vec<Vec<bool>>)> {
    let mut out: Vec<(String, Vec<Vec<bool>>)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') && line.contains(' ') {
            continue;
        }
        if line.chars().all(|ch| ch == '#' || ch == '.') {
            if let Some(last) = out.last_mut() {
                last.1.push(line.chars().map(|ch| ch == '#').collect());
            }
        } else {
            out.push((line.to_string(), Vec::new()));
        }
    }
    out
}

/// Pac-man orientation, in left-turn order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    Right,
    Up,
    Left,
    Down,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::Right, Heading::Up, Heading::Left, Heading::Down];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    /// Counter-clockwise quarter turn.
    pub fn left(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    /// One-pixel step `(Δrow, Δcol)`; rows grow downward.
    pub fn step(self) -> (i64, i64) {
        match self {
            Heading::Right => (0, 1),
            Heading::Up => (-1, 0),
            Heading::Left => (0, -1),
            Heading::Down => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Heading::Right => "right",
            Heading::Up => "up",
            Heading::Left => "left",
            Heading::Down => "down",
        }
    }
}

/// The 3×3 sprite for a heading, row-major, `true` where lit.
pub fn pacman_sprite(heading: Heading) -> [bool; 9] {
    let art = parse_art(PACMAN_FIXTURE);
    let (_, rows) = art
        .iter()
        .find(|(name, _)| name == heading.name())
        .expect("sprite fixture covers every heading");
    let mut out = [false; 9];
    for (r, row) in rows.iter().enumerate() {
        for (c, &lit) in row.iter().enumerate() {
            out[r * 3 + c] = lit;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacmanParams {
    pub frames: usize,
    pub grid: ImageShape,
    pub p_stay: f64,
    pub p_turn: f64,
    pub bg_noise: f64,
    pub sensor_noise: f64,
}

impl Default for PacmanParams {
    fn default() -> Self {
        Self {
            frames: 200,
            grid: ImageShape {
                height: 11,
                width: 11,
            },
            p_stay: 0.2,
            p_turn: 0.75,
            bg_noise: 0.1,
            sensor_noise: 0.05,
        }
    }
}

/// Pixel indices of the 3×3 footprint centered at `shift` from the image
/// center, row-major, wrapping at the edges.
pub fn sprite_cells(shape: ImageShape, shift: (i64, i64)) -> [usize; 9] {
    let (h, w) = (shape.height as i64, shape.width as i64);
    let (cr, cc) = (h / 2 + shift.0, w / 2 + shift.1);
    let mut cells = [0; 9];
    for (k, cell) in cells.iter_mut().enumerate() {
        let (dr, dc) = (k as i64 / 3 - 1, k as i64 % 3 - 1);
        *cell = shape.index((cr + dr).rem_euclid(h) as usize, (cc + dc).rem_euclid(w) as usize);
    }
    cells
}

/// Pastes the sprite for `heading` centered at `shift` from the image center,
/// wrapping at the edges.
pub fn render_pacman(background: &[f64], shape: ImageShape, heading: Heading, shift: (i64, i64)) -> Vec<f64> {
    let mut img = background.to_vec();
    for (&p, lit) in sprite_cells(shape, shift).iter().zip(pacman_sprite(heading)) {
        img[p] = if lit { PACMAN_LIT } else { PACMAN_FLOOR };
    }
    img
}

/// Toroidal offset in `[−⌊m/2⌋, m − 1 − ⌊m/2⌋]`, the range of a centered
/// full-extent shift grid.
fn wrap_offset(d: i64, m: usize) -> i64 {
    let half = (m / 2) as i64;
    (d + half).rem_euclid(m as i64) - half
}

/// Pac-man on a torus: each frame it steps toward its mouth with
/// probability `1 − p_stay`, then turns left with probability `p_turn`.
/// Background pixels get fresh clutter every frame; `clean` is the sprite on
/// a flat `PACMAN_FLOOR`.
pub fn gen_pacman(seed: u64, params: &PacmanParams) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    let shape = params.grid;
    if shape.height < 3 || shape.width < 3 {
        return Err(Error::InvalidArgument(format!(
            "a {shape} grid cannot hold a 3x3 sprite"
        )));
    }
    for (name, p) in [("p_stay", params.p_stay), ("p_turn", params.p_turn)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
        }
    }
    let floor = vec![PACMAN_FLOOR; shape.n()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heading = Heading::from_index(rng.random_range(0..4));
    let mut pos = (
        rng.random_range(0..shape.height as i64),
        rng.random_range(0..shape.width as i64),
    );
    let (cy, cx) = ((shape.height / 2) as i64, (shape.width / 2) as i64);
    let mut frames = Vec::with_capacity(params.frames);
    let mut truth = GroundTruth {
        clean: Vec::with_capacity(params.frames),
        classes: Vec::with_capacity(params.frames),
        transforms: Vec::with_capacity(params.frames),
        shifts: Vec::with_capacity(params.frames),
        params: vec![
            ("generator".into(), "pacman".into()),
            ("seed".into(), seed.to_string()),
            ("frames".into(), params.frames.to_string()),
            ("grid".into(), shape.to_string()),
            ("p_stay".into(), params.p_stay.to_string()),
            ("p_turn".into(), params.p_turn.to_string()),
            ("bg_noise".into(), params.bg_noise.to_string()),
            ("sensor_noise".into(), params.sensor_noise.to_string()),
        ],
    };
    for t in 0..params.frames {
        if t > 0 {
            if rng.random::<f64>() >= params.p_stay {
                let (dr, dc) = heading.step();
                pos = (
                    (pos.0 + dr).rem_euclid(shape.height as i64),
                    (pos.1 + dc).rem_euclid(shape.width as i64),
                );
            }
            if rng.random::<f64>() < params.p_turn {
                heading = heading.left();
            }
        }
        let shift = (wrap_offset(pos.0 - cy, shape.height), wrap_offset(pos.1 - cx, shape.width));
        let clean = render_pacman(&floor, shape, heading, shift);
        let mut frame: Vec<f64> = floor.iter().map(|v| v + params.bg_noise * gauss(&mut rng)).collect();
        for p in sprite_cells(shape, shift) {
            frame[p] = clean[p];
        }
        for v in &mut frame {
            *v += params.sensor_noise * gauss(&mut rng);
        }
        // index on the full wrap-around shift grid centered at zero
        let l = ((shift.0 + cy) as usize) * shape.width + (shift.1 + cx) as usize;
        frames.push(frame);
        truth.clean.push(clean);
        truth.classes.push(heading.index());
        truth.transforms.push(l);
        truth.shifts.push(shift);
    }
    Ok((frames, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftProcess {
    /// Independent uniform shifts in `[−range, range]²`.
    #[default]
    Iid,
    /// Per-axis steps in `{−1, 0, 1}`, clamped to the range.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedTemplateParams {
    pub frames: usize,
    pub shift_range: i64,
    pub process: ShiftProcess,
    pub boundary: Boundary,
    pub sensor_noise: f64,
}

impl Default for ShiftedTemplateParams {
    fn default() -> Self {
        Self {
            frames: 100,
            shift_range: 2,
            process: ShiftProcess::Iid,
            boundary: Boundary::Wrap,
            sensor_noise: 0.05,
        }
    }
}

/// One template under random shifts plus white noise.
pub fn gen_shifted_template(
    seed: u64,
    template: &[f64],
    shape: ImageShape,
    params: &ShiftedTemplateParams,
) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    if template.len() != shape.n() {
        return Err(Error::InvalidArgument(format!(
            "template has {} pixels, shape {shape} needs {}",
            template.len(),
            shape.n()
        )));
    }
    let r = params.shift_range;
    let fits = match params.boundary {
        Boundary::Wrap => 2 * r < shape.height as i64 && 2 * r < shape.width as i64,
        Boundary::ZeroPad => r < shape.height as i64 && r < shape.width as i64,
    };
    if r < 0 || !fits {
        return Err(Error::InvalidArgument(format!(
            "shift range {r} does not fit a {shape} image"
        )));
    }
    let span = (2 * r + 1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(params.frames);
    let mut truth = GroundTruth {
        clean: Vec::new(),
        classes: vec![0; params.frames],
        transforms: Vec::new(),
        shifts: Vec::new(),
        params: vec![
            ("generator".into(), "shifted".into()),
            ("seed".into(), seed.to_string()),
            ("frames".into(), params.frames.to_string()),
            ("shift_range".into(), r.to_string()),
            ("sensor_noise".into(), params.sensor_noise.to_string()),
        ],
    };
    let mut shift = (0i64, 0i64);
    for t in 0..params.frames {
        shift = match params.process {
            ShiftProcess::Iid => (rng.random_range(-r..=r), rng.random_range(-r..=r)),
            ShiftProcess::RandomWalk if t == 0 => (rng.random_range(-r..=r), rng.random_range(-r..=r)),
            ShiftProcess::RandomWalk => (
                (shift.0 + rng.random_range(-1..=1i64)).clamp(-r, r),
                (shift.1 + rng.random_range(-1..=1i64)).clamp(-r, r),
            ),
        };
        let clean = TransformOp::shift(shape, shift.0, shift.1, params.boundary).apply(template);
        let frame = clean
            .iter()
            .map(|v| v + params.sensor_noise * gauss(&mut rng))
            .collect();
        frames.push(frame);
        truth.clean.push(clean);
        truth.transforms.push(((shift.0 + r) as usize) * span + (shift.1 + r) as usize);
        truth.shifts.push(shift);
    }
    Ok((frames, truth))
}

/// The ten bundled 8×8 digit prototypes, ink = 1.
pub fn digit_glyphs() -> Vec<Vec<f64>> {
    parse_art(GLYPH_FIXTURE)
        .into_iter()
        .map(|(_, rows)| {
            rows.iter()
                .flat_map(|row| row.iter().map(|&on| if on { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphParams {
    pub per_class: usize,
    pub family: ShearFamily,
    /// Upper bound of the stroke-thickening blend drawn per sample.
    pub thicken: f64,
    /// Standard deviation of the multiplicative ink weight.
    pub weight: f64,
    pub noise: f64,
}

impl Default for GlyphParams {
    fn default() -> Self {
        Self {
            per_class: 200,
            family: ShearFamily::standard(),
            thicken: 0.5,
            weight: 0.1,
            noise: 0.1,
        }
    }
}

/// Horizontal one-pixel dilation.
fn dilate(img: &[f64], shape: ImageShape) -> Vec<f64> {
    let mut out = img.to_vec();
    for r in 0..shape.height {
        for c in 0..shape.width {
            let mut v = img[shape.index(r, c)];
            if c > 0 {
                v = v.max(img[shape.index(r, c - 1)]);
            }
            if c + 1 < shape.width {
                v = v.max(img[shape.index(r, c + 1)]);
            }
            out[shape.index(r, c)] = v;
        }
    }
    out
}

/// Labeled glyph samples: each is its prototype with random stroke
/// thickening and ink weight, put through a random op of the family, plus
/// noise. Samples are ordered class by class.
pub fn gen_sheared_glyphs(
    seed: u64,
    glyphs: &[Vec<f64>],
    shape: ImageShape,
    params: &GlyphParams,
) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    if glyphs.iter().any(|g| g.len() != shape.n()) {
        return Err(Error::InvalidArgument(format!("every glyph must have {} pixels", shape.n())));
    }
    let set = build_shear_translation_set(shape, &params.family)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = glyphs.len() * params.per_class;
    let mut images = Vec::with_capacity(total);
    let mut truth = GroundTruth {
        clean: Vec::with_capacity(total),
        classes: Vec::with_capacity(total),
        transforms: Vec::with_capacity(total),
        shifts: Vec::with_capacity(total),
        params: vec![
            ("generator".into(), "glyphs".into()),
            ("seed".into(), seed.to_string()),
            ("per_class".into(), params.per_class.to_string()),
            ("thicken".into(), params.thicken.to_string()),
            ("weight".into(), params.weight.to_string()),
            ("noise".into(), params.noise.to_string()),
        ],
    };
    for (label, proto) in glyphs.iter().enumerate() {
        let thick = dilate(proto, shape);
        for _ in 0..params.per_class {
            let a = params.thicken * rng.random::<f64>();
            let w = 1.0 + params.weight * gauss(&mut rng);
            let base: Vec<f64> = proto
                .iter()
                .zip(&thick)
                .map(|(p, t)| w * ((1.0 - a) * p + a * t))
                .collect();
            let l = rng.random_range(0..set.len());
            let clean = set.op(l).apply(&base);
            let img = clean.iter().map(|v| v + params.noise * gauss(&mut rng)).collect();
            images.push(img);
            truth.clean.push(clean);
            truth.classes.push(label);
            truth.transforms.push(l);
            truth.shifts.push((0, params.family.entries[l].shift));
        }
    }
    Ok((images, truth))
}

/// Axis-aligned rectangle of observed pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bar {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Bar {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row) && (self.left..self.left + self.width).contains(&col)
    }

    /// Row-major mask over `shape`.
    pub fn mask(&self, shape: ImageShape) -> Vec<bool> {
        (0..shape.n())
            .map(|p| self.contains(p / shape.width, p % shape.width))
            .collect()
    }
}

/// Overwrites `bar` with `level` plus fresh `noise`-σ sensor noise in every
/// frame; `noise = 0` gives a constant bar. The returned ground truth keeps
/// the base truth with the un-occluded frames as `clean`.
pub fn gen_occluded(
    seed: u64,
    base: &[Vec<f64>],
    base_truth: &GroundTruth,
    shape: ImageShape,
    bar: Bar,
    level: f64,
    noise: f64,
) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    if base.iter().any(|f| f.len() != shape.n()) {
        return Err(Error::InvalidArgument(format!("every frame must have {} pixels", shape.n())));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("occluder noise {noise} must be finite and non-negative")));
    }
    let mask = bar.mask(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f63_636c_7564_6572);
    let frames = base
        .iter()
        .map(|f| {
            f.iter()
                .zip(&mask)
                .map(|(&v, &m)| if m { level + noise * gauss(&mut rng) } else { v })
                .collect()
        })
        .collect();
    let mut truth = base_truth.clone();
    truth.clean = base.to_vec();
    truth.params.push((
        "bar".into(),
        format!("{},{},{},{}", bar.top, bar.left, bar.height, bar.width),
    ));
    truth.params.push(("bar_level".into(), level.to_string()));
    truth.params.push(("bar_noise".into(), noise.to_string()));
    Ok((frames, truth))
}

/// For each latent pixel, whether some frame shows it outside the bar.
pub fn unoccluded_coverage(shape: ImageShape, bar: Bar, shifts: &[(i64, i64)], boundary: Boundary) -> Vec<bool> {
    let mask = bar.mask(shape);
    let mut seen = vec![false; shape.n()];
    for &(dv, dh) in shifts {
        let op = TransformOp::shift(shape, dv, dh, boundary);
        for (p, &hidden) in mask.iter().enumerate() {
            if let Some(q) = op.source(p) {
                if !hidden {
                    seen[q] = true;
                }
            }
        }
    }
    seen
}
