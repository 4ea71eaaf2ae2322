//! Discrete image transformations stored as sparse generalized permutations.
//!
//! Every operator maps each output pixel to at most one input pixel (or to
//! nothing, a VOID row) and never reads the same input pixel twice. With that
//! restriction `G Φ Gᵀ` stays diagonal for any diagonal `Φ`, so all the
//! transformed Gaussian densities in this crate are evaluated in O(n).

use std::fmt;

use crate::error::{Error, Result};

/// Marker for an output pixel with no source (an all-zero row of `G`).
pub const VOID: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image shape {height}x{width} has no pixels"
            )));
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Boundary {
    #[default]
    Wrap,
    ZeroPad,
}

impl Boundary {
    pub fn as_str(&self) -> &'static str {
        match self {
            Boundary::Wrap => "wrap",
            Boundary::ZeroPad => "zero-pad",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wrap" => Ok(Boundary::Wrap),
            "zero-pad" | "zeropad" | "zero" => Ok(Boundary::ZeroPad),
            other => Err(Error::InvalidArgument(format!("unknown boundary `{other}`"))),
        }
    }
}

/// One transformation `G_ℓ`, stored as a source-index table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformOp {
    shape: ImageShape,
    source: Vec<u32>,
    voids: usize,
}

impl TransformOp {
    /// Validates that every source is in range and that no input pixel is
    /// read by two outputs.
    pub fn new(shape: ImageShape, source: Vec<u32>) -> Result<Self> {
        let n = shape.n();
        if source.len() != n {
            return Err(Error::Transform(format!(
                "source table has {} entries for a {shape} image",
                source.len()
            )));
        }
        let mut seen = vec![false; n];
        for (p, &s) in source.iter().enumerate() {
            if s == VOID {
                continue;
            }
            let s = s as usize;
            if s >= n {
                return Err(Error::Transform(format!(
                    "pixel {p} reads out-of-range source {s}"
                )));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::Transform(format!(
                    "source pixel {s} is read by more than one output"
                )));
            }
        }
        let voids = source.iter().filter(|&&s| s == VOID).count();
        Ok(Self {
            shape,
            source,
            voids,
        })
    }

    pub fn identity(shape: ImageShape) -> Self {
        Self {
            shape,
            source: (0..shape.n() as u32).collect(),
            voids: 0,
        }
    }

    /// Shift content by `(dv, dh)`: output `(r, c)` copies input `(r - dv, c - dh)`.
    pub fn shift(shape: ImageShape, dv: i64, dh: i64, boundary: Boundary) -> Self {
        let (h, w) = (shape.height as i64, shape.width as i64);
        let mut source = Vec::with_capacity(shape.n());
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = (r - dv, c - dh);
                let s = match boundary {
                    Boundary::Wrap => (sr.rem_euclid(h) * w + sc.rem_euclid(w)) as u32,
                    Boundary::ZeroPad if (0..h).contains(&sr) && (0..w).contains(&sc) => {
                        (sr * w + sc) as u32
                    }
                    Boundary::ZeroPad => VOID,
                };
                source.push(s);
            }
        }
        let voids = source.iter().filter(|&&s| s == VOID).count();
        Self {
            shape,
            source,
            voids,
        }
    }

    #[inline]
    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    #[inline]
    pub fn sources(&self) -> &[u32] {
        &self.source
    }

    #[inline]
    pub fn source(&self, p: usize) -> Option<usize> {
        match self.source[p] {
            VOID => None,
            s => Some(s as usize),
        }
    }

    /// True when no row is VOID, i.e. `G` is a permutation matrix.
    pub fn is_permutation(&self) -> bool {
        self.voids == 0
    }

    pub fn is_identity(&self) -> bool {
        self.source.iter().enumerate().all(|(p, &s)| s as usize == p)
    }

    pub fn void_count(&self) -> usize {
        self.voids
    }

    /// `G x`.
    pub fn apply(&self, image: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.source.len()];
        self.apply_into(image, &mut out);
        out
    }

    pub fn apply_into(&self, image: &[f64], out: &mut [f64]) {
        assert_eq!(image.len(), self.source.len(), "image length does not match op shape");
        assert_eq!(out.len(), self.source.len());
        for (o, &s) in out.iter_mut().zip(&self.source) {
            *o = if s == VOID { 0.0 } else { image[s as usize] };
        }
    }

    /// `Gᵀ x`, computed by scattering.
    pub fn apply_adjoint(&self, image: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.source.len()];
        self.apply_adjoint_into(image, &mut out);
        out
    }

    pub fn apply_adjoint_into(&self, image: &[f64], out: &mut [f64]) {
        assert_eq!(image.len(), self.source.len(), "image length does not match op shape");
        assert_eq!(out.len(), self.source.len());
        out.fill(0.0);
        for (&v, &s) in image.iter().zip(&self.source) {
            if s != VOID {
                out[s as usize] += v;
            }
        }
    }

    /// Diagonal of `G diag(phi) Gᵀ + diag(psi)`.
    pub fn transform_diag_cov(&self, phi: &[f64], psi: &[f64]) -> Vec<f64> {
        let n = self.source.len();
        assert_eq!(phi.len(), n, "phi length does not match op shape");
        assert_eq!(psi.len(), n, "psi length does not match op shape");
        assert!(phi.iter().all(|&v| v > 0.0), "latent variances must be positive");
        self.source
            .iter()
            .zip(psi)
            .map(|(&s, &ps)| if s == VOID { ps } else { phi[s as usize] + ps })
            .collect()
    }
}

/// `M_vertical × M_horizontal` integer shift grid, sorted as `ℓ = i·M_h + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftGrid {
    pub rows: usize,
    pub cols: usize,
}

impl ShiftGrid {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell(&self, l: usize) -> (usize, usize) {
        (l / self.cols, l % self.cols)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    /// Signed `(dv, dh)` shift of grid index `ℓ`.
    pub fn shift_of(&self, l: usize) -> (i64, i64) {
        let (i, j) = self.cell(l);
        (
            i as i64 - (self.rows / 2) as i64,
            j as i64 - (self.cols / 2) as i64,
        )
    }

    pub fn index_of_shift(&self, dv: i64, dh: i64) -> Option<usize> {
        let i = dv + (self.rows / 2) as i64;
        let j = dh + (self.cols / 2) as i64;
        if (0..self.rows as i64).contains(&i) && (0..self.cols as i64).contains(&j) {
            Some(self.index(i as usize, j as usize))
        } else {
            None
        }
    }
}

/// An ordered family `{G_ℓ}` of transformations over one image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationSet {
    shape: ImageShape,
    ops: Vec<TransformOp>,
    grid: Option<ShiftGrid>,
    boundary: Boundary,
}

impl TransformationSet {
    pub fn new(
        shape: ImageShape,
        ops: Vec<TransformOp>,
        grid: Option<ShiftGrid>,
        boundary: Boundary,
    ) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Transform("a transformation set needs at least one op".into()));
        }
        if let Some(op) = ops.iter().find(|op| op.shape != shape) {
            return Err(Error::Transform(format!(
                "op of shape {} in a set of shape {shape}",
                op.shape
            )));
        }
        if let Some(g) = grid {
            if g.len() != ops.len() {
                return Err(Error::Transform(format!(
                    "grid {}x{} does not match {} ops",
                    g.rows,
                    g.cols,
                    ops.len()
                )));
            }
        }
        Ok(Self {
            shape,
            ops,
            grid,
            boundary,
        })
    }

    pub fn identity(shape: ImageShape) -> Self {
        Self {
            shape,
            ops: vec![TransformOp::identity(shape)],
            grid: Some(ShiftGrid { rows: 1, cols: 1 }),
            boundary: Boundary::Wrap,
        }
    }

    #[inline]
    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    #[inline]
    pub fn op(&self, l: usize) -> &TransformOp {
        &self.ops[l]
    }

    pub fn ops(&self) -> &[TransformOp] {
        &self.ops
    }

    pub fn grid(&self) -> Option<ShiftGrid> {
        self.grid
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.ops.iter().position(TransformOp::is_identity)
    }

    /// Whether grid shifts wrap around a full torus on each axis, so that
    /// relative motion between grid cells is taken modulo the grid size.
    pub fn is_toroidal(&self) -> bool {
        match self.grid {
            Some(g) => {
                self.boundary == Boundary::Wrap
                    && g.rows == self.shape.height
                    && g.cols == self.shape.width
            }
            None => false,
        }
    }
}

/// All integer shifts on a centered `shifts_v × shifts_h` grid.
pub fn build_translation_set(
    shape: ImageShape,
    shifts_v: usize,
    shifts_h: usize,
    boundary: Boundary,
) -> Result<TransformationSet> {
    for (name, count, extent) in [
        ("vertical", shifts_v, shape.height),
        ("horizontal", shifts_h, shape.width),
    ] {
        if count == 0 || count % 2 == 0 {
            return Err(Error::Transform(format!(
                "{name} shift count {count} must be odd so the grid is centered on zero"
            )));
        }
        let reach = count / 2;
        let fits = match boundary {
            Boundary::Wrap => count <= extent,
            Boundary::ZeroPad => reach < extent,
        };
        if !fits {
            return Err(Error::Transform(format!(
                "{count} {name} shifts exceed the image extent {extent} ({} boundary)",
                boundary.as_str()
            )));
        }
    }
    let grid = ShiftGrid {
        rows: shifts_v,
        cols: shifts_h,
    };
    let ops = (0..grid.len())
        .map(|l| {
            let (dv, dh) = grid.shift_of(l);
            TransformOp::shift(shape, dv, dh, boundary)
        })
        .collect();
    TransformationSet::new(shape, ops, Some(grid), boundary)
}

/// One shear+translation: rows are displaced horizontally by
/// `round(slope · (row − center))`, then the image is shifted by `shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShearEntry {
    pub slope: f64,
    pub shift: i64,
}

/// The shear+translation family as data.
#[derive(Debug, Clone, PartialEq)]
pub struct ShearFamily {
    pub entries: Vec<ShearEntry>,
}

impl ShearFamily {
    /// Cross product of `slopes` with `shifts_h` centered unit shifts.
    pub fn crossed(slopes: &[f64], shifts_h: usize) -> Self {
        let half = (shifts_h / 2) as i64;
        let entries = slopes
            .iter()
            .flat_map(|&slope| (-half..=half).map(move |shift| ShearEntry { slope, shift }))
            .collect();
        Self { entries }
    }

    /// The 29-op family used for 8×8 glyphs: slopes `{−3..3}/4` crossed with
    /// shifts `{−2, 0, 2}`, plus unit shifts `±1` at slopes `±1/4, ±2/4`.
    pub fn standard() -> Self {
        let mut entries = Vec::with_capacity(29);
        for level in -3..=3 {
            for shift in [-2, 0, 2] {
                entries.push(ShearEntry {
                    slope: level as f64 * 0.25,
                    shift,
                });
            }
        }
        for level in [-2, -1, 1, 2] {
            for shift in [-1, 1] {
                entries.push(ShearEntry {
                    slope: level as f64 * 0.25,
                    shift,
                });
            }
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn shear_op(shape: ImageShape, entry: ShearEntry) -> Result<TransformOp> {
    if !entry.slope.is_finite() {
        return Err(Error::Transform(format!("non-finite shear slope {}", entry.slope)));
    }
    let (h, w) = (shape.height as i64, shape.width as i64);
    let center = (shape.height as f64 - 1.0) / 2.0;
    let mut source = Vec::with_capacity(shape.n());
    for r in 0..h {
        let offset = (entry.slope * (r as f64 - center)).round() as i64 + entry.shift;
        if offset.abs() >= w {
            return Err(Error::Transform(format!(
                "shear slope {} with shift {} moves row {r} entirely out of the image",
                entry.slope, entry.shift
            )));
        }
        for c in 0..w {
            let sc = c - offset;
            source.push(if (0..w).contains(&sc) {
                (r * w + sc) as u32
            } else {
                VOID
            });
        }
    }
    TransformOp::new(shape, source)
}

/// Nearest-neighbor horizontal shears followed by horizontal translation,
/// zero-padded at the borders. The family must contain the identity.
pub fn build_shear_translation_set(
    shape: ImageShape,
    family: &ShearFamily,
) -> Result<TransformationSet> {
    let ops = family
        .entries
        .iter()
        .map(|&e| shear_op(shape, e))
        .collect::<Result<Vec<_>>>()?;
    if !ops.iter().any(TransformOp::is_identity) {
        return Err(Error::Transform(
            "shear family does not contain the identity".into(),
        ));
    }
    TransformationSet::new(shape, ops, None, Boundary::ZeroPad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: usize, w: usize) -> ImageShape {
        ImageShape::new(h, w).unwrap()
    }

    #[test]
    fn full_11x11_wrap_grid_has_121_ops() {
        let set = build_translation_set(shape(11, 11), 11, 11, Boundary::Wrap).unwrap();
        assert_eq!(set.len(), 121);
        assert!(set.ops().iter().all(TransformOp::is_permutation));
        assert!(set.op(60).is_identity());
        assert!(set.is_toroidal());
    }

    #[test]
    fn single_shift_is_identity() {
        let set = build_translation_set(shape(5, 5), 1, 1, Boundary::Wrap).unwrap();
        assert_eq!(set.len(), 1);
        let x: Vec<f64> = (0..25).map(|v| v as f64 * 0.5).collect();
        assert_eq!(set.op(0).apply(&x), x);
    }

    #[test]
    fn even_or_oversized_counts_rejected() {
        assert!(build_translation_set(shape(5, 5), 2, 1, Boundary::Wrap).is_err());
        assert!(build_translation_set(shape(5, 5), 7, 1, Boundary::Wrap).is_err());
        // reach 5 on a 5-row image leaves some ops entirely VOID
        assert!(build_translation_set(shape(5, 5), 11, 1, Boundary::ZeroPad).is_err());
        assert!(build_translation_set(shape(5, 5), 9, 1, Boundary::ZeroPad).is_ok());
    }

    #[test]
    fn lit_pixel_moves_down_and_back() {
        let s = shape(3, 3);
        let down = TransformOp::shift(s, 1, 0, Boundary::Wrap);
        let up = TransformOp::shift(s, -1, 0, Boundary::Wrap);
        for p in 0..9 {
            let mut x = vec![0.0; 9];
            x[p] = 1.0;
            let y = down.apply(&x);
            let (r, c) = (p / 3, p % 3);
            let expected = s.index((r + 1) % 3, c);
            assert_eq!(y.iter().position(|&v| v == 1.0), Some(expected));
            assert_eq!(up.apply(&y), x);
        }
    }

    #[test]
    fn two_by_two_shifts() {
        let s = shape(2, 2);
        let x = [1.0, 2.0, 3.0, 4.0];
        let right = TransformOp::shift(s, 0, 1, Boundary::Wrap);
        assert_eq!(right.apply(&x), vec![2.0, 1.0, 4.0, 3.0]);
        let down = TransformOp::shift(s, 1, 0, Boundary::ZeroPad);
        assert_eq!(down.apply(&x), vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(down.apply_adjoint(&[0.0, 0.0, 1.0, 2.0]), vec![1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn diag_cov_examples() {
        let s = shape(2, 2);
        let phi = [1.0, 2.0, 3.0, 4.0];
        let right = TransformOp::shift(s, 0, 1, Boundary::Wrap);
        assert_eq!(right.transform_diag_cov(&phi, &[0.0; 4]), vec![2.0, 1.0, 4.0, 3.0]);
        let down = TransformOp::shift(s, 1, 0, Boundary::ZeroPad);
        let got = down.transform_diag_cov(&phi, &[0.1; 4]);
        for (g, e) in got.iter().zip([0.1, 0.1, 1.1, 2.1]) {
            assert!((g - e).abs() < 1e-15);
        }
        let id = TransformOp::identity(s);
        assert_eq!(id.transform_diag_cov(&phi, &[0.5; 4]), vec![1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    #[should_panic]
    fn apply_rejects_length_mismatch() {
        TransformOp::identity(shape(2, 2)).apply(&[1.0; 3]);
    }

    #[test]
    fn op_validation() {
        let s = shape(1, 3);
        assert!(TransformOp::new(s, vec![0, 0, 1]).is_err());
        assert!(TransformOp::new(s, vec![0, 3, 1]).is_err());
        assert!(TransformOp::new(s, vec![2, VOID, 1]).is_ok());
    }

    #[test]
    fn standard_shear_family_has_29_ops() {
        let set = build_shear_translation_set(shape(8, 8), &ShearFamily::standard()).unwrap();
        assert_eq!(set.len(), 29);
        assert_eq!(set.identity_index(), Some(10));
    }

    #[test]
    fn zero_shear_is_identity() {
        let fam = ShearFamily::crossed(&[0.0], 1);
        let set = build_shear_translation_set(shape(4, 6), &fam).unwrap();
        assert!(set.op(0).is_identity());
    }

    #[test]
    fn shear_family_without_identity_rejected() {
        let fam = ShearFamily::crossed(&[0.25], 1);
        assert!(build_shear_translation_set(shape(8, 8), &fam).is_err());
        let fam = ShearFamily {
            entries: vec![ShearEntry { slope: f64::NAN, shift: 0 }],
        };
        assert!(build_shear_translation_set(shape(8, 8), &fam).is_err());
    }

    #[test]
    fn shear_turns_vertical_line_diagonal() {
        let s = shape(8, 8);
        let op = shear_op(s, ShearEntry { slope: 0.5, shift: 0 }).unwrap();
        let mut line = vec![0.0; 64];
        for r in 0..8 {
            line[s.index(r, 3)] = 1.0;
        }
        let y = op.apply(&line);
        let cols: Vec<usize> = (0..8)
            .map(|r| (0..8).find(|&c| y[s.index(r, c)] == 1.0).unwrap())
            .collect();
        // each row holds exactly one lit pixel, displaced by round(0.5·(r − 3.5))
        for (r, &c) in cols.iter().enumerate() {
            let expected = 3 + (0.5 * (r as f64 - 3.5)).round() as i64;
            assert_eq!(c as i64, expected);
        }
        assert!(cols.windows(2).all(|w| w[1] >= w[0]));
        let again = op.apply(&op.apply_adjoint(&y));
        assert_eq!(again, y);
    }

    #[test]
    fn grid_shift_lookup() {
        let g = ShiftGrid { rows: 3, cols: 5 };
        assert_eq!(g.shift_of(0), (-1, -2));
        assert_eq!(g.shift_of(7), (0, 0));
        assert_eq!(g.index_of_shift(1, 2), Some(14));
        assert_eq!(g.index_of_shift(2, 0), None);
    }
}
