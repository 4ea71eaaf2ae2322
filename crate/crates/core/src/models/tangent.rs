//! Loading columns that approximate a continuous transformation locally.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::transform::TransformationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Vertical,
    Horizontal,
}

/// A one-parameter subfamily given by its `+1` and `−1` step ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TangentDirection {
    pub plus: usize,
    pub minus: usize,
}

impl TangentDirection {
    pub fn new(transforms: &TransformationSet, plus: usize, minus: usize) -> Result<Self> {
        if plus >= transforms.len() || minus >= transforms.len() || plus == minus {
            return Err(Error::InvalidArgument(format!(
                "tangent direction needs two distinct ops in 0..{}, got {plus} and {minus}",
                transforms.len()
            )));
        }
        Ok(Self { plus, minus })
    }

    /// Unit grid shifts along `axis`.
    pub fn along(transforms: &TransformationSet, axis: Axis) -> Result<Self> {
        let grid = transforms.grid().ok_or_else(|| {
            Error::InvalidArgument("tangent along an axis needs a shift grid".into())
        })?;
        let (dv, dh) = match axis {
            Axis::Vertical => (1, 0),
            Axis::Horizontal => (0, 1),
        };
        match (grid.index_of_shift(dv, dh), grid.index_of_shift(-dv, -dh)) {
            (Some(plus), Some(minus)) => Ok(Self { plus, minus }),
            _ => Err(Error::InvalidArgument(format!(
                "no ±1 {axis:?} neighbors in a {}x{} shift grid",
                grid.rows, grid.cols
            ))),
        }
    }
}

/// Central differences `(G₊μ − G₋μ)/2`, one column per direction.
pub fn tangent_columns(
    mu: &[f64],
    transforms: &TransformationSet,
    directions: &[TangentDirection],
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mu.len(), directions.len());
    for (k, d) in directions.iter().enumerate() {
        let plus = transforms.op(d.plus).apply(mu);
        let minus = transforms.op(d.minus).apply(mu);
        for q in 0..mu.len() {
            out[(q, k)] = 0.5 * (plus[q] - minus[q]);
        }
    }
    out
}
