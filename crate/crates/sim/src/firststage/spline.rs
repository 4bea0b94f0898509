use expoprop_core::{stats, Error, Result};
use nalgebra::{DMatrix, QR};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineKind {
    /// Cubic B-spline basis without the intercept column.
    BsplinePolynomial,
    /// Natural cubic spline (linear beyond the boundary knots), without the
    /// intercept column.
    NaturalCubic,
}

const CUBIC_ORDER: usize = 4;

/// Basis with knots placed at quantiles of the training points; the same
/// knots are reused for evaluation at new points.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    pub kind: SplineKind,
    pub degree: usize,
    pub interior_knots: Vec<f64>,
    pub boundary: (f64, f64),
    pub basis_matrix: DMatrix<f64>,
    // natural splines: maps the reduced B-spline basis onto the subspace
    // with zero second derivative at both boundary knots
    projection: Option<DMatrix<f64>>,
}

fn augmented_knots(interior: &[f64], boundary: (f64, f64), order: usize) -> Vec<f64> {
    let mut t = vec![boundary.0; order];
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat_n(boundary.1, order));
    t
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Values (or `deriv`-th derivatives) of all `t.len() - order` B-splines of
/// the given order at `x`. The right boundary belongs to the last interval.
pub(crate) fn bspline_values(t: &[f64], order: usize, x: f64, deriv: usize) -> Vec<f64> {
    let len = t.len();
    let last = t[len - 1];
    let mut b = vec![0.0; len - 1];
    let span = if x >= last {
        (0..len - 1).rev().find(|&i| t[i] < t[i + 1])
    } else {
        (0..len - 1).find(|&i| t[i] <= x && x < t[i + 1])
    };
    if let Some(mu) = span {
        b[mu] = 1.0;
    }
    let value_order = order.saturating_sub(deriv).max(1);
    for q in 2..=value_order {
        for i in 0..len - q {
            b[i] = ratio(x - t[i], t[i + q - 1] - t[i]) * b[i]
                + ratio(t[i + q] - x, t[i + q] - t[i + 1]) * b[i + 1];
        }
        b.truncate(len - q);
    }
    for q in value_order + 1..=order {
        let qf = (q - 1) as f64;
        for i in 0..len - q {
            b[i] = qf * (ratio(b[i], t[i + q - 1] - t[i]) - ratio(b[i + 1], t[i + q] - t[i + 1]));
        }
        b.truncate(len - q);
    }
    b
}

pub fn build_spline_basis(points: &[f64], df: usize, kind: SplineKind) -> Result<SplineBasis> {
    let degree = CUBIC_ORDER - 1;
    let n_interior = match kind {
        SplineKind::BsplinePolynomial if df >= degree => df - degree,
        SplineKind::NaturalCubic if df >= 1 => df - 1,
        _ => {
            return Err(Error::InvalidParameter {
                name: "df",
                value: format!("{df} is too small for {kind:?}"),
            })
        }
    };
    if points.is_empty() || points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "spline points must be finite and nonempty".into(),
        ));
    }
    let sorted = stats::sorted(points);
    let boundary = (sorted[0], sorted[sorted.len() - 1]);
    if !(boundary.1 > boundary.0) {
        return Err(Error::DegenerateSample("spline points are constant".into()));
    }
    let interior_knots: Vec<f64> = (1..=n_interior)
        .map(|k| stats::quantile_sorted(&sorted, k as f64 / (n_interior + 1) as f64))
        .collect();
    let projection = match kind {
        SplineKind::BsplinePolynomial => None,
        SplineKind::NaturalCubic => {
            let t = augmented_knots(&interior_knots, boundary, CUBIC_ORDER);
            let ncols = t.len() - CUBIC_ORDER - 1;
            // second derivatives at both boundaries, intercept column dropped
            let mut constraint_t = DMatrix::zeros(ncols, 2);
            for (c, x) in [boundary.0, boundary.1].into_iter().enumerate() {
                let d2 = bspline_values(&t, CUBIC_ORDER, x, 2);
                for k in 0..ncols {
                    constraint_t[(k, c)] = d2[k + 1];
                }
            }
            let qr = QR::new(constraint_t);
            let mut qt = DMatrix::identity(ncols, ncols);
            qr.q_tr_mul(&mut qt);
            Some(qt.rows(2, ncols - 2).transpose())
        }
    };
    let mut basis = SplineBasis {
        kind,
        degree,
        interior_knots,
        boundary,
        basis_matrix: DMatrix::zeros(0, 0),
        projection,
    };
    basis.basis_matrix = basis.evaluate(points)?;
    Ok(basis)
}

impl SplineBasis {
    pub fn df(&self) -> usize {
        self.basis_matrix.ncols()
    }

    fn knots(&self) -> Vec<f64> {
        augmented_knots(&self.interior_knots, self.boundary, CUBIC_ORDER)
    }

    /// Full B-spline basis including the intercept column (rows sum to one).
    pub fn full_bspline_row(&self, x: f64) -> Vec<f64> {
        bspline_values(&self.knots(), CUBIC_ORDER, x, 0)
    }

    /// Basis rows at new points inside the boundary knots.
    pub fn evaluate(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.evaluate_derivative(x, 0)
    }

    pub fn evaluate_derivative(&self, x: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
        let tol = 1e-9 * (self.boundary.1 - self.boundary.0);
        if let Some(v) = x
            .iter()
            .find(|&&v| !(v >= self.boundary.0 - tol && v <= self.boundary.1 + tol))
        {
            return Err(Error::InvalidData(format!(
                "spline point {v} outside [{}, {}]",
                self.boundary.0, self.boundary.1
            )));
        }
        let t = self.knots();
        let ncols = t.len() - CUBIC_ORDER - 1;
        let mut reduced = DMatrix::zeros(x.len(), ncols);
        for (r, &v) in x.iter().enumerate() {
            let v = v.clamp(self.boundary.0, self.boundary.1);
            let row = bspline_values(&t, CUBIC_ORDER, v, deriv);
            for k in 0..ncols {
                reduced[(r, k)] = row[k + 1];
            }
        }
        Ok(match &self.projection {
            Some(p) => reduced * p,
            None => reduced,
        })
    }
}
