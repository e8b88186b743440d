//! Market primitives: group masses, joint surplus, matchings and the
//! feasibility arithmetic shared by the solvers and estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, Side};

/// Default absolute tolerance on margin residuals.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Masses of each man group (`n`) and woman group (`m`).
#[derive(Clone, Debug, PartialEq)]
pub struct Margins {
    n: DVector<f64>,
    m: DVector<f64>,
}

impl Margins {
    pub fn new(n: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        for (side, v) in [(Side::Men, &n), (Side::Women, &m)] {
            if v.is_empty() {
                return Err(Error::invalid("margins", format!("no {side} groups")));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::invalid(
                    "margins",
                    format!("{side} group {i} has mass {}", v[i]),
                ));
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::invalid("margins", format!("all {side} masses are zero")));
            }
        }
        Ok(Self {
            n: DVector::from_vec(n),
            m: DVector::from_vec(m),
        })
    }

    pub fn n(&self) -> &DVector<f64> {
        &self.n
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn nx(&self) -> usize {
        self.n.len()
    }

    pub fn ny(&self) -> usize {
        self.m.len()
    }

    pub fn total(&self) -> f64 {
        self.n.sum() + self.m.sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: &self.n * c,
            m: &self.m * c,
        }
    }

    /// Errors if any group has zero mass.
    pub fn require_positive(&self) -> Result<()> {
        if let Some(i) = self.n.iter().position(|x| *x <= 0.0) {
            return Err(Error::ZeroMargin { side: Side::Men, index: i });
        }
        if let Some(j) = self.m.iter().position(|x| *x <= 0.0) {
            return Err(Error::ZeroMargin { side: Side::Women, index: j });
        }
        Ok(())
    }
}

/// Systematic joint surplus `Phi[x, y]` with a mask of impossible matches.
#[derive(Clone, Debug, PartialEq)]
pub struct SurplusMatrix {
    phi: DMatrix<f64>,
    forbidden: DMatrix<bool>,
}

impl SurplusMatrix {
    /// A surplus matrix with every cell allowed.
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let forbidden = DMatrix::from_element(phi.nrows(), phi.ncols(), false);
        Self::with_mask(phi, forbidden)
    }

    /// Forbidden cells have their stored value zeroed.
    pub fn with_mask(mut phi: DMatrix<f64>, forbidden: DMatrix<bool>) -> Result<Self> {
        if phi.shape() != forbidden.shape() {
            return Err(Error::dims("forbidden mask rows", phi.nrows(), forbidden.nrows()));
        }
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::invalid("surplus", "empty matrix"));
        }
        for (v, f) in phi.iter_mut().zip(forbidden.iter()) {
            if *f {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::NonFinite("surplus matrix".into()));
            }
        }
        Ok(Self { phi, forbidden })
    }

    /// Treats `-inf` entries as forbidden cells.
    pub fn from_values(phi: DMatrix<f64>) -> Result<Self> {
        let forbidden = phi.map(|v| v == f64::NEG_INFINITY);
        Self::with_mask(phi, forbidden)
    }

    pub fn nx(&self) -> usize {
        self.phi.nrows()
    }

    pub fn ny(&self) -> usize {
        self.phi.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.forbidden
    }

    pub fn is_forbidden(&self, x: usize, y: usize) -> bool {
        self.forbidden[(x, y)]
    }

    pub fn allowed(&self, x: usize, y: usize) -> bool {
        !self.forbidden[(x, y)]
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        (!self.forbidden[(x, y)]).then(|| self.phi[(x, y)])
    }

    pub fn has_forbidden(&self) -> bool {
        self.forbidden.iter().any(|f| *f)
    }

    /// Allowed partners of man group `x`.
    pub fn row_allowed(&self, x: usize) -> Vec<bool> {
        (0..self.ny()).map(|y| self.allowed(x, y)).collect()
    }

    /// Allowed partners of woman group `y`.
    pub fn col_allowed(&self, y: usize) -> Vec<bool> {
        (0..self.nx()).map(|x| self.allowed(x, y)).collect()
    }

    pub fn check_margins(&self, r: &Margins) -> Result<()> {
        if r.nx() != self.nx() {
            return Err(Error::dims("men groups", self.nx(), r.nx()));
        }
        if r.ny() != self.ny() {
            return Err(Error::dims("women groups", self.ny(), r.ny()));
        }
        Ok(())
    }
}

/// Matched masses together with the masses of singles on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub mu: DMatrix<f64>,
    pub mu_x0: DVector<f64>,
    pub mu_0y: DVector<f64>,
}

impl Matching {
    pub fn new(mu: DMatrix<f64>, mu_x0: DVector<f64>, mu_0y: DVector<f64>) -> Result<Self> {
        if mu.nrows() != mu_x0.len() {
            return Err(Error::dims("single men", mu.nrows(), mu_x0.len()));
        }
        if mu.ncols() != mu_0y.len() {
            return Err(Error::dims("single women", mu.ncols(), mu_0y.len()));
        }
        let bad = mu
            .iter()
            .chain(mu_x0.iter())
            .chain(mu_0y.iter())
            .any(|v| !v.is_finite() || *v < 0.0);
        if bad {
            return Err(Error::invalid("matching", "masses must be finite and nonnegative"));
        }
        Ok(Self { mu, mu_x0, mu_0y })
    }

    /// Everyone single.
    pub fn all_single(r: &Margins) -> Self {
        Self {
            mu: DMatrix::zeros(r.nx(), r.ny()),
            mu_x0: r.n().clone(),
            mu_0y: r.m().clone(),
        }
    }

    pub fn nx(&self) -> usize {
        self.mu.nrows()
    }

    pub fn ny(&self) -> usize {
        self.mu.ncols()
    }

    /// Margins implied by the matching itself.
    pub fn implied_margins(&self) -> Result<Margins> {
        let n = (0..self.nx())
            .map(|x| self.mu_x0[x] + self.mu.row(x).sum())
            .collect();
        let m = (0..self.ny())
            .map(|y| self.mu_0y[y] + self.mu.column(y).sum())
            .collect();
        Margins::new(n, m)
    }

    /// Number of households: couples plus singles on both sides.
    pub fn households(&self) -> f64 {
        self.mu.sum() + self.mu_x0.sum() + self.mu_0y.sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            mu: &self.mu * c,
            mu_x0: &self.mu_x0 * c,
            mu_0y: &self.mu_0y * c,
        }
    }

    pub fn max_abs_diff(&self, other: &Matching) -> f64 {
        let a = (&self.mu - &other.mu).amax();
        let b = (&self.mu_x0 - &other.mu_x0).amax();
        let c = (&self.mu_0y - &other.mu_0y).amax();
        a.max(b).max(c)
    }
}

/// Systematic utilities `U[x, y]` for men and `V[x, y]` for women. The
/// outside options are pinned at zero and not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SystematicUtilities {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Expected utilities of each group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupUtilities {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl GroupUtilities {
    /// Dual value `sum_x n_x u_x + sum_y m_y v_y`.
    pub fn dual_value(&self, r: &Margins) -> f64 {
        self.u.dot(r.n()) + self.v.dot(r.m())
    }
}

/// Per-group residuals `n_x - mu_x0 - sum_y mu_xy` and `m_y - mu_0y - sum_x mu_xy`.
pub fn margin_residuals(mu: &Matching, r: &Margins) -> Result<(DVector<f64>, DVector<f64>)> {
    if mu.nx() != r.nx() {
        return Err(Error::dims("men groups", r.nx(), mu.nx()));
    }
    if mu.ny() != r.ny() {
        return Err(Error::dims("women groups", r.ny(), mu.ny()));
    }
    let rx = DVector::from_fn(r.nx(), |x, _| r.n()[x] - mu.mu_x0[x] - mu.mu.row(x).sum());
    let ry = DVector::from_fn(r.ny(), |y, _| r.m()[y] - mu.mu_0y[y] - mu.mu.column(y).sum());
    Ok((rx, ry))
}

/// Largest absolute margin residual.
pub fn max_margin_residual(mu: &Matching, r: &Margins) -> Result<f64> {
    let (rx, ry) = margin_residuals(mu, r)?;
    Ok(rx.amax().max(ry.amax()))
}

/// Conditional choice probabilities `mu_{y|x}` (first) and `mu_{x|y}`
/// (second), both stored as `|X| x |Y|` matrices.
pub fn conditional_probs(mu: &Matching, r: &Margins) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    margin_residuals(mu, r)?;
    r.require_positive()?;
    let mut by_x = mu.mu.clone();
    let mut by_y = mu.mu.clone();
    for x in 0..mu.nx() {
        by_x.row_mut(x).unscale_mut(r.n()[x]);
    }
    for y in 0..mu.ny() {
        by_y.column_mut(y).unscale_mut(r.m()[y]);
    }
    Ok((by_x, by_y))
}

/// Check that a matching is feasible for `r` within `tol`.
pub fn check_feasible(mu: &Matching, r: &Margins, tol: f64) -> Result<()> {
    let res = max_margin_residual(mu, r)?;
    if res > tol {
        return Err(Error::invalid(
            "matching",
            format!("margin residual {res:e} exceeds tolerance {tol:e}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_one(mu: f64, single: f64) -> Matching {
        Matching::new(
            DMatrix::from_element(1, 1, mu),
            DVector::from_element(1, single),
            DVector::from_element(1, single),
        )
        .unwrap()
    }

    #[test]
    fn residuals_vanish_on_feasible_matching() {
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let (rx, ry) = margin_residuals(&one_by_one(0.5, 0.5), &r).unwrap();
        assert_eq!(rx[0], 0.0);
        assert_eq!(ry[0], 0.0);
    }

    #[test]
    fn all_single_is_feasible() {
        let r = Margins::new(vec![1.0, 2.0], vec![3.0]).unwrap();
        let (rx, ry) = margin_residuals(&Matching::all_single(&r), &r).unwrap();
        assert!(rx.iter().chain(ry.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn overfull_matching_has_negative_residual() {
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let (rx, ry) = margin_residuals(&one_by_one(0.6, 0.5), &r).unwrap();
        assert!((rx[0] + 0.1).abs() < 1e-15);
        assert!((ry[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn residuals_reject_dimension_mismatch() {
        let r = Margins::new(vec![1.0, 1.0], vec![1.0]).unwrap();
        assert!(matches!(
            margin_residuals(&one_by_one(0.5, 0.5), &r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conditional_probs_basic_and_scale_invariant() {
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let mu = one_by_one(0.5, 0.5);
        let (px, py) = conditional_probs(&mu, &r).unwrap();
        assert_eq!(px[(0, 0)], 0.5);
        assert_eq!(py[(0, 0)], 0.5);
        let (qx, qy) = conditional_probs(&mu.scaled(10.0), &r.scaled(10.0)).unwrap();
        assert!((qx[(0, 0)] - 0.5).abs() < 1e-15 && (qy[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_probs_rows_close_with_singles() {
        // 3x3 feasible instance built by hand from couples and singles.
        let mu = DMatrix::from_row_slice(3, 3, &[0.1, 0.2, 0.05, 0.3, 0.0, 0.1, 0.02, 0.4, 0.2]);
        let sx = DVector::from_vec(vec![0.3, 0.05, 0.5]);
        let sy = DVector::from_vec(vec![0.2, 0.1, 0.7]);
        let matching = Matching::new(mu, sx, sy).unwrap();
        let r = matching.implied_margins().unwrap();
        let (px, py) = conditional_probs(&matching, &r).unwrap();
        for x in 0..3 {
            let total = px.row(x).sum() + matching.mu_x0[x] / r.n()[x];
            assert!((total - 1.0).abs() < 1e-14);
        }
        for y in 0..3 {
            let total = py.column(y).sum() + matching.mu_0y[y] / r.m()[y];
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_margin_is_named() {
        let r = Margins::new(vec![1.0, 0.0], vec![1.0]).unwrap();
        let mu = Matching::all_single(&r);
        match conditional_probs(&mu, &r) {
            Err(Error::ZeroMargin { side: Side::Men, index: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn margins_validate() {
        assert!(Margins::new(vec![-1.0], vec![1.0]).is_err());
        assert!(Margins::new(vec![0.0], vec![1.0]).is_err());
        assert!(Margins::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn forbidden_cells_carry_no_value() {
        let phi = DMatrix::from_row_slice(1, 2, &[1.0, f64::NEG_INFINITY]);
        let s = SurplusMatrix::from_values(phi).unwrap();
        assert!(s.is_forbidden(0, 1));
        assert_eq!(s.values()[(0, 1)], 0.0);
        assert_eq!(s.get(0, 1), None);
        assert!(SurplusMatrix::new(DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }
}
