//! Affine state feedback `u = −K x + l`, handled as the augmented gain `X = [K l]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::LinearSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Feedback gain, `m × n`.
    pub k: Mat,
    /// Affine offset, length `m`.
    pub l: Vector,
}

impl Policy {
    pub fn new(k: Mat, l: Vector) -> Self {
        assert_eq!(k.nrows(), l.len(), "gain rows must match offset length");
        Self { k, l }
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            k: Mat::zeros(m, n),
            l: Vector::zeros(m),
        }
    }

    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    pub fn n(&self) -> usize {
        self.k.ncols()
    }

    /// `[K l]`, an `m × (n+1)` matrix.
    pub fn as_matrix(&self) -> Mat {
        let (m, n) = self.k.shape();
        let mut x = Mat::zeros(m, n + 1);
        x.view_mut((0, 0), (m, n)).copy_from(&self.k);
        x.set_column(n, &self.l);
        x
    }

    pub fn from_matrix(x: &Mat) -> Result<Self> {
        let (m, cols) = x.shape();
        if cols < 2 || m == 0 {
            return Err(Error::dim(
                "Policy::from_matrix",
                "m x (n+1) with n >= 1",
                format!("{m}x{cols}"),
            ));
        }
        let n = cols - 1;
        Ok(Self {
            k: x.view((0, 0), (m, n)).into_owned(),
            l: x.column(n).into_owned(),
        })
    }

    /// `X + step · D` in the flat augmented geometry.
    pub fn offset(&self, direction: &Mat, step: f64) -> Self {
        let n = self.n();
        Self {
            k: &self.k + direction.columns(0, n) * step,
            l: &self.l + direction.column(n) * step,
        }
    }

    pub fn check_dims(&self, sys: &LinearSystem) -> Result<()> {
        if self.k.shape() != (sys.m(), sys.n()) || self.l.len() != sys.m() {
            return Err(Error::dim(
                "policy",
                format!("K {}x{}, l {}", sys.m(), sys.n(), sys.m()),
                format!(
                    "K {}x{}, l {}",
                    self.k.nrows(),
                    self.k.ncols(),
                    self.l.len()
                ),
            ));
        }
        Ok(())
    }

    /// `u = −K x + l`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.n() {
            return Err(Error::dim("Policy::apply", self.n(), x.len()));
        }
        Ok(&self.l - &self.k * x)
    }

    /// `ρ(A − B K)`.
    pub fn closed_loop_radius(&self, sys: &LinearSystem) -> Result<f64> {
        self.check_dims(sys)?;
        linalg::spectral_radius(&sys.closed_loop(&self.k))
    }

    /// True iff `ρ(A − B K) < 1 − margin`.
    pub fn is_stabilizing_with_margin(&self, sys: &LinearSystem, margin: f64) -> Result<bool> {
        Ok(self.closed_loop_radius(sys)? < 1.0 - margin)
    }

    pub fn is_stabilizing(&self, sys: &LinearSystem) -> Result<bool> {
        self.is_stabilizing_with_margin(sys, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::uav;
    use proptest::prelude::*;

    fn scalar_system(a: f64, b: f64) -> LinearSystem {
        let one = Mat::identity(1, 1);
        LinearSystem::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, b),
            one.clone(),
            one,
        )
        .unwrap()
    }

    #[test]
    fn uav_initial_policy_stabilizes() {
        assert!(uav::initial_policy()
            .is_stabilizing(&uav::system())
            .unwrap());
    }

    #[test]
    fn zero_gain_on_double_integrator_is_marginal() {
        assert!(!Policy::zeros(2, 4).is_stabilizing(&uav::system()).unwrap());
    }

    #[test]
    fn scalar_stabilizing_gain() {
        let p = Policy::new(Mat::from_element(1, 1, 1.5), Vector::zeros(1));
        assert!(p.is_stabilizing(&scalar_system(2.0, 1.0)).unwrap());
        assert!(!p
            .is_stabilizing_with_margin(&scalar_system(2.0, 1.0), 0.6)
            .unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = Policy::zeros(1, 3);
        assert!(matches!(
            p.is_stabilizing(&uav::system()),
            Err(Error::Dimension { .. })
        ));
        assert!(p.apply(&Vector::zeros(2)).is_err());
    }

    #[test]
    fn apply_examples() {
        let p = uav::initial_policy();
        assert_eq!(p.apply(&Vector::zeros(4)).unwrap(), p.l);
        let u = p.apply(&Vector::from_element(4, 1.0)).unwrap();
        assert_eq!(u, Vector::from_vec(vec![-7.0, -1.0]));
        let open = Policy::new(Mat::zeros(2, 4), Vector::from_vec(vec![1.0, 2.0]));
        assert_eq!(open.apply(&Vector::from_element(4, 3.0)).unwrap(), open.l);
    }

    fn arb_policy() -> impl Strategy<Value = Policy> {
        prop::collection::vec(-2.0f64..2.0, 10)
            .prop_map(|v| Policy::from_matrix(&Mat::from_row_slice(2, 5, &v)).unwrap())
    }

    proptest! {
        #[test]
        fn matrix_round_trip_preserves_stability(p in arb_policy()) {
            let sys = uav::system();
            let back = Policy::from_matrix(&p.as_matrix()).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.is_stabilizing(&sys).unwrap(), p.is_stabilizing(&sys).unwrap());
        }

        #[test]
        fn apply_is_affine(
            p in arb_policy(),
            x in prop::collection::vec(-5.0f64..5.0, 4),
            y in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in 0.0f64..1.0,
        ) {
            let x = Vector::from_vec(x);
            let y = Vector::from_vec(y);
            let lhs = p.apply(&(&x * alpha + &y * (1.0 - alpha))).unwrap();
            let rhs = p.apply(&x).unwrap() * alpha + p.apply(&y).unwrap() * (1.0 - alpha);
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }
}
