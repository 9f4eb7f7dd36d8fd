//! Proximal block selection and the local Newton-type solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::objectives::ConvexityBounds;
use crate::solvers::DPolicy;

/// Eigenvalue floor of the local system: below this the system is shifted
/// (solver path) or rejected (standalone solve).
pub const CONDITIONING_FLOOR: f64 = 1e-8;

/// Multiplicative headroom on the derived margin requirement.
const MARGIN_HEADROOM: f64 = 1.05;
/// Positive floor for the derived `tau`, as a fraction of the largest
/// smoothness modulus; keeps `tau` strictly positive when the margin
/// requirement is already met at zero.
const TAU_FLOOR_FRACTION: f64 = 0.05;

/// Chosen proximal blocks plus how the scale was derived.
#[derive(Debug, Clone)]
pub struct ProximalBlocks {
    pub blocks: Vec<DMatrix<f64>>,
    /// The scale actually used: `D_i = tau * I`.
    pub tau: f64,
    /// The smallest scale satisfying the margin condition, before headroom
    /// and flooring. Only present for the derived policy.
    pub required_tau: Option<f64>,
}

/// Selects the proximal blocks `D_i`.
///
/// For the derived policy, each block is `tau * I` with
///
/// ```text
/// tau_req = max_i [ M_i/(2 eta) + (2/theta - 3/2) M_i - 3/2 m_i + s_i^2 ]
///           + rho (lambda_max(W) + 1),    s_i = M_i/theta - (M_i + m_i)/2
/// ```
///
/// and `tau = max(1.05 * tau_req, 0.05 * max_i M_i)`: the headroom makes
/// the blockwise margin condition strict, the floor keeps `tau` positive
/// when the requirement is already negative. Under the curvature sandwich
/// the estimated Hessian dominates `m_i/(2 - theta) * I`, so any positive
/// `tau` also keeps every local system positive definite.
pub fn choose_d(
    policy: &DPolicy,
    bounds: &[ConvexityBounds],
    rho: f64,
    lambda_max_w: f64,
    dimension: usize,
) -> Result<ProximalBlocks> {
    if bounds.is_empty() {
        return Err(Error::Parameter("no convexity bounds supplied".into()));
    }
    match *policy {
        DPolicy::ScaledIdentity { tau } => {
            if !(tau > 0.0) {
                return Err(Error::Parameter(format!("tau {tau} must be positive")));
            }
            Ok(ProximalBlocks {
                blocks: vec![DMatrix::identity(dimension, dimension) * tau; bounds.len()],
                tau,
                required_tau: None,
            })
        }
        DPolicy::CurvatureMargin { eta, theta } => {
            if !(eta > 1.0) {
                return Err(Error::Parameter(format!("eta {eta} must exceed 1")));
            }
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::Parameter(format!("theta {theta} must lie in (0, 1]")));
            }
            if !(rho > 0.0) {
                return Err(Error::Parameter(format!("rho {rho} must be positive")));
            }
            let mut block_req = f64::NEG_INFINITY;
            let mut max_smoothness = 0.0f64;
            for b in bounds {
                let (m, big_m) = (b.strong_convexity, b.smoothness);
                let s = big_m / theta - 0.5 * (big_m + m);
                let req = big_m / (2.0 * eta) + (2.0 / theta - 1.5) * big_m - 1.5 * m + s * s;
                block_req = block_req.max(req);
                max_smoothness = max_smoothness.max(big_m);
            }
            let required = block_req + rho * (lambda_max_w + 1.0);
            let tau = (MARGIN_HEADROOM * required).max(TAU_FLOOR_FRACTION * max_smoothness);
            Ok(ProximalBlocks {
                blocks: vec![DMatrix::identity(dimension, dimension) * tau; bounds.len()],
                tau,
                required_tau: Some(required),
            })
        }
    }
}

/// Solves a symmetric positive definite system through its
/// eigendecomposition.
pub(crate) fn solve_with_eigen(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    rhs: &DVector<f64>,
) -> DVector<f64> {
    let mut coeffs = eig.eigenvectors.tr_mul(rhs);
    for k in 0..coeffs.len() {
        coeffs[k] /= eig.eigenvalues[k];
    }
    &eig.eigenvectors * coeffs
}

/// Local search direction `d = -(H + D)^{-1} (g + rho y + q)` via a
/// symmetric solve. Rejects singular or indefinite systems, carrying the
/// offending smallest eigenvalue.
pub fn search_direction(
    h_est: &DMatrix<f64>,
    d_mat: &DMatrix<f64>,
    g_est: &DVector<f64>,
    y: &DVector<f64>,
    q: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    let sys = h_est + d_mat;
    let eig = SymmetricEigen::new(sys);
    let lambda_min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1.0);
    if lambda_min <= 1e-12 * scale {
        return Err(Error::Conditioning {
            lambda_min,
            context: String::new(),
        });
    }
    let rhs = -(g_est + y * rho + q);
    Ok(solve_with_eigen(&eig, &rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bounds(m: f64, big_m: f64) -> ConvexityBounds {
        ConvexityBounds {
            strong_convexity: m,
            smoothness: big_m,
        }
    }

    #[test]
    fn scaled_identity_builds_tau_blocks() {
        let out = choose_d(
            &DPolicy::ScaledIdentity { tau: 5.0 },
            &[bounds(1.0, 1.0); 3],
            0.5,
            2.0,
            2,
        )
        .unwrap();
        assert_eq!(out.blocks.len(), 3);
        for b in &out.blocks {
            assert_eq!(b, &(DMatrix::identity(2, 2) * 5.0));
        }
        assert!(choose_d(
            &DPolicy::ScaledIdentity { tau: 0.0 },
            &[bounds(1.0, 1.0)],
            0.5,
            2.0,
            2
        )
        .is_err());
    }

    #[test]
    fn derived_tau_matches_hand_computation() {
        // m = M = 1, theta = 1, rho = 0.1, eta = 2, lambda_max(W) = 2:
        // block term 1/4 + 0.5 - 1.5 + 0 = -0.75, penalty term 0.3,
        // requirement -0.45; the floor takes over and tau is small positive.
        let out = choose_d(
            &DPolicy::CurvatureMargin { eta: 2.0, theta: 1.0 },
            &[bounds(1.0, 1.0); 4],
            0.1,
            2.0,
            2,
        )
        .unwrap();
        assert_relative_eq!(out.required_tau.unwrap(), -0.45, max_relative = 1e-12);
        assert!(out.tau > 0.0 && out.tau <= 0.1, "tau {}", out.tau);
    }

    #[test]
    fn derived_blocks_keep_sandwiched_systems_positive() {
        for (m, big_m, theta) in [(1.0, 1.0, 1.0), (0.5, 4.0, 0.6), (0.1, 5.0, 0.3)] {
            let out = choose_d(
                &DPolicy::CurvatureMargin { eta: 2.0, theta },
                &[bounds(m, big_m); 3],
                0.5,
                4.0,
                2,
            )
            .unwrap();
            // positivity consequence of the margin condition
            let floor = out.tau + m / (2.0 - theta);
            assert!(floor > 0.0, "m={m} M={big_m} theta={theta}");
        }
    }

    #[test]
    fn direction_identity_solve() {
        let h = DMatrix::identity(2, 2);
        let d_mat = DMatrix::zeros(2, 2);
        let g = DVector::from_vec(vec![2.0, 0.0]);
        let dir = search_direction(&h, &d_mat, &g, &DVector::zeros(2), &DVector::zeros(2), 0.5)
            .unwrap();
        assert_relative_eq!(dir[0], -2.0, max_relative = 1e-14);
        assert_relative_eq!(dir[1], 0.0);
    }

    #[test]
    fn direction_vanishes_at_local_stationarity() {
        let h = DMatrix::identity(3, 3) * 2.0;
        let d_mat = DMatrix::identity(3, 3);
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = DVector::from_vec(vec![0.0, 2.0, -1.0]);
        let q = -(&g + &y * 0.5);
        let dir = search_direction(&h, &d_mat, &g, &y, &q, 0.5).unwrap();
        assert!(dir.norm() <= 1e-14);
    }

    #[test]
    fn direction_diagonal_solve() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let d_mat = DMatrix::zeros(2, 2);
        let g = DVector::from_vec(vec![2.0, 4.0]);
        let dir = search_direction(&h, &d_mat, &g, &DVector::zeros(2), &DVector::zeros(2), 1.0)
            .unwrap();
        assert_relative_eq!(dir[0], -1.0, max_relative = 1e-14);
        assert_relative_eq!(dir[1], -1.0, max_relative = 1e-14);
    }

    #[test]
    fn indefinite_system_is_rejected_with_lambda_min() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let d_mat = DMatrix::zeros(2, 2);
        let g = DVector::from_vec(vec![1.0, 1.0]);
        match search_direction(&h, &d_mat, &g, &DVector::zeros(2), &DVector::zeros(2), 1.0) {
            Err(Error::Conditioning { lambda_min, .. }) => {
                assert_relative_eq!(lambda_min, -2.0, max_relative = 1e-12)
            }
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }
}
