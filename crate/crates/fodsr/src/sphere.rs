//! Directions on the unit sphere and deterministic point sets.

use crate::error::{FodError, Result};

/// A unit-norm direction vector.
///
/// Construction checks `|x²+y²+z² − 1| ≤ 1e-9`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDirection {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitDirection {
    pub const UNIT_TOL: f64 = 1e-9;

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > Self::UNIT_TOL {
            return Err(FodError::InvalidArgument(format!(
                "direction ({x}, {y}, {z}) is not unit-norm (|v|² = {n2})"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalize an arbitrary non-zero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(FodError::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    #[inline]
    pub fn dot(&self, other: &UnitDirection) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Angle in radians between the two axes, ignoring sign (antipodal pairs
    /// have angle 0). Suitable for comparing fiber orientations.
    pub fn axis_angle_to(&self, other: &UnitDirection) -> f64 {
        self.dot(other).abs().clamp(0.0, 1.0).acos()
    }
}

/// Deterministic Fibonacci-spiral point set, roughly uniform on the sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<UnitDirection> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden * i as f64;
            UnitDirection::normalized(r * theta.cos(), r * theta.sin(), z)
                .expect("fibonacci point is non-zero")
        })
        .collect()
}

/// A quadrature rule on the sphere: directions plus weights summing to 4π.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub dirs: Vec<UnitDirection>,
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Product rule: Gauss-Legendre nodes in cosθ times a uniform φ grid.
///
/// Integrates spherical polynomials exactly up to degree
/// `min(2·n_theta − 1, n_phi − 1)`, far beyond what the lmax=8 basis needs.
pub fn quadrature_grid(n_theta: usize, n_phi: usize) -> SphereQuadrature {
    let (nodes, weights) = gauss_legendre(n_theta);
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    let mut w = Vec::with_capacity(n_theta * n_phi);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    for (&ct, &wt) in nodes.iter().zip(&weights) {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for k in 0..n_phi {
            let phi = dphi * k as f64;
            dirs.push(
                UnitDirection::normalized(st * phi.cos(), st * phi.sin(), ct)
                    .expect("grid point is non-zero"),
            );
            w.push(wt * dphi);
        }
    }
    SphereQuadrature { dirs, weights: w }
}

/// The dense design used as the quadrature oracle throughout the tests:
/// a 66×66 grid (4356 points), deterministic, no RNG.
pub fn dense_design() -> SphereQuadrature {
    quadrature_grid(66, 66)
}

/// Gauss-Legendre nodes and weights on [-1, 1] via Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_non_unit() {
        assert!(UnitDirection::new(1.0, 1.0, 0.0).is_err());
        assert!(UnitDirection::new(0.0, 0.0, 0.0).is_err());
        assert!(UnitDirection::new(0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn normalized_handles_any_scale() {
        let d = UnitDirection::normalized(3.0, 4.0, 0.0).unwrap();
        assert_relative_eq!(d.x(), 0.6, epsilon = 1e-15);
        assert_relative_eq!(d.y(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn axis_angle_is_antipodally_symmetric() {
        let a = UnitDirection::new(0.0, 0.0, 1.0).unwrap();
        let b = UnitDirection::new(0.0, 0.0, -1.0).unwrap();
        assert_relative_eq!(a.axis_angle_to(&b), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        // ∫_{-1}^{1} x^k dx
        for k in 0..=15usize {
            let num: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert_relative_eq!(num, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_weights_sum_to_sphere_area() {
        let q = quadrature_grid(16, 16);
        let total: f64 = q.weights.iter().sum();
        assert_relative_eq!(total, 4.0 * std::f64::consts::PI, epsilon = 1e-10);
    }

    #[test]
    fn dense_design_has_enough_points() {
        assert!(dense_design().len() >= 4000);
    }

    #[test]
    fn fibonacci_points_are_unit() {
        for d in fibonacci_sphere(500) {
            let n2 = d.x() * d.x() + d.y() * d.y() + d.z() * d.z();
            assert!((n2 - 1.0).abs() < 1e-12);
        }
    }
}
