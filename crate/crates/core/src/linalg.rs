//! Small dense vector helpers.

use crate::mesh::Vec3;

#[inline]
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn normalize3(a: &Vec3) -> Vec3 {
    scale3(a, 1.0 / norm3(a))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `x ← x − ⟨x, n⟩ n` for a unit vector `n`.
#[inline]
pub fn project_out(x: &mut [f64], n: &[f64]) {
    let c = dot(x, n);
    for (xi, ni) in x.iter_mut().zip(n) {
        *xi -= c * ni;
    }
}

pub fn normalize(x: &mut [f64]) -> f64 {
    let r = norm2(x).sqrt();
    for xi in x.iter_mut() {
        *xi /= r;
    }
    r
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending, with unit eigenvectors.
pub fn sym2_eigen(m: &[[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (lo, hi) = (mean - r, mean + r);
    // rotation angle diagonalizing [[a,b],[b,d]]
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = theta.sin_cos();
    // (c, s) belongs to `hi`
    ([lo, hi], [[-s, c], [c, s]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym2_eigen_reconstructs() {
        for m in [[[2.0, 0.3], [0.3, -1.0]], [[1.0, 0.0], [0.0, 1.0]], [[0.0, 2.0], [2.0, 0.0]], [[-3.0, 0.0], [0.0, 5.0]]] {
            let (vals, vecs) = sym2_eigen(&m);
            assert!(vals[0] <= vals[1]);
            for k in 0..2 {
                let v = vecs[k];
                let mv = [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
                assert!((mv[0] - vals[k] * v[0]).abs() < 1e-12 && (mv[1] - vals[k] * v[1]).abs() < 1e-12);
                assert!(((v[0] * v[0] + v[1] * v[1]) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_removes_component() {
        let n = [0.6, 0.8, 0.0];
        let mut x = [1.0, 2.0, 3.0];
        project_out(&mut x, &n);
        assert!(dot(&x, &n).abs() < 1e-15);
        assert_eq!(cross(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), [0.0, 0.0, 1.0]);
    }
}
