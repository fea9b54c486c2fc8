//! P1 (linear) triangle element matrices.

use crate::error::{Error, Result};

pub type ElementMatrix = [[f64; 3]; 3];

fn area_and_gradients(tri: &[[f64; 2]; 3]) -> Option<(f64, [[f64; 2]; 3])> {
    let [p0, p1, p2] = *tri;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let area = 0.5 * det.abs();
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    // ∇φ_a = (y_b − y_c, x_c − x_b) / det for the cyclic order (a, b, c)
    let mut grads = [[0.0; 2]; 3];
    for a in 0..3 {
        let b = tri[(a + 1) % 3];
        let c = tri[(a + 2) % 3];
        grads[a] = [(b[1] - c[1]) / det, (c[0] - b[0]) / det];
    }
    Some((area, grads))
}

/// `K[a][b] = area · ∇φ_a · ∇φ_b`; exactly symmetric.
pub fn element_stiffness(tri: &[[f64; 2]; 3]) -> Result<ElementMatrix> {
    let (area, g) = area_and_gradients(tri).ok_or(Error::DegenerateTriangle { index: 0 })?;
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let v = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            k[a][b] = v;
            k[b][a] = v;
        }
    }
    Ok(k)
}

/// Consistent mass matrix `(area / 12) · [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(tri: &[[f64; 2]; 3]) -> Result<ElementMatrix> {
    let (area, _) = area_and_gradients(tri).ok_or(Error::DegenerateTriangle { index: 0 })?;
    let off = area / 12.0;
    let on = 2.0 * off;
    Ok([[on, off, off], [off, on, off], [off, off, on]])
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn stiffness_of_unit_right_triangle() {
        // hat gradients (−1,−1), (1,0), (0,1) integrated over area 1/2
        let want = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        assert_eq!(element_stiffness(&UNIT).unwrap(), want);
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_scale_invariant() {
        let tri = [[0.3, -0.2], [1.7, 0.4], [0.1, 2.2]];
        let k = element_stiffness(&tri).unwrap();
        for row in &k {
            assert!(row.iter().sum::<f64>().abs() < 1e-14);
        }
        let scaled = tri.map(|p| [2.0 * p[0], 2.0 * p[1]]);
        let k2 = element_stiffness(&scaled).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((k[a][b] - k2[a][b]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mass_of_unit_right_triangle() {
        let m = element_mass(&UNIT).unwrap();
        let want = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]].map(|r| r.map(|v| v / 24.0));
        for a in 0..3 {
            for b in 0..3 {
                assert!((m[a][b] - want[a][b]).abs() < 1e-16);
            }
        }
        let total: f64 = m.iter().flatten().sum();
        assert!((total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_triangle_fails() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(element_mass(&line).is_err());
        assert!(element_stiffness(&line).is_err());
    }
}
