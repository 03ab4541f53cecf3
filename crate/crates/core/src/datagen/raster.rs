use super::shapes::Polygon;
use crate::error::{invalid, Result};
use crate::fidelity::BinaryMask;

/// Even-odd test of `(x, y)` against a closed polygon.
pub fn point_in_polygon(poly: &Polygon, x: f64, y: f64) -> bool {
    let v = &poly.vertices;
    let mut inside = false;
    let mut j = v.len() - 1;
    for i in 0..v.len() {
        let (xi, yi) = v[i];
        let (xj, yj) = v[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixel `(i, j)` is foreground iff its centre `(j + 0.5, i + 0.5)` lies
/// inside the polygon under the even-odd rule. `dims` is `(height, width)`.
pub fn rasterize_polygon(poly: &Polygon, dims: (usize, usize)) -> Result<BinaryMask> {
    if poly.vertices.len() < 3 {
        return invalid(format!(
            "polygon needs at least 3 vertices, got {}",
            poly.vertices.len()
        ));
    }
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return invalid("raster dimensions must be positive");
    }
    let v = &poly.vertices;
    let mut mask = BinaryMask::zeros(h, w);
    let mut crossings = Vec::with_capacity(v.len());
    for i in 0..h {
        let y = i as f64 + 0.5;
        crossings.clear();
        let mut prev = v.len() - 1;
        for cur in 0..v.len() {
            let (xi, yi) = v[cur];
            let (xj, yj) = v[prev];
            if (yi > y) != (yj > y) {
                crossings.push((xj - xi) * (y - yi) / (yj - yi) + xi);
            }
            prev = cur;
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        for j in 0..w {
            let x = j as f64 + 0.5;
            // Crossings strictly to the right of the pixel centre.
            let right = crossings.len() - crossings.partition_point(|&c| c <= x);
            if right % 2 == 1 {
                mask.set(i, j, true);
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_square() {
        let poly = Polygon::new(vec![(2.0, 2.0), (6.0, 2.0), (6.0, 6.0), (2.0, 6.0)]);
        let m = rasterize_polygon(&poly, (8, 8)).unwrap();
        assert_eq!(m.count(), 16);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(m.get(i, j), (2..6).contains(&i) && (2..6).contains(&j));
            }
        }
    }

    #[test]
    fn covering_polygon_fills_frame() {
        let poly = Polygon::new(vec![(-1.0, -1.0), (9.0, -1.0), (9.0, 7.0), (-1.0, 7.0)]);
        assert_eq!(rasterize_polygon(&poly, (6, 8)).unwrap().count(), 48);
    }

    #[test]
    fn too_few_vertices() {
        let poly = Polygon::new(vec![(0.0, 0.0), (3.0, 3.0)]);
        assert!(rasterize_polygon(&poly, (4, 4)).is_err());
    }

    #[test]
    fn self_intersecting_uses_even_odd() {
        // Pentagram: the inner pentagon has winding number 2, so it is empty.
        let pts: Vec<(f64, f64)> = (0..5)
            .map(|k| {
                let t = std::f64::consts::TAU * (2 * k) as f64 / 5.0 - std::f64::consts::FRAC_PI_2;
                (16.0 + 14.0 * t.cos(), 16.0 + 14.0 * t.sin())
            })
            .collect();
        let poly = Polygon::new(pts);
        let m = rasterize_polygon(&poly, (32, 32)).unwrap();
        assert!(!m.get(16, 16));
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(m.get(i, j), point_in_polygon(&poly, j as f64 + 0.5, i as f64 + 0.5));
            }
        }
    }
}
