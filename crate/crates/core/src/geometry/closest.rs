use super::Vec3;

/// Which part of a triangle a closest point landed on. Corner indices are
/// positions within the face (0, 1, 2), not mesh vertex ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceFeature {
    Vertex(u8),
    Edge(u8, u8),
    Interior,
}

/// Closest point on a mesh. `bary = (u, v)` weights face corners 0 and 1;
/// corner 2 carries `1 - u - v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub face: usize,
    pub bary: (f64, f64),
    pub point: Vec3,
    pub distance: f64,
    pub feature: SurfaceFeature,
}

impl ClosestPoint {
    pub fn weights(&self) -> [f64; 3] {
        let (u, v) = self.bary;
        [u, v, 1.0 - u - v]
    }
}

/// Closest point on triangle `(a, b, c)` to `p` by Voronoi-region
/// classification. Returns the corner weights `(u, v)` for `a` and `b` and the
/// feature the point lies on; vertex and edge regions yield exact zeros.
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> ((f64, f64), SurfaceFeature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ((1.0, 0.0), SurfaceFeature::Vertex(0));
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ((0.0, 1.0), SurfaceFeature::Vertex(1));
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return ((1.0 - t, t), SurfaceFeature::Edge(0, 1));
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ((0.0, 0.0), SurfaceFeature::Vertex(2));
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return ((1.0 - t, 0.0), SurfaceFeature::Edge(0, 2));
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ((0.0, 1.0 - t), SurfaceFeature::Edge(1, 2));
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ((1.0 - v - w, v), SurfaceFeature::Interior)
}

#[inline]
pub(crate) fn bary_point(a: &Vec3, b: &Vec3, c: &Vec3, u: f64, v: f64) -> Vec3 {
    a * u + b * v + c * (1.0 - u - v)
}
