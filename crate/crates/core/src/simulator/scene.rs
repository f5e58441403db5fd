use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Aabb;

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub v: [Vec3; 3],
}

impl Triangle {
    pub fn new(a: Vec3, b: Vec3, c: Vec3) -> Self {
        Self { v: [a, b, c] }
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.v[1] - self.v[0]).cross(&(self.v[2] - self.v[0])).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        (self.v[0] + self.v[1] + self.v[2]) / 3.0
    }

    pub fn normal(&self) -> Vec3 {
        (self.v[1] - self.v[0]).cross(&(self.v[2] - self.v[0])).normalize()
    }

    /// Möller–Trumbore; returns the ray parameter of a two-sided hit.
    #[inline]
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let e1 = self.v[1] - self.v[0];
        let e2 = self.v[2] - self.v[0];
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.v[0];
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        Some(e2.dot(&q) * inv)
    }

    /// Distance from `p` to the closest point of the triangle.
    pub fn distance(&self, p: &Vec3) -> f64 {
        (closest_point(self, p) - p).norm()
    }
}

fn closest_point(t: &Triangle, p: &Vec3) -> Vec3 {
    // Ericson, Real-Time Collision Detection, 5.1.5.
    let (a, b, c) = (t.v[0], t.v[1], t.v[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub triangles: Vec<Triangle>,
}

impl Scene {
    pub fn new(name: impl Into<String>, triangles: Vec<Triangle>) -> Result<Self> {
        if let Some(i) = triangles.iter().position(|t| t.area() <= 1e-12) {
            return Err(Error::Config(format!("triangle {i} has zero area")));
        }
        Ok(Self {
            name: name.into(),
            triangles,
        })
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for t in &self.triangles {
            for v in &t.v {
                for k in 0..3 {
                    min[k] = min[k].min(v[k]);
                    max[k] = max[k].max(v[k]);
                }
            }
        }
        Aabb::new(min, max)
    }

    /// Smallest distance from `p` to any triangle.
    pub fn distance_to_surface(&self, p: &Vec3) -> f64 {
        self.triangles
            .iter()
            .map(|t| t.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "box_room" => Ok(box_room()),
            "courtyard" => Ok(courtyard()),
            "quad" => Ok(quad()),
            other => Err(Error::Config(format!(
                "unknown scene `{other}` (expected box_room, courtyard or quad)"
            ))),
        }
    }
}

/// Two triangles spanning the parallelogram `o, o+a, o+a+b, o+b`.
fn quad_tris(o: Vec3, a: Vec3, b: Vec3) -> [Triangle; 2] {
    [
        Triangle::new(o, o + a, o + a + b),
        Triangle::new(o, o + a + b, o + b),
    ]
}

/// Axis-aligned box faces; `top`/`bottom` toggle the horizontal faces.
fn box_faces(min: Vec3, max: Vec3, bottom: bool, top: bool) -> Vec<Triangle> {
    let d = max - min;
    let (ex, ey, ez) = (
        Vec3::new(d.x, 0.0, 0.0),
        Vec3::new(0.0, d.y, 0.0),
        Vec3::new(0.0, 0.0, d.z),
    );
    let mut tris = Vec::new();
    tris.extend(quad_tris(min, ey, ez));
    tris.extend(quad_tris(min + ex, ey, ez));
    tris.extend(quad_tris(min, ex, ez));
    tris.extend(quad_tris(min + ey, ex, ez));
    if bottom {
        tris.extend(quad_tris(min, ex, ey));
    }
    if top {
        tris.extend(quad_tris(min + ez, ex, ey));
    }
    tris
}

/// Closed 10 x 10 x 3 m room, floor at z = 0.
pub fn box_room() -> Scene {
    let tris = box_faces(Vec3::new(-5.0, -5.0, 0.0), Vec3::new(5.0, 5.0, 3.0), true, true);
    Scene::new("box_room", tris).unwrap()
}

/// 20 x 20 m walled yard, 4 m walls, open sky, four interior pillars.
pub fn courtyard() -> Scene {
    let mut tris = box_faces(
        Vec3::new(-10.0, -10.0, 0.0),
        Vec3::new(10.0, 10.0, 4.0),
        true,
        false,
    );
    for (cx, cy) in [(-4.0, -4.0), (4.0, -4.0), (4.0, 4.0), (-4.0, 4.0)] {
        tris.extend(box_faces(
            Vec3::new(cx - 0.4, cy - 0.4, 0.0),
            Vec3::new(cx + 0.4, cy + 0.4, 4.0),
            false,
            true,
        ));
    }
    Scene::new("courtyard", tris).unwrap()
}

/// 50 x 50 m open quad with 3 m perimeter walls.
pub fn quad() -> Scene {
    let tris = box_faces(
        Vec3::new(-25.0, -25.0, 0.0),
        Vec3::new(25.0, 25.0, 3.0),
        true,
        false,
    );
    Scene::new("quad", tris).unwrap()
}
