//! Meshing of a trained field: virtual-LiDAR weight bucketing followed by
//! marching cubes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tables::TRIANGLES;
use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::field::{sample_ray, Field, RayBatch, SampleStrategy};
use crate::geometry::{Aabb, Point, Pose};
use crate::simulator::LidarModel;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Validation(format!("triangle {i} indexes a missing vertex")));
            }
        }
        Ok(())
    }
}

/// Scalar values on a regular lattice, index `(x * ny + y) * nz + z`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    /// Center of voxel `(0, 0, 0)`.
    pub origin: Point,
    pub voxel: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl VoxelGrid {
    /// Zero grid whose voxels cover `bounds`.
    pub fn covering(bounds: &Aabb, voxel: f64) -> Self {
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((ext[a] / voxel).ceil() as usize).max(1));
        let origin = Point::new(bounds.min[0], bounds.min[1], bounds.min[2]) + Point::repeat(voxel / 2.0);
        Self {
            origin,
            voxel,
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn center(&self, x: usize, y: usize, z: usize) -> Point {
        self.origin + Point::new(x as f64, y as f64, z as f64) * self.voxel
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel + 0.5).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            c[a] = f as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub voxel_size: f64,
    /// Level in the max-normalized weight grid.
    pub iso: f64,
    /// Spacing of the virtual-LiDAR samples; defaults to half a voxel.
    pub sample_spacing: Option<f64>,
    /// A grid whose largest weight stays below this is treated as empty.
    pub min_peak_weight: f64,
    pub rays_per_chunk: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            iso: 0.5,
            sample_spacing: None,
            min_peak_weight: 1e-3,
            rays_per_chunk: 256,
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !(0.0..=1.0).contains(&self.iso) {
            return Err(Error::Config("mesh: need voxel_size > 0 and iso in [0, 1]".into()));
        }
        if self.sample_spacing.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("mesh: sample_spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Per-voxel maximum of the rendering weights seen from a virtual LiDAR
/// at each of `poses`, before normalization.
pub fn weight_grid(field: &Field, store: &ParamStore, poses: &[Pose], model: &LidarModel, cfg: &MeshConfig) -> VoxelGrid {
    let mut grid = VoxelGrid::covering(&field.bounds(), cfg.voxel_size);
    let spacing = cfg.sample_spacing.unwrap_or(cfg.voxel_size / 2.0);
    let t_near = model.min_range;
    let t_far = field.t_far().min(model.max_range);
    let n = (((t_far - t_near) / spacing).ceil() as usize).max(2);
    let s = sample_ray(t_near, t_far, None, SampleStrategy::Uniform, n, 0.0, None);
    let dirs_local: Vec<Point> = (0..model.elevation_count())
        .flat_map(|e| (0..model.azimuth_count).map(move |a| (a, e)))
        .map(|(a, e)| model.direction(a, e))
        .collect();
    for pose in poses {
        for chunk in dirs_local.chunks(cfg.rays_per_chunk.max(1)) {
            let rays = chunk.len();
            let mut t = Tensor::zeros(rays, n);
            let mut delta = Tensor::zeros(rays, n);
            for r in 0..rays {
                t.row_slice_mut(r).copy_from_slice(&s.t);
                delta.row_slice_mut(r).copy_from_slice(&s.delta);
            }
            let batch = RayBatch {
                origins: vec![pose.translation; rays],
                directions: chunk.iter().map(|d| pose.rotate(d)).collect(),
                depth: vec![None; rays],
                sky: vec![false; rays],
                t,
                delta,
            };
            let (w, _) = field.render_values(store, &batch);
            for r in 0..rays {
                let (o, d) = (batch.origins[r], batch.directions[r]);
                for (j, &tj) in s.t.iter().enumerate() {
                    if let Some(v) = grid.locate(&(o + d * tj)) {
                        let wv = w.at(r, j);
                        if wv > grid.values[v] {
                            grid.values[v] = wv;
                        }
                    }
                }
            }
        }
    }
    grid
}

/// Cube corners in table order, as lattice offsets.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the twelve cube edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Isosurface of `grid` at `iso`, with vertices shared between cubes.
/// Corners strictly below `iso` count as outside.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> Mesh {
    let [nx, ny, nz] = grid.dims;
    let mut mesh = Mesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    for x in 0..nx - 1 {
        for y in 0..ny - 1 {
            for z in 0..nz - 1 {
                let corner = CORNERS.map(|[dx, dy, dz]| (x + dx, y + dy, z + dz));
                let vals = corner.map(|(a, b, c)| grid.values[grid.index(a, b, c)]);
                let mut case = 0usize;
                for (i, &v) in vals.iter().enumerate() {
                    if v < iso {
                        case |= 1 << i;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut vertex_of_edge = [usize::MAX; 12];
                let row = &TRIANGLES[case];
                for &e in row.iter().take_while(|&&e| e >= 0) {
                    let e = e as usize;
                    if vertex_of_edge[e] != usize::MAX {
                        continue;
                    }
                    let [a, b] = EDGES[e];
                    let (ia, ib) = (corner[a], corner[b]);
                    let (ka, kb) = (grid.index(ia.0, ia.1, ia.2), grid.index(ib.0, ib.1, ib.2));
                    let key = (ka.min(kb), ka.max(kb));
                    let id = *edge_vertex.entry(key).or_insert_with(|| {
                        let (pa, pb) = (grid.center(ia.0, ia.1, ia.2), grid.center(ib.0, ib.1, ib.2));
                        let (va, vb) = (vals[a], vals[b]);
                        let s = if (vb - va).abs() > 1e-15 { ((iso - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                        mesh.vertices.push(pa + (pb - pa) * s);
                        mesh.vertices.len() - 1
                    });
                    vertex_of_edge[e] = id;
                }
                for tri in row.chunks(3).take_while(|c| c[0] >= 0) {
                    let t = [0, 1, 2].map(|k| vertex_of_edge[tri[k] as usize]);
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && mesh.triangle_area(&t) > 1e-12 {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    mesh
}

/// Mesh of the learned geometry seen from virtual LiDARs at `poses`: the
/// max-bucketed weight grid is normalized by its peak and contoured at
/// `cfg.iso`. A field that carries no weight anywhere yields an empty mesh.
pub fn extract_mesh(field: &Field, store: &ParamStore, poses: &[Pose], model: &LidarModel, cfg: &MeshConfig) -> Result<Mesh> {
    cfg.validate()?;
    if poses.is_empty() {
        return Err(Error::Contract("extract_mesh needs at least one pose".into()));
    }
    let mut grid = weight_grid(field, store, poses, model, cfg);
    let peak = grid.max_value();
    if !(peak >= cfg.min_peak_weight) {
        return Ok(Mesh::default());
    }
    for v in &mut grid.values {
        *v /= peak;
    }
    Ok(marching_cubes(&grid, cfg.iso))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use nalgebra::Vector3;

    fn small_field(bias: f64) -> (Field, ParamStore) {
        let cfg = FieldConfig {
            levels: 2,
            base_resolution: 4,
            table_size: 1 << 10,
            mlp_width: 8,
            scene_bounds: Some(Aabb::new([-3.0; 3], [3.0; 3])),
            weight_formula: crate::field::WeightFormula::Alpha,
            ..FieldConfig::default()
        };
        let mut store = ParamStore::new();
        let field = Field::init(&cfg, &mut store, 0).unwrap();
        let b = store.id("mlp.b2").unwrap();
        store.get_mut(b).value.data[0] = bias;
        (field, store)
    }

    fn tiny_lidar() -> LidarModel {
        LidarModel::uniform(24, 4, -20.0, 20.0, 0.2, 8.0, 0.0, 5.0)
    }

    #[test]
    fn empty_field_gives_empty_mesh() {
        let (field, store) = small_field(-30.0);
        let cfg = MeshConfig { voxel_size: 0.25, ..MeshConfig::default() };
        let m = extract_mesh(&field, &store, &[Pose::identity()], &tiny_lidar(), &cfg).unwrap();
        assert!(m.triangles.len() < 10);
        assert!(extract_mesh(&field, &store, &[], &tiny_lidar(), &cfg).is_err());
    }

    #[test]
    fn repeated_poses_leave_mesh_unchanged() {
        let (field, store) = small_field(0.5);
        let cfg = MeshConfig { voxel_size: 0.25, ..MeshConfig::default() };
        let poses = [Pose::identity(), Pose::from_yaw(0.7, Vector3::new(0.5, -0.3, 0.2))];
        let once = extract_mesh(&field, &store, &poses, &tiny_lidar(), &cfg).unwrap();
        let twice: Vec<Pose> = poses.iter().chain(poses.iter()).copied().collect();
        let again = extract_mesh(&field, &store, &twice, &tiny_lidar(), &cfg).unwrap();
        assert!(!once.is_empty());
        assert_eq!(once, again);
    }

    fn sphere_grid(r: f64) -> VoxelGrid {
        let b = Aabb::new([-2.0; 3], [2.0; 3]);
        let mut g = VoxelGrid::covering(&b, 0.1);
        for x in 0..g.dims[0] {
            for y in 0..g.dims[1] {
                for z in 0..g.dims[2] {
                    let i = g.index(x, y, z);
                    g.values[i] = r - g.center(x, y, z).norm();
                }
            }
        }
        g
    }

    #[test]
    fn sphere_vertices_lie_on_the_sphere() {
        let m = marching_cubes(&sphere_grid(1.2), 0.0);
        assert!(m.triangles.len() > 500);
        m.validate().unwrap();
        for v in &m.vertices {
            assert!((v.norm() - 1.2).abs() < 0.02, "{}", v.norm());
        }
        let area = m.area();
        let exact = 4.0 * std::f64::consts::PI * 1.2 * 1.2;
        assert!((area - exact).abs() / exact < 0.03, "{area} vs {exact}");
    }

    #[test]
    fn closed_surface_shares_every_edge_twice() {
        let m = marching_cubes(&sphere_grid(1.0), 0.0);
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(count.values().all(|&c| c == 2));
    }

    #[test]
    fn constant_grid_has_no_surface() {
        let mut g = sphere_grid(1.0);
        g.values.iter_mut().for_each(|v| *v = 0.3);
        assert!(marching_cubes(&g, 0.5).is_empty());
        assert!(marching_cubes(&g, 0.1).is_empty());
    }

    #[test]
    fn locate_matches_center() {
        let g = VoxelGrid::covering(&Aabb::new([-1.0, 0.0, 2.0], [1.0, 1.0, 3.0]), 0.25);
        assert_eq!(g.dims, [8, 4, 4]);
        let i = g.index(3, 1, 2);
        assert_eq!(g.locate(&g.center(3, 1, 2)), Some(i));
        assert_eq!(g.locate(&(g.center(3, 1, 2) + Point::repeat(0.12))), Some(i));
        assert_eq!(g.locate(&Point::new(5.0, 0.5, 2.5)), None);
    }
}
