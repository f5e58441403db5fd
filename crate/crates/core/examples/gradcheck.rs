//! Checks taped gradients of a rendered depth through a small hash-grid
//! field and a pose twist against central differences.

use std::sync::Arc;

use ilslam::diff::{finite_diff_check, CustomOp, ParamStore, Tape, Tensor};
use ilslam::field::{render_sigma, sample_ray, Field, FieldConfig, RigidTransform, SampleStrategy};
use ilslam::geometry::{Aabb, Point};

fn main() -> ilslam::Result<()> {
    let cfg = FieldConfig {
        levels: 2,
        base_resolution: 4,
        table_size: 1 << 8,
        mlp_width: 8,
        scene_bounds: Some(Aabb::new([-3.0; 3], [3.0; 3])),
        ..FieldConfig::default()
    };
    let mut store = ParamStore::new();
    let field = Field::init(&cfg, &mut store, 0)?;
    let twist = store.insert("twist", Tensor::row(vec![0.1, 0.0, -0.2, 0.3, 0.1, 0.0]));

    let dirs = [Point::new(1.0, 0.2, 0.1), Point::new(-0.3, 1.0, -0.2)];
    let n = 12;
    let mut local = Tensor::zeros(dirs.len() * n, 3);
    let mut t = Tensor::zeros(dirs.len(), n);
    let mut delta = Tensor::zeros(dirs.len(), n);
    for (r, d) in dirs.iter().enumerate() {
        let s = sample_ray(0.2, 2.5, None, SampleStrategy::Uniform, n, 0.0, None);
        for j in 0..n {
            t.set(r, j, s.t[j]);
            delta.set(r, j, s.delta[j]);
            local.row_slice_mut(r * n + j).copy_from_slice((d.normalize() * s.t[j]).as_slice());
        }
    }

    let rigid: Arc<dyn CustomOp> = Arc::new(RigidTransform);
    let mut ids = field.param_ids();
    ids.push(twist);
    let report = finite_diff_check(&store, &ids, 1e-5, 0, |tape: &mut Tape| {
        let tw = tape.param(twist);
        let lv = tape.constant(local.clone());
        let pts = tape.custom(rigid.clone(), &[tw, lv]);
        let sigma = field.density(tape, pts, true);
        let out = render_sigma(tape, sigma, &t, &delta, cfg.weight_formula);
        tape.sum_all(out.depth)
    })?;
    println!(
        "{} coordinates checked, {} on kinks skipped, max relative error {:.2e}",
        report.checked,
        report.excluded.len(),
        report.max_rel_err
    );
    Ok(())
}
