//! Taped rigid transform of sensor-frame points by a twist.

use nalgebra::{Matrix3, Vector3};

use crate::diff::{CustomOp, Tensor};
use crate::geometry::{so3_exp, so3_exp_jacobians};

/// Inputs: twist `1 x 6` as `(omega, v)` and local points `n x 3`.
/// Output: `R(omega) p + v` per row.
#[derive(Clone, Copy, Debug, Default)]
pub struct RigidTransform;

fn twist_parts(t: &Tensor) -> (Vector3<f64>, Vector3<f64>) {
    assert_eq!(t.shape(), (1, 6), "twist must be 1 x 6");
    let d = &t.data;
    (Vector3::new(d[0], d[1], d[2]), Vector3::new(d[3], d[4], d[5]))
}

fn row3(t: &Tensor, i: usize) -> Vector3<f64> {
    let r = t.row_slice(i);
    Vector3::new(r[0], r[1], r[2])
}

impl CustomOp for RigidTransform {
    fn name(&self) -> &'static str {
        "rigid_transform"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let (w, v) = twist_parts(inputs[0]);
        let pts = inputs[1];
        assert_eq!(pts.cols, 3, "points must be n x 3");
        let r = so3_exp(&w);
        let mut out = Tensor::zeros(pts.rows, 3);
        for i in 0..pts.rows {
            let q = r * row3(pts, i) + v;
            out.row_slice_mut(i).copy_from_slice(q.as_slice());
        }
        out
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (w, _) = twist_parts(inputs[0]);
        let pts = inputs[1];
        let r = so3_exp(&w);
        let gt = needs[0].then(|| {
            // dL/dR = sum_i g_i p_i^T, then contract with dR/dw_k
            let mut dl_dr = Matrix3::zeros();
            let mut gv = Vector3::zeros();
            for i in 0..pts.rows {
                let g = row3(grad, i);
                dl_dr += g * row3(pts, i).transpose();
                gv += g;
            }
            let jac = so3_exp_jacobians(&w);
            let mut out = Tensor::zeros(1, 6);
            for k in 0..3 {
                out.data[k] = jac[k].component_mul(&dl_dr).sum();
                out.data[3 + k] = gv[k];
            }
            out
        });
        let gp = needs[1].then(|| {
            let rt = r.transpose();
            let mut out = Tensor::zeros(pts.rows, 3);
            for i in 0..pts.rows {
                let q = rt * row3(grad, i);
                out.row_slice_mut(i).copy_from_slice(q.as_slice());
            }
            out
        });
        vec![gt, gp]
    }
}
