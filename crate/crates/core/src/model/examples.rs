//! Built-in example models.

use super::{Coefficients, LyapunovSuite, ModelSpec, SegmentView};
use crate::error::{Error, Result};
use crate::matops::DenseMatrix;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Distributed-delay weight on `[-r0, 0]`, sampled on a uniform grid with
/// linear interpolation. Distinct from the coupling-plan function of the
/// same letter; this one multiplies the history inside the drift integral.
#[derive(Debug, Clone)]
pub struct DelayWeight {
    r0: f64,
    values: Vec<f64>,
}

impl DelayWeight {
    pub fn constant(r0: f64, value: f64) -> Result<Self> {
        Self::from_values(r0, vec![value, value])
    }

    pub fn from_values(r0: f64, values: Vec<f64>) -> Result<Self> {
        if !(r0 > 0.0) || values.len() < 2 {
            return Err(Error::InvalidArgument(
                "DelayWeight needs r0 > 0 and at least two sample values".into(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("DelayWeight values"));
        }
        Ok(Self { r0, values })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.values.len() - 1;
        let h = self.r0 / n as f64;
        let pos = ((theta + self.r0) / h).clamp(0.0, n as f64);
        let j = (pos.floor() as usize).min(n - 1);
        let frac = pos - j as f64;
        self.values[j] + frac * (self.values[j + 1] - self.values[j])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Coefficients of the first example: cubic self-damping plus a distributed
/// delay over the `x`-history and a discrete lookup of the `y`-history.
pub struct Example41Coeffs {
    pub eps: f64,
    pub weight: DelayWeight,
}

impl Coefficients for Example41Coeffs {
    fn z(&self, _x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = -self.eps * y[0] * y[0] * y[0];
    }

    fn z_dir(&self, _x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -3.0 * self.eps * y[0] * y[0] * u[1];
    }

    fn b(&self, seg: SegmentView<'_>, out: &mut [f64]) {
        // trapezoid quadrature of weight * xi_1 on the segment grid
        let n = seg.n_hist;
        let h = seg.r0 / n as f64;
        let mut acc = 0.0;
        for j in 0..=n {
            let theta = -seg.r0 + j as f64 * h;
            let v = self.weight.eval(theta) * seg.node(j)[0];
            acc += if j == 0 || j == n { 0.5 * v } else { v };
        }
        out[0] = acc * h + seg.node(0)[1];
    }

    fn b_dir(&self, _seg: SegmentView<'_>, dir: SegmentView<'_>, out: &mut [f64]) {
        // b is linear in the segment
        self.b(dir, out);
    }
}

/// First built-in model: `Z(x, y) = -eps * y^3`,
/// `b(xi) = integral of weight * xi_1 + xi_2(-r0)`,
/// with `A = -1`, `M = -1`, `sigma = 1` and `W(x, y) = 1 + x^2 + y^2`.
pub fn make_example_4_1(
    eps: f64,
    weight: DelayWeight,
    r0: f64,
) -> Result<(ModelSpec, LyapunovSuite)> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidModel(format!("eps must be >= 0, got {eps}")));
    }
    let max_weight = weight.max_abs();
    let coeffs = Arc::new(Example41Coeffs { eps, weight });
    let model = ModelSpec::new(
        1,
        1,
        r0,
        DenseMatrix::from_rows(&[vec![-1.0]])?,
        DenseMatrix::from_rows(&[vec![-1.0]])?,
        DenseMatrix::from_rows(&[vec![1.0]])?,
        coeffs,
    )?;

    let w: super::PointMap = Arc::new(|z: &[f64]| 1.0 + z[0] * z[0] + z[1] * z[1]);
    let w_grad2: super::PointVecMap = Arc::new(|z: &[f64]| vec![2.0 * z[1]]);
    let l_w: super::PointMap = Arc::new(move |z: &[f64]| {
        let (x, y) = (z[0], z[1]);
        1.0 - 2.0 * x * (x + y) - 2.0 * eps * y.powi(4)
    });

    let mut constants = BTreeMap::new();
    constants.insert("lambda_a1".into(), 3.0);
    constants.insert("lambda_a2".into(), 2.0 * (r0 * max_weight + 1.0));
    constants.insert("lambda_a3".into(), (4.0 * eps).max(1.0));
    constants.insert("lambda_a3p".into(), (5.0 * eps).max(1.0));
    constants.insert("lambda_a4".into(), r0 * max_weight + 1.0);
    constants.insert("lambda_a4p".into(), r0 * max_weight + 1.0);
    constants.insert("l".into(), 1.0);

    let suite = LyapunovSuite {
        w,
        w_grad2,
        l_w,
        u: None,
        u_increasing: Some(Arc::new(|r: f64| r * r)),
        w_tilde_log: None,
        l_w_tilde_ratio: None,
        l_script_w: None,
        drift_bound_rhs: None,
        constants,
    };
    Ok((model, suite))
}

struct Example42Coeffs;

impl Coefficients for Example42Coeffs {
    fn z(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = 0.5 * x[0] - y[0] - y[0] * y[0] * y[0];
    }

    fn z_dir(&self, _x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = 0.5 * u[0] - (1.0 + 3.0 * y[0] * y[0]) * u[1];
    }

    fn b(&self, seg: SegmentView<'_>, out: &mut [f64]) {
        // discrete delay: single lookup at theta = -r0 (node 0)
        let yd = seg.node(0)[1];
        out[0] = 0.25 * yd * yd * yd;
    }

    fn b_dir(&self, seg: SegmentView<'_>, dir: SegmentView<'_>, out: &mut [f64]) {
        let yd = seg.node(0)[1];
        out[0] = 0.75 * yd * yd * dir.node(0)[1];
    }
}

/// Exponent data of the second example: `w = (x^2 + y^4)/4 + xy/10`, whose
/// infimum is exactly `-1e-4` (attained at `y^2 = 1/50`, `x = -y/5`).
fn example_4_2_w_small(z: &[f64]) -> f64 {
    let (x, y) = (z[0], z[1]);
    0.25 * (x * x + y.powi(4)) + 0.1 * x * y
}

const EXAMPLE_4_2_INF_W: f64 = -1e-4;

/// Second built-in model: cubic drift with a cubic discrete delay,
/// `Z(x, y) = x/2 - y - y^3`, `b~(x', y') = y'^3 / 4`, `A = -1`, `M = -1`,
/// `sigma = 1`, `W(x, y) = 1 + x^2 + y^4` and `U(x, y) = y^6`.
pub fn make_example_4_2(r0: f64) -> Result<(ModelSpec, LyapunovSuite)> {
    let model = ModelSpec::new(
        1,
        1,
        r0,
        DenseMatrix::from_rows(&[vec![-1.0]])?,
        DenseMatrix::from_rows(&[vec![-1.0]])?,
        DenseMatrix::from_rows(&[vec![1.0]])?,
        Arc::new(Example42Coeffs),
    )?
    .with_b_tilde(Arc::new(|z: &[f64]| vec![0.25 * z[1] * z[1] * z[1]]));

    let w: super::PointMap = Arc::new(|z: &[f64]| 1.0 + z[0] * z[0] + z[1].powi(4));
    let w_grad2: super::PointVecMap = Arc::new(|z: &[f64]| vec![4.0 * z[1].powi(3)]);
    let l_w: super::PointMap = Arc::new(|z: &[f64]| {
        let (x, y) = (z[0], z[1]);
        -2.0 * x * (x + y) + 4.0 * y.powi(3) * (0.5 * x - y - y.powi(3)) + 6.0 * y * y
    });
    // Drift part of the two-point generator expression for W; the
    // domination constants below are calibrated to exactly this form.
    let l_script_w: super::TwoPointMap = Arc::new(|z: &[f64], zp: &[f64]| {
        let (x, y) = (z[0], z[1]);
        let yp = zp[1];
        -2.0 * x * (x + y) + 4.0 * y.powi(3) * (0.5 * x - y - y.powi(3) + 0.25 * yp.powi(3))
    });
    let drift_bound_rhs: super::TwoPointMap = Arc::new(|z: &[f64], zp: &[f64]| {
        let y = z[1];
        let yp = zp[1];
        y * y - 4.0 * y.powi(4) - 2.5 * y.powi(6) + 0.5 * yp.powi(6)
    });
    let w_tilde_log: super::PointMap =
        Arc::new(|z: &[f64]| example_4_2_w_small(z) - EXAMPLE_4_2_INF_W);
    // ratio (generator applied to W~) / W~ expanded through log W~:
    // drift . grad(w) + (1/2) d2w/dy2 + (1/2) |dw/dy|^2
    let l_w_tilde_ratio: super::TwoPointMap = Arc::new(|z: &[f64], zp: &[f64]| {
        let (x, y) = (z[0], z[1]);
        let yp = zp[1];
        let grad_x = 0.5 * x + 0.1 * y;
        let grad_y = y.powi(3) + 0.1 * x;
        let drift_y = 0.5 * x - y - y.powi(3) + 0.25 * yp.powi(3);
        -(x + y) * grad_x + drift_y * grad_y + 1.5 * y * y + 0.5 * grad_y * grad_y
    });

    let eps_param = 0.1;
    let k0 = 0.5 * (0.35_f64.powi(2) / eps_param + 1.4).powi(2);
    let lambda1 = 0.2325 - eps_param;
    let mut constants = BTreeMap::new();
    constants.insert("lambda_a1".into(), 3.0);
    constants.insert("alpha".into(), 1.0);
    constants.insert("beta".into(), 2.5);
    constants.insert("gamma".into(), 0.5);
    constants.insert("nu".into(), 40.0);
    constants.insert("eps_param".into(), eps_param);
    constants.insert("lambda1".into(), lambda1);
    constants.insert("lambda2".into(), 0.0);
    constants.insert("lambda3".into(), 0.175);
    constants.insert("lambda4".into(), 0.1375);
    constants.insert("k_const".into(), k0 + lambda1);
    constants.insert("l".into(), 0.5);

    let suite = LyapunovSuite {
        w,
        w_grad2,
        l_w,
        u: Some(Arc::new(|z: &[f64]| z[1].powi(6))),
        u_increasing: Some(Arc::new(|r: f64| r * r)),
        w_tilde_log: Some(w_tilde_log),
        l_w_tilde_ratio: Some(l_w_tilde_ratio),
        l_script_w: Some(l_script_w),
        drift_bound_rhs: Some(drift_bound_rhs),
        constants,
    };
    Ok((model, suite))
}

/// Linear drift `Z(x, y) = Zx x + Zy y` with no history term; covers the
/// fully non-degenerate benchmark models.
pub struct LinearCoeffs {
    pub zx: DenseMatrix,
    pub zy: DenseMatrix,
}

impl Coefficients for LinearCoeffs {
    fn z(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xv) in x.iter().enumerate() {
                acc += self.zx.get(k, j) * xv;
            }
            for (j, yv) in y.iter().enumerate() {
                acc += self.zy.get(k, j) * yv;
            }
            *o = acc;
        }
    }

    fn z_dir(&self, x: &[f64], _y: &[f64], u: &[f64], out: &mut [f64]) {
        let m = x.len();
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.zx.get(k, j) * u[j];
            }
            for j in 0..self.zy.cols() {
                acc += self.zy.get(k, j) * u[m + j];
            }
            *o = acc;
        }
    }

    fn b(&self, _seg: SegmentView<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn b_dir(&self, _seg: SegmentView<'_>, _dir: SegmentView<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Scalar Ornstein-Uhlenbeck benchmark: `m = 0`, `dY = -Y dt + dB`.
///
/// Closed forms (`Y(0) = y0`): `E Y(t) = y0 e^{-t}`,
/// `E Y(t)^2 = y0^2 e^{-2t} + (1 - e^{-2t}) / 2`, and the semigroup
/// derivative of `f = Y(T)` along `h` is `e^{-T} h_2(0)`.
pub fn ou_model(r0: f64) -> Result<ModelSpec> {
    ModelSpec::new(
        0,
        1,
        r0,
        DenseMatrix::zeros(0, 0),
        DenseMatrix::zeros(0, 1),
        DenseMatrix::from_rows(&[vec![1.0]])?,
        Arc::new(LinearCoeffs {
            zx: DenseMatrix::zeros(1, 0),
            zy: DenseMatrix::from_rows(&[vec![-1.0]])?,
        }),
    )
}
