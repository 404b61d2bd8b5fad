//! JSON model-definition files.
//!
//! Two shapes are accepted: a built-in reference
//! `{"example": "4.1", "r0": 0.5, "eps": 0.1, "alpha_weight": {"constant": 1.0}}`
//! or an explicit declaration with coefficients picked from a registry of
//! named forms. Arbitrary user code is out of scope for the file format;
//! custom coefficients are registered programmatically through the
//! [`Coefficients`](super::Coefficients) trait.

use super::examples::{DelayWeight, LinearCoeffs};
use super::{
    make_example_4_1, make_example_4_2, Coefficients, LyapunovSuite, ModelSpec, Segment,
    SegmentView,
};
use crate::error::{Error, Result};
use crate::matops::DenseMatrix;
use serde::Deserialize;
use std::sync::Arc;

/// Sampled-weight specification: a constant or explicit grid values.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum WeightSpec {
    Constant { constant: f64 },
    Values { values: Vec<f64> },
}

impl WeightSpec {
    pub fn build(&self, r0: f64) -> Result<DelayWeight> {
        match self {
            WeightSpec::Constant { constant } => DelayWeight::constant(r0, *constant),
            WeightSpec::Values { values } => DelayWeight::from_values(r0, values.clone()),
        }
    }
}

/// Segment specification used for `xi` and `h` in experiment configs.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SegmentSpec {
    Constant { constant: Vec<f64> },
    Values { values: Vec<Vec<f64>> },
}

impl SegmentSpec {
    /// Builds a segment matched to the simulation grid.
    pub fn build(&self, r0: f64, dim: usize, n_hist: usize) -> Result<Segment> {
        match self {
            SegmentSpec::Constant { constant } => {
                if constant.len() != dim {
                    return Err(Error::InvalidSegment(format!(
                        "segment constant has {} components, model state has {dim}",
                        constant.len()
                    )));
                }
                Segment::constant(r0, n_hist, constant)
            }
            SegmentSpec::Values { values } => {
                if values.len() != n_hist + 1 {
                    return Err(Error::InvalidSegment(format!(
                        "segment grid needs {} nodes for this grid, got {}",
                        n_hist + 1,
                        values.len()
                    )));
                }
                if values.iter().any(|v| v.len() != dim) {
                    return Err(Error::InvalidSegment(format!(
                        "every segment node needs {dim} components"
                    )));
                }
                Segment::new(r0, dim, n_hist, values.concat())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinModel {
    pub example: String,
    pub r0: f64,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub alpha_weight: Option<WeightSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "form")]
pub enum ZForm {
    /// `Z = 0`.
    #[serde(rename = "zero")]
    Zero,
    /// `Z = on_x * x + on_y * y` (matrices as nested rows).
    #[serde(rename = "linear")]
    Linear {
        #[serde(default)]
        on_x: Option<Vec<Vec<f64>>>,
        on_y: Vec<Vec<f64>>,
    },
    /// `Z_k = -eps * y_k^3` per component.
    #[serde(rename = "cubic_damping")]
    CubicDamping { eps: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "form")]
pub enum BForm {
    /// `b = 0`.
    #[serde(rename = "zero")]
    Zero,
    /// `b_k = coef * y_k(-r0)^3` (discrete delay lookup).
    #[serde(rename = "discrete_delay_cubic")]
    DiscreteDelayCubic { coef: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitModel {
    pub m: usize,
    pub d: usize,
    pub r0: f64,
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "m_matrix")]
    pub m_matrix: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub z: ZForm,
    pub b: BForm,
}

struct RegistryCoeffs {
    linear: Option<LinearCoeffs>,
    cubic_eps: Option<f64>,
    delay_cubic_coef: Option<f64>,
    d: usize,
}

impl Coefficients for RegistryCoeffs {
    fn z(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let Some(linear) = &self.linear {
            linear.z(x, y, out);
        }
        if let Some(eps) = self.cubic_eps {
            for (o, yv) in out.iter_mut().zip(y) {
                *o -= eps * yv * yv * yv;
            }
        }
    }

    fn z_dir(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let Some(linear) = &self.linear {
            linear.z_dir(x, y, u, out);
        }
        if let Some(eps) = self.cubic_eps {
            let m = x.len();
            for k in 0..self.d {
                out[k] -= 3.0 * eps * y[k] * y[k] * u[m + k];
            }
        }
    }

    fn b(&self, seg: SegmentView<'_>, out: &mut [f64]) {
        out.fill(0.0);
        if let Some(coef) = self.delay_cubic_coef {
            let m = seg.dim - self.d;
            let node = seg.node(0);
            for k in 0..self.d {
                let v = node[m + k];
                out[k] = coef * v * v * v;
            }
        }
    }

    fn b_dir(&self, seg: SegmentView<'_>, dir: SegmentView<'_>, out: &mut [f64]) {
        out.fill(0.0);
        if let Some(coef) = self.delay_cubic_coef {
            let m = seg.dim - self.d;
            let node = seg.node(0);
            let dnode = dir.node(0);
            for k in 0..self.d {
                out[k] = 3.0 * coef * node[m + k] * node[m + k] * dnode[m + k];
            }
        }
    }
}

fn matrix_from_nested(rows: &[Vec<f64>], context: &str) -> Result<DenseMatrix> {
    DenseMatrix::from_rows(rows).map_err(|e| Error::ModelFile(format!("{context}: {e}")))
}

impl ExplicitModel {
    pub fn build(&self) -> Result<ModelSpec> {
        let a = if self.m == 0 {
            DenseMatrix::zeros(0, 0)
        } else {
            matrix_from_nested(&self.a, "field 'a'")?
        };
        let mm = if self.m == 0 {
            DenseMatrix::zeros(0, self.d)
        } else {
            matrix_from_nested(&self.m_matrix, "field 'm_matrix'")?
        };
        let sigma = matrix_from_nested(&self.sigma, "field 'sigma'")?;

        let linear = match &self.z {
            ZForm::Linear { on_x, on_y } => {
                let zx = match on_x {
                    Some(rows) => matrix_from_nested(rows, "field 'z.on_x'")?,
                    None => DenseMatrix::zeros(self.d, self.m),
                };
                Some(LinearCoeffs {
                    zx,
                    zy: matrix_from_nested(on_y, "field 'z.on_y'")?,
                })
            }
            _ => None,
        };
        let cubic_eps = match &self.z {
            ZForm::CubicDamping { eps } => Some(*eps),
            _ => None,
        };
        let delay_cubic_coef = match &self.b {
            BForm::DiscreteDelayCubic { coef } => Some(*coef),
            BForm::Zero => None,
        };
        let d = self.d;
        let coeffs = Arc::new(RegistryCoeffs {
            linear,
            cubic_eps,
            delay_cubic_coef,
            d,
        });
        let model = ModelSpec::new(self.m, self.d, self.r0, a, mm, sigma, coeffs)?;
        Ok(match delay_cubic_coef {
            Some(coef) => {
                let m = self.m;
                model.with_b_tilde(Arc::new(move |z: &[f64]| {
                    z[m..].iter().map(|v| coef * v * v * v).collect()
                }))
            }
            None => model,
        })
    }
}

/// Parses a model definition from JSON. Built-in models come with their
/// Lyapunov suite; registry models do not (the grid checks that need one
/// report a missing map).
pub fn parse_model_json(text: &str) -> Result<(ModelSpec, Option<LyapunovSuite>)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::ModelFile(format!("invalid JSON: {e}")))?;
    if value.get("example").is_some() {
        let builtin: BuiltinModel = serde_json::from_value(value)
            .map_err(|e| Error::ModelFile(format!("built-in model: {e}")))?;
        build_builtin(&builtin).map(|(m, s)| (m, Some(s)))
    } else {
        let explicit: ExplicitModel = serde_json::from_value(value)
            .map_err(|e| Error::ModelFile(format!("explicit model: {e}")))?;
        explicit.build().map(|m| (m, None))
    }
}

pub fn build_builtin(spec: &BuiltinModel) -> Result<(ModelSpec, LyapunovSuite)> {
    match spec.example.as_str() {
        "4.1" => {
            let eps = spec.eps.unwrap_or(0.0);
            let weight = spec
                .alpha_weight
                .clone()
                .unwrap_or(WeightSpec::Constant { constant: 1.0 })
                .build(spec.r0)?;
            make_example_4_1(eps, weight, spec.r0)
        }
        "4.2" => {
            if spec.eps.is_some() || spec.alpha_weight.is_some() {
                return Err(Error::ModelFile(
                    "example 4.2 takes no 'eps' or 'alpha_weight' parameters".into(),
                ));
            }
            make_example_4_2(spec.r0)
        }
        other => Err(Error::ModelFile(format!(
            "unknown built-in example '{other}' (expected \"4.1\" or \"4.2\")"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtin_4_1() {
        let (model, suite) = parse_model_json(
            r#"{"example": "4.1", "r0": 0.5, "eps": 0.1, "alpha_weight": {"constant": 1.0}}"#,
        )
        .unwrap();
        assert_eq!(model.m(), 1);
        assert!(suite.is_some());
    }

    #[test]
    fn parses_explicit_ou() {
        let (model, suite) = parse_model_json(
            r#"{"m": 0, "d": 1, "r0": 0.5, "a": [], "m_matrix": [],
                "sigma": [[1.0]],
                "z": {"form": "linear", "on_y": [[-1.0]]},
                "b": {"form": "zero"}}"#,
        )
        .unwrap();
        assert_eq!(model.m(), 0);
        assert!(suite.is_none());
        let mut out = [0.0];
        model.coeffs().z(&[], &[3.0], &mut out);
        assert_eq!(out[0], -3.0);
    }

    #[test]
    fn rejects_unknown_example() {
        assert!(parse_model_json(r#"{"example": "9.9", "r0": 0.5}"#).is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        let err = parse_model_json(r#"{"example": "4.1", "r0": 0.5, "bogus": 1}"#).unwrap_err();
        assert!(format!("{err}").contains("bogus"), "{err}");
    }

    #[test]
    fn explicit_cubic_with_delay_matches_example_4_2_drift() {
        let (model, _) = parse_model_json(
            r#"{"m": 1, "d": 1, "r0": 0.5,
                "a": [[-1.0]], "m_matrix": [[-1.0]], "sigma": [[1.0]],
                "z": {"form": "cubic_damping", "eps": 1.0},
                "b": {"form": "discrete_delay_cubic", "coef": 0.25}}"#,
        )
        .unwrap();
        let bt = model.b_tilde().unwrap();
        assert_eq!(bt(&[0.0, 2.0])[0], 2.0);
        let seg = Segment::constant(0.5, 4, &[0.0, 2.0]).unwrap();
        let mut out = [0.0];
        model.coeffs().b(seg.as_view(), &mut out);
        assert_eq!(out[0], 2.0);
    }

    #[test]
    fn segment_spec_builds_constant() {
        let spec: SegmentSpec = serde_json::from_str(r#"{"constant": [1.0, 2.0]}"#).unwrap();
        let seg = spec.build(0.5, 2, 10).unwrap();
        assert_eq!(seg.at_zero(), &[1.0, 2.0]);
    }

    #[test]
    fn segment_spec_checks_node_count() {
        let spec: SegmentSpec =
            serde_json::from_str(r#"{"values": [[1.0], [2.0], [3.0]]}"#).unwrap();
        assert!(spec.build(0.5, 1, 2).is_ok());
        assert!(spec.build(0.5, 1, 5).is_err());
    }
}
