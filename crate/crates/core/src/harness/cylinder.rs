//! Cylinder test functions `f(x) = g(⟨x, v₁⟩, …, ⟨x, v_m⟩)`.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::drift::SegmentView;
use crate::error::{Error, Result};
use crate::spectral::dot;

/// Outer function `g: ℝ^m → ℝ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Outer {
    /// `Σ u_r`
    Linear,
    /// `Π u_r`
    Product,
    /// `sin(Σ u_r)`
    Sin,
    /// `cos(Σ u_r)`
    Cos,
    /// `exp(−|u|²/2)`
    Gauss,
    /// The constant 1.
    Const,
}

/// `u_r = ⟨x, v⟩` for states, `⟨ξ(θ), v⟩` for segments (θ defaults to 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Projection {
    State(Vec<f64>),
    Segment {
        v: Vec<f64>,
        #[serde(default)]
        theta: f64,
    },
}

impl Projection {
    pub fn vector(&self) -> &[f64] {
        match self {
            Projection::State(v) | Projection::Segment { v, .. } => v,
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            Projection::State(_) => 0.0,
            Projection::Segment { theta, .. } => *theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CylinderFunction {
    pub name: String,
    pub outer: Outer,
    #[serde(default)]
    pub projections: Vec<Projection>,
}

impl CylinderFunction {
    pub fn new(name: impl Into<String>, outer: Outer, projections: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            outer,
            projections: projections.into_iter().map(Projection::State).collect(),
        }
    }

    pub fn constant() -> Self {
        Self::new("one", Outer::Const, Vec::new())
    }

    pub fn is_constant(&self) -> bool {
        self.outer == Outer::Const
    }

    /// Checks that every projection lives in dimension `dim` and that
    /// segment lags stay inside `[−tau, 0]`.
    pub fn validate(&self, dim: usize, tau: f64) -> Result<()> {
        if !self.is_constant() && self.projections.is_empty() {
            return Err(Error::Config(format!(
                "test function `{}` has no projections",
                self.name
            )));
        }
        for p in &self.projections {
            if p.vector().len() != dim {
                return Err(Error::Config(format!(
                    "test function `{}`: projection of length {} in dimension {dim}",
                    self.name,
                    p.vector().len()
                )));
            }
            if !(p.theta() <= 0.0 && p.theta() >= -tau - 1e-12) {
                return Err(Error::Config(format!(
                    "test function `{}`: lag {} outside [-{tau}, 0]",
                    self.name,
                    p.theta()
                )));
            }
        }
        Ok(())
    }

    fn coords(&self, x: &[f64]) -> Vec<f64> {
        self.projections.iter().map(|p| dot(x, p.vector())).collect()
    }

    fn segment_coords(&self, seg: &SegmentView<'_>) -> Vec<f64> {
        self.projections
            .iter()
            .map(|p| dot(&seg.at(p.theta()), p.vector()))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        outer_value(self.outer, &self.coords(x))
    }

    /// `∂_k f(x)`.
    pub fn dderiv(&self, x: &[f64], k: &[f64]) -> f64 {
        let a = self.coords(k);
        outer_directional(self.outer, &self.coords(x), &a).0
    }

    /// `∂²_k f(x)`.
    pub fn dderiv2(&self, x: &[f64], k: &[f64]) -> f64 {
        let a = self.coords(k);
        outer_directional(self.outer, &self.coords(x), &a).1
    }

    pub fn eval_segment(&self, seg: &SegmentView<'_>) -> f64 {
        outer_value(self.outer, &self.segment_coords(seg))
    }

    /// `∂_η f(ξ)` for a segment direction `η`.
    pub fn dderiv_segment(&self, seg: &SegmentView<'_>, eta: &dyn Fn(f64) -> Vec<f64>) -> f64 {
        let a: Vec<f64> = self
            .projections
            .iter()
            .map(|p| dot(&eta(p.theta()), p.vector()))
            .collect();
        outer_directional(self.outer, &self.segment_coords(seg), &a).0
    }
}

fn outer_value(g: Outer, u: &[f64]) -> f64 {
    match g {
        Outer::Linear => u.iter().sum(),
        Outer::Product => u.iter().product(),
        Outer::Sin => u.iter().sum::<f64>().sin(),
        Outer::Cos => u.iter().sum::<f64>().cos(),
        Outer::Gauss => (-0.5 * dot(u, u)).exp(),
        Outer::Const => 1.0,
    }
}

/// `(Σ a_r ∂_r g(u), Σ a_r a_s ∂_r∂_s g(u))`.
fn outer_directional(g: Outer, u: &[f64], a: &[f64]) -> (f64, f64) {
    let sa: f64 = a.iter().sum();
    match g {
        Outer::Linear => (sa, 0.0),
        Outer::Sin => {
            let s: f64 = u.iter().sum();
            (s.cos() * sa, -s.sin() * sa * sa)
        }
        Outer::Cos => {
            let s: f64 = u.iter().sum();
            (-s.sin() * sa, -s.cos() * sa * sa)
        }
        Outer::Gauss => {
            let v = outer_value(g, u);
            let ua = dot(u, a);
            (-ua * v, (ua * ua - dot(a, a)) * v)
        }
        Outer::Product => {
            let m = u.len();
            let without = |skip: &[usize]| -> f64 {
                (0..m).filter(|i| !skip.contains(i)).map(|i| u[i]).product()
            };
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for r in 0..m {
                d1 += a[r] * without(&[r]);
                for s in 0..m {
                    if s != r {
                        d2 += a[r] * a[s] * without(&[r, s]);
                    }
                }
            }
            (d1, d2)
        }
        Outer::Const => (0.0, 0.0),
    }
}

/// Five-function dictionary in dimension `n`: a linear, a trigonometric
/// pair, a Gaussian bump and a product.
pub fn default_dictionary(n: usize) -> Vec<CylinderFunction> {
    let e = |i: usize| -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i.min(n - 1)] = 1.0;
        v
    };
    let decay: Vec<f64> = (0..n).map(|i| 0.5f64.powi(i as i32)).collect();
    let pair = if n > 1 { vec![e(0), e(1)] } else { vec![e(0), vec![0.5]] };
    vec![
        CylinderFunction::new("linear_e1", Outer::Linear, vec![e(0)]),
        CylinderFunction::new("sin_decay", Outer::Sin, vec![decay.clone()]),
        CylinderFunction::new("cos_decay", Outer::Cos, vec![decay]),
        CylinderFunction::new("gauss_pair", Outer::Gauss, pair.clone()),
        CylinderFunction::new("product_pair", Outer::Product, pair),
    ]
}
