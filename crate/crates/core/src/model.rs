//! Datasets and small differentiable models with exact per-example gradients.
//!
//! Three families are supported: a linear regressor, a logistic classifier and
//! a one-hidden-layer tanh MLP with either a logistic or a linear head.
//! Parameters are a flat vector; the layouts are
//!
//! * linear / logistic: `[w_1 .. w_d, b]`
//! * mlp: `[W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2]`
//!
//! Classification uses binary cross-entropy on the logit, regression uses the
//! squared error `(y_hat - y)^2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

pub type GroupId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, model needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("group {0} has no examples")]
    EmptyGroup(GroupId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// One `(x, g, y)` triple. Classification labels are `0.0` or `1.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub group: GroupId,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, group: GroupId, label: f64) -> Self {
        Self {
            features,
            group,
            label,
        }
    }
}

/// A validated, non-empty collection of examples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_groups: usize,
    task: TaskKind,
    dim: usize,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        num_groups: usize,
        task: TaskKind,
    ) -> Result<Self, ModelError> {
        let first = examples
            .first()
            .ok_or_else(|| ModelError::InvalidDataset("no examples".into()))?;
        if num_groups == 0 {
            return Err(ModelError::InvalidDataset("zero groups".into()));
        }
        let dim = first.features.len();
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != dim {
                return Err(ModelError::InvalidDataset(format!(
                    "example {i} has {} features, expected {dim}",
                    ex.features.len()
                )));
            }
            if ex.group >= num_groups {
                return Err(ModelError::InvalidDataset(format!(
                    "example {i} has group {} but only {num_groups} groups exist",
                    ex.group
                )));
            }
            if ex.features.iter().any(|v| !v.is_finite()) || !ex.label.is_finite() {
                return Err(ModelError::InvalidDataset(format!(
                    "example {i} has a non-finite value"
                )));
            }
            if task == TaskKind::Classification && ex.label != 0.0 && ex.label != 1.0 {
                return Err(ModelError::InvalidDataset(format!(
                    "example {i} has label {} but classification labels must be 0 or 1",
                    ex.label
                )));
            }
        }
        Ok(Self {
            examples,
            num_groups,
            task,
            dim,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// Example indices per group, in dataset order.
    pub fn group_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_groups];
        for (i, ex) in self.examples.iter().enumerate() {
            out[ex.group].push(i);
        }
        out
    }

    /// Fails with the lowest empty group id, if any.
    pub fn require_nonempty_groups(&self) -> Result<(), ModelError> {
        match self.group_indices().iter().position(Vec::is_empty) {
            Some(g) => Err(ModelError::EmptyGroup(g)),
            None => Ok(()),
        }
    }

    /// A new dataset holding the given examples (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self, ModelError> {
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Self::new(examples, self.num_groups, self.task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LinearRegressor,
    LogisticClassifier,
    Mlp,
}

/// Model architecture. Also serves as the shape descriptor of [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub family: ModelFamily,
    pub input_dim: usize,
    /// Hidden width; only meaningful for [`ModelFamily::Mlp`].
    pub hidden: usize,
    /// Output head; fixed by the family except for the MLP.
    pub task: TaskKind,
}

/// Flat parameter vector tagged with the model it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: Model,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(shape: Model, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != shape.num_params() {
            return Err(ModelError::ParamLength {
                expected: shape.num_params(),
                got: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Model) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_params()],
        }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a {0,1} label.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

impl Model {
    pub fn linear(input_dim: usize) -> Self {
        Self {
            family: ModelFamily::LinearRegressor,
            input_dim,
            hidden: 0,
            task: TaskKind::Regression,
        }
    }

    pub fn logistic(input_dim: usize) -> Self {
        Self {
            family: ModelFamily::LogisticClassifier,
            input_dim,
            hidden: 0,
            task: TaskKind::Classification,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, task: TaskKind) -> Self {
        Self {
            family: ModelFamily::Mlp,
            input_dim,
            hidden,
            task,
        }
    }

    /// Builds the model of `family` fitting a dataset of `task` with `input_dim` features.
    pub fn for_task(family: ModelFamily, input_dim: usize, hidden: usize, task: TaskKind) -> Self {
        match family {
            ModelFamily::LinearRegressor => Self::linear(input_dim),
            ModelFamily::LogisticClassifier => Self::logistic(input_dim),
            ModelFamily::Mlp => Self::mlp(input_dim, hidden, task),
        }
    }

    pub fn num_params(&self) -> usize {
        match self.family {
            ModelFamily::LinearRegressor | ModelFamily::LogisticClassifier => self.input_dim + 1,
            ModelFamily::Mlp => self.hidden * self.input_dim + 2 * self.hidden + 1,
        }
    }

    fn check(&self, params: &ModelParams, ex: &Example) -> Result<(), ModelError> {
        if params.values.len() != self.num_params() {
            return Err(ModelError::ParamLength {
                expected: self.num_params(),
                got: params.values.len(),
            });
        }
        if ex.features.len() != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                got: ex.features.len(),
            });
        }
        Ok(())
    }

    /// Raw output: the logit for classification heads, the prediction for regression.
    fn output(&self, theta: &[f64], x: &[f64]) -> f64 {
        let d = self.input_dim;
        match self.family {
            ModelFamily::LinearRegressor | ModelFamily::LogisticClassifier => {
                dot(&theta[..d], x) + theta[d]
            }
            ModelFamily::Mlp => {
                let (hidden, w2, b2) = self.mlp_forward(theta, x);
                dot(w2, &hidden) + b2
            }
        }
    }

    /// Hidden activations, output weights and output bias of the MLP.
    fn mlp_forward<'a>(&self, theta: &'a [f64], x: &[f64]) -> (Vec<f64>, &'a [f64], f64) {
        let (d, h) = (self.input_dim, self.hidden);
        let (w1, rest) = theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let hidden = (0..h)
            .map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh())
            .collect();
        (hidden, w2, b2[0])
    }

    fn loss_of_output(&self, out: f64, y: f64) -> f64 {
        match self.task {
            TaskKind::Classification => bce_from_logit(out, y),
            TaskKind::Regression => (out - y) * (out - y),
        }
    }

    /// d loss / d output.
    fn dloss_doutput(&self, out: f64, y: f64) -> f64 {
        match self.task {
            TaskKind::Classification => sigmoid(out) - y,
            TaskKind::Regression => 2.0 * (out - y),
        }
    }

    pub fn loss(&self, params: &ModelParams, ex: &Example) -> Result<f64, ModelError> {
        self.check(params, ex)?;
        let out = self.output(&params.values, &ex.features);
        Ok(self.loss_of_output(out, ex.label))
    }

    /// Exact gradient of [`Model::loss`] with respect to every parameter.
    pub fn grad(&self, params: &ModelParams, ex: &Example) -> Result<Vec<f64>, ModelError> {
        self.loss_and_grad(params, ex).map(|(_, g)| g)
    }

    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        ex: &Example,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        self.check(params, ex)?;
        let theta = &params.values;
        let x = &ex.features;
        let d = self.input_dim;
        match self.family {
            ModelFamily::LinearRegressor | ModelFamily::LogisticClassifier => {
                let out = dot(&theta[..d], x) + theta[d];
                let dout = self.dloss_doutput(out, ex.label);
                let mut g = Vec::with_capacity(d + 1);
                g.extend(x.iter().map(|xi| dout * xi));
                g.push(dout);
                Ok((self.loss_of_output(out, ex.label), g))
            }
            ModelFamily::Mlp => {
                let h = self.hidden;
                let (hidden, w2, b2) = self.mlp_forward(theta, x);
                let out = dot(w2, &hidden) + b2;
                let dout = self.dloss_doutput(out, ex.label);
                let mut g = vec![0.0; self.num_params()];
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h);
                for j in 0..h {
                    gw2[j] = dout * hidden[j];
                    let pre = dout * w2[j] * (1.0 - hidden[j] * hidden[j]);
                    gb1[j] = pre;
                    for (gw, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gw = pre * xi;
                    }
                }
                gb2[0] = dout;
                Ok((self.loss_of_output(out, ex.label), g))
            }
        }
    }

    /// Class in {0, 1} for classifiers (p >= 0.5 predicts 1), the real output for regressors.
    pub fn predict(&self, params: &ModelParams, ex: &Example) -> Result<f64, ModelError> {
        self.check(params, ex)?;
        let out = self.output(&params.values, &ex.features);
        Ok(match self.task {
            // sigmoid(out) >= 0.5 exactly when out >= 0
            TaskKind::Classification => {
                if out >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TaskKind::Regression => out,
        })
    }

    /// Zeros for the linear families; per-layer uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    /// for the MLP, biases included.
    pub fn init_params(&self, rng: &mut RngStream) -> ModelParams {
        match self.family {
            ModelFamily::LinearRegressor | ModelFamily::LogisticClassifier => {
                ModelParams::zeros(*self)
            }
            ModelFamily::Mlp => {
                let (d, h) = (self.input_dim, self.hidden);
                let b_in = 1.0 / (d.max(1) as f64).sqrt();
                let b_out = 1.0 / (h.max(1) as f64).sqrt();
                let mut values = Vec::with_capacity(self.num_params());
                for _ in 0..h * d + h {
                    values.push(rng.uniform_in(-b_in, b_in));
                }
                for _ in 0..h + 1 {
                    values.push(rng.uniform_in(-b_out, b_out));
                }
                ModelParams {
                    shape: *self,
                    values,
                }
            }
        }
    }

    /// Mean loss over a slice of examples.
    pub fn mean_loss<'a>(
        &self,
        params: &ModelParams,
        examples: impl IntoIterator<Item = &'a Example>,
    ) -> Result<f64, ModelError> {
        let mut total = 0.0;
        let mut n = 0usize;
        for ex in examples {
            total += self.loss(params, ex)?;
            n += 1;
        }
        if n == 0 {
            return Err(ModelError::InvalidDataset("mean loss over zero examples".into()));
        }
        Ok(total / n as f64)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: &[f64], y: f64) -> Example {
        Example::new(x.to_vec(), 0, y)
    }

    #[test]
    fn logistic_zero_params_loss_is_ln2() {
        let m = Model::logistic(3);
        let p = ModelParams::zeros(m);
        let l = m.loss(&p, &ex(&[0.3, -2.0, 5.0], 1.0)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn linear_zero_params_zero_target() {
        let m = Model::linear(2);
        let p = ModelParams::zeros(m);
        assert_eq!(m.loss(&p, &ex(&[1.0, 2.0], 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn logistic_hand_value() {
        let m = Model::logistic(1);
        let p = ModelParams::new(m, vec![1.0, 0.0]).unwrap();
        let l = m.loss(&p, &ex(&[2.0], 1.0)).unwrap();
        // ln(1 + e^-2)
        assert!((l - 0.126_928_011_042_973).abs() < 1e-12);
    }

    #[test]
    fn logistic_hand_gradient() {
        let m = Model::logistic(1);
        let p = ModelParams::zeros(m);
        let g = m.grad(&p, &ex(&[1.0], 1.0)).unwrap();
        assert_eq!(g, vec![-0.5, -0.5]);
    }

    #[test]
    fn zero_feature_gives_zero_weight_gradient() {
        let m = Model::logistic(2);
        let p = ModelParams::new(m, vec![0.4, -0.1, 0.2]).unwrap();
        let g = m.grad(&p, &ex(&[0.0, 1.5], 0.0)).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn predict_tie_and_linear() {
        let m = Model::logistic(2);
        assert_eq!(m.predict(&ModelParams::zeros(m), &ex(&[1.0, 1.0], 0.0)).unwrap(), 1.0);
        let big = ModelParams::new(m, vec![50.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.predict(&big, &ex(&[3.0, 0.0], 0.0)).unwrap(), 1.0);

        let lin = Model::linear(2);
        let p = ModelParams::new(lin, vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(lin.predict(&p, &ex(&[2.0, 3.0], 0.0)).unwrap(), 5.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = Model::logistic(3);
        let err = m.loss(&ModelParams::zeros(m), &ex(&[1.0], 1.0)).unwrap_err();
        assert_eq!(err, ModelError::DimensionMismatch { expected: 3, got: 1 });
        let short = ModelParams {
            shape: m,
            values: vec![0.0; 2],
        };
        assert!(matches!(
            m.grad(&short, &ex(&[1.0, 2.0, 3.0], 1.0)),
            Err(ModelError::ParamLength { .. })
        ));
    }

    #[test]
    fn init_linear_is_zero_mlp_is_bounded_and_repeatable() {
        let m = Model::logistic(3);
        let p = m.init_params(&mut RngStream::new(1, "init"));
        assert_eq!(p.values, vec![0.0; 4]);

        let mlp = Model::mlp(4, 5, TaskKind::Classification);
        let a = mlp.init_params(&mut RngStream::new(9, "init"));
        let b = mlp.init_params(&mut RngStream::new(9, "init"));
        assert_eq!(a, b);
        let (first, second) = a.values.split_at(5 * 4 + 5);
        assert!(first.iter().all(|v| v.abs() <= 0.5));
        let bound = 1.0 / 5f64.sqrt();
        assert!(second.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let m = Model::logistic(1);
        let p = ModelParams::new(m, vec![1000.0, 0.0]).unwrap();
        let l = m.loss(&p, &ex(&[5.0], 0.0)).unwrap();
        assert!((l - 5000.0).abs() < 1e-9);
        let g = m.grad(&p, &ex(&[5.0], 1.0)).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], 1, TaskKind::Classification).is_err());
        let bad_label = vec![Example::new(vec![1.0], 0, 0.5)];
        assert!(Dataset::new(bad_label, 1, TaskKind::Classification).is_err());
        let bad_group = vec![Example::new(vec![1.0], 2, 1.0)];
        assert!(Dataset::new(bad_group, 2, TaskKind::Classification).is_err());
        let ragged = vec![
            Example::new(vec![1.0], 0, 1.0),
            Example::new(vec![1.0, 2.0], 0, 1.0),
        ];
        assert!(Dataset::new(ragged, 1, TaskKind::Classification).is_err());
        let ok = Dataset::new(vec![Example::new(vec![1.0], 1, 0.0)], 2, TaskKind::Classification)
            .unwrap();
        assert_eq!(ok.require_nonempty_groups(), Err(ModelError::EmptyGroup(0)));
    }
}
