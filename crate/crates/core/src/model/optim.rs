use serde::{Deserialize, Serialize};

use super::{GradBuffer, ModelParams};

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum 0.9.
    SgdMomentum,
    /// Adam with (0.9, 0.999, 1e-8).
    Adam,
}

/// Per-parameter optimizer state laid out like [`ModelParams::tensors`].
///
/// Encoder rows that have never received a gradient have zero state, and
/// their update is exactly zero for every optimizer here, so those rows are
/// skipped. The result is bit-identical to a dense update.
pub(crate) struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    row_active: Vec<bool>,
    active_rows: Vec<usize>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, lr: f64, params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let zeros = |on: bool| -> Vec<Vec<f64>> {
            shapes
                .iter()
                .map(|&n| if on { vec![0.0; n] } else { Vec::new() })
                .collect()
        };
        OptimizerState {
            kind,
            lr,
            step: 0,
            first: zeros(kind != Optimizer::Sgd),
            second: zeros(kind == Optimizer::Adam),
            row_active: vec![false; params.dim],
            active_rows: Vec::new(),
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, buf: &GradBuffer) {
        self.step += 1;
        for &k in buf.touched_rows() {
            if !self.row_active[k] {
                self.row_active[k] = true;
                self.active_rows.push(k);
            }
        }

        let h = params.hidden;
        let kind = self.kind;
        let lr = self.lr;
        let (bc1, bc2) = (
            1.0 - ADAM_BETA1.powi(self.step),
            1.0 - ADAM_BETA2.powi(self.step),
        );
        let update = |p: &mut f64, g: f64, m: Option<&mut f64>, v: Option<&mut f64>| match kind {
            Optimizer::Sgd => *p -= lr * g,
            Optimizer::SgdMomentum => {
                let m = m.expect("momentum buffer");
                *m = MOMENTUM * *m + g;
                *p -= lr * *m;
            }
            Optimizer::Adam => {
                let m = m.expect("first moment");
                let v = v.expect("second moment");
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        };

        let grads = buf.grads.tensors();
        for (t, (param, grad)) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            let first = &mut self.first[t];
            let second = &mut self.second[t];
            let mut step_one = |i: usize| update(&mut param[i], grad[i], first.get_mut(i), second.get_mut(i));
            if t == 0 {
                for &k in &self.active_rows {
                    (k * h..(k + 1) * h).for_each(&mut step_one);
                }
            } else {
                (0..grad.len()).for_each(step_one);
            }
        }
    }
}
