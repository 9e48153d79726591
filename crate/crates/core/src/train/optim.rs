use entcap_tensor::{Gradients, ParamStore, Tensor};

/// Adagrad with per-coordinate accumulators starting at zero:
/// `acc += g²; p -= lr · g / sqrt(acc + eps)`.
#[derive(Clone, Debug)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    accum: Vec<Tensor<f32>>,
}

pub const ADAGRAD_EPS: f64 = 1e-8;

impl Adagrad {
    pub fn new(params: &ParamStore<f32>, lr: f64) -> Self {
        Self {
            lr,
            eps: ADAGRAD_EPS,
            accum: params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Updates every parameter for which `select(name)` holds.
    pub fn step_filtered(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &Gradients<f32>,
        select: impl Fn(&str) -> bool,
    ) {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if !select(params.name(id)) {
                continue;
            }
            let g = grads.get(id).data();
            let acc = self.accum[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for ((p, a), &g) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
                let g = g as f64;
                let na = *a as f64 + g * g;
                *a = na as f32;
                *p = (*p as f64 - self.lr * g / (na + self.eps).sqrt()) as f32;
            }
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &Gradients<f32>) {
        self.step_filtered(params, grads, |_| true);
    }
}
