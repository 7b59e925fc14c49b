use super::{ModelParams, Scalar, Tensor};

/// `lr0 · decay^epoch`.
pub fn learning_rate_at(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// RMSProp: `v ← ρ·v + (1−ρ)·g²`, `θ ← θ − lr·g / (sqrt(v) + ε)`.
#[derive(Debug, Clone)]
pub struct RmsProp<T = f32> {
    pub decay: f64,
    pub eps: f64,
    mean_square: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(params: &ModelParams<T>, decay: f64, eps: f64) -> Self {
        RmsProp {
            decay,
            eps,
            mean_square: params.tensors().iter().map(|t| Tensor::zeros(t.dims())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) {
        let rho = T::from_f64(self.decay);
        let one_minus = T::from_f64(1.0 - self.decay);
        let eps = T::from_f64(self.eps);
        let lr = T::from_f64(lr);
        for ((p, g), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.mean_square) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = rho * *vv + one_minus * gv * gv;
                *pv -= lr * gv / (vv.sqrt() + eps);
            }
        }
    }
}
