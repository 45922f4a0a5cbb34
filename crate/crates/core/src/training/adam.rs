use crate::autodiff::{Checkpoint, DType, Tensor};
use crate::error::{Error, Result};
use crate::model::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adaptive-moment optimizer with global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub clip: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, clip: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            clip,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads[i]` is `None` for parameters the loss did
    /// not reach. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<&[f64]>]) -> Result<f64> {
        if grads.len() != self.m.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > self.clip { self.clip / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let g = grads[i].map_or(0.0, |g| g[k] * scale);
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + EPSILON);
            }
        }
        Ok(norm)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, params: &ParamStore) -> Result<()> {
        ckpt.set_meta("adam.t", self.t)?;
        for (i, (_, name, _)) in params.iter().enumerate() {
            ckpt.push(&format!("adam.m.{name}"), DType::F64, self.m[i].clone())?;
            ckpt.push(&format!("adam.v.{name}"), DType::F64, self.v[i].clone())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(ckpt: &Checkpoint, params: &ParamStore, lr: f64, clip: f64) -> Result<Self> {
        let fetch = |kind: &str, name: &str| {
            ckpt.get(&format!("adam.{kind}.{name}"))
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing adam.{kind}.{name}")))
        };
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (_, name, _) in params.iter() {
            m.push(fetch("m", name)?);
            v.push(fetch("v", name)?);
        }
        Ok(Self {
            lr,
            clip,
            m,
            v,
            t: ckpt.meta_parse("adam.t")?,
        })
    }
}
