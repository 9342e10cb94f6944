//! Parameter storage and the handful of differentiable building blocks the
//! models share. Every random draw comes from an explicitly seeded stream.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mixes a base seed with a stream tag and counters into an independent seed.
pub fn derive_seed(base: u64, stream: &str, counters: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = splitmix(base);
    for b in stream.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &c in counters {
        h = splitmix(h ^ c);
    }
    h
}

pub fn rng_for(base: u64, stream: &str, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, counters))
}

/// Named trainable tensors, ordered by name.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    seed: u64,
    device: Device,
    vars: BTreeMap<String, Var>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over the last two dimensions.
    Glorot,
    Uniform(f64),
}

impl ParamStore {
    /// Each parameter is initialized from its own stream derived from `seed`
    /// and its name, so values do not depend on registration order.
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            seed,
            device: Device::Cpu,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let rng = &mut rng_for(self.seed, name, &[]);
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Glorot => {
                let (fan_out, fan_in) = match shape {
                    [o, i] => (*o, *i),
                    [i] => (1, *i),
                    _ => (shape[0], n / shape[0]),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..a)).collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Registers `name` with a copy of the current value of `source`.
    pub fn add_copy(&mut self, name: &str, source: &str) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let src = self
            .vars
            .get(source)
            .ok_or_else(|| Error::Config(format!("no parameter {source} to copy")))?;
        let var = Var::from_tensor(&src.as_tensor().copy()?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn vars_with_prefix(&self, prefix: &str, include: bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix) == include)
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of every parameter value.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites parameters in place; every stored name must be present with
    /// a matching shape.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        if let Some(extra) = values.keys().find(|k| !self.vars.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

/// Forward-pass mode: dropout is applied only when training, with masks drawn
/// from the supplied stream.
pub struct Mode {
    rng: Option<ChaCha8Rng>,
}

impl Mode {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: ChaCha8Rng) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| {
                if rng.random_bool(p) {
                    0.0
                } else {
                    scale as f32
                }
            })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

/// `x W^T + b` for `x` of shape `[.., in]` and `W` of shape `[out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let inner = *dims
        .last()
        .ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
    let rows = x.elem_count() / inner.max(1);
    let y = x.reshape((rows, inner))?.matmul(&w.t()?)?;
    let mut out_dims = dims;
    *out_dims.last_mut().expect("non-empty dims") = w.dims()[0];
    let y = y.reshape(out_dims)?;
    Ok(match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    })
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::log_softmax(x, D::Minus1)?)
}

/// Layer normalization over the last dimension, composed of primitive ops so
/// that it is differentiable.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Additive attention mask: 0 where `keep`, a large negative value elsewhere.
pub fn additive_mask(
    keep: &[bool],
    shape: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let v: Vec<f32> = keep.iter().map(|&k| if k { 0.0 } else { -1e9 }).collect();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_counter() {
        let a = derive_seed(1, "shuffle", &[0]);
        assert_ne!(a, derive_seed(1, "dropout", &[0]));
        assert_ne!(a, derive_seed(1, "shuffle", &[1]));
        assert_eq!(a, derive_seed(1, "shuffle", &[0]));
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let x = Tensor::ones((4, 8), DType::F64, &Device::Cpu).unwrap();
        let y = Mode::eval().dropout(&x, 0.5).unwrap();
        assert_eq!(to_vec_f64(&y).unwrap(), vec![1.0; 32]);
        let y = Mode::train(rng_for(0, "d", &[])).dropout(&x, 0.5).unwrap();
        let v = to_vec_f64(&y).unwrap();
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        assert!(v.contains(&0.0));
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut store = ParamStore::new(DType::F32, 0);
        store.add("a", &[2, 3], Init::Glorot).unwrap();
        let snap = store.snapshot().unwrap();
        store
            .get("a")
            .unwrap()
            .set(&Tensor::zeros((2, 3), DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        store.restore(&snap).unwrap();
        let now = to_vec_f64(store.get("a").unwrap().as_tensor()).unwrap();
        assert_eq!(now, to_vec_f64(&snap["a"]).unwrap());
        assert!(store.add("a", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::new(&[-2.0f64, 0.0, 3.0], &Device::Cpu).unwrap();
        assert_eq!(
            to_vec_f64(&leaky_relu(&x, 0.2).unwrap()).unwrap(),
            vec![-0.4, 0.0, 3.0]
        );
    }

    #[test]
    fn sigmoid_gradient_stays_finite_when_saturated() {
        for dtype in [DType::F32, DType::F64] {
            let x = Var::from_tensor(
                &Tensor::new(&[-200.0f64, 0.0, 200.0], &Device::Cpu)
                    .unwrap()
                    .to_dtype(dtype)
                    .unwrap(),
            )
            .unwrap();
            let y = sigmoid(x.as_tensor()).unwrap();
            let g = y.sum_all().unwrap().backward().unwrap();
            let g = to_vec_f64(g.get(&x).unwrap()).unwrap();
            assert!(g.iter().all(|v| v.is_finite()), "{g:?}");
            assert!((g[1] - 0.25).abs() < 1e-6);
        }
    }
}
