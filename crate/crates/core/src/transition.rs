//! Topic-coherence and topic-development features, and the transition-aware
//! representation `e_j = [v_coh; v_cro; k_cls; k_know]`.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Tanh => Ok(x.tanh()?),
            Activation::Sigmoid => nn::sigmoid(x),
        }
    }
}

pub struct TransitionParams {
    /// `[d_coh, d]`; absent when the coherence feature is ablated.
    pub w_coh: Option<Tensor>,
    /// `[d_cro, 2d]`
    pub w_cro: Tensor,
    pub activation: Activation,
}

impl TransitionParams {
    pub fn new(
        d: usize,
        d_coh: usize,
        d_cro: usize,
        activation: Activation,
        with_coherence: bool,
        store: &mut ParamStore,
    ) -> Result<Self> {
        let w_coh = if with_coherence {
            Some(store.add("transition.W_coh", &[d_coh, d], Init::Glorot)?)
        } else {
            None
        };
        Ok(Self {
            w_coh,
            w_cro: store.add("transition.W_cro", &[d_cro, 2 * d], Init::Glorot)?,
            activation,
        })
    }

    pub fn d_coh(&self) -> usize {
        self.w_coh.as_ref().map_or(0, |w| w.dims()[0])
    }

    pub fn d_cro(&self) -> usize {
        self.w_cro.dims()[0]
    }
}

/// `tanh(W_coh k_cls)` row-wise for `k_cls` of shape `[M, d]`.
pub fn coherence_feature(k_cls: &Tensor, w_coh: &Tensor) -> Result<Tensor> {
    nn::linear(k_cls, w_coh, None)?.tanh().map_err(Into::into)
}

/// `act(W_cro [k_last - k_cls ; k_last ⊙ k_cls])` row-wise; the zero vector
/// for every row when there is no previous knowledge.
pub fn development_feature(
    k_last: Option<&Tensor>,
    k_cls: &Tensor,
    w_cro: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    let (m, d) = k_cls.dims2()?;
    let d_cro = w_cro.dims()[0];
    let Some(k_last) = k_last else {
        return Ok(Tensor::zeros((m, d_cro), k_cls.dtype(), k_cls.device())?);
    };
    if k_last.dims() != [d] {
        return Err(Error::Shape(format!(
            "previous knowledge has shape {:?}, expected [{d}]",
            k_last.dims()
        )));
    }
    let last = k_last.unsqueeze(0)?;
    let diff = last.broadcast_sub(k_cls)?;
    let prod = last.broadcast_mul(k_cls)?;
    let cross = Tensor::cat(&[diff, prod], D::Minus1)?;
    activation.apply(&nn::linear(&cross, w_cro, None)?)
}

#[derive(Debug, Clone)]
pub struct TransitionRepr {
    /// `[M, d_coh]`; absent when the coherence feature is ablated.
    pub v_coh: Option<Tensor>,
    /// `[M, d_cro]`
    pub v_cro: Tensor,
    /// `[M, d_e]`
    pub e: Tensor,
}

impl TransitionRepr {
    pub fn d_e(&self) -> usize {
        self.e.dims()[1]
    }

    /// Column ranges of `(v_coh, v_cro, k_cls, k_know)` inside `e`.
    pub fn offsets(&self, d: usize) -> [std::ops::Range<usize>; 4] {
        let coh = self.v_coh.as_ref().map_or(0, |v| v.dims()[1]);
        let cro = self.v_cro.dims()[1];
        [
            0..coh,
            coh..coh + cro,
            coh + cro..coh + cro + d,
            coh + cro + d..coh + cro + 2 * d,
        ]
    }
}

/// Exact concatenation along the feature axis; every block must have `M` rows.
pub fn transition_repr(
    v_coh: Option<&Tensor>,
    v_cro: &Tensor,
    k_cls: &Tensor,
    k_know: &Tensor,
) -> Result<TransitionRepr> {
    let (m, d) = k_cls.dims2()?;
    let (km, kd) = k_know.dims2()?;
    let (cm, _) = v_cro.dims2()?;
    if km != m || kd != d || cm != m {
        return Err(Error::Shape(format!(
            "transition blocks disagree: k_cls {:?}, k_know {:?}, v_cro {:?}",
            k_cls.dims(),
            k_know.dims(),
            v_cro.dims()
        )));
    }
    let mut parts = Vec::with_capacity(4);
    if let Some(v) = v_coh {
        if v.dims2()?.0 != m {
            return Err(Error::Shape(format!(
                "v_coh has shape {:?}, expected {m} rows",
                v.dims()
            )));
        }
        parts.push(v.clone());
    }
    parts.extend([v_cro.clone(), k_cls.clone(), k_know.clone()]);
    let e = Tensor::cat(&parts, D::Minus1)?;
    Ok(TransitionRepr {
        v_coh: v_coh.cloned(),
        v_cro: v_cro.clone(),
        e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::to_vec_f64;
    use candle_core::{DType, Device};

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (rows, cols), &Device::Cpu).unwrap()
    }

    #[test]
    fn coherence_examples() {
        let zero = Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap();
        let k = t(1, 4, &[0.3, -1.0, 2.0, 0.5]);
        assert!(to_vec_f64(&coherence_feature(&k, &zero).unwrap())
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        let v = coherence_feature(&t(1, 1, &[0.5]), &t(1, 1, &[1.0])).unwrap();
        assert!((to_vec_f64(&v).unwrap()[0] - 0.46212).abs() < 1e-5);
        let w = t(2, 4, &[0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.25]);
        let a = to_vec_f64(&coherence_feature(&k, &w).unwrap()).unwrap();
        let b = to_vec_f64(&coherence_feature(&k.neg().unwrap(), &w).unwrap()).unwrap();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, -y);
        }
    }

    #[test]
    fn development_examples() {
        let k = t(2, 1, &[2.0, 3.0]);
        let w = t(1, 2, &[1.0, 1.0]);
        let absent = development_feature(None, &k, &w, Activation::Tanh).unwrap();
        assert_eq!(absent.dims(), &[2, 1]);
        assert!(to_vec_f64(&absent).unwrap().iter().all(|&x| x == 0.0));

        let last = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        let v = development_feature(Some(&last), &t(1, 1, &[2.0]), &w, Activation::Tanh).unwrap();
        assert!((to_vec_f64(&v).unwrap()[0] - 0.76159).abs() < 1e-5);

        let kv = t(1, 2, &[0.4, -0.7]);
        let same = Tensor::new(&[0.4f64, -0.7], &Device::Cpu).unwrap();
        let w0 = Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap();
        let v = development_feature(Some(&same), &kv, &w0, Activation::Tanh).unwrap();
        assert!(to_vec_f64(&v).unwrap().iter().all(|&x| x == 0.0));

        let sig = development_feature(Some(&same), &kv, &w0, Activation::Sigmoid).unwrap();
        assert!(to_vec_f64(&sig).unwrap().iter().all(|&x| x == 0.5));
        let bad = Tensor::new(&[1.0f64, 2.0, 3.0], &Device::Cpu).unwrap();
        assert!(development_feature(Some(&bad), &kv, &w0, Activation::Tanh).is_err());
    }

    #[test]
    fn repr_concatenates_exactly() {
        let (a, b, c, d, e, f) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let r = transition_repr(
            Some(&t(1, 1, &[a])),
            &t(1, 1, &[b]),
            &t(1, 2, &[c, d]),
            &t(1, 2, &[e, f]),
        )
        .unwrap();
        assert_eq!(to_vec_f64(&r.e).unwrap(), vec![a, b, c, d, e, f]);
        let [oc, or, ok, on] = r.offsets(2);
        assert_eq!((oc, or, ok, on), (0..1, 1..2, 2..4, 4..6));

        let z = transition_repr(
            Some(&Tensor::zeros((3, 2), DType::F64, &Device::Cpu).unwrap()),
            &Tensor::zeros((3, 2), DType::F64, &Device::Cpu).unwrap(),
            &Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap(),
            &Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap(),
        )
        .unwrap();
        assert_eq!(z.e.dims(), &[3, 12]);
        assert!(to_vec_f64(&z.e).unwrap().iter().all(|&x| x == 0.0));

        let no_coh =
            transition_repr(None, &t(1, 1, &[b]), &t(1, 2, &[c, d]), &t(1, 2, &[e, f])).unwrap();
        assert_eq!(to_vec_f64(&no_coh.e).unwrap(), vec![b, c, d, e, f]);
    }

    #[test]
    fn repr_rejects_mismatched_blocks() {
        let err = transition_repr(
            None,
            &t(2, 1, &[0.0, 0.0]),
            &t(1, 2, &[1.0, 2.0]),
            &t(1, 2, &[1.0, 2.0]),
        );
        assert!(matches!(err, Err(Error::Shape(_))));
        let err = transition_repr(
            None,
            &t(1, 1, &[0.0]),
            &t(1, 2, &[1.0, 2.0]),
            &t(1, 3, &[1.0, 2.0, 3.0]),
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn slicing_recovers_blocks(
                m in 1usize..4, d in 1usize..4, dc in 1usize..3, dr in 1usize..3,
                seed in any::<u64>(),
            ) {
                let mut rng = crate::nn::rng_for(seed, "p", &[]);
                let mut rand = |r: usize, c: usize| {
                    use rand::Rng;
                    let v: Vec<f64> = (0..r * c).map(|_| rng.random_range(-3.0..3.0)).collect();
                    t(r, c, &v)
                };
                let (vc, vr, kc, kk) = (rand(m, dc), rand(m, dr), rand(m, d), rand(m, d));
                let r = transition_repr(Some(&vc), &vr, &kc, &kk).unwrap();
                for (range, block) in r.offsets(d).iter().zip([&vc, &vr, &kc, &kk]) {
                    let got = r.e.narrow(1, range.start, range.len()).unwrap();
                    prop_assert_eq!(to_vec_f64(&got).unwrap(), to_vec_f64(block).unwrap());
                }
            }

            #[test]
            fn coherence_is_bounded(x in prop::collection::vec(-50.0f64..50.0, 4), w in prop::collection::vec(-5.0f64..5.0, 8)) {
                let v = coherence_feature(&t(1, 4, &x), &t(2, 4, &w)).unwrap();
                for e in to_vec_f64(&v).unwrap() {
                    prop_assert!(e.abs() <= 1.0);
                }
            }
        }
    }
}
