//! Central-difference gradient checking.
//!
//! The error for a tensor is `‖a − n‖ / max(‖a‖, ‖n‖, floor)` over a sample
//! of its entries, where `a` is the analytic and `n` the numeric gradient.
//! Comparing norms rather than single entries keeps isolated kinks (ReLU,
//! max) from dominating.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub h: f64,
    /// Entries sampled per tensor; all entries when the tensor is smaller.
    pub samples: usize,
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-5,
            samples: 24,
            floor: 1e-8,
            seed: 0,
        }
    }
}

fn entries(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= n {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, n).into_vec();
        v.sort_unstable();
        v
    }
}

impl GradCheck {
    fn rel(&self, analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / na.max(nn).max(self.floor)
    }

    /// Checks a scalar function of free input tensors; one error per input.
    pub fn inputs<F>(&self, inputs: &[Tensor], f: F) -> Vec<f64>
    where
        F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
    {
        let eval = |xs: &[Tensor]| {
            let g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), false)).collect();
            f(&g, &vars).value().item()
        };
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
        let root = f(&g, &vars);
        let mut grads = g.backward(root);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut xs = inputs.to_vec();
        let mut errs = Vec::new();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.take(*v).unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
            let idx = entries(inputs[i].len(), self.samples, &mut rng);
            let mut a = Vec::new();
            let mut n = Vec::new();
            for &j in &idx {
                let orig = xs[i].data()[j];
                xs[i].data_mut()[j] = orig + self.h;
                let fp = eval(&xs);
                xs[i].data_mut()[j] = orig - self.h;
                let fm = eval(&xs);
                xs[i].data_mut()[j] = orig;
                a.push(analytic.data()[j]);
                n.push((fp - fm) / (2.0 * self.h));
            }
            errs.push(self.rel(&a, &n));
        }
        errs
    }

    /// Checks a scalar loss of every trainable parameter in `store`.
    /// Returns `(name, error)` per parameter.
    pub fn params<F>(&self, store: &ParamStore, train: bool, f: F) -> Vec<(String, f64)>
    where
        F: for<'g> Fn(&Ctx<'g>) -> Var<'g>,
    {
        self.params_where(store, train, |_| true, f)
    }

    /// As [`GradCheck::params`], restricted to parameters whose name satisfies `pick`.
    pub fn params_where<P, F>(&self, store: &ParamStore, train: bool, pick: P, f: F) -> Vec<(String, f64)>
    where
        P: Fn(&str) -> bool,
        F: for<'g> Fn(&Ctx<'g>) -> Var<'g>,
    {
        let eval = |s: &ParamStore| {
            let g = Graph::new();
            let ctx = Ctx::new(&g, s, train, false);
            f(&ctx).value().item()
        };
        let g = Graph::new();
        let ctx = Ctx::new(&g, store, train, true);
        let root = f(&ctx);
        let mut grads = g.backward(root);
        let analytic = ctx.param_grads(&mut grads);
        let mut work = store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for id in store.trainable_ids().filter(|&id| pick(store.name(id))) {
            let ga = analytic
                .iter()
                .find(|(p, _)| *p == id)
                .map(|(_, t)| t.clone())
                .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
            let idx = entries(ga.len(), self.samples, &mut rng);
            let mut a = Vec::new();
            let mut n = Vec::new();
            for &j in &idx {
                let orig = work.get(id).data()[j];
                work.get_mut(id).data_mut()[j] = orig + self.h;
                let fp = eval(&work);
                work.get_mut(id).data_mut()[j] = orig - self.h;
                let fm = eval(&work);
                work.get_mut(id).data_mut()[j] = orig;
                a.push(ga.data()[j]);
                n.push((fp - fm) / (2.0 * self.h));
            }
            out.push((store.name(id).to_string(), self.rel(&a, &n)));
        }
        out
    }
}
