//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Kind, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that exact zeros compared
/// with finite-difference round-off do not blow up.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare the gradient of `Σ rᵢ·f(inputs)ᵢ` (fixed random `r`, or just `f`
/// when it is a scalar) with central differences of step `eps`, on at most
/// `max_per_input` entries of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, eps: f64, max_per_input: usize, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Option<Vec<f64>> = None;
    let mut eval = |values: &[Tensor<f64>], backward: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let mut out = f(&mut g, &ids)?;
        if g.value(out).len() != 1 {
            let n = g.value(out).len();
            let w = weights.get_or_insert_with(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
            out = g.weighted_sum(out, w.clone())?;
        }
        let v = g.value(out).item();
        if !backward {
            return Ok((v, Vec::new()));
        }
        g.backward(out)?;
        let grads = ids
            .iter()
            .zip(values)
            .map(|(&i, t)| g.grad(i).map_or_else(|| vec![0.0; t.len()], |s| s.to_vec()))
            .collect();
        Ok((v, grads))
    };
    let (_, analytic) = eval(inputs, true)?;
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, t) in inputs.iter().enumerate() {
        let idx: Vec<usize> = if t.len() <= max_per_input {
            (0..t.len()).collect()
        } else {
            let mut v = sample(&mut pick, t.len(), max_per_input).into_vec();
            v.sort_unstable();
            v
        };
        for i in idx {
            let mut vals = inputs.to_vec();
            vals[k].data_mut()[i] += eps;
            let (fp, _) = eval(&vals, false)?;
            vals[k].data_mut()[i] -= 2.0 * eps;
            let (fm, _) = eval(&vals, false)?;
            let numeric = (fp - fm) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[k][i], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}

/// Like [`check`] for a scalar loss that also reads the parameters of
/// `store`. Every trainable tensor of the store and every input is probed;
/// the store is restored afterwards.
pub fn check_model<F>(store: &mut ParamStore<f64>, inputs: &[Tensor<f64>], mut f: F, eps: f64, max_per_tensor: usize, seed: u64) -> Result<GradCheck>
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut eval = |store: &mut ParamStore<f64>, values: &[Tensor<f64>], backward: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, store, &ids)?;
        if g.value(out).len() != 1 {
            return Err(Error::Shape(format!("check_model needs a scalar loss, got {:?}", g.value(out).shape())));
        }
        let v = g.value(out).item();
        if !backward {
            store.clear_bindings();
            return Ok((v, Vec::new()));
        }
        g.backward(out)?;
        store.pull_grads(&g);
        let grads = ids
            .iter()
            .zip(values)
            .map(|(&i, t)| g.grad(i).map_or_else(|| vec![0.0; t.len()], |s| s.to_vec()))
            .collect();
        Ok((v, grads))
    };
    let snapshot: Vec<Tensor<f64>> = store.entries().iter().map(|e| e.value.clone()).collect();
    let restore = |store: &mut ParamStore<f64>| {
        for (e, v) in store.entries_mut().iter_mut().zip(&snapshot) {
            e.value = v.clone();
        }
    };
    let (_, input_grads) = eval(store, inputs, true)?;
    restore(store);
    let param_grads: Vec<Vec<f64>> = store.entries().iter().map(|e| e.grad.clone()).collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let mut choose = |n: usize| -> Vec<usize> {
        if n <= max_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut pick, n, max_per_tensor).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    let trainable: Vec<usize> = (0..store.entries().len()).filter(|&k| store.entries()[k].kind == Kind::Param).collect();
    for k in trainable {
        for i in choose(store.entries()[k].value.len()) {
            store.entries_mut()[k].value.data_mut()[i] += eps;
            let (fp, _) = eval(store, inputs, false)?;
            restore(store);
            store.entries_mut()[k].value.data_mut()[i] -= eps;
            let (fm, _) = eval(store, inputs, false)?;
            restore(store);
            worst = worst.max(rel_err(param_grads[k][i], (fp - fm) / (2.0 * eps)));
            checked += 1;
        }
    }
    for (k, t) in inputs.iter().enumerate() {
        for i in choose(t.len()) {
            let mut vals = inputs.to_vec();
            vals[k].data_mut()[i] += eps;
            let (fp, _) = eval(store, &vals, false)?;
            restore(store);
            vals[k].data_mut()[i] -= 2.0 * eps;
            let (fm, _) = eval(store, &vals, false)?;
            restore(store);
            worst = worst.max(rel_err(input_grads[k][i], (fp - fm) / (2.0 * eps)));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}
