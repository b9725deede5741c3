#![allow(dead_code)]

use lidarsr::tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// Finite-difference gradient checks. Each case builds a scalar from tracked
// leaves; gradients are compared with central differences (probe 1e-3).

pub const PROBE: f64 = 1e-3;
/// Through a whole network a 1e-3 step crosses ReLU and absolute-value kinks,
/// so network-level checks use a finer step.
pub const NET_PROBE: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

/// Builds `f` on fresh leaves and returns the worst relative error between
/// analytic and central-difference gradients over all inputs.
pub fn check_grads(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|t| t.data().to_vec()).unwrap_or(vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut vals = inputs.to_vec();
            vals[i].data_mut()[j] += PROBE;
            let up = eval(&vals);
            vals[i].data_mut()[j] -= 2.0 * PROBE;
            let down = eval(&vals);
            *slot = (up - down) / (2.0 * PROBE);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Random projection to a scalar so every output element matters.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(g.value(y).shape(), &mut rng);
    let r = g.constant(r);
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

/// Worst relative error of store gradients (and the gradient of input `x`)
/// against central differences over every trainable entry.
pub fn check_store_grads(store: &ParamStore, x: &Tensor, h: f64, f: impl Fn(&mut Graph, &ParamStore, Var) -> Var) -> f64 {
    let eval = |s: &ParamStore, x: &Tensor| {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let out = f(&mut g, s, xv);
        g.value(out).item()
    };
    let mut s = store.clone();
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&mut g, &s, xv);
    let grads = g.backward(out).unwrap();
    s.zero_grad();
    s.accumulate(&grads);
    let mut worst: f64 = 0.0;
    let names: Vec<String> = s.iter().filter(|p| p.requires_grad()).map(|p| p.name.clone()).collect();
    for name in &names {
        let p = s.get(name).unwrap();
        let analytic = p.grad.as_ref().map(|t| t.data().to_vec()).unwrap_or(vec![0.0; p.value.len()]);
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut probe = store.clone();
            probe.value_mut(name).unwrap().data_mut()[j] += h;
            let up = eval(&probe, x);
            probe.value_mut(name).unwrap().data_mut()[j] -= 2.0 * h;
            let down = eval(&probe, x);
            *slot = (up - down) / (2.0 * h);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    let analytic = grads.get(xv).unwrap().data().to_vec();
    let mut numeric = vec![0.0; x.len()];
    for (j, slot) in numeric.iter_mut().enumerate() {
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let up = eval(store, &xp);
        xp.data_mut()[j] -= 2.0 * h;
        let down = eval(store, &xp);
        *slot = (up - down) / (2.0 * h);
    }
    worst.max(rel_err(&analytic, &numeric))
}

