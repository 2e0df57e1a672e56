//! Finite-difference gradient checks shared by the integration tests.

use outfitgen::tensor::{Gradients, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between tape gradients and central differences over
/// every entry of every input.
pub fn input_grad_error(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t).unwrap()).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()]);
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let (tp, _, op) = eval(&plus);
            let (tm, _, om) = eval(&minus);
            let numeric = (tp.scalar(op).unwrap() - tm.scalar(om).unwrap()) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// Largest relative error over `samples` random parameter coordinates. `loss`
/// records the loss on a tape with the parameters bound and returns it.
pub fn param_grad_error<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut ParamSet,
    loss: &dyn Fn(&M, &mut Tape) -> (Var, outfitgen::tensor::Bound),
    samples: usize,
    seed: u64,
) -> f64 {
    let value = |m: &M| {
        let mut tape = Tape::new();
        let (l, _) = loss(m, &mut tape);
        tape.scalar(l).unwrap()
    };
    let mut tape = Tape::new();
    let (l, bound) = loss(model, &mut tape);
    let grads: Gradients = tape.backward(l).unwrap();
    {
        let p = params(model);
        p.zero_grad();
        p.accumulate(&bound, &grads).unwrap();
    }
    let sizes: Vec<usize> = params(model).iter().map(|(_, t)| t.numel()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.random_range(0..sizes.len());
        let i = rng.random_range(0..sizes[k]);
        let analytic = {
            let p = params(model);
            let t = p.iter().nth(k).unwrap().1;
            t.grad().map_or(0.0, |g| g[i])
        };
        let nudge = |m: &mut M, delta: f64| {
            params(m).iter_mut().nth(k).unwrap().1.data_mut()[i] += delta;
        };
        nudge(model, STEP);
        let up = value(model);
        nudge(model, -2.0 * STEP);
        let down = value(model);
        nudge(model, STEP);
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * STEP)));
    }
    worst
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).unwrap().with_requires_grad(true)
}

/// Reduces any output to a scalar with fixed random weights.
pub fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(r, c, w).unwrap();
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}
