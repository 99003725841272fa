//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`, over every element of every input. Returns
/// the maximum relative error.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |ins: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.item()
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

type OpFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

/// One registered operator with a scalarizing probe.
pub struct OperatorCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    f: OpFn,
}

impl OperatorCase {
    pub fn max_relative_error(&self, h: f64) -> Result<f64> {
        check_gradients(&self.f, &self.inputs, h)
    }
}

fn random_tensor<R: rand::Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Contracts a non-scalar output with a fixed pseudo-random weight tensor so
/// every output element contributes a distinct coefficient.
fn probe<'t>(y: Var<'t>) -> Result<Var<'t>> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7368 + 0.31).sin()).collect();
    let w = y.tape().constant(Tensor::new(shape, w)?);
    Ok(y.mul(w)?.sum())
}

macro_rules! case {
    ($name:expr, $inputs:expr, |$v:ident| $body:expr) => {
        OperatorCase {
            name: $name,
            inputs: $inputs,
            f: Box::new(move |_tape, $v: &[Var<'_>]| probe($body)),
        }
    };
}

/// Every differentiable operator on random inputs in `[-2, 2]` (positive
/// subranges for `log`, `sqrt` and variances).
pub fn operator_cases(seed: u64) -> Vec<OperatorCase> {
    use super::nn;
    use super::tape::Padding;
    use rand::SeedableRng;
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_tensor(&mut rng, shape, -2.0, 2.0);
    let a23 = r(&[2, 3]);
    let b23 = r(&[2, 3]);
    let m34 = r(&[3, 4]);
    let v4 = r(&[4]);
    let seq = r(&[2, 9, 3]);
    let ker = r(&[3, 3, 2]);
    let kb = r(&[2]);
    let lx = r(&[2, 3]);
    let lh = r(&[2, 4]);
    let lc = r(&[2, 4]);
    let lw = r(&[7, 16]);
    let lb = r(&[16]);
    let mut rp = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x9e37);
    let pos = random_tensor(&mut rp, &[2, 3], 0.5, 2.0);
    let pos4 = random_tensor(&mut rp, &[4], 0.5, 2.0);
    vec![
        case!("matmul", vec![a23.clone(), m34.clone()], |v| v[0].matmul(v[1])?),
        case!("linear", vec![seq.clone(), m34.clone(), v4.clone()], |v| v[0]
            .linear(v[1], Some(v[2]))?),
        case!("add", vec![a23.clone(), b23.clone()], |v| v[0].add(v[1])?),
        case!("sub", vec![a23.clone(), b23.clone()], |v| v[0].sub(v[1])?),
        case!("mul", vec![a23.clone(), b23.clone()], |v| v[0].mul(v[1])?),
        case!("scale", vec![a23.clone()], |v| v[0].scale(-1.7)),
        case!("add_scalar", vec![a23.clone()], |v| v[0].add_scalar(0.4)),
        case!("relu", vec![a23.clone()], |v| v[0].relu()),
        case!("tanh", vec![a23.clone()], |v| v[0].tanh()),
        case!("sigmoid", vec![a23.clone()], |v| v[0].sigmoid()),
        case!("exp", vec![a23.clone()], |v| v[0].exp()),
        case!("log", vec![pos.clone()], |v| v[0].ln()),
        case!("square", vec![a23.clone()], |v| v[0].square()),
        case!("sqrt", vec![pos.clone()], |v| v[0].sqrt()),
        case!("abs", vec![a23.clone()], |v| v[0].abs()),
        case!("clamp", vec![a23.clone()], |v| v[0].clamp(-1.0, 1.0)),
        case!("sum", vec![a23.clone()], |v| v[0].square().sum()),
        case!("mean", vec![a23.clone()], |v| v[0].square().mean()),
        case!("sum_leading", vec![seq.clone()], |v| v[0].sum_leading()),
        case!("broadcast", vec![v4.clone()], |v| v[0].broadcast_to(&[3, 2, 4])?),
        case!("concat", vec![a23.clone(), r(&[2, 2])], |v| Var::concat(
            &[v[0], v[1], v[0]],
            1
        )?),
        case!("narrow", vec![seq.clone()], |v| v[0].narrow(1, 2, 5)?),
        case!("select", vec![seq.clone()], |v| v[0].select(1, 4)?),
        case!("reshape", vec![seq.clone()], |v| v[0].reshape(&[6, 9])?),
        case!("stack", vec![a23.clone(), b23.clone()], |v| Var::stack(&[v[0], v[1]], 1)?),
        case!("conv1d_causal", vec![seq.clone(), ker.clone(), kb.clone()], |v| v[0]
            .conv1d(v[1], Some(v[2]), 2, Padding::Causal)?),
        case!("conv1d_symmetric", vec![seq.clone(), ker.clone(), kb.clone()], |v| v[0]
            .conv1d(v[1], Some(v[2]), 3, Padding::Symmetric)?),
        case!("lstm_cell", vec![lx, lh, lc, lw, lb], |v| {
            let (h, c) = nn::lstm_cell(v[0], v[1], v[2], v[3], v[4])?;
            Var::concat(&[h, c], 1)?
        }),
        case!("gaussian_nll", vec![a23.clone(), b23.clone(), pos.clone()], |v| {
            nn::gaussian_nll(v[0], v[1], v[2])?
        }),
        case!("gaussian_nll_logvar", vec![a23.clone(), b23.clone(), r(&[2, 3])], |v| {
            nn::gaussian_nll_logvar(v[0], v[1], v[2])?
        }),
        case!("kl_diag_gaussian", vec![v4.clone(), pos4], |v| {
            nn::kl_diag_gaussian(v[0], v[1])?
        }),
    ]
}
