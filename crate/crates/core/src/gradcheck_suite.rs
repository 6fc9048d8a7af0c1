//! Finite-difference verification of every differentiable primitive and of
//! every neural architecture's full pipeline (features → forward → masked
//! loss) on a distance-2 code.

use std::rc::Rc;

use qecbench_tensor::gradcheck::{gradcheck, STEP};
use qecbench_tensor::{Graph, Propagator, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::decoders::nets::{self, param_specs, Init};
use crate::decoders::{Architecture, CodeContext, ModelConfig};
use crate::error::Result;
use crate::lattice::SurfaceCode;
use crate::noise::{extract_syndrome, sample_error_pattern};
use crate::rng::CounterRng;

/// Maximum relative error accepted by the suite.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut CounterRng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| (2.0 * rng.next_f64() - 1.0) * scale)
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn project<'g>(v: Var<'g>, seed: u64) -> qecbench_tensor::Result<Var<'g>> {
    let weights = uniform(&mut CounterRng::new(seed), &v.shape(), 1.0);
    Ok(v.mul(v.graph().constant(weights))?.sum())
}

fn outcome(
    name: &str,
    report: qecbench_tensor::Result<qecbench_tensor::gradcheck::GradcheckReport>,
) -> Result<CheckOutcome> {
    let r = report?;
    Ok(CheckOutcome {
        name: name.to_string(),
        entries: r.entries,
        max_rel_error: r.max_rel_error,
        max_abs_error: r.max_abs_error,
        passed: r.passes(TOLERANCE),
    })
}

/// Every tensor primitive on a small random instance.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = CounterRng::new(seed);
    let mut out = Vec::new();
    let ab = vec![
        uniform(&mut rng, &[4, 5], 1.0),
        uniform(&mut rng, &[5, 3], 1.0),
    ];
    out.push(outcome(
        "matmul",
        gradcheck(&ab, STEP, |_, v| project(v[0].matmul(v[1])?, 1)),
    )?);

    let pair = vec![
        uniform(&mut rng, &[3, 4], 1.0),
        uniform(&mut rng, &[3, 4], 1.0),
        uniform(&mut rng, &[4], 1.0),
    ];
    out.push(outcome(
        "add",
        gradcheck(&pair, STEP, |_, v| project(v[0].add(v[1])?, 2)),
    )?);
    out.push(outcome(
        "mul",
        gradcheck(&pair, STEP, |_, v| project(v[0].mul(v[1])?, 3)),
    )?);
    out.push(outcome(
        "scale",
        gradcheck(&pair, STEP, |_, v| project(v[0].scale(-1.5), 4)),
    )?);
    out.push(outcome(
        "add_broadcast",
        gradcheck(&pair, STEP, |_, v| project(v[0].add_broadcast(v[2])?, 5)),
    )?);
    out.push(outcome(
        "relu",
        gradcheck(&pair, STEP, |_, v| project(v[0].relu(), 6)),
    )?);
    out.push(outcome(
        "tanh",
        gradcheck(&pair, STEP, |_, v| project(v[0].tanh(), 7)),
    )?);
    out.push(outcome(
        "softmax_rows",
        gradcheck(&pair, STEP, |_, v| project(v[0].softmax_rows()?, 8)),
    )?);
    out.push(outcome(
        "sum",
        gradcheck(&pair, STEP, |_, v| Ok(v[0].sum().scale(0.5))),
    )?);
    out.push(outcome(
        "concat_slice_reshape",
        gradcheck(&pair, STEP, |_, v| {
            let c = Var::concat_last(&[v[0], v[1]])?.slice_last(2, 5)?;
            project(c.reshape(&[5, 3])?, 9)
        }),
    )?);
    let mask = uniform(&mut rng, &[3, 4], 1.0);
    out.push(outcome(
        "mul_const",
        gradcheck(&pair, STEP, |_, v| {
            project(v[0].mul_const(mask.clone())?, 10)
        }),
    )?);

    let conv = vec![
        uniform(&mut rng, &[1, 5, 5, 2], 1.0),
        uniform(&mut rng, &[3, 2, 3, 3], 1.0),
        uniform(&mut rng, &[3], 1.0),
    ];
    out.push(outcome(
        "conv2d_same",
        gradcheck(&conv, STEP, |_, v| {
            project(v[0].conv2d_same(v[1], v[2])?, 11)
        }),
    )?);
    let grid = vec![uniform(&mut rng, &[1, 6, 6, 1], 1.0)];
    out.push(outcome(
        "maxpool2",
        gradcheck(&grid, STEP, |_, v| project(v[0].maxpool2()?, 12)),
    )?);
    out.push(outcome(
        "upsample2",
        gradcheck(&grid, STEP, |_, v| project(v[0].upsample2()?, 13)),
    )?);
    out.push(outcome(
        "resize_spatial",
        gradcheck(&grid, STEP, |_, v| {
            project(v[0].resize_spatial(8, 8)?.resize_spatial(5, 7)?, 14)
        }),
    )?);

    let bmm = vec![
        uniform(&mut rng, &[2, 3, 4], 1.0),
        uniform(&mut rng, &[2, 5, 4], 1.0),
    ];
    out.push(outcome(
        "batch_matmul",
        gradcheck(&bmm, STEP, |_, v| {
            project(v[0].batch_matmul(v[1], true)?, 15)
        }),
    )?);
    let table = vec![uniform(&mut rng, &[4, 3], 1.0)];
    out.push(outcome(
        "gather_rows",
        gradcheck(&table, STEP, |_, v| {
            project(v[0].gather_rows(&[3, 0, 3, 1, 2])?, 16)
        }),
    )?);
    let dense: Vec<f64> = (0..16)
        .map(|i| if i % 3 == 0 { 0.0 } else { rng.next_f64() })
        .collect();
    let op = Rc::new(Propagator::from_dense(4, &dense));
    let stacked = vec![uniform(&mut rng, &[8, 3], 1.0)];
    out.push(outcome(
        "propagate",
        gradcheck(&stacked, STEP, |_, v| project(v[0].propagate(&op)?, 17)),
    )?);
    let logits = vec![uniform(&mut rng, &[5, 4], 2.0)];
    out.push(outcome(
        "masked_cross_entropy",
        gradcheck(&logits, STEP, |_, v| {
            v[0].masked_cross_entropy(&[0, 3, 1, 2, 0], &[true, false, true, true, false])
        }),
    )?);
    Ok(out)
}

/// Full forward + masked loss of one architecture at distance 2. Weights
/// use the model's own initialization; zero-initialized tensors (biases,
/// attention bias tables) get small random values so no unit sits exactly
/// at a relu kink. Keeping activations at their usual scale keeps the loss
/// near ln 4, so rounding noise in the central difference stays small.
pub fn architecture_check(architecture: Architecture, seed: u64) -> Result<CheckOutcome> {
    let code = SurfaceCode::new(2)?;
    let ctx = CodeContext::new(&code);
    let mut config = ModelConfig::new(architecture).with_seed(seed);
    if architecture == Architecture::Cnn {
        config.layers = 2;
    }
    let specs = param_specs(&config)?;
    let mut rng = CounterRng::new(seed).split(1);
    let params: Vec<Tensor> = nets::init_params(&config)?
        .into_iter()
        .zip(&specs)
        .map(|(t, spec)| match spec.init {
            Init::Zeros => uniform(&mut rng, &spec.shape, 0.1),
            Init::Xavier { .. } => t,
        })
        .collect();

    let mut syndromes = Vec::new();
    let mut patterns = Vec::new();
    let mut noise_rng = CounterRng::new(seed).split(2);
    for _ in 0..2 {
        let pattern = sample_error_pattern(&code, 0.3, &mut noise_rng)?;
        syndromes.push(extract_syndrome(&code, &pattern)?);
        patterns.push(pattern);
    }
    let features = ctx.features(&syndromes)?;
    let (targets, mask) = ctx.targets(&patterns)?;
    let report = gradcheck(&params, STEP, |g: &Graph, vars| {
        let x = g.constant(features.clone());
        let logits = nets::forward(&config, &specs, &ctx, vars, x, None)
            .map_err(|e| TensorError::InvalidParameter(e.to_string()))?;
        logits.masked_cross_entropy(&targets, &mask)
    });
    outcome(&format!("pipeline/{architecture}"), report)
}

pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = primitive_checks(seed)?;
    for arch in Architecture::NEURAL {
        out.push(architecture_check(arch, seed)?);
    }
    Ok(out)
}
