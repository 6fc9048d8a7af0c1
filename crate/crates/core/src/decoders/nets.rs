//! Parameter layouts and forward passes of the neural decoders.
//!
//! Every network consumes stacked node features `[batch · n, 3]` and emits
//! logits `[batch · n, 4]`. Spatial models view the same buffer as a
//! channels-last grid `[batch, side, side, 3]`.

use qecbench_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::config::{Architecture, ModelConfig};
use super::context::{CodeContext, DEGREE_SLOTS, HOP_BUCKETS};
use crate::error::{invalid, Result};
use crate::noise::{ErrorClass, FeatureMatrix};
use crate::rng::CounterRng;

const IN: usize = FeatureMatrix::CHANNELS;
const OUT: usize = ErrorClass::ALL.len();

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![fan_in, fan_out],
            init: Init::Xavier { fan_in, fan_out },
        });
    }

    fn bias(&mut self, name: &str, width: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![width],
            init: Init::Zeros,
        });
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.dense(name, fan_in, fan_out);
        self.bias(name, fan_out);
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.kernel"),
            shape: vec![c_out, c_in, 3, 3],
            init: Init::Xavier {
                fan_in: 9 * c_in,
                fan_out: 9 * c_out,
            },
        });
        self.bias(name, c_out);
    }

    fn table(&mut self, name: &str, rows: usize, cols: usize, init: Init) {
        self.0.push(ParamSpec {
            name: name.to_string(),
            shape: vec![rows, cols],
            init,
        });
    }
}

/// Parameter names, shapes and initializers in storage order.
pub fn param_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let h = config.hidden;
    let mut s = Specs::default();
    match config.architecture {
        Architecture::Cnn => {
            for l in 0..config.layers {
                s.conv(&format!("conv{l}"), if l == 0 { IN } else { h }, h);
            }
        }
        Architecture::UNet => {
            for l in 0..config.layers {
                s.conv(&format!("enc{l}"), if l == 0 { IN } else { h }, h);
            }
            s.conv("bottleneck", h, 2 * h);
            let mut width = 2 * h;
            for l in (0..config.layers).rev() {
                s.conv(&format!("dec{l}"), width + h, h);
                width = h;
            }
        }
        Architecture::Gcn => {
            for l in 0..config.layers {
                s.linear(&format!("gcn{l}"), if l == 0 { IN } else { h }, h);
            }
        }
        Architecture::Gcnii => {
            s.linear("input", IN, h);
            for l in 0..config.layers {
                s.dense(&format!("gcnii{l}"), h, h);
            }
        }
        Architecture::Appnp => {
            s.linear("input", IN, h);
            for l in 0..config.layers {
                s.dense(&format!("appnp{l}"), h, h);
            }
        }
        Architecture::MultiGnn => s.dense("scales", IN * config.layers, h),
        Architecture::GraphTransformer => {
            let hd = config.heads * config.key_dim;
            s.linear("input", IN, h);
            s.table(
                "degree_embedding",
                DEGREE_SLOTS,
                h,
                Init::Xavier {
                    fan_in: DEGREE_SLOTS,
                    fan_out: h,
                },
            );
            for l in 0..config.layers {
                s.dense(&format!("attn{l}.query"), h, hd);
                s.dense(&format!("attn{l}.key"), h, hd);
                s.dense(&format!("attn{l}.value"), h, hd);
                s.linear(&format!("attn{l}.out"), hd, h);
                s.table(
                    &format!("attn{l}.hop_bias"),
                    HOP_BUCKETS,
                    config.heads,
                    Init::Zeros,
                );
                s.linear(&format!("ffn{l}.inner"), h, 2 * h);
                s.linear(&format!("ffn{l}.outer"), 2 * h, h);
            }
        }
        Architecture::Lookup | Architecture::TrivialNoError => return Ok(Vec::new()),
    }
    s.linear("head", h, OUT);
    Ok(s.0)
}

pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(param_specs(config)?.iter().map(ParamSpec::len).sum())
}

/// Fresh parameters; parameter `i` draws from stream `i` of the config seed.
pub fn init_params(config: &ModelConfig) -> Result<Vec<Tensor>> {
    let root = CounterRng::new(config.seed);
    Ok(param_specs(config)?
        .iter()
        .enumerate()
        .map(|(i, spec)| match spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = root.split(i as u64);
                Tensor::from_fn(&spec.shape, |_| (2.0 * rng.next_f64() - 1.0) * bound)
            }
        })
        .collect())
}

/// Dropout state for a training-mode forward pass.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut CounterRng,
}

impl Dropout<'_> {
    fn apply<'g>(&mut self, x: Var<'g>) -> Result<Var<'g>> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = x.shape();
        let rng = &mut *self.rng;
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.next_f64() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        Ok(x.mul_const(mask)?)
    }
}

struct Cursor<'a, 'g> {
    specs: &'a [ParamSpec],
    vars: &'a [Var<'g>],
    next: usize,
}

impl<'g> Cursor<'_, 'g> {
    fn take(&mut self, name: &str) -> Result<Var<'g>> {
        let i = self.next;
        match self.specs.get(i) {
            Some(spec) if spec.name == name && i < self.vars.len() => {
                if self.vars[i].shape() != spec.shape {
                    return Err(invalid(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        self.vars[i].shape(),
                        spec.shape
                    )));
                }
                self.next += 1;
                Ok(self.vars[i])
            }
            _ => Err(invalid(format!(
                "parameter `{name}` missing for this configuration"
            ))),
        }
    }

    fn linear(&mut self, name: &str, x: Var<'g>) -> Result<Var<'g>> {
        let w = self.take(&format!("{name}.weight"))?;
        let b = self.take(&format!("{name}.bias"))?;
        Ok(x.matmul(w)?.add_broadcast(b)?)
    }

    fn conv(&mut self, name: &str, x: Var<'g>) -> Result<Var<'g>> {
        let k = self.take(&format!("{name}.kernel"))?;
        let b = self.take(&format!("{name}.bias"))?;
        Ok(x.conv2d_same(k, b)?.relu())
    }
}

/// `relu(Â H W + b)`; without `bias` this is the bare propagation rule.
pub fn gcn_layer<'g>(
    ctx: &CodeContext,
    h: Var<'g>,
    w: Var<'g>,
    bias: Option<Var<'g>>,
) -> Result<Var<'g>> {
    let mut z = h.matmul(w)?.propagate(ctx.normalized())?;
    if let Some(b) = bias {
        z = z.add_broadcast(b)?;
    }
    Ok(z.relu())
}

/// `relu((((1-α) Â H + α H0) ((1-β) I + β W))`.
pub fn gcnii_layer<'g>(
    ctx: &CodeContext,
    h: Var<'g>,
    h0: Var<'g>,
    w: Var<'g>,
    alpha: f64,
    beta: f64,
) -> Result<Var<'g>> {
    let support = h
        .propagate(ctx.normalized())?
        .scale(1.0 - alpha)
        .add(h0.scale(alpha))?;
    let mapped = support
        .scale(1.0 - beta)
        .add(support.matmul(w)?.scale(beta))?;
    Ok(mapped.relu())
}

/// Identity-mapping weight of GCNII layer `l` (1-based): `ln(λ / l + 1)`.
pub fn gcnii_beta(lambda: f64, l: usize) -> f64 {
    (lambda / l as f64).ln_1p()
}

/// `relu((1-α) Â H W + α H0 W)`.
pub fn appnp_layer<'g>(
    ctx: &CodeContext,
    h: Var<'g>,
    h0: Var<'g>,
    w: Var<'g>,
    alpha: f64,
) -> Result<Var<'g>> {
    let propagated = h.matmul(w)?.propagate(ctx.normalized())?.scale(1.0 - alpha);
    Ok(propagated.add(h0.matmul(w)?.scale(alpha))?.relu())
}

/// Row-stochastic attention `softmax(Q Kᵀ / √d_K + bias)` for one head;
/// `q`, `k` are `[batch, n, d_K]`, `bias` is `[n, n]`.
pub fn attention_probabilities<'g>(q: Var<'g>, k: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
    let shape = q.shape();
    let (batch, n, dk) = (shape[0], shape[1], shape[2]);
    let scores = q
        .batch_matmul(k, true)?
        .scale(1.0 / (dk as f64).sqrt())
        .add_broadcast(bias)?;
    Ok(scores
        .reshape(&[batch * n, n])?
        .softmax_rows()?
        .reshape(&[batch, n, n])?)
}

/// Logits `[batch · n, 4]` for stacked features `[batch · n, 3]`.
/// `dropout` is only consulted by architectures that use it.
pub fn forward<'g>(
    config: &ModelConfig,
    specs: &[ParamSpec],
    ctx: &CodeContext,
    params: &[Var<'g>],
    features: Var<'g>,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var<'g>> {
    let n = ctx.node_count();
    let fshape = features.shape();
    if fshape.len() != 2 || fshape[1] != IN || !fshape[0].is_multiple_of(n) {
        return Err(invalid(format!(
            "features of shape {fshape:?} do not stack {n}-node codes"
        )));
    }
    if specs.len() != params.len() {
        return Err(invalid(format!(
            "{} parameters supplied, configuration needs {}",
            params.len(),
            specs.len()
        )));
    }
    let batch = fshape[0] / n;
    let side = ctx.side();
    let mut p = Cursor {
        specs,
        vars: params,
        next: 0,
    };
    let hidden = match config.architecture {
        Architecture::Cnn => {
            let mut x = features.reshape(&[batch, side, side, IN])?;
            for l in 0..config.layers {
                x = p.conv(&format!("conv{l}"), x)?;
            }
            x.reshape(&[batch * n, config.hidden])?
        }
        Architecture::UNet => {
            let depth = config.layers;
            let unit = 1 << depth;
            let padded = side.div_ceil(unit) * unit;
            let mut x = features
                .reshape(&[batch, side, side, IN])?
                .resize_spatial(padded, padded)?;
            let mut skips = Vec::with_capacity(depth);
            for l in 0..depth {
                x = p.conv(&format!("enc{l}"), x)?;
                skips.push(x);
                x = x.maxpool2()?;
            }
            x = p.conv("bottleneck", x)?;
            for l in (0..depth).rev() {
                let up = x.upsample2()?;
                x = p.conv(&format!("dec{l}"), Var::concat_last(&[up, skips[l]])?)?;
            }
            x.resize_spatial(side, side)?
                .reshape(&[batch * n, config.hidden])?
        }
        Architecture::Gcn => {
            let mut h = features;
            for l in 0..config.layers {
                let w = p.take(&format!("gcn{l}.weight"))?;
                let b = p.take(&format!("gcn{l}.bias"))?;
                h = gcn_layer(ctx, h, w, Some(b))?;
            }
            h
        }
        Architecture::Gcnii => {
            let h0 = p.linear("input", features)?.relu();
            let mut h = h0;
            for l in 0..config.layers {
                let w = p.take(&format!("gcnii{l}.weight"))?;
                h = gcnii_layer(ctx, h, h0, w, config.alpha, gcnii_beta(config.beta, l + 1))?;
            }
            h
        }
        Architecture::Appnp => {
            let h0 = p.linear("input", features)?.relu();
            let mut h = h0;
            for l in 0..config.layers {
                let w = p.take(&format!("appnp{l}.weight"))?;
                h = appnp_layer(ctx, h, h0, w, config.alpha)?;
            }
            h
        }
        Architecture::MultiGnn => {
            let mut scales = Vec::with_capacity(config.layers);
            let mut x = features;
            for _ in 0..config.layers {
                x = x.propagate(ctx.adjacency())?;
                scales.push(x);
            }
            let w = p.take("scales.weight")?;
            Var::concat_last(&scales)?.matmul(w)?.relu()
        }
        Architecture::GraphTransformer => {
            transformer(config, ctx, &mut p, features, batch, &mut dropout)?
        }
        Architecture::Lookup | Architecture::TrivialNoError => {
            return Err(invalid(format!(
                "{} has no neural forward pass",
                config.architecture
            )));
        }
    };
    let logits = p.linear("head", hidden)?;
    if p.next != params.len() {
        return Err(invalid("configuration left parameters unused"));
    }
    Ok(logits)
}

fn transformer<'g>(
    config: &ModelConfig,
    ctx: &CodeContext,
    p: &mut Cursor<'_, 'g>,
    features: Var<'g>,
    batch: usize,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Var<'g>> {
    let n = ctx.node_count();
    let (heads, dk) = (config.heads, config.key_dim);
    let degree_rows: Vec<usize> = (0..batch)
        .flat_map(|_| ctx.degrees().iter().copied())
        .collect();
    let mut h = p
        .linear("input", features)?
        .add(p.take("degree_embedding")?.gather_rows(&degree_rows)?)?;
    for l in 0..config.layers {
        let q = h.matmul(p.take(&format!("attn{l}.query.weight"))?)?;
        let k = h.matmul(p.take(&format!("attn{l}.key.weight"))?)?;
        let v = h.matmul(p.take(&format!("attn{l}.value.weight"))?)?;
        let out_w = p.take(&format!("attn{l}.out.weight"))?;
        let out_b = p.take(&format!("attn{l}.out.bias"))?;
        let bias = p
            .take(&format!("attn{l}.hop_bias"))?
            .gather_rows(ctx.hop_buckets())?;
        let mut per_head = Vec::with_capacity(heads);
        for head in 0..heads {
            let split = |t: Var<'g>| t.slice_last(head * dk, dk)?.reshape(&[batch, n, dk]);
            let probs = attention_probabilities(
                split(q)?,
                split(k)?,
                bias.slice_last(head, 1)?.reshape(&[n, n])?,
            )?;
            per_head.push(
                probs
                    .batch_matmul(split(v)?, false)?
                    .reshape(&[batch * n, dk])?,
            );
        }
        let mut attended = Var::concat_last(&per_head)?
            .matmul(out_w)?
            .add_broadcast(out_b)?;
        if let Some(d) = dropout.as_mut() {
            attended = d.apply(attended)?;
        }
        h = h.add(attended)?;
        let mut ff = p.linear(&format!("ffn{l}.inner"), h)?.relu();
        ff = p.linear(&format!("ffn{l}.outer"), ff)?;
        if let Some(d) = dropout.as_mut() {
            ff = d.apply(ff)?;
        }
        h = h.add(ff)?;
    }
    Ok(h)
}

/// Convenience forward with no gradient tracking.
pub fn infer(
    config: &ModelConfig,
    specs: &[ParamSpec],
    ctx: &CodeContext,
    params: &[Tensor],
    features: Tensor,
) -> Result<Tensor> {
    let g = Graph::new();
    let vars: Vec<Var<'_>> = params.iter().map(|t| g.constant(t.clone())).collect();
    let x = g.constant(features);
    let logits = forward(config, specs, ctx, &vars, x, None)?;
    Ok((*logits.value()).clone())
}
