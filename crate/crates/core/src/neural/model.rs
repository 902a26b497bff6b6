use nalgebra::DMatrix;

use super::{normalize_inputs, Linear, ModelParams, POWER_SCALE};
use crate::error::{Error, Result};
use crate::ops::tally;
use crate::problem::ProblemInstance;

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    features: DMatrix<f64>,
    embed_hidden: DMatrix<f64>,
    blocks: Vec<BlockCache>,
    last_hidden: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    attn: DMatrix<f64>,
    context: DMatrix<f64>,
    mid: DMatrix<f64>,
    ff_hidden: DMatrix<f64>,
}

impl ForwardCache {
    pub fn n_agents(&self) -> usize {
        self.features.nrows()
    }
}

fn affine(x: &DMatrix<f64>, l: &Linear) -> DMatrix<f64> {
    let mut y = x * &l.w;
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col.add_scalar_mut(l.b[j]);
    }
    tally(2 * x.nrows() * l.w.nrows() * l.w.ncols() + y.len());
    y
}

fn tanh(x: &DMatrix<f64>) -> DMatrix<f64> {
    tally(x.len());
    x.map(f64::tanh)
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let total = row.sum();
        row.apply(|x| *x /= total);
    }
    tally(4 * s.len());
    out
}

/// Virtual prediction `v` in kW, one entry per agent (row-major when `d_out > 1`).
pub fn forward(params: &ModelParams, instance: &ProblemInstance) -> Result<Vec<f64>> {
    Ok(forward_with_cache(params, instance)?.0)
}

pub fn forward_with_cache(
    params: &ModelParams,
    instance: &ProblemInstance,
) -> Result<(Vec<f64>, ForwardCache)> {
    forward_features(params, normalize_inputs(instance))
}

/// Forward pass from an already-built feature matrix (one row per agent).
pub fn forward_features(
    params: &ModelParams,
    features: DMatrix<f64>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let hyper = params.hyper;
    if features.ncols() != hyper.d_in {
        return Err(Error::DimensionMismatch {
            expected: hyper.d_in,
            got: features.ncols(),
        });
    }
    if features.nrows() == 0 {
        return Err(Error::InvalidInstance("no agents".into()));
    }
    let n = features.nrows();
    let scale = 1.0 / (hyper.d_h as f64).sqrt();

    let embed_hidden = tanh(&affine(&features, &params.embed1));
    let mut h = affine(&embed_hidden, &params.embed2);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (idx, block) in params.blocks.iter().enumerate() {
        let q = affine(&h, &block.query);
        let k = affine(&h, &block.key);
        let v = affine(&h, &block.value);
        let scores = (&q * k.transpose()) * scale;
        let attn = softmax_rows(&scores);
        let context = &attn * &v;
        tally(4 * n * n * hyper.d_h);
        let mid = &h + affine(&context, &block.output);
        let ff_hidden = tanh(&affine(&mid, &block.ff1));
        let out = &mid + affine(&ff_hidden, &block.ff2);
        tally(2 * n * hyper.d_h);
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::NumericFailure { block: idx });
        }
        blocks.push(BlockCache {
            input: h,
            q,
            k,
            v,
            attn,
            context,
            mid,
            ff_hidden,
        });
        h = out;
    }
    let y = affine(&h, &params.head);
    let prediction: Vec<f64> = y.transpose().iter().map(|x| x * POWER_SCALE).collect();
    tally(prediction.len());
    if !prediction.iter().all(|x| x.is_finite()) {
        return Err(Error::NumericFailure {
            block: params.blocks.len(),
        });
    }
    Ok((
        prediction,
        ForwardCache {
            fingerprint: params.fingerprint(),
            features,
            embed_hidden,
            blocks,
            last_hidden: h,
        },
    ))
}

fn accumulate_linear(grad: &mut Linear, input: &DMatrix<f64>, d_out: &DMatrix<f64>) {
    grad.w += input.transpose() * d_out;
    for (j, col) in d_out.column_iter().enumerate() {
        grad.b[j] += col.sum();
    }
}

fn tanh_backward(activated: &DMatrix<f64>, upstream: &DMatrix<f64>) -> DMatrix<f64> {
    upstream.zip_map(activated, |g, a| g * (1.0 - a * a))
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient `upstream` on the prediction (same layout as [`forward`]'s output).
pub fn backward(params: &ModelParams, cache: &ForwardCache, upstream: &[f64]) -> Result<ModelParams> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache(
            "parameters changed since the forward pass".into(),
        ));
    }
    let hyper = params.hyper;
    let n = cache.n_agents();
    if upstream.len() != n * hyper.d_out {
        return Err(Error::StaleCache(format!(
            "upstream gradient has {} entries, cache expects {}",
            upstream.len(),
            n * hyper.d_out
        )));
    }
    let scale = 1.0 / (hyper.d_h as f64).sqrt();
    let mut grads = params.zeros_like();

    let d_y = DMatrix::from_row_slice(n, hyper.d_out, upstream) * POWER_SCALE;
    accumulate_linear(&mut grads.head, &cache.last_hidden, &d_y);
    let mut d_h = &d_y * params.head.w.transpose();

    for (idx, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let g = &mut grads.blocks[idx];
        // out = mid + ff2(tanh(ff1(mid)))
        accumulate_linear(&mut g.ff2, &bc.ff_hidden, &d_h);
        let d_ff_pre = tanh_backward(&bc.ff_hidden, &(&d_h * block.ff2.w.transpose()));
        accumulate_linear(&mut g.ff1, &bc.mid, &d_ff_pre);
        let d_mid = &d_h + &d_ff_pre * block.ff1.w.transpose();

        // mid = input + output(attn · v)
        accumulate_linear(&mut g.output, &bc.context, &d_mid);
        let d_context = &d_mid * block.output.w.transpose();
        let d_attn = &d_context * bc.v.transpose();
        let d_v = bc.attn.transpose() * &d_context;
        let mut d_scores = bc.attn.component_mul(&d_attn);
        for (mut row, attn_row) in d_scores.row_iter_mut().zip(bc.attn.row_iter()) {
            let inner = row.sum();
            row -= attn_row * inner;
        }
        d_scores *= scale;
        let d_q = &d_scores * &bc.k;
        let d_k = d_scores.transpose() * &bc.q;

        accumulate_linear(&mut g.query, &bc.input, &d_q);
        accumulate_linear(&mut g.key, &bc.input, &d_k);
        accumulate_linear(&mut g.value, &bc.input, &d_v);
        d_h = d_mid
            + &d_q * block.query.w.transpose()
            + &d_k * block.key.w.transpose()
            + &d_v * block.value.w.transpose();
    }

    accumulate_linear(&mut grads.embed2, &cache.embed_hidden, &d_h);
    let d_embed_pre = tanh_backward(&cache.embed_hidden, &(&d_h * params.embed2.w.transpose()));
    accumulate_linear(&mut grads.embed1, &cache.features, &d_embed_pre);
    Ok(grads)
}
