//! Decoder-only transformer with relative position self-attention.
//!
//! Pre-LayerNorm blocks: `x + Attn(LN(x))` then `x + FFN(LN(x))`, a final
//! LayerNorm and a linear head over the vocabulary. There are no absolute
//! position embeddings; each head learns one vector per relative offset
//! `0..R`, and offsets of `R` or more share the last one. The relative
//! logits are produced from `Q·Eᵀ` with the pad/reshape/slice skew.
//!
//! All parameters live in one flat `f64` buffer described by named tensor
//! specs, so optimizer state, gradients and checkpoints are flat buffers of
//! the same layout. Gradients are computed by hand.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenId, VOCAB_SIZE};
use super::{OverpaintError, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    /// Number of learned relative offsets per head.
    pub rel_window: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            layers: 4,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            max_len: 1024,
            rel_window: 512,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Two layers, two heads, width 32.
    pub fn tiny() -> Self {
        ModelConfig { layers: 2, heads: 2, d_model: 32, d_ff: 128, rel_window: 256, dropout: 0.0, ..Self::default() }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(OverpaintError::BadConfig(why.to_string()));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_len < 2 {
            return bad("layers, heads, d_model, d_ff must be positive and max_len at least 2");
        }
        if self.d_model % self.heads != 0 {
            return bad("d_model must be divisible by heads");
        }
        if self.rel_window == 0 || self.rel_window > self.max_len {
            return bad("rel_window must be in 1..=max_len");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must match the tokenizer");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    rel: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<TensorSpec>,
    tok_emb: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Layout {
        let mut specs = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            specs.push(TensorSpec { name, shape, offset });
            offset
        };
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        let tok_emb = add("tok_emb".into(), vec![v, d]);
        let mut layers = Vec::new();
        for l in 0..c.layers {
            let p = |n: &str| format!("layers.{l}.{n}");
            layers.push(LayerOffsets {
                ln1_g: add(p("ln1.gain"), vec![d]),
                ln1_b: add(p("ln1.bias"), vec![d]),
                wq: add(p("attn.wq"), vec![d, d]),
                wk: add(p("attn.wk"), vec![d, d]),
                wv: add(p("attn.wv"), vec![d, d]),
                wo: add(p("attn.wo"), vec![d, d]),
                bo: add(p("attn.bo"), vec![d]),
                rel: add(p("attn.rel"), vec![c.heads, c.rel_window, c.d_head()]),
                ln2_g: add(p("ln2.gain"), vec![d]),
                ln2_b: add(p("ln2.bias"), vec![d]),
                w1: add(p("ffn.w1"), vec![d, f]),
                b1: add(p("ffn.b1"), vec![f]),
                w2: add(p("ffn.w2"), vec![f, d]),
                b2: add(p("ffn.b2"), vec![d]),
            });
        }
        let lnf_g = add("final_ln.gain".into(), vec![d]);
        let lnf_b = add("final_ln.bias".into(), vec![d]);
        let w_out = add("head.weight".into(), vec![d, v]);
        let b_out = add("head.bias".into(), vec![v]);
        Layout { specs, tok_emb, layers, lnf_g, lnf_b, w_out, b_out, total }
    }
}

fn view1(data: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&data[off..off + n])
}

fn view2(data: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &data[off..off + r * c]).expect("layout matches shape")
}

fn view1_mut(data: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut data[off..off + n])
}

fn view2_mut(data: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut data[off..off + r * c]).expect("layout matches shape")
}

/// `c += aᵀ·b`
fn acc_at_b(c: &mut ArrayViewMut2<f64>, a: &ArrayView2<f64>, b: &ArrayView2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, c);
}

/// Pads a zero column on the left of an `L×L` matrix, reads the buffer as
/// `(L+1)×L` and drops the first row. For `j <= i` the result holds
/// `qe[i, L-1-i+j]`, the logit for relative offset `i - j`; entries above
/// the diagonal are meaningless and must be masked.
pub fn skew(qe: &Array2<f64>) -> Array2<f64> {
    let l = qe.nrows();
    let mut padded = Array2::<f64>::zeros((l, l + 1));
    padded.slice_mut(s![.., 1..]).assign(qe);
    let flat: Vec<f64> = padded.iter().copied().collect();
    Array2::from_shape_vec((l + 1, l), flat).expect("L*(L+1) elements").slice(s![1.., ..]).to_owned()
}

/// Adjoint of [`skew`] restricted to the causal triangle.
fn unskew_grad(ds: &Array2<f64>) -> Array2<f64> {
    let l = ds.nrows();
    let mut dqe = Array2::zeros((l, l));
    for i in 0..l {
        for j in 0..=i {
            dqe[[i, l - 1 - i + j]] = ds[[i, j]];
        }
    }
    dqe
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, inv_std })
}

fn ln_forward_row(x: &Array1<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let centred = x - mean;
    let var = centred.iter().map(|v| v * v).sum::<f64>() / d;
    centred * (1.0 / (var + LN_EPS).sqrt()) * &g + &b
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: ArrayView1<f64>,
    grad: &mut [f64],
    g_off: usize,
    b_off: usize,
) -> Array2<f64> {
    let d = dy.ncols();
    view1_mut(grad, b_off, d).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    view1_mut(grad, g_off, d).scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    let dxhat = dy * &g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.sum() / d as f64;
        let m2 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let inv = cache.inv_std[i];
        for k in 0..d {
            dx[[i, k]] = inv * (dh[k] - m1 - xh[k] * m2);
        }
    }
    dx
}

fn softmax_causal(logits: &mut Array2<f64>) {
    for (i, mut row) in logits.rows_mut().into_iter().enumerate() {
        let max = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.slice_mut(s![..=i]).mapv_inplace(|v| v / sum);
    }
}

struct LayerCache {
    ln1: LnCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    mask1: Option<Array2<f64>>,
    ln2: LnCache,
    h2: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    mask2: Option<Array2<f64>>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Array2<f64>,
}

/// A model: configuration plus a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl Model {
    /// Random initialisation from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut params = vec![0.0; layout.total];
        for spec in &layout.specs {
            let slot = &mut params[spec.offset..spec.offset + spec.len()];
            if spec.name.ends_with(".gain") {
                slot.fill(1.0);
            } else if spec.name.ends_with(".bias") || spec.name.ends_with(".bo") || spec.name.contains(".b1") || spec.name.contains(".b2") {
                slot.fill(0.0);
            } else {
                slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
            }
        }
        Ok(Model { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(OverpaintError::BadCheckpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Model { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() > self.config.max_len {
            return Err(OverpaintError::TooLong { len: tokens.len(), max_len: self.config.max_len });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(OverpaintError::BadToken(t));
        }
        Ok(())
    }

    /// Relative embeddings of head `h` laid out for a length-`l` skew: row
    /// `m` holds the vector for offset `min(l-1-m, R-1)`.
    fn rel_ext(&self, lo: &LayerOffsets, h: usize, l: usize) -> Array2<f64> {
        let (r, dh) = (self.config.rel_window, self.config.d_head());
        let rel = view2(&self.params, lo.rel + h * r * dh, r, dh);
        let mut e = Array2::zeros((l, dh));
        for m in 0..l {
            e.row_mut(m).assign(&rel.row((l - 1 - m).min(r - 1)));
        }
        e
    }

    fn attention(&self, lo: &LayerOffsets, h1: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
        let c = &self.config;
        let (l, d, dh) = (h1.nrows(), c.d_model, c.d_head());
        let p = &self.params;
        let q = h1.dot(&view2(p, lo.wq, d, d));
        let k = h1.dot(&view2(p, lo.wk, d, d));
        let v = h1.dot(&view2(p, lo.wv, d, d));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros((l, d));
        let mut probs = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
            let srel = skew(&qh.dot(&self.rel_ext(lo, h, l).t()));
            let mut logits = qh.dot(&kh.t()) + &srel;
            logits *= scale;
            softmax_causal(&mut logits);
            ctx.slice_mut(cols).assign(&logits.dot(&vh));
            probs.push(logits);
        }
        (q, k, v, probs, ctx)
    }

    fn run(&self, tokens: &[TokenId], mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, ForwardCache) {
        let c = &self.config;
        let (l, d, f) = (tokens.len(), c.d_model, c.d_ff);
        let p = &self.params;
        let emb = view2(p, self.layout.tok_emb, c.vocab_size, d);
        let mut x = Array2::zeros((l, d));
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).assign(&emb.row(t as usize));
        }
        let keep = 1.0 - c.dropout;
        let dropout_mask = |rng: &mut Option<&mut ChaCha8Rng>| -> Option<Array2<f64>> {
            let r = rng.as_mut()?;
            if c.dropout == 0.0 {
                return None;
            }
            Some(Array2::from_shape_fn((l, d), |_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
        };

        let mut caches = Vec::with_capacity(c.layers);
        for lo in &self.layout.layers {
            let (h1, ln1) = ln_forward(&x, view1(p, lo.ln1_g, d), view1(p, lo.ln1_b, d));
            let (q, k, v, probs, ctx) = self.attention(lo, &h1);
            let mut a = ctx.dot(&view2(p, lo.wo, d, d)) + &view1(p, lo.bo, d);
            let mask1 = dropout_mask(&mut rng);
            if let Some(m) = &mask1 {
                a *= m;
            }
            x += &a;
            let (h2, ln2) = ln_forward(&x, view1(p, lo.ln2_g, d), view1(p, lo.ln2_b, d));
            let pre = h2.dot(&view2(p, lo.w1, d, f)) + &view1(p, lo.b1, f);
            let act = pre.mapv(|v| v.max(0.0));
            let mut out = act.dot(&view2(p, lo.w2, f, d)) + &view1(p, lo.b2, d);
            let mask2 = dropout_mask(&mut rng);
            if let Some(m) = &mask2 {
                out *= m;
            }
            x += &out;
            caches.push(LayerCache { ln1, h1, q, k, v, probs, ctx, mask1, ln2, h2, pre, act, mask2 });
        }
        let (hf, lnf) = ln_forward(&x, view1(p, self.layout.lnf_g, d), view1(p, self.layout.lnf_b, d));
        let logits = hf.dot(&view2(p, self.layout.w_out, d, c.vocab_size)) + &view1(p, self.layout.b_out, c.vocab_size);
        (logits, ForwardCache { layers: caches, lnf, hf })
    }

    /// Next-token logits at every position, without dropout.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Array2<f64>> {
        self.check_tokens(tokens)?;
        Ok(self.run(tokens, None).0)
    }

    /// Attention weights of every head in `layer`, each `L×L`.
    pub fn attention_weights(&self, tokens: &[TokenId], layer: usize) -> Result<Vec<Array2<f64>>> {
        self.check_tokens(tokens)?;
        let (_, mut cache) = self.run(tokens, None);
        if layer >= cache.layers.len() {
            return Err(OverpaintError::BadConfig(format!("no layer {layer}")));
        }
        Ok(cache.layers.swap_remove(layer).probs)
    }

    /// Summed cross-entropy of `tokens[i+1]` given `tokens[..=i]` over the
    /// positions where `weights[i]` is set, and the number of such positions.
    pub fn loss(&self, tokens: &[TokenId], weights: &[bool]) -> Result<(f64, usize)> {
        self.check_tokens(tokens)?;
        if tokens.len() < 2 {
            return Ok((0.0, 0));
        }
        let (logits, _) = self.run(&tokens[..tokens.len() - 1], None);
        Ok(cross_entropy(&logits, &tokens[1..], weights).0)
    }

    /// Like [`Model::loss`] but also returns the gradient of the summed loss.
    /// Dropout is applied when `rng` is given.
    pub fn loss_and_grad(
        &self,
        tokens: &[TokenId],
        weights: &[bool],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, usize, Vec<f64>)> {
        self.check_tokens(tokens)?;
        let mut grad = vec![0.0; self.layout.total];
        if tokens.len() < 2 {
            return Ok((0.0, 0, grad));
        }
        let inputs = &tokens[..tokens.len() - 1];
        let (logits, cache) = self.run(inputs, rng);
        let ((loss, count), dlogits) = cross_entropy(&logits, &tokens[1..], weights);
        if count > 0 {
            self.backward(inputs, &cache, dlogits, &mut grad);
        }
        Ok((loss, count, grad))
    }

    fn backward(&self, tokens: &[TokenId], cache: &ForwardCache, dlogits: Array2<f64>, grad: &mut [f64]) {
        let c = &self.config;
        let (l, d, f, v, dh) = (tokens.len(), c.d_model, c.d_ff, c.vocab_size, c.d_head());
        let p = &self.params;
        let lay = &self.layout;

        acc_at_b(&mut view2_mut(grad, lay.w_out, d, v), &cache.hf.view(), &dlogits.view());
        view1_mut(grad, lay.b_out, v).scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
        let dhf = dlogits.dot(&view2(p, lay.w_out, d, v).t());
        let mut dx = ln_backward(&dhf, &cache.lnf, view1(p, lay.lnf_g, d), grad, lay.lnf_g, lay.lnf_b);

        let scale = 1.0 / (dh as f64).sqrt();
        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // FFN branch.
            let mut dout = dx.clone();
            if let Some(m) = &lc.mask2 {
                dout *= m;
            }
            acc_at_b(&mut view2_mut(grad, lo.w2, f, d), &lc.act.view(), &dout.view());
            view1_mut(grad, lo.b2, d).scaled_add(1.0, &dout.sum_axis(Axis(0)));
            let mut dpre = dout.dot(&view2(p, lo.w2, f, d).t());
            dpre.zip_mut_with(&lc.pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            acc_at_b(&mut view2_mut(grad, lo.w1, d, f), &lc.h2.view(), &dpre.view());
            view1_mut(grad, lo.b1, f).scaled_add(1.0, &dpre.sum_axis(Axis(0)));
            let dh2 = dpre.dot(&view2(p, lo.w1, d, f).t());
            dx += &ln_backward(&dh2, &lc.ln2, view1(p, lo.ln2_g, d), grad, lo.ln2_g, lo.ln2_b);

            // Attention branch.
            let mut da = dx.clone();
            if let Some(m) = &lc.mask1 {
                da *= m;
            }
            acc_at_b(&mut view2_mut(grad, lo.wo, d, d), &lc.ctx.view(), &da.view());
            view1_mut(grad, lo.bo, d).scaled_add(1.0, &da.sum_axis(Axis(0)));
            let dctx = da.dot(&view2(p, lo.wo, d, d).t());
            let mut dq = Array2::zeros((l, d));
            let mut dk = Array2::zeros((l, d));
            let mut dv = Array2::zeros((l, d));
            for h in 0..c.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (qh, kh, vh) = (lc.q.slice(cols), lc.k.slice(cols), lc.v.slice(cols));
                let prob = &lc.probs[h];
                let dctx_h = dctx.slice(cols);
                dv.slice_mut(cols).assign(&prob.t().dot(&dctx_h));
                let dp = dctx_h.dot(&vh.t());
                // Softmax backward; zero-probability entries get zero gradient.
                let mut dlog = Array2::zeros((l, l));
                for i in 0..l {
                    let dot: f64 = (0..=i).map(|j| dp[[i, j]] * prob[[i, j]]).sum();
                    for j in 0..=i {
                        dlog[[i, j]] = prob[[i, j]] * (dp[[i, j]] - dot) * scale;
                    }
                }
                let e = self.rel_ext(lo, h, l);
                let dqe = unskew_grad(&dlog);
                let mut dqh = dlog.dot(&kh) + dqe.dot(&e);
                dk.slice_mut(cols).assign(&dlog.t().dot(&qh));
                let de = dqe.t().dot(&qh);
                let r = c.rel_window;
                let mut drel = view2_mut(grad, lo.rel + h * r * dh, r, dh);
                for m in 0..l {
                    let mut row = drel.row_mut((l - 1 - m).min(r - 1));
                    row += &de.row(m);
                }
                dq.slice_mut(cols).assign(&dqh);
                dqh.fill(0.0);
            }
            acc_at_b(&mut view2_mut(grad, lo.wq, d, d), &lc.h1.view(), &dq.view());
            acc_at_b(&mut view2_mut(grad, lo.wk, d, d), &lc.h1.view(), &dk.view());
            acc_at_b(&mut view2_mut(grad, lo.wv, d, d), &lc.h1.view(), &dv.view());
            let dh1 = dq.dot(&view2(p, lo.wq, d, d).t())
                + dk.dot(&view2(p, lo.wk, d, d).t())
                + dv.dot(&view2(p, lo.wv, d, d).t());
            dx += &ln_backward(&dh1, &lc.ln1, view1(p, lo.ln1_g, d), grad, lo.ln1_g, lo.ln1_b);
        }
        let mut demb = view2_mut(grad, lay.tok_emb, v, d);
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = demb.row_mut(t as usize);
            row += &dx.row(i);
        }
    }

    pub fn start_decoding(&self) -> DecodeState {
        DecodeState {
            keys: vec![Vec::new(); self.config.layers],
            values: vec![Vec::new(); self.config.layers],
            pos: 0,
        }
    }

    /// Feeds one token and returns the next-token logits, reusing the cached
    /// keys and values of earlier positions.
    pub fn step(&self, state: &mut DecodeState, token: TokenId) -> Result<Array1<f64>> {
        let c = &self.config;
        if state.pos >= c.max_len {
            return Err(OverpaintError::TooLong { len: state.pos + 1, max_len: c.max_len });
        }
        if token as usize >= c.vocab_size {
            return Err(OverpaintError::BadToken(token));
        }
        let (d, f, dh, r) = (c.d_model, c.d_ff, c.d_head(), c.rel_window);
        let p = &self.params;
        let i = state.pos;
        let mut x = view2(p, self.layout.tok_emb, c.vocab_size, d).row(token as usize).to_owned();
        let scale = 1.0 / (dh as f64).sqrt();
        for (li, lo) in self.layout.layers.iter().enumerate() {
            let h1 = ln_forward_row(&x, view1(p, lo.ln1_g, d), view1(p, lo.ln1_b, d));
            let q = h1.dot(&view2(p, lo.wq, d, d));
            state.keys[li].push(h1.dot(&view2(p, lo.wk, d, d)));
            state.values[li].push(h1.dot(&view2(p, lo.wv, d, d)));
            let mut ctx = Array1::zeros(d);
            for h in 0..c.heads {
                let range = h * dh..(h + 1) * dh;
                let qh = q.slice(s![range.clone()]);
                let rel = view2(p, lo.rel + h * r * dh, r, dh);
                let mut w: Vec<f64> = (0..=i)
                    .map(|j| {
                        let kj = state.keys[li][j].slice(s![range.clone()]);
                        (qh.dot(&kj) + qh.dot(&rel.row((i - j).min(r - 1)))) * scale
                    })
                    .collect();
                let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in w.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                let mut out = ctx.slice_mut(s![range.clone()]);
                for (j, wj) in w.iter().enumerate() {
                    out.scaled_add(wj / sum, &state.values[li][j].slice(s![range.clone()]));
                }
            }
            x += &(ctx.dot(&view2(p, lo.wo, d, d)) + &view1(p, lo.bo, d));
            let h2 = ln_forward_row(&x, view1(p, lo.ln2_g, d), view1(p, lo.ln2_b, d));
            let act = (h2.dot(&view2(p, lo.w1, d, f)) + &view1(p, lo.b1, f)).mapv(|v| v.max(0.0));
            x += &(act.dot(&view2(p, lo.w2, f, d)) + &view1(p, lo.b2, d));
        }
        state.pos += 1;
        let hf = ln_forward_row(&x, view1(p, self.layout.lnf_g, d), view1(p, self.layout.lnf_b, d));
        Ok(hf.dot(&view2(p, self.layout.w_out, d, c.vocab_size)) + &view1(p, self.layout.b_out, c.vocab_size))
    }
}

/// Cached keys and values for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Vec<Array1<f64>>>,
    values: Vec<Vec<Array1<f64>>>,
    pos: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

/// Summed loss and count over weighted rows, plus d(summed loss)/d(logits).
fn cross_entropy(logits: &Array2<f64>, targets: &[TokenId], weights: &[bool]) -> ((f64, usize), Array2<f64>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut count = 0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        if !weights.get(i).copied().unwrap_or(false) {
            continue;
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let t = targets[i] as usize;
        loss += sum.ln() + max - row[t];
        let mut g = grad.row_mut(i);
        for (k, v) in row.iter().enumerate() {
            g[k] = (v - max).exp() / sum;
        }
        g[t] -= 1.0;
        count += 1;
    }
    ((loss, count), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(layers: usize, d: usize, heads: usize, r: usize) -> Model {
        let cfg = ModelConfig { layers, heads, d_model: d, d_ff: 2 * d, max_len: 64, rel_window: r, dropout: 0.0, seed: 5, ..ModelConfig::default() };
        let mut m = Model::new(cfg).unwrap();
        // Break the symmetric init so every gradient path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = m.specs().to_vec();
        for spec in specs {
            for p in &mut m.params_mut()[spec.offset..spec.offset + spec.len()] {
                *p += rng.random_range(-0.3..0.3);
            }
        }
        m
    }

    #[test]
    fn skew_matches_direct_gather() {
        let l = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let qe = Array2::from_shape_fn((l, l), |_| rng.random::<f64>());
        let s = skew(&qe);
        for i in 0..l {
            for j in 0..=i {
                assert_eq!(s[[i, j]], qe[[i, l - 1 - (i - j)]]);
            }
        }
    }

    #[test]
    fn relative_logits_match_direct_computation() {
        let m = small(1, 8, 2, 3);
        let lo = &m.layout.layers[0];
        let l = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Array2::from_shape_fn((l, 4), |_| rng.random::<f64>());
        let s = skew(&q.dot(&m.rel_ext(lo, 1, l).t()));
        let rel = view2(&m.params, lo.rel + 3 * 4, 3, 4);
        for i in 0..l {
            for j in 0..=i {
                let direct = q.row(i).dot(&rel.row((i - j).min(2)));
                assert!((s[[i, j]] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_and_causality() {
        let m = small(2, 8, 2, 4);
        let tokens: Vec<TokenId> = vec![389, 60, 300, 188, 12, 390, 7];
        for layer in 0..2 {
            for p in m.attention_weights(&tokens, layer).unwrap() {
                for i in 0..tokens.len() {
                    assert!((p.row(i).sum() - 1.0).abs() < 1e-6);
                    assert!(p.row(i).iter().skip(i + 1).all(|&w| w == 0.0));
                }
            }
        }
        let base = m.forward(&tokens).unwrap();
        let mut changed = tokens.clone();
        changed[5] = 3;
        changed[6] = 200;
        let other = m.forward(&changed).unwrap();
        assert_eq!(base.slice(s![..5, ..]), other.slice(s![..5, ..]));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut m = small(2, 8, 2, 3);
        let tokens: Vec<TokenId> = vec![389, 60, 300, 188, 391, 5];
        let weights = vec![true; 5];
        let (_, _, grad) = m.loss_and_grad(&tokens, &weights, None).unwrap();
        let eps = 1e-6;
        let mut worst = (0.0f64, String::new());
        for spec in m.specs().to_vec() {
            for k in spec.offset..spec.offset + spec.len() {
                let orig = m.params[k];
                m.params[k] = orig + eps;
                let up = m.loss(&tokens, &weights).unwrap().0;
                m.params[k] = orig - eps;
                let down = m.loss(&tokens, &weights).unwrap().0;
                m.params[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let err = (numeric - grad[k]).abs() / (numeric.abs() + grad[k].abs()).max(1e-6);
                if err > worst.0 {
                    worst = (err, spec.name.clone());
                }
            }
        }
        assert!(worst.0 < 1e-4, "{worst:?}");
    }

    #[test]
    fn incremental_decoding_matches_full_forward() {
        let m = small(2, 8, 2, 3);
        let tokens: Vec<TokenId> = vec![389, 60, 300, 188, 12, 390, 7, 256];
        let full = m.forward(&tokens).unwrap();
        let mut state = m.start_decoding();
        for (i, &t) in tokens.iter().enumerate() {
            let row = m.step(&mut state, t).unwrap();
            for (a, b) in row.iter().zip(full.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fresh_model_is_near_uniform() {
        let m = Model::new(ModelConfig { max_len: 128, rel_window: 128, ..ModelConfig::tiny() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tokens: Vec<TokenId> = (0..128).map(|_| rng.random_range(0..VOCAB_SIZE as TokenId)).collect();
        let (loss, n) = m.loss(&tokens, &[true; 127]).unwrap();
        let mean = loss / n as f64;
        let uniform = (VOCAB_SIZE as f64).ln();
        assert!((mean - uniform).abs() < 0.05 * uniform, "{mean} vs {uniform}");
    }

    #[test]
    fn rejects_bad_configs_and_lengths() {
        assert!(Model::new(ModelConfig { d_model: 30, heads: 4, ..ModelConfig::tiny() }).is_err());
        assert!(Model::new(ModelConfig { rel_window: 2000, ..ModelConfig::tiny() }).is_err());
        let m = Model::new(ModelConfig { max_len: 4, rel_window: 4, ..ModelConfig::tiny() }).unwrap();
        assert!(matches!(m.forward(&[1, 2, 3, 4, 5]), Err(OverpaintError::TooLong { .. })));
    }
}
