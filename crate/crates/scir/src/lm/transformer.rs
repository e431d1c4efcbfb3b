//! Pre-norm decoder-only transformer with hand-written backward pass.
//!
//! The forward pass caches every activation a reverse sweep needs (flat
//! row-major buffers, one allocation per activation kind), and the backward
//! pass accumulates parameter gradients from sparse per-position logit
//! adjoints. Sequence log-probabilities and verdict-logit gaps are exposed as
//! [`gradcore::ParamFunction`] leaves so whole-sequence quantities enter
//! scalar loss graphs as single differentiable nodes.

use std::ops::Range;
use std::rc::Rc;
use std::sync::Arc;

use gradcore::{Expr, Layout, ParamFunction, ParamVector};

use crate::error::{Error, Result};
use crate::lm::{ModelConfig, PolicyModel, TokenSeq};
use crate::vocab::Token;

const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
struct LayerRanges {
    wq: Range<usize>,
    wk: Range<usize>,
    wv: Range<usize>,
    wo: Range<usize>,
    fc1: Range<usize>,
    fc2: Range<usize>,
}

/// Model architecture bound to a parameter layout. Cheap to clone; holds no
/// parameter values itself.
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: ModelConfig,
    layout: Arc<Layout>,
    wte: Range<usize>,
    wpe: Range<usize>,
    head: Range<usize>,
    layers: Vec<LayerRanges>,
    hidden: usize,
}

impl Transformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (v, c, d) = (cfg.vocab_size, cfg.context_len, cfg.model_dim);
        let hidden = 4 * d;
        let mut sizes: Vec<(String, usize)> = vec![
            ("wte".into(), v * d),
            ("wpe".into(), c * d),
        ];
        for l in 0..cfg.layers {
            sizes.push((format!("l{l}.wq"), d * d));
            sizes.push((format!("l{l}.wk"), d * d));
            sizes.push((format!("l{l}.wv"), d * d));
            sizes.push((format!("l{l}.wo"), d * d));
            sizes.push((format!("l{l}.fc1"), hidden * d));
            sizes.push((format!("l{l}.fc2"), d * hidden));
        }
        sizes.push(("head".into(), v * d));
        let layout = Arc::new(Layout::from_sizes(sizes)?);

        let range = |name: &str| layout.range_of(name).expect("layout built above");
        let layers = (0..cfg.layers)
            .map(|l| LayerRanges {
                wq: range(&format!("l{l}.wq")),
                wk: range(&format!("l{l}.wk")),
                wv: range(&format!("l{l}.wv")),
                wo: range(&format!("l{l}.wo")),
                fc1: range(&format!("l{l}.fc1")),
                fc2: range(&format!("l{l}.fc2")),
            })
            .collect();

        Ok(Self {
            wte: range("wte"),
            wpe: range("wpe"),
            head: range("head"),
            layers,
            hidden,
            layout,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Sequence("empty token sequence".into()));
        }
        if tokens.len() > self.cfg.context_len {
            return Err(Error::Sequence(format!(
                "sequence length {} exceeds context {}",
                tokens.len(),
                self.cfg.context_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::Sequence(format!(
                "token {bad} outside vocabulary of size {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.layout.total_len() {
            return Err(Error::Model(format!(
                "parameter vector length {} does not match model size {}",
                params.len(),
                self.layout.total_len()
            )));
        }
        Ok(())
    }

    /// Full-sequence forward pass. Logits are produced for positions in
    /// `[logits_from, len)` only.
    fn forward(&self, params: &[f64], tokens: &[Token], logits_from: usize) -> Cache {
        let (d, h, v_sz) = (self.cfg.model_dim, self.cfg.heads, self.cfg.vocab_size);
        let hd = d / h;
        let t_len = tokens.len();
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = vec![0.0; t_len * d];
        {
            let wte = &params[self.wte.clone()];
            let wpe = &params[self.wpe.clone()];
            for (pos, &tok) in tokens.iter().enumerate() {
                let te = &wte[tok as usize * d..(tok as usize + 1) * d];
                let pe = &wpe[pos * d..(pos + 1) * d];
                let xt = &mut x[pos * d..(pos + 1) * d];
                for i in 0..d {
                    xt[i] = te[i] + pe[i];
                }
            }
        }

        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for ranges in &self.layers {
            let x_in = x;
            let mut xn1 = vec![0.0; t_len * d];
            let mut rinv1 = vec![0.0; t_len];
            for t in 0..t_len {
                rinv1[t] = rmsnorm_row(&x_in[t * d..(t + 1) * d], &mut xn1[t * d..(t + 1) * d]);
            }

            let mut q = vec![0.0; t_len * d];
            let mut k = vec![0.0; t_len * d];
            let mut v = vec![0.0; t_len * d];
            seq_matmul(&params[ranges.wq.clone()], &xn1, t_len, d, d, &mut q);
            seq_matmul(&params[ranges.wk.clone()], &xn1, t_len, d, d, &mut k);
            seq_matmul(&params[ranges.wv.clone()], &xn1, t_len, d, d, &mut v);

            // Causal attention per head; weights stored ragged per position.
            let mut aw = vec![0.0; h * t_len * (t_len + 1) / 2];
            let mut ctx = vec![0.0; t_len * d];
            for t in 0..t_len {
                for head in 0..h {
                    let qs = &q[t * d + head * hd..t * d + (head + 1) * hd];
                    let off = aw_offset(t, head, h);
                    let scores = &mut aw[off..off + t + 1];
                    for (s, slot) in scores.iter_mut().enumerate() {
                        let ks = &k[s * d + head * hd..s * d + (head + 1) * hd];
                        *slot = dot(qs, ks) * scale;
                    }
                    softmax_in_place(scores);
                    let ctx_h = &mut ctx[t * d + head * hd..t * d + (head + 1) * hd];
                    for s in 0..=t {
                        let w = aw[aw_offset(t, head, h) + s];
                        let vs = &v[s * d + head * hd..s * d + (head + 1) * hd];
                        for i in 0..hd {
                            ctx_h[i] += w * vs[i];
                        }
                    }
                }
            }

            let mut attn_out = vec![0.0; t_len * d];
            seq_matmul(&params[ranges.wo.clone()], &ctx, t_len, d, d, &mut attn_out);
            let mut x_mid = vec![0.0; t_len * d];
            for i in 0..t_len * d {
                x_mid[i] = x_in[i] + attn_out[i];
            }

            let mut xn2 = vec![0.0; t_len * d];
            let mut rinv2 = vec![0.0; t_len];
            for t in 0..t_len {
                rinv2[t] = rmsnorm_row(&x_mid[t * d..(t + 1) * d], &mut xn2[t * d..(t + 1) * d]);
            }
            let mut h_pre = vec![0.0; t_len * self.hidden];
            seq_matmul(&params[ranges.fc1.clone()], &xn2, t_len, self.hidden, d, &mut h_pre);
            let h_act: Vec<f64> = h_pre.iter().map(|&z| gelu(z)).collect();
            let mut mlp_out = vec![0.0; t_len * d];
            seq_matmul(&params[ranges.fc2.clone()], &h_act, t_len, d, self.hidden, &mut mlp_out);
            let mut x_out = vec![0.0; t_len * d];
            for i in 0..t_len * d {
                x_out[i] = x_mid[i] + mlp_out[i];
            }

            layer_caches.push(LayerCache { x_in, xn1, rinv1, q, k, v, aw, ctx, x_mid, xn2, rinv2, h_pre, h_act });
            x = x_out;
        }

        let x_final = x;
        let mut xfn = vec![0.0; t_len * d];
        let mut rinv_f = vec![0.0; t_len];
        for t in 0..t_len {
            rinv_f[t] = rmsnorm_row(&x_final[t * d..(t + 1) * d], &mut xfn[t * d..(t + 1) * d]);
        }
        let n_logit = t_len - logits_from;
        let mut logits = vec![0.0; n_logit * v_sz];
        let head = &params[self.head.clone()];
        for (j, t) in (logits_from..t_len).enumerate() {
            let xt = &xfn[t * d..(t + 1) * d];
            let row = &mut logits[j * v_sz..(j + 1) * v_sz];
            for o in 0..v_sz {
                row[o] = dot(&head[o * d..(o + 1) * d], xt);
            }
        }

        Cache { layers: layer_caches, x_final, xfn, rinv_f, logits, logits_from, vocab: v_sz }
    }

    /// Accumulates parameter gradients from logit adjoints at the given
    /// positions (all other logit adjoints are zero).
    fn backward(
        &self,
        params: &[f64],
        tokens: &[Token],
        cache: &Cache,
        dlogits: &[(usize, Vec<f64>)],
        grad: &mut [f64],
    ) {
        let (d, h, v_sz) = (self.cfg.model_dim, self.cfg.heads, self.cfg.vocab_size);
        let hd = d / h;
        let t_len = tokens.len();
        let scale = 1.0 / (hd as f64).sqrt();

        // Head and final norm.
        let head = &params[self.head.clone()];
        let mut dx = vec![0.0; t_len * d];
        {
            let ghead = &mut grad[self.head.clone()];
            let mut dxfn = vec![0.0; d];
            for (pos, dl) in dlogits {
                let pos = *pos;
                let xfn = &cache.xfn[pos * d..(pos + 1) * d];
                dxfn.iter_mut().for_each(|g| *g = 0.0);
                for o in 0..v_sz {
                    let g = dl[o];
                    if g == 0.0 {
                        continue;
                    }
                    axpy_pair(g, &head[o * d..(o + 1) * d], xfn, &mut dxfn, &mut ghead[o * d..(o + 1) * d]);
                }
                rmsnorm_bwd_row(
                    &dxfn,
                    &cache.x_final[pos * d..(pos + 1) * d],
                    cache.rinv_f[pos],
                    &mut dx[pos * d..(pos + 1) * d],
                );
            }
        }

        for (l, ranges) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let fc1 = &params[ranges.fc1.clone()];
            let fc2 = &params[ranges.fc2.clone()];
            let wo = &params[ranges.wo.clone()];
            let wq = &params[ranges.wq.clone()];
            let wk = &params[ranges.wk.clone()];
            let wv = &params[ranges.wv.clone()];

            // MLP backward: x_out = x_mid + fc2 . gelu(fc1 . rms(x_mid))
            let mut dx_mid = dx.clone();
            {
                let mut dh_act = vec![0.0; self.hidden];
                let mut dh_pre = vec![0.0; self.hidden];
                let mut dxn2 = vec![0.0; d];
                for t in 0..t_len {
                    let dxt = &dx[t * d..(t + 1) * d];
                    if dxt.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    dh_act.iter_mut().for_each(|g| *g = 0.0);
                    {
                        let gfc2 = &mut grad[ranges.fc2.clone()];
                        let h_act = &lc.h_act[t * self.hidden..(t + 1) * self.hidden];
                        for o in 0..d {
                            let g = dxt[o];
                            if g == 0.0 {
                                continue;
                            }
                            axpy_pair(
                                g,
                                &fc2[o * self.hidden..(o + 1) * self.hidden],
                                h_act,
                                &mut dh_act,
                                &mut gfc2[o * self.hidden..(o + 1) * self.hidden],
                            );
                        }
                    }
                    let h_pre = &lc.h_pre[t * self.hidden..(t + 1) * self.hidden];
                    for i in 0..self.hidden {
                        dh_pre[i] = dh_act[i] * gelu_deriv(h_pre[i]);
                    }
                    dxn2.iter_mut().for_each(|g| *g = 0.0);
                    {
                        let gfc1 = &mut grad[ranges.fc1.clone()];
                        let xn2 = &lc.xn2[t * d..(t + 1) * d];
                        for o in 0..self.hidden {
                            let g = dh_pre[o];
                            if g == 0.0 {
                                continue;
                            }
                            axpy_pair(
                                g,
                                &fc1[o * d..(o + 1) * d],
                                xn2,
                                &mut dxn2,
                                &mut gfc1[o * d..(o + 1) * d],
                            );
                        }
                    }
                    rmsnorm_bwd_row(
                        &dxn2,
                        &lc.x_mid[t * d..(t + 1) * d],
                        lc.rinv2[t],
                        &mut dx_mid[t * d..(t + 1) * d],
                    );
                }
            }

            // Attention backward: x_mid = x_in + wo . ctx
            let mut dctx = vec![0.0; t_len * d];
            {
                let gwo = &mut grad[ranges.wo.clone()];
                for t in 0..t_len {
                    let g_t = &dx_mid[t * d..(t + 1) * d];
                    if g_t.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let ctx_t = &lc.ctx[t * d..(t + 1) * d];
                    let dctx_t = &mut dctx[t * d..(t + 1) * d];
                    for o in 0..d {
                        let g = g_t[o];
                        if g == 0.0 {
                            continue;
                        }
                        axpy_pair(g, &wo[o * d..(o + 1) * d], ctx_t, dctx_t, &mut gwo[o * d..(o + 1) * d]);
                    }
                }
            }

            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            for t in 0..t_len {
                for head_i in 0..h {
                    let dctx_h = &dctx[t * d + head_i * hd..t * d + (head_i + 1) * hd];
                    if dctx_h.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let off = aw_offset(t, head_i, h);
                    let aw = &lc.aw[off..off + t + 1];
                    let mut daw = vec![0.0; t + 1];
                    for s in 0..=t {
                        let vs = &lc.v[s * d + head_i * hd..s * d + (head_i + 1) * hd];
                        daw[s] = dot(dctx_h, vs);
                        let dvs = &mut dv[s * d + head_i * hd..s * d + (head_i + 1) * hd];
                        for i in 0..hd {
                            dvs[i] += aw[s] * dctx_h[i];
                        }
                    }
                    let inner: f64 = aw.iter().zip(&daw).map(|(&a, &g)| a * g).sum();
                    let qs = &lc.q[t * d + head_i * hd..t * d + (head_i + 1) * hd];
                    for s in 0..=t {
                        let dscore = aw[s] * (daw[s] - inner) * scale;
                        if dscore == 0.0 {
                            continue;
                        }
                        let ks = &lc.k[s * d + head_i * hd..s * d + (head_i + 1) * hd];
                        let dq_t = &mut dq[t * d + head_i * hd..t * d + (head_i + 1) * hd];
                        for i in 0..hd {
                            dq_t[i] += dscore * ks[i];
                        }
                        let dk_s = &mut dk[s * d + head_i * hd..s * d + (head_i + 1) * hd];
                        for i in 0..hd {
                            dk_s[i] += dscore * qs[i];
                        }
                    }
                }
            }

            let mut dxn1 = vec![0.0; t_len * d];
            linear_bwd_seq(&mut grad[ranges.wq.clone()], wq, &lc.xn1, &dq, &mut dxn1, t_len, d, d);
            linear_bwd_seq(&mut grad[ranges.wk.clone()], wk, &lc.xn1, &dk, &mut dxn1, t_len, d, d);
            linear_bwd_seq(&mut grad[ranges.wv.clone()], wv, &lc.xn1, &dv, &mut dxn1, t_len, d, d);

            let mut dx_in = dx_mid;
            for t in 0..t_len {
                let g_t = &dxn1[t * d..(t + 1) * d];
                if g_t.iter().all(|&g| g == 0.0) {
                    continue;
                }
                rmsnorm_bwd_row(
                    g_t,
                    &lc.x_in[t * d..(t + 1) * d],
                    lc.rinv1[t],
                    &mut dx_in[t * d..(t + 1) * d],
                );
            }
            dx = dx_in;
        }

        // Embeddings.
        let gwte_base = self.wte.start;
        let gwpe_base = self.wpe.start;
        for (t, &tok) in tokens.iter().enumerate() {
            let g_t = &dx[t * d..(t + 1) * d];
            for i in 0..d {
                let g = g_t[i];
                if g == 0.0 {
                    continue;
                }
                grad[gwte_base + tok as usize * d + i] += g;
                grad[gwpe_base + t * d + i] += g;
            }
        }
    }

    /// Logits predicting the token after `context`.
    pub fn next_token_logits(&self, params: &ParamVector, context: &TokenSeq) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_tokens(context.tokens())?;
        let last = context.len() - 1;
        let cache = self.forward(params.values(), context.tokens(), last);
        Ok(cache.logits_row(last).to_vec())
    }

    /// Next-token probability distribution after `context`.
    pub fn next_token_probs(&self, params: &ParamVector, context: &TokenSeq) -> Result<Vec<f64>> {
        let mut logits = self.next_token_logits(params, context)?;
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    pub fn sequence_logprob(
        &self,
        params: &ParamVector,
        prompt: &TokenSeq,
        response: &TokenSeq,
    ) -> Result<f64> {
        self.check_params(params)?;
        let (tokens, p_len) = self.concat_checked(prompt, response)?;
        let cache = self.forward(params.values(), &tokens, p_len - 1);
        let mut total = 0.0;
        for (j, &target) in tokens[p_len..].iter().enumerate() {
            total += log_softmax_at(cache.logits_row(p_len + j - 1), target as usize);
        }
        if !total.is_finite() {
            return Err(Error::Model("non-finite sequence log-probability".into()));
        }
        Ok(total)
    }

    fn concat_checked(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<(Vec<Token>, usize)> {
        if prompt.is_empty() {
            return Err(Error::Sequence("prompt must be non-empty".into()));
        }
        if response.is_empty() {
            return Err(Error::Sequence("response must be non-empty".into()));
        }
        let tokens: Vec<Token> =
            prompt.tokens().iter().chain(response.tokens()).copied().collect();
        self.check_tokens(&tokens)?;
        Ok((tokens, prompt.len()))
    }
}

impl PolicyModel for Transformer {
    fn logprob_expr(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Expr> {
        // Validate early so expression construction fails fast.
        self.concat_checked(prompt, response)?;
        Ok(Expr::param_fn(Rc::new(SeqLogProbFn {
            model: self.clone(),
            prompt: prompt.clone(),
            response: response.clone(),
        })))
    }

    fn verdict_gap_expr(&self, filled: &TokenSeq, first: Token, second: Token) -> Result<Expr> {
        self.check_tokens(filled.tokens())?;
        if first == second {
            return Err(Error::Model("verdict tokens must differ".into()));
        }
        if first as usize >= self.cfg.vocab_size || second as usize >= self.cfg.vocab_size {
            return Err(Error::Model("verdict token outside vocabulary".into()));
        }
        Ok(Expr::param_fn(Rc::new(VerdictGapFn {
            model: self.clone(),
            filled: filled.clone(),
            first,
            second,
        })))
    }
}

#[inline]
fn aw_offset(t: usize, head: usize, heads: usize) -> usize {
    heads * (t * (t + 1) / 2) + head * (t + 1)
}

struct Cache {
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    xfn: Vec<f64>,
    rinv_f: Vec<f64>,
    logits: Vec<f64>,
    logits_from: usize,
    vocab: usize,
}

impl Cache {
    fn logits_row(&self, pos: usize) -> &[f64] {
        debug_assert!(pos >= self.logits_from);
        let j = pos - self.logits_from;
        &self.logits[j * self.vocab..(j + 1) * self.vocab]
    }
}

struct LayerCache {
    x_in: Vec<f64>,
    xn1: Vec<f64>,
    rinv1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    aw: Vec<f64>,
    ctx: Vec<f64>,
    x_mid: Vec<f64>,
    xn2: Vec<f64>,
    rinv2: Vec<f64>,
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
}

/// log P(response | prompt) as a differentiable leaf.
struct SeqLogProbFn {
    model: Transformer,
    prompt: TokenSeq,
    response: TokenSeq,
}

impl SeqLogProbFn {
    fn forward_parts(&self, params: &ParamVector) -> gradcore::Result<(Vec<Token>, usize, Cache)> {
        let (tokens, p_len) = self
            .model
            .concat_checked(&self.prompt, &self.response)
            .map_err(|e| gradcore::Error::ParamFn(e.to_string()))?;
        self.model
            .check_params(params)
            .map_err(|e| gradcore::Error::ParamFn(e.to_string()))?;
        let cache = self.model.forward(params.values(), &tokens, p_len - 1);
        Ok((tokens, p_len, cache))
    }
}

impl ParamFunction for SeqLogProbFn {
    fn describe(&self) -> String {
        format!("seq_logprob(len {}+{})", self.prompt.len(), self.response.len())
    }

    fn value(&self, params: &ParamVector) -> gradcore::Result<f64> {
        let (tokens, p_len, cache) = self.forward_parts(params)?;
        let mut total = 0.0;
        for (j, &target) in tokens[p_len..].iter().enumerate() {
            total += log_softmax_at(cache.logits_row(p_len + j - 1), target as usize);
        }
        Ok(total)
    }

    fn vjp(&self, params: &ParamVector, upstream: f64, grad: &mut [f64]) -> gradcore::Result<()> {
        let (tokens, p_len, cache) = self.forward_parts(params)?;
        // d logprob / d logit_k at a response position = onehot[target] - softmax.
        let mut dlogits = Vec::with_capacity(tokens.len() - p_len);
        for (j, &target) in tokens[p_len..].iter().enumerate() {
            let pos = p_len + j - 1;
            let mut probs = cache.logits_row(pos).to_vec();
            softmax_in_place(&mut probs);
            let mut dl: Vec<f64> = probs.iter().map(|&p| -upstream * p).collect();
            dl[target as usize] += upstream;
            dlogits.push((pos, dl));
        }
        self.model.backward(params.values(), &tokens, &cache, &dlogits, grad);
        Ok(())
    }
}

/// Next-token logit gap `o[first] - o[second]` after a filled judge prompt.
struct VerdictGapFn {
    model: Transformer,
    filled: TokenSeq,
    first: Token,
    second: Token,
}

impl ParamFunction for VerdictGapFn {
    fn describe(&self) -> String {
        format!("verdict_gap({} vs {})", self.first, self.second)
    }

    fn value(&self, params: &ParamVector) -> gradcore::Result<f64> {
        let logits = self
            .model
            .next_token_logits(params, &self.filled)
            .map_err(|e| gradcore::Error::ParamFn(e.to_string()))?;
        Ok(logits[self.first as usize] - logits[self.second as usize])
    }

    fn vjp(&self, params: &ParamVector, upstream: f64, grad: &mut [f64]) -> gradcore::Result<()> {
        self.model
            .check_params(params)
            .map_err(|e| gradcore::Error::ParamFn(e.to_string()))?;
        self.model
            .check_tokens(self.filled.tokens())
            .map_err(|e| gradcore::Error::ParamFn(e.to_string()))?;
        let tokens = self.filled.tokens();
        let last = tokens.len() - 1;
        let cache = self.model.forward(params.values(), tokens, last);
        let mut dl = vec![0.0; self.model.cfg.vocab_size];
        dl[self.first as usize] += upstream;
        dl[self.second as usize] -= upstream;
        self.model.backward(params.values(), tokens, &cache, &[(last, dl)], grad);
        Ok(())
    }
}

/// Four-lane dot product; fixed association keeps results deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        lanes[0] = xa[0].mul_add(xb[0], lanes[0]);
        lanes[1] = xa[1].mul_add(xb[1], lanes[1]);
        lanes[2] = xa[2].mul_add(xb[2], lanes[2]);
        lanes[3] = xa[3].mul_add(xb[3], lanes[3]);
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = x.mul_add(*y, tail);
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// out[i] += g * w[i] and gw[i] += g * x[i] over a row.
#[inline]
fn axpy_pair(g: f64, w: &[f64], x: &[f64], out: &mut [f64], gw: &mut [f64]) {
    for ((gw_i, out_i), (w_i, x_i)) in
        gw.iter_mut().zip(out.iter_mut()).zip(w.iter().zip(x.iter()))
    {
        *gw_i = g.mul_add(*x_i, *gw_i);
        *out_i = g.mul_add(*w_i, *out_i);
    }
}

/// out[t] = W x[t] for every row, W row-major [rows x cols].
fn seq_matmul(w: &[f64], x: &[f64], t_len: usize, rows: usize, cols: usize, out: &mut [f64]) {
    for t in 0..t_len {
        let xt = &x[t * cols..(t + 1) * cols];
        let row_out = &mut out[t * rows..(t + 1) * rows];
        for o in 0..rows {
            row_out[o] = dot(&w[o * cols..(o + 1) * cols], xt);
        }
    }
}

/// dW += dy (x) x and dx += W^T dy over all positions.
#[allow(clippy::too_many_arguments)]
fn linear_bwd_seq(
    gw: &mut [f64],
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    t_len: usize,
    rows: usize,
    cols: usize,
) {
    for t in 0..t_len {
        let xt = &x[t * cols..(t + 1) * cols];
        let dxt = &mut dx[t * cols..(t + 1) * cols];
        let dyt = &dy[t * rows..(t + 1) * rows];
        for o in 0..rows {
            let g = dyt[o];
            if g == 0.0 {
                continue;
            }
            axpy_pair(g, &w[o * cols..(o + 1) * cols], xt, dxt, &mut gw[o * cols..(o + 1) * cols]);
        }
    }
}

/// Writes x * rinv into `out`; returns rinv.
fn rmsnorm_row(x: &[f64], out: &mut [f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let rinv = 1.0 / (ms + RMS_EPS).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * rinv;
    }
    rinv
}

/// dx += rmsnorm backward of dy at x.
fn rmsnorm_bwd_row(dy: &[f64], x: &[f64], rinv: f64, dx: &mut [f64]) {
    let n = x.len() as f64;
    let mut inner = 0.0;
    for i in 0..x.len() {
        inner += dy[i] * x[i];
    }
    let c = rinv * rinv * rinv / n * inner;
    for i in 0..x.len() {
        dx[i] += rinv * dy[i] - c * x[i];
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    logits[target] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::init_params;
    use gradcore::{evaluate, finite_diff_check};

    fn tiny_config() -> ModelConfig {
        ModelConfig { vocab_size: 16, context_len: 12, layers: 1, model_dim: 8, heads: 2, seed: 3 }
    }

    #[test]
    fn fresh_model_is_uniform() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let lp = model
            .sequence_logprob(&params, &TokenSeq::new(vec![1, 2]), &TokenSeq::new(vec![3]))
            .unwrap();
        assert!((lp - (1.0f64 / 16.0).ln()).abs() < 1e-12, "lp = {lp}");

        let lp3 = model
            .sequence_logprob(&params, &TokenSeq::new(vec![1, 2]), &TokenSeq::new(vec![3, 4, 5]))
            .unwrap();
        assert!((lp3 - 3.0 * (1.0f64 / 16.0).ln()).abs() < 1e-12);
        assert!((lp3 - (-8.317766)).abs() < 1e-6);
    }

    #[test]
    fn sequence_logprob_matches_per_position_recomputation() {
        // Independent oracle: rerun the forward, recompute each position's
        // log-softmax naively and sum.
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.slice_mut("head").unwrap().iter_mut().enumerate() {
            *v = ((i % 17) as f64 - 8.0) * 0.013;
        }
        let prompt = TokenSeq::new(vec![4, 9, 2]);
        let response = TokenSeq::new(vec![7, 1, 15, 0]);
        let lp = model.sequence_logprob(&params, &prompt, &response).unwrap();

        let tokens: Vec<Token> = prompt.tokens().iter().chain(response.tokens()).copied().collect();
        let cache = model.forward(params.values(), &tokens, 0);
        let mut oracle = 0.0;
        for j in 0..response.len() {
            let pos = prompt.len() + j - 1;
            let logits = cache.logits_row(pos);
            let denom: f64 = logits.iter().map(|&x| x.exp()).sum();
            oracle += (logits[tokens[prompt.len() + j] as usize].exp() / denom).ln();
        }
        assert!((lp - oracle).abs() < 1e-10, "lp {lp} vs oracle {oracle}");
        assert!(lp <= 0.0);
    }

    #[test]
    fn partial_logits_match_full_forward() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.03 * (((i * 7 + 1) % 23) as f64 / 23.0 - 0.5);
            }
        }
        let tokens = vec![4, 9, 2, 7, 1];
        let full = model.forward(params.values(), &tokens, 0);
        let tail = model.forward(params.values(), &tokens, 3);
        for pos in 3..tokens.len() {
            assert_eq!(full.logits_row(pos), tail.logits_row(pos));
        }
    }

    #[test]
    fn verdict_probability_complement_is_exact() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.slice_mut("head").unwrap().iter_mut().enumerate() {
            *v = ((i * 31 % 23) as f64 - 11.0) * 0.021;
        }
        let bound = crate::lm::Bound::new(&model, &params);
        let prompt = TokenSeq::new(vec![3, 8, 1, 12]);
        let p_ab = bound.verdict_probability(&prompt, 5, 9).unwrap();
        let p_ba = bound.verdict_probability(&prompt, 9, 5).unwrap();
        assert_eq!(p_ab + p_ba, 1.0);
        assert!(p_ab > 0.0 && p_ab < 1.0);
    }

    #[test]
    fn verdict_probability_of_equal_logits_is_half() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap(); // zero head => all logits equal
        let bound = crate::lm::Bound::new(&model, &params);
        let p = bound.verdict_probability(&TokenSeq::new(vec![2, 3]), 4, 11).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn logprob_expr_gradient_passes_fd_check() {
        let cfg = ModelConfig { vocab_size: 8, context_len: 8, layers: 1, model_dim: 4, heads: 2, seed: 11 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        let n = params.len();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.05 * (((i * 37 % 19) as f64 / 19.0) - 0.5);
            }
        }
        assert!(n < 1200);
        let expr = model
            .logprob_expr(&TokenSeq::new(vec![1, 6]), &TokenSeq::new(vec![3, 0, 7]))
            .unwrap();
        // h small enough that central-difference truncation (~h^2) is far
        // below the tolerance; any backward-pass bug shows up as >> 1e-6.
        let report = finite_diff_check(&expr, &params, 1e-5, 1e-6).unwrap();
        assert!(report.all_passed(), "failures {} max err {}", report.failures, report.max_abs_err);
    }

    #[test]
    fn verdict_gap_expr_gradient_passes_fd_check() {
        let cfg = ModelConfig { vocab_size: 8, context_len: 8, layers: 1, model_dim: 4, heads: 2, seed: 13 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.04 * (((i * 53 % 17) as f64 / 17.0) - 0.5);
            }
        }
        let expr = model.verdict_gap_expr(&TokenSeq::new(vec![2, 5, 1]), 3, 6).unwrap();
        let report = finite_diff_check(&expr, &params, 1e-5, 1e-6).unwrap();
        assert!(report.all_passed(), "failures {} max err {}", report.failures, report.max_abs_err);
    }

    #[test]
    fn multilayer_multihead_gradient_passes_fd_check() {
        let cfg = ModelConfig { vocab_size: 8, context_len: 10, layers: 2, model_dim: 4, heads: 2, seed: 17 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.06 * (((i * 29 % 31) as f64 / 31.0) - 0.5);
            }
        }
        let expr = model
            .logprob_expr(&TokenSeq::new(vec![1, 6, 2]), &TokenSeq::new(vec![3, 7]))
            .unwrap();
        let report = finite_diff_check(&expr, &params, 1e-5, 1e-6).unwrap();
        assert!(report.all_passed(), "failures {} max err {}", report.failures, report.max_abs_err);
    }

    #[test]
    fn sft_loss_on_uniform_model_is_log_vocab() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let batch = vec![
            (TokenSeq::new(vec![1, 2]), TokenSeq::new(vec![3])),
            (TokenSeq::new(vec![4]), TokenSeq::new(vec![5])),
        ];
        let loss = crate::lm::sft_loss(&model, &batch).unwrap();
        let v = evaluate(&loss, &params).unwrap();
        assert!((v - 16.0f64.ln()).abs() < 1e-12);
        assert!((v - 2.772589).abs() < 1e-6);
    }

    #[test]
    fn sft_loss_of_batch_is_mean_of_singletons() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.slice_mut("head").unwrap().iter_mut().enumerate() {
            *v = ((i % 13) as f64 - 6.0) * 0.017;
        }
        let a = (TokenSeq::new(vec![1, 2]), TokenSeq::new(vec![3, 9]));
        let b = (TokenSeq::new(vec![4]), TokenSeq::new(vec![5]));
        let la = evaluate(&crate::lm::sft_loss(&model, &[a.clone()]).unwrap(), &params).unwrap();
        let lb = evaluate(&crate::lm::sft_loss(&model, &[b.clone()]).unwrap(), &params).unwrap();
        let lab = evaluate(&crate::lm::sft_loss(&model, &[a, b]).unwrap(), &params).unwrap();
        assert!((lab - 0.5 * (la + lb)).abs() < 1e-12);
    }

    #[test]
    fn context_overflow_and_empty_response_error() {
        let cfg = tiny_config();
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let long = TokenSeq::new(vec![1; 13]);
        assert!(model.sequence_logprob(&params, &long, &TokenSeq::new(vec![1])).is_err());
        assert!(model
            .sequence_logprob(&params, &TokenSeq::new(vec![1]), &TokenSeq::empty())
            .is_err());
    }
}
