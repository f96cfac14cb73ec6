//! Causal pre-norm transformer over `[act tokens ; utterance tokens]` with a
//! per-position scalar value head.
//!
//! The full-sequence forward and the cached incremental decoder call the same
//! row kernels in the same order, so log-probabilities from both paths are
//! bit-identical.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax};
use super::{init_normal, ModelError, Params};
use crate::corpus::{TokenId, TokenVocabulary};
use crate::da::DialogueAct;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 128, context: 128 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 || self.context < 2 {
            return Err(ModelError::BadConfig("sizes must be positive and context at least 2"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::BadConfig("d_model must be divisible by n_heads"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIx {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok: Range<usize>,
    pos: Range<usize>,
    layers: Vec<LayerIx>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    wout: Range<usize>,
    bout: Range<usize>,
    wval: Range<usize>,
    bval: Range<usize>,
}

fn layout(cfg: &PolicyConfig, vocab: usize) -> (Params, Layout) {
    let d = cfg.d_model;
    let mut p = Params::default();
    let tok = p.add("tok_emb", &[vocab, d]);
    let pos = p.add("pos_emb", &[cfg.context, d]);
    let layers = (0..cfg.n_layers)
        .map(|l| {
            let mut add = |n: &str, shape: &[usize]| p.add(&format!("block{l}.{n}"), shape);
            LayerIx {
                ln1_g: add("ln1.g", &[d]),
                ln1_b: add("ln1.b", &[d]),
                wq: add("attn.wq", &[d, d]),
                bq: add("attn.bq", &[d]),
                wk: add("attn.wk", &[d, d]),
                bk: add("attn.bk", &[d]),
                wv: add("attn.wv", &[d, d]),
                bv: add("attn.bv", &[d]),
                wo: add("attn.wo", &[d, d]),
                bo: add("attn.bo", &[d]),
                ln2_g: add("ln2.g", &[d]),
                ln2_b: add("ln2.b", &[d]),
                w1: add("mlp.w1", &[d, cfg.d_ff]),
                b1: add("mlp.b1", &[cfg.d_ff]),
                w2: add("mlp.w2", &[cfg.d_ff, d]),
                b2: add("mlp.b2", &[d]),
            }
        })
        .collect();
    let lnf_g = p.add("lnf.g", &[d]);
    let lnf_b = p.add("lnf.b", &[d]);
    let wout = p.add("out.w", &[d, vocab]);
    let bout = p.add("out.b", &[vocab]);
    let wval = p.add("value.w", &[d]);
    let bval = p.add("value.b", &[1]);
    (p, Layout { tok, pos, layers, lnf_g, lnf_b, wout, bout, wval, bval })
}

/// Disjoint mutable views of two parameter blocks.
fn pair<'a>(g: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Greedy or temperature sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

/// Result of decoding after `[RSP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Emitted ids, including the final `[EOS]` unless truncated.
    pub actions: Vec<TokenId>,
    /// Log-probability of each action under the model at temperature 1.
    pub logprobs: Vec<f64>,
    /// Value estimate of the state before each action.
    pub values: Vec<f64>,
    pub truncated: bool,
}

impl Generation {
    /// Utterance ids without the terminal `[EOS]`.
    pub fn utterance(&self) -> &[TokenId] {
        match self.actions.last() {
            Some(&TokenVocabulary::EOS_ID) => &self.actions[..self.actions.len() - 1],
            _ => &self.actions,
        }
    }
}

/// Per-position next-token distributions and values.
#[derive(Debug, Clone, PartialEq)]
pub struct NlgOutput {
    pub vocab: usize,
    pub probs: Vec<f64>,
    pub values: Vec<f64>,
}

impl NlgOutput {
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn dist(&self, t: usize) -> &[f64] {
        &self.probs[t * self.vocab..(t + 1) * self.vocab]
    }
}

/// `log softmax(logits)[k]`.
pub fn log_prob_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|&z| libm::exp(z - m)).sum();
    logits[k] - m - libm::log(s)
}

#[derive(Debug, Clone, Default)]
struct LayerTrace {
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    o: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Activations of one full forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    ids: Vec<TokenId>,
    logits_from: usize,
    layers: Vec<LayerTrace>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    hf: Vec<f64>,
    /// Rows `logits_from..len`, each of vocabulary width.
    logits: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn logits_from(&self) -> usize {
        self.logits_from
    }
    /// Logits at position `t >= logits_from`.
    pub fn logits(&self, t: usize) -> &[f64] {
        let v = self.logits.len() / (self.ids.len() - self.logits_from);
        let r = t - self.logits_from;
        &self.logits[r * v..(r + 1) * v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub vocab: TokenVocabulary,
    pub params: Params,
    layout: Layout,
}

impl PolicyModel {
    /// Fresh model; weights drawn from `seed`.
    pub fn new(config: PolicyConfig, vocab: TokenVocabulary, seed_value: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (params, layout) = layout(&config, vocab.len());
        let mut m = PolicyModel { config, vocab, params, layout };
        let mut rng = seed::child_rng(seed_value, &[0x11]);
        let std = 0.02;
        let resid_std = std / libm::sqrt(2.0 * config.n_layers as f64);
        let lay = m.layout.clone();
        let data = &mut m.params.data;
        init_normal(&mut data[lay.tok.clone()], std, &mut rng);
        init_normal(&mut data[lay.pos.clone()], std, &mut rng);
        for l in &lay.layers {
            data[l.ln1_g.clone()].fill(1.0);
            data[l.ln2_g.clone()].fill(1.0);
            init_normal(&mut data[l.wq.clone()], std, &mut rng);
            init_normal(&mut data[l.wk.clone()], std, &mut rng);
            init_normal(&mut data[l.wv.clone()], std, &mut rng);
            init_normal(&mut data[l.wo.clone()], resid_std, &mut rng);
            init_normal(&mut data[l.w1.clone()], std, &mut rng);
            init_normal(&mut data[l.w2.clone()], resid_std, &mut rng);
        }
        data[lay.lnf_g.clone()].fill(1.0);
        init_normal(&mut data[lay.wout.clone()], std, &mut rng);
        m.reset_value_head(seed::derive(seed_value, &[0x12]));
        Ok(m)
    }

    /// Rebuilds the layout for `config` and `vocab` with zeroed parameters, for loading.
    pub fn empty(config: PolicyConfig, vocab: TokenVocabulary) -> Result<Self, ModelError> {
        config.validate()?;
        let (params, layout) = layout(&config, vocab.len());
        Ok(PolicyModel { config, vocab, params, layout })
    }

    /// Re-draws the value head.
    pub fn reset_value_head(&mut self, seed_value: u64) {
        let mut rng = seed::child_rng(seed_value, &[0x7a]);
        // Near-zero start keeps early advantages free of a random baseline.
        let std = 0.01 / libm::sqrt(self.config.d_model as f64);
        init_normal(&mut self.params.data[self.layout.wval.clone()], std, &mut rng);
        self.params.data[self.layout.bval.clone()].fill(0.0);
    }

    /// Flat index range of the value head's weights and bias.
    pub fn value_head_range(&self) -> Range<usize> {
        self.layout.wval.start..self.layout.bval.end
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params.data[r.clone()]
    }

    fn check(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if ids.len() > self.config.context {
            return Err(ModelError::TooLong { len: ids.len(), max: self.config.context });
        }
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= self.vocab.len()) {
            return Err(ModelError::TokenOutOfRange { id, vocab: self.vocab.len() });
        }
        Ok(())
    }

    fn embed(&self, id: TokenId, t: usize, x: &mut [f64]) {
        let d = self.config.d_model;
        let e = &self.p(&self.layout.tok)[id as usize * d..(id as usize + 1) * d];
        let p = &self.p(&self.layout.pos)[t * d..(t + 1) * d];
        for i in 0..d {
            x[i] = e[i] + p[i];
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn pre_attn(&self, l: &LayerIx, x: &[f64], xhat: &mut [f64], h: &mut [f64], q: &mut [f64], k: &mut [f64], v: &mut [f64]) -> f64 {
        let rstd = layer_norm(x, self.p(&l.ln1_g), self.p(&l.ln1_b), h, xhat);
        linear(h, self.p(&l.wq), self.p(&l.bq), q);
        linear(h, self.p(&l.wk), self.p(&l.bk), k);
        linear(h, self.p(&l.wv), self.p(&l.bv), v);
        rstd
    }

    /// Attention of one query row over `n` cached key/value rows. `att` receives `n_heads * n` weights.
    fn attend(&self, q: &[f64], keys: &[f64], vals: &[f64], n: usize, att: &mut [f64], o: &mut [f64]) {
        let d = self.config.d_model;
        let dh = d / self.config.n_heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        o.fill(0.0);
        for h in 0..self.config.n_heads {
            let hs = h * dh..(h + 1) * dh;
            let a = &mut att[h * n..(h + 1) * n];
            for u in 0..n {
                a[u] = dot(&q[hs.clone()], &keys[u * d + hs.start..u * d + hs.end]) * scale;
            }
            softmax(a);
            for u in 0..n {
                let vu = &vals[u * d + hs.start..u * d + hs.end];
                for j in 0..dh {
                    o[hs.start + j] += a[u] * vu[j];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn post_attn(&self, l: &LayerIx, x: &mut [f64], o: &[f64], tmp: &mut [f64], xhat: &mut [f64], h2: &mut [f64], pre: &mut [f64], act: &mut [f64]) -> f64 {
        linear(o, self.p(&l.wo), self.p(&l.bo), tmp);
        for (xi, ti) in x.iter_mut().zip(tmp.iter()) {
            *xi += ti;
        }
        let rstd = layer_norm(x, self.p(&l.ln2_g), self.p(&l.ln2_b), h2, xhat);
        linear(h2, self.p(&l.w1), self.p(&l.b1), pre);
        for (a, p) in act.iter_mut().zip(pre.iter()) {
            *a = gelu(*p);
        }
        linear(act, self.p(&l.w2), self.p(&l.b2), tmp);
        for (xi, ti) in x.iter_mut().zip(tmp.iter()) {
            *xi += ti;
        }
        rstd
    }

    fn head(&self, x: &[f64], xhat: &mut [f64], h: &mut [f64], logits: Option<&mut [f64]>) -> (f64, f64) {
        let rstd = layer_norm(x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), h, xhat);
        if let Some(z) = logits {
            linear(h, self.p(&self.layout.wout), self.p(&self.layout.bout), z);
        }
        let value = dot(h, self.p(&self.layout.wval)) + self.p(&self.layout.bval)[0];
        (rstd, value)
    }

    /// Full forward pass. Logits are computed for positions `logits_from..`.
    pub fn trace(&self, ids: &[TokenId], logits_from: usize) -> Result<Trace, ModelError> {
        self.check(ids)?;
        let n = ids.len();
        let logits_from = logits_from.min(n - 1);
        let d = self.config.d_model;
        let nh = self.config.n_heads;
        let ff = self.config.d_ff;
        let vsz = self.vocab.len();
        let mut x = vec![0.0; n * d];
        for (t, &id) in ids.iter().enumerate() {
            self.embed(id, t, &mut x[t * d..(t + 1) * d]);
        }
        let mut tmp = vec![0.0; d];
        let mut layers = Vec::with_capacity(self.config.n_layers);
        for l in &self.layout.layers {
            let mut lt = LayerTrace {
                ln1_xhat: vec![0.0; n * d],
                ln1_rstd: vec![0.0; n],
                h1: vec![0.0; n * d],
                q: vec![0.0; n * d],
                k: vec![0.0; n * d],
                v: vec![0.0; n * d],
                att: vec![0.0; n * nh * n],
                o: vec![0.0; n * d],
                ln2_xhat: vec![0.0; n * d],
                ln2_rstd: vec![0.0; n],
                h2: vec![0.0; n * d],
                pre: vec![0.0; n * ff],
                act: vec![0.0; n * ff],
            };
            for t in 0..n {
                let r = t * d..(t + 1) * d;
                lt.ln1_rstd[t] = self.pre_attn(
                    l,
                    &x[r.clone()],
                    &mut lt.ln1_xhat[r.clone()],
                    &mut lt.h1[r.clone()],
                    &mut lt.q[r.clone()],
                    &mut lt.k[r.clone()],
                    &mut lt.v[r],
                );
            }
            for t in 0..n {
                let r = t * d..(t + 1) * d;
                let rows = t + 1;
                let mut att = vec![0.0; nh * rows];
                self.attend(&lt.q[r.clone()], &lt.k[..rows * d], &lt.v[..rows * d], rows, &mut att, &mut lt.o[r.clone()]);
                for h in 0..nh {
                    let dst = (t * nh + h) * n;
                    lt.att[dst..dst + rows].copy_from_slice(&att[h * rows..(h + 1) * rows]);
                }
                let fr = t * ff..(t + 1) * ff;
                lt.ln2_rstd[t] = self.post_attn(
                    l,
                    &mut x[r.clone()],
                    &lt.o[r.clone()],
                    &mut tmp,
                    &mut lt.ln2_xhat[r.clone()],
                    &mut lt.h2[r],
                    &mut lt.pre[fr.clone()],
                    &mut lt.act[fr],
                );
            }
            layers.push(lt);
        }
        let mut lnf_xhat = vec![0.0; n * d];
        let mut lnf_rstd = vec![0.0; n];
        let mut hf = vec![0.0; n * d];
        let mut logits = vec![0.0; (n - logits_from) * vsz];
        let mut values = vec![0.0; n];
        for t in 0..n {
            let r = t * d..(t + 1) * d;
            let z = (t >= logits_from).then(|| {
                let k = t - logits_from;
                &mut logits[k * vsz..(k + 1) * vsz]
            });
            let (rstd, v) = self.head(&x[r.clone()], &mut lnf_xhat[r.clone()], &mut hf[r], z);
            lnf_rstd[t] = rstd;
            values[t] = v;
        }
        Ok(Trace { ids: ids.to_vec(), logits_from, layers, lnf_xhat, lnf_rstd, hf, logits, values })
    }

    /// Next-token distributions and values at every position.
    pub fn nlg_forward(&self, ids: &[TokenId]) -> Result<NlgOutput, ModelError> {
        let tr = self.trace(ids, 0)?;
        let mut probs = tr.logits.clone();
        for row in probs.chunks_mut(self.vocab.len()) {
            softmax(row);
        }
        Ok(NlgOutput { vocab: self.vocab.len(), probs, values: tr.values })
    }

    /// Accumulates parameter gradients into `grads` given output gradients.
    ///
    /// `dlogits` has one vocabulary-wide row per position from `trace.logits_from()`;
    /// `dvalues` has one entry per position. With `detach_value` the value
    /// gradient stops at the value head.
    pub fn backward(&self, tr: &Trace, dlogits: &[f64], dvalues: &[f64], detach_value: bool, grads: &mut [f64]) {
        let n = tr.len();
        let d = self.config.d_model;
        let nh = self.config.n_heads;
        let dh = d / nh;
        let ff = self.config.d_ff;
        let vsz = self.vocab.len();
        let lay = &self.layout;
        let mut dx = vec![0.0; n * d];
        let mut dh_row = vec![0.0; d];
        for t in 0..n {
            let r = t * d..(t + 1) * d;
            dh_row.fill(0.0);
            if t >= tr.logits_from {
                let k = t - tr.logits_from;
                let dz = &dlogits[k * vsz..(k + 1) * vsz];
                if dz.iter().any(|&g| g != 0.0) {
                    let (dw, db) = pair(grads, &lay.wout, &lay.bout);
                    linear_backward(&tr.hf[r.clone()], self.p(&lay.wout), dz, Some(&mut dh_row), dw, db);
                }
            }
            let dv = dvalues[t];
            if dv != 0.0 {
                if !detach_value {
                    let wv = self.p(&lay.wval);
                    for i in 0..d {
                        dh_row[i] += dv * wv[i];
                    }
                }
                let (dwv, dbv) = pair(grads, &lay.wval, &lay.bval);
                for i in 0..d {
                    dwv[i] += dv * tr.hf[t * d + i];
                }
                dbv[0] += dv;
            }
            let (dg, db) = pair(grads, &lay.lnf_g, &lay.lnf_b);
            layer_norm_backward(&tr.lnf_xhat[r.clone()], tr.lnf_rstd[t], self.p(&lay.lnf_g), &dh_row, &mut dx[r], dg, db);
        }

        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut dact = vec![0.0; ff];
        let mut dpre = vec![0.0; ff];
        let mut dtmp = vec![0.0; d];
        for (l, lt) in lay.layers.iter().zip(&tr.layers).rev() {
            // mlp residual
            for t in 0..n {
                let r = t * d..(t + 1) * d;
                let fr = t * ff..(t + 1) * ff;
                dact.fill(0.0);
                {
                    let (dw, db) = pair(grads, &l.w2, &l.b2);
                    linear_backward(&lt.act[fr.clone()], self.p(&l.w2), &dx[r.clone()], Some(&mut dact), dw, db);
                }
                for j in 0..ff {
                    dpre[j] = dact[j] * gelu_grad(lt.pre[t * ff + j]);
                }
                dtmp.fill(0.0);
                {
                    let (dw, db) = pair(grads, &l.w1, &l.b1);
                    linear_backward(&lt.h2[r.clone()], self.p(&l.w1), &dpre, Some(&mut dtmp), dw, db);
                }
                let (dg, db) = pair(grads, &l.ln2_g, &l.ln2_b);
                layer_norm_backward(&lt.ln2_xhat[r.clone()], lt.ln2_rstd[t], self.p(&l.ln2_g), &dtmp, &mut dx[r], dg, db);
            }
            // attention residual
            let mut d_o = vec![0.0; n * d];
            for t in 0..n {
                let r = t * d..(t + 1) * d;
                let (dw, db) = pair(grads, &l.wo, &l.bo);
                linear_backward(&lt.o[r.clone()], self.p(&l.wo), &dx[r.clone()], Some(&mut d_o[r]), dw, db);
            }
            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dvv = vec![0.0; n * d];
            let mut da = vec![0.0; n];
            for t in 0..n {
                for h in 0..nh {
                    let a = &lt.att[(t * nh + h) * n..(t * nh + h) * n + t + 1];
                    let off = h * dh;
                    let dot_t = &d_o[t * d + off..t * d + off + dh];
                    let mut sum = 0.0;
                    for u in 0..=t {
                        let vu = &lt.v[u * d + off..u * d + off + dh];
                        da[u] = dot(dot_t, vu);
                        sum += a[u] * da[u];
                        for j in 0..dh {
                            dvv[u * d + off + j] += a[u] * dot_t[j];
                        }
                    }
                    for u in 0..=t {
                        let ds = a[u] * (da[u] - sum) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for j in 0..dh {
                            dq[t * d + off + j] += ds * lt.k[u * d + off + j];
                            dk[u * d + off + j] += ds * lt.q[t * d + off + j];
                        }
                    }
                }
            }
            for t in 0..n {
                let r = t * d..(t + 1) * d;
                dtmp.fill(0.0);
                {
                    let (dw, db) = pair(grads, &l.wq, &l.bq);
                    linear_backward(&lt.h1[r.clone()], self.p(&l.wq), &dq[r.clone()], Some(&mut dtmp), dw, db);
                }
                {
                    let (dw, db) = pair(grads, &l.wk, &l.bk);
                    linear_backward(&lt.h1[r.clone()], self.p(&l.wk), &dk[r.clone()], Some(&mut dtmp), dw, db);
                }
                {
                    let (dw, db) = pair(grads, &l.wv, &l.bv);
                    linear_backward(&lt.h1[r.clone()], self.p(&l.wv), &dvv[r.clone()], Some(&mut dtmp), dw, db);
                }
                let (dg, db) = pair(grads, &l.ln1_g, &l.ln1_b);
                layer_norm_backward(&lt.ln1_xhat[r.clone()], lt.ln1_rstd[t], self.p(&l.ln1_g), &dtmp, &mut dx[r], dg, db);
            }
        }
        let (dtok, dpos) = pair(grads, &lay.tok, &lay.pos);
        for (t, &id) in tr.ids.iter().enumerate() {
            let id = id as usize;
            for i in 0..d {
                dtok[id * d + i] += dx[t * d + i];
                dpos[t * d + i] += dx[t * d + i];
            }
        }
    }

    /// Incremental decoder with a key/value cache.
    pub fn decoder(&self) -> Decoder<'_> {
        let n = self.config.n_layers;
        Decoder { model: self, keys: vec![Vec::new(); n], vals: vec![Vec::new(); n], len: 0 }
    }

    /// Decodes after the act prefix until `[EOS]`, `max_len` actions, or the context limit.
    pub fn generate<R: Rng + ?Sized>(&self, da: &DialogueAct, mode: Decoding, max_len: usize, rng: &mut R) -> Result<Generation, ModelError> {
        let prefix = self.vocab.encode_da(da);
        self.generate_ids(&prefix, mode, max_len, rng)
    }

    /// Greedy decoding; needs no RNG.
    pub fn greedy(&self, da: &DialogueAct, max_len: usize) -> Result<Generation, ModelError> {
        let mut unused = seed::rng(0);
        self.generate(da, Decoding::Greedy, max_len, &mut unused)
    }

    pub fn generate_ids<R: Rng + ?Sized>(&self, prefix: &[TokenId], mode: Decoding, max_len: usize, rng: &mut R) -> Result<Generation, ModelError> {
        self.check(prefix)?;
        let mut dec = self.decoder();
        let mut step = None;
        for &id in prefix {
            step = Some(dec.step(id)?);
        }
        let (mut logits, mut value) = step.ok_or(ModelError::EmptySequence)?;
        let mut out = Generation { actions: Vec::new(), logprobs: Vec::new(), values: Vec::new(), truncated: false };
        loop {
            if out.actions.len() >= max_len {
                out.truncated = true;
                break;
            }
            let tok = match mode {
                Decoding::Greedy => super::ops::argmax(&logits),
                Decoding::Sample { temperature } => sample(&logits, temperature, rng),
            };
            out.logprobs.push(log_prob_at(&logits, tok));
            out.values.push(value);
            out.actions.push(tok as TokenId);
            if tok as TokenId == TokenVocabulary::EOS_ID {
                break;
            }
            if dec.len() >= self.config.context {
                out.truncated = true;
                break;
            }
            (logits, value) = dec.step(tok as TokenId)?;
        }
        Ok(out)
    }

    /// Log-probabilities of `actions` following the act prefix.
    pub fn sequence_logprob(&self, da: &DialogueAct, actions: &[TokenId]) -> Result<(f64, Vec<f64>), ModelError> {
        let prefix = self.vocab.encode_da(da);
        let mut ids = prefix.clone();
        ids.extend_from_slice(actions);
        let tr = self.trace(&ids, prefix.len() - 1)?;
        let per: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| log_prob_at(tr.logits(prefix.len() - 1 + i), a as usize)).collect();
        Ok((per.iter().sum(), per))
    }
}

fn sample<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    let t = if temperature > 0.0 { temperature } else { 1.0 };
    let mut p: Vec<f64> = logits.iter().map(|z| z / t).collect();
    softmax(&mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Cached incremental forward; one call per token.
#[derive(Debug, Clone)]
pub struct Decoder<'m> {
    model: &'m PolicyModel,
    keys: Vec<Vec<f64>>,
    vals: Vec<Vec<f64>>,
    len: usize,
}

impl Decoder<'_> {
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token; returns next-token logits and the value at this position.
    pub fn step(&mut self, id: TokenId) -> Result<(Vec<f64>, f64), ModelError> {
        let m = self.model;
        if id as usize >= m.vocab.len() {
            return Err(ModelError::TokenOutOfRange { id, vocab: m.vocab.len() });
        }
        if self.len >= m.config.context {
            return Err(ModelError::TooLong { len: self.len + 1, max: m.config.context });
        }
        let d = m.config.d_model;
        let ff = m.config.d_ff;
        let t = self.len;
        let mut x = vec![0.0; d];
        m.embed(id, t, &mut x);
        let (mut xhat, mut h, mut q, mut k, mut v, mut o, mut tmp) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let (mut pre, mut act) = (vec![0.0; ff], vec![0.0; ff]);
        let mut att = vec![0.0; m.config.n_heads * (t + 1)];
        for (li, l) in m.layout.layers.iter().enumerate() {
            m.pre_attn(l, &x, &mut xhat, &mut h, &mut q, &mut k, &mut v);
            self.keys[li].extend_from_slice(&k);
            self.vals[li].extend_from_slice(&v);
            m.attend(&q, &self.keys[li], &self.vals[li], t + 1, &mut att, &mut o);
            m.post_attn(l, &mut x, &o, &mut tmp, &mut xhat, &mut h, &mut pre, &mut act);
        }
        let mut logits = vec![0.0; m.vocab.len()];
        let (_, value) = m.head(&x, &mut xhat, &mut h, Some(&mut logits));
        self.len += 1;
        Ok((logits, value))
    }
}
