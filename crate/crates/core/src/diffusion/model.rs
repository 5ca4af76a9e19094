//! Text attention module and noise-prediction network with a hand-written
//! backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    add_bias, col_sum_acc, dot, mm_acc, mm_at_acc, mm_bt_acc, silu, silu_grad, sigmoid, sinusoid, softmax,
};
use super::schedule::{NoiseSchedule, ScheduleSpec};
use super::vocab::Vocab;
use crate::error::ModelError;

/// How the text condition is formed from the attention branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Mean-pooled self-attention only.
    SelfOnly,
    /// Gaze, head and self features summed.
    TamAdd,
    /// Gaze, head and self features concatenated.
    TamConcat,
}

impl Conditioning {
    pub fn uses_anchors(&self) -> bool {
        !matches!(self, Conditioning::SelfOnly)
    }
}

impl std::str::FromStr for Conditioning {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "self-only" | "none" => Ok(Conditioning::SelfOnly),
            "tam-add" | "add" => Ok(Conditioning::TamAdd),
            "tam-concat" | "concat" => Ok(Conditioning::TamConcat),
            _ => Err(ModelError::Config(format!("unknown conditioning `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub conditioning: Conditioning,
    pub positional: bool,
    pub mlp_hidden: usize,
    pub t_embed: usize,
    pub cond_proj: usize,
    pub zero_init_out: bool,
    pub gaze_anchor: String,
    pub head_anchor: String,
    pub schedule: ScheduleSpec,
}

impl ModelConfig {
    /// Small preset for desk-scale runs: 2 layers, 4 heads.
    pub fn toy() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn_hidden: 128,
            conditioning: Conditioning::TamAdd,
            positional: true,
            mlp_hidden: 256,
            t_embed: 32,
            cond_proj: 64,
            zero_init_out: true,
            gaze_anchor: "gaze".into(),
            head_anchor: "head".into(),
            schedule: ScheduleSpec::default(),
        }
    }

    /// 6 layers, 8 heads per branch.
    pub fn full_scale() -> Self {
        Self { layers: 6, heads: 8, ffn_hidden: 256, ..Self::toy() }
    }

    pub fn with_conditioning(mut self, c: Conditioning) -> Self {
        self.conditioning = c;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.layers == 0 || self.ffn_hidden == 0 || self.mlp_hidden == 0 || self.cond_proj == 0 {
            return bad("layer counts and widths must be positive".into());
        }
        if self.t_embed == 0 || !self.t_embed.is_multiple_of(2) {
            return bad(format!("t_embed {} must be even and positive", self.t_embed));
        }
        if self.positional && !self.d_model.is_multiple_of(2) {
            return bad("positional encoding needs an even d_model".into());
        }
        NoiseSchedule::new(self.schedule)?;
        Ok(())
    }

    pub fn cond_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::TamConcat => 3 * self.d_model,
            _ => self.d_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: usize,
    b: usize,
}

/// Named tensors packed into one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    emb: usize,
    gaze: Vec<AttnIds>,
    head: Vec<AttnIds>,
    slf: Vec<AttnIds>,
    cond: LinearIds,
    mlp: [LinearIds; 3],
}

impl Layout {
    pub fn new(cfg: &ModelConfig, vocab_size: usize) -> Self {
        let mut tensors: Vec<TensorInfo> = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let info = TensorInfo { name, shape, offset: total };
            total += info.len();
            tensors.push(info);
            tensors.len() - 1
        };
        let d = cfg.d_model;
        let f = cfg.ffn_hidden;
        let emb = push("embedding".into(), vec![vocab_size, d]);
        let mut stack = |branch: &str| -> Vec<AttnIds> {
            (0..cfg.layers)
                .map(|l| {
                    let n = |s: &str| format!("{branch}.{l}.{s}");
                    AttnIds {
                        wq: push(n("wq"), vec![d, d]),
                        wk: push(n("wk"), vec![d, d]),
                        wv: push(n("wv"), vec![d, d]),
                        wo: push(n("wo"), vec![d, d]),
                        w1: push(n("ffn.w1"), vec![d, f]),
                        b1: push(n("ffn.b1"), vec![f]),
                        w2: push(n("ffn.w2"), vec![f, d]),
                        b2: push(n("ffn.b2"), vec![d]),
                    }
                })
                .collect()
        };
        let (gaze, head) = if cfg.conditioning.uses_anchors() {
            (stack("gaze"), stack("head"))
        } else {
            (Vec::new(), Vec::new())
        };
        let slf = stack("self");
        let mut lin = |name: &str, i: usize, o: usize| LinearIds {
            w: push(format!("{name}.w"), vec![i, o]),
            b: push(format!("{name}.b"), vec![o]),
        };
        let cond = lin("cond", cfg.cond_dim(), cfg.cond_proj);
        let in_dim = 4 + cfg.t_embed + cfg.cond_proj;
        let mlp = [
            lin("mlp.0", in_dim, cfg.mlp_hidden),
            lin("mlp.1", cfg.mlp_hidden, cfg.mlp_hidden),
            lin("mlp.2", cfg.mlp_hidden, 4),
        ];
        Self { tensors, total, emb, gaze, head, slf, cond, mlp }
    }

    fn range(&self, id: usize) -> std::ops::Range<usize> {
        let t = &self.tensors[id];
        t.offset..t.offset + t.len()
    }
}

/// Deliberate backward-pass errors for exercising the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradFault {
    #[default]
    None,
    /// Uses σ(x) in place of the SiLU derivative.
    SiluDerivative,
    /// Drops the row-sum term of the softmax Jacobian.
    SoftmaxJacobian,
}

/// One training example with its noise draw fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub x0: [f64; 4],
    pub t: usize,
    pub eps: [f64; 4],
}

/// The diffusion model: vocabulary, schedule, layout and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub schedule: NoiseSchedule,
    pub layout: Layout,
    pub params: Vec<f64>,
    anchors: Option<(usize, usize)>,
}

/// Rounds every value to the nearest f32 so checkpoints are exact.
pub fn round_to_f32(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        let mut m = Self::zeroed(config, vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..m.layout.tensors.len() {
            let info = m.layout.tensors[i].clone();
            let std = if info.name == "embedding" {
                0.5
            } else if info.shape.len() == 1 || (m.config.zero_init_out && info.name == "mlp.2.w") {
                0.0
            } else {
                1.0 / (info.shape[0] as f64).sqrt()
            };
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("finite std");
                for x in &mut m.params[info.offset..info.offset + info.len()] {
                    *x = normal.sample(&mut rng);
                }
            }
        }
        round_to_f32(&mut m.params);
        Ok(m)
    }

    /// All-zero parameters; used when loading checkpoints.
    pub fn zeroed(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.validate()?;
        let anchors = if config.conditioning.uses_anchors() {
            let g = vocab.get(&config.gaze_anchor).ok_or_else(|| ModelError::AnchorMissing(config.gaze_anchor.clone()))?;
            let h = vocab.get(&config.head_anchor).ok_or_else(|| ModelError::AnchorMissing(config.head_anchor.clone()))?;
            Some((g, h))
        } else {
            None
        };
        let schedule = NoiseSchedule::new(config.schedule)?;
        let layout = Layout::new(&config, vocab.len());
        let params = vec![0.0; layout.total];
        Ok(Self { config, vocab, schedule, layout, params, anchors })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn p(&self, id: usize) -> &[f64] {
        &self.params[self.layout.range(id)]
    }

    /// Word features: embeddings plus optional sinusoidal positions.
    fn word_features(&self, tokens: &[usize]) -> Vec<f64> {
        let d = self.config.d_model;
        let emb = self.p(self.layout.emb);
        let mut w = Vec::with_capacity(tokens.len() * d);
        for (pos, &tok) in tokens.iter().enumerate() {
            let row = &emb[tok * d..(tok + 1) * d];
            if self.config.positional {
                let pe = sinusoid(pos as f64, d);
                w.extend(row.iter().zip(&pe).map(|(a, b)| a + b));
            } else {
                w.extend_from_slice(row);
            }
        }
        w
    }

    /// The text condition vector for a token sequence.
    pub fn condition(&self, tokens: &[usize]) -> Result<Vec<f64>, ModelError> {
        Ok(self.condition_forward(tokens)?.0)
    }

    fn condition_forward(&self, tokens: &[usize]) -> Result<(Vec<f64>, CondCache), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(ModelError::Config(format!("token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        let d = self.config.d_model;
        let l = tokens.len();
        let words = self.word_features(tokens);
        let mut cross = Vec::new();
        if let Some((ga, ha)) = self.anchors {
            let emb = self.p(self.layout.emb);
            for (anchor, stack) in [(ga, &self.layout.gaze), (ha, &self.layout.head)] {
                let mut x = emb[anchor * d..(anchor + 1) * d].to_vec();
                let mut layers = Vec::with_capacity(stack.len());
                for ids in stack {
                    let (y, c) = self.layer_forward(ids, &x, 1, &words, l);
                    layers.push(c);
                    x = y;
                }
                cross.push(BranchCache { anchor, layers, out: x });
            }
        }
        let mut x = words.clone();
        let mut layers = Vec::with_capacity(self.layout.slf.len());
        for ids in &self.layout.slf {
            let (y, c) = self.layer_forward(ids, &x, l, &x, l);
            layers.push(c);
            x = y;
        }
        let mut pooled = vec![0.0; d];
        for i in 0..l {
            for j in 0..d {
                pooled[j] += x[i * d + j];
            }
        }
        for v in &mut pooled {
            *v /= l as f64;
        }
        let cond = match self.config.conditioning {
            Conditioning::SelfOnly => pooled.clone(),
            Conditioning::TamAdd => (0..d).map(|j| cross[0].out[j] + cross[1].out[j] + pooled[j]).collect(),
            Conditioning::TamConcat => {
                let mut c = cross[0].out.clone();
                c.extend_from_slice(&cross[1].out);
                c.extend_from_slice(&pooled);
                c
            }
        };
        Ok((cond, CondCache { tokens: tokens.to_vec(), cross, self_layers: layers }))
    }

    /// Residual attention then residual feed-forward, for `nq` query rows
    /// attending over `nk` key rows.
    fn layer_forward(&self, ids: &AttnIds, xq: &[f64], nq: usize, xk: &[f64], nk: usize) -> (Vec<f64>, LayerCache) {
        let d = self.config.d_model;
        let h = self.config.heads;
        let dh = d / h;
        let f = self.config.ffn_hidden;
        let mut q = vec![0.0; nq * d];
        let mut k = vec![0.0; nk * d];
        let mut v = vec![0.0; nk * d];
        mm_acc(xq, self.p(ids.wq), nq, d, d, &mut q);
        mm_acc(xk, self.p(ids.wk), nk, d, d, &mut k);
        mm_acc(xk, self.p(ids.wv), nk, d, d, &mut v);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut a = vec![0.0; h * nq * nk];
        let mut o = vec![0.0; nq * d];
        for hh in 0..h {
            let off = hh * dh;
            for i in 0..nq {
                let row = &mut a[(hh * nq + i) * nk..(hh * nq + i + 1) * nk];
                let qi = &q[i * d + off..i * d + off + dh];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * dot(qi, &k[j * d + off..j * d + off + dh]);
                }
                softmax(row);
                let oi = &mut o[i * d + off..i * d + off + dh];
                for (j, &w) in row.iter().enumerate() {
                    for (ov, vv) in oi.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *ov += w * vv;
                    }
                }
            }
        }
        let mut x1 = xq.to_vec();
        mm_acc(&o, self.p(ids.wo), nq, d, d, &mut x1);
        let mut hid = vec![0.0; nq * f];
        mm_acc(&x1, self.p(ids.w1), nq, d, f, &mut hid);
        add_bias(&mut hid, self.p(ids.b1), nq);
        let g: Vec<f64> = hid.iter().map(|&z| silu(z)).collect();
        let mut x2 = x1.clone();
        mm_acc(&g, self.p(ids.w2), nq, f, d, &mut x2);
        add_bias(&mut x2, self.p(ids.b2), nq);
        let cache = LayerCache { xq: xq.to_vec(), xk: xk.to_vec(), nq, nk, q, k, v, a, o, x1, hid, g };
        (x2, cache)
    }

    /// ε̂ for one noisy pose at timestep `t` under condition `cond`.
    pub fn predict_eps(&self, x_t: &[f64; 4], t: usize, cond: &[f64]) -> [f64; 4] {
        self.eps_forward(x_t, t, cond).0
    }

    fn eps_forward(&self, x_t: &[f64; 4], t: usize, cond: &[f64]) -> ([f64; 4], EpsCache) {
        let cfg = &self.config;
        let mut cp = self.p(self.layout.cond.b).to_vec();
        mm_acc(cond, self.p(self.layout.cond.w), 1, cfg.cond_dim(), cfg.cond_proj, &mut cp);
        let mut z = x_t.to_vec();
        z.extend(sinusoid(t as f64, cfg.t_embed));
        z.extend_from_slice(&cp);
        let mut acts = vec![z];
        let mut pre = Vec::new();
        let dims = [4 + cfg.t_embed + cfg.cond_proj, cfg.mlp_hidden, cfg.mlp_hidden, 4];
        for (li, lin) in self.layout.mlp.iter().enumerate() {
            let mut y = self.p(lin.b).to_vec();
            mm_acc(acts.last().expect("input"), self.p(lin.w), 1, dims[li], dims[li + 1], &mut y);
            if li < 2 {
                let g = y.iter().map(|&v| silu(v)).collect();
                pre.push(y);
                acts.push(g);
            } else {
                pre.push(y);
            }
        }
        let out = pre.last().expect("output layer");
        ([out[0], out[1], out[2], out[3]], EpsCache { cond: cond.to_vec(), acts, pre })
    }

    /// Squared error `‖ε − ε̂‖²` for one example; when `grad` is given,
    /// adds `scale ·` its gradient.
    pub fn example_loss(
        &self,
        ex: &Example,
        grad: Option<&mut [f64]>,
        scale: f64,
        fault: GradFault,
    ) -> Result<f64, ModelError> {
        let x_t = self.schedule.q_sample(&ex.x0, ex.t, &ex.eps)?;
        let (cond, ccache) = self.condition_forward(&ex.tokens)?;
        let (eps_hat, ecache) = self.eps_forward(&x_t, ex.t, &cond);
        let loss: f64 = (0..4).map(|i| (ex.eps[i] - eps_hat[i]).powi(2)).sum();
        if let Some(grad) = grad {
            let dout: Vec<f64> = (0..4).map(|i| scale * 2.0 * (eps_hat[i] - ex.eps[i])).collect();
            let mut bx = Backward { m: self, grad, fault };
            let dcond = bx.eps_backward(&ecache, &dout);
            bx.condition_backward(&ccache, &dcond);
        }
        Ok(loss)
    }

    /// Mean example loss over `batch`, with the gradient of that mean
    /// written to `grad` (overwritten) when given.
    pub fn batch_loss(&self, batch: &[Example], grad: Option<&mut [f64]>, fault: GradFault) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        match grad {
            Some(g) => {
                g.iter_mut().for_each(|v| *v = 0.0);
                for ex in batch {
                    total += self.example_loss(ex, Some(g), scale, fault)?;
                }
            }
            None => {
                for ex in batch {
                    total += self.example_loss(ex, None, scale, fault)?;
                }
            }
        }
        Ok(total * scale)
    }

    /// Attention weights of the first layer of each branch, for inspection.
    pub fn first_layer_attention(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
        let (_, c) = self.condition_forward(tokens)?;
        let mut out: Vec<Vec<f64>> = c.cross.iter().map(|b| b.layers[0].a.clone()).collect();
        out.push(c.self_layers[0].a.clone());
        Ok(out)
    }
}

/// Raw multi-head attention of `queries` over `keys` with identity
/// projections: returns the weights and the attended values.
pub fn attend(queries: &[f64], nq: usize, keys: &[f64], nk: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut a = vec![0.0; heads * nq * nk];
    let mut o = vec![0.0; nq * d];
    for hh in 0..heads {
        let off = hh * dh;
        for i in 0..nq {
            let row = &mut a[(hh * nq + i) * nk..(hh * nq + i + 1) * nk];
            for (j, s) in row.iter_mut().enumerate() {
                *s = scale * dot(&queries[i * d + off..i * d + off + dh], &keys[j * d + off..j * d + off + dh]);
            }
            softmax(row);
            for (j, &w) in row.iter().enumerate() {
                for c in 0..dh {
                    o[i * d + off + c] += w * keys[j * d + off + c];
                }
            }
        }
    }
    (a, o)
}

struct LayerCache {
    xq: Vec<f64>,
    xk: Vec<f64>,
    nq: usize,
    nk: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    o: Vec<f64>,
    x1: Vec<f64>,
    hid: Vec<f64>,
    g: Vec<f64>,
}

struct BranchCache {
    anchor: usize,
    layers: Vec<LayerCache>,
    out: Vec<f64>,
}

struct CondCache {
    tokens: Vec<usize>,
    cross: Vec<BranchCache>,
    self_layers: Vec<LayerCache>,
}

struct EpsCache {
    cond: Vec<f64>,
    /// Inputs to each linear layer.
    acts: Vec<Vec<f64>>,
    /// Pre-activation outputs of each linear layer.
    pre: Vec<Vec<f64>>,
}

struct Backward<'a> {
    m: &'a Model,
    grad: &'a mut [f64],
    fault: GradFault,
}

impl Backward<'_> {
    fn g(&mut self, id: usize) -> &mut [f64] {
        let r = self.m.layout.range(id);
        &mut self.grad[r]
    }

    fn act_grad(&self, z: f64) -> f64 {
        match self.fault {
            GradFault::SiluDerivative => sigmoid(z),
            _ => silu_grad(z),
        }
    }

    /// Returns d loss / d cond.
    fn eps_backward(&mut self, c: &EpsCache, dout: &[f64]) -> Vec<f64> {
        let cfg = &self.m.config;
        let dims = [4 + cfg.t_embed + cfg.cond_proj, cfg.mlp_hidden, cfg.mlp_hidden, 4];
        let mut dy = dout.to_vec();
        for li in (0..3).rev() {
            let lin = self.m.layout.mlp[li];
            if li < 2 {
                for (v, &z) in dy.iter_mut().zip(&c.pre[li]) {
                    *v *= self.act_grad(z);
                }
            }
            let x = &c.acts[li];
            mm_at_acc(x, &dy, 1, dims[li], dims[li + 1], self.g(lin.w));
            col_sum_acc(&dy, 1, dims[li + 1], self.g(lin.b));
            let mut dx = vec![0.0; dims[li]];
            mm_bt_acc(&dy, self.m.p(lin.w), 1, dims[li + 1], dims[li], &mut dx);
            dy = dx;
        }
        let dcp = &dy[4 + cfg.t_embed..];
        let cond = self.m.layout.cond;
        mm_at_acc(&c.cond, dcp, 1, cfg.cond_dim(), cfg.cond_proj, self.g(cond.w));
        col_sum_acc(dcp, 1, cfg.cond_proj, self.g(cond.b));
        let mut dcond = vec![0.0; cfg.cond_dim()];
        mm_bt_acc(dcp, self.m.p(cond.w), 1, cfg.cond_proj, cfg.cond_dim(), &mut dcond);
        dcond
    }

    fn condition_backward(&mut self, c: &CondCache, dcond: &[f64]) {
        let d = self.m.config.d_model;
        let l = c.tokens.len();
        let (dg, dh, dp): (Vec<f64>, Vec<f64>, Vec<f64>) = match self.m.config.conditioning {
            Conditioning::SelfOnly => (Vec::new(), Vec::new(), dcond.to_vec()),
            Conditioning::TamAdd => (dcond.to_vec(), dcond.to_vec(), dcond.to_vec()),
            Conditioning::TamConcat => (dcond[..d].to_vec(), dcond[d..2 * d].to_vec(), dcond[2 * d..].to_vec()),
        };
        let mut dwords = vec![0.0; l * d];
        // self branch: mean pooling
        let mut dx = vec![0.0; l * d];
        for i in 0..l {
            for j in 0..d {
                dx[i * d + j] = dp[j] / l as f64;
            }
        }
        for (ids, lc) in self.m.layout.slf.iter().zip(&c.self_layers).rev() {
            let (dxq, dxk) = self.layer_backward(ids, lc, &dx);
            dx = dxq.iter().zip(&dxk).map(|(a, b)| a + b).collect();
        }
        for (w, v) in dwords.iter_mut().zip(&dx) {
            *w += v;
        }
        // cross branches
        let stacks = [&self.m.layout.gaze, &self.m.layout.head];
        for (bi, (branch, dout)) in c.cross.iter().zip([dg, dh]).enumerate() {
            let mut dq = dout;
            for (ids, lc) in stacks[bi].iter().zip(&branch.layers).rev() {
                let (dxq, dxk) = self.layer_backward(ids, lc, &dq);
                for (w, v) in dwords.iter_mut().zip(&dxk) {
                    *w += v;
                }
                dq = dxq;
            }
            let a = branch.anchor;
            let ge = self.g(self.m.layout.emb);
            for (gv, v) in ge[a * d..(a + 1) * d].iter_mut().zip(&dq) {
                *gv += v;
            }
        }
        let ge = self.g(self.m.layout.emb);
        for (pos, &tok) in c.tokens.iter().enumerate() {
            for j in 0..d {
                ge[tok * d + j] += dwords[pos * d + j];
            }
        }
    }

    /// Returns (d xq, d xk) for a layer given d x2.
    fn layer_backward(&mut self, ids: &AttnIds, c: &LayerCache, dx2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.m.config.d_model;
        let h = self.m.config.heads;
        let dh = d / h;
        let f = self.m.config.ffn_hidden;
        let (nq, nk) = (c.nq, c.nk);

        // feed-forward with residual
        mm_at_acc(&c.g, dx2, nq, f, d, self.g(ids.w2));
        col_sum_acc(dx2, nq, d, self.g(ids.b2));
        let mut dhid = vec![0.0; nq * f];
        mm_bt_acc(dx2, self.m.p(ids.w2), nq, d, f, &mut dhid);
        for (v, &z) in dhid.iter_mut().zip(&c.hid) {
            *v *= self.act_grad(z);
        }
        mm_at_acc(&c.x1, &dhid, nq, d, f, self.g(ids.w1));
        col_sum_acc(&dhid, nq, f, self.g(ids.b1));
        let mut dx1 = dx2.to_vec();
        mm_bt_acc(&dhid, self.m.p(ids.w1), nq, f, d, &mut dx1);

        // attention with residual
        mm_at_acc(&c.o, &dx1, nq, d, d, self.g(ids.wo));
        let mut do_ = vec![0.0; nq * d];
        mm_bt_acc(&dx1, self.m.p(ids.wo), nq, d, d, &mut do_);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; nq * d];
        let mut dk = vec![0.0; nk * d];
        let mut dv = vec![0.0; nk * d];
        let mut da = vec![0.0; nk];
        for hh in 0..h {
            let off = hh * dh;
            for i in 0..nq {
                let arow = &c.a[(hh * nq + i) * nk..(hh * nq + i + 1) * nk];
                let doi = &do_[i * d + off..i * d + off + dh];
                for j in 0..nk {
                    da[j] = dot(doi, &c.v[j * d + off..j * d + off + dh]);
                    for (dvv, &g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(doi) {
                        *dvv += arow[j] * g;
                    }
                }
                let rs = if self.fault == GradFault::SoftmaxJacobian { 0.0 } else { dot(&da, arow) };
                for j in 0..nk {
                    let ds = arow[j] * (da[j] - rs) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for cc in 0..dh {
                        dq[i * d + off + cc] += ds * c.k[j * d + off + cc];
                        dk[j * d + off + cc] += ds * c.q[i * d + off + cc];
                    }
                }
            }
        }
        mm_at_acc(&c.xq, &dq, nq, d, d, self.g(ids.wq));
        mm_at_acc(&c.xk, &dk, nk, d, d, self.g(ids.wk));
        mm_at_acc(&c.xk, &dv, nk, d, d, self.g(ids.wv));
        let mut dxq = dx1;
        mm_bt_acc(&dq, self.m.p(ids.wq), nq, d, d, &mut dxq);
        let mut dxk = vec![0.0; nk * d];
        mm_bt_acc(&dk, self.m.p(ids.wk), nk, d, d, &mut dxk);
        mm_bt_acc(&dv, self.m.p(ids.wv), nk, d, d, &mut dxk);
        (dxq, dxk)
    }
}
