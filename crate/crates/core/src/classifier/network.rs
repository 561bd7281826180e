//! Flat-parameter network: embedding table, encoder, two-layer head.
//!
//! All parameters live in one `Vec<f64>` addressed through a [`Layout`], so
//! the optimizer, gradient checker and checkpoints see a single array.
//! Matrices are row-major with `rows = outputs`, `cols = inputs`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EncoderKind;

pub(crate) const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// One direction of one recurrent layer: gates `[i, f, g, o]` stacked in
/// `w` (4H × (in + H)) and `b` (4H).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmSlots {
    pub w: Slot,
    pub b: Slot,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embedding: Slot,
    /// `[forward, backward]` per layer; empty for the bag encoder.
    pub lstm: Vec<[LstmSlots; 2]>,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
    pub total: usize,
}

impl Layout {
    pub fn new(
        kind: EncoderKind,
        vocab: usize,
        embed: usize,
        hidden: usize,
        layers: usize,
        classes: usize,
    ) -> Self {
        let mut offset = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let embedding = slot(vocab, embed);
        let mut lstm = Vec::new();
        let enc_dim = match kind {
            EncoderKind::BagMean => embed,
            EncoderKind::BiRecurrent => {
                let mut input = embed;
                for _ in 0..layers {
                    let mut dir = || LstmSlots {
                        w: slot(4 * hidden, input + hidden),
                        b: slot(4 * hidden, 1),
                        input,
                        hidden,
                    };
                    let pair = [dir(), dir()];
                    lstm.push(pair);
                    input = 2 * hidden;
                }
                2 * hidden
            }
        };
        let w1 = slot(hidden, enc_dim);
        let b1 = slot(hidden, 1);
        let w2 = slot(classes, hidden);
        let b2 = slot(classes, 1);
        Self {
            embedding,
            lstm,
            w1,
            b1,
            w2,
            b2,
            total: offset,
        }
    }

    pub fn classes(&self) -> usize {
        self.b2.rows
    }

    /// Embedding entries are drawn from U(−√3, √3) (unit variance). Every
    /// other weight and bias is drawn from U(−1/√n, 1/√n), with `n` the layer
    /// fan-in, or the hidden size for recurrent layers. This keeps untrained
    /// logits small, so fresh classifiers start close to uniform.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.total];
        let mut fill = |s: Slot, bound: f64| {
            for p in &mut params[s.range()] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();
        fill(self.embedding, 3f64.sqrt());
        for layer in &self.lstm {
            for d in layer {
                fill(d.w, inv_sqrt(d.hidden));
                fill(d.b, inv_sqrt(d.hidden));
            }
        }
        fill(self.w1, inv_sqrt(self.w1.cols));
        fill(self.b1, inv_sqrt(self.w1.cols));
        fill(self.w2, inv_sqrt(self.w2.cols));
        fill(self.b2, inv_sqrt(self.w2.cols));
        params
    }

    /// Parameter indices that can influence the loss of `tokens`.
    pub fn relevant_indices(&self, tokens: &[usize]) -> Vec<usize> {
        let mut rows: Vec<usize> = tokens.to_vec();
        rows.sort_unstable();
        rows.dedup();
        let d = self.embedding.cols;
        let mut out: Vec<usize> = rows
            .into_iter()
            .flat_map(|r| {
                let start = self.embedding.offset + r * d;
                start..start + d
            })
            .collect();
        out.extend(self.embedding.offset + self.embedding.len()..self.total);
        out
    }
}

// out = W x + b
fn affine(params: &[f64], w: Slot, b: Slot, x: &[f64], out: &mut [f64]) {
    let weights = &params[w.range()];
    let bias = &params[b.range()];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weights[r * w.cols..(r + 1) * w.cols];
        *o = bias[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// gW += dy ⊗ x, gb += dy, dx += Wᵀ dy
fn affine_backward(
    params: &[f64],
    grad: &mut [f64],
    w: Slot,
    b: Slot,
    x: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
) {
    let weights = &params[w.range()];
    {
        let gw = &mut grad[w.range()];
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut gw[r * w.cols..(r + 1) * w.cols];
            for (gwi, xi) in row.iter_mut().zip(x) {
                *gwi += g * xi;
            }
        }
    }
    for (gb, g) in grad[b.range()].iter_mut().zip(dy) {
        *gb += g;
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &weights[r * w.cols..(r + 1) * w.cols];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += g * wi;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LstmStep {
    input: Vec<f64>, // [x_t ; h_{t-1}]
    gates: Vec<f64>, // activated [i, f, g, o]
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct LstmRun {
    steps: Vec<LstmStep>,
    outputs: Vec<Vec<f64>>,
}

fn lstm_forward(params: &[f64], s: &LstmSlots, xs: &[&[f64]]) -> LstmRun {
    let h = s.hidden;
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(xs.len());
    let mut outputs = Vec::with_capacity(xs.len());
    let mut z = vec![0.0; 4 * h];
    for x in xs {
        let mut input = Vec::with_capacity(s.input + h);
        input.extend_from_slice(x);
        input.extend_from_slice(&h_prev);
        affine(params, s.w, s.b, &input, &mut z);
        let mut gates = z.clone();
        for (k, gv) in gates.iter_mut().enumerate() {
            *gv = if (2 * h..3 * h).contains(&k) {
                gv.tanh()
            } else {
                sigmoid(*gv)
            };
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h_new[j] = o * tanh_c[j];
        }
        steps.push(LstmStep {
            input,
            gates,
            c_prev: std::mem::replace(&mut c_prev, c),
            tanh_c,
        });
        outputs.push(h_new.clone());
        h_prev = h_new;
    }
    LstmRun { steps, outputs }
}

/// Back-propagates `d_outputs` (one per step) through a run; returns the
/// gradient with respect to each step's input `x_t`.
fn lstm_backward(
    params: &[f64],
    grad: &mut [f64],
    s: &LstmSlots,
    run: &LstmRun,
    d_outputs: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let h = s.hidden;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dxs = vec![Vec::new(); run.steps.len()];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..run.steps.len()).rev() {
        let st = &run.steps[t];
        for j in 0..h {
            let (i, f, g, o) = (
                st.gates[j],
                st.gates[h + j],
                st.gates[2 * h + j],
                st.gates[3 * h + j],
            );
            let dh = d_outputs[t][j] + dh_next[j];
            let tc = st.tanh_c[j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * st.c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let mut dinput = vec![0.0; s.input + h];
        affine_backward(params, grad, s.w, s.b, &st.input, &dz, Some(&mut dinput));
        dh_next.copy_from_slice(&dinput[s.input..]);
        dinput.truncate(s.input);
        dxs[t] = dinput;
    }
    dxs
}

enum EncoderCache {
    Bag,
    /// Per layer: forward run and run over the reversed sequence.
    Recurrent(Vec<(LstmRun, LstmRun)>),
}

pub(crate) struct Network<'a> {
    pub kind: EncoderKind,
    pub layout: &'a Layout,
    pub params: &'a [f64],
}

impl Network<'_> {
    fn embedding_row(&self, token: usize) -> &[f64] {
        let e = self.layout.embedding;
        let start = e.offset + token * e.cols;
        &self.params[start..start + e.cols]
    }

    fn encode(&self, tokens: &[usize]) -> (Vec<f64>, EncoderCache) {
        match self.kind {
            EncoderKind::BagMean => {
                let d = self.layout.embedding.cols;
                let mut e = vec![0.0; d];
                for &t in tokens {
                    for (acc, v) in e.iter_mut().zip(self.embedding_row(t)) {
                        *acc += v;
                    }
                }
                let inv = 1.0 / tokens.len() as f64;
                e.iter_mut().for_each(|v| *v *= inv);
                (e, EncoderCache::Bag)
            }
            EncoderKind::BiRecurrent => {
                let n = tokens.len();
                let mut layer_input: Vec<Vec<f64>> =
                    tokens.iter().map(|&t| self.embedding_row(t).to_vec()).collect();
                let mut runs = Vec::with_capacity(self.layout.lstm.len());
                for [fwd, bwd] in &self.layout.lstm {
                    let xs: Vec<&[f64]> = layer_input.iter().map(Vec::as_slice).collect();
                    let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
                    let f = lstm_forward(self.params, fwd, &xs);
                    let b = lstm_forward(self.params, bwd, &rev);
                    layer_input = (0..n)
                        .map(|t| {
                            let mut v = f.outputs[t].clone();
                            v.extend_from_slice(&b.outputs[n - 1 - t]);
                            v
                        })
                        .collect();
                    runs.push((f, b));
                }
                let (f, b) = runs.last().expect("at least one recurrent layer");
                let mut e = f.outputs[n - 1].clone();
                e.extend_from_slice(&b.outputs[n - 1]);
                (e, EncoderCache::Recurrent(runs))
            }
        }
    }

    fn encode_backward(&self, tokens: &[usize], cache: &EncoderCache, de: &[f64], grad: &mut [f64]) {
        let emb = self.layout.embedding;
        let d = emb.cols;
        let d_embedded: Vec<Vec<f64>> = match cache {
            EncoderCache::Bag => {
                let inv = 1.0 / tokens.len() as f64;
                let row: Vec<f64> = de.iter().map(|g| g * inv).collect();
                vec![row; tokens.len()]
            }
            EncoderCache::Recurrent(runs) => {
                let n = tokens.len();
                let h = self.layout.lstm[0][0].hidden;
                // Gradients w.r.t. each position's [fwd ; bwd] output of the
                // current layer, starting from the top where only the final
                // states feed the head.
                let mut d_out = vec![vec![0.0; 2 * h]; n];
                d_out[n - 1][..h].copy_from_slice(&de[..h]);
                d_out[0][h..].copy_from_slice(&de[h..]);
                for (layer, (f, b)) in self.layout.lstm.iter().zip(runs).rev() {
                    let [fwd, bwd] = layer;
                    let df: Vec<Vec<f64>> = d_out.iter().map(|v| v[..h].to_vec()).collect();
                    let db: Vec<Vec<f64>> = d_out.iter().rev().map(|v| v[h..].to_vec()).collect();
                    let dx_f = lstm_backward(self.params, grad, fwd, f, &df);
                    let dx_b = lstm_backward(self.params, grad, bwd, b, &db);
                    d_out = (0..n)
                        .map(|t| {
                            dx_f[t]
                                .iter()
                                .zip(&dx_b[n - 1 - t])
                                .map(|(x, y)| x + y)
                                .collect()
                        })
                        .collect();
                }
                d_out
            }
        };
        for (&t, g) in tokens.iter().zip(&d_embedded) {
            let start = emb.offset + t * d;
            for (acc, v) in grad[start..start + d].iter_mut().zip(g) {
                *acc += v;
            }
        }
    }

    pub fn logits(&self, tokens: &[usize]) -> Vec<f64> {
        let (e, _) = self.encode(tokens);
        self.head(&e).2
    }

    // (pre-activation, activation, logits)
    fn head(&self, e: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let mut pre = vec![0.0; l.w1.rows];
        affine(self.params, l.w1, l.b1, e, &mut pre);
        let act: Vec<f64> = pre
            .iter()
            .map(|&x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
            .collect();
        let mut logits = vec![0.0; l.w2.rows];
        affine(self.params, l.w2, l.b2, &act, &mut logits);
        (pre, act, logits)
    }

    pub fn loss(&self, tokens: &[usize], label: usize) -> f64 {
        cross_entropy(&self.logits(tokens), label)
    }

    /// Cross-entropy of one example; its gradient is added to `grad`.
    pub fn loss_and_grad(&self, tokens: &[usize], label: usize, grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let (e, cache) = self.encode(tokens);
        let (pre, act, logits) = self.head(&e);
        let mut dlogits = super::softmax(&logits);
        let loss = cross_entropy(&logits, label);
        dlogits[label] -= 1.0;

        let mut dact = vec![0.0; act.len()];
        affine_backward(self.params, grad, l.w2, l.b2, &act, &dlogits, Some(&mut dact));
        for (g, &x) in dact.iter_mut().zip(&pre) {
            if x <= 0.0 {
                *g *= LEAKY_SLOPE;
            }
        }
        let mut de = vec![0.0; e.len()];
        affine_backward(self.params, grad, l.w1, l.b1, &e, &dact, Some(&mut de));
        self.encode_backward(tokens, &cache, &de, grad);
        loss
    }
}

/// `−log softmax(logits)[label]`, computed with log-sum-exp.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}
