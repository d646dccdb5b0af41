//! Parameterised building blocks: linear maps, layer norm, multi-head
//! attention and a GRU cell.

use rand::Rng;

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], d_in, rng)?;
        let bias = if bias {
            Some(store.add_const(format!("{name}.bias"), &[d_out], 0.0)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// A linear map whose weight and bias start at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let weight = store.add_const(format!("{name}.weight"), &[d_in, d_out], 0.0)?;
        let bias = Some(store.add_const(format!("{name}.bias"), &[d_out], 0.0)?);
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_const(format!("{name}.gain"), &[d], 1.0)?,
            bias: store.add_const(format!("{name}.bias"), &[d], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Scaled dot-product attention from queries `q` onto `kv`, with output
/// projection, residual connection onto `q`, and layer norm.
///
/// There is no position-wise feed-forward sublayer.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d: usize,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm: LayerNorm,
}

/// Result of one attention call.
#[derive(Debug, Clone)]
pub struct Attended {
    pub out: Var,
    /// Shape `[heads, L_q, L_kv]`.
    pub weights: Tensor,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(NumError::Config(format!("d={d} is not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            d,
            wq: store.add_uniform(format!("{name}.wq"), &[d, d], d, rng)?,
            wk: store.add_uniform(format!("{name}.wk"), &[d, d], d, rng)?,
            wv: store.add_uniform(format!("{name}.wv"), &[d, d], d, rng)?,
            wo: store.add_uniform(format!("{name}.wo"), &[d, d], d, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d)?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.wq, self.wk, self.wv, self.wo, self.norm.gain, self.norm.bias]
    }

    /// `mask[i * L_kv + j] == true` blocks query i from key j. Rows that are
    /// fully blocked (or an empty key set) reduce to `layer_norm(q)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, kv: Var, q: Var, mask: Option<&[bool]>, dropout: f64) -> Result<Attended> {
        let (lq, dq) = g.shape(q);
        let (lkv, dkv) = g.shape(kv);
        if dq != self.d || dkv != self.d {
            return Err(NumError::Config(format!("attention width {} got query width {dq} and key width {dkv}", self.d)));
        }
        if let Some(m) = mask {
            if m.len() != lq * lkv {
                return Err(NumError::Shape(format!("mask of {} entries for {lq}x{lkv} attention", m.len())));
            }
        }
        let dh = self.d / self.heads;
        let mut weights = vec![0.0; self.heads * lq * lkv];
        let residual_only = lkv == 0 || lq == 0;
        let summed = if residual_only {
            None
        } else {
            let wq = g.param(store, self.wq);
            let wk = g.param(store, self.wk);
            let wv = g.param(store, self.wv);
            let wo = g.param(store, self.wo);
            let qp = g.matmul(q, wq)?;
            let kp = g.matmul(kv, wk)?;
            let vp = g.matmul(kv, wv)?;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut ctx = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = g.slice_cols(qp, h * dh, dh)?;
                let kh = g.slice_cols(kp, h * dh, dh)?;
                let vh = g.slice_cols(vp, h * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale)?;
                let attn = g.softmax_rows(scores, mask)?;
                weights[h * lq * lkv..(h + 1) * lq * lkv].copy_from_slice(g.value(attn).data());
                let attn = g.dropout(attn, dropout)?;
                ctx.push(g.matmul(attn, vh)?);
            }
            let cat = if ctx.len() == 1 { ctx[0] } else { g.concat_cols(&ctx)? };
            let o = g.matmul(cat, wo)?;
            Some(g.dropout(o, dropout)?)
        };
        let pre = match summed {
            Some(o) => g.add(q, o)?,
            None => q,
        };
        let out = self.norm.forward(g, store, pre)?;
        Ok(Attended {
            out,
            weights: Tensor::new(vec![self.heads, lq, lkv], weights)?,
        })
    }
}

/// Gated recurrent unit over batched rows.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub hidden: usize,
    wx: Linear,
    wh: Linear,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            hidden,
            wx: Linear::new(store, &format!("{name}.wx"), d_in, 3 * hidden, true, rng)?,
            wh: Linear::new(store, &format!("{name}.wh"), hidden, 3 * hidden, true, rng)?,
        })
    }

    /// One step: `x` is `[B, d_in]`, `h` is `[B, hidden]`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let gx = self.wx.forward(g, store, x)?;
        let gh = self.wh.forward(g, store, h)?;
        let xr = g.slice_cols(gx, 0, n)?;
        let xz = g.slice_cols(gx, n, n)?;
        let xn = g.slice_cols(gx, 2 * n, n)?;
        let hr = g.slice_cols(gh, 0, n)?;
        let hz = g.slice_cols(gh, n, n)?;
        let hn = g.slice_cols(gh, 2 * n, n)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let rhn = g.mul(r, hn)?;
        let cand = g.add(xn, rhn)?;
        let cand = g.tanh(cand)?;
        // h' = (1 - z) * cand + z * h
        let one_minus_z = g.affine(z, -1.0, 1.0)?;
        let a = g.mul(one_minus_z, cand)?;
        let b = g.mul(z, h)?;
        g.add(a, b)
    }
}

/// Sinusoidal positional encoding, `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("consistent shape")
}

/// Causal mask over `len` positions: position i may attend to j <= i.
pub fn causal_mask(len: usize) -> Vec<bool> {
    let mut m = vec![false; len * len];
    for i in 0..len {
        for j in i + 1..len {
            m[i * len + j] = true;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn heads_must_divide_width() {
        let mut s = ParamStore::new();
        assert!(matches!(MultiHeadAttention::new(&mut s, "a", 6, 4, &mut rng()), Err(NumError::Config(_))));
    }

    #[test]
    fn single_key_gets_all_weight() {
        let mut s = ParamStore::new();
        let att = MultiHeadAttention::new(&mut s, "a", 4, 2, &mut rng()).unwrap();
        for id in att.param_ids().iter().take(4) {
            let t = &mut s.get_mut(*id).tensor;
            let d = t.data_mut();
            d.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..4 {
                d[i * 4 + i] = 1.0;
            }
        }
        let mut g = Graph::with_precision(Precision::F64);
        let q = g.constant(Tensor::from_rows(&[vec![0.3, -0.2, 0.9, 0.1]])).unwrap();
        let r = att.forward(&mut g, &s, q, q, None, 0.0).unwrap();
        assert_eq!(r.weights.shape(), &[2, 1, 1]);
        assert!(r.weights.data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn fully_masked_row_is_normed_residual() {
        let mut s = ParamStore::new();
        let att = MultiHeadAttention::new(&mut s, "a", 4, 2, &mut rng()).unwrap();
        let mut g = Graph::with_precision(Precision::F64);
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.1, 0.2, 0.3]])).unwrap();
        let kv = g.constant(Tensor::from_rows(&[vec![1.0, 0.0, 1.0, 0.0]])).unwrap();
        let mask = [true, false];
        let r = att.forward(&mut g, &s, kv, q, Some(&mask), 0.0).unwrap();
        let gain = g.param(&s, att.norm.gain);
        let bias = g.param(&s, att.norm.bias);
        let ln = g.layer_norm(q, gain, bias).unwrap();
        assert_eq!(g.value(r.out).row(0), g.value(ln).row(0));
        assert_ne!(g.value(r.out).row(1), g.value(ln).row(1));
        assert!(r.weights.data()[0] == 0.0 && r.weights.data()[2] == 0.0);
    }

    #[test]
    fn empty_keys_pass_residual() {
        let mut s = ParamStore::new();
        let att = MultiHeadAttention::new(&mut s, "a", 4, 1, &mut rng()).unwrap();
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]])).unwrap();
        let kv = g.constant(Tensor::zeros(&[0, 4])).unwrap();
        let r = att.forward(&mut g, &s, kv, q, None, 0.0).unwrap();
        assert_eq!(g.shape(r.out), (1, 4));
    }

    #[test]
    fn pe_origin_values() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
        assert_ne!(pe.row(1), pe.row(2));
    }

    #[test]
    fn causal_mask_shape() {
        let m = causal_mask(3);
        assert_eq!(m, vec![false, true, true, false, false, true, false, false, false]);
    }
}
