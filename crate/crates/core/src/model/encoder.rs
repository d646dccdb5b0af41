//! Token embedding with positional encoding and layer norm.

use rand::Rng;
use uniconv_numcore::{positional_encoding, Graph, LayerNorm, ParamId, ParamStore, Var};

use crate::error::{Error, Result};

/// Source and response embeddings. Every source-side sequence (context,
/// utterance, states, domain and slot tokens) reads `src_embed`; responses
/// read `res_embed`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub d: usize,
    pub src_embed: ParamId,
    pub res_embed: ParamId,
    src_norm: LayerNorm,
    flat_norm: LayerNorm,
    res_norm: LayerNorm,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, src_vocab: usize, res_vocab: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            d,
            src_embed: store.add_uniform("embed.source", &[src_vocab, d], d, rng)?,
            res_embed: store.add_uniform("embed.response", &[res_vocab, d], d, rng)?,
            src_norm: LayerNorm::new(store, "embed.source_norm", d)?,
            flat_norm: LayerNorm::new(store, "embed.flat_norm", d)?,
            res_norm: LayerNorm::new(store, "embed.response_norm", d)?,
        })
    }

    fn positional(&self, g: &mut Graph, store: &ParamStore, table: ParamId, norm: &LayerNorm, ids: &[usize], dropout: f64) -> Result<Var> {
        let e = g.param(store, table);
        let x = g.gather_rows(e, ids)?;
        let pe = g.constant(positional_encoding(ids.len(), self.d))?;
        let x = g.add(x, pe)?;
        let x = g.dropout(x, dropout)?;
        Ok(norm.forward(g, store, x)?)
    }

    /// `LayerNorm(E[ids] + PE)`, `[len, d]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], dropout: f64) -> Result<Var> {
        self.positional(g, store, self.src_embed, &self.src_norm, ids, dropout)
    }

    /// `LayerNorm(E[ids])` without positions, for domain and slot tokens.
    pub fn encode_flat(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let e = g.param(store, self.src_embed);
        let x = g.gather_rows(e, ids)?;
        Ok(self.flat_norm.forward(g, store, x)?)
    }

    /// Response-side encoding with the response embedding.
    pub fn encode_response(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], dropout: f64) -> Result<Var> {
        self.positional(g, store, self.res_embed, &self.res_norm, ids, dropout)
    }
}

/// Decoder input and prediction targets of `[B, a, ..., E]`.
pub fn shift_target(tokens: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if tokens.len() < 2 {
        return Err(Error::Data(format!("target of {} tokens cannot be shifted", tokens.len())));
    }
    Ok((tokens[..tokens.len() - 1].to_vec(), tokens[1..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shift_target_by_one() {
        assert_eq!(shift_target(&[2, 7, 8, 3]).unwrap(), (vec![2, 7, 8], vec![7, 8, 3]));
        assert_eq!(shift_target(&[2, 3]).unwrap(), (vec![2], vec![3]));
        assert!(shift_target(&[2]).is_err());
    }

    #[test]
    fn shapes_and_sharing() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(&mut store, 8, 20, 10, &mut rng).unwrap();
        assert_ne!(enc.src_embed, enc.res_embed);
        let mut g = Graph::new();
        let z = enc.encode(&mut g, &store, &[5, 6, 7], 0.0).unwrap();
        assert_eq!(g.shape(z), (3, 8));
        let z0 = enc.encode(&mut g, &store, &[], 0.0).unwrap();
        assert_eq!(g.shape(z0), (0, 8));
        let zf = enc.encode_flat(&mut g, &store, &[1, 2]).unwrap();
        assert_eq!(g.shape(zf), (2, 8));
    }
}
