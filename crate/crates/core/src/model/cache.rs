use super::network::{block_forward, Model};
use super::ops;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Key/value cache for incremental decoding after a fixed prefix.
#[derive(Clone, Debug)]
pub struct DecoderState<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    rows: usize,
    emitted: usize,
}

impl<T> DecoderState<T> {
    /// Number of decoder inputs consumed so far.
    pub fn position(&self) -> usize {
        self.emitted
    }
}

impl<T: Scalar> Model<T> {
    /// Runs the prefix through the decoder and caches its keys and values.
    pub fn start_decoding(&self, prefix: &[T]) -> Result<DecoderState<T>> {
        let d = self.config.embed_dim;
        if prefix.len() % d != 0 || prefix.len() / d > self.config.max_prefix_len() {
            return Err(Error::invalid("prefix length overflow"));
        }
        let np = prefix.len() / d;
        let mut x = prefix.to_vec();
        let mut keys = Vec::with_capacity(self.params.blocks.len());
        let mut values = Vec::with_capacity(self.params.blocks.len());
        for b in &self.params.blocks {
            let (y, tr) = block_forward::<T, rand::rngs::mock::StepRng>(
                b,
                x,
                np,
                d,
                self.config.heads,
                self.config.activation,
                np,
                &mut None,
            );
            let (mut k, mut v) = (Vec::with_capacity(np * d), Vec::with_capacity(np * d));
            for r in 0..np {
                let row = tr.qkv_row(r, d);
                k.extend_from_slice(&row[d..2 * d]);
                v.extend_from_slice(&row[2 * d..]);
            }
            keys.push(k);
            values.push(v);
            x = y;
        }
        Ok(DecoderState { keys, values, rows: np, emitted: 0 })
    }

    /// Feeds one decoder input token and returns the next-token logits.
    pub fn decode_step(&self, st: &mut DecoderState<T>, token: u32) -> Result<Vec<T>> {
        let cfg = &self.config;
        let (d, heads) = (cfg.embed_dim, cfg.heads);
        let hd = d / heads;
        if st.emitted >= cfg.max_output_len {
            return Err(Error::invalid(format!("decoder input exceeds {} positions", cfg.max_output_len)));
        }
        let p = &self.params;
        let vocab = self.vocab_size();
        if token as usize >= vocab {
            return Err(Error::invalid(format!("token {token} outside the vocabulary of {vocab}")));
        }
        let z = T::zero();
        let r = st.emitted;
        let mut x: Vec<T> = p.tok_emb.data[token as usize * d..(token as usize + 1) * d]
            .iter()
            .zip(&p.out_pos.data[r * d..(r + 1) * d])
            .map(|(&a, &b)| a + b)
            .collect();
        let n = st.rows + 1;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
        let (mut m, mut rs) = ([z], [z]);
        for (l, b) in p.blocks.iter().enumerate() {
            let mut h = vec![z; d];
            ops::layer_norm(&x, 1, d, &b.ln1_g.data, &b.ln1_b.data, &mut h, &mut m, &mut rs);
            let mut qkv = vec![z; 3 * d];
            ops::linear(&h, 1, d, &b.qkv_w.data, &b.qkv_b.data, 3 * d, &mut qkv);
            st.keys[l].extend_from_slice(&qkv[d..2 * d]);
            st.values[l].extend_from_slice(&qkv[2 * d..]);
            let (ks, vs) = (&st.keys[l], &st.values[l]);
            let mut att = vec![z; d];
            let mut w = vec![z; n];
            for hh in 0..heads {
                let q = &qkv[hh * hd..(hh + 1) * hd];
                for (j, wj) in w.iter_mut().enumerate() {
                    let k = &ks[j * d + hh * hd..j * d + (hh + 1) * hd];
                    *wj = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                ops::softmax_row(&mut w);
                let out = &mut att[hh * hd..(hh + 1) * hd];
                for (j, &wj) in w.iter().enumerate() {
                    let v = &vs[j * d + hh * hd..j * d + (hh + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += wj * vv;
                    }
                }
            }
            let mut a_out = vec![z; d];
            ops::linear(&att, 1, d, &b.out_w.data, &b.out_b.data, d, &mut a_out);
            for (xv, &a) in x.iter_mut().zip(&a_out) {
                *xv += a;
            }
            ops::layer_norm(&x, 1, d, &b.ln2_g.data, &b.ln2_b.data, &mut h, &mut m, &mut rs);
            let ff = b.fc_b.len();
            let mut fc = vec![z; ff];
            ops::linear(&h, 1, d, &b.fc_w.data, &b.fc_b.data, ff, &mut fc);
            fc.iter_mut().for_each(|v| *v = cfg.activation.apply(*v));
            let mut out = vec![z; d];
            ops::linear(&fc, 1, ff, &b.proj_w.data, &b.proj_b.data, d, &mut out);
            for (xv, &o) in x.iter_mut().zip(&out) {
                *xv += o;
            }
        }
        st.rows += 1;
        st.emitted += 1;
        let mut hn = vec![z; d];
        ops::layer_norm(&x, 1, d, &p.ln_f_g.data, &p.ln_f_b.data, &mut hn, &mut m, &mut rs);
        let mut logits = vec![z; vocab];
        T::gemm(1, d, vocab, T::one(), &hn, (d as isize, 1), &p.tok_emb.data, (1, d as isize), T::zero(), &mut logits, (vocab as isize, 1));
        Ok(logits)
    }
}
