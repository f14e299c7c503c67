use rand::Rng;

use super::config::ModelConfig;
use super::ops::{self, Activation};
use super::params::{Block, Params};
use crate::codecs::ColorImage;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::PAD;

/// One teacher-forced training example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub image: &'a ColorImage,
    /// Instruction as BPE ids (local to the text range).
    pub instruction: &'a [u32],
    /// Global target ids, BOS first.
    pub target: &'a [u32],
}

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub visual: bool,
    pub instruction: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Trainable { visual: true, instruction: false }
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

pub(crate) struct BlockTrace<T> {
    x: Vec<T>,
    ln1: Vec<T>,
    m1: Vec<T>,
    r1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    x1: Vec<T>,
    ln2: Vec<T>,
    m2: Vec<T>,
    r2: Vec<T>,
    fc: Vec<T>,
    act: Vec<T>,
    drop1: Option<Vec<T>>,
    drop2: Option<Vec<T>>,
}

/// Dropout state threaded through a training forward pass.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn dropout_mask<T: Scalar, R: Rng>(n: usize, drop: &mut Option<&mut Dropout<'_, R>>) -> Option<Vec<T>> {
    let d = drop.as_mut()?;
    if d.rate <= 0.0 {
        return None;
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - d.rate));
    Some((0..n).map(|_| if d.rng.gen::<f64>() < d.rate { T::zero() } else { keep }).collect())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn block_forward<T: Scalar, R: Rng>(
    b: &Block<T>,
    x: Vec<T>,
    s: usize,
    d: usize,
    heads: usize,
    act: Activation,
    prefix: usize,
    drop: &mut Option<&mut Dropout<'_, R>>,
) -> (Vec<T>, BlockTrace<T>) {
    let ff = b.fc_b.len();
    let z = T::zero();
    let mut ln1 = vec![z; s * d];
    let (mut m1, mut r1) = (vec![z; s], vec![z; s]);
    ops::layer_norm(&x, s, d, &b.ln1_g.data, &b.ln1_b.data, &mut ln1, &mut m1, &mut r1);
    let mut qkv = vec![z; s * 3 * d];
    ops::linear(&ln1, s, d, &b.qkv_w.data, &b.qkv_b.data, 3 * d, &mut qkv);
    let mut att = vec![z; s * d];
    let mut probs = vec![z; heads * s * s];
    ops::attention(&qkv, s, d, heads, prefix, &mut att, &mut probs);
    let mut a_out = vec![z; s * d];
    ops::linear(&att, s, d, &b.out_w.data, &b.out_b.data, d, &mut a_out);
    let drop1 = dropout_mask::<T, R>(s * d, drop);
    if let Some(m) = &drop1 {
        a_out.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
    let x1: Vec<T> = x.iter().zip(&a_out).map(|(&a, &b)| a + b).collect();
    let mut ln2 = vec![z; s * d];
    let (mut m2, mut r2) = (vec![z; s], vec![z; s]);
    ops::layer_norm(&x1, s, d, &b.ln2_g.data, &b.ln2_b.data, &mut ln2, &mut m2, &mut r2);
    let mut fc = vec![z; s * ff];
    ops::linear(&ln2, s, d, &b.fc_w.data, &b.fc_b.data, ff, &mut fc);
    let a: Vec<T> = fc.iter().map(|&v| act.apply(v)).collect();
    let mut out = vec![z; s * d];
    ops::linear(&a, s, ff, &b.proj_w.data, &b.proj_b.data, d, &mut out);
    let drop2 = dropout_mask::<T, R>(s * d, drop);
    if let Some(m) = &drop2 {
        out.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
    for (o, &v) in out.iter_mut().zip(&x1) {
        *o += v;
    }
    let tr = BlockTrace { x, ln1, m1, r1, qkv, probs, att, x1, ln2, m2, r2, fc, act: a, drop1, drop2 };
    (out, tr)
}

/// Backward through one block. Returns the gradient w.r.t. the block input.
pub(crate) fn block_backward<T: Scalar>(
    b: &Block<T>,
    g: &mut Block<T>,
    tr: &BlockTrace<T>,
    dy: &[T],
    s: usize,
    d: usize,
    heads: usize,
    act: Activation,
) -> Vec<T> {
    let ff = b.fc_b.len();
    let z = T::zero();
    let mut dm: Vec<T> = dy.to_vec();
    if let Some(m) = &tr.drop2 {
        dm.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
    let mut d_act = vec![z; s * ff];
    ops::linear_backward(&tr.act, &dm, s, ff, d, &b.proj_w.data, Some((&mut g.proj_w.data, &mut g.proj_b.data)), Some(&mut d_act));
    for (v, &pre) in d_act.iter_mut().zip(&tr.fc) {
        *v *= act.derivative(pre);
    }
    let mut d_ln2 = vec![z; s * d];
    ops::linear_backward(&tr.ln2, &d_act, s, d, ff, &b.fc_w.data, Some((&mut g.fc_w.data, &mut g.fc_b.data)), Some(&mut d_ln2));
    let mut dx1 = dy.to_vec();
    ops::layer_norm_backward(
        &d_ln2,
        &tr.x1,
        &tr.m2,
        &tr.r2,
        s,
        d,
        &b.ln2_g.data,
        Some((&mut g.ln2_g.data, &mut g.ln2_b.data)),
        Some(&mut dx1),
    );
    let mut da: Vec<T> = dx1.clone();
    if let Some(m) = &tr.drop1 {
        da.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
    let mut d_att = vec![z; s * d];
    ops::linear_backward(&tr.att, &da, s, d, d, &b.out_w.data, Some((&mut g.out_w.data, &mut g.out_b.data)), Some(&mut d_att));
    let mut d_qkv = vec![z; s * 3 * d];
    let mut scratch = vec![z; s * s];
    ops::attention_backward(&d_att, &tr.qkv, &tr.probs, s, d, heads, &mut d_qkv, &mut scratch);
    let mut d_ln1 = vec![z; s * d];
    ops::linear_backward(&tr.ln1, &d_qkv, s, d, 3 * d, &b.qkv_w.data, Some((&mut g.qkv_w.data, &mut g.qkv_b.data)), Some(&mut d_ln1));
    let mut dx = dx1;
    ops::layer_norm_backward(
        &d_ln1,
        &tr.x,
        &tr.m1,
        &tr.r1,
        s,
        d,
        &b.ln1_g.data,
        Some((&mut g.ln1_g.data, &mut g.ln1_b.data)),
        Some(&mut dx),
    );
    dx
}

impl<T> BlockTrace<T> {
    pub(crate) fn qkv_row(&self, r: usize, d: usize) -> &[T] {
        &self.qkv[r * 3 * d..(r + 1) * 3 * d]
    }
}

struct InstrTrace<T> {
    ids: Vec<u32>,
    blocks: Vec<BlockTrace<T>>,
    pre_ln: Vec<T>,
    mean: Vec<T>,
    rstd: Vec<T>,
    ln: Vec<T>,
}

/// Everything recorded by a training forward pass.
pub struct Trace<T> {
    patches: Vec<T>,
    instr: InstrTrace<T>,
    inputs: Vec<u32>,
    prefix: usize,
    blocks: Vec<BlockTrace<T>>,
    /// Decoder output rows for the output positions, before the final norm.
    h: Vec<T>,
    hm: Vec<T>,
    hr: Vec<T>,
    /// Normalized output rows (the head input).
    hn: Vec<T>,
    /// Output logits, To × vocab.
    pub logits: Vec<T>,
}

/// Flattened non-overlapping patches in row-major patch order, values in [0, 1].
pub fn image_patches<T: Scalar>(img: &ColorImage, size: usize, p: usize) -> Result<Vec<T>> {
    if img.width() != size || img.height() != size {
        return Err(Error::invalid(format!("expected a {size}x{size} image, got {}x{}", img.width(), img.height())));
    }
    let g = size / p;
    let inv = T::from_f64_lossy(1.0 / 255.0);
    let mut out = Vec::with_capacity(g * g * p * p * 3);
    for gy in 0..g {
        for gx in 0..g {
            for y in 0..p {
                for x in 0..p {
                    for c in img.get(gx * p + x, gy * p + y) {
                        out.push(T::from_u8(c).unwrap() * inv);
                    }
                }
            }
        }
    }
    Ok(out)
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Model { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    fn d(&self) -> usize {
        self.config.embed_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.params.tok_emb.shape[0]
    }

    /// Visual prefix embeddings, one row per patch.
    pub fn patch_embed(&self, image: &ColorImage) -> Result<Vec<T>> {
        let patches = image_patches(image, self.config.image_size, self.config.patch_size)?;
        Ok(self.patch_embed_from(&patches))
    }

    fn patch_embed_from(&self, patches: &[T]) -> Vec<T> {
        let (n, d) = (self.config.image_tokens(), self.d());
        let p = &self.params;
        let mut out = vec![T::zero(); n * d];
        ops::linear(patches, n, self.config.patch_dim(), &p.patch_w.data, &p.patch_b.data, d, &mut out);
        for (o, &v) in out.iter_mut().zip(&p.vis_pos.data) {
            *o += v;
        }
        out
    }

    fn check_instruction(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_instruction_len {
            return Err(Error::invalid(format!(
                "instruction has {} tokens, the prefix budget is {}",
                ids.len(),
                self.config.max_instruction_len
            )));
        }
        let n = self.params.instr_emb.shape[0];
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= n) {
            return Err(Error::invalid(format!("instruction token {bad} outside the text vocabulary of {n}")));
        }
        Ok(())
    }

    fn encode_instruction_traced<R: Rng>(&self, ids: &[u32], drop: &mut Option<&mut Dropout<'_, R>>) -> Result<(Vec<T>, InstrTrace<T>)> {
        self.check_instruction(ids)?;
        let (t, d) = (ids.len(), self.d());
        let p = &self.params;
        let mut x = vec![T::zero(); t * d];
        for (r, &id) in ids.iter().enumerate() {
            let e = &p.instr_emb.data[id as usize * d..(id as usize + 1) * d];
            let pos = &p.instr_pos.data[r * d..(r + 1) * d];
            for i in 0..d {
                x[r * d + i] = e[i] + pos[i];
            }
        }
        let mut blocks = Vec::with_capacity(p.instr_blocks.len());
        for b in &p.instr_blocks {
            let (y, tr) = block_forward(b, x, t, d, self.config.heads, self.config.activation, t, drop);
            blocks.push(tr);
            x = y;
        }
        let mut ln = vec![T::zero(); t * d];
        let (mut mean, mut rstd) = (vec![T::zero(); t], vec![T::zero(); t]);
        ops::layer_norm(&x, t, d, &p.instr_ln_g.data, &p.instr_ln_b.data, &mut ln, &mut mean, &mut rstd);
        let mut out = vec![T::zero(); t * d];
        ops::linear(&ln, t, d, &p.adapter_w.data, &p.adapter_b.data, d, &mut out);
        Ok((out, InstrTrace { ids: ids.to_vec(), blocks, pre_ln: x, mean, rstd, ln }))
    }

    /// Instruction embeddings projected into the decoder space (T_i × d).
    pub fn encode_instruction(&self, ids: &[u32]) -> Result<Vec<T>> {
        Ok(self.encode_instruction_traced::<rand::rngs::mock::StepRng>(ids, &mut None)?.0)
    }

    /// Concatenated image and instruction embeddings.
    pub fn prefix(&self, image: &ColorImage, instruction: &[u32]) -> Result<Vec<T>> {
        let mut v = self.patch_embed(image)?;
        v.extend(self.encode_instruction(instruction)?);
        Ok(v)
    }

    fn check_outputs(&self, inputs: &[u32]) -> Result<()> {
        if inputs.is_empty() || inputs.len() > self.config.max_output_len {
            return Err(Error::invalid(format!(
                "decoder input length {} outside 1..={}",
                inputs.len(),
                self.config.max_output_len
            )));
        }
        let v = self.vocab_size();
        if let Some(&bad) = inputs.iter().find(|&&i| i as usize >= v) {
            return Err(Error::invalid(format!("token {bad} outside the vocabulary of {v}")));
        }
        Ok(())
    }

    /// Runs the decoder over `prefix` (rows × d) followed by `inputs`, returning
    /// the trace with logits for every input position.
    fn decode_traced<R: Rng>(
        &self,
        prefix: Vec<T>,
        inputs: &[u32],
        drop: &mut Option<&mut Dropout<'_, R>>,
    ) -> Result<(Vec<BlockTrace<T>>, [Vec<T>; 5], usize)> {
        self.check_outputs(inputs)?;
        let d = self.d();
        let p = &self.params;
        let np = prefix.len() / d;
        let to = inputs.len();
        let s = np + to;
        let mut x = prefix;
        x.reserve(to * d);
        for (r, &id) in inputs.iter().enumerate() {
            let e = &p.tok_emb.data[id as usize * d..(id as usize + 1) * d];
            let pos = &p.out_pos.data[r * d..(r + 1) * d];
            x.extend(e.iter().zip(pos).map(|(&a, &b)| a + b));
        }
        let mut blocks = Vec::with_capacity(p.blocks.len());
        for b in &p.blocks {
            let (y, tr) = block_forward(b, x, s, d, self.config.heads, self.config.activation, np, drop);
            blocks.push(tr);
            x = y;
        }
        let h = x[np * d..].to_vec();
        let mut hn = vec![T::zero(); to * d];
        let (mut hm, mut hr) = (vec![T::zero(); to], vec![T::zero(); to]);
        ops::layer_norm(&h, to, d, &p.ln_f_g.data, &p.ln_f_b.data, &mut hn, &mut hm, &mut hr);
        let v = self.vocab_size();
        let mut logits = vec![T::zero(); to * v];
        T::gemm(to, d, v, T::one(), &hn, (d as isize, 1), &p.tok_emb.data, (1, d as isize), T::zero(), &mut logits, (v as isize, 1));
        Ok((blocks, [h, hm, hr, hn, logits], np))
    }

    /// Logits (inputs.len() × vocab) for decoder `inputs` given a prefix.
    pub fn forward(&self, prefix: &[T], inputs: &[u32]) -> Result<Vec<T>> {
        if prefix.len() % self.d() != 0 || prefix.len() / self.d() > self.config.max_prefix_len() {
            return Err(Error::invalid("prefix length overflow"));
        }
        let (_, [.., logits], _) = self.decode_traced::<rand::rngs::mock::StepRng>(prefix.to_vec(), inputs, &mut None)?;
        Ok(logits)
    }

    /// Full forward pass for one example, recording what backward needs.
    pub fn forward_traced<R: Rng>(&self, ex: &Example<'_>, mut drop: Option<&mut Dropout<'_, R>>) -> Result<Trace<T>> {
        if ex.target.len() < 2 {
            return Err(Error::invalid("target needs at least two tokens"));
        }
        let patches = image_patches(ex.image, self.config.image_size, self.config.patch_size)?;
        let mut prefix = self.patch_embed_from(&patches);
        let (instr_rows, instr) = self.encode_instruction_traced(ex.instruction, &mut drop)?;
        prefix.extend(instr_rows);
        let inputs = &ex.target[..ex.target.len() - 1];
        let (blocks, [h, hm, hr, hn, logits], prefix_len) = self.decode_traced(prefix, inputs, &mut drop)?;
        Ok(Trace { patches, instr, inputs: inputs.to_vec(), prefix: prefix_len, blocks, h, hm, hr, hn, logits })
    }

    /// Summed cross-entropy and the number of scored (non-PAD) positions.
    pub fn example_loss(&self, ex: &Example<'_>) -> Result<(f64, usize)> {
        let tr = self.forward_traced::<rand::rngs::mock::StepRng>(ex, None)?;
        Ok(cross_entropy_sum(&tr.logits, &ex.target[1..], self.vocab_size()))
    }

    /// Accumulates `scale ×` the gradient of the summed example loss into
    /// `grads`. Returns the summed loss and the scored position count.
    pub fn backward(&self, ex: &Example<'_>, tr: &Trace<T>, scale: T, grads: &mut Params<T>, trainable: Trainable) -> (f64, usize) {
        let (d, v) = (self.d(), self.vocab_size());
        let p = &self.params;
        let targets = &ex.target[1..];
        let to = targets.len();
        let mut dlogits = tr.logits.clone();
        let mut loss = 0.0;
        let mut count = 0;
        for (t, &y) in targets.iter().enumerate() {
            let row = &mut dlogits[t * v..(t + 1) * v];
            if y == PAD {
                row.iter_mut().for_each(|x| *x = T::zero());
                continue;
            }
            ops::softmax_row(row);
            loss -= row[y as usize].as_f64().max(f64::MIN_POSITIVE).ln();
            count += 1;
            row[y as usize] -= T::one();
            row.iter_mut().for_each(|x| *x *= scale);
        }
        // tied head: logits = hn · Eᵀ
        T::gemm(v, to, d, T::one(), &dlogits, (1, v as isize), &tr.hn, (d as isize, 1), T::one(), &mut grads.tok_emb.data, (d as isize, 1));
        let mut dhn = vec![T::zero(); to * d];
        T::gemm(to, v, d, T::one(), &dlogits, (v as isize, 1), &p.tok_emb.data, (d as isize, 1), T::zero(), &mut dhn, (d as isize, 1));
        let s = tr.prefix + to;
        let mut dx = vec![T::zero(); s * d];
        ops::layer_norm_backward(
            &dhn,
            &tr.h,
            &tr.hm,
            &tr.hr,
            to,
            d,
            &p.ln_f_g.data,
            Some((&mut grads.ln_f_g.data, &mut grads.ln_f_b.data)),
            Some(&mut dx[tr.prefix * d..]),
        );
        for (i, b) in p.blocks.iter().enumerate().rev() {
            dx = block_backward(b, &mut grads.blocks[i], &tr.blocks[i], &dx, s, d, self.config.heads, self.config.activation);
        }
        // decoder input embeddings
        for (r, &id) in tr.inputs.iter().enumerate() {
            let src = &dx[(tr.prefix + r) * d..(tr.prefix + r + 1) * d];
            let e = &mut grads.tok_emb.data[id as usize * d..(id as usize + 1) * d];
            e.iter_mut().zip(src).for_each(|(g, &v)| *g += v);
            let pe = &mut grads.out_pos.data[r * d..(r + 1) * d];
            pe.iter_mut().zip(src).for_each(|(g, &v)| *g += v);
        }
        let n_img = self.config.image_tokens();
        let ti = tr.instr.ids.len();
        if ti > 0 {
            let d_instr = &dx[n_img * d..(n_img + ti) * d];
            let mut d_ln = trainable.instruction.then(|| vec![T::zero(); ti * d]);
            ops::linear_backward(
                &tr.instr.ln,
                d_instr,
                ti,
                d,
                d,
                &p.adapter_w.data,
                Some((&mut grads.adapter_w.data, &mut grads.adapter_b.data)),
                d_ln.as_deref_mut(),
            );
            if let Some(d_ln) = d_ln {
                self.instruction_backward(&tr.instr, &d_ln, grads);
            }
        }
        if trainable.visual {
            let dv = &dx[..n_img * d];
            grads.vis_pos.data.iter_mut().zip(dv).for_each(|(g, &v)| *g += v);
            ops::linear_backward(
                &tr.patches,
                dv,
                n_img,
                self.config.patch_dim(),
                d,
                &p.patch_w.data,
                Some((&mut grads.patch_w.data, &mut grads.patch_b.data)),
                None,
            );
        }
        (loss, count)
    }

    fn instruction_backward(&self, tr: &InstrTrace<T>, d_ln: &[T], grads: &mut Params<T>) {
        let p = &self.params;
        let (t, d) = (tr.ids.len(), self.d());
        let mut dx = vec![T::zero(); t * d];
        ops::layer_norm_backward(
            d_ln,
            &tr.pre_ln,
            &tr.mean,
            &tr.rstd,
            t,
            d,
            &p.instr_ln_g.data,
            Some((&mut grads.instr_ln_g.data, &mut grads.instr_ln_b.data)),
            Some(&mut dx),
        );
        for (i, b) in p.instr_blocks.iter().enumerate().rev() {
            dx = block_backward(b, &mut grads.instr_blocks[i], &tr.blocks[i], &dx, t, d, self.config.heads, self.config.activation);
        }
        for (r, &id) in tr.ids.iter().enumerate() {
            let src = &dx[r * d..(r + 1) * d];
            let e = &mut grads.instr_emb.data[id as usize * d..(id as usize + 1) * d];
            e.iter_mut().zip(src).for_each(|(g, &v)| *g += v);
            let pe = &mut grads.instr_pos.data[r * d..(r + 1) * d];
            pe.iter_mut().zip(src).for_each(|(g, &v)| *g += v);
        }
    }
}

/// Summed negative log-softmax of `targets` over rows of `logits`, skipping
/// PAD targets. Returns (sum, scored count).
pub fn cross_entropy_sum<T: Scalar>(logits: &[T], targets: &[u32], vocab: usize) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (t, &y) in targets.iter().enumerate() {
        if y == PAD {
            continue;
        }
        let row = &logits[t * vocab..(t + 1) * vocab];
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        sum += lse - row[y as usize].as_f64();
        n += 1;
    }
    (sum, n)
}

/// Mean cross-entropy over non-PAD positions.
pub fn loss<T: Scalar>(logits: &[T], targets: &[u32], vocab: usize) -> Result<f64> {
    if logits.len() != targets.len() * vocab {
        return Err(Error::invalid(format!("{} logits for {} targets of vocab {vocab}", logits.len(), targets.len())));
    }
    match cross_entropy_sum(logits, targets, vocab) {
        (_, 0) => Err(Error::invalid("loss over an empty mask")),
        (s, n) => Ok(s / n as f64),
    }
}
