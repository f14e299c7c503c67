use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect() }
    }
}

/// One pre-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub fc_w: Tensor<T>,
    pub fc_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
}

const BLOCK_FIELDS: [&str; 12] =
    ["ln1_g", "ln1_b", "qkv_w", "qkv_b", "out_w", "out_b", "ln2_g", "ln2_b", "fc_w", "fc_b", "proj_w", "proj_b"];

impl<T: Scalar> Block<T> {
    fn init<R: Rng>(d: usize, ff: usize, std: f64, rng: &mut R) -> Self {
        Block {
            ln1_g: Tensor::filled(&[d], T::one()),
            ln1_b: Tensor::zeros(&[d]),
            qkv_w: Tensor::normal(&[d, 3 * d], std, rng),
            qkv_b: Tensor::zeros(&[3 * d]),
            out_w: Tensor::normal(&[d, d], std, rng),
            out_b: Tensor::zeros(&[d]),
            ln2_g: Tensor::filled(&[d], T::one()),
            ln2_b: Tensor::zeros(&[d]),
            fc_w: Tensor::normal(&[d, ff], std, rng),
            fc_b: Tensor::zeros(&[ff]),
            proj_w: Tensor::normal(&[ff, d], std, rng),
            proj_b: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 12] {
        [
            &self.ln1_g, &self.ln1_b, &self.qkv_w, &self.qkv_b, &self.out_w, &self.out_b, &self.ln2_g, &self.ln2_b,
            &self.fc_w, &self.fc_b, &self.proj_w, &self.proj_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 12] {
        [
            &mut self.ln1_g, &mut self.ln1_b, &mut self.qkv_w, &mut self.qkv_b, &mut self.out_w, &mut self.out_b,
            &mut self.ln2_g, &mut self.ln2_b, &mut self.fc_w, &mut self.fc_b, &mut self.proj_w, &mut self.proj_b,
        ]
    }
}

/// Parameter groups that can be frozen as a unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Visual,
    Instruction,
    Adapter,
    Decoder,
}

impl Group {
    pub fn of(name: &str) -> Group {
        match name.split('.').next() {
            Some("visual") => Group::Visual,
            Some("instr") => Group::Instruction,
            Some("adapter") => Group::Adapter,
            _ => Group::Decoder,
        }
    }
}

/// All trainable tensors. The output head is tied to `tok_emb`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub patch_w: Tensor<T>,
    pub patch_b: Tensor<T>,
    pub vis_pos: Tensor<T>,
    pub instr_emb: Tensor<T>,
    pub instr_pos: Tensor<T>,
    pub instr_blocks: Vec<Block<T>>,
    pub instr_ln_g: Tensor<T>,
    pub instr_ln_b: Tensor<T>,
    pub adapter_w: Tensor<T>,
    pub adapter_b: Tensor<T>,
    pub tok_emb: Tensor<T>,
    pub out_pos: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub ln_f_g: Tensor<T>,
    pub ln_f_b: Tensor<T>,
}

impl<T: Scalar> Params<T> {
    pub const INIT_STD: f64 = 0.02;

    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        let ff = cfg.ffn_dim();
        let std = Self::INIT_STD;
        Params {
            patch_w: Tensor::normal(&[cfg.patch_dim(), d], std, rng),
            patch_b: Tensor::zeros(&[d]),
            vis_pos: Tensor::normal(&[cfg.image_tokens(), d], std, rng),
            instr_emb: Tensor::normal(&[cfg.vocab.n_text.max(1), d], std, rng),
            instr_pos: Tensor::normal(&[cfg.max_instruction_len, d], std, rng),
            instr_blocks: (0..cfg.instruction_layers).map(|_| Block::init(d, ff, std, rng)).collect(),
            instr_ln_g: Tensor::filled(&[d], T::one()),
            instr_ln_b: Tensor::zeros(&[d]),
            adapter_w: Tensor::normal(&[d, d], std, rng),
            adapter_b: Tensor::zeros(&[d]),
            tok_emb: Tensor::normal(&[cfg.vocab_total(), d], std, rng),
            out_pos: Tensor::normal(&[cfg.max_output_len, d], std, rng),
            blocks: (0..cfg.layers).map(|_| Block::init(d, ff, std, rng)).collect(),
            ln_f_g: Tensor::filled(&[d], T::one()),
            ln_f_b: Tensor::zeros(&[d]),
        }
    }

    /// Zero tensors with the same shapes, used as gradient buffers.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.data.iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    /// Named tensors in a fixed canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("visual.patch_w".into(), &self.patch_w),
            ("visual.patch_b".into(), &self.patch_b),
            ("visual.pos".into(), &self.vis_pos),
            ("instr.emb".into(), &self.instr_emb),
            ("instr.pos".into(), &self.instr_pos),
        ];
        for (i, b) in self.instr_blocks.iter().enumerate() {
            for (f, t) in BLOCK_FIELDS.iter().zip(b.tensors()) {
                out.push((format!("instr.blocks.{i}.{f}"), t));
            }
        }
        out.push(("instr.ln_g".into(), &self.instr_ln_g));
        out.push(("instr.ln_b".into(), &self.instr_ln_b));
        out.push(("adapter.w".into(), &self.adapter_w));
        out.push(("adapter.b".into(), &self.adapter_b));
        out.push(("decoder.tok_emb".into(), &self.tok_emb));
        out.push(("decoder.pos".into(), &self.out_pos));
        for (i, b) in self.blocks.iter().enumerate() {
            for (f, t) in BLOCK_FIELDS.iter().zip(b.tensors()) {
                out.push((format!("decoder.blocks.{i}.{f}"), t));
            }
        }
        out.push(("decoder.ln_g".into(), &self.ln_f_g));
        out.push(("decoder.ln_b".into(), &self.ln_f_b));
        out
    }

    /// Mutable counterpart of [`Params::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("visual.patch_w".into(), &mut self.patch_w),
            ("visual.patch_b".into(), &mut self.patch_b),
            ("visual.pos".into(), &mut self.vis_pos),
            ("instr.emb".into(), &mut self.instr_emb),
            ("instr.pos".into(), &mut self.instr_pos),
        ];
        for (i, b) in self.instr_blocks.iter_mut().enumerate() {
            for (f, t) in BLOCK_FIELDS.iter().zip(b.tensors_mut()) {
                out.push((format!("instr.blocks.{i}.{f}"), t));
            }
        }
        out.push(("instr.ln_g".into(), &mut self.instr_ln_g));
        out.push(("instr.ln_b".into(), &mut self.instr_ln_b));
        out.push(("adapter.w".into(), &mut self.adapter_w));
        out.push(("adapter.b".into(), &mut self.adapter_b));
        out.push(("decoder.tok_emb".into(), &mut self.tok_emb));
        out.push(("decoder.pos".into(), &mut self.out_pos));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (f, t) in BLOCK_FIELDS.iter().zip(b.tensors_mut()) {
                out.push((format!("decoder.blocks.{i}.{f}"), t));
            }
        }
        out.push(("decoder.ln_g".into(), &mut self.ln_f_g));
        out.push(("decoder.ln_b".into(), &mut self.ln_f_b));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for (n, t) in self.named_mut() {
            f(&n, t);
        }
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let cb = |b: &Block<T>| Block {
            ln1_g: b.ln1_g.cast(),
            ln1_b: b.ln1_b.cast(),
            qkv_w: b.qkv_w.cast(),
            qkv_b: b.qkv_b.cast(),
            out_w: b.out_w.cast(),
            out_b: b.out_b.cast(),
            ln2_g: b.ln2_g.cast(),
            ln2_b: b.ln2_b.cast(),
            fc_w: b.fc_w.cast(),
            fc_b: b.fc_b.cast(),
            proj_w: b.proj_w.cast(),
            proj_b: b.proj_b.cast(),
        };
        Params {
            patch_w: self.patch_w.cast(),
            patch_b: self.patch_b.cast(),
            vis_pos: self.vis_pos.cast(),
            instr_emb: self.instr_emb.cast(),
            instr_pos: self.instr_pos.cast(),
            instr_blocks: self.instr_blocks.iter().map(cb).collect(),
            instr_ln_g: self.instr_ln_g.cast(),
            instr_ln_b: self.instr_ln_b.cast(),
            adapter_w: self.adapter_w.cast(),
            adapter_b: self.adapter_b.cast(),
            tok_emb: self.tok_emb.cast(),
            out_pos: self.out_pos.cast(),
            blocks: self.blocks.iter().map(cb).collect(),
            ln_f_g: self.ln_f_g.cast(),
            ln_f_b: self.ln_f_b.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_ordered_consistently() {
        let cfg = ModelConfig { embed_dim: 16, layers: 2, heads: 2, ..Default::default() };
        let mut p = Params::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        let names_mut: Vec<String> = p.named_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(Group::of("instr.blocks.0.fc_w"), Group::Instruction);
        assert_eq!(Group::of("decoder.tok_emb"), Group::Decoder);
    }

    #[test]
    fn init_statistics() {
        let cfg = ModelConfig::default();
        let p = Params::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let w = &p.tok_emb.data;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(mean.abs() < 1e-3 && (std - 0.02).abs() < 1e-3, "{mean} {std}");
        assert!(p.blocks[0].ln1_g.data.iter().all(|&v| v == 1.0));
        assert!(p.blocks[0].ln1_b.data.iter().all(|&v| v == 0.0));
    }
}
