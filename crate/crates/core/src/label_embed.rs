//! Class-name embedding: tokenize each name to four word ids, look them up in a
//! learned word table and run a gated recurrent unit over the sequence. The
//! final hidden state is the class vector.

use std::collections::HashMap;

use ndarray::ArrayView1;
use rand::Rng;

use crate::backbone::TopKPrediction;
use crate::diffcore::{Parameterized, Tensor};
use crate::error::{Result, SacError};

pub const SEQ_LEN: usize = 4;
pub const PAD_ID: usize = 0;
pub const PAD_TOKEN: &str = "<pad>";

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ↔ id mapping; id 0 is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds the vocabulary from class names, tokens numbered in first-seen order.
    pub fn from_names<'a, I: IntoIterator<Item = &'a str>>(names: I) -> Self {
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.to_string()],
            ids: HashMap::from([(PAD_TOKEN.to_string(), PAD_ID)]),
        };
        for name in names {
            for tok in tokenize(name) {
                if !vocab.ids.contains_key(&tok) {
                    vocab.ids.insert(tok.clone(), vocab.tokens.len());
                    vocab.tokens.push(tok);
                }
            }
        }
        vocab
    }

    /// Rebuilds from the serialized token list (line number = id).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) {
            return Err(SacError::InvalidArgument(
                "vocabulary must start with the padding token".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(SacError::InvalidArgument(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    /// First four tokens of `name`, zero-padded at the tail.
    pub fn tokenize_pad(&self, name: &str) -> Result<TokenSequence> {
        let toks = tokenize(name);
        if toks.is_empty() {
            return Err(SacError::InvalidArgument(format!(
                "class name {name:?} has no tokens"
            )));
        }
        let mut ids = [PAD_ID; SEQ_LEN];
        for (slot, tok) in ids.iter_mut().zip(&toks) {
            *slot = self.id(tok).ok_or_else(|| SacError::UnknownToken {
                token: tok.clone(),
                name: name.to_string(),
            })?;
        }
        Ok(TokenSequence(ids))
    }
}

/// Exactly four token ids; padding only at the tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub [usize; SEQ_LEN]);

/// Looks up each id in the word table; returns a `4 × word_dim` matrix.
pub fn embed_tokens(seq: &TokenSequence, table: &Tensor) -> Result<Tensor> {
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(SEQ_LEN * dim);
    for &id in &seq.0 {
        if id >= vocab {
            return Err(SacError::InvalidArgument(format!(
                "token id {id} out of range for vocabulary of {vocab}"
            )));
        }
        if id == PAD_ID {
            out.extend(std::iter::repeat_n(0.0, dim));
        } else {
            out.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
        }
    }
    Tensor::matrix(SEQ_LEN, dim, out)
}

/// Scatters the cotangent of [`embed_tokens`] into the table gradient. The
/// padding row never receives gradient.
pub fn embed_tokens_backward(seq: &TokenSequence, d_emb: &Tensor, d_table: &mut Tensor) {
    let dim = d_table.shape()[1];
    for (t, &id) in seq.0.iter().enumerate() {
        if id == PAD_ID {
            continue;
        }
        let src = &d_emb.data()[t * dim..(t + 1) * dim];
        d_table.data_mut()[id * dim..(id + 1) * dim]
            .iter_mut()
            .zip(src)
            .for_each(|(d, s)| *d += s);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit with zero initial state:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

pub struct GruCache {
    steps: Vec<GruStep>,
}

impl Gru {
    /// Weights uniform in `±0.08`, zero biases.
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = 0.08;
        let bias = || Tensor::zeros(&[hidden]).with_grad(true);
        Self {
            w_z: Tensor::uniform(&[hidden, input], b, rng),
            u_z: Tensor::uniform(&[hidden, hidden], b, rng),
            b_z: bias(),
            w_r: Tensor::uniform(&[hidden, input], b, rng),
            u_r: Tensor::uniform(&[hidden, hidden], b, rng),
            b_r: bias(),
            w_h: Tensor::uniform(&[hidden, input], b, rng),
            u_h: Tensor::uniform(&[hidden, hidden], b, rng),
            b_h: bias(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn input(&self) -> usize {
        self.w_z.shape()[1]
    }

    fn gate(w: &Tensor, u: &Tensor, b: &Tensor, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = w.view2().dot(&ArrayView1::from(x));
        a += &u.view2().dot(&ArrayView1::from(h));
        a += &b.view1();
        a.to_vec()
    }

    /// Runs the cell over the rows of `seq_emb` and returns the last hidden state.
    pub fn forward(&self, seq_emb: &Tensor) -> Result<(Vec<f64>, GruCache)> {
        if seq_emb.shape().len() != 2 || seq_emb.shape()[1] != self.input() {
            return Err(SacError::shape(
                "gru_encode",
                format!("[T, {}]", self.input()),
                format!("{:?}", seq_emb.shape()),
            ));
        }
        let hidden = self.hidden();
        let mut h = vec![0.0; hidden];
        let mut steps = Vec::with_capacity(seq_emb.shape()[0]);
        for x in seq_emb.data().chunks(self.input()) {
            let z: Vec<f64> = Self::gate(&self.w_z, &self.u_z, &self.b_z, x, &h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let r: Vec<f64> = Self::gate(&self.w_r, &self.u_r, &self.b_r, x, &h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
            let cand: Vec<f64> = Self::gate(&self.w_h, &self.u_h, &self.b_h, x, &rh)
                .into_iter()
                .map(f64::tanh)
                .collect();
            let next: Vec<f64> = (0..hidden)
                .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
                .collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SacError::NonFinite("gru hidden state".into()));
            }
            steps.push(GruStep {
                x: x.to_vec(),
                h_prev: std::mem::replace(&mut h, next),
                z,
                r,
                cand,
            });
        }
        Ok((h, GruCache { steps }))
    }

    /// Backpropagates the cotangent of the final hidden state; accumulates
    /// parameter gradients and returns the input cotangent (`T × input`).
    pub fn backward(&self, cache: &GruCache, d_last: &[f64], grads: &mut Gru) -> Tensor {
        let hidden = self.hidden();
        let input = self.input();
        let mut dx_all = vec![0.0; cache.steps.len() * input];
        let mut dh = d_last.to_vec();
        for (t, s) in cache.steps.iter().enumerate().rev() {
            let mut dh_prev: Vec<f64> = (0..hidden).map(|i| dh[i] * (1.0 - s.z[i])).collect();
            let d_cand_pre: Vec<f64> = (0..hidden)
                .map(|i| dh[i] * s.z[i] * (1.0 - s.cand[i] * s.cand[i]))
                .collect();
            let dz_pre: Vec<f64> = (0..hidden)
                .map(|i| dh[i] * (s.cand[i] - s.h_prev[i]) * s.z[i] * (1.0 - s.z[i]))
                .collect();
            let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(a, b)| a * b).collect();
            let d_rh = self.u_h.view2().t().dot(&ArrayView1::from(&d_cand_pre[..]));
            let dr_pre: Vec<f64> = (0..hidden)
                .map(|i| d_rh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]))
                .collect();
            for i in 0..hidden {
                dh_prev[i] += d_rh[i] * s.r[i];
            }
            outer_acc(&mut grads.w_z, &dz_pre, &s.x);
            outer_acc(&mut grads.u_z, &dz_pre, &s.h_prev);
            add_into(grads.b_z.data_mut(), &dz_pre);
            outer_acc(&mut grads.w_r, &dr_pre, &s.x);
            outer_acc(&mut grads.u_r, &dr_pre, &s.h_prev);
            add_into(grads.b_r.data_mut(), &dr_pre);
            outer_acc(&mut grads.w_h, &d_cand_pre, &s.x);
            outer_acc(&mut grads.u_h, &d_cand_pre, &rh);
            add_into(grads.b_h.data_mut(), &d_cand_pre);

            let (dz, dr, dc) = (
                ArrayView1::from(&dz_pre[..]),
                ArrayView1::from(&dr_pre[..]),
                ArrayView1::from(&d_cand_pre[..]),
            );
            let mut dx = self.w_z.view2().t().dot(&dz);
            dx += &self.w_r.view2().t().dot(&dr);
            dx += &self.w_h.view2().t().dot(&dc);
            dx_all[t * input..(t + 1) * input].copy_from_slice(dx.as_slice().expect("contiguous"));
            add_into(
                &mut dh_prev,
                self.u_z
                    .view2()
                    .t()
                    .dot(&dz)
                    .as_slice()
                    .expect("contiguous"),
            );
            add_into(
                &mut dh_prev,
                self.u_r
                    .view2()
                    .t()
                    .dot(&dr)
                    .as_slice()
                    .expect("contiguous"),
            );
            dh = dh_prev;
        }
        Tensor::matrix(cache.steps.len(), input, dx_all).expect("gru dx")
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn outer_acc(target: &mut Tensor, col: &[f64], row: &[f64]) {
    let n = row.len();
    for (i, &c) in col.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let dst = &mut target.data_mut()[i * n..(i + 1) * n];
        dst.iter_mut().zip(row).for_each(|(d, r)| *d += c * r);
    }
}

/// `d_e × k` class embeddings, column `j` for the `j`-th top-k class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbeddingSet {
    pub embeddings: Tensor,
    pub word_dim: usize,
}

impl ClassEmbeddingSet {
    pub fn d_e(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.embeddings.view2().column(j).to_vec()
    }
}

/// Builds a `d × k` matrix whose columns are the given vectors.
pub fn stack_columns(columns: &[&[f64]]) -> Result<Tensor> {
    let k = columns.len();
    let d = columns.first().map_or(0, |c| c.len());
    let mut data = vec![0.0; d * k];
    for (j, col) in columns.iter().enumerate() {
        if col.len() != d {
            return Err(SacError::shape("stack_columns", d, col.len()));
        }
        for (i, v) in col.iter().enumerate() {
            data[i * k + j] = *v;
        }
    }
    Tensor::matrix(d, k, data)
}

/// Forward state of one encoded class name.
pub struct NameCache {
    pub seq: TokenSequence,
    gru: GruCache,
}

/// Word table + recurrent encoder.
#[derive(Clone, Debug)]
pub struct LabelEmbedder {
    pub vocab: Vocabulary,
    /// `|vocab| × word_dim`; row 0 stays zero.
    pub table: Tensor,
    pub gru: Gru,
}

impl LabelEmbedder {
    pub fn new<R: Rng>(vocab: Vocabulary, word_dim: usize, d_e: usize, rng: &mut R) -> Self {
        let mut table = Tensor::normal(&[vocab.len(), word_dim], 1.0, rng);
        table.data_mut()[..word_dim]
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let gru = Gru::new(word_dim, d_e, rng);
        Self { vocab, table, gru }
    }

    pub fn word_dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn d_e(&self) -> usize {
        self.gru.hidden()
    }

    pub fn encode(&self, name: &str) -> Result<(Vec<f64>, NameCache)> {
        let seq = self.vocab.tokenize_pad(name)?;
        let emb = embed_tokens(&seq, &self.table)?;
        let (h, gru) = self.gru.forward(&emb)?;
        Ok((h, NameCache { seq, gru }))
    }

    pub fn gru_encode(&self, seq_emb: &Tensor) -> Result<Vec<f64>> {
        Ok(self.gru.forward(seq_emb)?.0)
    }

    /// Accumulates gradients of one encoded name given the cotangent of its vector.
    pub fn backward(&self, cache: &NameCache, d_vec: &[f64], grads: &mut LabelEmbedder) {
        let d_emb = self.gru.backward(&cache.gru, d_vec, &mut grads.gru);
        embed_tokens_backward(&cache.seq, &d_emb, &mut grads.table);
    }

    /// Column `j` is the encoding of `names[topk.classes[j]]`.
    pub fn embed_topk(&self, topk: &TopKPrediction, names: &[String]) -> Result<ClassEmbeddingSet> {
        let mut cols = Vec::with_capacity(topk.k());
        for &c in &topk.classes {
            let name = names
                .get(c)
                .ok_or_else(|| SacError::InvalidArgument(format!("no name for class {c}")))?;
            cols.push(self.encode(name)?.0);
        }
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        Ok(ClassEmbeddingSet {
            embeddings: stack_columns(&refs)?,
            word_dim: self.word_dim(),
        })
    }
}

impl Parameterized for LabelEmbedder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let g = &self.gru;
        vec![
            ("embed.table".into(), &self.table),
            ("embed.gru.w_z".into(), &g.w_z),
            ("embed.gru.u_z".into(), &g.u_z),
            ("embed.gru.b_z".into(), &g.b_z),
            ("embed.gru.w_r".into(), &g.w_r),
            ("embed.gru.u_r".into(), &g.u_r),
            ("embed.gru.b_r".into(), &g.b_r),
            ("embed.gru.w_h".into(), &g.w_h),
            ("embed.gru.u_h".into(), &g.u_h),
            ("embed.gru.b_h".into(), &g.b_h),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let g = &mut self.gru;
        vec![
            ("embed.table".into(), &mut self.table),
            ("embed.gru.w_z".into(), &mut g.w_z),
            ("embed.gru.u_z".into(), &mut g.u_z),
            ("embed.gru.b_z".into(), &mut g.b_z),
            ("embed.gru.w_r".into(), &mut g.w_r),
            ("embed.gru.u_r".into(), &mut g.u_r),
            ("embed.gru.b_r".into(), &mut g.b_r),
            ("embed.gru.w_h".into(), &mut g.w_h),
            ("embed.gru.u_h".into(), &mut g.u_h),
            ("embed.gru.b_h".into(), &mut g.b_h),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::from_names([
            "Black footed Albatross",
            "A B C D E",
            "jay",
            "Boeing 737-700",
        ])
    }

    #[test]
    fn tokenization_rules() {
        assert_eq!(
            tokenize("Black_footed_Albatross"),
            vec!["black", "footed", "albatross"]
        );
        assert_eq!(tokenize("Boeing 737-700"), vec!["boeing", "737", "700"]);
        let v = vocab();
        let id = |t: &str| v.id(t).unwrap();
        assert_eq!(
            v.tokenize_pad("Black footed Albatross").unwrap().0,
            [id("black"), id("footed"), id("albatross"), 0]
        );
        assert_eq!(
            v.tokenize_pad("A B C D E").unwrap().0,
            [id("a"), id("b"), id("c"), id("d")]
        );
        assert_eq!(v.tokenize_pad("jay").unwrap().0, [id("jay"), 0, 0, 0]);
        assert!(matches!(
            v.tokenize_pad("blue jay"),
            Err(SacError::UnknownToken { .. })
        ));
        assert!(v.tokenize_pad(" - ").is_err());
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = vocab();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert_eq!(v.tokens()[0], PAD_TOKEN);
    }

    #[test]
    fn embed_tokens_padding_and_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut table = Tensor::normal(&[5, 300], 1.0, &mut rng);
        table.data_mut()[..300].fill(0.0);
        let e = embed_tokens(&TokenSequence([0; 4]), &table).unwrap();
        assert_eq!(e.shape(), &[4, 300]);
        assert!(e.data().iter().all(|&v| v == 0.0));
        let e = embed_tokens(&TokenSequence([3, 0, 0, 0]), &table).unwrap();
        assert_eq!(&e.data()[..300], &table.data()[900..1200]);
        assert!(e.data()[300..].iter().all(|&v| v == 0.0));
        assert!(embed_tokens(&TokenSequence([5, 0, 0, 0]), &table).is_err());
    }

    #[test]
    fn word_table_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = vocab();
        let emb = LabelEmbedder::new(v.clone(), 5, 6, &mut rng);
        let batch = ["Black footed Albatross", "jay", "A B C D E"];
        let probe: Vec<Vec<f64>> = (0..batch.len())
            .map(|_| Tensor::uniform(&[6], 1.0, &mut rng).into_data())
            .collect();
        let report = grad_check(
            |p| {
                let mut m = emb.clone();
                m.table.data_mut().copy_from_slice(p);
                let mut g = m.clone();
                g.zero_params();
                let mut value = 0.0;
                for (name, w) in batch.iter().zip(&probe) {
                    let (h, cache) = m.encode(name)?;
                    value += h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    m.backward(&cache, w, &mut g);
                }
                Ok((value, g.table.data().to_vec()))
            },
            emb.table.data(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn gru_zero_fixed_point_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gru = Gru::new(7, 9, &mut rng);
        let x = Tensor::uniform(&[4, 7], 3.0, &mut rng);
        let (h, _) = gru.forward(&x).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1.0));
        for t in [
            &mut gru.w_z,
            &mut gru.u_z,
            &mut gru.w_r,
            &mut gru.u_r,
            &mut gru.w_h,
            &mut gru.u_h,
        ] {
            t.fill(0.0);
        }
        let (h, _) = gru.forward(&Tensor::zeros(&[4, 7])).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(gru.forward(&Tensor::zeros(&[4, 6])).is_err());
    }

    #[test]
    fn gru_gradient_check_all_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut emb = LabelEmbedder::new(vocab(), 5, 6, &mut rng);
        // Larger weights and nonzero biases so every gate is exercised.
        for (_, t) in emb.params_mut().into_iter().skip(1) {
            let shape = t.shape().to_vec();
            *t = Tensor::uniform(&shape, 0.6, &mut rng);
        }
        let x = Tensor::uniform(&[4, 5], 1.0, &mut rng);
        let probe = Tensor::uniform(&[6], 1.0, &mut rng).into_data();
        let flat: Vec<f64> = emb
            .params()
            .iter()
            .skip(1)
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        let report = grad_check(
            |p| {
                let mut m = emb.clone();
                let mut off = 0;
                for (_, t) in m.params_mut().into_iter().skip(1) {
                    let n = t.len();
                    t.data_mut().copy_from_slice(&p[off..off + n]);
                    off += n;
                }
                let (h, cache) = m.gru.forward(&x)?;
                let mut g = m.clone();
                g.zero_params();
                m.gru.backward(&cache, &probe, &mut g.gru);
                let value = h.iter().zip(&probe).map(|(a, b)| a * b).sum();
                Ok((
                    value,
                    g.params()
                        .iter()
                        .skip(1)
                        .flat_map(|(_, t)| t.data().to_vec())
                        .collect(),
                ))
            },
            &flat,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn embed_topk_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let names: Vec<String> = [
            "red crowned finch",
            "blue tailed finch",
            "red crowned finch",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let emb = LabelEmbedder::new(
            Vocabulary::from_names(names.iter().map(String::as_str)),
            4,
            5,
            &mut rng,
        );
        let one = TopKPrediction {
            classes: vec![1],
            scores: vec![1.0],
            num_classes: 3,
        };
        let set = emb.embed_topk(&one, &names).unwrap();
        assert_eq!(set.k(), 1);
        assert_eq!(set.column(0), emb.encode(&names[1]).unwrap().0);

        let tk = TopKPrediction {
            classes: vec![0, 1, 2],
            scores: vec![0.5, 0.3, 0.2],
            num_classes: 3,
        };
        let set = emb.embed_topk(&tk, &names).unwrap();
        assert_eq!(set.column(0), set.column(2));
        let perm = TopKPrediction {
            classes: vec![2, 0, 1],
            ..tk.clone()
        };
        let pset = emb.embed_topk(&perm, &names).unwrap();
        for (j, &c) in [2usize, 0, 1].iter().enumerate() {
            assert_eq!(pset.column(j), set.column(c));
        }
        let missing = TopKPrediction {
            classes: vec![5],
            scores: vec![1.0],
            num_classes: 6,
        };
        assert!(emb.embed_topk(&missing, &names).is_err());
    }
}
