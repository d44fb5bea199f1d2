//! Span scoring network: token embeddings with sinusoidal positions, one
//! single-head scaled-dot self-attention layer with a residual connection,
//! fencepost differences, and a relu MLP head over the labels.
//!
//! Fencepost 0 is a dedicated learned boundary vector; fencepost i for
//! i >= 1 is the mixed representation of token i. A span (i, j) is scored
//! from v = h_j - h_i, so span scores telescope over shared fenceposts.
//! The filler label is not a head output: its score is identically zero,
//! which keeps tree scores comparable across trees with different node
//! counts. All arithmetic is f64 and summation orders are fixed, so equal
//! inputs give bitwise-equal tables.
//!
//! Gradients are computed by hand in `backward` and are exact for the
//! forward pass as written; the unit tests sweep every parameter against
//! central finite differences.
//!
//! Out-of-vocabulary tokens fall back to one of `UNK_BUCKETS` reserved
//! embedding rows chosen by FNV-1a hash, so distinct unknown words do not
//! all collapse onto a single vector. Ids 0..UNK_BUCKETS are the buckets;
//! known words start at UNK_BUCKETS in insertion order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{FAKE_ASPECT_TOKEN, FAKE_OPINION_TOKEN};
use crate::table::SpanScoreTable;

/// Reserved embedding rows for out-of-vocabulary tokens.
pub const UNK_BUCKETS: usize = 8;

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Token-to-id mapping. Ids 0..UNK_BUCKETS are hash buckets for unknown
/// tokens; known words continue from UNK_BUCKETS in insertion order, which
/// makes the mapping reproducible from the stored word list alone.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Collects the vocabulary from a token stream in reading order. The
    /// fake prefix tokens are always included so prefixed sentences never
    /// hit the UNK path.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Vocab {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(FAKE_ASPECT_TOKEN);
        v.insert(FAKE_OPINION_TOKEN);
        for t in tokens {
            v.insert(t);
        }
        v
    }

    pub fn from_words(words: Vec<String>) -> Result<Vocab> {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in &words {
            if !v.insert(w) {
                return Err(Error::Checkpoint(format!(
                    "duplicate vocabulary word {w:?}"
                )));
            }
        }
        Ok(v)
    }

    fn insert(&mut self, word: &str) -> bool {
        if self.index.contains_key(word) {
            return false;
        }
        self.index
            .insert(word.to_string(), UNK_BUCKETS + self.words.len());
        self.words.push(word.to_string());
        true
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) => id,
            None => (fnv1a(token) % UNK_BUCKETS as u64) as usize,
        }
    }

    /// Total embedding rows: buckets plus known words.
    pub fn len(&self) -> usize {
        UNK_BUCKETS + self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Network dimensions. `dim` is the embedding and fencepost width, and
/// must be even for the sin/cos position pairs; `hidden` is the MLP width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub dim: usize,
    pub hidden: usize,
}

impl Default for ScorerConfig {
    fn default() -> ScorerConfig {
        ScorerConfig {
            dim: 64,
            hidden: 128,
        }
    }
}

impl ScorerConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("scorer dimensions must be positive".into()));
        }
        if self.dim % 2 != 0 {
            return Err(Error::Config("scorer dim must be even".into()));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
struct Mat {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            a: vec![0.0; rows * cols],
        }
    }

    fn uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
        let a = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 0.2 - 0.1)
            .collect();
        Mat { rows, cols, a }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.a[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.a[r * self.cols..(r + 1) * self.cols]
    }

    /// y = M x, length `rows`.
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// y = Mᵀ x, length `cols`.
    fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(&mut y, x[r], self.row(r));
        }
        y
    }

    /// M += u vᵀ.
    fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            axpy(self.row_mut(r), u[r], v);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += c x.
fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn sinusoid(pos: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for k in 0..dim / 2 {
        let rate = 10000f64.powf(2.0 * k as f64 / dim as f64);
        v[2 * k] = (pos as f64 / rate).sin();
        v[2 * k + 1] = (pos as f64 / rate).cos();
    }
    v
}

/// All trainable parameters plus the vocabulary they index.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScorerConfig,
    vocab: Vocab,
    /// Head outputs, excluding the zero-scored filler label.
    n_labels: usize,
    seed: u64,
    emb: Mat,
    boundary: Vec<f64>,
    wq: Mat,
    wk: Mat,
    wv: Mat,
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
}

/// Parameter gradients, flat per field, same layout as the checkpoint.
#[derive(Debug, Clone)]
pub struct Grads {
    pub emb: Vec<f64>,
    pub boundary: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Grads {
    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(a, 1.0, b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v *= c;
            }
        }
    }

    fn slices(&self) -> [&[f64]; 9] {
        [
            &self.emb,
            &self.boundary,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.emb,
            &mut self.boundary,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .into_iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Intermediate encoder activations.
struct Encoded {
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

/// Cached activations of one forward pass, enough to run `backward`
/// without recomputing attention.
pub struct ForwardPass {
    pub table: SpanScoreTable,
    ids: Vec<usize>,
    enc: Encoded,
}

impl Scorer {
    /// Fresh parameters: matrices uniform in (-0.1, 0.1) from a dedicated
    /// seeded stream, biases zero. `n_labels` counts the scored labels,
    /// excluding the filler.
    pub fn new(config: ScorerConfig, vocab: Vocab, n_labels: usize, seed: u64) -> Result<Scorer> {
        config.validate()?;
        if n_labels == 0 {
            return Err(Error::Config("scorer needs at least one label".into()));
        }
        let (d, hid) = (config.dim, config.hidden);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let emb = Mat::uniform(vocab.len(), d, &mut rng);
        let boundary = Mat::uniform(1, d, &mut rng).a;
        let wq = Mat::uniform(d, d, &mut rng);
        let wk = Mat::uniform(d, d, &mut rng);
        let wv = Mat::uniform(d, d, &mut rng);
        let w1 = Mat::uniform(hid, d, &mut rng);
        let w2 = Mat::uniform(n_labels, hid, &mut rng);
        Ok(Scorer {
            config,
            vocab,
            n_labels,
            seed,
            emb,
            boundary,
            wq,
            wk,
            wv,
            w1,
            b1: vec![0.0; hid],
            w2,
            b2: vec![0.0; n_labels],
        })
    }

    pub fn config(&self) -> ScorerConfig {
        self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_params(&self) -> usize {
        self.emb.a.len()
            + self.boundary.len()
            + self.wq.a.len()
            + self.wk.a.len()
            + self.wv.a.len()
            + self.w1.a.len()
            + self.b1.len()
            + self.w2.a.len()
            + self.b2.len()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            emb: vec![0.0; self.emb.a.len()],
            boundary: vec![0.0; self.boundary.len()],
            wq: vec![0.0; self.wq.a.len()],
            wk: vec![0.0; self.wk.a.len()],
            wv: vec![0.0; self.wv.a.len()],
            w1: vec![0.0; self.w1.a.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.a.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Applies `f(flat_index, param, grad)` over every parameter, in the
    /// fixed field order. The flat index is stable, so optimizers can key
    /// per-parameter state on it.
    pub fn update(&mut self, grads: &Grads, mut f: impl FnMut(usize, &mut f64, f64)) {
        let params = [
            &mut self.emb.a,
            &mut self.boundary,
            &mut self.wq.a,
            &mut self.wk.a,
            &mut self.wv.a,
            &mut self.w1.a,
            &mut self.b1,
            &mut self.w2.a,
            &mut self.b2,
        ];
        let mut idx = 0;
        for (field, gs) in params.into_iter().zip(grads.slices()) {
            for (p, &g) in field.iter_mut().zip(gs) {
                f(idx, p, g);
                idx += 1;
            }
        }
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Fencepost vectors h_0..h_n for a sentence of n tokens.
    pub fn encode(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        self.run_encoder(&self.token_ids(tokens)).h
    }

    fn run_encoder(&self, ids: &[usize]) -> Encoded {
        let n = ids.len();
        let d = self.config.dim;
        let mut x = Vec::with_capacity(n);
        for (t, &id) in ids.iter().enumerate() {
            let mut xi = self.emb.row(id).to_vec();
            axpy(&mut xi, 1.0, &sinusoid(t, d));
            x.push(xi);
        }
        let q: Vec<_> = x.iter().map(|xi| self.wq.matvec(xi)).collect();
        let k: Vec<_> = x.iter().map(|xi| self.wk.matvec(xi)).collect();
        let v: Vec<_> = x.iter().map(|xi| self.wv.matvec(xi)).collect();
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn: Vec<Vec<f64>> = Vec::with_capacity(n);
        for qt in &q {
            let logits: Vec<f64> = k.iter().map(|ku| dot(qt, ku) * scale).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            attn.push(exps.into_iter().map(|e| e / sum).collect());
        }
        let mut h = Vec::with_capacity(n + 1);
        h.push(self.boundary.clone());
        for t in 0..n {
            let mut yt = x[t].clone();
            for u in 0..n {
                axpy(&mut yt, attn[t][u], &v[u]);
            }
            h.push(yt);
        }
        Encoded {
            x,
            q,
            k,
            v,
            attn,
            h,
        }
    }

    /// Per-label scores for one span vector.
    pub fn score_span(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.config.dim, "span vector width mismatch");
        let mut z = self.w1.matvec(v);
        for (zk, bk) in z.iter_mut().zip(&self.b1) {
            *zk += bk;
            if *zk < 0.0 {
                *zk = 0.0;
            }
        }
        let mut s = self.w2.matvec(&z);
        for (sl, bl) in s.iter_mut().zip(&self.b2) {
            *sl += bl;
        }
        s
    }

    /// Scores every span, caching activations for `backward`. The table
    /// has one extra trailing column for the filler label, left at zero.
    pub fn forward(&self, tokens: &[String]) -> ForwardPass {
        let ids = self.token_ids(tokens);
        let enc = self.run_encoder(&ids);
        let n = ids.len();
        let mut table = SpanScoreTable::zeros(n, self.n_labels + 1);
        for i in 0..n {
            for j in i + 1..=n {
                let s = self.score_span(&span_repr(&enc.h, i, j));
                for (l, &sl) in s.iter().enumerate() {
                    table.set(i, j, l as u16, sl);
                }
            }
        }
        ForwardPass { table, ids, enc }
    }

    pub fn score_all(&self, tokens: &[String]) -> SpanScoreTable {
        self.forward(tokens).table
    }

    /// Backpropagates a per-cell loss gradient through the cached pass.
    /// The filler column carries no parameters and is ignored.
    pub fn backward(&self, fp: &ForwardPass, grad: &SpanScoreTable) -> Grads {
        let n = fp.ids.len();
        let d = self.config.dim;
        assert_eq!(grad.n(), n, "gradient table length mismatch");
        assert_eq!(
            grad.n_labels(),
            self.n_labels + 1,
            "gradient table width mismatch"
        );
        let mut g = self.zero_grads();
        let mut dw1 = Mat::zeros(self.w1.rows, self.w1.cols);
        let mut dw2 = Mat::zeros(self.w2.rows, self.w2.cols);
        let mut dh = vec![vec![0.0; d]; n + 1];

        for i in 0..n {
            for j in i + 1..=n {
                let gs: Vec<f64> = (0..self.n_labels)
                    .map(|l| grad.get(i, j, l as u16))
                    .collect();
                if gs.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let vij = span_repr(&fp.enc.h, i, j);
                let mut z = self.w1.matvec(&vij);
                for (zk, bk) in z.iter_mut().zip(&self.b1) {
                    *zk += bk;
                }
                let r: Vec<f64> = z.iter().map(|&zk| zk.max(0.0)).collect();
                dw2.add_outer(&gs, &r);
                axpy(&mut g.b2, 1.0, &gs);
                let mut gr = self.w2.matvec_t(&gs);
                for (grk, &zk) in gr.iter_mut().zip(&z) {
                    if zk <= 0.0 {
                        *grk = 0.0;
                    }
                }
                dw1.add_outer(&gr, &vij);
                axpy(&mut g.b1, 1.0, &gr);
                let gv = self.w1.matvec_t(&gr);
                axpy(&mut dh[j], 1.0, &gv);
                axpy(&mut dh[i], -1.0, &gv);
            }
        }

        g.boundary.copy_from_slice(&dh[0]);
        if n == 0 {
            g.w1 = dw1.a;
            g.w2 = dw2.a;
            return g;
        }

        // Residual: dh[t+1] reaches both the token input and the mix.
        let dmix: Vec<&[f64]> = (0..n).map(|t| dh[t + 1].as_slice()).collect();
        let mut dx: Vec<Vec<f64>> = (0..n).map(|t| dh[t + 1].clone()).collect();

        let mut dv = vec![vec![0.0; d]; n];
        let mut da = vec![vec![0.0; n]; n];
        for t in 0..n {
            for u in 0..n {
                axpy(&mut dv[u], fp.enc.attn[t][u], dmix[t]);
                da[t][u] = dot(dmix[t], &fp.enc.v[u]);
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![vec![0.0; d]; n];
        let mut dk = vec![vec![0.0; d]; n];
        for t in 0..n {
            let dot_aw: f64 = (0..n).map(|w| fp.enc.attn[t][w] * da[t][w]).sum();
            for u in 0..n {
                let dlogit = fp.enc.attn[t][u] * (da[t][u] - dot_aw);
                axpy(&mut dq[t], dlogit * scale, &fp.enc.k[u]);
                axpy(&mut dk[u], dlogit * scale, &fp.enc.q[t]);
            }
        }

        let mut dwq = Mat::zeros(d, d);
        let mut dwk = Mat::zeros(d, d);
        let mut dwv = Mat::zeros(d, d);
        for t in 0..n {
            dwq.add_outer(&dq[t], &fp.enc.x[t]);
            dwk.add_outer(&dk[t], &fp.enc.x[t]);
            dwv.add_outer(&dv[t], &fp.enc.x[t]);
            axpy(&mut dx[t], 1.0, &self.wq.matvec_t(&dq[t]));
            axpy(&mut dx[t], 1.0, &self.wk.matvec_t(&dk[t]));
            axpy(&mut dx[t], 1.0, &self.wv.matvec_t(&dv[t]));
        }

        let mut demb = Mat::zeros(self.emb.rows, self.emb.cols);
        for (t, &id) in fp.ids.iter().enumerate() {
            axpy(demb.row_mut(id), 1.0, &dx[t]);
        }

        g.emb = demb.a;
        g.wq = dwq.a;
        g.wk = dwk.a;
        g.wv = dwv.a;
        g.w1 = dw1.a;
        g.w2 = dw2.a;
        g
    }
}

/// v_{i,j} = h_j - h_i over fencepost vectors.
pub fn span_repr(h: &[Vec<f64>], i: usize, j: usize) -> Vec<f64> {
    assert!(i < j && j < h.len(), "bad fencepost pair ({i},{j})");
    h[j].iter().zip(&h[i]).map(|(a, b)| a - b).collect()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"OTPC";
const CHECKPOINT_VERSION: u32 = 1;

impl Scorer {
    /// Writes the versioned binary checkpoint described in
    /// docs/formats.md: header, vocabulary words, then all parameter
    /// blocks as little-endian f64 in field order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.config.dim as u32).to_le_bytes())?;
        w.write_all(&(self.config.hidden as u32).to_le_bytes())?;
        w.write_all(&(self.n_labels as u32).to_le_bytes())?;
        w.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.vocab.words().len() as u64).to_le_bytes())?;
        for word in self.vocab.words() {
            let bytes = word.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        for field in [
            &self.emb.a,
            &self.boundary,
            &self.wq.a,
            &self.wk.a,
            &self.wv.a,
            &self.w1.a,
            &self.b1,
            &self.w2.a,
            &self.b2,
        ] {
            for v in field.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scorer> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a parameter checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let dim = read_u32(&mut r)? as usize;
        let hidden = read_u32(&mut r)? as usize;
        let n_labels = read_u32(&mut r)? as usize;
        let vocab_size = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let n_words = read_u64(&mut r)? as usize;
        if vocab_size != UNK_BUCKETS + n_words {
            return Err(Error::Checkpoint(format!(
                "vocab size {vocab_size} does not cover {n_words} words plus {UNK_BUCKETS} buckets"
            )));
        }
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            words.push(
                String::from_utf8(buf)
                    .map_err(|_| Error::Checkpoint("vocabulary word is not valid UTF-8".into()))?,
            );
        }
        let vocab = Vocab::from_words(words)?;
        let config = ScorerConfig { dim, hidden };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if n_labels == 0 {
            return Err(Error::Checkpoint("checkpoint has no labels".into()));
        }

        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                out.push(f64::from_le_bytes(buf));
            }
            Ok(out)
        };
        let emb = Mat {
            rows: vocab_size,
            cols: dim,
            a: read_block(vocab_size * dim)?,
        };
        let boundary = read_block(dim)?;
        let wq = Mat {
            rows: dim,
            cols: dim,
            a: read_block(dim * dim)?,
        };
        let wk = Mat {
            rows: dim,
            cols: dim,
            a: read_block(dim * dim)?,
        };
        let wv = Mat {
            rows: dim,
            cols: dim,
            a: read_block(dim * dim)?,
        };
        let w1 = Mat {
            rows: hidden,
            cols: dim,
            a: read_block(hidden * dim)?,
        };
        let b1 = read_block(hidden)?;
        let w2 = Mat {
            rows: n_labels,
            cols: hidden,
            a: read_block(n_labels * hidden)?,
        };
        let b2 = read_block(n_labels)?;
        Ok(Scorer {
            config,
            vocab,
            n_labels,
            seed,
            emb,
            boundary,
            wq,
            wk,
            wv,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod test {
    use super::*;

    fn toks(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn small_scorer(seed: u64) -> Scorer {
        let vocab = Vocab::build(
            toks("the pasta was great but pricey !")
                .iter()
                .map(|s| &**s),
        );
        Scorer::new(ScorerConfig { dim: 6, hidden: 5 }, vocab, 8, seed).unwrap()
    }

    #[test]
    fn empty_sentence_encodes_to_boundary_only() {
        let s = small_scorer(1);
        let h = s.encode(&[]);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0], s.boundary);
        assert_eq!(s.score_all(&[]).n(), 0);
    }

    #[test]
    fn same_input_scores_bitwise_identically() {
        let s = small_scorer(2);
        let tokens = toks("the pasta was great");
        let (a, b) = (s.score_all(&tokens), s.score_all(&tokens));
        for i in 0..4 {
            for j in i + 1..=4 {
                for l in 0..9 {
                    assert_eq!(a.get(i, j, l).to_bits(), b.get(i, j, l).to_bits());
                }
            }
        }
    }

    #[test]
    fn span_vectors_telescope() {
        let s = small_scorer(3);
        let h = s.encode(&toks("the pasta was great but pricey"));
        for i in 0..5 {
            for j in i + 1..6 {
                for k in j + 1..=6 {
                    let direct = span_repr(&h, i, k);
                    let split: Vec<f64> = span_repr(&h, i, j)
                        .iter()
                        .zip(span_repr(&h, j, k))
                        .map(|(a, b)| a + b)
                        .collect();
                    for (a, b) in direct.iter().zip(&split) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_first_layer_collapses_scores_to_bias() {
        let mut s = small_scorer(4);
        s.w1.a.iter_mut().for_each(|v| *v = 0.0);
        s.b1.iter_mut().for_each(|v| *v = 0.0);
        s.b2 = (0..8).map(|l| l as f64 / 2.0).collect();
        let table = s.score_all(&toks("great but pricey"));
        for i in 0..3 {
            for j in i + 1..=3 {
                for l in 0..8u16 {
                    assert_eq!(table.get(i, j, l), l as f64 / 2.0);
                }
            }
        }
    }

    #[test]
    fn positive_region_is_homogeneous() {
        let mut s = small_scorer(5);
        s.b1.iter_mut().for_each(|v| *v = 0.0);
        s.w1.a.iter_mut().for_each(|v| *v = v.abs());
        let v: Vec<f64> = (1..=6).map(|k| k as f64 / 10.0).collect();
        let double: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let s1 = s.score_span(&v);
        let s2 = s.score_span(&double);
        for ((a, b), c) in s1.iter().zip(&s2).zip(&s.b2) {
            assert!((2.0 * (a - c) - (b - c)).abs() < 1e-9);
        }
    }

    #[test]
    fn table_matches_per_span_recomputation() {
        let s = small_scorer(6);
        let tokens = toks("the pasta was great but pricey !");
        let table = s.score_all(&tokens);
        let h = s.encode(&tokens);
        for (i, j) in [(0, 1), (0, 7), (2, 5), (6, 7), (1, 4)] {
            let direct = s.score_span(&span_repr(&h, i, j));
            for (l, &v) in direct.iter().enumerate() {
                assert_eq!(table.get(i, j, l as u16).to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn filler_column_stays_zero() {
        let s = small_scorer(7);
        let table = s.score_all(&toks("great but pricey"));
        assert_eq!(table.n_labels(), 9);
        for i in 0..3 {
            for j in i + 1..=3 {
                assert_eq!(table.get(i, j, 8), 0.0);
            }
        }
    }

    #[test]
    fn distant_token_swap_changes_both_encodings() {
        let s = small_scorer(8);
        let a = s.encode(&toks("the pasta was great but pricey !"));
        let b = s.encode(&toks("pricey pasta was great but the !"));
        // Mixing is global: both swapped positions see a different token
        // somewhere in their attention context.
        assert_ne!(a[1], b[1]);
        assert_ne!(a[6], b[6]);
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn unknown_tokens_hash_into_reserved_buckets() {
        let v = Vocab::build(["alpha", "beta"]);
        assert_eq!(v.len(), UNK_BUCKETS + 4);
        assert!(v.id("alpha") >= UNK_BUCKETS);
        assert!(v.id(FAKE_ASPECT_TOKEN) >= UNK_BUCKETS);
        for unseen in ["gamma", "delta", "epsilon"] {
            let id = v.id(unseen);
            assert!(id < UNK_BUCKETS);
            assert_eq!(id, v.id(unseen));
        }
        assert_ne!(v.id("gamma"), v.id("delta"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let tokens = toks("the pasta was great");
        let mut s = small_scorer(9);
        // A fixed random-ish loss over several cells, including none on
        // the filler column.
        let cells: Vec<(usize, usize, u16, f64)> = vec![
            (0, 4, 7, 1.0),
            (0, 1, 6, -1.0),
            (1, 4, 7, 1.0),
            (1, 2, 2, -1.0),
            (2, 3, 0, 0.5),
            (0, 2, 4, -0.75),
        ];
        let loss = |s: &Scorer| -> f64 {
            let t = s.score_all(&tokens);
            cells.iter().map(|&(i, j, l, c)| c * t.get(i, j, l)).sum()
        };
        let fp = s.forward(&tokens);
        let mut gt = SpanScoreTable::zeros(4, 9);
        for &(i, j, l, c) in &cells {
            gt.add(i, j, l, c);
        }
        let grads = s.backward(&fp, &gt);

        let flat: Vec<f64> = grads.slices().concat();
        let n_params = s.n_params();
        assert_eq!(flat.len(), n_params);
        let eps = 1e-5;
        let nudge = |s: &mut Scorer, idx: usize, delta: f64| {
            s.update(&grads, |i, p, _| {
                if i == idx {
                    *p += delta;
                }
            });
        };
        for idx in 0..n_params {
            nudge(&mut s, idx, eps);
            let plus = loss(&s);
            nudge(&mut s, idx, -2.0 * eps);
            let minus = loss(&s);
            nudge(&mut s, idx, eps);
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (flat[idx] - fd).abs() / flat[idx].abs().max(fd.abs()).max(1.0);
            assert!(
                rel <= 1e-4,
                "param {idx}: analytic {} vs fd {fd}, rel {rel}",
                flat[idx]
            );
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scorer.otpc");
        let s = small_scorer(10);
        s.save(&path).unwrap();
        let loaded = Scorer::load(&path).unwrap();
        assert_eq!(loaded.config, s.config);
        assert_eq!(loaded.n_labels, s.n_labels);
        assert_eq!(loaded.seed, s.seed);
        assert_eq!(loaded.vocab.words(), s.vocab.words());
        let tokens = toks("the pasta was zzz");
        let (a, b) = (s.score_all(&tokens), loaded.score_all(&tokens));
        for i in 0..4 {
            for j in i + 1..=4 {
                for l in 0..9 {
                    assert_eq!(a.get(i, j, l).to_bits(), b.get(i, j, l).to_bits());
                }
            }
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.otpc");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(Scorer::load(&path).is_err());

        let good = dir.path().join("good.otpc");
        small_scorer(11).save(&good).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(Scorer::load(&path).is_err());
    }
}
