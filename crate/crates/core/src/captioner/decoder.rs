use std::path::Path;

use ndarray::{Array3, ArrayD, Axis, IxDyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RegionFeatures;
use crate::checkpoint::Checkpoint;
use crate::corpus::{TokenizedReport, Vocabulary, PAD, STOP};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::training::{batches, EarlyStopping, Progress};

pub const DECODER_KIND: &str = "decoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Hidden width of the attention perceptron.
    pub attention_dim: usize,
    pub max_len: usize,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            embed_dim: 512,
            hidden_dim: 512,
            attention_dim: 512,
            max_len: 60,
            optimizer: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn tiny() -> Self {
        DecoderConfig {
            embed_dim: 32,
            hidden_dim: 64,
            attention_dim: 32,
            optimizer: AdamConfig {
                learning_rate: 5e-3,
                ..AdamConfig::default()
            },
            max_epochs: 500,
            ..DecoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attention_dim == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub cell: Vec<f64>,
    pub last_word: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStep {
    pub e: Vec<f64>,
    pub alpha: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Decoding {
    Greedy,
    Sample { seed: u64 },
}

/// Attention LSTM decoder. Parameters:
///
/// | name | shape |
/// |---|---|
/// | `embed` | `V × E` |
/// | `att.w_f`, `att.w_h`, `att.b`, `att.v` | `D × A`, `H × A`, `A`, `A × 1` |
/// | `init_h.w`, `init_h.b`, `init_c.w`, `init_c.b` | `D × H`, `H` |
/// | `lstm.w`, `lstm.b` | `(E + D + H) × 4H`, `4H` (gates i, f, g, o) |
/// | `out.w`, `out.b` | `H × V`, `V` |
#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    feature_dim: usize,
    vocab_size: usize,
    params: ParamStore,
}

/// Variables for one batch of region features inside a graph.
struct Context {
    /// `B × R × D`
    features: Var,
    /// `B × R × A`, the hidden-independent half of the attention input.
    projected: Var,
    batch: usize,
    regions: usize,
}

impl Decoder {
    pub fn new(config: DecoderConfig, feature_dim: usize, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 || vocab_size <= STOP {
            return Err(Error::Config("decoder needs features and a vocabulary".into()));
        }
        let (e, h, a, d, v) = (
            config.embed_dim,
            config.hidden_dim,
            config.attention_dim,
            feature_dim,
            vocab_size,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        p.init_uniform("embed", &[v, e], e, &mut rng);
        p.init_uniform("att.w_f", &[d, a], d, &mut rng);
        p.init_uniform("att.w_h", &[h, a], h, &mut rng);
        p.init_zeros("att.b", &[a]);
        p.init_uniform("att.v", &[a, 1], a, &mut rng);
        p.init_uniform("init_h.w", &[d, h], d, &mut rng);
        p.init_zeros("init_h.b", &[h]);
        p.init_uniform("init_c.w", &[d, h], d, &mut rng);
        p.init_zeros("init_c.b", &[h]);
        p.init_uniform("lstm.w", &[e + d + h, 4 * h], h, &mut rng);
        p.init_zeros("lstm.b", &[4 * h]);
        p.init_uniform("out.w", &[h, v], h, &mut rng);
        p.init_zeros("out.b", &[v]);
        Ok(Decoder {
            config,
            feature_dim,
            vocab_size,
            params: p,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_features(&self, f: &RegionFeatures) -> Result<()> {
        if f.dim() != self.feature_dim || f.regions() == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{}×R region features", self.feature_dim),
                actual: format!("{}×{}", f.dim(), f.regions()),
            });
        }
        Ok(())
    }

    fn check_token(&self, w: usize) -> Result<()> {
        if w >= self.vocab_size {
            return Err(Error::TokenIndex {
                index: w,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    fn context(&self, g: &mut Graph, features: Tensor) -> Context {
        let (b, r, d) = {
            let s = features.shape();
            (s[0], s[1], s[2])
        };
        let a = self.config.attention_dim;
        let f = g.input(features);
        let flat = g.reshape(f, &[b * r, d]);
        let w_f = g.param(&self.params, "att.w_f");
        let proj = g.matmul(flat, w_f);
        let bias = g.param(&self.params, "att.b");
        let proj = g.add(proj, bias);
        let projected = g.reshape(proj, &[b, r, a]);
        Context {
            features: f,
            projected,
            batch: b,
            regions: r,
        }
    }

    /// Linear maps of the mean region feature.
    fn init_state(&self, g: &mut Graph, ctx: &Context) -> (Var, Var) {
        let mean = g.mean_axes(ctx.features, &[1]);
        let wh = g.param(&self.params, "init_h.w");
        let bh = g.param(&self.params, "init_h.b");
        let h = g.matmul(mean, wh);
        let h = g.add(h, bh);
        let wc = g.param(&self.params, "init_c.w");
        let bc = g.param(&self.params, "init_c.b");
        let c = g.matmul(mean, wc);
        let c = g.add(c, bc);
        (h, c)
    }

    /// Returns `(e, α, V)` for hidden state `h` (`B × H`).
    fn attend(&self, g: &mut Graph, ctx: &Context, h: Var) -> (Var, Var, Var) {
        let a = self.config.attention_dim;
        let w_h = g.param(&self.params, "att.w_h");
        let hw = g.matmul(h, w_h);
        let hw = g.reshape(hw, &[ctx.batch, 1, a]);
        let s = g.add(ctx.projected, hw);
        let t = g.tanh(s);
        let t = g.reshape(t, &[ctx.batch * ctx.regions, a]);
        let v = g.param(&self.params, "att.v");
        let e = g.matmul(t, v);
        let e = g.reshape(e, &[ctx.batch, ctx.regions]);
        let alpha = g.softmax(e);
        let attended = g.weighted_sum(alpha, ctx.features);
        (e, alpha, attended)
    }

    /// One decoding step from words `w` with state `(h, c)`; returns the new
    /// state, the logits and the attention weights.
    fn step(&self, g: &mut Graph, ctx: &Context, words: &[usize], h: Var, c: Var) -> (Var, Var, Var, Var) {
        let hd = self.config.hidden_dim;
        let table = g.param(&self.params, "embed");
        let emb = g.gather_rows(table, words);
        let (_, alpha, attended) = self.attend(g, ctx, h);
        let x = g.concat(&[emb, attended, h], 1);
        let w = g.param(&self.params, "lstm.w");
        let b = g.param(&self.params, "lstm.b");
        let z = g.matmul(x, w);
        let z = g.add(z, b);
        let zi = g.slice(z, 1, 0, hd);
        let zf = g.slice(z, 1, hd, 2 * hd);
        let zg = g.slice(z, 1, 2 * hd, 3 * hd);
        let zo = g.slice(z, 1, 3 * hd, 4 * hd);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gg = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c);
        let write = g.mul(i, gg);
        let c_new = g.add(keep, write);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        let wo = g.param(&self.params, "out.w");
        let bo = g.param(&self.params, "out.b");
        let logits = g.matmul(h_new, wo);
        let logits = g.add(logits, bo);
        (h_new, c_new, logits, alpha)
    }

    fn single(f: &RegionFeatures) -> Tensor {
        let rd = f.regions_by_dim();
        rd.insert_axis(Axis(0)).into_dyn()
    }

    /// Start-of-sequence state: `h_0`, `c_0` from the mean feature and the
    /// START (= PAD) word.
    pub fn initial_state(&self, f: &RegionFeatures) -> Result<DecoderState> {
        self.check_features(f)?;
        let mut g = Graph::inference();
        let ctx = self.context(&mut g, Self::single(f));
        let (h, c) = self.init_state(&mut g, &ctx);
        Ok(DecoderState {
            h: g.value(h).iter().copied().collect(),
            cell: g.value(c).iter().copied().collect(),
            last_word: PAD,
        })
    }

    fn state_vars(&self, g: &mut Graph, state: &DecoderState) -> Result<(Var, Var)> {
        let hd = self.config.hidden_dim;
        if state.h.len() != hd || state.cell.len() != hd {
            return Err(Error::ShapeMismatch {
                expected: format!("hidden size {hd}"),
                actual: format!("{}/{}", state.h.len(), state.cell.len()),
            });
        }
        let h = g.input(ArrayD::from_shape_vec(IxDyn(&[1, hd]), state.h.clone()).unwrap());
        let c = g.input(ArrayD::from_shape_vec(IxDyn(&[1, hd]), state.cell.clone()).unwrap());
        Ok((h, c))
    }

    pub fn attention(&self, f: &RegionFeatures, h_prev: &[f64]) -> Result<AttentionStep> {
        self.check_features(f)?;
        let mut g = Graph::inference();
        let ctx = self.context(&mut g, Self::single(f));
        let state = DecoderState {
            h: h_prev.to_vec(),
            cell: vec![0.0; h_prev.len()],
            last_word: PAD,
        };
        let (h, _) = self.state_vars(&mut g, &state)?;
        let (e, alpha, v) = self.attend(&mut g, &ctx, h);
        let flat = |v: Var| g.value(v).iter().copied().collect::<Vec<f64>>();
        Ok(AttentionStep {
            e: flat(e),
            alpha: flat(alpha),
            v: flat(v),
        })
    }

    /// One LSTM step; returns the new state (with `last_word` unchanged) and
    /// the softmax distribution over the vocabulary.
    pub fn decode_step(&self, state: &DecoderState, f: &RegionFeatures) -> Result<(DecoderState, Vec<f64>)> {
        self.check_features(f)?;
        self.check_token(state.last_word)?;
        let mut g = Graph::inference();
        let ctx = self.context(&mut g, Self::single(f));
        let (h, c) = self.state_vars(&mut g, state)?;
        let (h, c, logits, _) = self.step(&mut g, &ctx, &[state.last_word], h, c);
        let probs = g.softmax(logits);
        Ok((
            DecoderState {
                h: g.value(h).iter().copied().collect(),
                cell: g.value(c).iter().copied().collect(),
                last_word: state.last_word,
            },
            g.value(probs).iter().copied().collect(),
        ))
    }

    /// Emits words until STOP or `max_len`; STOP is not included. PAD is
    /// never emitted.
    pub fn generate(&self, f: &RegionFeatures, mode: Decoding, max_len: usize) -> Result<Vec<usize>> {
        if max_len < 1 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        self.check_features(f)?;
        let mut rng = match mode {
            Decoding::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Decoding::Greedy => None,
        };
        let mut g = Graph::inference();
        let ctx = self.context(&mut g, Self::single(f));
        let (mut h, mut c) = self.init_state(&mut g, &ctx);
        let mut word = PAD;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (h2, c2, logits, alpha) = self.step(&mut g, &ctx, &[word], h, c);
            let total: f64 = g.value(alpha).sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Internal(format!("attention weights sum to {total}")));
            }
            let mut z: Vec<f64> = g.value(logits).iter().copied().collect();
            z[PAD] = f64::NEG_INFINITY;
            word = match rng.as_mut() {
                None => argmax(&z),
                Some(rng) => {
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                    WeightedIndex::new(&weights)
                        .map_err(|e| Error::Internal(format!("sampling: {e}")))?
                        .sample(rng)
                }
            };
            if word == STOP {
                break;
            }
            out.push(word);
            h = h2;
            c = c2;
        }
        Ok(out)
    }

    /// Greedy (or sampled) report for `f`, decoded through `vocab`.
    pub fn describe(&self, f: &RegionFeatures, vocab: &Vocabulary, mode: Decoding) -> Result<TokenizedReport> {
        let tokens = self.generate(f, mode, self.config.max_len)?;
        vocab.decode(&tokens)
    }

    /// Teacher-forced summed cross-entropy over a batch, with the count of
    /// predicted tokens.
    fn batch_loss(&self, g: &mut Graph, features: &[&RegionFeatures], targets: &[&[usize]]) -> (Var, usize) {
        let ctx = self.context(g, stack_features(features).into_dyn());
        let (mut h, mut c) = self.init_state(g, &ctx);
        let steps = targets.iter().map(|t| t.len()).max().unwrap_or(0);
        let mut total: Option<Var> = None;
        let mut count = 0;
        for t in 0..steps {
            let inputs: Vec<usize> = targets
                .iter()
                .map(|seq| if t == 0 { PAD } else { seq.get(t - 1).copied().unwrap_or(PAD) })
                .collect();
            let (h2, c2, logits, _) = self.step(g, &ctx, &inputs, h, c);
            let tgt: Vec<usize> = targets.iter().map(|seq| seq.get(t).copied().unwrap_or(PAD)).collect();
            let w: Vec<f64> = targets.iter().map(|seq| if t < seq.len() { 1.0 } else { 0.0 }).collect();
            count += w.iter().filter(|&&x| x > 0.0).count();
            let term = g.softmax_cross_entropy(logits, &tgt, &w);
            total = Some(match total {
                Some(acc) => g.add(acc, term),
                None => term,
            });
            h = h2;
            c = c2;
        }
        let total = total.unwrap_or_else(|| g.input(ArrayD::zeros(IxDyn(&[]))));
        (total, count)
    }

    /// Mean per-token teacher-forced loss of `pairs` without recording
    /// gradients.
    pub fn evaluate_loss(&self, pairs: &[(RegionFeatures, Vec<usize>)]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in pairs.chunks(32) {
            let mut g = Graph::inference();
            let feats: Vec<&RegionFeatures> = chunk.iter().map(|p| &p.0).collect();
            let tgts: Vec<&[usize]> = chunk.iter().map(|p| p.1.as_slice()).collect();
            let (loss, n) = self.batch_loss(&mut g, &feats, &tgts);
            total += g.scalar(loss);
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }

    /// Token targets for a report: words, SEP after each sentence, STOP;
    /// truncated to `max_len` words before the STOP.
    pub fn targets(&self, vocab: &Vocabulary, report: &TokenizedReport) -> Vec<usize> {
        let mut seq = vocab.encode(report);
        if seq.len() > self.config.max_len + 1 {
            seq.truncate(self.config.max_len);
            seq.push(STOP);
        }
        seq
    }

    pub fn save(&self, path: &Path, vocab_hash: &str, meta: serde_json::Value) -> Result<()> {
        let mut ckpt = Checkpoint::new(
            DECODER_KIND,
            StoredDecoder {
                config: self.config.clone(),
                feature_dim: self.feature_dim,
                vocab_size: self.vocab_size,
            },
            vec![],
            &self.params,
        );
        ckpt.vocab_hash = Some(vocab_hash.to_string());
        ckpt.meta = meta;
        ckpt.save(path)
    }

    /// Loads a decoder, returning it with the vocabulary hash it was
    /// trained against.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let ckpt = Checkpoint::<StoredDecoder>::load(path, DECODER_KIND)?;
        let malformed = |detail: String| Error::MalformedArtifact {
            path: path.to_path_buf(),
            detail,
        };
        let hash = ckpt.vocab_hash.clone().ok_or_else(|| malformed("missing vocab_hash".into()))?;
        let mut dec = Decoder::new(ckpt.config.config.clone(), ckpt.config.feature_dim, ckpt.config.vocab_size)
            .map_err(|e| malformed(e.to_string()))?;
        dec.params
            .load_from(&ckpt.param_store()?)
            .map_err(|e| malformed(e.to_string()))?;
        Ok((dec, hash))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredDecoder {
    config: DecoderConfig,
    feature_dim: usize,
    vocab_size: usize,
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedDecoder {
    pub decoder: Decoder,
    pub log: Vec<DecoderEpoch>,
    pub best_epoch: usize,
}

impl TrainedDecoder {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Teacher-forced training with Adam; keeps the weights with the lowest
/// validation loss (training loss when `val` is empty).
pub fn train_decoder(
    train: &[(RegionFeatures, TokenizedReport)],
    val: &[(RegionFeatures, TokenizedReport)],
    vocab: &Vocabulary,
    config: &DecoderConfig,
) -> Result<TrainedDecoder> {
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyCorpus("no training pairs for decoder".into()))?;
    let mut decoder = Decoder::new(config.clone(), first.0.dim(), vocab.len())?;
    let encode = |pairs: &[(RegionFeatures, TokenizedReport)]| -> Result<Vec<(RegionFeatures, Vec<usize>)>> {
        pairs
            .iter()
            .map(|(f, r)| {
                decoder.check_features(f)?;
                if f.regions() != first.0.regions() {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} regions", first.0.regions()),
                        actual: f.regions().to_string(),
                    });
                }
                Ok((f.clone(), decoder.targets(vocab, r)))
            })
            .collect()
    };
    let train = encode(train)?;
    let val = encode(val)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(config.optimizer);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = decoder.params.clone();
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        let mut count = 0;
        for (bi, idx) in batches(train.len(), config.batch_size, &mut rng).iter().enumerate() {
            let feats: Vec<&RegionFeatures> = idx.iter().map(|&i| &train[i].0).collect();
            let tgts: Vec<&[usize]> = idx.iter().map(|&i| train[i].1.as_slice()).collect();
            let mut g = Graph::new();
            let (summed, n) = decoder.batch_loss(&mut g, &feats, &tgts);
            let loss = g.scale(summed, 1.0 / n.max(1) as f64);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("decoder loss {value} at batch {bi}"),
                });
            }
            total += g.scalar(summed);
            count += n;
            let grads = g.backward(loss).params(&g);
            drop(g);
            adam.step(&mut decoder.params, &grads);
        }
        let train_loss = total / count.max(1) as f64;
        let val_loss = if val.is_empty() {
            decoder.evaluate_loss(&train)?
        } else {
            decoder.evaluate_loss(&val)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        log.push(DecoderEpoch {
            epoch,
            train_loss,
            val_loss,
        });
        let progress = stopper.observe(epoch, -val_loss, 0.0);
        if progress == Progress::Improved {
            best = decoder.params.clone();
        }
        log::debug!("decoder epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        if progress == Progress::Stop {
            break;
        }
    }
    decoder.params.load_from(&best)?;
    Ok(TrainedDecoder {
        decoder,
        log,
        best_epoch: stopper.best_epoch(),
    })
}

/// Stacks region features as a `B × R × D` tensor.
fn stack_features(features: &[&RegionFeatures]) -> Array3<f64> {
    let (r, d) = (features[0].regions(), features[0].dim());
    let mut out = Array3::zeros((features.len(), r, d));
    for (i, f) in features.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&f.0.t());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::preprocess_report;
    use crate::nn::finite_difference;
    use ndarray::{arr1, arr2, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn features(d: usize, r: usize, seed: u64) -> RegionFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RegionFeatures(Array2::from_shape_fn((d, r), |_| rng.random_range(-1.0..1.0)))
    }

    fn small(d: usize, v: usize, seed: u64) -> Decoder {
        let cfg = DecoderConfig {
            embed_dim: 3,
            hidden_dim: 4,
            attention_dim: 5,
            seed,
            ..DecoderConfig::tiny()
        };
        Decoder::new(cfg, d, v).unwrap()
    }

    fn set(dec: &mut Decoder, name: &str, value: ArrayD<f64>) {
        let slot = dec.params_mut().get_mut(name).unwrap();
        assert_eq!(slot.shape(), value.shape(), "{name}");
        slot.assign(&value);
    }

    #[test]
    fn word_distribution_sums_to_one() {
        for seed in 0..20 {
            let dec = small(6, 9, seed);
            let f = features(6, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = DecoderState {
                h: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                cell: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                last_word: rng.random_range(0..9),
            };
            let (_, p) = dec.decode_step(&state, &f).unwrap();
            assert_eq!(p.len(), 9);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_zero_hidden_and_uniform_words() {
        let mut dec = small(6, 8, 1);
        let names: Vec<String> = dec.params().names().map(String::from).collect();
        for n in names {
            dec.params_mut().get_mut(&n).unwrap().fill(0.0);
        }
        let f = features(6, 4, 2);
        let s0 = dec.initial_state(&f).unwrap();
        let (s1, p) = dec.decode_step(&DecoderState { last_word: 5, ..s0 }, &f).unwrap();
        assert!(s1.h.iter().all(|&v| v == 0.0));
        assert!(p.iter().all(|&v| (v - 1.0 / 8.0).abs() < 1e-12));
    }

    #[test]
    fn out_of_vocabulary_word_is_rejected() {
        let dec = small(6, 8, 1);
        let f = features(6, 4, 2);
        let s = DecoderState { last_word: 8, ..dec.initial_state(&f).unwrap() };
        assert!(matches!(dec.decode_step(&s, &f), Err(Error::TokenIndex { index: 8, size: 8 })));
    }

    #[test]
    fn toy_lstm_matches_hand_computed_gates() {
        // E = 1, D = 1, H = 2, A = 1, R = 2, V = 5
        let cfg = DecoderConfig {
            embed_dim: 1,
            hidden_dim: 2,
            attention_dim: 1,
            ..DecoderConfig::tiny()
        };
        let mut dec = Decoder::new(cfg, 1, 5).unwrap();
        set(&mut dec, "embed", arr2(&[[0.0], [0.0], [0.0], [0.0], [0.7]]).into_dyn());
        set(&mut dec, "att.w_f", arr2(&[[0.9]]).into_dyn());
        set(&mut dec, "att.w_h", arr2(&[[0.4], [-0.3]]).into_dyn());
        set(&mut dec, "att.b", arr1(&[0.1]).into_dyn());
        set(&mut dec, "att.v", arr2(&[[1.5]]).into_dyn());
        let w: Vec<f64> = (0..4 * 8).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
        set(&mut dec, "lstm.w", Array2::from_shape_vec((4, 8), w.clone()).unwrap().into_dyn());
        let b: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 20.0).collect();
        set(&mut dec, "lstm.b", arr1(&b).into_dyn());

        let f = RegionFeatures(arr2(&[[0.5, -1.0]]));
        let (h0, c0) = ([0.2, -0.6], [0.3, 0.1]);
        let state = DecoderState { h: h0.to_vec(), cell: c0.to_vec(), last_word: 4 };
        let (next, _) = dec.decode_step(&state, &f).unwrap();

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let e: Vec<f64> = [0.5, -1.0]
            .iter()
            .map(|fk| 1.5 * (0.9 * fk + 0.4 * h0[0] - 0.3 * h0[1] + 0.1_f64).tanh())
            .collect();
        let z = e[0].exp() + e[1].exp();
        let v = 0.5 * e[0].exp() / z - 1.0 * e[1].exp() / z;
        let x = [0.7, v, h0[0], h0[1]];
        let pre = |col: usize| (0..4).map(|r| x[r] * w[r * 8 + col]).sum::<f64>() + b[col];
        let mut h = [0.0; 2];
        let mut c = [0.0; 2];
        for j in 0..2 {
            let i = sig(pre(j));
            let f = sig(pre(2 + j));
            let g = pre(4 + j).tanh();
            let o = sig(pre(6 + j));
            c[j] = f * c0[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        for j in 0..2 {
            assert!((next.h[j] - h[j]).abs() < 1e-6, "{:?} vs {h:?}", next.h);
            assert!((next.cell[j] - c[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_scoring_vector_gives_uniform_attention() {
        let mut dec = small(6, 8, 3);
        dec.params_mut().get_mut("att.v").unwrap().fill(0.0);
        let f = features(6, 5, 4);
        let step = dec.attention(&f, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(step.alpha.iter().all(|&a| (a - 0.2).abs() < 1e-12));
        let mean = f.0.mean_axis(Axis(1)).unwrap();
        for (a, b) in step.v.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_attention_recovers_one_region() {
        // D = 2, A = 2: e_k = 100·tanh(F_k[0]) so a large first coordinate wins
        let cfg = DecoderConfig { embed_dim: 2, hidden_dim: 2, attention_dim: 2, ..DecoderConfig::tiny() };
        let mut dec = Decoder::new(cfg, 2, 6).unwrap();
        set(&mut dec, "att.w_f", arr2(&[[5.0, 0.0], [0.0, 0.0]]).into_dyn());
        set(&mut dec, "att.w_h", Array2::zeros((2, 2)).into_dyn());
        set(&mut dec, "att.v", arr2(&[[100.0], [0.0]]).into_dyn());
        let f = RegionFeatures(arr2(&[[-0.5, 2.0, 0.0, -1.0], [0.3, -0.7, 0.9, 0.1]]));
        let step = dec.attention(&f, &[0.0, 0.0]).unwrap();
        assert!((step.alpha[1] - 1.0).abs() < 1e-4);
        assert!((step.v[0] - 2.0).abs() < 1e-4 && (step.v[1] + 0.7).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn attention_is_normalized_and_matches_explicit_sum(seed in 0u64..10_000, r in 1usize..10) {
            let dec = small(6, 8, seed);
            let f = features(6, r, seed + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let step = dec.attention(&f, &h).unwrap();
            prop_assert!((step.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(step.alpha.iter().all(|&a| a >= 0.0));
            for d in 0..6 {
                let explicit: f64 = (0..r).map(|k| step.alpha[k] * f.0[[d, k]]).sum();
                prop_assert!((step.v[d] - explicit).abs() < 1e-6);
            }
        }

        #[test]
        fn permuting_regions_permutes_weights(seed in 0u64..10_000) {
            let dec = small(6, 8, seed);
            let f = features(6, 5, seed + 1);
            let perm = [3usize, 0, 4, 1, 2];
            let permuted = RegionFeatures(f.0.select(Axis(1), &perm));
            let h = [0.3, -0.2, 0.5, 0.1];
            let a = dec.attention(&f, &h).unwrap();
            let b = dec.attention(&permuted, &h).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((b.alpha[i] - a.alpha[p]).abs() < 1e-12);
            }
            for (x, y) in a.v.iter().zip(&b.v) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generation_contracts() {
        let mut dec = small(6, 8, 5);
        let f = features(6, 4, 6);
        assert!(dec.generate(&f, Decoding::Greedy, 0).is_err());

        dec.params_mut().get_mut("out.b").unwrap()[[STOP]] = 1e3;
        assert!(dec.generate(&f, Decoding::Greedy, 10).unwrap().is_empty());

        dec.params_mut().get_mut("out.b").unwrap()[[STOP]] = -1e3;
        dec.params_mut().get_mut("out.b").unwrap()[[PAD]] = 1e3;
        let out = dec.generate(&f, Decoding::Greedy, 3).unwrap();
        assert_eq!(out.len(), 3);
        assert!(!out.contains(&PAD));
        assert_eq!(out, dec.generate(&f, Decoding::Greedy, 3).unwrap());

        let a = dec.generate(&f, Decoding::Sample { seed: 9 }, 12).unwrap();
        let b = dec.generate(&f, Decoding::Sample { seed: 9 }, 12).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains(&PAD) && !a.contains(&STOP));
    }

    #[test]
    fn attention_weight_gradients_match_finite_differences() {
        let dec = small(3, 7, 11);
        let pairs: Vec<(RegionFeatures, Vec<usize>)> = vec![
            (features(3, 4, 1), vec![4, 5, 2, 6, STOP]),
            (features(3, 4, 2), vec![6, 2, STOP]),
        ];
        let loss_of = |d: &Decoder| {
            let mut g = Graph::new();
            let feats: Vec<&RegionFeatures> = pairs.iter().map(|p| &p.0).collect();
            let tgts: Vec<&[usize]> = pairs.iter().map(|p| p.1.as_slice()).collect();
            let (loss, _) = d.batch_loss(&mut g, &feats, &tgts);
            let grads = g.backward(loss).params(&g);
            (g.scalar(loss), grads)
        };
        let (_, grads) = loss_of(&dec);
        for name in ["att.w_f", "att.w_h", "att.v", "att.b"] {
            let x = dec.params().get(name).unwrap().clone();
            let numeric = finite_difference(&x, 1e-5, |probe| {
                let mut d = dec.clone();
                d.params_mut().get_mut(name).unwrap().assign(probe);
                loss_of(&d).0
            });
            let analytic = &grads[name];
            let scale = numeric.iter().map(|v| v.abs()).fold(1e-8, f64::max);
            let err = (analytic - &numeric).iter().map(|v| v.abs()).fold(0.0, f64::max) / scale;
            assert!(err < 1e-3, "{name}: relative error {err}");
        }
    }

    fn vocab_for(texts: &[&str]) -> Vocabulary {
        let reports: Vec<TokenizedReport> = texts
            .iter()
            .flat_map(|t| [preprocess_report(t, ""), preprocess_report(t, "")])
            .collect();
        Vocabulary::build(&reports).unwrap()
    }

    #[test]
    fn single_caption_is_reproduced_after_overfitting() {
        let text = "the heart is enlarged. no pleural effusion.";
        let vocab = vocab_for(&[text]);
        let report = preprocess_report(text, "");
        let cfg = DecoderConfig { max_epochs: 150, ..DecoderConfig::tiny() };
        let pairs = vec![(features(8, 4, 1), report.clone())];
        let trained = train_decoder(&pairs, &pairs, &vocab, &cfg).unwrap();
        let out = trained.decoder.describe(&pairs[0].0, &vocab, Decoding::Greedy).unwrap();
        assert_eq!(out, report);
    }

    #[test]
    fn fixed_seed_gives_identical_loss_curve() {
        let vocab = vocab_for(&["a b c. d e.", "b c d."]);
        let pairs = vec![
            (features(8, 4, 1), preprocess_report("a b c. d e.", "")),
            (features(8, 4, 2), preprocess_report("b c d.", "")),
        ];
        let cfg = DecoderConfig { max_epochs: 4, batch_size: 1, ..DecoderConfig::tiny() };
        let a = train_decoder(&pairs, &[], &vocab, &cfg).unwrap();
        let b = train_decoder(&pairs, &[], &vocab, &cfg).unwrap();
        assert_eq!(a.log_jsonl(), b.log_jsonl());
        assert_eq!(a.log.len(), 4);
    }

    #[test]
    fn decoder_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dec = small(6, 8, 4);
        let path = dir.path().join("d.json");
        dec.save(&path, "abc", serde_json::Value::Null).unwrap();
        let (back, hash) = Decoder::load(&path).unwrap();
        assert_eq!(hash, "abc");
        let f = features(6, 4, 1);
        assert_eq!(
            back.generate(&f, Decoding::Greedy, 5).unwrap(),
            dec.generate(&f, Decoding::Greedy, 5).unwrap()
        );
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let vocab = vocab_for(&["a b."]);
        assert!(matches!(
            train_decoder(&[], &[], &vocab, &DecoderConfig::tiny()),
            Err(Error::EmptyCorpus(_))
        ));
    }
}
