//! Backpropagation-through-time training for the encoder-decoder model.
//!
//! The loss is teacher-forced cross-entropy: for each pair the decoder reads
//! the gold characters and the loss is the mean negative log-probability per
//! predicted symbol (end token included), then averaged over the batch.
//! Iterating each sequence at its own length is gradient-equivalent to
//! padding to a fixed length and masking padded steps out of the loss, which
//! is how the same objective is usually phrased for batched tensor backends.
//!
//! Updates use Adam with a per-update learning-rate decay
//! `lr_t = lr0 / (1 + decay * t)` with `t` counting completed updates.
//! Early stopping watches validation loss (a deterministic by-session split)
//! and returns the parameters of the best epoch, not the last.
//! Given the same dataset, config and seed, training is bit-reproducible on
//! one machine: batch order comes from a seeded generator and accumulation
//! order is fixed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncDecModel, LstmCell, StepInput, StepTrace, BOS, EOS};
use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::linalg::Mat;
use crate::vectors::Pooled;

/// One training example: a session representation and the query its user
/// eventually searched. The session id drives the validation split so a
/// session never straddles both sides.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub session_id: String,
    pub session: Pooled,
    pub query: String,
}

/// Optimizer and schedule settings, defaults from the reference setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            lr_decay: 1e-5,
            batch_size: 128,
            max_epochs: 100,
            patience: 20,
            validation_fraction: 0.1,
            rng_seed: 42,
        }
    }
}

/// Per-epoch loss history and where training stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    /// Empty when the validation split is empty; training loss is monitored
    /// instead.
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_loss: f64,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    enc_wx: Mat,
    enc_wh: Mat,
    enc_b: Vec<f64>,
    dec_wx: Mat,
    dec_wh: Mat,
    dec_b: Vec<f64>,
    out_w: Mat,
    out_b: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &EncDecModel) -> Gradients {
        let (h, k, v) = (model.hidden, model.input_dim, model.vocab.size());
        Gradients {
            enc_wx: Mat::zeros(4 * h, k),
            enc_wh: Mat::zeros(4 * h, h),
            enc_b: vec![0.0; 4 * h],
            dec_wx: Mat::zeros(4 * h, v),
            dec_wh: Mat::zeros(4 * h, h),
            dec_b: vec![0.0; 4 * h],
            out_w: Mat::zeros(v, h),
            out_b: vec![0.0; v],
        }
    }

    pub(crate) fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.enc_wx.data,
            &self.enc_wh.data,
            &self.enc_b,
            &self.dec_wx.data,
            &self.dec_wh.data,
            &self.dec_b,
            &self.out_w.data,
            &self.out_b,
        ]
    }

    /// Flat read access aligned with [`EncDecModel::get_param`].
    pub fn get(&self, mut index: usize) -> f64 {
        for block in self.blocks() {
            if index < block.len() {
                return block[index];
            }
            index -= block.len();
        }
        panic!("gradient index out of range");
    }

    fn scale(&mut self, s: f64) {
        self.enc_wx.scale(s);
        self.enc_wh.scale(s);
        self.enc_b.iter_mut().for_each(|v| *v *= s);
        self.dec_wx.scale(s);
        self.dec_wh.scale(s);
        self.dec_b.iter_mut().for_each(|v| *v *= s);
        self.out_w.scale(s);
        self.out_b.iter_mut().for_each(|v| *v *= s);
    }
}

/// One decoder step's cached forward values.
struct DecStep {
    input: usize,
    target: usize,
    probs: Vec<f64>,
    h: Vec<f64>,
}

/// Backward through one LSTM step. `dh` and `dc` are gradients flowing into
/// this step's output state; returns gradients for the previous state and
/// accumulates parameter gradients.
#[allow(clippy::too_many_arguments)]
fn cell_backward(
    cell: &LstmCell,
    trace: &StepTrace,
    input: StepInput<'_>,
    dh: &[f64],
    dc_in: &[f64],
    g_wx: &mut Mat,
    g_wh: &mut Mat,
    g_b: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = cell.hidden();
    let mut dz = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for j in 0..hidden {
        let tc = trace.c[j].tanh();
        let d_o = dh[j] * tc;
        let dc = dc_in[j] + dh[j] * trace.o[j] * (1.0 - tc * tc);
        let di = dc * trace.g[j];
        let dg = dc * trace.i[j];
        let df = dc * trace.c_prev[j];
        dc_prev[j] = dc * trace.f[j];
        dz[j] = di * trace.i[j] * (1.0 - trace.i[j]);
        dz[hidden + j] = df * trace.f[j] * (1.0 - trace.f[j]);
        dz[2 * hidden + j] = dg * (1.0 - trace.g[j] * trace.g[j]);
        dz[3 * hidden + j] = d_o * trace.o[j] * (1.0 - trace.o[j]);
    }
    for (gb, dzr) in g_b.iter_mut().zip(&dz) {
        *gb += dzr;
    }
    match input {
        StepInput::Dense(x) => g_wx.add_outer(&dz, x),
        StepInput::OneHot(idx) => {
            for (r, dzr) in dz.iter().enumerate() {
                let cur = g_wx.get(r, idx);
                g_wx.set(r, idx, cur + dzr);
            }
        }
    }
    g_wh.add_outer(&dz, &trace.h_prev);
    let mut dh_prev = vec![0.0; hidden];
    cell.wh.matvec_t_add(&dz, &mut dh_prev);
    (dh_prev, dc_prev)
}

/// Mean per-character cross-entropy of the batch, forward only.
pub fn loss(model: &EncDecModel, pairs: &[&TrainPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("loss: empty batch".into()));
    }
    let mut total = 0.0;
    for pair in pairs {
        let indices = model.vocab.encode(&pair.query)?;
        if indices.is_empty() {
            return Err(Error::Argument("loss: empty query".into()));
        }
        let mut state = model.encode(&pair.session)?;
        let mut sum = 0.0;
        let mut prev = BOS;
        let steps = indices.len() + 1;
        for target in indices.into_iter().chain([EOS]) {
            let (next, logp) = model.decoder_step(&state, prev);
            sum -= logp[target];
            state = next;
            prev = target;
        }
        total += sum / steps as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Loss and its analytic gradients over a batch. The gradient corresponds
/// exactly to the value returned as loss, which is what the finite-difference
/// check in the test suite relies on.
pub fn loss_and_gradients(
    model: &EncDecModel,
    pairs: &[&TrainPair],
) -> Result<(f64, Gradients)> {
    if pairs.is_empty() {
        return Err(Error::Argument("loss_and_gradients: empty batch".into()));
    }
    let hidden = model.hidden;
    let mut grads = Gradients::zeros(model);
    let mut total = 0.0;
    for pair in pairs {
        let indices = model.vocab.encode(&pair.query)?;
        if indices.is_empty() {
            return Err(Error::Argument("loss_and_gradients: empty query".into()));
        }
        // Forward, keeping traces.
        let mut enc_traces = Vec::new();
        let mut state = model.encode_traced(&pair.session, Some(&mut enc_traces))?;
        let enc_inputs: Vec<&[f64]> = match (&model.variant, &pair.session) {
            (super::EncoderKind::Avg, Pooled::Vector(v)) => vec![v.as_slice()],
            (super::EncoderKind::Full, Pooled::Sequence(seq)) => {
                seq.iter().map(|v| v.as_slice()).collect()
            }
            _ => unreachable!("encode_traced validated the variant"),
        };
        let mut dec_traces = Vec::new();
        let mut dec_steps = Vec::new();
        let mut prev = BOS;
        for target in indices.iter().copied().chain([EOS]) {
            model.dec.step(StepInput::OneHot(prev), &mut state, Some(&mut dec_traces));
            let logp = model.output_logp(&state.h);
            total -= logp[target] / ((indices.len() + 1) as f64);
            dec_steps.push(DecStep {
                input: prev,
                target,
                probs: logp.iter().map(|lp| lp.exp()).collect(),
                h: state.h.clone(),
            });
            prev = target;
        }
        // Backward. Sample weight folds the per-char mean into the chain.
        let w = 1.0 / dec_steps.len() as f64;
        let mut dh = vec![0.0; hidden];
        let mut dc = vec![0.0; hidden];
        for (step, trace) in dec_steps.iter().zip(&dec_traces).rev() {
            let mut dlogits = step.probs.clone();
            dlogits[step.target] -= 1.0;
            dlogits.iter_mut().for_each(|v| *v *= w);
            grads.out_w.add_outer(&dlogits, &step.h);
            for (gb, dl) in grads.out_b.iter_mut().zip(&dlogits) {
                *gb += dl;
            }
            model.out_w.matvec_t_add(&dlogits, &mut dh);
            let (dh_prev, dc_prev) = cell_backward(
                &model.dec,
                trace,
                StepInput::OneHot(step.input),
                &dh,
                &dc,
                &mut grads.dec_wx,
                &mut grads.dec_wh,
                &mut grads.dec_b,
            );
            dh = dh_prev;
            dc = dc_prev;
        }
        for (x, trace) in enc_inputs.iter().zip(&enc_traces).rev() {
            let (dh_prev, dc_prev) = cell_backward(
                &model.enc,
                trace,
                StepInput::Dense(x),
                &dh,
                &dc,
                &mut grads.enc_wx,
                &mut grads.enc_wh,
                &mut grads.enc_b,
            );
            dh = dh_prev;
            dc = dc_prev;
        }
    }
    grads.scale(1.0 / pairs.len() as f64);
    Ok((total / pairs.len() as f64, grads))
}

/// Central-difference estimate of one parameter's gradient, for checking the
/// analytic backward pass.
pub fn numerical_gradient(
    model: &EncDecModel,
    pairs: &[&TrainPair],
    index: usize,
    step: f64,
) -> Result<f64> {
    let mut probe = model.clone();
    let orig = probe.get_param(index);
    probe.set_param(index, orig + step);
    let plus = loss(&probe, pairs)?;
    probe.set_param(index, orig - step);
    let minus = loss(&probe, pairs)?;
    Ok((plus - minus) / (2.0 * step))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: usize) -> Adam {
        Adam { m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    fn step(&mut self, model: &mut EncDecModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        let mut offset = 0;
        for (pb, gb) in model.blocks_mut().into_iter().zip(grads.blocks()) {
            let len = pb.len();
            for (k, (p, g)) in pb.iter_mut().zip(gb.iter()).enumerate() {
                let s = offset + k;
                self.m[s] = Self::BETA1 * self.m[s] + (1.0 - Self::BETA1) * g;
                self.v[s] = Self::BETA2 * self.v[s] + (1.0 - Self::BETA2) * g * g;
                let m_hat = self.m[s] / bc1;
                let v_hat = self.v[s] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
            offset += len;
        }
    }
}

/// Deterministic by-session validation split: a session's hash decides its
/// side, so multiple pairs of one session never straddle the boundary.
pub(crate) fn split_indices(dataset: &[TrainPair], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let threshold = (fraction * 10_000.0).round() as u64;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, pair) in dataset.iter().enumerate() {
        if fnv1a(pair.session_id.as_bytes()) % 10_000 < threshold {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Train with teacher forcing and Adam; returns the best-validation model
/// and the loss history.
pub fn train(
    model: EncDecModel,
    dataset: &[TrainPair],
    config: &TrainConfig,
) -> Result<(EncDecModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Argument("train: empty dataset".into()));
    }
    if config.learning_rate <= 0.0 || config.lr_decay < 0.0 {
        return Err(Error::Argument("train: learning rate must be positive, decay >= 0".into()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.patience == 0 {
        return Err(Error::Argument(
            "train: batch_size, max_epochs and patience must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::Argument("train: validation_fraction must be in [0, 1)".into()));
    }
    let (mut train_idx, val_idx) = split_indices(dataset, config.validation_fraction);
    if train_idx.is_empty() {
        return Err(Error::Degenerate("train: validation split left no training data".into()));
    }
    let val_pairs: Vec<&TrainPair> = val_idx.iter().map(|i| &dataset[*i]).collect();

    let mut model = model;
    let mut adam = Adam::new(model.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut updates = 0u64;
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
        best_loss: f64::INFINITY,
    };
    let mut best_model = model.clone();
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let pairs: Vec<&TrainPair> = batch.iter().map(|i| &dataset[*i]).collect();
            let (batch_loss, grads) = loss_and_gradients(&model, &pairs)?;
            let lr = config.learning_rate / (1.0 + config.lr_decay * updates as f64);
            adam.step(&mut model, &grads, lr);
            updates += 1;
            epoch_loss += batch_loss * pairs.len() as f64;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        report.train_loss.push(train_loss);
        let monitored = if val_pairs.is_empty() {
            train_loss
        } else {
            let val_loss = loss(&model, &val_pairs)?;
            report.val_loss.push(val_loss);
            val_loss
        };
        report.epochs_run = epoch;
        if monitored < report.best_loss {
            report.best_loss = monitored;
            report.best_epoch = epoch;
            best_model = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best_model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encdec::{EncoderKind, InitConfig, LengthNorm, Vocabulary};

    fn pair(id: &str, session: Pooled, query: &str) -> TrainPair {
        TrainPair { session_id: id.into(), session, query: query.into() }
    }

    fn small_model(variant: EncoderKind, seed: u64) -> EncDecModel {
        // 3 distinct chars → 5 symbols with the boundary tokens.
        let vocab = Vocabulary::build(["abc", "cab"]).unwrap();
        assert_eq!(vocab.size(), 5);
        EncDecModel::new(vocab, variant, 3, 4, InitConfig::default(), seed).unwrap()
    }

    fn check_gradients(model: &EncDecModel, pairs: &[&TrainPair]) {
        let (_, grads) = loss_and_gradients(model, pairs).unwrap();
        for index in 0..model.param_count() {
            let analytic = grads.get(index);
            let numeric = numerical_gradient(model, pairs, index, 1e-5).unwrap();
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-6 {
                let rel = (analytic - numeric).abs() / scale;
                assert!(
                    rel < 1e-4,
                    "param {index}: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
            } else {
                assert!(
                    (analytic - numeric).abs() < 1e-8,
                    "param {index}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_central_differences_avg() {
        let model = small_model(EncoderKind::Avg, 11);
        let pairs = [
            pair("s1", Pooled::Vector(vec![0.4, -0.2, 0.7]), "abc"),
            pair("s2", Pooled::Vector(vec![-0.5, 0.1, 0.0]), "ca"),
        ];
        let refs: Vec<&TrainPair> = pairs.iter().collect();
        check_gradients(&model, &refs);
    }

    #[test]
    fn gradients_match_central_differences_full() {
        // Multi-step encoder exercises backprop across encoder time steps.
        let model = small_model(EncoderKind::Full, 12);
        let pairs = [pair(
            "s1",
            Pooled::Sequence(vec![vec![0.3, 0.3, -0.6], vec![-0.1, 0.8, 0.2], vec![0.0, 0.0, 1.0]]),
            "bac",
        )];
        let refs: Vec<&TrainPair> = pairs.iter().collect();
        check_gradients(&model, &refs);
    }

    #[test]
    fn batch_loss_and_gradients_are_means_over_samples() {
        let model = small_model(EncoderKind::Avg, 13);
        let a = pair("s1", Pooled::Vector(vec![0.4, -0.2, 0.7]), "ab");
        let b = pair("s2", Pooled::Vector(vec![-0.3, 0.9, 0.1]), "cba");
        let (la, ga) = loss_and_gradients(&model, &[&a]).unwrap();
        let (lb, gb) = loss_and_gradients(&model, &[&b]).unwrap();
        let (lab, gab) = loss_and_gradients(&model, &[&a, &b]).unwrap();
        assert!((lab - (la + lb) / 2.0).abs() < 1e-12);
        for index in 0..model.param_count() {
            let want = (ga.get(index) + gb.get(index)) / 2.0;
            assert!((gab.get(index) - want).abs() < 1e-12);
        }
        assert!((loss(&model, &[&a, &b]).unwrap() - lab).abs() < 1e-12);
    }

    #[test]
    fn memorizes_a_single_pair() {
        let vocab = Vocabulary::build(["ski"]).unwrap();
        let model =
            EncDecModel::new(vocab, EncoderKind::Avg, 2, 24, InitConfig::default(), 5).unwrap();
        let dataset: Vec<TrainPair> = (0..8)
            .map(|i| pair(&format!("s{i}"), Pooled::Vector(vec![0.5, -0.5]), "ski"))
            .collect();
        let config = TrainConfig {
            learning_rate: 0.05,
            lr_decay: 0.0,
            batch_size: 8,
            max_epochs: 100,
            patience: 100,
            validation_fraction: 0.0,
            rng_seed: 7,
        };
        let (trained, report) = train(model, &dataset, &config).unwrap();
        assert_eq!(report.train_loss.len(), report.epochs_run);
        assert!(report.val_loss.is_empty());
        for w in report.train_loss[..10].windows(2) {
            assert!(w[1] < w[0], "early loss not decreasing: {w:?}");
        }
        assert!(
            *report.train_loss.last().unwrap() < 0.01,
            "final loss {}",
            report.train_loss.last().unwrap()
        );
        // The memorized query now dominates alternatives.
        let session = Pooled::Vector(vec![0.5, -0.5]);
        let ski = trained.score_query(&session, "ski", LengthNorm::default()).unwrap();
        let iks = trained.score_query(&session, "iks", LengthNorm::default()).unwrap();
        assert!(ski > iks);
    }

    #[test]
    fn conditioning_separates_two_sessions() {
        let vocab = Vocabulary::build(["ab", "ba"]).unwrap();
        let model =
            EncDecModel::new(vocab, EncoderKind::Avg, 2, 16, InitConfig::default(), 6).unwrap();
        let mut dataset = Vec::new();
        for i in 0..8 {
            dataset.push(pair(&format!("a{i}"), Pooled::Vector(vec![1.0, 0.0]), "ab"));
            dataset.push(pair(&format!("b{i}"), Pooled::Vector(vec![0.0, 1.0]), "ba"));
        }
        let config = TrainConfig {
            learning_rate: 0.05,
            lr_decay: 0.0,
            batch_size: 16,
            max_epochs: 80,
            patience: 80,
            validation_fraction: 0.0,
            rng_seed: 8,
        };
        let (trained, _) = train(model, &dataset, &config).unwrap();
        let norm = LengthNorm::default();
        let sa = Pooled::Vector(vec![1.0, 0.0]);
        let sb = Pooled::Vector(vec![0.0, 1.0]);
        assert!(
            trained.score_query(&sa, "ab", norm).unwrap()
                > trained.score_query(&sa, "ba", norm).unwrap()
        );
        assert!(
            trained.score_query(&sb, "ba", norm).unwrap()
                > trained.score_query(&sb, "ab", norm).unwrap()
        );
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let dataset: Vec<TrainPair> = (0..12)
            .map(|i| {
                let x = (i % 3) as f64 / 2.0;
                let q = ["abc", "cab", "bc"][i % 3];
                pair(&format!("s{i}"), Pooled::Vector(vec![x, 1.0 - x, 0.2]), q)
            })
            .collect();
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            max_epochs: 5,
            patience: 5,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let run = || {
            let model = small_model(EncoderKind::Avg, 21);
            train(model, &dataset, &config).unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        for (a, b) in r1.train_loss.iter().zip(&r2.train_loss) {
            assert!((a - b).abs() < 1e-9);
        }
        // A different shuffle seed diverges.
        let mut other = config.clone();
        other.rng_seed = 99;
        let model = small_model(EncoderKind::Avg, 21);
        let (_, r3) = train(model, &dataset, &other).unwrap();
        assert_ne!(r1.train_loss, r3.train_loss);
    }

    #[test]
    fn early_stopping_returns_best_epoch_parameters() {
        // A deliberately unstable learning rate makes the monitored loss
        // bounce, so patience trips before max_epochs.
        let dataset: Vec<TrainPair> = (0..10)
            .map(|i| {
                let x = (i % 5) as f64 / 4.0;
                let q = ["abc", "cab", "bc", "a", "ccb"][i % 5];
                pair(&format!("s{i}"), Pooled::Vector(vec![x, -x, 0.5]), q)
            })
            .collect();
        let config = TrainConfig {
            learning_rate: 1.0,
            batch_size: 4,
            max_epochs: 60,
            patience: 3,
            validation_fraction: 0.3,
            rng_seed: 3,
            ..TrainConfig::default()
        };
        let model = small_model(EncoderKind::Avg, 31);
        let (best, report) = train(model, &dataset, &config).unwrap();
        assert!(report.epochs_run < config.max_epochs, "expected an early stop");
        assert!(!report.val_loss.is_empty());
        let min = report.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(report.val_loss[report.best_epoch - 1], min);
        assert_eq!(report.best_loss, min);
        // Returned parameters really are the best epoch's: their validation
        // loss equals the reported minimum.
        let (_, val_idx) = split_indices(&dataset, config.validation_fraction);
        let val_pairs: Vec<&TrainPair> = val_idx.iter().map(|i| &dataset[*i]).collect();
        let reloaded = loss(&best, &val_pairs).unwrap();
        assert!((reloaded - min).abs() < 1e-12);
    }

    #[test]
    fn validation_split_groups_by_session() {
        let mut dataset = Vec::new();
        for s in 0..20 {
            for k in 0..3 {
                dataset.push(pair(
                    &format!("sess-{s}"),
                    Pooled::Vector(vec![k as f64, 0.0, 0.0]),
                    "ab",
                ));
            }
        }
        let (train_idx, val_idx) = split_indices(&dataset, 0.3);
        assert_eq!(train_idx.len() + val_idx.len(), dataset.len());
        assert!(!val_idx.is_empty(), "30% split should catch some of 20 sessions");
        let side = |idx: &[usize]| -> std::collections::HashSet<&str> {
            idx.iter().map(|i| dataset[*i].session_id.as_str()).collect()
        };
        assert!(side(&train_idx).is_disjoint(&side(&val_idx)));
        // All three pairs of a session land on one side.
        for ids in [side(&train_idx), side(&val_idx)] {
            for id in ids {
                let count = dataset.iter().filter(|p| p.session_id == id).count();
                assert_eq!(count, 3);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = small_model(EncoderKind::Avg, 41);
        assert!(train(model.clone(), &[], &TrainConfig::default()).is_err());
        let oov = [pair("s", Pooled::Vector(vec![0.0; 3]), "xyz")];
        let refs: Vec<&TrainPair> = oov.iter().collect();
        assert!(loss_and_gradients(&model, &refs).is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        let data = [pair("s", Pooled::Vector(vec![0.0; 3]), "ab")];
        assert!(train(model.clone(), &data, &bad).is_err());
        let bad = TrainConfig { validation_fraction: 1.0, ..TrainConfig::default() };
        assert!(train(model, &data, &bad).is_err());
    }
}
