//! Conditional character-level language model, written from scratch.
//!
//! An encoder LSTM consumes the session representation (for the Avg variant
//! a single pooled vector, i.e. a length-1 sequence; for the Full variant
//! the ordered product-vector sequence) and its latest hidden and cell
//! states seed a decoder LSTM with 128 cells. The decoder reads the query
//! one character at a time, starting from a start-of-sequence token, and a
//! dense layer with softmax over the vocabulary gives the probability of
//! each next character. A candidate's score is the sum of all output
//! log-probabilities, end-of-sequence included, divided by the raw character
//! count raised to the power `r` (0.7 unless configured otherwise), which
//! tempers the bias toward short strings.
//!
//! Both variants share one encoder: they differ only in how the session is
//! presented, so on a length-1 sequence they coincide exactly.
//!
//! Everything is plain `f64` on row-major matrices; the training module
//! ([`train`]) backpropagates through these same forward routines. No
//! tensor library is involved, which keeps scores reproducible to the bit
//! across runs on one machine.

pub mod train;

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::vectors::Pooled;

/// Decoder width from the reference configuration.
pub const DEFAULT_HIDDEN: usize = 128;

/// Character inventory of the model: start and end tokens plus every
/// distinct character of the training queries.
///
/// Index 0 is start-of-sequence, index 1 end-of-sequence, characters follow
/// in sorted order. `max_len` is the longest training query plus the two
/// boundary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    max_len: usize,
}

pub const BOS: usize = 0;
pub const EOS: usize = 1;

impl Vocabulary {
    /// Build from training queries. Needs at least one non-empty query; the
    /// resulting symbol count is the distinct characters plus two.
    pub fn build<'a>(queries: impl IntoIterator<Item = &'a str>) -> Result<Vocabulary> {
        let mut set = std::collections::BTreeSet::new();
        let mut max_chars = 0usize;
        for q in queries {
            max_chars = max_chars.max(q.chars().count());
            set.extend(q.chars());
        }
        if set.is_empty() {
            return Err(Error::Degenerate(
                "vocabulary needs at least one character besides the boundary tokens".into(),
            ));
        }
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, c)| (*c, i + 2)).collect();
        Ok(Vocabulary { chars, index, max_len: max_chars + 2 })
    }

    fn from_chars(chars: Vec<char>, max_len: usize) -> Vocabulary {
        let index = chars.iter().enumerate().map(|(i, c)| (*c, i + 2)).collect();
        Vocabulary { chars, index, max_len }
    }

    /// Symbol count including both boundary tokens.
    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(Error::OutOfVocabulary(c))
    }

    /// Character indices of a query, boundary tokens not included.
    pub fn encode(&self, query: &str) -> Result<Vec<usize>> {
        query.chars().map(|c| self.index_of(c)).collect()
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        self.chars.get(index.checked_sub(2)?).copied()
    }
}

/// Session presentation the model was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Session arrives as one pooled vector.
    Avg,
    /// Session arrives as the ordered product-vector sequence.
    Full,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Avg => "avg",
            EncoderKind::Full => "full",
        }
    }
}

/// Hidden and cell state of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// One LSTM layer's parameters. Gate layout in the 4H dimension is
/// [input, forget, candidate, output].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmCell {
    /// 4H × input_dim.
    pub wx: Mat,
    /// 4H × H.
    pub wh: Mat,
    /// 4H.
    pub b: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Input to one LSTM step: dense vector or one-hot character index.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StepInput<'a> {
    Dense(&'a [f64]),
    OneHot(usize),
}

/// Gate activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

impl LstmCell {
    pub fn hidden(&self) -> usize {
        self.wh.cols
    }

    /// Advance the state by one step. When `trace` is given, gate
    /// activations and the previous state are recorded for backprop.
    pub fn step(&self, input: StepInput<'_>, state: &mut LstmState, trace: Option<&mut Vec<StepTrace>>) {
        let hidden = self.hidden();
        let mut z = self.b.clone();
        match input {
            StepInput::Dense(x) => self.wx.matvec_add(x, &mut z),
            StepInput::OneHot(idx) => {
                debug_assert!(idx < self.wx.cols);
                for (r, zr) in z.iter_mut().enumerate() {
                    *zr += self.wx.get(r, idx);
                }
            }
        }
        self.wh.matvec_add(&state.h, &mut z);

        let mut i = vec![0.0; hidden];
        let mut f = vec![0.0; hidden];
        let mut g = vec![0.0; hidden];
        let mut o = vec![0.0; hidden];
        let c_prev = state.c.clone();
        let h_prev = state.h.clone();
        for j in 0..hidden {
            i[j] = sigmoid(z[j]);
            f[j] = sigmoid(z[hidden + j]);
            g[j] = z[2 * hidden + j].tanh();
            o[j] = sigmoid(z[3 * hidden + j]);
            state.c[j] = f[j] * c_prev[j] + i[j] * g[j];
            state.h[j] = o[j] * state.c[j].tanh();
        }
        if let Some(traces) = trace {
            traces.push(StepTrace { i, f, g, o, c: state.c.clone(), h_prev, c_prev });
        }
    }
}

/// The full encoder-decoder model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncDecModel {
    pub vocab: Vocabulary,
    pub variant: EncoderKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub(crate) enc: LstmCell,
    pub(crate) dec: LstmCell,
    /// V × H.
    pub(crate) out_w: Mat,
    /// V.
    pub(crate) out_b: Vec<f64>,
}

/// Weight initialization knobs. The reference setting draws weights from
/// uniform(−0.08, 0.08), zeroes biases and sets the forget-gate bias to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub weight_range: f64,
    pub forget_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { weight_range: 0.08, forget_bias: 1.0 }
    }
}

/// Length normalization exponent; scores divide by `len^r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthNorm {
    pub r: f64,
}

impl Default for LengthNorm {
    fn default() -> Self {
        LengthNorm { r: 0.7 }
    }
}

impl EncDecModel {
    /// Fresh model with seeded random initialization.
    pub fn new(
        vocab: Vocabulary,
        variant: EncoderKind,
        input_dim: usize,
        hidden: usize,
        init: InitConfig,
        rng_seed: u64,
    ) -> Result<EncDecModel> {
        if vocab.size() < 3 {
            return Err(Error::Degenerate("vocabulary has fewer than 3 symbols".into()));
        }
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Argument("input_dim and hidden must be positive".into()));
        }
        if init.weight_range <= 0.0 {
            return Err(Error::Argument("weight_range must be positive".into()));
        }
        let v = vocab.size();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut mat = |rows: usize, cols: usize| {
            let mut m = Mat::zeros(rows, cols);
            for w in &mut m.data {
                *w = rng.random_range(-init.weight_range..init.weight_range);
            }
            m
        };
        let cell = |wx: Mat, wh: Mat, hidden: usize| {
            let mut b = vec![0.0; 4 * hidden];
            for fj in b.iter_mut().skip(hidden).take(hidden) {
                *fj = init.forget_bias;
            }
            LstmCell { wx, wh, b }
        };
        let enc = cell(mat(4 * hidden, input_dim), mat(4 * hidden, hidden), hidden);
        let dec = cell(mat(4 * hidden, v), mat(4 * hidden, hidden), hidden);
        let out_w = mat(v, hidden);
        let out_b = vec![0.0; v];
        Ok(EncDecModel { vocab, variant, input_dim, hidden, enc, dec, out_w, out_b })
    }

    /// Run the encoder over the session representation. The resulting hidden
    /// and cell states seed the decoder.
    pub fn encode(&self, session: &Pooled) -> Result<LstmState> {
        self.encode_traced(session, None)
    }

    pub(crate) fn encode_traced(
        &self,
        session: &Pooled,
        mut trace: Option<&mut Vec<StepTrace>>,
    ) -> Result<LstmState> {
        let steps: Vec<&[f64]> = match (self.variant, session) {
            (EncoderKind::Avg, Pooled::Vector(v)) => vec![v.as_slice()],
            (EncoderKind::Full, Pooled::Sequence(seq)) => {
                if seq.is_empty() {
                    return Err(Error::Argument("encode: empty session sequence".into()));
                }
                seq.iter().map(|v| v.as_slice()).collect()
            }
            (EncoderKind::Avg, Pooled::Sequence(_)) => {
                return Err(Error::Argument(
                    "variant mismatch: Avg model expects a pooled vector".into(),
                ))
            }
            (EncoderKind::Full, Pooled::Vector(_)) => {
                return Err(Error::Argument(
                    "variant mismatch: Full model expects a vector sequence".into(),
                ))
            }
        };
        let mut state = LstmState::zeros(self.hidden);
        for x in steps {
            if x.len() != self.input_dim {
                return Err(Error::Dimension { expected: self.input_dim, got: x.len() });
            }
            self.enc.step(StepInput::Dense(x), &mut state, trace.as_deref_mut());
        }
        Ok(state)
    }

    /// One decoder step: LSTM update on the previous character, then the
    /// output layer as log-softmax over the vocabulary.
    pub fn decoder_step(&self, state: &LstmState, input_char: usize) -> (LstmState, Vec<f64>) {
        let mut next = state.clone();
        self.dec.step(StepInput::OneHot(input_char), &mut next, None);
        let logp = self.output_logp(&next.h);
        (next, logp)
    }

    /// Log-softmax of the output layer on a hidden vector.
    pub(crate) fn output_logp(&self, h: &[f64]) -> Vec<f64> {
        let mut logits = self.out_b.clone();
        self.out_w.matvec_add(h, &mut logits);
        log_softmax(&mut logits);
        logits
    }

    /// Score a query against a session: summed log-probability of all
    /// characters plus the end token, divided by `len(query)^r` where `len`
    /// counts raw characters.
    pub fn score_query(&self, session: &Pooled, query: &str, norm: LengthNorm) -> Result<f64> {
        if norm.r < 0.0 {
            return Err(Error::Argument("length norm exponent must be >= 0".into()));
        }
        let indices = self.vocab.encode(query)?;
        let len = indices.len();
        if len == 0 {
            return Err(Error::Argument("score_query: empty query".into()));
        }
        if len + 2 > self.vocab.max_len() {
            return Err(Error::Argument(format!(
                "query of {len} chars exceeds model max_len {}",
                self.vocab.max_len()
            )));
        }
        let mut state = self.encode(session)?;
        let mut sum = 0.0;
        let mut prev = BOS;
        for target in indices.iter().copied().chain(std::iter::once(EOS)) {
            let (next, logp) = self.decoder_step(&state, prev);
            sum += logp[target];
            state = next;
            prev = target;
        }
        Ok(sum / (len as f64).powf(norm.r))
    }

    /// Rerank candidate queries by conditional score, descending. Candidates
    /// that cannot be scored (out-of-vocabulary characters, over-length) sink
    /// to the bottom in their input order; equal scores keep input order.
    pub fn rerank_encdec<'a>(
        &self,
        session: &Pooled,
        candidates: &[&'a str],
        norm: LengthNorm,
    ) -> Result<Vec<(&'a str, Option<f64>)>> {
        let state = self.encode(session)?;
        let mut scored: Vec<(&str, Option<f64>)> = Vec::with_capacity(candidates.len());
        let mut unscorable: Vec<(&str, Option<f64>)> = Vec::new();
        for q in candidates {
            match self.score_from_state(&state, q, norm) {
                Ok(s) => scored.push((q, Some(s))),
                Err(_) => unscorable.push((q, None)),
            }
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        scored.extend(unscorable);
        Ok(scored)
    }

    /// Score with a precomputed encoder state; lets rerank encode once.
    pub fn score_from_state(
        &self,
        state: &LstmState,
        query: &str,
        norm: LengthNorm,
    ) -> Result<f64> {
        if norm.r < 0.0 {
            return Err(Error::Argument("length norm exponent must be >= 0".into()));
        }
        let indices = self.vocab.encode(query)?;
        let len = indices.len();
        if len == 0 {
            return Err(Error::Argument("score_query: empty query".into()));
        }
        if len + 2 > self.vocab.max_len() {
            return Err(Error::Argument(format!(
                "query of {len} chars exceeds model max_len {}",
                self.vocab.max_len()
            )));
        }
        let mut state = state.clone();
        let mut sum = 0.0;
        let mut prev = BOS;
        for target in indices.iter().copied().chain(std::iter::once(EOS)) {
            let (next, logp) = self.decoder_step(&state, prev);
            sum += logp[target];
            state = next;
            prev = target;
        }
        Ok(sum / (len as f64).powf(norm.r))
    }

    /// Parameter blocks in checkpoint order.
    pub(crate) fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.enc.wx.data,
            &self.enc.wh.data,
            &self.enc.b,
            &self.dec.wx.data,
            &self.dec.wh.data,
            &self.dec.b,
            &self.out_w.data,
            &self.out_b,
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.enc.wx.data,
            &mut self.enc.wh.data,
            &mut self.enc.b,
            &mut self.dec.wx.data,
            &mut self.dec.wh.data,
            &mut self.dec.b,
            &mut self.out_w.data,
            &mut self.out_b,
        ]
    }

    pub(crate) const BLOCK_NAMES: [&'static str; 8] = [
        "enc_wx", "enc_wh", "enc_b", "dec_wx", "dec_wh", "dec_b", "out_w", "out_b",
    ];

    /// Total scalar parameter count; with [`get_param`](Self::get_param) and
    /// [`set_param`](Self::set_param) it exposes a flat view for numerical
    /// gradient checks.
    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn get_param(&self, mut index: usize) -> f64 {
        for block in self.blocks() {
            if index < block.len() {
                return block[index];
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for block in self.blocks_mut() {
            if index < block.len() {
                block[index] = value;
                return;
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }
}

/// In-place numerically stable log-softmax.
pub(crate) fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for v in logits.iter_mut() {
        *v -= log_sum;
    }
}

/// Write a model checkpoint: versioned header, vocabulary, then the flat
/// parameter blocks in declared order. Reloading reproduces scores
/// bit-identically on the writing machine.
pub fn save_model(path: &Path, model: &EncDecModel) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# typeahead-encdec v1")?;
    writeln!(
        f,
        "# variant={} input_dim={} hidden={} vocab_size={} max_len={}",
        model.variant.as_str(),
        model.input_dim,
        model.hidden,
        model.vocab.size(),
        model.vocab.max_len()
    )?;
    for (i, c) in model.vocab.chars.iter().enumerate() {
        writeln!(f, "char\t{}\t{}", i + 2, *c as u32)?;
    }
    for (name, block) in EncDecModel::BLOCK_NAMES.iter().zip(model.blocks()) {
        let joined = block.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        writeln!(f, "param\t{name}\t{joined}")?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EncDecModel> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "# typeahead-encdec v1")) => {}
        other => {
            return Err(err(
                other.map(|(i, _)| i).unwrap_or(1),
                "expected header \"# typeahead-encdec v1\"".into(),
            ))
        }
    }
    let (meta_line, meta) =
        lines.next().ok_or_else(|| err(2, "missing metadata line".into()))?;
    let field = |key: &str| -> Result<String> {
        meta.trim_start_matches('#')
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
            .map(|v| v.to_string())
            .ok_or_else(|| err(meta_line, format!("missing {key}= in metadata")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        field(key)?.parse().map_err(|e| err(meta_line, format!("bad {key}: {e}")))
    };
    let variant = match field("variant")?.as_str() {
        "avg" => EncoderKind::Avg,
        "full" => EncoderKind::Full,
        other => return Err(err(meta_line, format!("unknown variant {other:?}"))),
    };
    let input_dim = parse_usize("input_dim")?;
    let hidden = parse_usize("hidden")?;
    let vocab_size = parse_usize("vocab_size")?;
    let max_len = parse_usize("max_len")?;

    let mut chars: Vec<(usize, char)> = Vec::new();
    let mut params: HashMap<String, Vec<f64>> = HashMap::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some("char"), Some(idx), Some(code)) => {
                let idx: usize =
                    idx.parse().map_err(|e| err(line_no, format!("bad index: {e}")))?;
                let code: u32 =
                    code.parse().map_err(|e| err(line_no, format!("bad codepoint: {e}")))?;
                let c = char::from_u32(code)
                    .ok_or_else(|| err(line_no, format!("invalid codepoint {code}")))?;
                chars.push((idx, c));
            }
            (Some("param"), Some(name), Some(values)) => {
                let block = values
                    .split(',')
                    .map(|t| {
                        t.parse::<f64>().map_err(|e| err(line_no, format!("bad float: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                params.insert(name.to_string(), block);
            }
            (Some(other), _, _) => return Err(err(line_no, format!("unknown tag {other:?}"))),
            _ => return Err(err(line_no, "malformed row".into())),
        }
    }
    chars.sort_by_key(|(i, _)| *i);
    if chars.len() + 2 != vocab_size
        || chars.iter().enumerate().any(|(i, (idx, _))| *idx != i + 2)
    {
        return Err(err(0, "vocabulary rows inconsistent with vocab_size".into()));
    }
    let vocab = Vocabulary::from_chars(chars.into_iter().map(|(_, c)| c).collect(), max_len);

    let v = vocab.size();
    let shapes: [(usize, usize); 8] = [
        (4 * hidden, input_dim),
        (4 * hidden, hidden),
        (4 * hidden, 1),
        (4 * hidden, v),
        (4 * hidden, hidden),
        (4 * hidden, 1),
        (v, hidden),
        (v, 1),
    ];
    let mut take = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let block = params
            .remove(name)
            .ok_or_else(|| err(0, format!("missing param block {name:?}")))?;
        if block.len() != rows * cols {
            return Err(err(
                0,
                format!("block {name:?} has {} values, expected {}", block.len(), rows * cols),
            ));
        }
        Ok(block)
    };
    let mut blocks = Vec::with_capacity(8);
    for (name, (rows, cols)) in EncDecModel::BLOCK_NAMES.iter().zip(shapes) {
        blocks.push((take(name, rows, cols)?, rows, cols));
    }
    fn to_mat(block: (Vec<f64>, usize, usize)) -> Mat {
        Mat { rows: block.1, cols: block.2, data: block.0 }
    }
    let mut it = blocks.into_iter();
    let enc_wx = to_mat(it.next().unwrap());
    let enc_wh = to_mat(it.next().unwrap());
    let enc_b = it.next().unwrap().0;
    let dec_wx = to_mat(it.next().unwrap());
    let dec_wh = to_mat(it.next().unwrap());
    let dec_b = it.next().unwrap().0;
    let out_w = to_mat(it.next().unwrap());
    let out_b = it.next().unwrap().0;
    Ok(EncDecModel {
        vocab,
        variant,
        input_dim,
        hidden,
        enc: LstmCell { wx: enc_wx, wh: enc_wh, b: enc_b },
        dec: LstmCell { wx: dec_wx, wh: dec_wh, b: dec_b },
        out_w,
        out_b,
    })
}
