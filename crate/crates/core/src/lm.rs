//! Language models over binary drum scores: a repetition-aware skip-16
//! bi-gram and a GRU network, both scored by teacher-forced negative
//! log-likelihood with base-2 per-symbol perplexity.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::nn::{self, TapedParams};
use crate::optim::{AdamW, AdamWConfig};
use crate::score::{DrumScore, NUM_INSTRUMENTS};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamSet, TensorError};

/// The skip distance: one 4/4 bar of sixteen tatums.
pub const BAR_SKIP: usize = 16;
/// Probability floor inside log terms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum LmError {
    /// No usable transitions in the training corpus.
    InsufficientData,
    EmptyCorpus,
    /// Score too short for the skip-16 likelihood.
    ScoreTooShort { num_tatums: usize, needed: usize },
    /// Input values must lie in [0, 1].
    Domain { value: f64 },
    /// Transition table rows must be proper distributions.
    BadTable,
    Tensor(TensorError),
}

impl fmt::Display for LmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LmError::InsufficientData => {
                write!(f, "corpus has no scores with more than {BAR_SKIP} tatums")
            }
            LmError::EmptyCorpus => write!(f, "corpus is empty"),
            LmError::ScoreTooShort { num_tatums, needed } => {
                write!(f, "likelihood undefined for {num_tatums} tatums, need >= {needed}")
            }
            LmError::Domain { value } => write!(f, "value {value} outside [0, 1]"),
            LmError::BadTable => write!(f, "transition rows must be in (0,1) and sum to 1"),
            LmError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for LmError {}

impl From<TensorError> for LmError {
    fn from(e: TensorError) -> Self {
        LmError::Tensor(e)
    }
}

/// Negative log-likelihood in nats with its base-2 per-symbol perplexity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmScore {
    pub nll_nats: f64,
    /// Number of binary symbols the likelihood covers.
    pub symbols: usize,
    pub perplexity: f64,
}

impl LmScore {
    fn from_nats(nll_nats: f64, symbols: usize) -> Self {
        let bits = nll_nats / core::f64::consts::LN_2;
        LmScore {
            nll_nats,
            symbols,
            perplexity: math::exp2(bits / symbols as f64),
        }
    }
}

// ---- skip-type bi-gram ----

/// Per-instrument 2x2 transition tables conditioning tatum m on tatum m-16.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    pi: [[[f64; 2]; 2]; NUM_INSTRUMENTS],
}

impl BigramLm {
    /// Chance-rate model: every transition probability 0.5.
    pub fn uniform() -> Self {
        BigramLm {
            pi: [[[0.5; 2]; 2]; NUM_INSTRUMENTS],
        }
    }

    pub fn from_tables(pi: [[[f64; 2]; 2]; NUM_INSTRUMENTS]) -> Result<Self, LmError> {
        for table in &pi {
            for row in table {
                if row.iter().any(|&p| p <= 0.0 || p >= 1.0) {
                    return Err(LmError::BadTable);
                }
                if math::abs(row[0] + row[1] - 1.0) > 1e-6 {
                    return Err(LmError::BadTable);
                }
            }
        }
        Ok(BigramLm { pi })
    }

    pub fn tables(&self) -> &[[[f64; 2]; 2]; NUM_INSTRUMENTS] {
        &self.pi
    }

    pub fn probability(&self, instrument: usize, from: u8, to: u8) -> f64 {
        self.pi[instrument][from as usize][to as usize]
    }

    /// Add-one-smoothed per-instrument transition counts over every tatum
    /// that has a predecessor one bar earlier. Scores shorter than one bar
    /// plus one tatum contribute nothing.
    pub fn train(corpus: &[DrumScore]) -> Result<Self, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut counts = [[[0u64; 2]; 2]; NUM_INSTRUMENTS];
        let mut total = 0u64;
        for score in corpus {
            let m = score.num_tatums();
            if m <= BAR_SKIP {
                continue;
            }
            for k in 0..NUM_INSTRUMENTS {
                let row = score.row(k);
                for t in BAR_SKIP..m {
                    counts[k][row[t - BAR_SKIP] as usize][row[t] as usize] += 1;
                    total += 1;
                }
            }
        }
        if total == 0 {
            return Err(LmError::InsufficientData);
        }
        let mut pi = [[[0.0; 2]; 2]; NUM_INSTRUMENTS];
        for k in 0..NUM_INSTRUMENTS {
            for a in 0..2 {
                let row_total = counts[k][a][0] + counts[k][a][1];
                for b in 0..2 {
                    pi[k][a][b] = (counts[k][a][b] + 1) as f64 / (row_total + 2) as f64;
                }
            }
        }
        Ok(BigramLm { pi })
    }

    /// Teacher-forced NLL over tatums 17..M (the first bar has no
    /// predecessor and is excluded); perplexity is per binary symbol.
    pub fn nll(&self, score: &DrumScore) -> Result<LmScore, LmError> {
        let m = score.num_tatums();
        if m <= BAR_SKIP {
            return Err(LmError::ScoreTooShort {
                num_tatums: m,
                needed: BAR_SKIP + 1,
            });
        }
        let mut nll = 0.0;
        for k in 0..NUM_INSTRUMENTS {
            let row = score.row(k);
            for t in BAR_SKIP..m {
                nll -= math::ln(self.pi[k][row[t - BAR_SKIP] as usize][row[t] as usize]);
            }
        }
        Ok(LmScore::from_nats(nll, NUM_INSTRUMENTS * (m - BAR_SKIP)))
    }

    /// Differentiable NLL for real-valued scores `y` in [0,1]^{K x M}: the
    /// discrete transition is relaxed bilinearly,
    /// p = sum_{a,b} w_a(y_{m-16}) w_b(y_m) pi_{a,b} with w_1(y) = y and
    /// w_0(y) = 1 - y, which reduces to the exact table lookup at binary y.
    pub fn nll_var(&self, tape: &mut Tape, y: Var) -> Result<Var, LmError> {
        let shape = tape.shape(y).to_vec();
        if shape.len() != 2 || shape[0] != NUM_INSTRUMENTS {
            return Err(LmError::Tensor(TensorError::ShapeMismatch {
                op: "bigram_nll",
                axis: "instrument rows",
                expected: NUM_INSTRUMENTS,
                got: if shape.is_empty() { 0 } else { shape[0] },
            }));
        }
        let m = shape[1];
        if m <= BAR_SKIP {
            return Err(LmError::ScoreTooShort {
                num_tatums: m,
                needed: BAR_SKIP + 1,
            });
        }
        check_domain(tape.data(y))?;
        let w = m - BAR_SKIP;
        let from = tape.slice_cols(y, 0, w)?;
        let to = tape.slice_cols(y, BAR_SKIP, m)?;
        let from_bar = tape.one_minus(from);
        let to_bar = tape.one_minus(to);

        // Constant coefficient matrices, one value per instrument row.
        let coeff = |tape: &mut Tape, a: usize, b: usize| -> Result<Var, TensorError> {
            let mut data = Vec::with_capacity(NUM_INSTRUMENTS * w);
            for k in 0..NUM_INSTRUMENTS {
                data.extend(core::iter::repeat(self.pi[k][a][b]).take(w));
            }
            tape.constant(vec![NUM_INSTRUMENTS, w], data)
        };
        let p00 = coeff(tape, 0, 0)?;
        let p01 = coeff(tape, 0, 1)?;
        let p10 = coeff(tape, 1, 0)?;
        let p11 = coeff(tape, 1, 1)?;

        let mut acc: Option<Var> = None;
        for (pa, fa, ta) in [
            (p00, from_bar, to_bar),
            (p01, from_bar, to),
            (p10, from, to_bar),
            (p11, from, to),
        ] {
            let ft = tape.mul(fa, ta)?;
            let term = tape.mul(pa, ft)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => tape.add(prev, term)?,
            });
        }
        let p = acc.expect("four terms");
        let safe = tape.clamp(p, PROB_EPS, 1.0);
        let logs = tape.ln(safe);
        let total = tape.sum(logs);
        Ok(tape.neg(total))
    }
}

// ---- GRU language model ----

/// Stacked-GRU language model emitting per-instrument onset probabilities
/// for the next tatum. Parameters are stored under the "lm." prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLm {
    params: ParamSet,
    num_layers: usize,
    hidden: usize,
}

pub const LM_PREFIX: &str = "lm";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruLmConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
}

impl Default for GruLmConfig {
    fn default() -> Self {
        GruLmConfig {
            num_layers: 3,
            hidden: 64,
            epochs: 30,
            seed: 0,
            optim: AdamWConfig::default(),
        }
    }
}

impl GruLm {
    fn layer_prefix(i: usize) -> String {
        format!("{LM_PREFIX}.gru{i}")
    }

    fn fc_weight() -> String {
        format!("{LM_PREFIX}.fc.weight")
    }

    fn fc_bias() -> String {
        format!("{LM_PREFIX}.fc.bias")
    }

    /// He-initialized GRU weights, Uniform(0,1) output layer, zero biases.
    pub fn init(num_layers: usize, hidden: usize, seed: u64) -> Self {
        let mut rand = crate::rng::seeded(seed);
        let mut params = ParamSet::new();
        for i in 0..num_layers {
            let input = if i == 0 { NUM_INSTRUMENTS } else { hidden };
            nn::init_gru_layer(&mut params, &Self::layer_prefix(i), input, hidden, &mut rand);
        }
        params.insert(
            Self::fc_weight(),
            nn::uniform01(vec![hidden, NUM_INSTRUMENTS], &mut rand),
        );
        params.insert(Self::fc_bias(), nn::zeros_param(vec![NUM_INSTRUMENTS]));
        GruLm {
            params,
            num_layers,
            hidden,
        }
    }

    /// All-zero weights: predicts 0.5 everywhere (the chance-rate model).
    pub fn zeroed(num_layers: usize, hidden: usize) -> Self {
        let mut params = ParamSet::new();
        for i in 0..num_layers {
            let input = if i == 0 { NUM_INSTRUMENTS } else { hidden };
            nn::init_gru_layer_zeroed(&mut params, &Self::layer_prefix(i), input, hidden);
        }
        params.insert(
            Self::fc_weight(),
            nn::zeros_param(vec![hidden, NUM_INSTRUMENTS]),
        );
        params.insert(Self::fc_bias(), nn::zeros_param(vec![NUM_INSTRUMENTS]));
        GruLm {
            params,
            num_layers,
            hidden,
        }
    }

    /// Rebuilds the model from checkpoint parameters, inferring layout.
    pub fn from_params(params: ParamSet) -> Result<Self, LmError> {
        let mut num_layers = 0;
        while params
            .get(&format!("{}.b_z", Self::layer_prefix(num_layers)))
            .is_some()
        {
            num_layers += 1;
        }
        if num_layers == 0 {
            return Err(LmError::Tensor(TensorError::MissingGrad {
                name: format!("{}.b_z", Self::layer_prefix(0)),
            }));
        }
        let hidden = params
            .get(&format!("{}.b_z", Self::layer_prefix(0)))
            .expect("checked above")
            .numel();
        params.get(&Self::fc_weight()).ok_or_else(|| {
            LmError::Tensor(TensorError::MissingGrad {
                name: Self::fc_weight(),
            })
        })?;
        Ok(GruLm {
            params,
            num_layers,
            hidden,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Teacher-forced probability/NLL graph over `y` in [0,1]^{K x M}: the
    /// input at step m is column m-1 (zeros at m = 1), the target is column
    /// m. Differentiable in `y`; with `trainable` the model weights also
    /// receive gradients, otherwise they enter frozen.
    pub fn nll_graph(
        &self,
        tape: &mut Tape,
        y: Var,
        trainable: bool,
    ) -> Result<(Var, TapedParams), LmError> {
        let shape = tape.shape(y).to_vec();
        if shape.len() != 2 || shape[0] != NUM_INSTRUMENTS {
            return Err(LmError::Tensor(TensorError::ShapeMismatch {
                op: "gru_lm_nll",
                axis: "instrument rows",
                expected: NUM_INSTRUMENTS,
                got: if shape.is_empty() { 0 } else { shape[0] },
            }));
        }
        check_domain(tape.data(y))?;
        let m = shape[1];
        let taped = TapedParams::load(tape, &self.params, trainable);

        let targets = tape.transpose(y)?; // [M, K]
        let zero_row = tape.constant(vec![NUM_INSTRUMENTS], vec![0.0; NUM_INSTRUMENTS])?;
        let mut rows = Vec::with_capacity(m);
        rows.push(zero_row);
        for step in 0..m - 1 {
            rows.push(tape.select_row(targets, step)?);
        }
        let inputs = tape.stack_rows(&rows)?; // [M, K]

        let mut h = inputs;
        for i in 0..self.num_layers {
            let g = taped.gru_vars(&Self::layer_prefix(i))?;
            let h0 = tape.constant(vec![self.hidden], vec![0.0; self.hidden])?;
            h = nn::gru_layer(tape, h, &g, h0)?;
        }
        let w = taped.var(&Self::fc_weight())?;
        let b = taped.var(&Self::fc_bias())?;
        let logits = tape.matmul(h, w)?;
        let logits = tape.add_row_bias(logits, b)?;
        let probs = tape.sigmoid(logits);
        let safe = tape.clamp(probs, PROB_EPS, 1.0 - PROB_EPS);

        // Binary cross entropy against the (possibly soft) targets.
        let log_p = tape.ln(safe);
        let one_minus = tape.one_minus(safe);
        let log_q = tape.ln(one_minus);
        let t_bar = tape.one_minus(targets);
        let pos = tape.mul(targets, log_p)?;
        let neg = tape.mul(t_bar, log_q)?;
        let both = tape.add(pos, neg)?;
        let total = tape.sum(both);
        Ok((tape.neg(total), taped))
    }

    /// Differentiable NLL with frozen weights (regularizer path).
    pub fn nll_var(&self, tape: &mut Tape, y: Var) -> Result<Var, LmError> {
        Ok(self.nll_graph(tape, y, false)?.0)
    }

    /// NLL of real-valued cells in [0,1], K x M row-major.
    pub fn nll_values(&self, values: &[f64], num_tatums: usize) -> Result<LmScore, LmError> {
        let mut tape = Tape::new();
        let y = tape.constant(vec![NUM_INSTRUMENTS, num_tatums], values.to_vec())?;
        let nll = self.nll_var(&mut tape, y)?;
        Ok(LmScore::from_nats(
            tape.data(nll)[0],
            NUM_INSTRUMENTS * num_tatums,
        ))
    }

    pub fn nll(&self, score: &DrumScore) -> Result<LmScore, LmError> {
        self.nll_values(&score.as_f64(), score.num_tatums())
    }
}

/// Trains a GRU language model by teacher forcing with one AdamW step per
/// score per epoch. Returns the model and the mean per-score training NLL
/// of each epoch. Zero epochs returns the bare initialization.
pub fn train_gru_lm(corpus: &[DrumScore], cfg: &GruLmConfig) -> Result<(GruLm, Vec<f64>), LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut model = GruLm::init(cfg.num_layers, cfg.hidden, cfg.seed);
    let mut opt = AdamW::new(cfg.optim);
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for score in corpus {
            let mut tape = Tape::new();
            let y = tape.constant(
                vec![NUM_INSTRUMENTS, score.num_tatums()],
                score.as_f64(),
            )?;
            let (nll, taped) = model.nll_graph(&mut tape, y, true)?;
            total += tape.data(nll)[0];
            tape.backward(nll)?;
            taped.apply_grads(&tape, &mut model.params);
            opt.step(&mut model.params)?;
            model.params.clear_grads();
        }
        epoch_nll.push(total / corpus.len() as f64);
    }
    Ok((model, epoch_nll))
}

/// A pretrained language model used as the training regularizer.
#[derive(Debug, Clone, PartialEq)]
pub enum LanguageModel {
    Bigram(BigramLm),
    Gru(GruLm),
}

impl LanguageModel {
    pub fn nll_var(&self, tape: &mut Tape, y: Var) -> Result<Var, LmError> {
        match self {
            LanguageModel::Bigram(m) => m.nll_var(tape, y),
            LanguageModel::Gru(m) => m.nll_var(tape, y),
        }
    }

    pub fn nll(&self, score: &DrumScore) -> Result<LmScore, LmError> {
        match self {
            LanguageModel::Bigram(m) => m.nll(score),
            LanguageModel::Gru(m) => m.nll(score),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LanguageModel::Bigram(_) => "bigram",
            LanguageModel::Gru(_) => "gru",
        }
    }
}

fn check_domain(values: &[f64]) -> Result<(), LmError> {
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(LmError::Domain { value: v });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Instrument;
    use crate::tensor::Tensor;
    use crate::testutil::{assert_grad_matches, finite_diff};
    use rand::Rng;

    fn periodic_score(bars: usize, pattern: &[[u8; BAR_SKIP]; NUM_INSTRUMENTS]) -> DrumScore {
        let m = bars * BAR_SKIP;
        let mut score = DrumScore::empty(m);
        for k in 0..NUM_INSTRUMENTS {
            for t in 0..m {
                score.set(k, t, pattern[k][t % BAR_SKIP] != 0);
            }
        }
        score
    }

    fn rock_pattern() -> [[u8; BAR_SKIP]; NUM_INSTRUMENTS] {
        [
            [1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
            [1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0],
        ]
    }

    fn random_score(m: usize, density: f64, seed: u64) -> DrumScore {
        let mut rng = crate::rng::seeded(seed);
        let mut score = DrumScore::empty(m);
        for k in 0..NUM_INSTRUMENTS {
            for t in 0..m {
                score.set(k, t, rng.gen::<f64>() < density);
            }
        }
        score
    }

    #[test]
    fn uniform_model_scores_chance_perplexity_exactly_two() {
        let model = BigramLm::uniform();
        let score = random_score(48, 0.4, 1);
        let s = model.nll(&score).unwrap();
        assert!((s.perplexity - 2.0).abs() < 1e-9, "{}", s.perplexity);
        assert_eq!(s.symbols, 3 * 32);
    }

    #[test]
    fn near_deterministic_repeater_approaches_perplexity_one() {
        let eps = 1e-6;
        let table = [[1.0 - eps, eps], [eps, 1.0 - eps]];
        let model = BigramLm::from_tables([table, table, table]).unwrap();
        let score = periodic_score(4, &rock_pattern());
        let s = model.nll(&score).unwrap();
        assert!(s.perplexity < 1.0001, "{}", s.perplexity);
        assert!(s.perplexity >= 1.0);
    }

    #[test]
    fn hand_summed_nll_matches_on_a_fixed_score() {
        let pi = [
            [[0.9, 0.1], [0.3, 0.7]],
            [[0.8, 0.2], [0.4, 0.6]],
            [[0.6, 0.4], [0.25, 0.75]],
        ];
        let model = BigramLm::from_tables(pi).unwrap();
        let score = random_score(32, 0.5, 9);
        let s = model.nll(&score).unwrap();
        let mut expect = 0.0;
        for k in 0..NUM_INSTRUMENTS {
            let row = score.row(k);
            for t in BAR_SKIP..32 {
                expect -= (pi[k][row[t - BAR_SKIP] as usize][row[t] as usize]).ln();
            }
        }
        assert!((s.nll_nats - expect).abs() < 1e-12);
    }

    #[test]
    fn training_on_all_zero_score_gives_seventeen_eighteenths() {
        // One all-zero score of 32 tatums: 16 zero-to-zero transitions per
        // instrument, add-one smoothed to (16+1)/(16+2) per instrument.
        let corpus = [DrumScore::empty(32)];
        let model = BigramLm::train(&corpus).unwrap();
        for k in 0..NUM_INSTRUMENTS {
            assert!((model.probability(k, 0, 0) - 17.0 / 18.0).abs() < 1e-12);
            assert!((model.probability(k, 0, 1) - 1.0 / 18.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_on_bar_periodic_corpus_learns_repetition() {
        let corpus: Vec<DrumScore> = (0..4).map(|_| periodic_score(8, &rock_pattern())).collect();
        let model = BigramLm::train(&corpus).unwrap();
        for k in 0..NUM_INSTRUMENTS {
            assert!(model.probability(k, 0, 0) > 0.98);
            assert!(model.probability(k, 1, 1) > 0.9);
            assert!(model.probability(k, 0, 1) < 0.02);
        }
    }

    #[test]
    fn training_on_fair_coin_corpus_approaches_half() {
        let corpus: Vec<DrumScore> = (0..20).map(|i| random_score(512, 0.5, 100 + i)).collect();
        let model = BigramLm::train(&corpus).unwrap();
        for k in 0..NUM_INSTRUMENTS {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    let p = model.probability(k, a, b);
                    assert!((p - 0.5).abs() < 0.05, "pi[{k}][{a}][{b}] = {p}");
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one_after_training() {
        let corpus: Vec<DrumScore> = (0..5).map(|i| random_score(64, 0.3, 40 + i)).collect();
        let model = BigramLm::train(&corpus).unwrap();
        for k in 0..NUM_INSTRUMENTS {
            for a in 0..2u8 {
                let sum = model.probability(k, a, 0) + model.probability(k, a, 1);
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn short_scores_are_rejected() {
        let corpus = [DrumScore::empty(16)];
        assert_eq!(BigramLm::train(&corpus), Err(LmError::InsufficientData));
        let model = BigramLm::uniform();
        assert!(matches!(
            model.nll(&DrumScore::empty(16)),
            Err(LmError::ScoreTooShort { .. })
        ));
    }

    #[test]
    fn relaxed_nll_equals_discrete_nll_at_binary_inputs() {
        let corpus: Vec<DrumScore> = (0..3).map(|i| random_score(48, 0.3, 7 + i)).collect();
        let model = BigramLm::train(&corpus).unwrap();
        let score = random_score(40, 0.4, 77);
        let discrete = model.nll(&score).unwrap().nll_nats;
        let mut tape = Tape::new();
        let y = tape
            .constant(vec![NUM_INSTRUMENTS, 40], score.as_f64())
            .unwrap();
        let nll = model.nll_var(&mut tape, y).unwrap();
        assert!((tape.data(nll)[0] - discrete).abs() < 1e-9);
    }

    #[test]
    fn relaxed_nll_gradient_matches_finite_differences() {
        let corpus: Vec<DrumScore> = (0..3).map(|i| random_score(64, 0.35, 50 + i)).collect();
        let model = BigramLm::train(&corpus).unwrap();
        let mut rng = crate::rng::seeded(5);
        let m = 20;
        let y0: Vec<f64> = (0..NUM_INSTRUMENTS * m)
            .map(|_| rng.gen::<f64>() * 0.8 + 0.1)
            .collect();
        let eval = |ys: &[f64]| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let yt = Tensor::param(vec![NUM_INSTRUMENTS, m], ys.to_vec()).unwrap();
            let y = tape.leaf(&yt);
            let nll = model.nll_var(&mut tape, y).unwrap();
            let lv = tape.data(nll)[0];
            tape.backward(nll).unwrap();
            (lv, tape.grad(y).map(|g| g.to_vec()))
        };
        let (_, grad) = eval(&y0);
        let numeric = finite_diff(&mut |ys| eval(ys).0, &y0, 1e-5);
        assert_grad_matches(&grad.unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn zeroed_gru_lm_is_the_chance_rate_model() {
        let model = GruLm::zeroed(2, 8);
        let score = random_score(24, 0.4, 3);
        let s = model.nll(&score).unwrap();
        assert!((s.perplexity - 2.0).abs() < 1e-9, "{}", s.perplexity);
        let expect = (NUM_INSTRUMENTS * 24) as f64 * core::f64::consts::LN_2;
        assert!((s.nll_nats - expect).abs() < 1e-9);
    }

    #[test]
    fn gru_lm_nll_matches_scalar_unrolled_oracle() {
        let model = GruLm::init(2, 5, 21);
        let score = random_score(20, 0.4, 33);
        let got = model.nll(&score).unwrap().nll_nats;

        // Independent scalar reimplementation of the teacher-forced stack.
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let p = |name: &str| model.params().get(name).unwrap().data();
        let matvec = |m: &[f64], v: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            (0..rows)
                .map(|i| (0..cols).map(|j| m[i * cols + j] * v[j]).sum())
                .collect()
        };
        let hidden = model.hidden();
        let mut h = vec![vec![0.0; hidden]; model.num_layers()];
        let mut expect = 0.0;
        let mt = score.num_tatums();
        for step in 0..mt {
            let x0: Vec<f64> = if step == 0 {
                vec![0.0; NUM_INSTRUMENTS]
            } else {
                (0..NUM_INSTRUMENTS)
                    .map(|k| score.get(k, step - 1) as u8 as f64)
                    .collect()
            };
            let mut x = x0;
            for (layer, hstate) in h.iter_mut().enumerate() {
                let pre = format!("lm.gru{layer}");
                let d_in = x.len();
                let zx = matvec(p(&format!("{pre}.w_z")), &x, hidden, d_in);
                let zh = matvec(p(&format!("{pre}.u_z")), hstate, hidden, hidden);
                let rx = matvec(p(&format!("{pre}.w_r")), &x, hidden, d_in);
                let rh = matvec(p(&format!("{pre}.u_r")), hstate, hidden, hidden);
                let bz = p(&format!("{pre}.b_z"));
                let br = p(&format!("{pre}.b_r"));
                let bc = p(&format!("{pre}.b_c"));
                let z: Vec<f64> = (0..hidden).map(|i| sigmoid(zx[i] + zh[i] + bz[i])).collect();
                let r: Vec<f64> = (0..hidden).map(|i| sigmoid(rx[i] + rh[i] + br[i])).collect();
                let gated: Vec<f64> = (0..hidden).map(|i| r[i] * hstate[i]).collect();
                let cx = matvec(p(&format!("{pre}.w_c")), &x, hidden, d_in);
                let ch = matvec(p(&format!("{pre}.u_c")), &gated, hidden, hidden);
                let c: Vec<f64> = (0..hidden)
                    .map(|i| (cx[i] + ch[i] + bc[i]).tanh())
                    .collect();
                let new: Vec<f64> = (0..hidden)
                    .map(|i| (1.0 - z[i]) * c[i] + z[i] * hstate[i])
                    .collect();
                *hstate = new.clone();
                x = new;
            }
            let w = p("lm.fc.weight");
            let b = p("lm.fc.bias");
            for k in 0..NUM_INSTRUMENTS {
                let logit: f64 = (0..hidden).map(|i| x[i] * w[i * NUM_INSTRUMENTS + k]).sum::<f64>()
                    + b[k];
                let prob = sigmoid(logit).clamp(PROB_EPS, 1.0 - PROB_EPS);
                let y = score.get(k, step) as u8 as f64;
                expect -= y * prob.ln() + (1.0 - y) * (1.0 - prob).ln();
            }
        }
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn gru_lm_gradient_wrt_inputs_matches_finite_differences() {
        let model = GruLm::init(1, 4, 8);
        let m = 6;
        let mut rng = crate::rng::seeded(14);
        let y0: Vec<f64> = (0..NUM_INSTRUMENTS * m)
            .map(|_| rng.gen::<f64>() * 0.8 + 0.1)
            .collect();
        let eval = |ys: &[f64]| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let yt = Tensor::param(vec![NUM_INSTRUMENTS, m], ys.to_vec()).unwrap();
            let y = tape.leaf(&yt);
            let nll = model.nll_var(&mut tape, y).unwrap();
            let lv = tape.data(nll)[0];
            tape.backward(nll).unwrap();
            (lv, tape.grad(y).map(|g| g.to_vec()))
        };
        let (_, grad) = eval(&y0);
        let numeric = finite_diff(&mut |ys| eval(ys).0, &y0, 1e-5);
        assert_grad_matches(&grad.unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn values_outside_unit_interval_are_a_domain_error() {
        let model = GruLm::zeroed(1, 4);
        let bad = vec![0.5, 1.2, 0.0, 0.3, 0.4, 0.5];
        assert!(matches!(
            model.nll_values(&bad, 2),
            Err(LmError::Domain { .. })
        ));
    }

    #[test]
    fn zero_epochs_returns_the_initialization_bit_for_bit() {
        let corpus = vec![periodic_score(2, &rock_pattern())];
        let cfg = GruLmConfig {
            num_layers: 2,
            hidden: 6,
            epochs: 0,
            seed: 123,
            ..GruLmConfig::default()
        };
        let (trained, log) = train_gru_lm(&corpus, &cfg).unwrap();
        assert!(log.is_empty());
        let init = GruLm::init(2, 6, 123);
        assert_eq!(trained.params(), init.params());
    }

    #[test]
    fn training_loss_trends_downward() {
        let corpus: Vec<DrumScore> = (0..8).map(|_| periodic_score(4, &rock_pattern())).collect();
        let cfg = GruLmConfig {
            num_layers: 2,
            hidden: 16,
            epochs: 10,
            seed: 5,
            ..GruLmConfig::default()
        };
        let (_, log) = train_gru_lm(&corpus, &cfg).unwrap();
        assert_eq!(log.len(), 10);
        assert!(log[9] < log[0], "no improvement: {log:?}");
        for pair in log.windows(2) {
            assert!(pair[1] <= pair[0] * 1.05, "uptick beyond 5%: {log:?}");
        }
    }

    #[test]
    fn trained_gru_beats_trained_bigram_on_a_repeated_pattern() {
        let corpus: Vec<DrumScore> = (0..4).map(|_| periodic_score(8, &rock_pattern())).collect();
        let bigram = BigramLm::train(&corpus).unwrap();
        let cfg = GruLmConfig {
            num_layers: 2,
            hidden: 32,
            epochs: 400,
            seed: 11,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
        };
        let (gru, _) = train_gru_lm(&corpus, &cfg).unwrap();
        let b = bigram.nll(&corpus[0]).unwrap().nll_nats;
        let g = gru.nll(&corpus[0]).unwrap().nll_nats;
        assert!(g < b, "gru {g} >= bigram {b}");
    }

    #[test]
    fn annotation_instruments_are_usable_as_indices() {
        // Smoke check tying Instrument to score rows.
        let mut score = DrumScore::empty(20);
        score.set(Instrument::HiHat.index(), 3, true);
        assert!(score.get(2, 3));
    }
}
