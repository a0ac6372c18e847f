//! Supervised training of the transcription models, with the language-model
//! naturalness regularizer: the weighted tatum cross entropy, the
//! gumbel-sigmoid differentiable sampler, their weighted sum, and the
//! per-song training loops.

use alloc::vec::Vec;
use core::fmt;
use rand::seq::SliceRandom;
use rand::RngCore;

use crate::baseline::{frame_loss, frames_to_tatums, peak_pick, FrameActivations, PeakPickConfig};
use crate::crnn::{CrnnError, FrameCrnn, Mode, OnsetProbabilities, Transcriber, TranscriberConfig};
use crate::dsp::MelSpectrogram;
use crate::eval::{micro_prf, tatum_prf};
use crate::lm::{LanguageModel, LmError};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng;
use crate::score::{score_to_frames, DrumScore, ScoreError, TatumGrid, NUM_INSTRUMENTS};
use crate::tape::{Tape, Var};
use crate::tensor::TensorError;

/// Probability floor inside every log term.
pub const CLAMP_EPS: f64 = 1e-7;

/// Which pretrained language model regularizes training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmKind {
    None,
    Bigram,
    Gru,
}

impl LmKind {
    pub fn name(self) -> &'static str {
        match self {
            LmKind::None => "none",
            LmKind::Bigram => "bigram",
            LmKind::Gru => "gru",
        }
    }
}

/// Training hyperparameters. The published defaults pair the onset weight
/// and regularizer weight with the language model kind: gamma 0.46 / alpha
/// 0.068 for the bi-gram, gamma 0.61 / alpha 0.055 for the GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Onset-class weight in the tatum cross entropy.
    pub gamma: f64,
    /// Regularizer weight.
    pub alpha: f64,
    /// Gumbel-sigmoid temperature.
    pub tau: f64,
    /// Binarization threshold used when scoring F during training.
    pub threshold: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
    /// Feed logit(phi) instead of phi into the sampler numerator. Off by
    /// default: the sampler consumes the probability as printed.
    pub logit_sampler_input: bool,
    /// Stop once the training F reaches this value.
    pub target_train_f: Option<f64>,
}

impl TrainConfig {
    pub fn for_lm_kind(kind: LmKind) -> Self {
        let (gamma, alpha) = match kind {
            LmKind::None => (0.5, 0.0),
            LmKind::Bigram => (0.46, 0.068),
            LmKind::Gru => (0.61, 0.055),
        };
        TrainConfig {
            gamma,
            alpha,
            tau: 0.2,
            threshold: 0.2,
            epochs: 100,
            seed: 0,
            optim: AdamWConfig::default(),
            logit_sampler_input: false,
            target_train_f: None,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_lm_kind(LmKind::None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyDataset,
    /// Grid and score of one dataset item disagree on the tatum count.
    ItemMismatch {
        index: usize,
        grid_tatums: usize,
        score_tatums: usize,
    },
    /// alpha > 0 requires a language model.
    RegularizerMissing,
    Lm(LmError),
    Crnn(CrnnError),
    Tensor(TensorError),
    Score(ScoreError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyDataset => write!(f, "training set is empty"),
            TrainError::ItemMismatch {
                index,
                grid_tatums,
                score_tatums,
            } => write!(
                f,
                "item {index}: grid has {grid_tatums} tatums but score has {score_tatums}"
            ),
            TrainError::RegularizerMissing => {
                write!(f, "alpha > 0 but no language model was provided")
            }
            TrainError::Lm(e) => write!(f, "{e}"),
            TrainError::Crnn(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Score(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<LmError> for TrainError {
    fn from(e: LmError) -> Self {
        TrainError::Lm(e)
    }
}

impl From<CrnnError> for TrainError {
    fn from(e: CrnnError) -> Self {
        TrainError::Crnn(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<ScoreError> for TrainError {
    fn from(e: ScoreError) -> Self {
        TrainError::Score(e)
    }
}

/// Weighted binary cross entropy of probabilities against binary targets:
/// -sum(pos_weight * t * log p + (1 - t) * log(1 - p)), probabilities
/// clamped away from 0 and 1.
pub fn weighted_bce(
    tape: &mut Tape,
    probs: Var,
    targets: &[u8],
    pos_weight: f64,
) -> Result<Var, TensorError> {
    let shape = tape.shape(probs).to_vec();
    let numel: usize = shape.iter().product();
    if numel != targets.len() {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_bce",
            axis: "target length",
            expected: numel,
            got: targets.len(),
        });
    }
    let safe = tape.clamp(probs, CLAMP_EPS, 1.0 - CLAMP_EPS);
    let log_p = tape.ln(safe);
    let flipped = tape.one_minus(safe);
    let log_q = tape.ln(flipped);
    let w_pos: Vec<f64> = targets
        .iter()
        .map(|&t| if t != 0 { pos_weight } else { 0.0 })
        .collect();
    let w_neg: Vec<f64> = targets
        .iter()
        .map(|&t| if t != 0 { 0.0 } else { 1.0 })
        .collect();
    let w_pos = tape.constant(shape.clone(), w_pos)?;
    let w_neg = tape.constant(shape, w_neg)?;
    let pos = tape.mul(w_pos, log_p)?;
    let neg = tape.mul(w_neg, log_q)?;
    let total = tape.add(pos, neg)?;
    let s = tape.sum(total);
    Ok(tape.neg(s))
}

/// Tatum-level transcription loss: cross entropy of the onset posterior
/// against the ground-truth score, onsets weighted by gamma.
pub fn loss_tran(
    tape: &mut Tape,
    phi: Var,
    truth: &DrumScore,
    gamma: f64,
) -> Result<Var, TrainError> {
    let shape = tape.shape(phi).to_vec();
    if shape != [NUM_INSTRUMENTS, truth.num_tatums()] {
        return Err(TrainError::Tensor(TensorError::ShapeMismatch {
            op: "loss_tran",
            axis: "tatum count",
            expected: truth.num_tatums(),
            got: if shape.len() == 2 { shape[1] } else { 0 },
        }));
    }
    let mut targets = Vec::with_capacity(NUM_INSTRUMENTS * truth.num_tatums());
    for k in 0..NUM_INSTRUMENTS {
        targets.extend_from_slice(truth.row(k));
    }
    Ok(weighted_bce(tape, phi, &targets, gamma)?)
}

/// Gumbel-sigmoid sampler: y = sigmoid((phi + V1 - V2) / tau) with
/// V = -log(-log U), U ~ Uniform(0,1). The noise enters as constants, so
/// gradients reach phi through the sigmoid path only.
pub fn gumbel_sigmoid<R: RngCore>(
    tape: &mut Tape,
    phi: Var,
    tau: f64,
    rand: &mut R,
    logit_input: bool,
) -> Result<Var, TensorError> {
    let shape = tape.shape(phi).to_vec();
    let numel: usize = shape.iter().product();
    let noise: Vec<f64> = (0..numel)
        .map(|_| {
            let v1 = -crate::math::ln(-crate::math::ln(rng::uniform_open(rand)));
            let v2 = -crate::math::ln(-crate::math::ln(rng::uniform_open(rand)));
            v1 - v2
        })
        .collect();
    let noise = tape.constant(shape, noise)?;
    let input = if logit_input {
        let safe = tape.clamp(phi, CLAMP_EPS, 1.0 - CLAMP_EPS);
        let lp = tape.ln(safe);
        let flipped = tape.one_minus(safe);
        let lq = tape.ln(flipped);
        tape.sub(lp, lq)?
    } else {
        phi
    };
    let shifted = tape.add(input, noise)?;
    let scaled = tape.affine(shifted, 1.0 / tau, 0.0);
    Ok(tape.sigmoid(scaled))
}

/// The pieces of one training loss evaluation.
pub struct LossParts {
    pub total: Var,
    pub l_tran: f64,
    pub l_lang: f64,
}

/// Total loss: the transcription cross entropy plus alpha times the
/// language-model NLL of a gumbel-sigmoid sample of phi. With alpha = 0 the
/// regularizer path is skipped entirely and no gumbel noise is consumed.
pub fn loss_total<R: RngCore>(
    tape: &mut Tape,
    phi: Var,
    truth: &DrumScore,
    lm: Option<&LanguageModel>,
    cfg: &TrainConfig,
    gumbel_rand: &mut R,
) -> Result<LossParts, TrainError> {
    let lt = loss_tran(tape, phi, truth, cfg.gamma)?;
    let l_tran = tape.data(lt)[0];
    if cfg.alpha == 0.0 {
        return Ok(LossParts {
            total: lt,
            l_tran,
            l_lang: 0.0,
        });
    }
    let lm = lm.ok_or(TrainError::RegularizerMissing)?;
    let sampled = gumbel_sigmoid(tape, phi, cfg.tau, gumbel_rand, cfg.logit_sampler_input)?;
    let ll = lm.nll_var(tape, sampled)?;
    let l_lang = tape.data(ll)[0];
    let weighted = tape.affine(ll, cfg.alpha, 0.0);
    let total = tape.add(lt, weighted)?;
    Ok(LossParts {
        total,
        l_tran,
        l_lang,
    })
}

/// One paired training example.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub mel: MelSpectrogram,
    pub grid: TatumGrid,
    pub score: DrumScore,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_tran: f64,
    pub l_lang: f64,
    pub l_total: f64,
    pub train_f: f64,
    pub val_f: Option<f64>,
}

fn validate(items: &[TrainItem]) -> Result<(), TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, item) in items.iter().enumerate() {
        if item.grid.len() != item.score.num_tatums() {
            return Err(TrainError::ItemMismatch {
                index,
                grid_tatums: item.grid.len(),
                score_tatums: item.score.num_tatums(),
            });
        }
    }
    Ok(())
}

fn micro_f(
    items: &[TrainItem],
    mut predict: impl FnMut(&TrainItem) -> Result<DrumScore, TrainError>,
) -> Result<f64, TrainError> {
    let mut counts = Vec::with_capacity(items.len());
    for item in items {
        let estimated = predict(item)?;
        let prf = tatum_prf(&estimated, &item.score).expect("grids validated");
        counts.push((
            prf.overall.n_estimated,
            prf.overall.n_ground_truth,
            prf.overall.n_correct,
        ));
    }
    Ok(micro_prf(counts).f_measure)
}

/// Trains the frame-to-tatum transcriber, one AdamW step per song. Data
/// order, dropout masks, and gumbel noise draw from independent streams of
/// `cfg.seed`, so disabling the regularizer does not shift the others.
pub fn train_transcriber(
    train_set: &[TrainItem],
    val_set: Option<&[TrainItem]>,
    lm: Option<&LanguageModel>,
    arch: &TranscriberConfig,
    cfg: &TrainConfig,
) -> Result<(Transcriber, Vec<EpochLog>), TrainError> {
    validate(train_set)?;
    if let Some(val) = val_set {
        validate(val)?;
    }
    if cfg.alpha > 0.0 && lm.is_none() {
        return Err(TrainError::RegularizerMissing);
    }
    let mut model = Transcriber::init(arch.clone(), cfg.seed);
    let mut opt = AdamW::new(cfg.optim);
    let mut data_rand = rng::stream(cfg.seed, 1);
    let mut dropout_rand = rng::stream(cfg.seed, 2);
    let mut gumbel_rand = rng::stream(cfg.seed, 3);

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut data_rand);
        let (mut sum_tran, mut sum_lang, mut sum_total) = (0.0, 0.0, 0.0);
        for &idx in &order {
            let item = &train_set[idx];
            let mut tape = Tape::new();
            let (phi, taped) = model.forward(
                &mut tape,
                &item.mel,
                &item.grid,
                Mode::Train,
                true,
                &mut dropout_rand,
            )?;
            let parts = loss_total(&mut tape, phi, &item.score, lm, cfg, &mut gumbel_rand)?;
            sum_tran += parts.l_tran;
            sum_lang += parts.l_lang;
            sum_total += tape.data(parts.total)[0];
            tape.backward(parts.total)?;
            taped.apply_grads(&tape, model.params_mut());
            opt.step(model.params_mut())?;
            model.params_mut().clear_grads();
        }
        let n = train_set.len() as f64;
        let predict = |item: &TrainItem| -> Result<DrumScore, TrainError> {
            Ok(model
                .transcribe(&item.mel, &item.grid, cfg.threshold)
                .map(|(_, score)| score)?)
        };
        let train_f = micro_f(train_set, predict)?;
        let val_f = match val_set {
            Some(val) => Some(micro_f(val, predict)?),
            None => None,
        };
        logs.push(EpochLog {
            epoch,
            l_tran: sum_tran / n,
            l_lang: sum_lang / n,
            l_total: sum_total / n,
            train_f,
            val_f,
        });
        if let Some(target) = cfg.target_train_f {
            if train_f >= target {
                break;
            }
        }
    }
    Ok((model, logs))
}

/// Trains the frame-level comparison model with the frame cross entropy
/// (onset frames weighted by `beta`); F during training comes from peak
/// picking and quantizing onto each item's grid.
pub fn train_baseline(
    train_set: &[TrainItem],
    val_set: Option<&[TrainItem]>,
    arch: &TranscriberConfig,
    cfg: &TrainConfig,
    beta: f64,
    peak: &PeakPickConfig,
) -> Result<(FrameCrnn, Vec<EpochLog>), TrainError> {
    validate(train_set)?;
    if let Some(val) = val_set {
        validate(val)?;
    }
    let mut model = FrameCrnn::init(arch.clone(), cfg.seed);
    let mut opt = AdamW::new(cfg.optim);
    let mut data_rand = rng::stream(cfg.seed, 1);
    let mut dropout_rand = rng::stream(cfg.seed, 2);

    // Frame-level targets are fixed; build them once.
    let targets: Vec<Vec<u8>> = train_set
        .iter()
        .map(|item| score_to_frames(&item.score, &item.grid, item.mel.num_frames()).0)
        .collect();

    let predict = |model: &FrameCrnn, item: &TrainItem| -> Result<DrumScore, TrainError> {
        let acts = model.activations(&item.mel)?;
        let acts = FrameActivations::from_values(acts, item.mel.num_frames());
        let picked = peak_pick(&acts, peak);
        Ok(frames_to_tatums(&picked, &item.grid)?)
    };

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut data_rand);
        let mut sum_loss = 0.0;
        for &idx in &order {
            let item = &train_set[idx];
            let mut tape = Tape::new();
            let (acts, taped) =
                model.forward(&mut tape, &item.mel, Mode::Train, true, &mut dropout_rand)?;
            let loss = frame_loss(&mut tape, acts, &targets[idx], beta)?;
            sum_loss += tape.data(loss)[0];
            tape.backward(loss)?;
            taped.apply_grads(&tape, model.params_mut());
            opt.step(model.params_mut())?;
            model.params_mut().clear_grads();
        }
        let n = train_set.len() as f64;
        let train_f = micro_f(train_set, |item| predict(&model, item))?;
        let val_f = match val_set {
            Some(val) => Some(micro_f(val, |item| predict(&model, item))?),
            None => None,
        };
        logs.push(EpochLog {
            epoch,
            l_tran: sum_loss / n,
            l_lang: 0.0,
            l_total: sum_loss / n,
            train_f,
            val_f,
        });
        if let Some(target) = cfg.target_train_f {
            if train_f >= target {
                break;
            }
        }
    }
    Ok((model, logs))
}

/// Convenience: inference-mode probabilities for a trained transcriber.
pub fn transcribe_item(
    model: &Transcriber,
    item: &TrainItem,
    threshold: f64,
) -> Result<(OnsetProbabilities, DrumScore), CrnnError> {
    model.transcribe(&item.mel, &item.grid, threshold)
}
