//! The transcription network: a frame-level convolutional encoder, max
//! pooling onto the tatum grid, and a tatum-level GRU decoder emitting
//! per-instrument onset probabilities. The frame-level comparison network
//! shares the encoder but decodes every frame instead of pooling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::RngCore;

use crate::dsp::{MelSpectrogram, HOP_SECONDS, MEL_BANDS};
use crate::math;
use crate::nn::{self, TapedParams};
use crate::score::{DrumScore, TatumGrid, NUM_INSTRUMENTS};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamSet, TensorError};

/// Default binarization threshold for onset probabilities.
pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrnnError {
    /// Input spectrogram does not have the expected band count.
    BandMismatch { got: usize },
    /// No tatum time falls inside the spectrogram's frame range.
    GridOutsideFrames,
    Tensor(TensorError),
}

impl fmt::Display for CrnnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrnnError::BandMismatch { got } => {
                write!(f, "spectrogram has {got} bands, need {MEL_BANDS}")
            }
            CrnnError::GridOutsideFrames => {
                write!(f, "tatum grid lies entirely outside the frame range")
            }
            CrnnError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CrnnError {}

impl From<TensorError> for CrnnError {
    fn from(e: TensorError) -> Self {
        CrnnError::Tensor(e)
    }
}

/// Architecture of the convolutional-recurrent models.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriberConfig {
    /// Output channels of the four 3x3 convolution layers.
    pub conv_channels: Vec<usize>,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub dropout_p: f64,
}

impl Default for TranscriberConfig {
    fn default() -> Self {
        TranscriberConfig {
            conv_channels: vec![8, 8, 16, 16],
            decoder_layers: 3,
            decoder_hidden: 98,
            dropout_p: 0.3,
        }
    }
}

impl TranscriberConfig {
    /// Feature dimension after flattening the frequency axis.
    pub fn feature_dim(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(1) * MEL_BANDS
    }
}

/// Soft K x M onset posterior grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetProbabilities {
    values: Vec<f64>,
    num_tatums: usize,
}

impl OnsetProbabilities {
    pub fn from_values(values: Vec<f64>, num_tatums: usize) -> Self {
        debug_assert_eq!(values.len(), NUM_INSTRUMENTS * num_tatums);
        OnsetProbabilities { values, num_tatums }
    }

    pub fn num_tatums(&self) -> usize {
        self.num_tatums
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, instrument: usize, tatum: usize) -> f64 {
        self.values[instrument * self.num_tatums + tatum]
    }

    /// Binarizes with an inclusive threshold: onset iff p >= threshold.
    pub fn to_score(&self, threshold: f64) -> DrumScore {
        let mut score = DrumScore::empty(self.num_tatums);
        for k in 0..NUM_INSTRUMENTS {
            for m in 0..self.num_tatums {
                score.set(k, m, self.at(k, m) >= threshold);
            }
        }
        score
    }
}

/// Pooling windows on the frame axis, one per tatum: interior boundaries sit
/// at the midpoints between adjacent tatum times, the first window starts at
/// frame 0 and the last ends at the final frame, so the windows partition
/// the whole frame range.
pub fn tatum_windows(grid: &TatumGrid, num_frames: usize) -> Result<Vec<(usize, usize)>, CrnnError> {
    let times = grid.times();
    let horizon = num_frames as f64 * HOP_SECONDS;
    if times.is_empty() || times[0] >= horizon || *times.last().expect("nonempty") < 0.0 {
        return Err(CrnnError::GridOutsideFrames);
    }
    let m = times.len();
    let mut bounds = Vec::with_capacity(m + 1);
    bounds.push(0usize);
    for i in 1..m {
        let mid = 0.5 * (times[i - 1] + times[i]);
        let frame = math::ceil(mid / HOP_SECONDS) as usize;
        bounds.push(frame.min(num_frames));
    }
    bounds.push(num_frames);
    Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
}

fn conv_names(prefix: &str, layer: usize) -> (String, String) {
    (
        format!("{prefix}.conv{layer}.weight"),
        format!("{prefix}.conv{layer}.bias"),
    )
}

fn gru_prefix(prefix: &str, layer: usize) -> String {
    format!("{prefix}.gru{layer}")
}

fn fc_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.fc.weight"), format!("{prefix}.fc.bias"))
}

/// He-initialized conv/GRU weights, Uniform(0,1) output layer, zero biases.
fn init_params(prefix: &str, cfg: &TranscriberConfig, seed: u64) -> ParamSet {
    let mut rand = crate::rng::seeded(seed);
    let mut params = ParamSet::new();
    let mut c_in = 1;
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        let (w, b) = conv_names(prefix, i);
        params.insert(w, nn::he_normal(vec![c_out, c_in, 3, 3], c_in * 9, &mut rand));
        params.insert(b, nn::zeros_param(vec![c_out]));
        c_in = c_out;
    }
    let mut d_in = cfg.feature_dim();
    for i in 0..cfg.decoder_layers {
        nn::init_gru_layer(&mut params, &gru_prefix(prefix, i), d_in, cfg.decoder_hidden, &mut rand);
        d_in = cfg.decoder_hidden;
    }
    let (fw, fb) = fc_names(prefix);
    params.insert(
        fw,
        nn::uniform01(vec![cfg.decoder_hidden, NUM_INSTRUMENTS], &mut rand),
    );
    params.insert(fb, nn::zeros_param(vec![NUM_INSTRUMENTS]));
    params
}

fn zeroed_params(prefix: &str, cfg: &TranscriberConfig) -> ParamSet {
    let mut params = ParamSet::new();
    let mut c_in = 1;
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        let (w, b) = conv_names(prefix, i);
        params.insert(w, nn::zeros_param(vec![c_out, c_in, 3, 3]));
        params.insert(b, nn::zeros_param(vec![c_out]));
        c_in = c_out;
    }
    let mut d_in = cfg.feature_dim();
    for i in 0..cfg.decoder_layers {
        nn::init_gru_layer_zeroed(&mut params, &gru_prefix(prefix, i), d_in, cfg.decoder_hidden);
        d_in = cfg.decoder_hidden;
    }
    let (fw, fb) = fc_names(prefix);
    params.insert(fw, nn::zeros_param(vec![cfg.decoder_hidden, NUM_INSTRUMENTS]));
    params.insert(fb, nn::zeros_param(vec![NUM_INSTRUMENTS]));
    params
}

/// Reads the architecture back out of a named parameter set.
fn infer_config(prefix: &str, params: &ParamSet, dropout_p: f64) -> Result<TranscriberConfig, CrnnError> {
    let mut conv_channels = Vec::new();
    loop {
        let (w, _) = conv_names(prefix, conv_channels.len());
        match params.get(&w) {
            Some(t) => conv_channels.push(t.shape()[0]),
            None => break,
        }
    }
    let mut decoder_layers = 0;
    let mut decoder_hidden = 0;
    loop {
        let name = format!("{}.b_z", gru_prefix(prefix, decoder_layers));
        match params.get(&name) {
            Some(t) => {
                decoder_hidden = t.numel();
                decoder_layers += 1;
            }
            None => break,
        }
    }
    if conv_channels.is_empty() || decoder_layers == 0 {
        return Err(CrnnError::Tensor(TensorError::MissingGrad {
            name: format!("{prefix}.conv0.weight"),
        }));
    }
    Ok(TranscriberConfig {
        conv_channels,
        decoder_layers,
        decoder_hidden,
        dropout_p,
    })
}

/// Mel input as a [1, 80, T] tape constant.
fn mel_leaf(tape: &mut Tape, mel: &MelSpectrogram) -> Result<Var, CrnnError> {
    let t = mel.num_frames();
    if mel.values().len() != MEL_BANDS * t {
        return Err(CrnnError::BandMismatch {
            got: mel.values().len() / t.max(1),
        });
    }
    Ok(tape.constant(vec![1, MEL_BANDS, t], mel.values().to_vec())?)
}

/// Four 3x3 same-padded conv + ReLU stages, then the frequency axis is
/// flattened into the feature axis: [1,80,T] -> [C_last*80, T].
fn conv_encoder(
    tape: &mut Tape,
    taped: &TapedParams,
    prefix: &str,
    cfg: &TranscriberConfig,
    mel_var: Var,
) -> Result<Var, CrnnError> {
    let t = tape.shape(mel_var)[2];
    let mut x = mel_var;
    for i in 0..cfg.conv_channels.len() {
        let (w, b) = conv_names(prefix, i);
        let wv = taped.var(&w)?;
        let bv = taped.var(&b)?;
        x = tape.conv2d(x, wv, bv, 1)?;
        x = tape.relu(x);
    }
    Ok(tape.reshape(x, vec![cfg.feature_dim(), t])?)
}

/// GRU stack over a [steps, D] sequence, dropout on the final hidden
/// sequence in training mode, then a sigmoid fully-connected head. Returns
/// [K, steps].
#[allow(clippy::too_many_arguments)]
fn gru_decoder<R: RngCore>(
    tape: &mut Tape,
    taped: &TapedParams,
    prefix: &str,
    cfg: &TranscriberConfig,
    features: Var,
    mode: Mode,
    rand: &mut R,
) -> Result<Var, CrnnError> {
    let mut seq = tape.transpose(features)?; // [steps, D]
    for i in 0..cfg.decoder_layers {
        let g = taped.gru_vars(&gru_prefix(prefix, i))?;
        let h0 = tape.constant(vec![cfg.decoder_hidden], vec![0.0; cfg.decoder_hidden])?;
        seq = nn::gru_layer(tape, seq, &g, h0)?;
    }
    if mode == Mode::Train {
        seq = nn::dropout(tape, seq, cfg.dropout_p, rand)?;
    }
    let (fw, fb) = fc_names(prefix);
    let w = taped.var(&fw)?;
    let b = taped.var(&fb)?;
    let logits = tape.matmul(seq, w)?;
    let logits = tape.add_row_bias(logits, b)?;
    let probs = tape.sigmoid(logits); // [steps, K]
    Ok(tape.transpose(probs)?)
}

/// Frame-to-tatum transcription model. Parameters live under "crnn.".
#[derive(Debug, Clone, PartialEq)]
pub struct Transcriber {
    cfg: TranscriberConfig,
    params: ParamSet,
}

pub const CRNN_PREFIX: &str = "crnn";

impl Transcriber {
    pub fn init(cfg: TranscriberConfig, seed: u64) -> Self {
        let params = init_params(CRNN_PREFIX, &cfg, seed);
        Transcriber { cfg, params }
    }

    pub fn zeroed(cfg: TranscriberConfig) -> Self {
        let params = zeroed_params(CRNN_PREFIX, &cfg);
        Transcriber { cfg, params }
    }

    pub fn from_params(params: ParamSet, dropout_p: f64) -> Result<Self, CrnnError> {
        let cfg = infer_config(CRNN_PREFIX, &params, dropout_p)?;
        Ok(Transcriber { cfg, params })
    }

    pub fn config(&self) -> &TranscriberConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Frame-level latent features [D, T].
    pub fn encode(
        &self,
        tape: &mut Tape,
        taped: &TapedParams,
        mel: &MelSpectrogram,
    ) -> Result<Var, CrnnError> {
        let x = mel_leaf(tape, mel)?;
        conv_encoder(tape, taped, CRNN_PREFIX, &self.cfg, x)
    }

    /// Max-pools frame features onto the tatum grid: [D, T] -> [D, M].
    pub fn tatum_pool(
        &self,
        tape: &mut Tape,
        features: Var,
        grid: &TatumGrid,
    ) -> Result<Var, CrnnError> {
        let t = tape.shape(features)[1];
        let windows = tatum_windows(grid, t)?;
        Ok(tape.window_max(features, &windows)?)
    }

    /// Tatum features [D, M] -> onset probabilities [K, M].
    pub fn decode<R: RngCore>(
        &self,
        tape: &mut Tape,
        taped: &TapedParams,
        pooled: Var,
        mode: Mode,
        rand: &mut R,
    ) -> Result<Var, CrnnError> {
        gru_decoder(tape, taped, CRNN_PREFIX, &self.cfg, pooled, mode, rand)
    }

    /// Full encode -> pool -> decode graph.
    pub fn forward<R: RngCore>(
        &self,
        tape: &mut Tape,
        mel: &MelSpectrogram,
        grid: &TatumGrid,
        mode: Mode,
        trainable: bool,
        rand: &mut R,
    ) -> Result<(Var, TapedParams), CrnnError> {
        let taped = TapedParams::load(tape, &self.params, trainable);
        let features = self.encode(tape, &taped, mel)?;
        let pooled = self.tatum_pool(tape, features, grid)?;
        let phi = self.decode(tape, &taped, pooled, mode, rand)?;
        Ok((phi, taped))
    }

    /// Inference-mode onset probabilities.
    pub fn probabilities(
        &self,
        mel: &MelSpectrogram,
        grid: &TatumGrid,
    ) -> Result<OnsetProbabilities, CrnnError> {
        let mut tape = Tape::new();
        let mut rand = crate::rng::seeded(0); // untouched in eval mode
        let (phi, _) = self.forward(&mut tape, mel, grid, Mode::Eval, false, &mut rand)?;
        Ok(OnsetProbabilities::from_values(
            tape.data(phi).to_vec(),
            grid.len(),
        ))
    }

    /// Probabilities plus the binarized score at `threshold`.
    pub fn transcribe(
        &self,
        mel: &MelSpectrogram,
        grid: &TatumGrid,
        threshold: f64,
    ) -> Result<(OnsetProbabilities, DrumScore), CrnnError> {
        let probs = self.probabilities(mel, grid)?;
        let score = probs.to_score(threshold);
        Ok((probs, score))
    }
}

/// Frame-to-frame comparison model: shared encoder, GRU decoder over every
/// frame, sigmoid activations per frame. Parameters live under "frame.".
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCrnn {
    cfg: TranscriberConfig,
    params: ParamSet,
}

pub const FRAME_PREFIX: &str = "frame";

impl FrameCrnn {
    pub fn init(cfg: TranscriberConfig, seed: u64) -> Self {
        let params = init_params(FRAME_PREFIX, &cfg, seed);
        FrameCrnn { cfg, params }
    }

    pub fn from_params(params: ParamSet, dropout_p: f64) -> Result<Self, CrnnError> {
        let cfg = infer_config(FRAME_PREFIX, &params, dropout_p)?;
        Ok(FrameCrnn { cfg, params })
    }

    pub fn config(&self) -> &TranscriberConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Frame activations graph [K, T].
    pub fn forward<R: RngCore>(
        &self,
        tape: &mut Tape,
        mel: &MelSpectrogram,
        mode: Mode,
        trainable: bool,
        rand: &mut R,
    ) -> Result<(Var, TapedParams), CrnnError> {
        let taped = TapedParams::load(tape, &self.params, trainable);
        let x = mel_leaf(tape, mel)?;
        let features = conv_encoder(tape, &taped, FRAME_PREFIX, &self.cfg, x)?;
        let acts = gru_decoder(tape, &taped, FRAME_PREFIX, &self.cfg, features, mode, rand)?;
        Ok((acts, taped))
    }

    /// Inference-mode activations as raw values, K x T row-major.
    pub fn activations(&self, mel: &MelSpectrogram) -> Result<Vec<f64>, CrnnError> {
        let mut tape = Tape::new();
        let mut rand = crate::rng::seeded(0);
        let (acts, _) = self.forward(&mut tape, mel, Mode::Eval, false, &mut rand)?;
        Ok(tape.data(acts).to_vec())
    }
}
