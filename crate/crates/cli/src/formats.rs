//! File formats: WAV audio, beat and annotation text files, score and
//! model JSON, checkpoint containers, and the metrics/log CSVs. Everything
//! text-based is deterministic so fixed-seed pipelines produce
//! byte-identical outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use tatumscribe_core::checkpoint;
use tatumscribe_core::dsp::{AudioClip, SAMPLE_RATE};
use tatumscribe_core::eval::PrfResult;
use tatumscribe_core::lm::{BigramLm, GruLm, LanguageModel};
use tatumscribe_core::score::{TATUMS_PER_BEAT};
use tatumscribe_core::train::EpochLog;
use tatumscribe_core::{DrumScore, Instrument, OnsetAnnotation, ParamSet, NUM_INSTRUMENTS};

use crate::error::{validation, CliResult, Context};

// ---- WAV ----

/// Reads a WAV file into a mono 44.1 kHz clip. Stereo is averaged down;
/// 16-bit integer and 32-bit float encodings are accepted; any other sample
/// rate is rejected (no resampling).
pub fn read_wav(path: &Path) -> CliResult<AudioClip> {
    let mut reader =
        hound::WavReader::open(path).or_validation(&format!("cannot open {}", path.display()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(validation(anyhow!(
            "{}: sample rate {} Hz unsupported, need {} Hz",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(validation(anyhow!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .or_validation(&format!("{}: bad samples", path.display()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .or_validation(&format!("{}: bad samples", path.display()))?,
        (format, bits) => {
            return Err(validation(anyhow!(
                "{}: unsupported encoding {format:?}/{bits}-bit (need 16-bit PCM or 32-bit float)",
                path.display()
            )));
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, SAMPLE_RATE)
        .or_validation(&format!("{}: unusable audio", path.display()))
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> CliResult<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).or_runtime(&format!("cannot create {}", path.display()))?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(v)
            .or_runtime(&format!("cannot write {}", path.display()))?;
    }
    writer
        .finalize()
        .or_runtime(&format!("cannot finalize {}", path.display()))?;
    Ok(())
}

// ---- beat and annotation text ----

/// One beat time in seconds per line.
pub fn read_beats(path: &Path) -> CliResult<Vec<f64>> {
    let text =
        fs::read_to_string(path).or_validation(&format!("cannot read {}", path.display()))?;
    let mut beats = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let t: f64 = line.parse().map_err(|_| {
            validation(anyhow!(
                "{}:{}: not a number: {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        beats.push(t);
    }
    Ok(beats)
}

pub fn write_beats(path: &Path, beats: &[f64]) -> CliResult<()> {
    let mut out = String::new();
    for b in beats {
        out.push_str(&format!("{b:.9}\n"));
    }
    fs::write(path, out).or_runtime(&format!("cannot write {}", path.display()))
}

/// Lines of "<time_seconds>\t<instrument>" with instrument in {BD, SD, HH}.
pub fn read_annotation(path: &Path) -> CliResult<OnsetAnnotation> {
    let text =
        fs::read_to_string(path).or_validation(&format!("cannot read {}", path.display()))?;
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (time, label) = match (parts.next(), parts.next()) {
            (Some(t), Some(l)) => (t, l.trim()),
            _ => {
                return Err(validation(anyhow!(
                    "{}:{}: expected \"<time>\\t<instrument>\", got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            }
        };
        let t: f64 = time.trim().parse().map_err(|_| {
            validation(anyhow!(
                "{}:{}: not a time: {time:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let instrument = Instrument::from_label(label).ok_or_else(|| {
            validation(anyhow!(
                "{}:{}: unknown instrument {label:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        events.push((instrument, t));
    }
    OnsetAnnotation::new(events).or_validation(&format!("{}: bad onset times", path.display()))
}

pub fn write_annotation(path: &Path, annotation: &OnsetAnnotation) -> CliResult<()> {
    let mut out = String::new();
    for &(instrument, time) in annotation.events() {
        out.push_str(&format!("{time:.9}\t{}\n", instrument.label()));
    }
    fs::write(path, out).or_runtime(&format!("cannot write {}", path.display()))
}

// ---- score JSON ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreFile {
    instruments: Vec<String>,
    tatums_per_beat: usize,
    /// K rows of M cells, each 0 or 1.
    onsets: Vec<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tatum_times: Option<Vec<f64>>,
}

pub fn read_score(path: &Path) -> CliResult<(DrumScore, Option<Vec<f64>>)> {
    let text =
        fs::read_to_string(path).or_validation(&format!("cannot read {}", path.display()))?;
    let file: ScoreFile =
        serde_json::from_str(&text).or_validation(&format!("{} is malformed", path.display()))?;
    let expected: Vec<String> = Instrument::ALL.iter().map(|i| i.label().to_string()).collect();
    if file.instruments != expected {
        return Err(validation(anyhow!(
            "{}: instruments must be {expected:?}",
            path.display()
        )));
    }
    if file.tatums_per_beat != TATUMS_PER_BEAT {
        return Err(validation(anyhow!(
            "{}: tatums_per_beat must be {TATUMS_PER_BEAT}",
            path.display()
        )));
    }
    if file.onsets.iter().flatten().any(|&v| v > 1) {
        return Err(validation(anyhow!(
            "{}: onset cells must be 0 or 1",
            path.display()
        )));
    }
    let score = DrumScore::from_rows(&file.onsets).ok_or_else(|| {
        validation(anyhow!(
            "{}: onsets must be {NUM_INSTRUMENTS} equal-length nonempty rows",
            path.display()
        ))
    })?;
    if let Some(times) = &file.tatum_times {
        if times.len() != score.num_tatums() {
            return Err(validation(anyhow!(
                "{}: tatum_times length {} does not match {} tatums",
                path.display(),
                times.len(),
                score.num_tatums()
            )));
        }
    }
    Ok((score, file.tatum_times))
}

pub fn write_score(path: &Path, score: &DrumScore, tatum_times: Option<&[f64]>) -> CliResult<()> {
    let file = ScoreFile {
        instruments: Instrument::ALL.iter().map(|i| i.label().to_string()).collect(),
        tatums_per_beat: TATUMS_PER_BEAT,
        onsets: (0..NUM_INSTRUMENTS).map(|k| score.row(k).to_vec()).collect(),
        tatum_times: tatum_times.map(|t| t.to_vec()),
    };
    let text = serde_json::to_string_pretty(&file).expect("score serializes");
    fs::write(path, text).or_runtime(&format!("cannot write {}", path.display()))
}

// ---- bigram model JSON ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BigramFile {
    skip: usize,
    /// Per-instrument 2x2 transition tables, indexed [from][to].
    #[serde(rename = "BD")]
    bd: [[f64; 2]; 2],
    #[serde(rename = "SD")]
    sd: [[f64; 2]; 2],
    #[serde(rename = "HH")]
    hh: [[f64; 2]; 2],
}

pub fn read_bigram(path: &Path) -> CliResult<BigramLm> {
    let text =
        fs::read_to_string(path).or_validation(&format!("cannot read {}", path.display()))?;
    let file: BigramFile =
        serde_json::from_str(&text).or_validation(&format!("{} is malformed", path.display()))?;
    if file.skip != tatumscribe_core::lm::BAR_SKIP {
        return Err(validation(anyhow!(
            "{}: skip must be {}",
            path.display(),
            tatumscribe_core::lm::BAR_SKIP
        )));
    }
    BigramLm::from_tables([file.bd, file.sd, file.hh])
        .or_validation(&format!("{}: bad transition tables", path.display()))
}

pub fn write_bigram(path: &Path, model: &BigramLm) -> CliResult<()> {
    let t = model.tables();
    let file = BigramFile {
        skip: tatumscribe_core::lm::BAR_SKIP,
        bd: t[0],
        sd: t[1],
        hh: t[2],
    };
    let text = serde_json::to_string_pretty(&file).expect("bigram serializes");
    fs::write(path, text).or_runtime(&format!("cannot write {}", path.display()))
}

// ---- checkpoints ----

pub fn read_checkpoint(path: &Path) -> CliResult<ParamSet> {
    let bytes = fs::read(path).or_validation(&format!("cannot read {}", path.display()))?;
    checkpoint::decode(&bytes).or_validation(&format!("{} is not a valid checkpoint", path.display()))
}

pub fn write_checkpoint(path: &Path, params: &ParamSet) -> CliResult<()> {
    fs::write(path, checkpoint::encode(params))
        .or_runtime(&format!("cannot write {}", path.display()))
}

/// Loads a language model file, sniffing the kind: checkpoint magic means a
/// GRU model, otherwise the bigram JSON schema applies.
pub fn read_language_model(path: &Path) -> CliResult<LanguageModel> {
    let bytes = fs::read(path).or_validation(&format!("cannot read {}", path.display()))?;
    if bytes.starts_with(checkpoint::MAGIC) {
        let params = checkpoint::decode(&bytes)
            .or_validation(&format!("{} is not a valid checkpoint", path.display()))?;
        let gru = GruLm::from_params(params)
            .or_validation(&format!("{} is not a GRU language model", path.display()))?;
        Ok(LanguageModel::Gru(gru))
    } else {
        Ok(LanguageModel::Bigram(read_bigram(path)?))
    }
}

// ---- manifests ----

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestSong {
    pub id: String,
    pub wav: String,
    pub beats: String,
    pub annotation: String,
    pub score: String,
    /// "train", "val", or "test".
    pub split: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub songs: Vec<ManifestSong>,
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Manifest> {
        let text =
            fs::read_to_string(path).or_validation(&format!("cannot read {}", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .or_validation(&format!("{} is malformed", path.display()))?;
        for song in &manifest.songs {
            if !["train", "val", "test"].contains(&song.split.as_str()) {
                return Err(validation(anyhow!(
                    "{}: song {} has unknown split {:?}",
                    path.display(),
                    song.id,
                    song.split
                )));
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).or_runtime(&format!("cannot write {}", path.display()))
    }

    /// Songs of one split, sorted by id.
    pub fn split(&self, split: &str) -> Vec<&ManifestSong> {
        let mut songs: Vec<&ManifestSong> =
            self.songs.iter().filter(|s| s.split == split).collect();
        songs.sort_by(|a, b| a.id.cmp(&b.id));
        songs
    }
}

// ---- metrics CSV and summary JSON ----

pub const METRICS_HEADER: &str = "song,instrument,n_e,n_g,n_c,p,r,f";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub song: String,
    pub instrument: String,
    pub n_estimated: usize,
    pub n_ground_truth: usize,
    pub n_correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl MetricsRow {
    pub fn from_prf(song: &str, instrument: &str, prf: &PrfResult) -> Self {
        MetricsRow {
            song: song.to_string(),
            instrument: instrument.to_string(),
            n_estimated: prf.n_estimated,
            n_ground_truth: prf.n_ground_truth,
            n_correct: prf.n_correct,
            precision: prf.precision,
            recall: prf.recall,
            f_measure: prf.f_measure,
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.song,
            r.instrument,
            r.n_estimated,
            r.n_ground_truth,
            r.n_correct,
            r.precision,
            r.recall,
            r.f_measure
        ));
    }
    fs::write(path, out).or_runtime(&format!("cannot write {}", path.display()))
}

pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let text =
        fs::read_to_string(path).or_validation(&format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(validation(anyhow!(
                    "{}:1: expected header {METRICS_HEADER:?}",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(validation(anyhow!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse_count = |s: &str, what: &str| -> CliResult<usize> {
            s.trim().parse().map_err(|_| {
                validation(anyhow!(
                    "{}:{}: bad {what}: {s:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let parse_rate = |s: &str, what: &str| -> CliResult<f64> {
            s.trim().parse().map_err(|_| {
                validation(anyhow!(
                    "{}:{}: bad {what}: {s:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        rows.push(MetricsRow {
            song: fields[0].to_string(),
            instrument: fields[1].to_string(),
            n_estimated: parse_count(fields[2], "n_e")?,
            n_ground_truth: parse_count(fields[3], "n_g")?,
            n_correct: parse_count(fields[4], "n_c")?,
            precision: parse_rate(fields[5], "p")?,
            recall: parse_rate(fields[6], "r")?,
            f_measure: parse_rate(fields[7], "f")?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct SummaryEntry {
    pub n_e: usize,
    pub n_g: usize,
    pub n_c: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl From<&PrfResult> for SummaryEntry {
    fn from(p: &PrfResult) -> Self {
        SummaryEntry {
            n_e: p.n_estimated,
            n_g: p.n_ground_truth,
            n_c: p.n_correct,
            precision: p.precision,
            recall: p.recall,
            f_measure: p.f_measure,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CorpusSummary {
    pub n_songs: usize,
    /// Micro average over all songs and instruments.
    pub overall: SummaryEntry,
    #[serde(rename = "BD")]
    pub bd: SummaryEntry,
    #[serde(rename = "SD")]
    pub sd: SummaryEntry,
    #[serde(rename = "HH")]
    pub hh: SummaryEntry,
}

pub fn write_summary(path: &Path, summary: &CorpusSummary) -> CliResult<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(path, text).or_runtime(&format!("cannot write {}", path.display()))
}

// ---- training log CSV ----

pub fn write_train_log(path: &Path, logs: &[EpochLog]) -> CliResult<()> {
    let mut file =
        fs::File::create(path).or_runtime(&format!("cannot create {}", path.display()))?;
    let mut out = String::from("epoch,l_tran,l_lang,l_total,train_f,val_f\n");
    for log in logs {
        let val = match log.val_f {
            Some(v) => format!("{v:.6}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            log.epoch, log.l_tran, log.l_lang, log.l_total, log.train_f, val
        ));
    }
    file.write_all(out.as_bytes())
        .or_runtime(&format!("cannot write {}", path.display()))
}

// ---- misc ----

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).or_runtime(&format!("cannot create directory {}", path.display()))
}

/// Score JSON files in a directory, sorted by name.
pub fn list_score_files(dir: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    let entries =
        fs::read_dir(dir).or_validation(&format!("cannot list {}", dir.display()))?;
    let mut paths: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".score.json") || n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(validation(anyhow!(
            "{} holds no score JSON files",
            dir.display()
        )));
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tatumscribe_core::synth::{render, sample_score, PatternTemplate, RenderSpec};

    #[test]
    fn wav_roundtrip_preserves_samples_to_16_bit_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.wav");
        let score = sample_score(&PatternTemplate::rock(2), 1);
        let song = render(&score, &RenderSpec::default()).unwrap();
        write_wav(&path, &song.clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples().len(), song.clip.samples().len());
        for (a, b) in back.samples().iter().zip(song.clip.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn score_json_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.score.json");
        let score = sample_score(
            &PatternTemplate {
                variation_rate: 0.3,
                ..PatternTemplate::rock(2)
            },
            5,
        );
        let times: Vec<f64> = (0..score.num_tatums()).map(|m| m as f64 * 0.125).collect();
        write_score(&path, &score, Some(&times)).unwrap();
        let (back, back_times) = read_score(&path).unwrap();
        assert_eq!(back, score);
        assert_eq!(back_times.unwrap(), times);
    }

    #[test]
    fn beats_and_annotation_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let beats_path = dir.path().join("beats.txt");
        let ann_path = dir.path().join("ann.txt");
        let beats = vec![0.0, 0.5, 1.0, 1.5];
        write_beats(&beats_path, &beats).unwrap();
        assert_eq!(read_beats(&beats_path).unwrap(), beats);

        let ann = OnsetAnnotation::new(vec![
            (Instrument::BassDrum, 0.0),
            (Instrument::HiHat, 0.25),
            (Instrument::SnareDrum, 0.5),
        ])
        .unwrap();
        write_annotation(&ann_path, &ann).unwrap();
        assert_eq!(read_annotation(&ann_path).unwrap(), ann);
    }

    #[test]
    fn malformed_inputs_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "0.5\nnot-a-number\n").unwrap();
        let err = read_beats(&path).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains(":2"));

        std::fs::write(&path, "0.5\tXX\n").unwrap();
        assert!(read_annotation(&path).is_err());
    }

    #[test]
    fn bigram_json_roundtrips_and_sniffs_as_bigram() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bigram.json");
        let model = BigramLm::uniform();
        write_bigram(&path, &model).unwrap();
        let back = read_bigram(&path).unwrap();
        assert_eq!(back.tables(), model.tables());
        match read_language_model(&path).unwrap() {
            LanguageModel::Bigram(_) => {}
            other => panic!("sniffed {other:?}"),
        }
    }

    #[test]
    fn checkpoint_file_sniffs_as_gru() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.tscb");
        let model = GruLm::zeroed(2, 4);
        write_checkpoint(&path, model.params()).unwrap();
        match read_language_model(&path).unwrap() {
            LanguageModel::Gru(m) => {
                assert_eq!(m.num_layers(), 2);
                assert_eq!(m.hidden(), 4);
            }
            other => panic!("sniffed {other:?}"),
        }
    }

    #[test]
    fn metrics_csv_roundtrips_and_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow::from_prf("s000", "ALL", &PrfResult::from_counts(4, 2, 2)),
            MetricsRow::from_prf("s001", "BD", &PrfResult::from_counts(3, 3, 3)),
        ];
        write_metrics_csv(&path, &rows).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].n_estimated, 4);
        assert!((back[0].f_measure - 2.0 / 3.0).abs() < 1e-6);

        std::fs::write(&path, format!("{METRICS_HEADER}\ns0,ALL,1,2\n")).unwrap();
        let err = read_metrics_csv(&path).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }
}
