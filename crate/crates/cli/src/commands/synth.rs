//! `synth`: generate a paired synthetic corpus with a manifest.

use std::path::Path;

use crate::config::RunConfig;
use crate::dataset::{generate_songs, write_dataset};
use crate::error::CliResult;
use crate::formats::ensure_dir;

pub fn run(cfg: &RunConfig, seed: u64, out: &Path) -> CliResult<()> {
    ensure_dir(out)?;
    let songs = generate_songs(&cfg.synth, seed)?;
    let manifest = write_dataset(out, &songs, seed)?;
    cfg.dump_effective(out)?;
    let train = manifest.split("train").len();
    let val = manifest.split("val").len();
    let test = manifest.split("test").len();
    println!(
        "wrote {} songs ({train} train / {val} val / {test} test) to {}",
        manifest.songs.len(),
        out.display()
    );
    Ok(())
}
