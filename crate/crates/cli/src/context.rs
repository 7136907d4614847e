//! Effective configuration, output directory and provenance.

use std::path::{Path, PathBuf};

use freqact::checkpoint::Checkpoint;
use freqact::config::{kv, RunConfig};
use freqact::fsutil::{read_to_string, write_atomic};
use freqact::{Error, Result};

use crate::Common;

pub const COMMIT: &str = env!("FREQACT_COMMIT");

/// Caps the worker pool when `FREQACT_THREADS` is set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FREQACT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("FREQACT_THREADS={v:?} is not a positive integer")))?;
    // a pool may already exist when called twice in one process; the first cap wins
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    command: &'static str,
}

fn overlay(config: &mut RunConfig, common: &Common) -> Result<()> {
    if let Some(path) = &common.config {
        let src = path.display().to_string();
        let text = read_to_string(path).map_err(|e| Error::Config(e.to_string()))?;
        let entries = kv::parse(&src, &text).map_err(|e| Error::Config(e.to_string()))?;
        for e in entries {
            config
                .set(&e.key, &e.value)
                .map_err(|err| Error::Config(format!("{src}:{}: {err}", e.line)))?;
        }
    }
    for o in &common.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        config.set("run.seed", &seed.to_string())?;
    }
    Ok(())
}

impl Context {
    /// Defaults, or the config embedded in `base`, overlaid with the file, `--set` and `--seed`.
    ///
    /// With a checkpoint base, settings that change the network are rejected.
    pub fn new(common: &Common, command: &'static str, base: Option<&Checkpoint>) -> Result<Self> {
        let mut config = match base {
            Some(ck) => ck.run_config()?,
            None => RunConfig::default(),
        };
        overlay(&mut config, common)?;
        config.validate()?;
        if let Some(ck) = base {
            if ck.run_config()?.policy()? != config.policy()? {
                return Err(Error::Config(
                    "policy, mask, diffusion, loss and frequency settings must match the checkpoint".into(),
                ));
            }
        }
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command));
        Ok(Self { config, out, command })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        write_atomic(&self.path(name), contents.as_ref())
    }

    /// Writes `config.txt` and `provenance.txt` into the output directory.
    pub fn write_provenance(&self, extra: &[(&str, String)]) -> Result<()> {
        self.write("config.txt", self.config.render())?;
        let mut entries = vec![
            ("command", self.command.to_string()),
            ("commit", COMMIT.to_string()),
            ("version", env!("CARGO_PKG_VERSION").to_string()),
            ("seed", self.config.seed().to_string()),
            ("args", std::env::args().collect::<Vec<_>>().join(" ")),
        ];
        entries.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
        self.write("provenance.txt", kv::render(entries))
    }

    /// `--data`, else `data.path`; `None` when neither names a directory.
    pub fn data_dir(&self, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| {
            let p = self.config.get("data.path");
            (!p.is_empty()).then(|| Path::new(p).to_path_buf())
        })
    }
}
