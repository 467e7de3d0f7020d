//! Output-directory bookkeeping: the run's config, per-stage records and
//! wall-clock timings.
//!
//! A stage record lists the config hash, a hash of the stage's inputs (the
//! config hash plus the output hashes of the stages it reads) and the SHA-256
//! of every file it wrote. With `--resume` a stage whose record is current
//! and whose files still match is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use echosyn_core::hash::short_hash;
use sha2::{Digest, Sha256};

use crate::config::ProtocolConfig;
use crate::error::{PipelineError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const STAGE_DIR: &str = "stages";
pub const TIMINGS_FILE: &str = "timings.csv";

/// The command that runs each stage.
pub fn command_for(stage: &str) -> &'static str {
    match stage {
        "data" => "synth-data",
        "encode" => "encode",
        "reid" => "train-reid",
        "calibrate" => "calibrate",
        "lidm" => "train-lidm",
        "lvdm" => "train-lvdm",
        "anchors" => "filter",
        "videos" => "generate",
        "metrics" => "metrics",
        "downstream" => "downstream",
        "report" => "protocol",
        _ => "protocol",
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    pub inputs_hash: String,
    /// Relative path and content hash of every output file.
    pub outputs: Vec<(String, String)>,
}

impl StageRecord {
    pub fn outputs_hash(&self) -> String {
        let mut s = String::new();
        for (p, h) in &self.outputs {
            s.push_str(p);
            s.push(' ');
            s.push_str(h);
            s.push('\n');
        }
        short_hash(s.as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "stage={}\nconfig_hash={}\ninputs_hash={}\noutputs_hash={}\n",
            self.stage,
            self.config_hash,
            self.inputs_hash,
            self.outputs_hash()
        );
        for (p, h) in &self.outputs {
            s.push_str(&format!("output={p} {h}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut kv = BTreeMap::new();
        let mut outputs = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed line `{line}`"))?;
            if k == "output" {
                let (p, h) = v.rsplit_once(' ').ok_or_else(|| format!("malformed output `{v}`"))?;
                outputs.push((p.to_string(), h.to_string()));
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| format!("missing `{k}`"));
        let rec = Self {
            stage: get("stage")?,
            config_hash: get("config_hash")?,
            inputs_hash: get("inputs_hash")?,
            outputs,
        };
        if get("outputs_hash")? != rec.outputs_hash() {
            return Err("outputs_hash does not match the listed outputs".into());
        }
        Ok(rec)
    }
}

pub enum StageOutcome {
    Ran,
    Skipped,
}

/// An output directory bound to one config.
pub struct Run {
    pub out: PathBuf,
    pub cfg: ProtocolConfig,
    pub hash: String,
    pub resume: bool,
    pub verbose: bool,
}

impl Run {
    /// Bind `out` to `cfg`, writing `config.toml` on first use. A directory
    /// produced under a different config is refused.
    pub fn open(out: &Path, cfg: ProtocolConfig, resume: bool) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        fs::create_dir_all(out.join(STAGE_DIR)).map_err(|e| PipelineError::Other(format!("{}: {e}", out.display())))?;
        let path = out.join(CONFIG_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
            let existing = ProtocolConfig::from_toml(&text)?;
            if existing.hash() != hash {
                return Err(PipelineError::Mismatch(format!(
                    "{} was produced under config {}, this run uses {hash}; use a fresh --out",
                    out.display(),
                    existing.hash()
                )));
            }
        } else {
            fs::write(&path, cfg.to_toml()).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
        }
        Ok(Self {
            out: out.to_path_buf(),
            cfg,
            hash,
            resume,
            verbose: true,
        })
    }

    /// Reopen a directory under the config it was produced with.
    pub fn existing(out: &Path, resume: bool) -> Result<Self> {
        let path = out.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
        Self::open(out, ProtocolConfig::from_toml(&text)?, resume)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn record_path(&self, stage: &str) -> PathBuf {
        self.out.join(STAGE_DIR).join(format!("{stage}.record"))
    }

    pub fn record(&self, stage: &str) -> Result<Option<StageRecord>> {
        let p = self.record_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| PipelineError::Other(format!("{}: {e}", p.display())))?;
        let rec = StageRecord::from_text(&text).map_err(|d| PipelineError::Mismatch(format!("{}: {d}", p.display())))?;
        if rec.config_hash != self.hash {
            return Err(PipelineError::Mismatch(format!(
                "stage `{stage}` was recorded under config {}, current config is {}",
                rec.config_hash, self.hash
            )));
        }
        Ok(Some(rec))
    }

    /// Record of a prerequisite stage, with its files checked.
    pub fn require(&self, stage: &'static str, needed_by: &'static str) -> Result<StageRecord> {
        let rec = self.record(stage)?.ok_or_else(|| PipelineError::MissingArtifact {
            stage: needed_by,
            detail: format!("needs the output of `{stage}`; run `echosyn {}` first", command_for(stage)),
        })?;
        self.verify(&rec)?;
        Ok(rec)
    }

    pub fn verify(&self, rec: &StageRecord) -> Result<()> {
        for (p, h) in &rec.outputs {
            let path = self.out.join(p);
            if !path.exists() {
                return Err(PipelineError::MissingArtifact {
                    stage: command_for(&rec.stage),
                    detail: format!("{} listed by stage `{}` is gone", path.display(), rec.stage),
                });
            }
            let found = file_hash(&path)?;
            if &found != h {
                return Err(PipelineError::Mismatch(format!(
                    "{} changed since stage `{}` wrote it ({h} -> {found})",
                    path.display(),
                    rec.stage
                )));
            }
        }
        Ok(())
    }

    pub fn inputs_hash(&self, stage: &str, deps: &[StageRecord]) -> String {
        let mut s = format!("{}\n{stage}\n", self.hash);
        for d in deps {
            s.push_str(&format!("{} {}\n", d.stage, d.outputs_hash()));
        }
        short_hash(s.as_bytes())
    }

    /// Run `body` for `stage` unless `--resume` finds it up to date. `body`
    /// returns the relative paths of the files it wrote.
    pub fn stage(&self, stage: &'static str, deps: &[&'static str], body: impl FnOnce(&Run) -> Result<Vec<String>>) -> Result<StageOutcome> {
        let dep_recs: Vec<StageRecord> = deps.iter().map(|d| self.require(d, stage)).collect::<Result<_>>()?;
        let inputs_hash = self.inputs_hash(stage, &dep_recs);
        if self.resume {
            if let Some(rec) = self.record(stage)? {
                if rec.inputs_hash == inputs_hash {
                    self.verify(&rec)?;
                    self.log(&format!("[{stage}] up to date, skipped"));
                    return Ok(StageOutcome::Skipped);
                }
            }
        }
        let _ = fs::remove_file(self.record_path(stage));
        self.log(&format!("[{stage}] running"));
        let t0 = Instant::now();
        let outputs = body(self).map_err(|e| PipelineError::Stage {
            stage,
            inputs_hash: inputs_hash.clone(),
            source: Box::new(e),
        })?;
        let secs = t0.elapsed().as_secs_f64();
        let outputs = outputs
            .into_iter()
            .map(|p| Ok((p.clone(), file_hash(&self.out.join(&p))?)))
            .collect::<Result<Vec<_>>>()?;
        let rec = StageRecord {
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            inputs_hash,
            outputs,
        };
        let rp = self.record_path(stage);
        fs::write(&rp, rec.to_text()).map_err(|e| PipelineError::Other(format!("{}: {e}", rp.display())))?;
        self.record_timing(stage, secs)?;
        self.log(&format!("[{stage}] done in {secs:.1}s"));
        Ok(StageOutcome::Ran)
    }

    /// Wall-clock seconds per stage, kept apart from the deterministic
    /// artifacts.
    pub fn timings(&self) -> BTreeMap<String, f64> {
        let text = fs::read_to_string(self.out.join(TIMINGS_FILE)).unwrap_or_default();
        text.lines()
            .skip(1)
            .filter_map(|l| l.split_once(','))
            .filter_map(|(k, v)| v.parse().ok().map(|v| (k.to_string(), v)))
            .collect()
    }

    fn record_timing(&self, stage: &str, secs: f64) -> Result<()> {
        let mut t = self.timings();
        t.insert(stage.to_string(), secs);
        let mut s = String::from("stage,seconds\n");
        for (k, v) in &t {
            s.push_str(&format!("{k},{v:.3}\n"));
        }
        let p = self.out.join(TIMINGS_FILE);
        fs::write(&p, s).map_err(|e| PipelineError::Other(format!("{}: {e}", p.display())))
    }

    pub fn has_records(&self) -> bool {
        fs::read_dir(self.out.join(STAGE_DIR)).map(|mut d| d.next().is_some()).unwrap_or(false)
    }

    pub fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }
}

pub fn write_text(run: &Run, rel: &str, text: &str) -> Result<String> {
    let p = run.path(rel);
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).map_err(|e| PipelineError::Other(format!("{}: {e}", d.display())))?;
    }
    fs::write(&p, text).map_err(|e| PipelineError::Other(format!("{}: {e}", p.display())))?;
    Ok(rel.to_string())
}

pub fn ensure_dir(run: &Run, rel: &str) -> Result<PathBuf> {
    let p = run.path(rel);
    fs::create_dir_all(&p).map_err(|e| PipelineError::Other(format!("{}: {e}", p.display())))?;
    Ok(p)
}
