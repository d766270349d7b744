//! Command implementations behind the `adaptor` binary.
//!
//! Every command is deterministic given its inputs and seed. Output
//! directories are append-only: a rerun that would overwrite an existing
//! artifact fails unless `--force` is passed. Setting
//! `ADAPTOR_DETERMINISTIC=1` zeroes wall-clock fields so logs compare
//! bitwise across runs.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adaptor_core::data::{gen_synthetic, EmbeddingCache, Split};
use adaptor_core::eval::{evaluate, ProbeConfig};
use adaptor_core::trainer::{init_state, train_until, TrainConfig, TrainState};

use crate::adpc;
use crate::adpk;
use crate::error::{CliError, Result};
use crate::fsutil;
use crate::runconfig::{
    Manifest, ManifestSplit, MetricsLine, ReportFile, RunConfigFile, SynthSpecFile,
};

pub const TRAIN_CACHE: &str = "train.adpc";
pub const VAL_CACHE: &str = "val.adpc";
pub const TEST_CACHE: &str = "test.adpc";
pub const CHECKPOINT: &str = "checkpoint.adpk";
pub const METRICS: &str = "metrics.jsonl";
pub const CONFIG_ECHO: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";
pub const SPEC_ECHO: &str = "spec.json";
pub const REPORT: &str = "report.json";

/// `ADAPTOR_DETERMINISTIC=1` — deterministic mode: wall-clock readings are
/// reported as zero so repeated runs produce bitwise-identical logs.
pub fn deterministic_mode() -> bool {
    std::env::var("ADAPTOR_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}

fn crc32_of(bytes: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(bytes);
    h.finalize()
}

/// `synth --spec <json> --out <dir>`: generate a synthetic cache and write
/// train/val/test `ADPC` files (80/10/10) plus a manifest and a verbatim
/// spec echo.
pub fn cmd_synth(spec_path: &Path, out: &Path, force: bool) -> Result<()> {
    let text = fsutil::read_to_string(spec_path)?;
    let spec_file = SynthSpecFile::parse(&text, spec_path)?;
    let spec = spec_file.to_spec();
    let cache = gen_synthetic(&spec)?;
    let (train, val, test) = cache.partition(0.8, 0.1)?;

    let artifacts = [TRAIN_CACHE, VAL_CACHE, TEST_CACHE, MANIFEST, SPEC_ECHO];
    fsutil::claim_output_dir(out, &artifacts, force)?;

    let mut splits = Vec::new();
    for (split_cache, name) in [(&train, TRAIN_CACHE), (&val, VAL_CACHE), (&test, TEST_CACHE)] {
        let bytes = adpc::encode(split_cache);
        let crc = crc32_of(&bytes);
        fsutil::write_atomic(&out.join(name), &bytes)?;
        splits.push(ManifestSplit {
            split: split_cache.split().name().to_string(),
            file: name.to_string(),
            n_samples: split_cache.n_samples(),
            file_crc32: crc,
        });
    }
    let manifest = Manifest { spec: spec_file, splits };
    fsutil::write_atomic(&out.join(MANIFEST), crate::runconfig::to_pretty_json(&manifest).as_bytes())?;
    fsutil::write_atomic(&out.join(SPEC_ECHO), text.as_bytes())?;

    println!(
        "wrote {} ({} train / {} val / {} test samples)",
        out.display(),
        train.n_samples(),
        val.n_samples(),
        test.n_samples()
    );
    Ok(())
}

/// Resolves `--cache` for training: a directory must hold `train.adpc` and
/// may hold `val.adpc`; a file is the training cache itself, with a sibling
/// `val.adpc` picked up when present.
fn resolve_train_caches(cache: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if cache.is_dir() {
        let train = cache.join(TRAIN_CACHE);
        if !train.exists() {
            return Err(CliError::invalid(format!(
                "{} holds no {TRAIN_CACHE}",
                cache.display()
            )));
        }
        let val = cache.join(VAL_CACHE);
        return Ok((train, val.exists().then_some(val)));
    }
    let val = cache.parent().map(|d| d.join(VAL_CACHE)).filter(|v| v.exists() && v != cache);
    Ok((cache.to_path_buf(), val))
}

fn check_cache_dims(config: &TrainConfig, cache: &EmbeddingCache, what: &str) -> Result<()> {
    if cache.d_img() != config.adaptor.d_img || cache.d_txt() != config.adaptor.d_txt {
        return Err(CliError::invalid(format!(
            "{what} cache is {}×{} (image×text dims) but the config expects {}×{}",
            cache.d_img(),
            cache.d_txt(),
            config.adaptor.d_img,
            config.adaptor.d_txt
        )));
    }
    Ok(())
}

/// Two configs may only differ in the epoch target for a resume to be
/// meaningful; everything else changes the trajectory.
fn check_resume_compatible(file: &TrainConfig, checkpoint: &TrainConfig) -> Result<()> {
    let mut a = file.clone();
    let mut b = checkpoint.clone();
    a.epochs = 0;
    b.epochs = 0;
    if a != b {
        return Err(CliError::invalid(
            "resume checkpoint was written with a different configuration; \
             only the epoch target may change on resume",
        ));
    }
    Ok(())
}

/// `pretrain --config <json> --cache <path> --out <dir> [--resume <ckpt>]`:
/// train to the configured epoch target, appending one JSON line per epoch
/// to the metrics log and writing the final checkpoint plus a verbatim
/// config echo.
pub fn cmd_pretrain(
    config_path: &Path,
    cache_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    force: bool,
) -> Result<()> {
    let config_text = fsutil::read_to_string(config_path)?;
    let rcf = RunConfigFile::parse(&config_text, config_path)?;
    let config = rcf.to_train_config();
    config.validate()?;

    let (train_path, val_path) = resolve_train_caches(cache_path)?;
    let train_cache = adpc::read_cache(&train_path)?;
    let val_cache = val_path.as_deref().map(adpc::read_cache).transpose()?;
    check_cache_dims(&config, &train_cache, "training")?;
    if train_cache.split() != Split::Train {
        return Err(CliError::invalid(format!(
            "{} is tagged as the {} split, expected train",
            train_path.display(),
            train_cache.split().name()
        )));
    }
    if let Some(val) = &val_cache {
        check_cache_dims(&config, val, "validation")?;
    }

    let mut state: TrainState = match resume {
        None => init_state(&config)?,
        Some(ckpt_path) => {
            let (ckpt_config, state) = adpk::load_checkpoint(ckpt_path)?;
            check_resume_compatible(&config, &ckpt_config)?;
            state
        }
    };

    // A resume that continues the checkpoint living in the output directory
    // appends in place; anything else claims the directory fresh.
    let in_place = resume.is_some_and(|ckpt| {
        let target = out.join(CHECKPOINT);
        match (std::fs::canonicalize(ckpt), std::fs::canonicalize(&target)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    });
    if !in_place {
        fsutil::claim_output_dir(out, &[CHECKPOINT, METRICS, CONFIG_ECHO], force)?;
    }

    let metrics_path = out.join(METRICS);
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| CliError::io(&metrics_path, e))?;

    let deterministic = deterministic_mode();
    let mut last_tick = Instant::now();
    let mut write_error = None;
    let log = train_until(&config, &train_cache, val_cache.as_ref(), &mut state, config.epochs, |m| {
        let wall_ms = if deterministic { 0 } else { last_tick.elapsed().as_millis() as u64 };
        last_tick = Instant::now();
        let line = MetricsLine {
            epoch: m.epoch,
            step: m.step,
            loss: m.loss,
            l_i2t: m.l_i2t,
            l_t2i: m.l_t2i,
            tau: m.tau,
            wall_ms,
            val_loss: m.val_loss,
        };
        let mut encoded = serde_json::to_string(&line).expect("metrics line serializes infallibly");
        encoded.push('\n');
        if let Err(e) = metrics_file.write_all(encoded.as_bytes()).and_then(|_| metrics_file.flush())
        {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(CliError::io(&metrics_path, e));
    }

    adpk::save_checkpoint(&config, &state, &out.join(CHECKPOINT))?;
    fsutil::write_atomic(&out.join(CONFIG_ECHO), config_text.as_bytes())?;

    match log.last() {
        Some(m) => println!(
            "trained to epoch {} (step {}): loss {:.6}, tau {:.4}; checkpoint at {}",
            state.epoch,
            state.step,
            m.loss,
            m.tau,
            out.join(CHECKPOINT).display()
        ),
        None => println!(
            "checkpoint already at epoch {}; nothing to train; rewrote {}",
            state.epoch,
            out.join(CHECKPOINT).display()
        ),
    }
    Ok(())
}

/// Resolves `--cache` for evaluation: a directory must hold `train.adpc`
/// and `test.adpc` (probe trains on the former, every metric is measured on
/// the latter); a single file serves as both, which is a smoke-test mode —
/// the probe then trains on its own evaluation set.
fn resolve_eval_caches(cache: &Path) -> Result<(PathBuf, PathBuf)> {
    if cache.is_dir() {
        let train = cache.join(TRAIN_CACHE);
        let test = cache.join(TEST_CACHE);
        for p in [&train, &test] {
            if !p.exists() {
                return Err(CliError::invalid(format!(
                    "{} holds no {}",
                    cache.display(),
                    p.file_name().unwrap_or_default().to_string_lossy()
                )));
            }
        }
        return Ok((train, test));
    }
    Ok((cache.to_path_buf(), cache.to_path_buf()))
}

/// `eval --checkpoint <path> --cache <path>`: frozen-adaptor evaluation —
/// retrieval, linear probe, separability — printed as JSON and optionally
/// written to `report.json`.
pub fn cmd_eval(
    checkpoint: &Path,
    cache_path: &Path,
    probe: ProbeConfig,
    ks: &[usize],
    out: Option<&Path>,
    force: bool,
) -> Result<()> {
    let ckpt_bytes = std::fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let (config, state) =
        adpk::decode(&ckpt_bytes).map_err(|e| CliError::format(checkpoint, e))?;

    let (train_path, test_path) = resolve_eval_caches(cache_path)?;
    let train_cache = adpc::read_cache(&train_path)?;
    let test_cache = if test_path == train_path {
        train_cache.clone()
    } else {
        adpc::read_cache(&test_path)?
    };
    check_cache_dims(&config, &train_cache, "probe-training")?;
    check_cache_dims(&config, &test_cache, "evaluation")?;

    let report = evaluate(&state.params, &config.adaptor, &train_cache, &test_cache, ks, &probe)?;

    // Frozen-parameter audit: evaluation takes the parameters by shared
    // reference, and re-encoding the checkpoint must reproduce the loaded
    // bytes exactly.
    let frozen_verified = adpk::encode(&config, &state) == ckpt_bytes;

    let file = ReportFile::from_report(&report, frozen_verified);
    let json = crate::runconfig::to_pretty_json(&file);
    print!("{json}");
    if !frozen_verified {
        return Err(CliError::invalid("adaptor parameters changed during evaluation"));
    }
    if let Some(dir) = out {
        fsutil::claim_output_dir(dir, &[REPORT], force)?;
        fsutil::write_atomic(&dir.join(REPORT), json.as_bytes())?;
    }
    Ok(())
}

/// `inspect --path <file>`: print header fields, counts, and checksum
/// status; a failed checksum is reported and exits with code 2.
pub fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() < 4 {
        return Err(CliError::invalid(format!(
            "{}: {} bytes is too short to hold a format magic",
            path.display(),
            bytes.len()
        )));
    }
    match [bytes[0], bytes[1], bytes[2], bytes[3]] {
        m if m == adpc::MAGIC => {
            let info = adpc::inspect_bytes(&bytes).map_err(|e| CliError::format(path, e))?;
            println!("format:      ADPC embedding cache v{}", adpc::VERSION);
            println!("split:       {}", info.split.name());
            println!("n_samples:   {}", info.n_samples);
            println!("d_img:       {} ({} token(s))", info.d_img, info.tokens_img);
            println!("d_txt:       {} ({} token(s))", info.d_txt, info.tokens_txt);
            println!("labels:      {}", if info.has_labels { "yes" } else { "no" });
            println!("payload:     {} bytes", info.payload_bytes);
            println!(
                "checksum:    {} (stored {:#010x}, computed {:#010x})",
                if info.checksum_ok() { "OK" } else { "FAIL" },
                info.stored_crc,
                info.computed_crc
            );
            if !info.checksum_ok() {
                return Err(CliError::invalid("payload checksum FAIL"));
            }
        }
        m if m == adpk::MAGIC => {
            let info = adpk::inspect_bytes(&bytes).map_err(|e| CliError::format(path, e))?;
            let a = &info.config.adaptor;
            println!("format:      ADPK checkpoint v{}", adpk::VERSION);
            println!(
                "adaptor:     d_img {} -> d_shared {} <- d_txt {}, {} layer(s), {} head(s), ffn {}",
                a.d_img, a.d_shared, a.d_txt, a.n_layers, a.n_heads, a.d_ffn
            );
            println!(
                "flags:       normalize_outputs={}, share_branch_weights={}",
                a.normalize_outputs, a.share_branch_weights
            );
            println!(
                "training:    alpha {}, lr {}, batch {}, epoch target {}, seed {}",
                info.config.alpha,
                info.config.lr,
                info.config.batch_size,
                info.config.epochs,
                info.config.seed
            );
            println!("progress:    epoch {}, step {}", info.epoch, info.step);
            println!("param_count: {}", a.param_count());
            println!("stored:      {} parameter scalars (+ 2 Adam moments each)", info.stored_params);
            println!(
                "checksum:    {} (stored {:#010x}, computed {:#010x})",
                if info.checksum_ok() { "OK" } else { "FAIL" },
                info.stored_crc,
                info.computed_crc
            );
            if !info.checksum_ok() {
                return Err(CliError::invalid("body checksum FAIL"));
            }
        }
        other => {
            return Err(CliError::invalid(format!(
                "{}: unknown magic {:?}",
                path.display(),
                other
            )));
        }
    }
    Ok(())
}

/// `import --text <file> --out <cache.adpc> --split <name>`: convert a
/// plain-text dump of external encoder embeddings into an `ADPC` cache.
pub fn cmd_import(text_path: &Path, out: &Path, split: Split, force: bool) -> Result<()> {
    let text = fsutil::read_to_string(text_path)?;
    let cache = adpc::import_text(&text, split)?;
    if out.exists() && !force {
        return Err(CliError::invalid(format!(
            "{} already exists; outputs are append-only, rerun with --force to overwrite",
            out.display()
        )));
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    adpc::write_cache(&cache, out)?;
    println!(
        "imported {} samples ({}-dim image, {}-dim text) into {}",
        cache.n_samples(),
        cache.d_img(),
        cache.d_txt(),
        out.display()
    );
    Ok(())
}
