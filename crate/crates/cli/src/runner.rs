//! Run directories and the loop around the training engine: metrics
//! logging, evaluation cadence, sample sheets, checkpoints and resume.
//!
//! A run directory holds `config.snapshot` (the canonical TOML the run was
//! started from), `metrics.csv` (`step,name,value,seed`, one row per loss
//! component per step and per evaluation metric), numbered checkpoints and
//! sample sheets, and `summary.json` with the final evaluation. Directories
//! are never reused: a fresh run claims `<root>/<run_name>`, then `-2`,
//! `-3` and so on. Resume appends to the checkpoint's own directory when
//! its snapshot matches, so an interrupted-and-resumed run produces the
//! same files as an uninterrupted one.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;

use kd_dlgan_core::config::{DataFormat, TrainConfig};
use kd_dlgan_core::data::Dataset;
use kd_dlgan_core::engine::{dataset_from_config, override_class_names, EngineState};
use kd_dlgan_core::Mat;

use crate::checkpoint::{self, config_canonical_toml, config_hash_hex};
use crate::io::{read_image_folder, read_packed_binary, write_png_grid};
use crate::{Classify, CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.snapshot";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_HEADER: &str = "step,name,value,seed";
/// Samples per emitted sheet, tiled 8 wide.
pub const GRID_SAMPLES: usize = 64;
pub const GRID_COLS: usize = 8;

/// Environment variable overriding the output root (default `./runs`).
pub const RUN_DIR_ENV: &str = "KD_DLGAN_RUN_DIR";

#[derive(Debug, Default)]
pub struct RunOptions {
    pub resume: Option<PathBuf>,
    /// Stops cleanly after the given step completes, including its cadence
    /// work, simulating an interruption. Final artifacts are not written.
    pub stop_after: Option<u64>,
    /// Overrides both the environment variable and the default root.
    pub output_root: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub final_step: u64,
    pub interrupted: bool,
    /// Final evaluation rows; empty when interrupted.
    pub final_eval: BTreeMap<String, f64>,
}

/// Reads and parses a config file. Both the read and the parse are user
/// input problems, so they classify as validation errors.
pub fn load_config(path: &Path) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Validation(anyhow!("cannot read config file {}: {}", path.display(), e))
    })?;
    let cfg: TrainConfig = toml::from_str(&text).map_err(|e| {
        CliError::Validation(anyhow!(
            "config file {} does not parse: {}",
            path.display(),
            e
        ))
    })?;
    Ok(cfg)
}

fn output_root(opts: &RunOptions) -> PathBuf {
    if let Some(root) = &opts.output_root {
        return root.clone();
    }
    if let Some(v) = std::env::var_os(RUN_DIR_ENV) {
        return PathBuf::from(v);
    }
    PathBuf::from("runs")
}

/// Claims the first unused directory named `<name>`, `<name>-2`, ...
fn fresh_run_dir(root: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(root).map_err(|e| {
        CliError::Runtime(anyhow!(
            "cannot create output root {}: {}",
            root.display(),
            e
        ))
    })?;
    for i in 1..10_000u32 {
        let dir = if i == 1 {
            root.join(name)
        } else {
            root.join(format!("{}-{}", name, i))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(CliError::Runtime(anyhow!(
                    "cannot create run directory {}: {}",
                    dir.display(),
                    e
                )))
            }
        }
    }
    Err(CliError::runtime(format!(
        "too many run directories named {} under {}",
        name,
        root.display()
    )))
}

/// Builds the dataset a config describes, reading files where needed.
pub fn dataset_for_config(cfg: &TrainConfig) -> CliResult<(Dataset, Option<Mat>)> {
    match cfg.data.format {
        DataFormat::SyntheticModes => {
            dataset_from_config(cfg).or_validation("cannot build synthetic dataset")
        }
        DataFormat::ImageFolder => {
            let root =
                cfg.data.root.as_ref().ok_or_else(|| {
                    CliError::validation("data.root is required for image_folder")
                })?;
            let mut ds = read_image_folder(Path::new(root), cfg.model.channels)
                .or_validation("cannot load image folder")?;
            override_class_names(&mut ds, cfg).or_validation("bad data.class_names")?;
            Ok((ds, None))
        }
        DataFormat::PackedBinary => {
            let root =
                cfg.data.root.as_ref().ok_or_else(|| {
                    CliError::validation("data.root is required for packed_binary")
                })?;
            let mut ds =
                read_packed_binary(Path::new(root)).or_validation("cannot load packed dataset")?;
            override_class_names(&mut ds, cfg).or_validation("bad data.class_names")?;
            Ok((ds, None))
        }
    }
}

/// Dataset selector of the standalone evaluation command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSpec {
    Synthetic,
    ImageFolder(PathBuf),
    PackedBinary(PathBuf),
}

impl DataSpec {
    /// Accepts `synthetic`, `image_folder:PATH` or `packed_binary:PATH`.
    pub fn parse(s: &str) -> CliResult<DataSpec> {
        if s == "synthetic" {
            return Ok(DataSpec::Synthetic);
        }
        if let Some(path) = s.strip_prefix("image_folder:") {
            return Ok(DataSpec::ImageFolder(PathBuf::from(path)));
        }
        if let Some(path) = s.strip_prefix("packed_binary:") {
            return Ok(DataSpec::PackedBinary(PathBuf::from(path)));
        }
        Err(CliError::validation(format!(
            "data spec {:?} is not one of: synthetic, image_folder:PATH, packed_binary:PATH",
            s
        )))
    }
}

/// Append-only metrics writer. Every row is `step,name,value,seed` with the
/// shortest round-trip decimal for the value, so equal runs produce
/// byte-equal files.
pub struct MetricsLog {
    file: fs::File,
    seed: u64,
}

impl MetricsLog {
    pub fn create(path: &Path, seed: u64) -> CliResult<MetricsLog> {
        let mut file = fs::File::create(path)
            .map_err(|e| CliError::Runtime(anyhow!("cannot create {}: {}", path.display(), e)))?;
        writeln!(file, "{}", METRICS_HEADER)
            .map_err(|e| CliError::Runtime(anyhow!("cannot write {}: {}", path.display(), e)))?;
        Ok(MetricsLog { file, seed })
    }

    /// Opens for appending, writing the header only if the file is new.
    pub fn append(path: &Path, seed: u64) -> CliResult<MetricsLog> {
        let fresh = !path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::Runtime(anyhow!("cannot open {}: {}", path.display(), e)))?;
        if fresh {
            writeln!(file, "{}", METRICS_HEADER).map_err(|e| {
                CliError::Runtime(anyhow!("cannot write {}: {}", path.display(), e))
            })?;
        }
        Ok(MetricsLog { file, seed })
    }

    pub fn rows(&mut self, step: u64, rows: &BTreeMap<String, f64>) -> CliResult<()> {
        let mut buf = String::new();
        for (name, value) in rows {
            buf.push_str(&format!("{},{},{},{}\n", step, name, value, self.seed));
        }
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| CliError::Runtime(anyhow!("cannot append metrics: {}", e)))
    }
}

/// Appends evaluation rows to a run's metrics file, creating it if needed.
pub fn append_eval_rows(
    run_dir: &Path,
    step: u64,
    seed: u64,
    rows: &BTreeMap<String, f64>,
) -> CliResult<()> {
    let mut log = MetricsLog::append(&run_dir.join(METRICS_FILE), seed)?;
    log.rows(step, rows)
}

/// Trains per the config, producing a run directory. With `opts.resume`
/// the run continues from the checkpoint instead of initializing fresh.
pub fn run_experiment(config: TrainConfig, opts: &RunOptions) -> CliResult<RunOutcome> {
    match &opts.resume {
        Some(ckpt) => resume_run(config, ckpt, opts),
        None => fresh_run(config, opts),
    }
}

fn fresh_run(config: TrainConfig, opts: &RunOptions) -> CliResult<RunOutcome> {
    config.validate().or_validation("invalid config")?;
    let canonical = config_canonical_toml(&config).or_validation("config does not serialize")?;
    let (dataset, templates) = dataset_for_config(&config)?;
    let (state, warnings) =
        EngineState::new(config, dataset, templates).or_validation("cannot start run")?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    let root = output_root(opts);
    let dir = fresh_run_dir(&root, &state.config.run_name)?;
    fs::write(dir.join(CONFIG_SNAPSHOT_FILE), &canonical)
        .map_err(|e| CliError::Runtime(anyhow!("cannot write config snapshot: {}", e)))?;
    let log = MetricsLog::create(&dir.join(METRICS_FILE), state.config.master_seed)?;
    drive(state, dir, log, opts)
}

fn resume_run(config: TrainConfig, ckpt: &Path, opts: &RunOptions) -> CliResult<RunOutcome> {
    config.validate().or_validation("invalid config")?;
    let (meta, arrays) =
        checkpoint::load_checkpoint(ckpt).or_validation("cannot load checkpoint")?;
    let canonical = config_canonical_toml(&config).or_validation("config does not serialize")?;
    if config_hash_hex(&canonical) != meta.config_hash {
        return Err(CliError::validation(format!(
            "--config does not match the checkpoint's configuration \
             (hash {} vs stored {}); resume requires the original config",
            config_hash_hex(&canonical),
            meta.config_hash
        )));
    }
    if meta.step >= config.steps {
        return Err(CliError::validation(format!(
            "checkpoint is already at step {} of {}; nothing to resume",
            meta.step, config.steps
        )));
    }
    let (dataset, templates) = dataset_for_config(&config)?;
    let (state, warnings) =
        checkpoint::state_from_checkpoint(&meta, &arrays, config, dataset, templates)
            .or_validation("cannot rebuild run from checkpoint")?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }

    // Continue in the checkpoint's own directory when it is recognizably
    // the same run; a moved or copied checkpoint starts a fresh directory.
    let append_dir = ckpt.parent().filter(|p| {
        fs::read_to_string(p.join(CONFIG_SNAPSHOT_FILE))
            .map(|s| config_hash_hex(&s) == meta.config_hash)
            .unwrap_or(false)
    });
    let (dir, log) = match append_dir {
        Some(p) => {
            let dir = p.to_path_buf();
            let log = MetricsLog::append(&dir.join(METRICS_FILE), state.config.master_seed)?;
            (dir, log)
        }
        None => {
            let root = output_root(opts);
            let dir = fresh_run_dir(&root, &state.config.run_name)?;
            fs::write(dir.join(CONFIG_SNAPSHOT_FILE), &canonical)
                .map_err(|e| CliError::Runtime(anyhow!("cannot write config snapshot: {}", e)))?;
            let log = MetricsLog::create(&dir.join(METRICS_FILE), state.config.master_seed)?;
            (dir, log)
        }
    };
    drive(state, dir, log, opts)
}

fn evaluate_and_log(
    state: &mut EngineState,
    log: &mut MetricsLog,
) -> CliResult<BTreeMap<String, f64>> {
    let (rows, warnings) = state.evaluate().or_runtime("evaluation failed")?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    log.rows(state.step, &rows)?;
    let line: Vec<String> = rows.iter().map(|(k, v)| format!("{}={}", k, v)).collect();
    crate::say(format!("step {}: {}", state.step, line.join(" ")));
    Ok(rows)
}

fn write_grid(state: &mut EngineState, dir: &Path) -> CliResult<()> {
    let images = state
        .sample_grid_images(GRID_SAMPLES)
        .or_runtime("cannot sample grid")?;
    let path = dir.join(format!("grid_{:06}.png", state.step));
    write_png_grid(
        &path,
        &images,
        state.config.model.channels,
        state.config.model.image_size,
        GRID_COLS,
    )
    .or_runtime("cannot write sample grid")
}

fn save_ckpt(state: &EngineState, dir: &Path, name: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    checkpoint::save_checkpoint(&path, state).or_runtime("cannot write checkpoint")?;
    Ok(path)
}

fn drive(
    mut state: EngineState,
    dir: PathBuf,
    mut log: MetricsLog,
    opts: &RunOptions,
) -> CliResult<RunOutcome> {
    // A fresh run records its starting point; a resumed one already did.
    if state.step == 0 {
        evaluate_and_log(&mut state, &mut log)?;
        write_grid(&mut state, &dir)?;
    }

    let steps = state.config.steps;
    let mut interrupted = false;
    while state.step < steps {
        let (images, labels) = state.draw_real_batch();
        let metrics = match state.train_step(&images, &labels) {
            Ok(m) => m,
            Err(e) => {
                let name = format!("ckpt_failed_{:06}.kdck", state.step);
                let note = match save_ckpt(&state, &dir, &name) {
                    Ok(p) => format!("failure checkpoint written to {}", p.display()),
                    Err(se) => format!("failure checkpoint could not be written: {}", se),
                };
                return Err(CliError::Runtime(anyhow!(
                    "training aborted after step {}: {}; {}",
                    state.step,
                    e,
                    note
                )));
            }
        };
        log.rows(metrics.step, &metrics.components)?;

        let s = state.step;
        let last = s == steps;
        let c = &state.config;
        let (eval_every, grid_every, ckpt_every) =
            (c.eval_every, c.sample_grid_every, c.checkpoint_every);
        if !last && eval_every > 0 && s % eval_every == 0 {
            evaluate_and_log(&mut state, &mut log)?;
        }
        if !last && grid_every > 0 && s % grid_every == 0 {
            write_grid(&mut state, &dir)?;
        }
        if !last && ckpt_every > 0 && s % ckpt_every == 0 {
            save_ckpt(&state, &dir, &format!("ckpt_{:06}.kdck", s))?;
        }
        if opts.stop_after == Some(s) && !last {
            interrupted = true;
            break;
        }
    }

    let mut final_eval = BTreeMap::new();
    if !interrupted {
        final_eval = evaluate_and_log(&mut state, &mut log)?;
        write_grid(&mut state, &dir)?;
        save_ckpt(&state, &dir, &format!("ckpt_{:06}.kdck", steps))?;
        let summary = serde_json::json!({ "step": steps, "metrics": final_eval });
        fs::write(dir.join(SUMMARY_FILE), format!("{:#}\n", summary))
            .map_err(|e| CliError::Runtime(anyhow!("cannot write summary: {}", e)))?;
        crate::say(format!("run complete: {}", dir.display()));
    }
    Ok(RunOutcome {
        dir,
        final_step: state.step,
        interrupted,
        final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(name: &str) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.run_name = name.to_string();
        c.master_seed = 21;
        c.steps = 6;
        c.batch_size = 4;
        c.eval_every = 3;
        c.checkpoint_every = 3;
        c.sample_grid_every = 3;
        c.eval_samples = 8;
        c.eval_pairs = 8;
        c.model.image_size = 4;
        c.model.latent_dim = 4;
        c.model.hidden_dim = 8;
        c.model.feature_dim_f = 6;
        c.teacher.feature_dim = 4;
        c.teacher.hidden_dim = 8;
        c.data.num_modes = 2;
        c.data.samples_per_mode = 8;
        c
    }

    fn run_in(root: &Path, cfg: TrainConfig) -> RunOutcome {
        let opts = RunOptions {
            output_root: Some(root.to_path_buf()),
            ..Default::default()
        };
        run_experiment(cfg, &opts).unwrap()
    }

    #[test]
    fn fresh_run_writes_all_artifacts() {
        let root = tempfile::tempdir().unwrap();
        let outcome = run_in(root.path(), tiny_config("artifacts"));
        assert!(!outcome.interrupted);
        assert_eq!(outcome.final_step, 6);
        assert!(!outcome.final_eval.is_empty());
        for file in [
            CONFIG_SNAPSHOT_FILE,
            METRICS_FILE,
            SUMMARY_FILE,
            "grid_000000.png",
            "grid_000003.png",
            "grid_000006.png",
            "ckpt_000003.kdck",
            "ckpt_000006.kdck",
        ] {
            assert!(outcome.dir.join(file).exists(), "missing {}", file);
        }
        let csv = fs::read_to_string(outcome.dir.join(METRICS_FILE)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert!(csv.contains("0,teacher_fid,"), "step-0 evaluation row");
        assert!(csv.contains("6,teacher_fid,"), "final evaluation row");
        assert!(csv.contains("1,d_loss,"), "per-step component rows");
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 4, "malformed row {:?}", line);
            assert!(line.ends_with(",21"), "seed column on {:?}", line);
        }
    }

    #[test]
    fn identical_configs_reproduce_the_metrics_file() {
        let root_a = tempfile::tempdir().unwrap();
        let root_b = tempfile::tempdir().unwrap();
        let a = run_in(root_a.path(), tiny_config("repro"));
        let b = run_in(root_b.path(), tiny_config("repro"));
        let csv_a = fs::read(a.dir.join(METRICS_FILE)).unwrap();
        let csv_b = fs::read(b.dir.join(METRICS_FILE)).unwrap();
        assert_eq!(
            csv_a, csv_b,
            "same config and seed must produce identical metrics"
        );
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_byte_for_byte() {
        let root_a = tempfile::tempdir().unwrap();
        let root_b = tempfile::tempdir().unwrap();
        let full = run_in(root_a.path(), tiny_config("resume"));

        let opts = RunOptions {
            output_root: Some(root_b.path().to_path_buf()),
            stop_after: Some(3),
            ..Default::default()
        };
        let partial = run_experiment(tiny_config("resume"), &opts).unwrap();
        assert!(partial.interrupted);
        assert_eq!(partial.final_step, 3);
        assert!(
            !partial.dir.join(SUMMARY_FILE).exists(),
            "interrupted runs write no summary"
        );

        let opts = RunOptions {
            output_root: Some(root_b.path().to_path_buf()),
            resume: Some(partial.dir.join("ckpt_000003.kdck")),
            ..Default::default()
        };
        let resumed = run_experiment(tiny_config("resume"), &opts).unwrap();
        assert_eq!(
            resumed.dir, partial.dir,
            "resume continues in the same directory"
        );
        assert!(!resumed.interrupted);

        let csv_full = fs::read(full.dir.join(METRICS_FILE)).unwrap();
        let csv_resumed = fs::read(resumed.dir.join(METRICS_FILE)).unwrap();
        assert_eq!(csv_full, csv_resumed);
        assert_eq!(resumed.final_eval, full.final_eval);
    }

    #[test]
    fn run_name_collisions_get_numbered_suffixes() {
        let root = tempfile::tempdir().unwrap();
        let a = run_in(root.path(), tiny_config("clash"));
        let b = run_in(root.path(), tiny_config("clash"));
        assert_eq!(a.dir.file_name().unwrap(), "clash");
        assert_eq!(b.dir.file_name().unwrap(), "clash-2");
    }

    #[test]
    fn zero_cadences_mean_start_and_end_only() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config("sparse");
        cfg.eval_every = 0;
        cfg.checkpoint_every = 0;
        cfg.sample_grid_every = 0;
        let outcome = run_in(root.path(), cfg);
        let names: Vec<String> = fs::read_dir(&outcome.dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert!(names.contains(&"grid_000000.png".to_string()));
        assert!(names.contains(&"grid_000006.png".to_string()));
        assert!(!names.contains(&"grid_000003.png".to_string()));
        assert!(names.contains(&"ckpt_000006.kdck".to_string()));
        assert_eq!(names.iter().filter(|n| n.starts_with("ckpt_")).count(), 1);
        let csv = fs::read_to_string(outcome.dir.join(METRICS_FILE)).unwrap();
        assert!(!csv.contains("3,teacher_fid,"), "no mid-run evaluation");
    }

    #[test]
    fn resume_rejects_a_different_config() {
        let root = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            output_root: Some(root.path().to_path_buf()),
            stop_after: Some(3),
            ..Default::default()
        };
        let partial = run_experiment(tiny_config("strict"), &opts).unwrap();

        let mut other = tiny_config("strict");
        other.optim.g.lr = 1e-3;
        let opts = RunOptions {
            output_root: Some(root.path().to_path_buf()),
            resume: Some(partial.dir.join("ckpt_000003.kdck")),
            ..Default::default()
        };
        let err = run_experiment(other, &opts).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("does not match"), "{}", err);
    }

    #[test]
    fn resume_of_a_finished_run_is_rejected() {
        let root = tempfile::tempdir().unwrap();
        let done = run_in(root.path(), tiny_config("finished"));
        let opts = RunOptions {
            output_root: Some(root.path().to_path_buf()),
            resume: Some(done.dir.join("ckpt_000006.kdck")),
            ..Default::default()
        };
        let err = run_experiment(tiny_config("finished"), &opts).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nothing to resume"), "{}", err);
    }

    #[test]
    fn non_finite_training_aborts_with_a_failure_checkpoint() {
        let root = tempfile::tempdir().unwrap();
        let cfg = tiny_config("poison");
        let opts = RunOptions {
            output_root: Some(root.path().to_path_buf()),
            stop_after: Some(3),
            ..Default::default()
        };
        let partial = run_experiment(cfg.clone(), &opts).unwrap();
        assert!(partial.interrupted);

        // Corrupt one generator weight in the checkpoint; the resumed run's
        // first step then produces non-finite losses and must abort.
        let ckpt = partial.dir.join("ckpt_000003.kdck");
        let (meta, arrays) = checkpoint::load_checkpoint(&ckpt).unwrap();
        let loaded = checkpoint::config_from_meta(&meta).unwrap();
        let (dataset, templates) = dataset_for_config(&loaded).unwrap();
        let (mut state, _) =
            checkpoint::state_from_checkpoint(&meta, &arrays, loaded, dataset, templates).unwrap();
        state.generator.params.entries_mut()[0].1.data_mut()[0] = f64::NAN;
        checkpoint::save_checkpoint(&ckpt, &state).unwrap();

        let opts = RunOptions {
            output_root: Some(root.path().to_path_buf()),
            resume: Some(ckpt),
            ..Default::default()
        };
        let err = run_experiment(cfg, &opts).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let msg = err.to_string();
        assert!(msg.contains("training aborted after step 3"), "{}", msg);
        assert!(msg.contains("non-finite"), "{}", msg);
        assert!(partial.dir.join("ckpt_failed_000003.kdck").exists());
    }

    #[test]
    fn data_specs_parse_and_reject() {
        assert_eq!(DataSpec::parse("synthetic").unwrap(), DataSpec::Synthetic);
        assert_eq!(
            DataSpec::parse("image_folder:/tmp/x").unwrap(),
            DataSpec::ImageFolder(PathBuf::from("/tmp/x"))
        );
        assert_eq!(
            DataSpec::parse("packed_binary:d.bin").unwrap(),
            DataSpec::PackedBinary(PathBuf::from("d.bin"))
        );
        let err = DataSpec::parse("csv:/tmp/x").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(
            err.to_string().contains("synthetic"),
            "lists the accepted forms"
        );
    }

    #[test]
    fn missing_config_reads_as_validation_with_the_path() {
        let err = load_config(Path::new("/definitely/not/here.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(
            err.to_string().contains("/definitely/not/here.toml"),
            "{}",
            err
        );
    }
}
