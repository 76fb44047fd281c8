use std::fs;
use std::io::{BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use autosem_core::bandit::{arms_from_record, utility_density_table, DensityRow};
use autosem_core::log::{read_jsonl, write_jsonl};
use autosem_core::pipeline::{run_pipeline, verify_replay};
use autosem_core::{Mode, PipelineConfig, PipelineReport, RunLog, Stage1Record};
use serde::{Deserialize, Serialize};

use crate::config::RunConfigFile;
use crate::error::CliError;

pub const RUN_CONFIG: &str = "run_config.toml";
pub const REPORT: &str = "report.json";
pub const STAGE1_LOG: &str = "stage1.log.jsonl";
pub const STAGE2_LOG: &str = "stage2.log.jsonl";
pub const UTILITIES: &str = "utilities.csv";

/// Grid of the `utilities.csv` written next to each run.
pub const RUN_DENSITY_GRID: usize = 1000;

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Normalized configuration, including command-line overrides.
    pub config: RunConfigFile,
    /// Fully resolved configuration, with derived seeds.
    pub resolved: PipelineConfig,
    pub selected_tasks: Vec<usize>,
    #[serde(flatten)]
    pub outcome: PipelineReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub seeds: Option<Range<u64>>,
}

/// Parses `a..b` (half-open) or `a..=b`.
pub fn parse_seed_range(text: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected a seed range like 0..8 or 0..=7, got `{text}`");
    let (lo, hi, inclusive) = if let Some((lo, hi)) = text.split_once("..=") {
        (lo, hi, true)
    } else if let Some((lo, hi)) = text.split_once("..") {
        (lo, hi, false)
    } else {
        return Err(bad());
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { hi.checked_add(1).ok_or_else(bad)? } else { hi };
    if end <= lo {
        return Err(format!("seed range `{text}` is empty"));
    }
    Ok(lo..end)
}

pub fn run(options: &RunOptions) -> Result<(), CliError> {
    let mut file = RunConfigFile::load(&options.config)?;
    if let Some(mode) = options.mode {
        file.mode = mode;
    }
    if let Some(seed) = options.seed {
        file.reseed(seed);
    }
    let normalized = file.normalized()?;
    let config = file.resolve()?;
    let dir = options.out.clone().unwrap_or_else(|| file.run_dir());
    prepare_dir(&dir, options.force)?;

    if let Some(seeds) = &options.seeds {
        return fan_out(options, &dir, seeds.clone());
    }

    write_file(&dir.join(RUN_CONFIG), normalized.to_toml_string()?.as_bytes())?;
    let mut logs = RunLog::default();
    let result = run_pipeline(&config, &mut logs);
    write_logs(&dir, &logs)?;
    let report = result?;

    let arms = match logs.stage1.last() {
        Some(record) => arms_from_record(record)?,
        None => config.bandit.initial_arms(),
    };
    let table = utility_density_table(&arms, RUN_DENSITY_GRID)?;
    write_file(&dir.join(UTILITIES), density_csv(&table).as_bytes())?;

    let report = RunReport {
        config: normalized,
        resolved: config,
        selected_tasks: report.selection.selected_task_ids.clone(),
        outcome: report,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Usage(format!("cannot encode report: {e}")))?;
    write_file(&dir.join(REPORT), json.as_bytes())?;
    println!(
        "{}: tasks {:?}, ratio {:?}, score {:.6} (baseline {:.6})",
        dir.display(),
        report.selected_tasks,
        report.outcome.best_ratio.counts(),
        report.outcome.best_score,
        report.outcome.baseline_score
    );
    Ok(())
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    let occupied = match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_some(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(CliError::io(format!("cannot open {}", dir.display()), e)),
    };
    if occupied && !force {
        return Err(CliError::Usage(format!(
            "output directory {} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

fn write_logs(dir: &Path, logs: &RunLog) -> Result<(), CliError> {
    let mut stage1 = Vec::new();
    let mut stage2 = Vec::new();
    write_jsonl(&logs.stage1, &mut stage1)
        .and_then(|_| write_jsonl(&logs.stage2, &mut stage2))
        .map_err(|e| CliError::io("cannot encode logs", e))?;
    write_file(&dir.join(STAGE1_LOG), &stage1)?;
    write_file(&dir.join(STAGE2_LOG), &stage2)
}

/// Runs one worker process per seed, each writing to `dir/seed-<k>`.
fn fan_out(options: &RunOptions, dir: &Path, seeds: Range<u64>) -> Result<(), CliError> {
    let exe = std::env::current_exe().map_err(|e| CliError::io("cannot locate own executable", e))?;
    let width = std::thread::available_parallelism().map_or(1, |n| n.get());
    let total = seeds.clone().count();
    let mut pending = seeds.collect::<Vec<_>>().into_iter();
    let mut running: Vec<(u64, Child)> = Vec::new();
    let mut failed = 0;
    let mut code = 0u8;
    loop {
        while running.len() < width {
            let Some(seed) = pending.next() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("run")
                .arg(&options.config)
                .arg("--seed")
                .arg(seed.to_string())
                .arg("--out")
                .arg(dir.join(format!("seed-{seed}")));
            if let Some(mode) = options.mode {
                cmd.arg("--mode").arg(mode_name(mode));
            }
            if options.force {
                cmd.arg("--force");
            }
            let child = cmd
                .spawn()
                .map_err(|e| CliError::io(format!("cannot start worker for seed {seed}"), e))?;
            running.push((seed, child));
        }
        if running.is_empty() {
            break;
        }
        let (seed, mut child) = running.remove(0);
        let status = child
            .wait()
            .map_err(|e| CliError::io(format!("worker for seed {seed} lost"), e))?;
        if !status.success() {
            failed += 1;
            let c = status.code().map_or(1, |c| c.clamp(1, 255) as u8);
            code = code.max(c);
            eprintln!("seed {seed}: worker exited with {status}");
        }
    }
    if failed > 0 {
        return Err(CliError::Workers { failed, total, code });
    }
    Ok(())
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Full => "full",
        Mode::NoStage1 => "no_stage1",
        Mode::NoStage2 => "no_stage2",
    }
}

pub fn density_csv(rows: &[DensityRow]) -> String {
    let mut out = String::from("task_id,theta,density\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.task_id, row.theta, row.density));
    }
    out
}

/// Accepts a run directory or any file inside one.
fn run_dir_of(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Writes the utility density table of the final arms in a stage-1 log.
pub fn plot_utilities(log: &Path, grid: usize, out: Option<&Path>) -> Result<(), CliError> {
    let path = if log.is_dir() { log.join(STAGE1_LOG) } else { log.to_path_buf() };
    let bytes = read_input(&path)?;
    let records: Vec<Stage1Record> = read_jsonl(BufReader::new(bytes.as_slice()))
        .map_err(|e| CliError::Usage(format!("malformed log {}: {e}", path.display())))?;
    let last = records
        .last()
        .ok_or_else(|| CliError::Usage(format!("log {} has no rounds", path.display())))?;
    let arms = arms_from_record(last)
        .map_err(|e| CliError::Usage(format!("malformed log {}: {e}", path.display())))?;
    let csv = density_csv(&utility_density_table(&arms, grid)?);
    match out {
        Some(file) => write_file(file, csv.as_bytes()),
        None => std::io::stdout()
            .lock()
            .write_all(csv.as_bytes())
            .map_err(|e| CliError::io("cannot write to stdout", e)),
    }
}

/// Re-runs a recorded run and compares both logs byte for byte.
pub fn replay(path: &Path) -> Result<(), CliError> {
    let dir = run_dir_of(path);
    let config_path = dir.join(RUN_CONFIG);
    let text = String::from_utf8(read_input(&config_path)?)
        .map_err(|_| CliError::Config(format!("{} is not UTF-8", config_path.display())))?;
    let config = RunConfigFile::from_toml_str(&text)?.resolve()?;
    let stage1 = read_input(&dir.join(STAGE1_LOG))?;
    let stage2 = read_input(&dir.join(STAGE2_LOG))?;
    match verify_replay(&config, &stage1, &stage2)? {
        None => {
            println!("replay matches {}", dir.display());
            Ok(())
        }
        Some(d) => Err(CliError::Diverged { stage: d.stage, round: d.round }),
    }
}

/// Prints the normalized form of a config file.
pub fn validate_config(path: &Path) -> Result<(), CliError> {
    let normalized = RunConfigFile::load(path)?.normalized()?;
    print!("{}", normalized.to_toml_string()?);
    Ok(())
}
