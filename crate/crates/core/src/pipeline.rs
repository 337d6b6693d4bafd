//! Subcommand implementations over a run directory with fixed file names.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Gateway};
use crate::collector::{
    plan_trials, read_log, run, run_metaprompts, validity_report, CollectorError, MeasurementLog,
    MetapromptReport, RunHeader, RunOutcome, TrialPlan, ValidityReport,
};
use crate::config::{ConfigError, RunConfig};
use crate::norms::{NormsError, NormsTable};
use crate::report::tables::write_tables;
use crate::report::{
    attach_overlap, compute_cbd, compute_stats, log_hash, CbdSection, Fragment, FragmentHeader,
    Part, Report, StatsParams, StatsSection, REPORT_FORMAT,
};
use crate::schema::{check_schema, load_schema, SchemaCheck, SchemaError, Template};
use crate::simulate::{simulate, Scenario, SimulateError, SimulateOptions, SimulateReport};

pub const PLAN_FILE: &str = "plan.jsonl";
pub const LOG_FILE: &str = "measurements.jsonl";
pub const VALIDITY_FILE: &str = "validity.json";
pub const STATS_FILE: &str = "stats.json";
pub const CBD_FILE: &str = "cbd.json";
pub const METAPROMPT_FILE: &str = "metaprompt.json";
pub const SIMULATE_FILE: &str = "simulate.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLES_DIR: &str = "tables";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("norms: {0}")]
    Norms(#[from] NormsError),
    #[error("collection: {0}")]
    Collection(String),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 3 config, 4 collection, 5 analysis, 1 other I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Schema(_) | PipelineError::Norms(_) => 3,
            PipelineError::Collection(_) => 4,
            PipelineError::Analysis(_) => 5,
            PipelineError::Io { .. } => 1,
        }
    }
}

impl From<CollectorError> for PipelineError {
    fn from(e: CollectorError) -> Self {
        PipelineError::Collection(e.to_string())
    }
}

impl From<BackendError> for PipelineError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(m) => PipelineError::Config(ConfigError::Field {
                field: "backend".into(),
                message: m,
            }),
            other => PipelineError::Collection(other.to_string()),
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Analysis(format!("{}: {e}", path.display())))
}

/// Counts of planned trials per (setting, order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub path: PathBuf,
    pub total: usize,
    pub cells: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub validity: ValidityReport,
}

/// A loaded config with its schema and norms.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub templates: Vec<Template>,
    pub schema_hash: String,
    pub norms: Option<NormsTable>,
}

impl Workspace {
    pub fn load(config_path: &Path) -> Result<Self, PipelineError> {
        Self::from_config(RunConfig::load(config_path)?)
    }

    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(&config.schema).map_err(io(&config.schema))?;
        let templates = load_schema(&config.schema)?;
        let norms = match &config.norms {
            Some(p) => {
                let mut n = NormsTable::load(p)?;
                if let Some(a) = &config.norms_aliases {
                    n.load_aliases(a)?;
                }
                Some(n)
            }
            None => None,
        };
        Ok(Self {
            schema_hash: crate::seed::sha256_hex(&bytes),
            config,
            templates,
            norms,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output(name)
    }

    pub fn run_header(&self) -> RunHeader {
        RunHeader::new(&self.schema_hash, self.config.collection_hash())
    }

    pub fn gateway(&self) -> Result<Gateway, PipelineError> {
        Ok(Gateway::from_config(&self.config.backend)?)
    }

    pub fn plan(&self) -> Result<PlanSummary, PipelineError> {
        let c = &self.config;
        let plans = plan_trials(&self.templates, &c.settings, &c.orders, c.n_per_cell)?;
        let path = self.out(PLAN_FILE);
        std::fs::create_dir_all(&c.output_dir).map_err(io(&c.output_dir))?;
        let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
        let mut cells = BTreeMap::new();
        for p in &plans {
            serde_json::to_writer(&mut w, p).expect("plan serializes");
            w.write_all(b"\n").map_err(io(&path))?;
            *cells
                .entry(format!("{}/{}", p.setting.as_str(), p.order.as_str()))
                .or_default() += 1;
        }
        w.flush().map_err(io(&path))?;
        Ok(PlanSummary {
            path,
            total: plans.len(),
            cells,
        })
    }

    pub fn read_plan(&self) -> Result<Vec<TrialPlan>, PipelineError> {
        let path = self.out(PLAN_FILE);
        if !path.is_file() {
            return Err(PipelineError::Collection(format!(
                "{} not found; run `plan` first",
                path.display()
            )));
        }
        let reader = BufReader::new(File::open(&path).map_err(io(&path))?);
        let mut plans = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            plans.push(serde_json::from_str(&line).map_err(|e| {
                PipelineError::Collection(format!("{} line {}: {e}", path.display(), i + 1))
            })?);
        }
        Ok(plans)
    }

    /// Execute the plan into the log, resuming. Fails when any trial ended in
    /// a backend error; the log still records every attempt.
    pub fn run(&self) -> Result<RunSummary, PipelineError> {
        let plans = self.read_plan()?;
        let gateway = self.gateway()?;
        let outcome = run(&plans, &gateway, &self.out(LOG_FILE), &self.run_header())?;
        let log = read_log(&self.out(LOG_FILE))?;
        let summary = RunSummary {
            validity: validity_report(&log.measurements),
            outcome,
        };
        if summary.outcome.errors > 0 {
            return Err(PipelineError::Collection(format!(
                "{} of {} trials ended in backend errors (valid fraction {:.3}); rerun to retry them",
                summary.outcome.errors, summary.outcome.planned, summary.validity.fraction_valid
            )));
        }
        Ok(summary)
    }

    /// Read the log and check it belongs to this schema and config.
    pub fn load_log(&self) -> Result<(MeasurementLog, String), PipelineError> {
        let path = self.out(LOG_FILE);
        if !path.is_file() {
            return Err(PipelineError::Analysis(format!(
                "{} not found; run `run` first",
                path.display()
            )));
        }
        let log = read_log(&path)?;
        if !log.header.matches(&self.run_header()) {
            return Err(PipelineError::Analysis(format!(
                "{} was collected with a different schema or collection config",
                path.display()
            )));
        }
        if log.measurements.is_empty() {
            return Err(PipelineError::Analysis(format!("{} has no measurements", path.display())));
        }
        let hash = log_hash(&log.measurements);
        Ok((log, hash))
    }

    fn header(&self, log_hash: Option<String>) -> FragmentHeader {
        FragmentHeader {
            schema_hash: self.schema_hash.clone(),
            log_hash,
            config_hash: self.config.config_hash(),
        }
    }

    pub fn validate(&self) -> Result<ValidityReport, PipelineError> {
        let (log, hash) = self.load_log()?;
        let report = validity_report(&log.measurements);
        write_json(
            &self.out(VALIDITY_FILE),
            &Fragment {
                header: self.header(Some(hash)),
                data: &report,
            },
        )?;
        Ok(report)
    }

    pub fn metaprompt(&self) -> Result<MetapromptReport, PipelineError> {
        let report = run_metaprompts(
            &self.templates,
            &self.gateway()?,
            self.config.metaprompt_per_question as usize,
        )?;
        write_json(
            &self.out(METAPROMPT_FILE),
            &Fragment {
                header: self.header(None),
                data: &report,
            },
        )?;
        Ok(report)
    }

    pub fn stats(&self) -> Result<StatsSection, PipelineError> {
        let (log, hash) = self.load_log()?;
        let section = compute_stats(
            &self.templates,
            self.norms.as_ref(),
            &log.measurements,
            &StatsParams::from_config(&self.config),
        )
        .map_err(|e| PipelineError::Analysis(e.to_string()))?;
        write_json(
            &self.out(STATS_FILE),
            &Fragment {
                header: self.header(Some(hash)),
                data: &section,
            },
        )?;
        Ok(section)
    }

    /// Contextuality analysis; `compare` lists other runs' cbd fragments
    /// for the overlap matrix.
    pub fn cbd(&self, compare: &[PathBuf]) -> Result<CbdSection, PipelineError> {
        let (log, hash) = self.load_log()?;
        let mut section = compute_cbd(
            &self.templates,
            &log.measurements,
            &self.config.cbd.options,
            self.config.cbd.pooling,
        )
        .map_err(|e| PipelineError::Analysis(e.to_string()))?;
        if !compare.is_empty() {
            let others = compare
                .iter()
                .map(|p| {
                    let f: Fragment<CbdSection> = read_json(p)?;
                    Ok((p.display().to_string(), f.data))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let label = self.config.output_dir.display().to_string();
            attach_overlap(&mut section, &label, &others);
        }
        write_json(
            &self.out(CBD_FILE),
            &Fragment {
                header: self.header(Some(hash)),
                data: &section,
            },
        )?;
        Ok(section)
    }

    pub fn simulate(
        &self,
        scenario: &str,
        grid: Option<Vec<u32>>,
        replicates: Option<usize>,
    ) -> Result<SimulateReport, PipelineError> {
        let scenario: Scenario = scenario.parse().map_err(|e: SimulateError| {
            PipelineError::Config(ConfigError::Field {
                field: "scenario".into(),
                message: e.to_string(),
            })
        })?;
        let mut opts = SimulateOptions::new(scenario);
        opts.seed = crate::seed::substream(self.config.seed, "simulate");
        opts.cbd = self.config.cbd.options;
        opts.pooling = self.config.cbd.pooling;
        opts.mi.k = self.config.mi.k;
        opts.mi.folds = self.config.mi.folds;
        opts.workers = self.config.backend.max_in_flight;
        if let Some(g) = grid {
            opts.grid = g;
        }
        if let Some(r) = replicates {
            opts.replicates = r;
        }
        let report = simulate(&opts).map_err(|e| match e {
            SimulateError::UnknownScenario(_) | SimulateError::Precondition(_) => {
                PipelineError::Config(ConfigError::Field {
                    field: "simulate".into(),
                    message: e.to_string(),
                })
            }
            SimulateError::Failed(m) => PipelineError::Analysis(m),
        })?;
        write_json(&self.out(SIMULATE_FILE), &report)?;
        Ok(report)
    }

    /// Assemble report.json and the flat tables from the fragments on disk.
    pub fn report(&self) -> Result<Report, PipelineError> {
        let (log, hash) = self.load_log()?;
        let expected = self.header(Some(hash));
        let check = |h: &FragmentHeader, name: &str| {
            if h.consistent_with(&expected) {
                Ok(())
            } else {
                Err(PipelineError::Analysis(format!(
                    "{name} belongs to a different run (schema, config or log changed); recompute it"
                )))
            }
        };
        let stats_path = self.out(STATS_FILE);
        if !stats_path.is_file() {
            return Err(PipelineError::Analysis(format!(
                "{} not found; run `stats` first",
                stats_path.display()
            )));
        }
        let stats: Fragment<StatsSection> = read_json(&stats_path)?;
        check(&stats.header, STATS_FILE)?;
        let cbd = match self.out(CBD_FILE) {
            p if p.is_file() => {
                let f: Fragment<CbdSection> = read_json(&p)?;
                check(&f.header, CBD_FILE)?;
                Part::Present(f.data)
            }
            _ => Part::Absent,
        };
        let metaprompt = match self.out(METAPROMPT_FILE) {
            p if p.is_file() => {
                let f: Fragment<MetapromptReport> = read_json(&p)?;
                check(&f.header, METAPROMPT_FILE)?;
                Part::Present(f.data)
            }
            _ => Part::Absent,
        };
        let report = Report {
            format: REPORT_FORMAT.into(),
            header: expected,
            run: log.header.clone(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            validity: validity_report(&log.measurements),
            stats: stats.data,
            cbd,
            metaprompt,
        };
        write_json(&self.out(REPORT_FILE), &report)?;
        let dir = self.out(TABLES_DIR);
        write_tables(&report, &dir).map_err(io(&dir))?;
        Ok(report)
    }
}

/// Check a schema file without loading a config.
pub fn validate_schema(path: &Path) -> Result<SchemaCheck, PipelineError> {
    Ok(check_schema(path)?)
}
