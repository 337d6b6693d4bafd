use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ctxaudit::pipeline::{validate_schema, PipelineError, Workspace};

/// Audit pronoun choices of a chat model for invariance across discourse contexts.
#[derive(Parser)]
#[command(name = "ctxaudit", version)]
struct Cli {
    /// Run config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, short, global = true, default_value = "ctxaudit.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the trial plan.
    Plan,
    /// Execute the plan against the backend, resuming an existing log.
    Run,
    /// Summarize response validity per setting and order.
    Validate,
    /// Ask the comprehension questions and score the answers.
    Metaprompt,
    /// Estimates, divergences, correlations and feature MI.
    Stats,
    /// Contextuality analysis of every template pair.
    Cbd {
        /// Other runs' cbd.json files to compare contextual pairs with.
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
    /// Detection rates of a simulated scenario versus replicates per cell.
    Simulate {
        /// delta_c, delta_c_strong, null, repeater or stereotype.
        #[arg(long)]
        scenario: String,
        /// Replicates per cell to simulate.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<u32>>,
        /// Monte Carlo replicates per grid point.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Assemble report.json and tables/ from the computed fragments.
    Report,
    /// Check a schema file and list every violation.
    ValidateSchema { schema: PathBuf },
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Command::ValidateSchema { schema } = &cli.command {
        let check = validate_schema(schema)?;
        for v in &check.violations {
            println!("violation: {v}");
        }
        for w in &check.warnings {
            println!("warning: {w}");
        }
        println!(
            "{} templates, {} violations, {} warnings",
            check.templates.len(),
            check.violations.len(),
            check.warnings.len()
        );
        return Ok(check.violations.is_empty());
    }

    let ws = Workspace::load(&cli.config)?;
    match cli.command {
        Command::Plan => {
            let plan = ws.plan()?;
            for (cell, n) in &plan.cells {
                println!("{cell}\t{n}");
            }
            println!("{} trials -> {}", plan.total, plan.path.display());
        }
        Command::Run => {
            let summary = ws.run()?;
            let o = &summary.outcome;
            println!(
                "planned {}, already done {}, executed {}, errors {}",
                o.planned, o.already_done, o.executed, o.errors
            );
            println!("valid fraction {:.4}", summary.validity.fraction_valid);
        }
        Command::Validate => {
            let report = ws.validate()?;
            for row in &report.rows {
                println!(
                    "{}\t{}\t{}/{}\t{:.4}",
                    row.setting.as_str(),
                    row.order.as_str(),
                    row.valid,
                    row.total,
                    row.fraction_valid
                );
            }
            println!("overall {}/{} valid ({:.4})", report.valid, report.total, report.fraction_valid);
        }
        Command::Metaprompt => print_json(&ws.metaprompt()?.accuracy)?,
        Command::Stats => {
            let s = ws.stats()?;
            println!(
                "{} of {} templates valid in every setting",
                s.valid_templates.n_valid, s.valid_templates.n_templates
            );
            print_json(&s.top_feature)?;
        }
        Command::Cbd { compare } => {
            let section = ws.cbd(&compare)?;
            print_json(&section.summary)?;
            if !section.skipped.is_empty() {
                log::warn!("{} pair/order combinations skipped", section.skipped.len());
            }
        }
        Command::Simulate {
            scenario,
            grid,
            replicates,
        } => print_json(&ws.simulate(&scenario, grid, replicates)?)?,
        Command::Report => {
            ws.report().context("building report")?;
            println!("report written to {}", ws.config.output_dir.display());
        }
        Command::ValidateSchema { .. } => unreachable!("handled above"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<PipelineError>())
                .map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
