//! Command-line front end: each subcommand runs one stage of the pipeline
//! on a semantics file (or a bundled semantics named by `whilefun` /
//! `mips-mini`) and prints a deterministic text summary; `synthesize`,
//! `refine`, and `slice` can additionally write a JSON report.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use semslice::engine;
use semslice::hypertree;
use semslice::module::{validate, Diagnostic, SemanticsModule, Severity};
use semslice::policies;
use semslice::refine;
use semslice::report::{self, InputDigest, RunReport};
use semslice::slicer::{self, Criterion};
use semslice::syntax::{parse_module, parse_term, print_term};
use semslice::{assets, Term};

#[derive(Parser)]
#[command(name = "semslice", version, about = "Generic slicing over executable semantics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the sorts that behave like runtime memory.
    #[command(name = "memory-inferences", alias = "memory_inferences")]
    MemoryInferences { semantics: String },
    /// Print the memory sorts the step rules consult or change.
    #[command(name = "context-update-sorts", alias = "context_update_sorts")]
    ContextUpdateSorts { semantics: String },
    /// Print the stack operators of the designated memory module.
    #[command(name = "memory-stack-ops", alias = "memory_stack_ops")]
    MemoryStackOps { semantics: String },
    /// Synthesize context-update candidates and per-instruction effects.
    Synthesize {
        semantics: String,
        /// Write the full machine report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Partition the candidates by running generated test programs.
    Refine {
        semantics: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// How many programs to generate and run.
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Per-run step budget; defaults to SEMSLICE_STEP_BUDGET or 10000.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Slice a program of the semantics against a variable criterion.
    Slice {
        semantics: String,
        program: PathBuf,
        /// Criterion variables, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        criterion: Vec<String>,
        /// Slice at this program point instead of end of program.
        #[arg(long)]
        point: Option<u32>,
        /// Write the sliced program source here.
        #[arg(long)]
        annotated: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

struct Loaded {
    m: SemanticsModule,
    name: String,
    inputs: Vec<InputDigest>,
    warnings: Vec<Diagnostic>,
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("semslice: error: {msg}");
    ExitCode::FAILURE
}

/// A bundled name loads the embedded asset; anything else is a file path.
fn load_semantics(spec: &str) -> Result<Loaded, String> {
    let (src, name) = match assets::builtin_source(spec) {
        Some(text) => (text.to_string(), spec.to_string()),
        None => {
            let text = std::fs::read_to_string(spec)
                .map_err(|e| format!("cannot read semantics `{spec}`: {e}"))?;
            (text, spec.to_string())
        }
    };
    let (m, mut diags) = parse_module(&src, &name).map_err(|e| e.to_string())?;
    diags.extend(validate(&m));
    let mut warnings = Vec::new();
    for d in diags {
        match d.severity {
            Severity::Error => return Err(format!("{}: {}", d.context, d.message)),
            _ => warnings.push(d),
        }
    }
    let inputs = vec![InputDigest::of_bytes(&name, src.as_bytes())];
    Ok(Loaded { m, name, inputs, warnings })
}

fn write_out(path: &PathBuf, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn finish<T: serde::Serialize>(
    mut rep: RunReport<T>,
    warnings: Vec<Diagnostic>,
    started: Instant,
    text: &str,
    json: Option<&PathBuf>,
) -> Result<(), String> {
    for w in &warnings {
        eprintln!("semslice: {}: {}", w.context, w.message);
    }
    rep.diagnostics = warnings;
    rep.timing_ms = started.elapsed().as_millis() as u64;
    print!("{text}");
    if let Some(path) = json {
        write_out(path, &rep.to_json())?;
    }
    Ok(())
}

fn cmd_list(spec: &str, which: fn(&SemanticsModule) -> String) -> Result<(), String> {
    let l = load_semantics(spec)?;
    for w in &l.warnings {
        eprintln!("semslice: {}: {}", w.context, w.message);
    }
    println!("{}", which(&l.m));
    Ok(())
}

fn cmd_synthesize(spec: &str, json: Option<&PathBuf>) -> Result<(), String> {
    let started = Instant::now();
    let l = load_semantics(spec)?;
    let s = hypertree::synthesize(&l.m);
    let outputs = report::synthesize_outputs(&l.m, &s);
    let text = report::render_synthesize_text(&outputs);
    let rep = RunReport::new("synthesize", &l.name, l.inputs, outputs);
    finish(rep, l.warnings, started, &text, json)
}

fn cmd_refine(
    spec: &str,
    seed: u64,
    count: usize,
    max_steps: Option<u64>,
    json: Option<&PathBuf>,
) -> Result<(), String> {
    let started = Instant::now();
    let l = load_semantics(spec)?;
    let budget = max_steps.unwrap_or_else(engine::default_step_budget);
    let outcome = refine::refine(&l.m, seed, count, budget).map_err(|e| e.to_string())?;
    let outputs = report::refine_outputs(&l.m, &outcome, seed, count, budget);
    let text = report::render_refine_text(&outputs);
    let rep = RunReport::new("refine", &l.name, l.inputs, outputs);
    finish(rep, l.warnings, started, &text, json)
}

#[allow(clippy::too_many_arguments)]
fn cmd_slice(
    spec: &str,
    program_path: &PathBuf,
    criterion: &[String],
    point: Option<u32>,
    annotated: Option<&PathBuf>,
    json: Option<&PathBuf>,
) -> Result<(), String> {
    let started = Instant::now();
    let mut l = load_semantics(spec)?;
    let program_src = std::fs::read_to_string(program_path)
        .map_err(|e| format!("cannot read program `{}`: {e}", program_path.display()))?;
    l.inputs.push(InputDigest::of_bytes(
        program_path.display().to_string(),
        program_src.as_bytes(),
    ));
    let program: Term = parse_term(&l.m, &program_src).map_err(|e| e.to_string())?;

    // Criterion variables absent from the program are ignored with a warning.
    let present = slicer::program_variables(&l.m, &program);
    let mut vars: Vec<&String> = Vec::new();
    for v in criterion {
        if present.contains(v) {
            vars.push(v);
        } else {
            l.warnings.push(Diagnostic::warning(
                "criterion",
                format!("variable `{v}` does not occur in the program; ignored"),
            ));
        }
    }
    let mut crit = Criterion::vars(&vars);
    if let Some(p) = point {
        crit = crit.at_point(p);
    }

    let synthesis = hypertree::synthesize(&l.m);
    let outcome = refine::refine(&l.m, 1, 12, engine::default_step_budget())
        .map_err(|e| e.to_string())?;
    let slice = slicer::slice(&l.m, &program, &crit, &synthesis.side_effects, &outcome.partition)
        .map_err(|e| e.to_string())?;
    let total = engine::program_points(&l.m, &program).len();
    let outputs = report::slice_outputs(&crit, &slice, total);
    let text = report::render_slice_text(&outputs);
    if let Some(path) = annotated {
        let sliced = slicer::reconstruct(&l.m, &program, &slice.kept).map_err(|e| e.to_string())?;
        write_out(path, &format!("{}\n", print_term(&l.m, &sliced)))?;
    }
    let rep = RunReport::new("slice", &l.name, l.inputs, outputs);
    finish(rep, l.warnings, started, &text, json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::MemoryInferences { semantics } => cmd_list(semantics, |m| {
            policies::format_sorts(&m.sig, &policies::infer_stack_policy(m).stack_sorts)
        }),
        Cmd::ContextUpdateSorts { semantics } => cmd_list(semantics, |m| {
            policies::format_sorts(&m.sig, &policies::context_update_sorts(m))
        }),
        Cmd::MemoryStackOps { semantics } => cmd_list(semantics, |m| {
            policies::format_ops(&m.sig, &policies::infer_stack_policy(m).stack_ops)
        }),
        Cmd::Synthesize { semantics, json } => cmd_synthesize(semantics, json.as_ref()),
        Cmd::Refine { semantics, seed, count, max_steps, json } => {
            cmd_refine(semantics, *seed, *count, *max_steps, json.as_ref())
        }
        Cmd::Slice { semantics, program, criterion, point, annotated, json } => cmd_slice(
            semantics,
            program,
            criterion,
            *point,
            annotated.as_ref(),
            json.as_ref(),
        ),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
