//! Trace-driven refinement of context-update candidates.
//!
//! Synthesis over the rule hypertree proposes instruction operators that
//! touch the runtime context (calls, jumps). Refinement tells them apart by
//! running generated programs and watching where control actually lands:
//! an operator whose successors stay inside its own function region behaves
//! like a local jump, one that crosses regions behaves like a call, and one
//! whose successor is always the next program point in layout order is
//! sequential after all.

use crate::engine::{self, RunStatus, Trace};
use crate::module::SemanticsModule;
use crate::sig::OpId;
use crate::syntax::parse_term;
use crate::term::Term;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("module declares no test generator family")]
    NoGenerator,
    #[error("unknown test generator family `{0}`")]
    UnknownGenerator(String),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
}

/// The program points of `program` in mark order; index equals point id.
pub fn flatten_program(m: &SemanticsModule, program: &Term) -> Vec<Term> {
    engine::program_points(m, program)
}

/// Which function region each program point belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionSpans {
    /// Innermost owning region per point; None for top-level code.
    pub owner: Vec<Option<usize>>,
    /// Point index of each region's declaration, parallel to region ids.
    pub decls: Vec<usize>,
}

/// Compute function regions. A declaration that carries its body as a
/// subterm owns its structural descendant points. A bare marker owns the
/// flat interval from the marker to the next declaration (or the end).
/// Top-level code belongs to no region.
pub fn function_spans(m: &SemanticsModule, program: &Term) -> FunctionSpans {
    let mut owner = Vec::new();
    let mut decls = Vec::new();
    let mut stack = Vec::new();
    spans_rec(m, program, &mut owner, &mut decls, &mut stack);

    // Flat fill for marker-style declarations without structural members.
    for (region, &d) in decls.iter().enumerate() {
        let structural = owner.iter().any(|o| *o == Some(region));
        if structural {
            continue;
        }
        let end = decls
            .iter()
            .map(|&other| other)
            .filter(|&other| other > d)
            .min()
            .unwrap_or(owner.len());
        for slot in owner.iter_mut().take(end).skip(d + 1) {
            if slot.is_none() {
                *slot = Some(region);
            }
        }
    }
    FunctionSpans { owner, decls }
}

fn spans_rec(
    m: &SemanticsModule,
    t: &Term,
    owner: &mut Vec<Option<usize>>,
    decls: &mut Vec<usize>,
    stack: &mut Vec<usize>,
) {
    match t {
        Term::Var(_) => {}
        Term::Marked(_, inner) => spans_rec(m, inner, owner, decls, stack),
        Term::App(op, args) => {
            let decl = m.sig.op(*op);
            let is_point = m
                .meta
                .instruction_sort
                .map_or(false, |s| m.sig.is_subsort(decl.coarity, s))
                && !m.meta.sequencing_ops.contains(op);
            let mut entered = false;
            if is_point {
                owner.push(stack.last().copied());
                if m.meta.function_decl_ops.contains(op) {
                    let region = decls.len();
                    decls.push(owner.len() - 1);
                    stack.push(region);
                    entered = true;
                }
            }
            for a in args {
                spans_rec(m, a, owner, decls, stack);
            }
            if entered {
                stack.pop();
            }
        }
    }
}

/// Abstract a trace to its program-point ids, collapsing consecutive
/// repeats of the same id into one occurrence.
pub fn filter_trace(trace: &Trace) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for id in trace.ids() {
        if out.last() != Some(&id) {
            out.push(id);
        }
    }
    out
}

/// Outcome of classifying context-update candidates against observed runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextUpdatePartition {
    /// Successors cross function regions: call-like.
    pub function_ops: BTreeSet<OpId>,
    /// Successors jump within the operator's own region: goto-like.
    pub goto_ops: BTreeSet<OpId>,
    /// Both kinds of jump observed.
    pub conflicting: BTreeSet<OpId>,
    /// Activated, but every successor was the next point in layout order.
    pub sequential: BTreeSet<OpId>,
    /// No successor evidence in any run.
    pub untested: BTreeSet<OpId>,
}

#[derive(Default)]
struct Evidence {
    far: bool,
    local: bool,
    adjacent: bool,
}

/// Partition candidate operators by the successor behavior their program
/// points exhibit across `runs`. Each consecutive pair in an abstracted
/// trace is attributed to the first point's head operator: a successor at
/// the next layout index is sequential evidence, one elsewhere in the same
/// function region is a local jump, and one in another region (or between
/// a region and top level) is a far jump.
pub fn classify(
    m: &SemanticsModule,
    candidates: &BTreeSet<OpId>,
    runs: &[(Term, Trace)],
) -> ContextUpdatePartition {
    let mut evidence: std::collections::BTreeMap<OpId, Evidence> = candidates
        .iter()
        .map(|&op| (op, Evidence::default()))
        .collect();

    for (program, trace) in runs {
        let points = flatten_program(m, program);
        let spans = function_spans(m, program);
        let phi = filter_trace(trace);
        for pair in phi.windows(2) {
            let (a, b) = (pair[0] as usize, pair[1] as usize);
            if a >= points.len() || b >= points.len() {
                continue;
            }
            let Some(op) = points[a].head() else { continue };
            let Some(ev) = evidence.get_mut(&op) else { continue };
            if b == a + 1 {
                ev.adjacent = true;
            } else if spans.owner[a] == spans.owner[b] {
                ev.local = true;
            } else {
                ev.far = true;
            }
        }
    }

    let mut part = ContextUpdatePartition::default();
    for (op, ev) in evidence {
        let bucket = match (ev.far, ev.local, ev.adjacent) {
            (true, true, _) => &mut part.conflicting,
            (true, false, _) => &mut part.function_ops,
            (false, true, _) => &mut part.goto_ops,
            (false, false, true) => &mut part.sequential,
            (false, false, false) => &mut part.untested,
        };
        bucket.insert(op);
    }
    part
}

/// One generated test: its source text, parsed program, and input vector.
#[derive(Clone, Debug)]
pub struct TestCase {
    pub source: String,
    pub program: Term,
    pub inputs: Vec<u64>,
}

/// Generate `count` random programs for the module's generator family.
/// Generated programs always terminate: loops are counter-bounded and
/// branches only target labels further down the code.
pub fn generate_tests(
    m: &SemanticsModule,
    seed: u64,
    count: usize,
    depth: usize,
) -> Result<Vec<TestCase>, RefineError> {
    let family = m.meta.generator.as_deref().ok_or(RefineError::NoGenerator)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (source, inputs) = match family {
            "whilefun" => gen_whilefun(&mut rng, depth),
            "mips" => gen_mips(&mut rng, depth),
            other => return Err(RefineError::UnknownGenerator(other.to_string())),
        };
        let program = parse_term(m, &source)
            .unwrap_or_else(|e| panic!("generated program must parse: {e}\n{source}"));
        out.push(TestCase { source, program, inputs });
    }
    Ok(out)
}

const WF_GLOBALS: [&str; 5] = ["x", "y", "z", "u", "v"];
const WF_PARAMS: [&str; 2] = ["a", "b"];

fn wf_exp(rng: &mut ChaCha8Rng, scope: &[&str]) -> String {
    // Atoms and a single binary layer keep the grammar unambiguous.
    let atom = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.5) {
            scope.choose(rng).unwrap().to_string()
        } else {
            rng.gen_range(0..=6u32).to_string()
        }
    };
    match rng.gen_range(0..4) {
        0 => format!("{} + {}", atom(rng), atom(rng)),
        1 => format!("{} - {}", atom(rng), atom(rng)),
        _ => atom(rng),
    }
}

fn wf_bexp(rng: &mut ChaCha8Rng, scope: &[&str]) -> String {
    let a = scope.choose(rng).unwrap();
    let n = rng.gen_range(0..=4u32);
    if rng.gen_bool(0.5) {
        format!("{a} lt {n}")
    } else {
        format!("{a} =? {n}")
    }
}

fn wf_simple_stmt(rng: &mut ChaCha8Rng, scope: &[&str]) -> String {
    let v = scope.choose(rng).unwrap();
    match rng.gen_range(0..6) {
        0 => format!("{v} ++"),
        1 => format!("{v} --"),
        2 => format!("write {}", wf_exp(rng, scope)),
        3 => format!("read {v}"),
        _ => format!("{v} := {}", wf_exp(rng, scope)),
    }
}

fn wf_stmt(rng: &mut ChaCha8Rng, scope: &[&str], control: bool) -> String {
    if control && rng.gen_bool(0.3) {
        if rng.gen_bool(0.5) {
            return format!(
                "if {} then {} else {} fi",
                wf_bexp(rng, scope),
                wf_simple_stmt(rng, scope),
                wf_simple_stmt(rng, scope),
            );
        }
        // Counter-bounded loop; `w` is reserved for counters.
        return format!(
            "w := 0 ; while w lt {} do {} ; w ++ od",
            rng.gen_range(1..=3u32),
            wf_simple_stmt(rng, scope),
        );
    }
    wf_simple_stmt(rng, scope)
}

fn gen_whilefun(rng: &mut ChaCha8Rng, depth: usize) -> (String, Vec<u64>) {
    let depth = depth.max(1);
    let nfn = rng.gen_range(1..=2usize);
    let mut stmts: Vec<String> = Vec::new();
    let mut sigs: Vec<(String, usize)> = Vec::new();
    for k in 0..nfn {
        let name = format!("f{k}");
        let np = rng.gen_range(0..=2usize);
        let params = &WF_PARAMS[..np];
        let scope: Vec<&str> = WF_GLOBALS.iter().chain(params.iter()).copied().collect();
        let body: Vec<String> = (0..rng.gen_range(1..=depth))
            .map(|_| wf_stmt(rng, &scope, true))
            .collect();
        stmts.push(format!("fn {} ({}) {{ {} }}", name, params.join(", "), body.join(" ; ")));
        sigs.push((name, np));
    }
    for _ in 0..rng.gen_range(1..=depth) {
        stmts.push(wf_stmt(rng, &WF_GLOBALS, true));
    }
    for _ in 0..rng.gen_range(1..=2usize) {
        let (name, np) = sigs.choose(rng).unwrap().clone();
        let args: Vec<String> = (0..np).map(|_| wf_exp(rng, &WF_GLOBALS)).collect();
        stmts.push(format!("Call {} ({})", name, args.join(", ")));
        if rng.gen_bool(0.5) {
            stmts.push(wf_stmt(rng, &WF_GLOBALS, false));
        }
    }
    let result = WF_GLOBALS.choose(rng).unwrap();
    stmts.push(format!("out := {result}"));
    (stmts.join(" ; "), vec![1, 2, 3])
}

const MIPS_REGS: [&str; 6] = ["r1", "r2", "r3", "r4", "r5", "r6"];

fn mips_arith(rng: &mut ChaCha8Rng) -> String {
    let r = |rng: &mut ChaCha8Rng| *MIPS_REGS.choose(rng).unwrap();
    match rng.gen_range(0..4) {
        0 => format!("li {}, {}", r(rng), rng.gen_range(0..=9u32)),
        1 => format!("move {}, {}", r(rng), r(rng)),
        2 => format!("add {}, {}, {}", r(rng), r(rng), r(rng)),
        _ => format!("sub {}, {}, {}", r(rng), r(rng), r(rng)),
    }
}

fn gen_mips(rng: &mut ChaCha8Rng, depth: usize) -> (String, Vec<u64>) {
    let depth = depth.max(1);
    let nfn = rng.gen_range(1..=2usize);
    let mut code: Vec<String> = Vec::new();
    // Fixed opening block so every arithmetic operator appears in each run.
    code.push(format!("li r4, {}", rng.gen_range(0..=9u32)));
    code.push("move r5, r1".into());
    code.push("add r6, r4, r5".into());
    code.push("sub r4, r6, r2".into());
    for _ in 0..rng.gen_range(0..=depth) {
        code.push(mips_arith(rng));
    }
    for k in 0..nfn {
        code.push(format!("jal f{k}"));
        if rng.gen_bool(0.4) {
            code.push(mips_arith(rng));
        }
    }
    code.push("halt".into());

    let mut label_next = 0usize;
    for k in 0..nfn {
        code.push(format!("func f{k} :"));
        for _ in 0..rng.gen_range(0..=depth) {
            code.push(mips_arith(rng));
        }
        if label_next + 3 <= 10 {
            // Forward branch diamond. The nop padding keeps every branch
            // target away from the immediately following instruction, so a
            // taken branch is never mistaken for sequential flow.
            let (lx, ly, lz) = (label_next, label_next + 1, label_next + 2);
            label_next += 3;
            let ra = *MIPS_REGS.choose(rng).unwrap();
            let rb = *MIPS_REGS.choose(rng).unwrap();
            code.push(format!("beq {ra}, {rb}, l{lx}, l{ly}"));
            code.push("nop".into());
            code.push(format!("label l{lx} :"));
            code.push(mips_arith(rng));
            code.push(format!("j l{lz}"));
            code.push("nop".into());
            code.push(format!("label l{ly} :"));
            code.push(mips_arith(rng));
            code.push(format!("label l{lz} :"));
        }
        code.push("endf".into());
    }
    let inputs = (0..3).map(|_| rng.gen_range(0..=9u64)).collect();
    (code.join(" ; "), inputs)
}

/// Summary of a full refinement pass.
#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub candidates: BTreeSet<OpId>,
    pub partition: ContextUpdatePartition,
    pub programs: usize,
    pub completed: usize,
}

/// Synthesize candidates, generate and run `count` seeded programs, and
/// classify every candidate by its observed successor behavior.
pub fn refine(
    m: &SemanticsModule,
    seed: u64,
    count: usize,
    max_steps: u64,
) -> Result<RefineOutcome, RefineError> {
    let synthesis = crate::hypertree::synthesize(m);
    let tests = generate_tests(m, seed, count, 3)?;
    let mut runs = Vec::with_capacity(tests.len());
    let mut completed = 0usize;
    for tc in tests {
        let trace = engine::run_program(m, &tc.program, &tc.inputs, max_steps)?;
        if trace.status == RunStatus::Completed {
            completed += 1;
        }
        runs.push((tc.program, trace));
    }
    let partition = classify(m, &synthesis.candidates, &runs);
    Ok(RefineOutcome {
        candidates: synthesis.candidates,
        partition,
        programs: runs.len(),
        completed,
    })
}

/// Declared names of a set of operators, sorted and deduplicated.
pub fn op_names(m: &SemanticsModule, ops: &BTreeSet<OpId>) -> Vec<String> {
    let mut names: Vec<String> =
        ops.iter().map(|&op| m.sig.op(op).name.clone()).collect();
    names.sort();
    names.dedup();
    names
}
