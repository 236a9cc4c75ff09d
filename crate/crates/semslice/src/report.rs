//! Run reports: a fixed envelope around per-command payloads, carrying the
//! tool version and input digests so a report can be traced back to the
//! exact bytes it was computed from.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::hypertree::Synthesis;
use crate::module::{Diagnostic, SemanticsModule};
use crate::refine::{self, RefineOutcome};
use crate::slicer::{Criterion, Slice};

/// One input named by content.
#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(bytes);
        InputDigest { name: name.into(), sha256: format!("{:x}", h.finalize()) }
    }
}

/// Envelope shared by every command that can emit a machine report. The
/// payload schema is fixed per command; everything else is provenance.
#[derive(Debug, Serialize)]
pub struct RunReport<T> {
    pub command: String,
    pub module: String,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: T,
    pub diagnostics: Vec<Diagnostic>,
    pub timing_ms: u64,
}

impl<T: Serialize> RunReport<T> {
    pub fn new(command: &str, module: &str, inputs: Vec<InputDigest>, outputs: T) -> Self {
        RunReport {
            command: command.to_string(),
            module: module.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            outputs,
            diagnostics: Vec::new(),
            timing_ms: 0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Payload of `synthesize`.
#[derive(Debug, Serialize)]
pub struct SynthesizeOutputs {
    /// Rule labels that may update context, declaration order.
    pub orange: Vec<String>,
    /// Rule labels that cannot, declaration order.
    pub olive: Vec<String>,
    /// Candidate instruction operators, name order.
    pub candidates: Vec<String>,
    /// One witness path per orange root.
    pub audits: Vec<AuditLine>,
    /// Memory effect of each instruction operator, by argument position.
    pub side_effects: Vec<SideEffectLine>,
}

#[derive(Debug, Serialize)]
pub struct AuditLine {
    pub root: String,
    pub witness: String,
}

#[derive(Debug, Serialize)]
pub struct SideEffectLine {
    pub op: String,
    pub dest_args: Vec<usize>,
    pub src_args: Vec<usize>,
    pub dest_unresolved: bool,
}

pub fn synthesize_outputs(m: &SemanticsModule, s: &Synthesis) -> SynthesizeOutputs {
    let side_effects = s
        .side_effects
        .iter()
        .map(|(&op, fact)| SideEffectLine {
            op: m.sig.op(op).name.clone(),
            dest_args: fact.dest.iter().copied().collect(),
            src_args: fact.src.iter().copied().collect(),
            dest_unresolved: fact.dest_unresolved,
        })
        .collect();
    SynthesizeOutputs {
        orange: s.orange.clone(),
        olive: s.olive.clone(),
        candidates: refine::op_names(m, &s.candidates),
        audits: s
            .audits
            .iter()
            .map(|(root, witness)| AuditLine { root: root.clone(), witness: witness.clone() })
            .collect(),
        side_effects,
    }
}

pub fn render_synthesize_text(o: &SynthesizeOutputs) -> String {
    let mut out = String::new();
    out.push_str(&format!("candidates: {}\n", o.candidates.join(" ")));
    out.push_str(&format!("orange: {}\n", o.orange.join(" ")));
    out.push_str(&format!("olive: {}\n", o.olive.join(" ")));
    for a in &o.audits {
        out.push_str(&format!("audit: {}\n", a.witness));
    }
    for e in &o.side_effects {
        let dest = if e.dest_unresolved {
            "unresolved".to_string()
        } else {
            format!("{:?}", e.dest_args)
        };
        out.push_str(&format!("effect {}: dest {} src {:?}\n", e.op, dest, e.src_args));
    }
    out
}

/// Payload of `refine`.
#[derive(Debug, Serialize)]
pub struct RefineOutputs {
    pub seed: u64,
    pub count: usize,
    pub max_steps: u64,
    pub programs: usize,
    pub completed: usize,
    pub candidates: Vec<String>,
    pub function_ops: Vec<String>,
    pub goto_ops: Vec<String>,
    pub sequential: Vec<String>,
    pub conflicting: Vec<String>,
    pub untested: Vec<String>,
}

pub fn refine_outputs(
    m: &SemanticsModule,
    outcome: &RefineOutcome,
    seed: u64,
    count: usize,
    max_steps: u64,
) -> RefineOutputs {
    RefineOutputs {
        seed,
        count,
        max_steps,
        programs: outcome.programs,
        completed: outcome.completed,
        candidates: refine::op_names(m, &outcome.candidates),
        function_ops: refine::op_names(m, &outcome.partition.function_ops),
        goto_ops: refine::op_names(m, &outcome.partition.goto_ops),
        sequential: refine::op_names(m, &outcome.partition.sequential),
        conflicting: refine::op_names(m, &outcome.partition.conflicting),
        untested: refine::op_names(m, &outcome.partition.untested),
    }
}

pub fn render_refine_text(o: &RefineOutputs) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "programs: {} generated (seed {}), {} completed\n",
        o.programs, o.seed, o.completed
    ));
    out.push_str(&format!("candidates: {}\n", o.candidates.join(" ")));
    out.push_str(&format!("function: {}\n", o.function_ops.join(" ")));
    out.push_str(&format!("goto: {}\n", o.goto_ops.join(" ")));
    out.push_str(&format!("sequential: {}\n", o.sequential.join(" ")));
    out.push_str(&format!("conflicting: {}\n", o.conflicting.join(" ")));
    out.push_str(&format!("untested: {}\n", o.untested.join(" ")));
    out
}

/// Payload of `slice`.
#[derive(Debug, Serialize)]
pub struct SliceOutputs {
    pub criterion: Vec<String>,
    pub point: Option<u32>,
    pub total_points: usize,
    pub kept: Vec<u32>,
    pub final_criterion: Vec<String>,
    pub rounds: usize,
    pub reduction_percent: f64,
}

pub fn slice_outputs(crit: &Criterion, s: &Slice, total_points: usize) -> SliceOutputs {
    SliceOutputs {
        criterion: crit.variables.iter().cloned().collect(),
        point: crit.point,
        total_points,
        kept: s.kept.iter().copied().collect(),
        final_criterion: s.final_criterion.iter().cloned().collect(),
        rounds: s.rounds,
        reduction_percent: crate::slicer::reduction_percent(s.kept.len(), total_points),
    }
}

pub fn render_slice_text(o: &SliceOutputs) -> String {
    let mut out = String::new();
    out.push_str(&format!("points: {}\n", o.total_points));
    let kept: Vec<String> = o.kept.iter().map(|i| i.to_string()).collect();
    out.push_str(&format!("kept: {}\n", kept.join(" ")));
    out.push_str(&format!("criterion: {}\n", o.criterion.join(" ")));
    out.push_str(&format!("final criterion: {}\n", o.final_criterion.join(" ")));
    out.push_str(&format!("rounds: {}\n", o.rounds));
    out.push_str(&format!("red(%) = {:.1}\n", o.reduction_percent));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_stable_hex() {
        let d = InputDigest::of_bytes("x", b"hello");
        assert_eq!(d.sha256.len(), 64);
        assert_eq!(d.sha256, InputDigest::of_bytes("y", b"hello").sha256);
        assert_ne!(d.sha256, InputDigest::of_bytes("x", b"hullo").sha256);
    }

    #[test]
    fn report_serializes_with_envelope_fields() {
        let r = RunReport::new("synthesize", "whilefun", vec![], serde_json::json!({"k": 1}));
        let text = r.to_json();
        for key in ["command", "module", "version", "inputs", "outputs", "diagnostics"] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn slice_text_reports_one_decimal_reduction() {
        let o = SliceOutputs {
            criterion: vec!["z".into()],
            point: None,
            total_points: 3,
            kept: vec![0, 2],
            final_criterion: vec!["x".into(), "z".into()],
            rounds: 2,
            reduction_percent: crate::slicer::reduction_percent(2, 3),
        };
        let text = render_slice_text(&o);
        assert!(text.contains("red(%) = 33.3\n"), "got:\n{text}");
    }
}
