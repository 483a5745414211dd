//! Causal attribution over a structure ledger and template-driven reports.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use spinereport_logic::{
    entails, induce, parse_program, Clause, Hypothesis, InduceConfig, InduceOutcome, LogicError, Metarule, Program,
    Term,
};

use crate::labeling::{StructureLedger, Verdict};
use crate::phantom::RelationFactSet;
use crate::segmap::Kind;
use crate::{CoreError, Result};

pub const TEMPLATE_V1: &str = include_str!("../templates/v1.txt");

/// Disease vocabulary and the pathogenic links known before learning.
pub const CAUSAL_BACKGROUND: &str = "\
mayCause/2. dis/1.
dis(idd). dis(lvd). dis(nfs). dis(others). dis(normal).
mayCause(idd,nfs). mayCause(lvd,nfs). mayCause(others,nfs).
";

/// The two-clause cause/3 hypothesis in listing form.
pub const REFERENCE_HYPOTHESIS: &str = "cause(A,B,C):- dis(A), dis(B), dis(C), mayCause(A,C); mayCause(B,C).";

pub fn causal_background() -> Program {
    Program::from_parsed(parse_program(CAUSAL_BACKGROUND).expect("builtin knowledgebase parses"))
}

pub fn reference_hypothesis() -> Vec<Clause> {
    parse_program(REFERENCE_HYPOTHESIS).expect("builtin hypothesis parses").clauses
}

pub fn parse_hypothesis(text: &str) -> Result<Vec<Clause>> {
    Ok(parse_program(text).map_err(LogicError::from)?.clauses)
}

pub fn hypothesis_text(clauses: &[Clause]) -> String {
    clauses.iter().map(|c| format!("{c}\n")).collect()
}

/// Pools MIL examples over a corpus and induces cause/3.
pub fn induce_hypothesis(background: &Program, facts: &[RelationFactSet]) -> Result<Hypothesis> {
    let mut pos = BTreeSet::new();
    let mut neg = BTreeSet::new();
    for f in facts {
        pos.extend(f.positives.iter().cloned());
        neg.extend(f.negatives.iter().cloned());
    }
    let (pos, neg): (Vec<Term>, Vec<Term>) = (pos.into_iter().collect(), neg.into_iter().collect());
    match induce(background, &pos, &neg, &Metarule::causal_set(), InduceConfig::default())? {
        InduceOutcome::Found(h) => Ok(h),
        InduceOutcome::NotFound(p) => Err(CoreError::invalid(format!(
            "no hypothesis within bounds: covered {}/{} positives, first unproved {}",
            p.covered,
            p.total,
            p.first_unproved.map_or_else(|| "-".into(), |t| t.to_string())
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Factor {
    #[serde(rename = "IDD")]
    Idd,
    #[serde(rename = "LVD")]
    Lvd,
    #[serde(rename = "others")]
    Others,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::Idd => "IDD",
            Factor::Lvd => "LVD",
            Factor::Others => "others",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attribution {
    pub factor: Factor,
    /// Level key of the causing structure; `None` for `others`.
    pub source: Option<String>,
    /// Ground cause/3 atom the hypothesis entails for this factor.
    pub evidence: String,
}

impl fmt::Display for Attribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(s) => write!(f, "{} at {s}", self.factor.name()),
            None => f.write_str(self.factor.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub id: usize,
    pub key: String,
    pub kind: Kind,
    pub verdict: Verdict,
    /// Non-empty exactly for abnormal foramina.
    pub attributions: Vec<Attribution>,
}

fn cause_atom(disc: &str, vert: &str) -> Term {
    Term::atom("cause", &[disc, vert, "nfs"])
}

fn constant(kind: Kind, verdict: Option<Verdict>) -> &'static str {
    crate::phantom::disease_constant(kind, verdict.is_some_and(Verdict::is_abnormal))
}

/// Flanking vertebra names of a level key such as `L4-L5`.
fn flanks(key: &str) -> Vec<&str> {
    key.split('-').collect()
}

/// One finding per ledger entry, with causes for every stenotic foramen.
///
/// A factor is attributed when the hypothesis entails the cause/3 atom with
/// that factor alone abnormal, so each attribution is its own back-check.
pub fn attribute_causes(ledger: &StructureLedger, background: &Program, hypothesis: &[Clause]) -> Result<Vec<Finding>> {
    let control = cause_atom("normal", "normal");
    if entails(background, hypothesis, &control)? {
        return Err(CoreError::invalid(format!("hypothesis entails the negative control {control}")));
    }
    let verdict = |kind: Kind, key: &str| ledger.get(kind, key).map(|e| e.verdict);
    let mut findings = Vec::new();
    for kind in Kind::ALL {
        for e in ledger.table(kind) {
            let mut attributions = BTreeSet::new();
            if kind == Kind::Foramen && e.verdict.is_abnormal() {
                let disc = constant(Kind::Disc, verdict(Kind::Disc, &e.key));
                let mut any_bad = disc != "normal";
                for name in flanks(&e.key) {
                    let vert = constant(Kind::Vertebra, verdict(Kind::Vertebra, name));
                    any_bad |= vert != "normal";
                    if !entails(background, hypothesis, &cause_atom(disc, vert))? {
                        continue;
                    }
                    let alone = cause_atom(disc, "normal");
                    if disc != "normal" && entails(background, hypothesis, &alone)? {
                        attributions.insert(Attribution {
                            factor: Factor::Idd,
                            source: Some(e.key.clone()),
                            evidence: alone.to_string(),
                        });
                    }
                    let alone = cause_atom("normal", vert);
                    if vert != "normal" && entails(background, hypothesis, &alone)? {
                        attributions.insert(Attribution {
                            factor: Factor::Lvd,
                            source: Some(name.to_string()),
                            evidence: alone.to_string(),
                        });
                    }
                }
                if !any_bad {
                    let others = cause_atom("others", "others");
                    if entails(background, hypothesis, &others)? {
                        attributions.insert(Attribution { factor: Factor::Others, source: None, evidence: others.to_string() });
                    }
                }
                if attributions.is_empty() {
                    return Err(CoreError::invalid(format!("hypothesis explains no cause for the stenotic foramen at {}", e.key)));
                }
            }
            findings.push(Finding {
                id: findings.len(),
                key: e.key.clone(),
                kind,
                verdict: e.verdict,
                attributions: attributions.into_iter().collect(),
            });
        }
    }
    Ok(findings)
}

/// Verdict pattern of one level: disc, flanking vertebrae, foramen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pattern {
    pub disc: bool,
    pub vertebra: bool,
    pub foramen: bool,
}

impl Pattern {
    pub const ALL: [Pattern; 8] = {
        let mut all = [Pattern { disc: false, vertebra: false, foramen: false }; 8];
        let mut i = 0;
        while i < 8 {
            all[i] = Pattern { disc: i & 4 != 0, vertebra: i & 2 != 0, foramen: i & 1 != 0 };
            i += 1;
        }
        all
    };

    pub fn code(self) -> String {
        [self.disc, self.vertebra, self.foramen].iter().map(|&a| if a { 'A' } else { 'N' }).collect()
    }

    fn parse(code: &str) -> Option<Pattern> {
        let b: Vec<bool> = code
            .chars()
            .map(|c| match c {
                'A' => Some(true),
                'N' => Some(false),
                _ => None,
            })
            .collect::<Option<_>>()?;
        (b.len() == 3).then(|| Pattern { disc: b[0], vertebra: b[1], foramen: b[2] })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |a: bool| if a { "abnormal" } else { "normal" };
        write!(f, "disc={} vertebra={} foramen={}", v(self.disc), v(self.vertebra), v(self.foramen))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub version: String,
    rules: Vec<(Pattern, String)>,
}

impl Template {
    pub fn v1() -> Template {
        Template::parse("v1", TEMPLATE_V1).expect("builtin template parses")
    }

    /// `PATTERN = TEXT` per line; `#` starts a comment line.
    pub fn parse(version: &str, text: &str) -> Result<Template> {
        let mut rules: Vec<(Pattern, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || CoreError::invalid(format!("template {version} line {}: expected PATTERN = TEXT", n + 1));
            let (code, body) = line.split_once('=').ok_or_else(bad)?;
            let p = Pattern::parse(code.trim()).ok_or_else(bad)?;
            if rules.iter().any(|(q, _)| *q == p) {
                return Err(CoreError::invalid(format!("template {version} line {}: duplicate rule for {p}", n + 1)));
            }
            rules.push((p, body.trim().to_string()));
        }
        Ok(Template { version: version.to_string(), rules })
    }

    pub fn rule(&self, p: Pattern) -> Result<&str> {
        self.rules
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, t)| t.as_str())
            .ok_or_else(|| CoreError::invalid(format!("template {}: no rule for pattern {p}", self.version)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub level: String,
    pub text: String,
    /// Ids of the findings the sentence describes.
    pub findings: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub template_version: String,
    pub findings: Vec<Finding>,
    pub sentences: Vec<Sentence>,
    pub summary: String,
}

fn vertebra_phrase(above: bool, below: bool) -> (&'static str, &'static str) {
    match (above, below) {
        (true, true) => ("both adjacent vertebrae", "have"),
        (false, true) => ("the below vertebra", "has"),
        _ => ("the above vertebra", "has"),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// One sentence per disc level, top to bottom, then a summary line.
pub fn render_report(id: &str, findings: &[Finding], template: &Template) -> Result<Report> {
    let find = |kind: Kind, key: &str| findings.iter().find(|f| f.kind == kind && f.key == key);
    let mut levels: Vec<&str> = findings.iter().filter(|f| f.kind == Kind::Disc).map(|f| f.key.as_str()).collect();
    for f in findings.iter().filter(|f| f.kind == Kind::Foramen) {
        if !levels.contains(&f.key.as_str()) {
            levels.push(&f.key);
        }
    }
    let bad = |f: Option<&Finding>| f.is_some_and(|f| f.verdict.is_abnormal());
    let mut sentences = Vec::with_capacity(levels.len());
    for level in levels {
        let disc = find(Kind::Disc, level);
        let foramen = find(Kind::Foramen, level);
        let names = flanks(level);
        let verts: Vec<Option<&Finding>> = names.iter().map(|n| find(Kind::Vertebra, n)).collect();
        let above = verts.first().copied().flatten().is_some_and(|f| f.verdict.is_abnormal());
        let below = verts.len() > 1 && bad(verts[verts.len() - 1]);
        let pattern = Pattern { disc: bad(disc), vertebra: above || below, foramen: bad(foramen) };
        let (vertebra, has) = vertebra_phrase(above, below);
        let text = template
            .rule(pattern)?
            .replace("{level}", level)
            .replace("{Vertebra}", &capitalize(vertebra))
            .replace("{vertebra}", vertebra)
            .replace("{has}", has);
        let mut ids: Vec<usize> = disc.into_iter().chain(verts.into_iter().flatten()).chain(foramen).map(|f| f.id).collect();
        ids.sort_unstable();
        sentences.push(Sentence { level: level.to_string(), text, findings: ids });
    }
    let abnormal: Vec<String> = findings
        .iter()
        .filter(|f| f.verdict.is_abnormal())
        .map(|f| format!("{} {}", f.kind, f.key))
        .collect();
    let summary = if abnormal.is_empty() {
        "No abnormal findings at any level.".to_string()
    } else {
        format!("Abnormal findings: {}.", abnormal.join(", "))
    };
    Ok(Report { id: id.to_string(), template_version: template.version.clone(), findings: findings.to_vec(), sentences, summary })
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Spine report: {}", self.id);
        let _ = writeln!(out, "Template: {}", self.template_version);
        out.push('\n');
        for s in &self.sentences {
            let _ = write!(out, "{}: {}", s.level, s.text);
            let causes: Vec<String> = s
                .findings
                .iter()
                .map(|&i| &self.findings[i])
                .filter(|f| f.kind == Kind::Foramen)
                .flat_map(|f| f.attributions.iter().map(ToString::to_string))
                .collect();
            if !causes.is_empty() {
                let _ = write!(out, " [causes: {}]", causes.join("; "));
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(out, "Summary: {}", self.summary);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Report> {
        serde_json::from_str(text).map_err(|e| CoreError::invalid(format!("report json: {e}")))
    }
}

/// Re-proves every attribution's evidence atom; returns the ones that fail.
pub fn unsupported_attributions(report: &Report, background: &Program, hypothesis: &[Clause]) -> Result<Vec<String>> {
    let mut failed = Vec::new();
    for f in &report.findings {
        for a in &f.attributions {
            let atom = spinereport_logic::parse_term(&a.evidence).map_err(LogicError::from)?;
            if !entails(background, hypothesis, &atom)? {
                failed.push(format!("{} {}: {}", f.kind, f.key, a.evidence));
            }
        }
    }
    Ok(failed)
}

/// True-positive, predicted and reference counts; sums over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub hits: usize,
    pub predicted: usize,
    pub reference: usize,
}

impl Counts {
    fn of<T: Ord>(pred: BTreeSet<T>, truth: BTreeSet<T>) -> Counts {
        Counts { hits: pred.intersection(&truth).count(), predicted: pred.len(), reference: truth.len() }
    }

    /// Empty prediction sets have precision 1.
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 { 1.0 } else { self.hits as f64 / self.predicted as f64 }
    }

    /// Empty reference sets have recall 1.
    pub fn recall(&self) -> f64 {
        if self.reference == 0 { 1.0 } else { self.hits as f64 / self.reference as f64 }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.hits += o.hits;
        self.predicted += o.predicted;
        self.reference += o.reference;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCounts {
    pub structures: Counts,
    pub causes: Counts,
}

impl std::ops::AddAssign for KeywordCounts {
    fn add_assign(&mut self, o: KeywordCounts) {
        self.structures += o.structures;
        self.causes += o.causes;
    }
}

type CauseKey = (String, Factor, Option<String>);

/// Causes of each stenotic foramen read directly off a ledger: every
/// abnormal flank, or `others` when the flanks are all normal.
pub fn reference_causes(ledger: &StructureLedger) -> BTreeSet<CauseKey> {
    let mut out = BTreeSet::new();
    for f in ledger.foramina.iter().filter(|f| f.verdict.is_abnormal()) {
        let mut any = false;
        if ledger.get(Kind::Disc, &f.key).is_some_and(|d| d.verdict.is_abnormal()) {
            out.insert((f.key.clone(), Factor::Idd, Some(f.key.clone())));
            any = true;
        }
        for name in flanks(&f.key) {
            if ledger.get(Kind::Vertebra, name).is_some_and(|v| v.verdict.is_abnormal()) {
                out.insert((f.key.clone(), Factor::Lvd, Some(name.to_string())));
                any = true;
            }
        }
        if !any {
            out.insert((f.key.clone(), Factor::Others, None));
        }
    }
    out
}

/// Keyword agreement of a report with a reference ledger over
/// (level, kind, verdict) triples and over causal attributions.
pub fn evaluate_report_keywords(report: &Report, truth: &StructureLedger) -> KeywordCounts {
    let pred: BTreeSet<(String, Kind, Verdict)> = report.findings.iter().map(|f| (f.key.clone(), f.kind, f.verdict)).collect();
    let reference = truth.verdicts().into_iter().map(|(k, key, v)| (key, k, v)).collect();
    let causes: BTreeSet<CauseKey> = report
        .findings
        .iter()
        .flat_map(|f| f.attributions.iter().map(move |a| (f.key.clone(), a.factor, a.source.clone())))
        .collect();
    KeywordCounts { structures: Counts::of(pred, reference), causes: Counts::of(causes, reference_causes(truth)) }
}

/// Attribution followed by rendering.
pub fn report_from_ledger(
    id: &str,
    ledger: &StructureLedger,
    background: &Program,
    hypothesis: &[Clause],
    template: &Template,
) -> Result<Report> {
    render_report(id, &attribute_causes(ledger, background, hypothesis)?, template)
}
