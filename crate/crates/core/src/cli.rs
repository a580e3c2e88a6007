//! Experiment driver behind the `polybesov` binary. Every experiment writes
//! CSV reports with `#` metadata headers plus a `manifest.json`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::approx::{
    alpha_star, extremal_rate_samples, fit_rate, is_growing, is_stable, nterm_curve, predicted_rate,
    synth_field, tail_sums, uniform_approx, whitney_check, NTermPlan, RateReport, Square, SynthKind, TailClass,
};
use crate::bem::{
    analyze_solution, assemble, interior_points, potential_eval, rhs_vector, solve_rhs, AnalysisOptions, Convention,
    HarmonicProbe, QuadConfig, SolveOptions, SolverKind,
};
use crate::error::{Error, Result};
use crate::jet::Jet2;
use crate::models::{Constant, Cutoff, EdgeDistance, EdgeModel, Exponential, SmoothFunction, VertexModel};
use crate::report::{fmt_f64, rate_csv, CsvReport, Manifest};
use crate::spaces::{
    adaptivity_tau, besov_norm, weighted_sobolev_norm, BesovSpec, GradedOptions, WeightedSpec,
};
use crate::surface::{PolyhedralSurface, ResolutionOfUnity, Vec3};
use crate::wavelet::{analyze, AnalyzeOptions, BasisSpec, CoefficientField, Family};

#[derive(Debug, Parser)]
#[command(name = "polybesov", version, about = "Wavelet Besov norms, n-term rates and double layer solves on polyhedral surfaces")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Besov-type norms of a model function.
    Norms(NormsArgs),
    /// Best n-term and uniform approximation errors with fitted rates.
    Nterm(NtermArgs),
    /// Critical-line tail sums and the embedding ratio for a model function.
    EmbedCheck(EmbedArgs),
    /// Double layer solve, density output and optional wavelet analysis.
    BemSolve(BemArgs),
    /// Local polynomial approximation ratios on shrinking squares.
    Whitney(WhitneyArgs),
    /// Synthetic coefficient fields.
    Synth(SynthArgs),
    /// Runs an experiment described by a JSON file.
    Run {
        config: PathBuf,
    },
}

/// One experiment; the JSON form carries the subcommand name in `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Norms(NormsArgs),
    Nterm(NtermArgs),
    EmbedCheck(EmbedArgs),
    BemSolve(BemArgs),
    Whitney(WhitneyArgs),
    Synth(SynthArgs),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Norms(_) => "norms",
            Experiment::Nterm(_) => "nterm",
            Experiment::EmbedCheck(_) => "embed-check",
            Experiment::BemSolve(_) => "bem-solve",
            Experiment::Whitney(_) => "whitney",
            Experiment::Synth(_) => "synth",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Experiment::Norms(a) => &a.out,
            Experiment::Nterm(a) => &a.out,
            Experiment::EmbedCheck(a) => &a.out,
            Experiment::BemSolve(a) => &a.out,
            Experiment::Whitney(a) => &a.out,
            Experiment::Synth(a) => &a.out,
        }
    }

    /// Parses a JSON experiment, reporting the line and column of any error.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| cfg_err(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        let obj = value.as_object_mut().ok_or_else(|| cfg_err("line 1, column 1: expected a JSON object"))?;
        let kind = match obj.remove("kind") {
            Some(serde_json::Value::String(k)) => k,
            Some(_) => return Err(at_key(text, "kind", "`kind` must be a string")),
            None => return Err(cfg_err("line 1, column 1: missing field `kind`")),
        };
        // parse the body separately so field errors can be traced back to a line
        Ok(match kind.as_str() {
            "norms" => Experiment::Norms(body(text, value)?),
            "nterm" => Experiment::Nterm(body(text, value)?),
            "embed-check" => Experiment::EmbedCheck(body(text, value)?),
            "bem-solve" => Experiment::BemSolve(body(text, value)?),
            "whitney" => Experiment::Whitney(body(text, value)?),
            "synth" => Experiment::Synth(body(text, value)?),
            other => return Err(at_key(text, "kind", &format!("unknown experiment kind {other:?}"))),
        })
    }
}

fn body<T: serde::de::DeserializeOwned>(text: &str, value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        // unknown fields are reported against the enclosing object; the name is in the message
        let key = match msg.split('`').nth(1) {
            Some(k) if msg.starts_with("unknown field") => k.to_string(),
            _ => path.split('.').next().unwrap_or("").to_string(),
        };
        at_key(text, &key, &format!("field `{path}`: {msg}"))
    })
}

fn at_key(text: &str, key: &str, msg: &str) -> Error {
    let (line, col) = key_position(text, key);
    cfg_err(format!("line {line}, column {col}: {msg}"))
}

fn key_position(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (i, l) in text.lines().enumerate() {
        if let Some(c) = l.find(&needle) {
            return (i + 1, c + 1);
        }
    }
    (0, 0)
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormsArgs {
    /// `cube`, `fichera` or a surface JSON file.
    #[arg(long, default_value_t = NormsArgs::default().surface)]
    pub surface: String,
    /// `haar` or `linear`.
    #[arg(long, default_value_t = NormsArgs::default().basis)]
    pub basis: String,
    /// Finest wavelet level J.
    #[arg(long, default_value_t = NormsArgs::default().level)]
    pub level: u32,
    /// Function, e.g. `vertex:0,0.6`, `edge:0,0.6`, `exp:1,0.5,0`, `const:1`.
    #[arg(long, default_value_t = NormsArgs::default().function)]
    pub function: String,
    /// Parameter triples `alpha,p,q` (`inf` allowed); repeatable.
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for NormsArgs {
    fn default() -> Self {
        Self {
            surface: "cube".into(),
            basis: "haar".into(),
            level: 5,
            function: "vertex:0,0.6".into(),
            specs: Vec::new(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NtermArgs {
    #[arg(long, default_value_t = NtermArgs::default().surface)]
    pub surface: String,
    #[arg(long, default_value_t = NtermArgs::default().basis)]
    pub basis: String,
    #[arg(long, default_value_t = NtermArgs::default().level)]
    pub level: u32,
    /// `extremal:J,ALPHA,GAMMA`, `lacunary:ALPHA`, `saturating:ALPHA`, `random:ALPHA,P,Q,SEED`,
    /// `extremal-sup` (worst case over the unit ball of `--source-spec`), `function:<function>` or `field:<path>`.
    #[arg(long, default_value_t = NtermArgs::default().source)]
    pub source: String,
    /// Space the source is known to lie in, `alpha,p,q`; gives the predicted exponent.
    #[arg(long)]
    pub source_spec: Option<String>,
    /// Target `alpha,p` (q = p).
    #[arg(long, default_value_t = NtermArgs::default().target)]
    pub target: String,
    /// Term counts; powers of two from 16 by default.
    #[arg(long, value_delimiter = ',')]
    pub ns: Vec<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for NtermArgs {
    fn default() -> Self {
        Self {
            surface: "cube".into(),
            basis: "haar".into(),
            level: 6,
            source: "saturating:1".into(),
            source_spec: None,
            target: "0,2".into(),
            ns: Vec::new(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedArgs {
    #[arg(long, default_value_t = EmbedArgs::default().surface)]
    pub surface: String,
    #[arg(long, default_value_t = EmbedArgs::default().basis)]
    pub basis: String,
    #[arg(long, default_value_t = EmbedArgs::default().level)]
    pub level: u32,
    #[arg(long, default_value_t = EmbedArgs::default().function)]
    pub function: String,
    /// Besov smoothness `s` of the `(s, p, p)` membership.
    #[arg(long, default_value_t = EmbedArgs::default().s)]
    pub s: f64,
    #[arg(long, default_value_t = EmbedArgs::default().p)]
    pub p: f64,
    #[arg(long, default_value_t = EmbedArgs::default().k)]
    pub k: u32,
    #[arg(long, default_value_t = EmbedArgs::default().rho)]
    pub rho: f64,
    /// Smoothness values on the critical line; fractions 0.3, 0.5, 0.7 of 2 alpha* by default.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Sharpness probe at this multiple of 2 alpha*.
    #[arg(long, default_value_t = EmbedArgs::default().probe)]
    pub probe: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for EmbedArgs {
    fn default() -> Self {
        Self {
            surface: "cube".into(),
            basis: "haar".into(),
            level: 6,
            function: "vertex:0,0.6".into(),
            s: 0.59,
            p: 2.0,
            k: 1,
            rho: 0.5,
            alphas: Vec::new(),
            probe: 1.2,
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BemArgs {
    #[arg(long, default_value_t = BemArgs::default().surface)]
    pub surface: String,
    /// Discretization level L.
    #[arg(long, default_value_t = BemArgs::default().level)]
    pub level: u32,
    /// `constant`, `harmonic:linear`, `harmonic:pole:PX,PY,PZ`, `file:<csv>` or a function.
    #[arg(long, default_value_t = BemArgs::default().rhs)]
    pub rhs: String,
    /// Wavelet level J of the density analysis (J <= L); omitted skips the analysis.
    #[arg(long)]
    pub analyze: Option<u32>,
    #[arg(long, default_value_t = BemArgs::default().basis)]
    pub basis: String,
    #[arg(long, default_value_t = BemArgs::default().s_prime)]
    pub s_prime: f64,
    #[arg(long, default_value_t = BemArgs::default().s)]
    pub s: f64,
    #[arg(long, default_value_t = BemArgs::default().k)]
    pub k: u32,
    #[arg(long, default_value_t = BemArgs::default().rho)]
    pub rho: f64,
    #[arg(long, default_value_t = BemArgs::default().tau)]
    pub tau: f64,
    /// `auto`, `lu` or `gmres`.
    #[arg(long, default_value_t = BemArgs::default().solver)]
    pub solver: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for BemArgs {
    fn default() -> Self {
        Self {
            surface: "cube".into(),
            level: 3,
            rhs: "constant".into(),
            analyze: None,
            basis: "haar".into(),
            s_prime: 0.0,
            s: 0.6,
            k: 1,
            rho: 0.5,
            tau: 1.0,
            solver: "auto".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhitneyArgs {
    /// `sin` (sin(x + 2y)), `exp` (exp(x - y)), `cosprod` (cos 3x cos y), `x2`, `linear`, `const`.
    #[arg(long, default_value_t = WhitneyArgs::default().function)]
    pub function: String,
    #[arg(long, default_value_t = WhitneyArgs::default().k)]
    pub k: u32,
    #[arg(long, default_value_t = WhitneyArgs::default().x0)]
    pub x0: f64,
    #[arg(long, default_value_t = WhitneyArgs::default().y0)]
    pub y0: f64,
    /// Side of the largest square.
    #[arg(long, default_value_t = WhitneyArgs::default().h)]
    pub h: f64,
    #[arg(long, default_value_t = WhitneyArgs::default().shrinks)]
    pub shrinks: u32,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for WhitneyArgs {
    fn default() -> Self {
        Self { function: "sin".into(), k: 1, x0: 0.2, y0: 0.1, h: 0.5, shrinks: 6, out: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// `extremal:J,ALPHA,GAMMA`, `lacunary:ALPHA`, `saturating:ALPHA` or `random:ALPHA,P,Q`.
    #[arg(long, default_value_t = SynthArgs::default().generator)]
    pub generator: String,
    #[arg(long, default_value_t = SynthArgs::default().surface)]
    pub surface: String,
    #[arg(long, default_value_t = SynthArgs::default().basis)]
    pub basis: String,
    #[arg(long, default_value_t = SynthArgs::default().level)]
    pub level: u32,
    #[arg(long, default_value_t = SynthArgs::default().seed)]
    pub seed: u64,
    /// Norm reported for the field, `alpha,p,q`.
    #[arg(long, default_value_t = SynthArgs::default().spec)]
    pub spec: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self {
            generator: "extremal:3,0.5,0".into(),
            surface: "cube".into(),
            basis: "haar".into(),
            level: 4,
            seed: 42,
            spec: "0.5,2,2".into(),
            out: "out".into(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|_| cfg_err(format!("not a number: {t:?}"))),
    }
}

fn parse_list(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s.split(',').map(parse_f64).collect::<Result<_>>()?;
    if v.len() != n {
        return Err(cfg_err(format!("{what} needs {n} comma-separated values, got {s:?}")));
    }
    Ok(v)
}

/// `alpha,p,q`, checked for admissibility.
pub fn parse_spec(s: &str) -> Result<BesovSpec> {
    let v = parse_list(s, 3, "spec")?;
    let spec = BesovSpec::new(v[0], v[1], v[2]);
    if !spec.is_admissible() {
        return Err(cfg_err(format!("spec {spec} is not admissible")));
    }
    Ok(spec)
}

pub fn parse_basis(s: &str) -> Result<BasisSpec> {
    match Family::parse(s) {
        Some(Family::Haar) => Ok(BasisSpec::haar()),
        Some(Family::Linear) => Ok(BasisSpec::linear()),
        None => Err(cfg_err(format!("unknown basis {s:?} (haar, linear)"))),
    }
}

pub fn load_surface(s: &str) -> Result<PolyhedralSurface> {
    match s {
        "cube" => Ok(PolyhedralSurface::unit_cube()),
        "fichera" => Ok(PolyhedralSurface::fichera()),
        path => Ok(PolyhedralSurface::load(Path::new(path))?),
    }
}

fn vertex_arg(surface: &PolyhedralSurface, v: f64) -> Result<usize> {
    let n = v as usize;
    if v < 0.0 || v.fract() != 0.0 || n >= surface.num_vertices() {
        return Err(cfg_err(format!("vertex {v} out of range")));
    }
    Ok(n)
}

/// Model functions by name: `const:C`, `exp:VX,VY,VZ`, `vertex:N,BETA`, `edge:N,BETA`,
/// `edgedist:N1,N2,BETA,INNER,OUTER`.
pub fn parse_function(surface: &PolyhedralSurface, s: &str) -> Result<Box<dyn SmoothFunction>> {
    let (name, args) = s.split_once(':').unwrap_or((s, ""));
    Ok(match name {
        "const" => Box::new(Constant(parse_list(args, 1, "const")?[0])),
        "exp" => {
            let v = parse_list(args, 3, "exp")?;
            Box::new(Exponential(Vec3::new(v[0], v[1], v[2])))
        }
        "vertex" => {
            let v = parse_list(args, 2, "vertex")?;
            Box::new(VertexModel::standard(surface, vertex_arg(surface, v[0])?, v[1]))
        }
        "edge" => {
            let v = parse_list(args, 2, "edge")?;
            Box::new(EdgeModel::standard(surface, vertex_arg(surface, v[0])?, v[1]))
        }
        "edgedist" => {
            let v = parse_list(args, 5, "edgedist")?;
            let a = surface.vertices[vertex_arg(surface, v[0])?];
            let b = surface.vertices[vertex_arg(surface, v[1])?];
            Box::new(EdgeDistance { a, b, beta: v[2], cutoff: Cutoff { inner: v[3], outer: v[4] } })
        }
        _ => return Err(cfg_err(format!("unknown function {s:?}"))),
    })
}

fn analyze_function(surface: &PolyhedralSurface, f: &dyn SmoothFunction, basis: &BasisSpec, level: u32) -> Result<CoefficientField> {
    Ok(analyze(surface, |p| f.value(p), basis, level, &AnalyzeOptions::default())?)
}

fn parse_synth(s: &str, seed: u64) -> Result<SynthKind> {
    let (name, args) = s.split_once(':').unwrap_or((s, ""));
    Ok(match name {
        "extremal" => {
            let v = parse_list(args, 3, "extremal")?;
            SynthKind::ExtremalAStar { level: v[0] as u32, alpha: v[1], gamma: v[2] }
        }
        "lacunary" => SynthKind::Lacunary { alpha: parse_list(args, 1, "lacunary")?[0] },
        "saturating" => SynthKind::Saturating { alpha: parse_list(args, 1, "saturating")?[0] },
        "random" => {
            let v: Vec<&str> = args.split(',').collect();
            let spec = parse_spec(&v[..v.len().min(3)].join(","))?;
            let seed = if v.len() == 4 { v[3].trim().parse().map_err(|_| cfg_err("bad seed"))? } else { seed };
            SynthKind::RandomBesov { spec, seed }
        }
        _ => return Err(cfg_err(format!("unknown synthetic field {s:?}"))),
    })
}

/// `(alpha, p)` target with `q = p`.
fn parse_target(s: &str) -> Result<BesovSpec> {
    let v = parse_list(s, 2, "target")?;
    let t = BesovSpec::new(v[0], v[1], v[1]);
    if !t.is_admissible() || !v[1].is_finite() {
        return Err(cfg_err(format!("target {t} is not admissible with finite p")));
    }
    Ok(t)
}

/// Checks an experiment without running it.
pub fn validate(e: &Experiment) -> Result<()> {
    match e {
        Experiment::Norms(a) => {
            parse_basis(&a.basis)?;
            for s in &a.specs {
                parse_spec(s)?;
            }
        }
        Experiment::Nterm(a) => {
            parse_basis(&a.basis)?;
            parse_target(&a.target)?;
            if let Some(s) = &a.source_spec {
                parse_spec(s)?;
            }
        }
        Experiment::EmbedCheck(a) => {
            parse_basis(&a.basis)?;
            alpha_star(a.rho, a.k, a.s, a.p)?;
        }
        Experiment::BemSolve(a) => {
            parse_basis(&a.basis)?;
            if let Some(j) = a.analyze {
                if j > a.level {
                    return Err(cfg_err(format!("analysis level J = {j} exceeds discretization level L = {}", a.level)));
                }
            }
            parse_solver(&a.solver)?;
        }
        Experiment::Whitney(a) => {
            whitney_function(&a.function)?;
        }
        Experiment::Synth(a) => {
            parse_basis(&a.basis)?;
            parse_spec(&a.spec)?;
            parse_synth(&a.generator, a.seed)?;
        }
    }
    Ok(())
}

/// Runs one experiment and returns the written files (CSV reports, then the manifest).
pub fn run(e: &Experiment) -> Result<Vec<PathBuf>> {
    validate(e)?;
    let reports = match e {
        Experiment::Norms(a) => norms(a)?,
        Experiment::Nterm(a) => nterm(a)?,
        Experiment::EmbedCheck(a) => embed_check(a)?.1,
        Experiment::BemSolve(a) => bem_solve(a)?,
        Experiment::Whitney(a) => whitney(a)?,
        Experiment::Synth(a) => synth(a)?,
    };
    let dir = e.out();
    let config = serde_json::to_value(e).map_err(|err| cfg_err(err.to_string()))?;
    let mut manifest = Manifest::new(e.name(), config);
    manifest.tolerances.insert("admissibility_rel_tol".into(), 1e-12);
    manifest.tolerances.insert("growth_per_level".into(), crate::approx::GROWTH_TOL);
    manifest.tolerances.insert("rate_rel_tol".into(), crate::approx::RATE_REL_TOL);
    let mut paths = Vec::new();
    for r in &reports {
        let p = r.write(dir)?;
        manifest.add_output(dir, &p)?;
        paths.push(p);
    }
    if let Experiment::Synth(a) = e {
        let p = dir.join("field.pbc");
        synth_field_of(a)?.save(&p)?;
        manifest.add_output(dir, &p)?;
        paths.push(p);
    }
    paths.push(manifest.write(dir)?);
    Ok(paths)
}

pub fn norms(a: &NormsArgs) -> Result<Vec<CsvReport>> {
    let surface = load_surface(&a.surface)?;
    let basis = parse_basis(&a.basis)?;
    let f = parse_function(&surface, &a.function)?;
    let field = analyze_function(&surface, f.as_ref(), &basis, a.level)?;
    let specs: Vec<String> = if a.specs.is_empty() { vec!["0.5,2,2".into()] } else { a.specs.clone() };
    let mut r = CsvReport::new("norms", &["norm_id", "alpha", "p", "q", "J", "value", "tail_estimate", "flags"]);
    r.meta("surface", &a.surface).meta("surface_hash", surface.hash()).meta("basis", &a.basis).meta("level", a.level).meta("function", &a.function);
    for s in &specs {
        let spec = parse_spec(s)?;
        let n = besov_norm(&surface, &field, &spec)?;
        r.row(vec![
            "besov".into(),
            fmt_f64(spec.alpha),
            fmt_f64(spec.p),
            fmt_f64(spec.q),
            n.max_level.to_string(),
            fmt_f64(n.value),
            n.tail_estimate.map(fmt_f64).unwrap_or_default(),
            n.flags.join(";"),
        ]);
    }
    Ok(vec![r])
}

fn default_ns(total: usize) -> Vec<usize> {
    let mut ns = Vec::new();
    let mut n = 16usize;
    while n < total && n <= 1 << 14 {
        ns.push(n);
        n *= 2;
    }
    ns
}

pub fn nterm(a: &NtermArgs) -> Result<Vec<CsvReport>> {
    let basis = parse_basis(&a.basis)?;
    let target = parse_target(&a.target)?;
    let source_spec = a.source_spec.as_deref().map(parse_spec).transpose()?;
    let predicted = source_spec.map(|s| predicted_rate(&s, &target)).transpose()?;
    let (name, arg) = a.source.split_once(':').unwrap_or((&a.source, ""));
    let mut meta = vec![("source".to_string(), a.source.clone()), ("target".to_string(), target.to_string())];
    let (samples, uniform): (Vec<(f64, f64)>, Option<RateReport>) = if name == "extremal-sup" {
        let src = source_spec.ok_or_else(|| cfg_err("extremal-sup needs --source-spec"))?;
        let ns = if a.ns.is_empty() { (4..=14).map(|k| 1usize << k).collect() } else { a.ns.clone() };
        (extremal_rate_samples(basis, 1, &src, &target, &ns)?, None)
    } else {
        let field = match name {
            "field" => CoefficientField::load(Path::new(arg))?,
            "function" => {
                let surface = load_surface(&a.surface)?;
                let f = parse_function(&surface, arg)?;
                meta.push(("surface_hash".into(), surface.hash()));
                analyze_function(&surface, f.as_ref(), &basis, a.level)?
            }
            _ => {
                let surface = load_surface(&a.surface)?;
                synth_field(&parse_synth(&a.source, 42)?, basis, surface.num_patches(), a.level, &surface.hash())
            }
        };
        let plan = NTermPlan::new(&field, &target)?;
        let ns = if a.ns.is_empty() { default_ns(plan.len()) } else { a.ns.clone() };
        let samples: Vec<(f64, f64)> = nterm_curve(&plan, &ns).into_iter().filter(|s| s.1 > 0.0).collect();
        let mut us = Vec::new();
        for j in field.coarsest() as i32..=field.max_level as i32 {
            let u = uniform_approx(&field, &target, j)?;
            if u.n_effective > 0 && u.error > 0.0 {
                us.push((u.n_effective as f64, u.error));
            }
        }
        (samples, fit_rate(&us, predicted).ok())
    };
    let rep = fit_rate(&samples, predicted)?;
    let mut out = rate_csv("nterm", &rep);
    for (k, v) in &meta {
        out.meta(k, v);
    }
    let mut reports = vec![out];
    if let Some(u) = uniform {
        let mut c = rate_csv("uniform", &u);
        for (k, v) in &meta {
            c.meta(k, v);
        }
        reports.push(c);
    }
    Ok(reports)
}

/// One row of the embedding suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRow {
    pub alpha: f64,
    pub tau: f64,
    pub inside: bool,
    /// Running sums of `sum |c|^tau` over all wavelet indices.
    pub partial: Vec<f64>,
    pub boundary: f64,
    pub interior: f64,
    pub stable: bool,
    pub growing: bool,
    /// `||u|B^alpha_{tau,tau}|| / max{||u|B^s_{p,p}||, ||u|X^k_rho||}`.
    pub ratio: f64,
}

fn running(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

pub fn embed_check(a: &EmbedArgs) -> Result<(Vec<EmbedRow>, Vec<CsvReport>)> {
    let surface = load_surface(&a.surface)?;
    let basis = parse_basis(&a.basis)?;
    let f = parse_function(&surface, &a.function)?;
    let field = analyze_function(&surface, f.as_ref(), &basis, a.level)?;
    let a_star = alpha_star(a.rho, a.k, a.s, a.p)?;
    let limit = 2.0 * a_star;
    let mut alphas: Vec<f64> = if a.alphas.is_empty() { [0.3, 0.5, 0.7].iter().map(|t| t * limit).collect() } else { a.alphas.clone() };
    alphas.push(a.probe * limit);
    let res = ResolutionOfUnity::new(&surface)?;
    let weighted = WeightedSpec::new(a.k, a.rho)?;
    let wnorm = weighted_sobolev_norm(f.as_ref(), &surface, &res, &weighted, &GradedOptions::default())?.value;
    let bnorm = besov_norm(&surface, &field, &BesovSpec::new(a.s, a.p, a.p))?.value;
    let mut rows = Vec::new();
    for &alpha in &alphas {
        let tau = adaptivity_tau(alpha);
        let bnd = tail_sums(&surface, &field, tau, TailClass::Boundary);
        let int = tail_sums(&surface, &field, tau, TailClass::Interior);
        let per: Vec<f64> = bnd.iter().zip(&int).map(|(b, i)| b + i).collect();
        let partial = running(&per);
        let crit = besov_norm(&surface, &field, &BesovSpec::critical(alpha))?.value;
        rows.push(EmbedRow {
            alpha,
            tau,
            inside: alpha < limit,
            stable: is_stable(&partial),
            growing: is_growing(&partial),
            boundary: bnd.iter().sum(),
            interior: int.iter().sum(),
            partial,
            ratio: crit / bnorm.max(wnorm),
        });
    }
    let mut r = CsvReport::new(
        "embed_check",
        &["alpha", "tau", "below_2_alpha_star", "tail", "boundary_tail", "interior_tail", "stable", "growing", "ratio_5_2"],
    );
    r.meta("surface", &a.surface)
        .meta("surface_hash", surface.hash())
        .meta("basis", &a.basis)
        .meta("level", a.level)
        .meta("function", &a.function)
        .meta("s_p", format!("({}, {})", a.s, a.p))
        .meta("k_rho", format!("({}, {})", a.k, a.rho))
        .meta_f64("alpha_star", a_star)
        .meta_f64("besov_s_p_norm", bnorm)
        .meta_f64("weighted_norm", wnorm);
    for row in &rows {
        r.row(vec![
            fmt_f64(row.alpha),
            fmt_f64(row.tau),
            row.inside.to_string(),
            fmt_f64(*row.partial.last().unwrap_or(&0.0)),
            fmt_f64(row.boundary),
            fmt_f64(row.interior),
            row.stable.to_string(),
            row.growing.to_string(),
            fmt_f64(row.ratio),
        ]);
    }
    let mut lv = CsvReport::new("embed_levels", &["alpha", "level", "partial_tail"]);
    for row in &rows {
        for (i, v) in row.partial.iter().enumerate() {
            lv.row(vec![fmt_f64(row.alpha), (field.coarsest() + i as u32).to_string(), fmt_f64(*v)]);
        }
    }
    Ok((rows, vec![r, lv]))
}

fn parse_solver(s: &str) -> Result<SolverKind> {
    match s {
        "auto" => Ok(SolverKind::Auto),
        "lu" => Ok(SolverKind::Lu),
        "gmres" => Ok(SolverKind::Gmres),
        _ => Err(cfg_err(format!("unknown solver {s:?} (auto, lu, gmres)"))),
    }
}

fn read_cell_values(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec.get(rec.len().saturating_sub(1)).ok_or_else(|| cfg_err("empty record"))?;
        out.push(parse_f64(v)?);
    }
    if out.len() != expected {
        return Err(cfg_err(format!("{} has {} values, expected {expected}", path.display(), out.len())));
    }
    Ok(out)
}

pub fn bem_solve(a: &BemArgs) -> Result<Vec<CsvReport>> {
    let surface = load_surface(&a.surface)?;
    let system = assemble(&surface, a.level, &QuadConfig::default())?;
    let opts = SolveOptions { solver: parse_solver(&a.solver)?, ..SolveOptions::default() };
    let rhs = a.rhs.replace(' ', ",");
    let mut probe = None;
    let b = if rhs == "constant" {
        rhs_vector(&system, &|_| 1.0, Convention::Direct)
    } else if rhs == "harmonic:linear" {
        let h = HarmonicProbe::Linear { a: [1.0, 0.0, 0.0], c: 0.0 };
        probe = Some(h);
        rhs_vector(&system, &|x| h.trace(x), Convention::InteriorDirichlet)
    } else if let Some(p) = rhs.strip_prefix("harmonic:pole,").or_else(|| rhs.strip_prefix("harmonic:pole:")) {
        let v = parse_list(p, 3, "pole")?;
        let h = HarmonicProbe::Pole { p: [v[0], v[1], v[2]] };
        probe = Some(h);
        rhs_vector(&system, &|x| h.trace(x), Convention::InteriorDirichlet)
    } else if let Some(path) = a.rhs.strip_prefix("file:") {
        let g = read_cell_values(Path::new(path), system.len())?;
        g.iter().zip(&system.cells).map(|(v, c)| v * c.area).collect()
    } else {
        let f = parse_function(&surface, &a.rhs)?;
        rhs_vector(&system, &|x| f.value(x), Convention::Direct)
    };
    let sol = solve_rhs(&system, &b, &opts)?;
    let mut dens = CsvReport::new("density", &["cell", "patch", "k1", "k2", "x", "y", "z", "value"]);
    dens.meta("surface", &a.surface).meta("surface_hash", surface.hash()).meta("level", a.level).meta("rhs", &a.rhs);
    let n = 1usize << a.level;
    for (m, (c, u)) in system.cells.iter().zip(&sol.density).enumerate() {
        let pos = m % (n * n);
        dens.row(vec![
            m.to_string(),
            c.patch.to_string(),
            (pos / n).to_string(),
            (pos % n).to_string(),
            fmt_f64(c.center.x),
            fmt_f64(c.center.y),
            fmt_f64(c.center.z),
            fmt_f64(*u),
        ]);
    }
    let mut rep = CsvReport::new("bem", &["x", "y", "z", "potential", "exact", "error"]);
    rep.meta("surface", &a.surface)
        .meta("level", a.level)
        .meta("unknowns", system.len())
        .meta("rhs", &a.rhs)
        .meta("solver", format!("{:?}", sol.solver))
        .meta("iterations", sol.iterations)
        .meta_f64("residual", sol.residual)
        .meta("condition_1norm", sol.condition.map(fmt_f64).unwrap_or_else(|| "not estimated".into()));
    if let Some(h) = probe {
        for y in interior_points(&surface, 5, 0.2, 7) {
            let v = potential_eval(&system, &sol.density, &y)?;
            let e = h.eval(&y);
            rep.row(vec![fmt_f64(y.x), fmt_f64(y.y), fmt_f64(y.z), fmt_f64(v), fmt_f64(e), fmt_f64((v - e).abs())]);
        }
    }
    let mut reports = vec![dens, rep];
    if let Some(j) = a.analyze {
        let basis = parse_basis(&a.basis)?;
        let opts = AnalysisOptions { basis, max_level: j, s_prime: a.s_prime, s: a.s, weighted: WeightedSpec::new(a.k, a.rho)?, tau: a.tau };
        let an = analyze_solution(&system, &sol.density, &opts).map_err(|e| match e {
            crate::error::BemError::Approx(crate::error::ApproxError::BadSamples) => {
                cfg_err(format!("analysis level J = {j} gives too few rate samples above the noise floor; increase J and L"))
            }
            e => e.into(),
        })?;
        let mut c = CsvReport::new("analysis", &["kind", "n", "error"]);
        c.meta("basis", &a.basis)
            .meta("analysis_level", j)
            .meta("target", BesovSpec::sobolev(a.s_prime))
            .meta_f64("adaptive_slope", an.adaptive.slope)
            .meta_f64("uniform_slope", an.uniform.slope)
            .meta_f64("exponent_ratio", an.exponent_ratio)
            .meta("alpha_star", an.alpha_star.map(fmt_f64).unwrap_or_default())
            .meta("gamma_star", an.gamma_star.map(fmt_f64).unwrap_or_default())
            .meta_f64("tau", a.tau)
            .meta("boundary_tail_per_level", an.boundary_tail.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "))
            .meta("interior_tail_per_level", an.interior_tail.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "));
        for (kind, r) in [("adaptive", &an.adaptive), ("uniform", &an.uniform)] {
            for &(n, e) in &r.samples {
                c.row(vec![kind.into(), fmt_f64(n), fmt_f64(e)]);
            }
        }
        reports.push(c);
    }
    Ok(reports)
}

type Bivariate = fn(Jet2, Jet2) -> Jet2;

/// Named test functions for the Whitney estimate.
pub fn whitney_function(name: &str) -> Result<Bivariate> {
    Ok(match name {
        "sin" => |x, y| (x + y.scale(2.0)).sin(),
        "exp" => |x, y| (x - y).exp(),
        "cosprod" => |x, y| x.scale(3.0).cos() * y.cos(),
        "x2" => |x, _| x * x,
        "linear" => |x, y| x.scale(3.0) - y.scale(2.0) + Jet2::constant(0.5),
        "const" => |_, _| Jet2::constant(1.5),
        _ => return Err(cfg_err(format!("unknown Whitney function {name:?}"))),
    })
}

pub fn whitney(a: &WhitneyArgs) -> Result<Vec<CsvReport>> {
    let f = whitney_function(&a.function)?;
    let mut r = CsvReport::new("whitney", &["h", "numerator", "seminorm", "ratio"]);
    r.meta("function", &a.function).meta("k", a.k).meta_f64("x0", a.x0).meta_f64("y0", a.y0);
    for m in 0..a.shrinks {
        let h = a.h * 0.5f64.powi(m as i32);
        let w = whitney_check(&f, &Square { x0: a.x0, y0: a.y0, h }, a.k)?;
        r.row(vec![fmt_f64(h), fmt_f64(w.numerator), fmt_f64(w.seminorm), fmt_f64(w.ratio)]);
    }
    Ok(vec![r])
}

fn synth_field_of(a: &SynthArgs) -> Result<CoefficientField> {
    let surface = load_surface(&a.surface)?;
    let basis = parse_basis(&a.basis)?;
    Ok(synth_field(&parse_synth(&a.generator, a.seed)?, basis, surface.num_patches(), a.level, &surface.hash()))
}

pub fn synth(a: &SynthArgs) -> Result<Vec<CsvReport>> {
    let field = synth_field_of(a)?;
    let spec = parse_spec(&a.spec)?;
    let mut r = CsvReport::new("synth", &["level", "count", "nonzero", "lp_norm", "weighted_level_term"]);
    r.meta("generator", &a.generator).meta("basis", &a.basis).meta("seed", a.seed).meta("spec", spec);
    for j in field.level_range() {
        let c = field.level(j);
        let lp = crate::spaces::lp_sum(c, spec.p);
        r.row(vec![
            j.to_string(),
            c.len().to_string(),
            c.iter().filter(|v| **v != 0.0).count().to_string(),
            fmt_f64(lp),
            fmt_f64(crate::spaces::level_weight(j, spec.alpha, spec.p) * lp),
        ]);
    }
    let norm = crate::spaces::seq_norm(field.level_range().map(|j| (j, field.level(j))), spec.alpha, spec.p, spec.q);
    r.meta_f64("sequence_norm", norm);
    Ok(vec![r])
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return 2;
        }
    }
    let exp = match cli.command {
        Command::Norms(a) => Experiment::Norms(a),
        Command::Nterm(a) => Experiment::Nterm(a),
        Command::EmbedCheck(a) => Experiment::EmbedCheck(a),
        Command::BemSolve(a) => Experiment::BemSolve(a),
        Command::Whitney(a) => Experiment::Whitney(a),
        Command::Synth(a) => Experiment::Synth(a),
        Command::Run { config } => match std::fs::read_to_string(&config).map_err(Error::from).and_then(|t| Experiment::from_json(&t)) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {}: {e}", config.display());
                return 2;
            }
        },
    };
    match run(&exp) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) { 2 } else { 1 }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_are_checked() {
        assert!(parse_spec("0.5,2,inf").is_ok());
        assert!(matches!(parse_spec("0,2,inf"), Err(Error::Config(_))));
        assert!(parse_spec("1,2").is_err());
        assert!(parse_target("0,2").is_ok());
        assert!(parse_target("0.5,2").is_ok());
    }

    #[test]
    fn config_errors_carry_positions() {
        let err = Experiment::from_json("{\n  \"kind\": \"norms\",\n  \"level\": \"x\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = Experiment::from_json("{\"kind\": \"norms\", \"bogus\": 1}").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn json_and_defaults_agree() {
        let e = Experiment::from_json("{\"kind\": \"whitney\"}").unwrap();
        assert_eq!(e, Experiment::Whitney(WhitneyArgs::default()));
        let back = Experiment::from_json(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn bem_levels_validated() {
        let e = Experiment::BemSolve(BemArgs { level: 2, analyze: Some(3), ..BemArgs::default() });
        assert!(validate(&e).is_err());
    }

    #[test]
    fn functions_parse() {
        let s = PolyhedralSurface::unit_cube();
        for f in ["const:1", "exp:1,0.5,0", "vertex:0,0.6", "edge:0,0.6", "edgedist:0,1,0.1,0.3,0.6"] {
            assert!(parse_function(&s, f).is_ok(), "{f}");
        }
        assert!(parse_function(&s, "vertex:99,0.6").is_err());
        assert!(parse_function(&s, "nope").is_err());
    }

    #[test]
    fn whitney_report() {
        let r = whitney(&WhitneyArgs::default()).unwrap();
        assert_eq!(r[0].rows.len(), 6);
    }

    #[test]
    fn synth_report_is_reproducible() {
        let a = SynthArgs { generator: "random:1,2,2".into(), ..SynthArgs::default() };
        assert_eq!(synth(&a).unwrap(), synth(&a).unwrap());
    }
}
