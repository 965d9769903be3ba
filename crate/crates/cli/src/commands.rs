use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use restdep_core::datagen::{file_stem, DatasetMode};
use restdep_core::llm::LlmBackend;
use restdep_core::metrics::{render_report, SuiteReport};
use restdep_core::mock_service::{MockServer, ServiceMode};
use restdep_core::odg::{build_odg, load_odg, serialize_odg, OperationDependencyGraph};
use restdep_core::pipeline::generate;
use restdep_core::plan::data_file;
use restdep_core::runner::{execute_suite, read_results_jsonl, write_results_jsonl, RunConfig, Verdict};
use restdep_core::{parse_spec, ApiSpec, DocumentFormat, TestPlan};
use serde::Serialize;

use crate::config::Settings;

/// Bad invocation; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub enum Outcome {
    Clean,
    FailuresFound,
}

fn load_spec(s: &Settings) -> Result<ApiSpec> {
    let path = s
        .spec
        .as_ref()
        .ok_or_else(|| UsageError("no spec given (use --spec or `spec` in the config file)".into()))?;
    if !path.is_file() {
        return Err(UsageError(format!("spec file {} does not exist", path.display())).into());
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_spec(&bytes, DocumentFormat::from_path(path)).with_context(|| format!("parsing {}", path.display()))
}

fn backend(s: &Settings) -> Result<Box<dyn LlmBackend>> {
    Ok(s.backend.connect(Some(s.cache_dir.clone()), s.offline)?)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn out(s: &Settings, name: &str) -> PathBuf {
    s.output_dir.join(name)
}

fn build_and_write_odg(s: &Settings, spec: &ApiSpec, backend: &dyn LlmBackend) -> Result<OperationDependencyGraph> {
    let (g, os, ss) = build_odg(spec, backend);
    write(&out(s, "odg.json"), serialize_odg(&g))?;
    write_json(&out(s, "os_deps.json"), &os)?;
    write_json(&out(s, "ss_deps.json"), &ss)?;
    eprintln!(
        "graph: {} operations, {} edges -> {}",
        g.nodes.len(),
        g.edges.len(),
        out(s, "odg.json").display()
    );
    Ok(g)
}

pub fn build_odg_cmd(s: &Settings) -> Result<Outcome> {
    let spec = load_spec(s)?;
    build_and_write_odg(s, &spec, &*backend(s)?)?;
    Ok(Outcome::Clean)
}

pub fn generate_cmd(s: &Settings) -> Result<Outcome> {
    let spec = load_spec(s)?;
    let backend = backend(s)?;
    let odg_path = out(s, "odg.json");
    let g = if odg_path.is_file() {
        let bytes = fs::read(&odg_path)?;
        load_odg(&bytes).with_context(|| format!("loading {}", odg_path.display()))?
    } else {
        build_and_write_odg(s, &spec, &*backend)?
    };
    let generated = generate(&spec, &g, &*backend, s.seed, s.element_choice)?;
    for w in &generated.warnings {
        log::warn!("{w}");
    }

    write_json(&out(s, "sequences.json"), &generated.sequences)?;
    for dir in ["data", "constraints"] {
        let _ = fs::remove_dir_all(out(s, dir));
    }
    for (mode, sets) in [
        (DatasetMode::Valid, &generated.datasets.valid),
        (DatasetMode::Invalid, &generated.datasets.invalid),
    ] {
        for (op_id, d) in sets {
            write_json(&out(s, &data_file(op_id, mode)), &d.items)?;
        }
    }
    for (op_id, cs) in &generated.constraints {
        write_json(&out(s, &format!("constraints/{}.json", file_stem(op_id))), cs)?;
    }
    write(&out(s, "plan.json"), generated.plan.to_json())?;
    for skip in &generated.plan.skipped {
        log::info!("no failure case for {}: {}", skip.target_op, skip.reason);
    }
    eprintln!(
        "plan: {} cases -> {}",
        generated.plan.cases.len(),
        out(s, "plan.json").display()
    );
    Ok(Outcome::Clean)
}

fn load_plan(s: &Settings) -> Result<TestPlan> {
    let path = out(s, "plan.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {} (run `generate` first)", path.display()))?;
    TestPlan::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn run_cmd(s: &Settings) -> Result<Outcome> {
    let plan = load_plan(s)?;
    let spec = match &s.spec {
        Some(_) => Some(load_spec(s)?),
        None => None,
    };
    if let Some(spec) = &spec {
        if spec.fingerprint() != plan.spec_fingerprint {
            log::warn!("plan was generated from a different version of the spec");
        }
    }
    let base_url = s
        .base_url
        .clone()
        .or_else(|| spec.as_ref().and_then(|sp| sp.base_url.clone()))
        .ok_or_else(|| UsageError("no base URL (use --base-url, `base_url`, or a spec with servers)".into()))?;
    let cfg = RunConfig {
        base_url,
        timeout_ms: s.timeout_ms,
        workers: s.workers,
        headers: s.auth_headers.clone(),
        seed: s.seed,
    };
    let results = execute_suite(&plan, &cfg);
    let path = out(s, "results.jsonl");
    fs::create_dir_all(&s.output_dir)?;
    write_results_jsonl(&results, &path)?;
    let count = |v| results.iter().filter(|r| r.verdict == v).count();
    eprintln!(
        "run: {} cases, {} pass, {} fail, {} error -> {}",
        results.len(),
        count(Verdict::Pass),
        count(Verdict::Fail),
        count(Verdict::Error),
        path.display()
    );
    Ok(Outcome::Clean)
}

pub fn report_cmd(s: &Settings) -> Result<Outcome> {
    let spec = load_spec(s)?;
    let plan = load_plan(s)?;
    let results = read_results_jsonl(&out(s, "results.jsonl"))?;
    let report = SuiteReport::compute(&spec, &plan, &results);
    let text = render_report(&report);
    write(&out(s, "report.json"), report.to_json())?;
    write(&out(s, "report.txt"), &text)?;
    print!("{text}");
    Ok(if report.has_blocking_failures() {
        Outcome::FailuresFound
    } else {
        Outcome::Clean
    })
}

pub fn mock_serve_cmd(addr: &str, faults: bool) -> Result<Outcome> {
    let mode = if faults { ServiceMode::Faulty } else { ServiceMode::Normal };
    let server = MockServer::start(mode, addr).map_err(|e| anyhow!("binding {addr}: {e}"))?;
    println!("serving the flight booking service on {}", server.base_url());
    server.wait();
    Ok(Outcome::Clean)
}
