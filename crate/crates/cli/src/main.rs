use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use freepd_core::energysolver::{encost_report, solve_configuration, SolveOptions};
use freepd_core::extend::{extend_ball_checked, toeplitz_step, Central, SzegoParameter};
use freepd_core::io::{
    encost_to_json, load_configuration, load_graph, load_pdfunction, pdfunction_to_json,
    solver_report_to_json, surgery_to_json, verifier_to_json, write_json, IoError,
};
use freepd_core::linalg::{c, C64};
use freepd_core::pdcore::{check_pd, check_pd_brute, random_nspd, Domain, Verdict};
use freepd_core::surgery::{perform_surgery, verify_conditions};
use freepd_core::transport::{domain_energy, energy_schedule};
use serde_json::json;

#[derive(Parser)]
#[command(name = "freepd", version, about = "Positive definite functions on the rank-2 free group")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide positive definiteness of a function file.
    Check {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Check every admissible index set instead of clique translates.
        #[arg(long)]
        brute_force: bool,
    },
    /// Write a random strictly positive definite function on a ball.
    Random {
        #[arg(long)]
        r: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extend a ball function to a larger ball.
    Extend {
        file: PathBuf,
        #[arg(long)]
        radius: usize,
        #[arg(long, value_enum, default_value_t = Policy::Central)]
        policy: Policy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative energies between two functions.
    Energy {
        a: PathBuf,
        b: PathBuf,
        /// Comma-separated radii; defaults to every radius the data supports.
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<usize>>,
    },
    /// Extend every function of a configuration with controlled edge energies.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        radius: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the three-stage surgery on a labeled 4-regular graph.
    Surgery {
        graph: PathBuf,
        #[arg(long = "R")]
        big_r: usize,
        #[arg(long = "r")]
        r: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also check the structural conditions and write `<out>.verify.json`.
        #[arg(long)]
        verify: bool,
    },
    /// One Szegő step on a Toeplitz sequence.
    Toeplitz {
        #[arg(long, value_delimiter = ',', value_parser = parse_complex)]
        seq: Vec<C64>,
        #[arg(long, value_delimiter = ',', num_args = 1)]
        zeta: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Central,
}

fn parse_complex(s: &str) -> Result<C64, String> {
    s.trim().parse::<C64>().map_err(|e| format!("{s:?} is not a complex number: {e}"))
}

/// `x` with 12 significant digits.
fn sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000000000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=11).contains(&mag) {
        return format!("{x:.11e}");
    }
    format!("{x:.*}", (11 - mag).max(0) as usize)
}

fn csig(z: C64) -> String {
    format!("{} {} {}i", sig(z.re), if z.im < 0.0 { '-' } else { '+' }, sig(z.im.abs()))
}

/// Path with `suffix` appended to the file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

enum Status {
    Ok,
    Failed,
}

fn check(file: &Path, tol: f64, brute: bool) -> Result<Status> {
    let f = load_pdfunction(file)?;
    let rep = if brute { check_pd_brute(&f, tol)? } else { check_pd(&f, tol)? };
    println!("domain {}", f.domain().describe());
    println!("verdict {}", rep.verdict.as_str());
    println!("min eigenvalue {}", sig(rep.min_eigenvalue));
    println!("index sets checked {}", rep.checked);
    if let Some((idx, _)) = rep.witness.as_ref().filter(|_| rep.verdict != Verdict::Strict) {
        let words: Vec<String> = idx.iter().map(|(w, k)| format!("{w}:{}", k + 1)).collect();
        println!("witness {}", words.join(" "));
    }
    Ok(if rep.verdict == Verdict::Strict { Status::Ok } else { Status::Failed })
}

fn random(r: usize, d: usize, seed: u64, margin: f64, out: &Path) -> Result<Status> {
    if d == 0 {
        bail!("--d must be positive");
    }
    if !(margin > 0.0 && margin < 1.0) {
        bail!("--margin must lie in (0, 1)");
    }
    let f = random_nspd(r, d, seed, margin);
    write_json(out, &pdfunction_to_json(&f))?;
    println!("wrote {} on {}", out.display(), f.domain().describe());
    Ok(Status::Ok)
}

fn extend(file: &Path, radius: usize, out: &Path) -> Result<Status> {
    let f = load_pdfunction(file)?;
    let ext = extend_ball_checked(&f, radius, &mut Central, 1e-10).context("central extension")?;
    let rep = check_pd(&ext, 1e-10)?;
    write_json(out, &pdfunction_to_json(&ext))?;
    println!("wrote {} on {}", out.display(), ext.domain().describe());
    println!("verdict {}", rep.verdict.as_str());
    println!("min eigenvalue {}", sig(rep.min_eigenvalue));
    Ok(Status::Ok)
}

fn energy(a: &Path, b: &Path, radii: Option<Vec<usize>>) -> Result<Status> {
    let fa = load_pdfunction(a)?;
    let fb = load_pdfunction(b)?;
    match (fa.domain(), radii) {
        (_, Some(radii)) => {
            for (r, rep) in radii.iter().zip(energy_schedule(&fa, &fb, &radii)?) {
                println!("r={r} energy={}", sig(rep.energy));
            }
        }
        (Domain::Ball(big), None) => {
            let radii: Vec<usize> = (0..=big / 2).collect();
            for (r, rep) in radii.iter().zip(energy_schedule(&fa, &fb, &radii)?) {
                println!("r={r} energy={}", sig(rep.energy));
            }
        }
        (dom, None) => println!("{} energy={}", dom.describe(), sig(domain_energy(&fa, &fb)?.energy)),
    }
    Ok(Status::Ok)
}

fn solve(config: &Path, radius: usize, eps: f64, out: &Path) -> Result<Status> {
    let cfg = load_configuration(config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (ext, report) = solve_configuration(&cfg, radius, eps, None, &SolveOptions::default())?;
    for (v, f) in &ext {
        write_json(&out.join(format!("{v}.json")), &pdfunction_to_json(f))?;
    }
    let mut doc = solver_report_to_json(&report);
    let mut ok = report.stages.iter().all(|s| s.ledger_ok);
    match encost_report(&cfg, &ext, eps) {
        Ok(enc) => {
            doc["check"] = encost_to_json(&enc);
            println!("encost {}", sig(enc.encost));
        }
        Err(e) => {
            doc["check"] = json!({"error": e.to_string()});
            println!("restriction check failed: {e}");
            ok = false;
        }
    }
    let input = fs::canonicalize(config).unwrap_or_else(|_| config.to_path_buf());
    doc["input"] = json!(input.display().to_string());
    doc["extensions"] = json!(ext.keys().map(|v| (v.clone(), json!(format!("{v}.json")))).collect::<serde_json::Map<_, _>>());
    doc["pass"] = json!(ok);
    write_json(&out.join("report.json"), &doc)?;
    for e in &report.edges {
        println!("{} -> {}: {} -> {}", e.from, e.to, sig(e.before), sig(e.after));
    }
    println!("stages {} iterations {} sigma {}", report.stages.len(), report.iterations, sig(report.sigma_consumed));
    println!("wrote {}", out.join("report.json").display());
    Ok(if ok { Status::Ok } else { Status::Failed })
}

fn surgery(graph: &Path, big_r: usize, r: usize, out: &Path, verify: bool) -> Result<Status> {
    let g = load_graph(graph)?;
    let res = perform_surgery(&g, big_r, r)?;
    write_json(out, &surgery_to_json(&res))?;
    println!("n {} -> {} ({} inserted), |W| {}, |B| {}", g.n, res.graph.n, res.inserted_count(), res.w.len(), res.b.len());
    if !verify {
        return Ok(Status::Ok);
    }
    let rep = verify_conditions(&g, &res, r, big_r);
    for c in &rep.conditions {
        println!("{} {} measured {} bound {}", c.name, if c.pass { "pass" } else { "FAIL" }, sig(c.measured), sig(c.bound));
    }
    let path = sidecar(out, ".verify.json");
    write_json(&path, &verifier_to_json(&rep))?;
    println!("wrote {}", path.display());
    Ok(if rep.all_pass() { Status::Ok } else { Status::Failed })
}

fn toeplitz(seq: &[C64], zeta: &[f64]) -> Result<Status> {
    let z = match zeta {
        [re] => c(*re, 0.0),
        [re, im] => c(*re, *im),
        _ => bail!("--zeta expects re or re,im"),
    };
    let next = toeplitz_step(seq, SzegoParameter::new(z)?)?;
    println!("c{} = {}", seq.len(), csig(next));
    Ok(Status::Ok)
}

fn run(cli: Cli) -> Result<Status> {
    match cli.cmd {
        Cmd::Check { file, tol, brute_force } => check(&file, tol, brute_force),
        Cmd::Random { r, d, seed, margin, out } => random(r, d, seed, margin, &out),
        Cmd::Extend { file, radius, policy: Policy::Central, out } => extend(&file, radius, &out),
        Cmd::Energy { a, b, radii } => energy(&a, &b, radii),
        Cmd::Solve { config, radius, epsilon, out } => solve(&config, radius, epsilon, &out),
        Cmd::Surgery { graph, big_r, r, out, verify } => surgery(&graph, big_r, r, &out, verify),
        Cmd::Toeplitz { seq, zeta } => toeplitz(&seq, &zeta),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            // Unreadable or malformed input files are usage errors.
            let malformed = e.chain().any(|c| c.downcast_ref::<IoError>().is_some());
            ExitCode::from(if malformed { 2 } else { 1 })
        }
    }
}
