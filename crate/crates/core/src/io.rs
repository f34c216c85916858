//! JSON formats for functions, configurations, graphs and reports, and an
//! atomic file writer. Errors name the first offending key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::energysolver::{Configuration, EncostReport, Shape, SolverError, SolverReport};
use crate::linalg::{c, max_abs, CMat, C64};
use crate::pdcore::{Domain, PdError, PdFunction};
use crate::surgery::{ConditionReport, LabeledGraph, StageStats, SurgeryResult, VerifierReport, CLASSES};
use crate::words::Word;

/// Two stored representatives of the same entry must agree to this precision.
pub const MIRROR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: malformed JSON: {msg}")]
    Syntax { path: String, msg: String },
    #[error("key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("{path}: {source}")]
    Nested { path: String, source: Box<IoError> },
    #[error(transparent)]
    Pd(#[from] PdError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn key_err(key: &str, msg: impl Into<String>) -> IoError {
    IoError::Key { key: key.to_string(), msg: msg.into() }
}

pub fn parse_json(text: &str, path: &str) -> Result<Value, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Syntax { path: path.to_string(), msg: e.to_string() })
}

pub fn read_json(path: &Path) -> Result<Value, IoError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| IoError::File { path: p.clone(), source })?;
    parse_json(&text, &p)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), IoError> {
    let p = path.display().to_string();
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|source| IoError::File { path: tmp.display().to_string(), source })?;
    fs::rename(&tmp, path).map_err(|source| IoError::File { path: p, source })
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(v).expect("serializing a Value cannot fail");
    s.push('\n');
    write_atomic(path, &s)
}

/// Finite numbers as JSON numbers; infinities and NaN as strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn cnum(z: C64) -> Value {
    json!([z.re, z.im])
}

fn get<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value, IoError> {
    let k = join(path, key);
    obj.as_object().ok_or_else(|| key_err(if path.is_empty() { "<root>" } else { path }, "expected an object"))?.get(key).ok_or_else(|| key_err(&k, "missing"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_usize(v: &Value, key: &str) -> Result<usize, IoError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| key_err(key, "expected a non-negative integer"))
}

fn as_str<'a>(v: &'a Value, key: &str) -> Result<&'a str, IoError> {
    v.as_str().ok_or_else(|| key_err(key, "expected a string"))
}

fn as_f64(v: &Value, key: &str) -> Result<f64, IoError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| key_err(key, "expected a number")),
        Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Value::String(s) if s == "nan" => Ok(f64::NAN),
        _ => Err(key_err(key, "expected a number")),
    }
}

fn as_complex(v: &Value, key: &str) -> Result<C64, IoError> {
    let a = v.as_array().filter(|a| a.len() == 2).ok_or_else(|| key_err(key, "expected [re, im]"))?;
    let re = a[0].as_f64().ok_or_else(|| key_err(&format!("{key}[0]"), "expected a number"))?;
    let im = a[1].as_f64().ok_or_else(|| key_err(&format!("{key}[1]"), "expected a number"))?;
    if !re.is_finite() || !im.is_finite() {
        return Err(key_err(key, "non-finite value"));
    }
    Ok(c(re, im))
}

fn parse_word(s: &str, key: &str) -> Result<Word, IoError> {
    Word::parse(s).map_err(|e| key_err(key, e.to_string()))
}

pub fn domain_to_json(dom: &Domain) -> Value {
    match dom {
        Domain::Ball(r) => json!({"kind": "ball", "r": r}),
        Domain::Prefix(g) => json!({"kind": "prefix", "g": g.to_string()}),
        Domain::Partial { g, j, k } => json!({"kind": "partial", "g": g.to_string(), "j": j + 1, "k": k + 1}),
    }
}

/// Largest radius a file may declare; `|B_r|` grows like `3^r`.
pub const MAX_FILE_RADIUS: usize = 8;

fn domain_from_json(v: &Value, path: &str) -> Result<Domain, IoError> {
    let kind = as_str(get(v, "kind", path)?, &join(path, "kind"))?;
    let dom = domain_kind(v, kind, path)?;
    let top = match &dom {
        Domain::Ball(r) => *r,
        Domain::Prefix(g) | Domain::Partial { g, .. } => g.len(),
    };
    if top > MAX_FILE_RADIUS {
        return Err(key_err(path, format!("domain radius {top} exceeds {MAX_FILE_RADIUS}")));
    }
    Ok(dom)
}

fn domain_kind(v: &Value, kind: &str, path: &str) -> Result<Domain, IoError> {
    match kind {
        "ball" => Ok(Domain::Ball(as_usize(get(v, "r", path)?, &join(path, "r"))?)),
        "prefix" => Ok(Domain::Prefix(parse_word(as_str(get(v, "g", path)?, &join(path, "g"))?, &join(path, "g"))?)),
        "partial" => {
            let g = parse_word(as_str(get(v, "g", path)?, &join(path, "g"))?, &join(path, "g"))?;
            let mut idx = [0usize; 2];
            for (slot, name) in idx.iter_mut().zip(["j", "k"]) {
                let key = join(path, name);
                let x = as_usize(get(v, name, path)?, &key)?;
                if x == 0 {
                    return Err(key_err(&key, "stage indices are 1-based"));
                }
                *slot = x - 1;
            }
            Ok(Domain::Partial { g, j: idx[0], k: idx[1] })
        }
        other => Err(key_err(&join(path, "kind"), format!("unknown domain kind {other:?}"))),
    }
}

/// `d×d` array of `[re, im]` pairs; `null` entries are returned as `None`.
fn matrix_from_json(v: &Value, d: usize, key: &str) -> Result<Vec<Option<C64>>, IoError> {
    let rows = v.as_array().filter(|r| r.len() == d).ok_or_else(|| key_err(key, format!("expected {d} rows")))?;
    let mut out = Vec::with_capacity(d * d);
    for (i, row) in rows.iter().enumerate() {
        let rk = format!("{key}[{i}]");
        let cols = row.as_array().filter(|r| r.len() == d).ok_or_else(|| key_err(&rk, format!("expected {d} columns")))?;
        for (j, x) in cols.iter().enumerate() {
            let ek = format!("{rk}[{j}]");
            out.push(if x.is_null() { None } else { Some(as_complex(x, &ek)?) });
        }
    }
    Ok(out)
}

fn matrix_to_json(m: &CMat) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| cnum(m[(i, j)])).collect())).collect())
}

pub fn pdfunction_from_json(v: &Value) -> Result<PdFunction, IoError> {
    let d = as_usize(get(v, "d", "")?, "d")?;
    if d == 0 || d > 64 {
        return Err(key_err("d", "dimension must be between 1 and 64"));
    }
    let domain = domain_from_json(get(v, "domain", "")?, "domain")?;
    let stage = match &domain {
        Domain::Partial { g, j, k } => {
            if *j >= d || *k >= d {
                return Err(key_err("domain", "stage index exceeds d"));
            }
            Some((g.clone(), j * d + k))
        }
        _ => None,
    };
    let raw = get(v, "entries", "")?.as_object().ok_or_else(|| key_err("entries", "expected an object"))?;
    let mut entries: BTreeMap<Word, CMat> = BTreeMap::new();
    let mut partial: Option<Vec<C64>> = None;
    for (ks, mv) in raw {
        let key = format!("entries.{ks}");
        let w = parse_word(ks, &key)?;
        let cells = matrix_from_json(mv, d, &key)?;
        let canon = w.canonical();
        if let Some((g, known)) = &stage {
            if canon == *g {
                if w != canon {
                    return Err(key_err(&key, "the partial stage entry must be stored under its canonical word"));
                }
                let mut row = Vec::with_capacity(*known);
                for (i, x) in cells.iter().enumerate() {
                    match (i < *known, x) {
                        (true, Some(z)) => row.push(*z),
                        (true, None) => return Err(key_err(&format!("{key}[{}][{}]", i / d, i % d), "specified stage entry is null")),
                        (false, Some(_)) => return Err(key_err(&format!("{key}[{}][{}]", i / d, i % d), "entry beyond the stage must be null")),
                        (false, None) => {}
                    }
                }
                partial = Some(row);
                continue;
            }
        }
        if let Some(i) = cells.iter().position(Option::is_none) {
            return Err(key_err(&format!("{key}[{}][{}]", i / d, i % d), "null outside the partial stage entry"));
        }
        let m = CMat::from_fn(d, d, |i, j| cells[i * d + j].expect("checked above"));
        let m = if w == canon { m } else { m.adjoint() };
        if let Some(prev) = entries.get(&canon) {
            if max_abs(&(prev - &m)) > MIRROR_TOL {
                return Err(key_err(&key, format!("inconsistent with the stored value of {canon}")));
            }
            continue;
        }
        entries.insert(canon, m);
    }
    let partial = match stage {
        Some(_) => partial.ok_or_else(|| key_err("entries", "missing the partial stage entry"))?,
        None => Vec::new(),
    };
    PdFunction::new(d, domain, entries, partial).map_err(|e| key_err("entries", e.to_string()))
}

pub fn pdfunction_to_json(f: &PdFunction) -> Value {
    let mut entries = Map::new();
    for (w, m) in f.entries() {
        entries.insert(w.to_string(), matrix_to_json(m));
    }
    if let Domain::Partial { g, .. } = f.domain() {
        let d = f.d();
        let known = f.partial_entries();
        let rows: Vec<Value> = (0..d)
            .map(|i| Value::Array((0..d).map(|j| known.get(i * d + j).map_or(Value::Null, |z| cnum(*z))).collect()))
            .collect();
        entries.insert(g.to_string(), Value::Array(rows));
    }
    json!({"d": f.d(), "domain": domain_to_json(f.domain()), "entries": entries})
}

pub fn load_pdfunction(path: &Path) -> Result<PdFunction, IoError> {
    let v = read_json(path)?;
    pdfunction_from_json(&v).map_err(|e| IoError::Nested { path: path.display().to_string(), source: Box::new(e) })
}

/// Configuration file contents before the vertex files are read.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSpec {
    pub shape: Shape,
    pub r: usize,
    pub d: usize,
    pub vertices: BTreeMap<String, String>,
    pub edges: Vec<(String, String)>,
}

pub fn config_spec_from_json(v: &Value) -> Result<ConfigSpec, IoError> {
    let shape = match as_str(get(v, "shape", "")?, "shape")? {
        "tree" => Shape::Tree { root: as_str(get(v, "root", "")?, "root")?.to_string() },
        "cycle" => Shape::Cycle,
        other => return Err(key_err("shape", format!("expected \"tree\" or \"cycle\", got {other:?}"))),
    };
    let r = as_usize(get(v, "r", "")?, "r")?;
    let d = as_usize(get(v, "d", "")?, "d")?;
    if r == 0 || d == 0 {
        return Err(key_err(if r == 0 { "r" } else { "d" }, "must be positive"));
    }
    let vs = get(v, "vertices", "")?.as_object().ok_or_else(|| key_err("vertices", "expected an object"))?;
    let mut vertices = BTreeMap::new();
    for (name, p) in vs {
        vertices.insert(name.clone(), as_str(p, &format!("vertices.{name}"))?.to_string());
    }
    let es = get(v, "edges", "")?.as_array().ok_or_else(|| key_err("edges", "expected an array"))?;
    let mut edges = Vec::with_capacity(es.len());
    for (i, e) in es.iter().enumerate() {
        let key = format!("edges[{i}]");
        let pair = e.as_array().filter(|p| p.len() == 2).ok_or_else(|| key_err(&key, "expected [from, to]"))?;
        let from = as_str(&pair[0], &format!("{key}[0]"))?;
        let to = as_str(&pair[1], &format!("{key}[1]"))?;
        for (x, slot) in [(from, 0), (to, 1)] {
            if !vertices.contains_key(x) {
                return Err(key_err(&format!("{key}[{slot}]"), format!("unknown vertex {x:?}")));
            }
        }
        edges.push((from.to_string(), to.to_string()));
    }
    if let Shape::Tree { root } = &shape {
        if !vertices.contains_key(root) {
            return Err(key_err("root", format!("unknown vertex {root:?}")));
        }
    }
    Ok(ConfigSpec { shape, r, d, vertices, edges })
}

pub fn config_spec_to_json(spec: &ConfigSpec) -> Value {
    let mut v = json!({
        "shape": match spec.shape { Shape::Tree { .. } => "tree", Shape::Cycle => "cycle" },
        "r": spec.r,
        "d": spec.d,
        "vertices": spec.vertices,
        "edges": spec.edges.iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
    });
    if let Shape::Tree { root } = &spec.shape {
        v["root"] = json!(root);
    }
    v
}

/// Reads a configuration; vertex paths are relative to the file's directory.
pub fn load_configuration(path: &Path) -> Result<Configuration, IoError> {
    let v = read_json(path)?;
    let spec = config_spec_from_json(&v).map_err(|e| IoError::Nested { path: path.display().to_string(), source: Box::new(e) })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut functions = BTreeMap::new();
    for (name, rel) in &spec.vertices {
        functions.insert(name.clone(), load_pdfunction(&resolve(&base, rel))?);
    }
    Ok(Configuration::new(spec.shape, spec.r, spec.d, spec.edges, functions)?)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes the vertex functions as `<name>.json` next to `path` and the
/// configuration itself to `path`.
pub fn save_configuration(path: &Path, config: &Configuration) -> Result<(), IoError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut vertices = BTreeMap::new();
    for (name, f) in &config.functions {
        let file = format!("{name}.json");
        write_json(&base.join(&file), &pdfunction_to_json(f))?;
        vertices.insert(name.clone(), file);
    }
    let spec = ConfigSpec { shape: config.shape.clone(), r: config.r, d: config.d, vertices, edges: config.edges.clone() };
    write_json(path, &config_spec_to_json(&spec))
}

pub fn graph_from_json(v: &Value) -> Result<LabeledGraph, IoError> {
    let n = as_usize(get(v, "n", "")?, "n")?;
    let mut perms = Vec::with_capacity(2);
    for name in ["perm_a", "perm_b"] {
        let arr = get(v, name, "")?.as_array().ok_or_else(|| key_err(name, "expected an array"))?;
        if arr.len() != n {
            return Err(key_err(name, format!("length {} != n = {n}", arr.len())));
        }
        let mut p = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for (i, x) in arr.iter().enumerate() {
            let key = format!("{name}[{i}]");
            let t = as_usize(x, &key)?;
            if t >= n {
                return Err(key_err(&key, format!("{t} is out of range")));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(key_err(&key, format!("{t} already has a preimage")));
            }
            p.push(t);
        }
        perms.push(p);
    }
    let perm_b = perms.pop().expect("two permutations");
    let perm_a = perms.pop().expect("two permutations");
    Ok(LabeledGraph { n, perm_a, perm_b })
}

pub fn graph_to_json(g: &LabeledGraph) -> Value {
    json!({"n": g.n, "perm_a": g.perm_a, "perm_b": g.perm_b})
}

pub fn load_graph(path: &Path) -> Result<LabeledGraph, IoError> {
    let v = read_json(path)?;
    graph_from_json(&v).map_err(|e| IoError::Nested { path: path.display().to_string(), source: Box::new(e) })
}

pub fn surgery_to_json(res: &SurgeryResult) -> Value {
    let mut v = graph_to_json(&res.graph);
    v["original"] = json!(res.original);
    v["W"] = json!(res.w);
    v["B"] = json!(res.b);
    v["inserted"] = json!(res.inserted);
    v["stages"] = Value::Array(
        res.stages
            .iter()
            .map(|s| json!({"inserted": s.inserted, "max_a_cycle": s.max_a_cycle, "max_b_cycle": s.max_b_cycle, "min_cycle": s.min_cycle}))
            .collect(),
    );
    v
}

fn index_list(v: &Value, key: &str, n: usize) -> Result<Vec<usize>, IoError> {
    let arr = v.as_array().ok_or_else(|| key_err(key, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            let k = format!("{key}[{i}]");
            let t = as_usize(x, &k)?;
            if t >= n {
                return Err(key_err(&k, format!("{t} is out of range")));
            }
            Ok(t)
        })
        .collect()
}

pub fn surgery_from_json(v: &Value) -> Result<SurgeryResult, IoError> {
    let graph = graph_from_json(v)?;
    let n = graph.n;
    let original = index_list(get(v, "original", "")?, "original", n)?;
    let w = index_list(get(v, "W", "")?, "W", n)?;
    let b = index_list(get(v, "B", "")?, "B", n)?;
    let ins = get(v, "inserted", "")?.as_object().ok_or_else(|| key_err("inserted", "expected an object"))?;
    let mut inserted = BTreeMap::new();
    for (class, list) in ins {
        if !CLASSES.contains(&class.as_str()) {
            return Err(key_err(&format!("inserted.{class}"), "unknown vertex class"));
        }
        inserted.insert(class.clone(), index_list(list, &format!("inserted.{class}"), n)?);
    }
    let mut stages = Vec::new();
    if let Some(arr) = v.get("stages").and_then(Value::as_array) {
        for (i, s) in arr.iter().enumerate() {
            let p = format!("stages[{i}]");
            let f = |name: &str| -> Result<usize, IoError> { as_usize(get(s, name, &p)?, &join(&p, name)) };
            stages.push(StageStats { inserted: f("inserted")?, max_a_cycle: f("max_a_cycle")?, max_b_cycle: f("max_b_cycle")?, min_cycle: f("min_cycle")? });
        }
    }
    Ok(SurgeryResult { graph, original, w, b, inserted, stages })
}

pub fn verifier_to_json(rep: &VerifierReport) -> Value {
    let mut conds = Map::new();
    for c in &rep.conditions {
        conds.insert(c.name.clone(), json!({"pass": c.pass, "measured": num(c.measured), "bound": num(c.bound)}));
    }
    json!({
        "conditions": conds,
        "inserted": rep.inserted,
        "inserted_bound": num(rep.inserted_bound),
        "pass": rep.all_pass(),
    })
}

pub fn verifier_from_json(v: &Value) -> Result<VerifierReport, IoError> {
    let conds = get(v, "conditions", "")?.as_object().ok_or_else(|| key_err("conditions", "expected an object"))?;
    let mut conditions = Vec::new();
    for (name, c) in conds {
        let p = format!("conditions.{name}");
        conditions.push(ConditionReport {
            name: name.clone(),
            pass: get(c, "pass", &p)?.as_bool().ok_or_else(|| key_err(&join(&p, "pass"), "expected a boolean"))?,
            measured: as_f64(get(c, "measured", &p)?, &join(&p, "measured"))?,
            bound: as_f64(get(c, "bound", &p)?, &join(&p, "bound"))?,
        });
    }
    Ok(VerifierReport {
        conditions,
        inserted: as_usize(get(v, "inserted", "")?, "inserted")?,
        inserted_bound: as_f64(get(v, "inserted_bound", "")?, "inserted_bound")?,
    })
}

fn edges_json(edges: &[crate::energysolver::EdgeRecord]) -> Value {
    Value::Array(edges.iter().map(|e| json!({"from": e.from, "to": e.to, "before": num(e.before), "after": num(e.after)})).collect())
}

fn vertices_json(vs: &[crate::energysolver::VertexRecord]) -> Value {
    Value::Array(
        vs.iter()
            .map(|v| json!({"name": v.name, "l1_drift": num(v.l1_drift), "restriction_energy": num(v.restriction_energy)}))
            .collect(),
    )
}

pub fn solver_report_to_json(rep: &SolverReport) -> Value {
    let stages: Vec<Value> = rep
        .stages
        .iter()
        .map(|s| {
            json!({
                "g": s.g.to_string(),
                "j": s.j + 1,
                "k": s.k + 1,
                "sigma": num(s.sigma),
                "eta": s.eta.map_or(Value::Null, num),
                "iterations": s.iterations,
                "fd_fallbacks": s.fd_fallbacks,
                "ledger_ok": s.ledger_ok,
                "zetas": s.zetas.iter().map(|(name, z)| (name.clone(), cnum(*z))).collect::<Map<_, _>>(),
                "edges": s.edges.iter().map(|e| json!({
                    "from": e.from,
                    "to": e.to,
                    "partial": num(e.partial),
                    "achieved": num(e.achieved),
                    "ledger_bound": num(e.ledger_bound),
                    "accepted_best": e.accepted_best,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "radius": rep.radius,
        "epsilon": num(rep.epsilon),
        "encost": num(rep.encost),
        "sigma_consumed": num(rep.sigma_consumed),
        "iterations": rep.iterations,
        "edges": edges_json(&rep.edges),
        "vertices": vertices_json(&rep.vertices),
        "stages": stages,
    })
}

pub fn encost_to_json(rep: &EncostReport) -> Value {
    json!({"encost": num(rep.encost), "edges": edges_json(&rep.edges), "vertices": vertices_json(&rep.vertices)})
}

/// `(from, to, before, after)` per edge of a saved solver report.
pub fn report_edges(v: &Value) -> Result<Vec<(String, String, f64, f64)>, IoError> {
    let arr = get(v, "edges", "")?.as_array().ok_or_else(|| key_err("edges", "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, e)| {
            let p = format!("edges[{i}]");
            Ok((
                as_str(get(e, "from", &p)?, &join(&p, "from"))?.to_string(),
                as_str(get(e, "to", &p)?, &join(&p, "to"))?.to_string(),
                as_f64(get(e, "before", &p)?, &join(&p, "before"))?,
                as_f64(get(e, "after", &p)?, &join(&p, "after"))?,
            ))
        })
        .collect()
}
