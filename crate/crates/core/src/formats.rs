//! Plain-text input formats: market trees, candidate densities and diffusion
//! specifications.
//!
//! All three share one line grammar. `#` starts a comment, blank lines are
//! ignored, `key = value` sets a field and `[node NAME]` opens a node section
//! (market files only). Every file must declare `version = 1`. Floats are
//! written with 17 significant digits, which round-trips every `f64`.
//!
//! ```text
//! version = 1
//! assets = 1
//!
//! [node root]
//! prices = 1
//!
//! [node up]
//! parent = root
//! prices = 2
//! prob = 0.5
//! ```

use crate::diffusion::{Candidate, Coefficient, DiffusionSpec, Profile};
use crate::error::{Error, Result};
use crate::market::{NodeInput, ScenarioMarket};

pub const FORMAT_VERSION: u32 = 1;

/// 17 significant digits; negative zero prints as zero.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

#[derive(Debug)]
enum Line<'a> {
    Section { kind: &'a str, name: &'a str },
    Field { key: &'a str, value: &'a str },
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn lines(text: &str) -> Result<Vec<(usize, Line<'_>)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(inner) = content.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| parse_err(lineno, "unterminated section header"))?;
            let mut parts = inner.split_whitespace();
            let kind = parts
                .next()
                .ok_or_else(|| parse_err(lineno, "empty section header"))?;
            let name = parts
                .next()
                .ok_or_else(|| parse_err(lineno, format!("section '{kind}' needs a name")))?;
            if parts.next().is_some() {
                return Err(parse_err(lineno, "section header has extra tokens"));
            }
            out.push((lineno, Line::Section { kind, name }));
        } else {
            let (key, value) = content.split_once('=').ok_or_else(|| {
                parse_err(lineno, format!("expected 'key = value', got '{content}'"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(lineno, "empty key"));
            }
            out.push((
                lineno,
                Line::Field {
                    key,
                    value: value.trim(),
                },
            ));
        }
    }
    Ok(out)
}

fn parse_f64(line: usize, field: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(line, format!("{field}: '{s}' is not a number")))
}

fn parse_list(line: usize, field: &str, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| parse_f64(line, field, t))
        .collect()
}

fn parse_usize(line: usize, field: &str, s: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| {
        parse_err(
            line,
            format!("{field}: '{s}' is not a non-negative integer"),
        )
    })
}

fn check_version(line: usize, s: &str) -> Result<()> {
    let v = s
        .parse::<u32>()
        .map_err(|_| parse_err(line, format!("version: '{s}' is not an integer")))?;
    if v != FORMAT_VERSION {
        return Err(parse_err(line, format!("unsupported version {v}")));
    }
    Ok(())
}

fn require<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| parse_err(0, format!("missing required field '{field}'")))
}

pub fn parse_market(text: &str) -> Result<ScenarioMarket> {
    let mut version = false;
    let mut assets: Option<usize> = None;
    let mut nodes: Vec<NodeInput> = Vec::new();
    let mut node_lines: Vec<usize> = Vec::new();
    let mut has_prices: Vec<bool> = Vec::new();
    for (lineno, line) in lines(text)? {
        match line {
            Line::Section { kind, name } => {
                if kind != "node" {
                    return Err(parse_err(lineno, format!("unknown section '{kind}'")));
                }
                nodes.push(NodeInput {
                    name: name.to_string(),
                    parent: None,
                    prices: Vec::new(),
                    prob: None,
                });
                node_lines.push(lineno);
                has_prices.push(false);
            }
            Line::Field { key, value } => match nodes.last_mut() {
                None => match key {
                    "version" => {
                        check_version(lineno, value)?;
                        version = true;
                    }
                    "assets" => assets = Some(parse_usize(lineno, key, value)?),
                    "name" => {}
                    _ => return Err(parse_err(lineno, format!("unknown field '{key}'"))),
                },
                Some(node) => match key {
                    "parent" => node.parent = Some(value.to_string()),
                    "prices" => {
                        node.prices = parse_list(lineno, key, value)?;
                        *has_prices.last_mut().expect("node exists") = true;
                    }
                    "prob" => node.prob = Some(parse_f64(lineno, key, value)?),
                    _ => {
                        return Err(parse_err(lineno, format!("unknown node field '{key}'")));
                    }
                },
            },
        }
    }
    if !version {
        return Err(parse_err(0, "missing required field 'version'"));
    }
    let assets = require(assets, "assets")?;
    if let Some(i) = has_prices.iter().position(|h| !h) {
        return Err(parse_err(
            node_lines[i],
            format!("node '{}' has no prices", nodes[i].name),
        ));
    }
    ScenarioMarket::from_nodes(assets, nodes)
}

pub fn write_market(market: &ScenarioMarket) -> String {
    let mut out = String::new();
    out.push_str(&format!("version = {FORMAT_VERSION}\n"));
    out.push_str(&format!("assets = {}\n", market.n_assets()));
    let leaf_prob: std::collections::HashMap<usize, f64> = market
        .leaves()
        .iter()
        .cloned()
        .zip(market.probs().iter().cloned())
        .collect();
    for (idx, node) in market.nodes().iter().enumerate() {
        out.push_str(&format!("\n[node {}]\n", node.name));
        if let Some(p) = node.parent {
            out.push_str(&format!("parent = {}\n", market.nodes()[p].name));
        }
        out.push_str(&format!("prices = {}\n", fmt_list(&node.prices)));
        if let Some(p) = leaf_prob.get(&idx) {
            out.push_str(&format!("prob = {}\n", fmt_f64(*p)));
        }
    }
    out
}

/// Candidate `g*` with an optional exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFile {
    pub q: Option<f64>,
    pub g_star: Vec<f64>,
}

pub fn parse_candidate(text: &str) -> Result<CandidateFile> {
    let mut version = false;
    let mut q = None;
    let mut g_star = None;
    for (lineno, line) in lines(text)? {
        match line {
            Line::Section { kind, .. } => {
                return Err(parse_err(lineno, format!("unexpected section '{kind}'")))
            }
            Line::Field { key, value } => match key {
                "version" => {
                    check_version(lineno, value)?;
                    version = true;
                }
                "q" => q = Some(parse_f64(lineno, key, value)?),
                "g_star" => g_star = Some(parse_list(lineno, key, value)?),
                _ => return Err(parse_err(lineno, format!("unknown field '{key}'"))),
            },
        }
    }
    if !version {
        return Err(parse_err(0, "missing required field 'version'"));
    }
    Ok(CandidateFile {
        q,
        g_star: require(g_star, "g_star")?,
    })
}

pub fn write_candidate(c: &CandidateFile) -> String {
    let mut out = format!("version = {FORMAT_VERSION}\n");
    if let Some(q) = c.q {
        out.push_str(&format!("q = {}\n", fmt_f64(q)));
    }
    out.push_str(&format!("g_star = {}\n", fmt_list(&c.g_star)));
    out
}

/// Diffusion model, candidate `(η, ξ, c_H)` and default run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFile {
    pub name: Option<String>,
    pub spec: DiffusionSpec,
    pub candidate: Candidate,
    /// Candidate `ln c` for the fundamental-equation residual.
    pub c_h: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub antithetic: bool,
}

/// `const V | linear A B | table T:V ...`, then optional `+y K` and `*s`.
pub fn parse_coefficient(line: usize, field: &str, s: &str) -> Result<Coefficient> {
    let toks: Vec<&str> = s.split_whitespace().collect();
    let kind = *toks
        .first()
        .ok_or_else(|| parse_err(line, format!("{field}: empty coefficient")))?;
    let mut i = 1;
    let num = |i: &mut usize| -> Result<f64> {
        let t = toks
            .get(*i)
            .ok_or_else(|| parse_err(line, format!("{field}: missing number after '{kind}'")))?;
        *i += 1;
        parse_f64(line, field, t)
    };
    let profile = match kind {
        "const" => Profile::Constant(num(&mut i)?),
        "linear" => {
            let a = num(&mut i)?;
            let b = num(&mut i)?;
            Profile::Linear { a, b }
        }
        "table" => {
            let mut times = Vec::new();
            let mut values = Vec::new();
            while let Some(t) = toks.get(i) {
                let Some((tt, vv)) = t.split_once(':') else {
                    break;
                };
                times.push(parse_f64(line, field, tt)?);
                values.push(parse_f64(line, field, vv)?);
                i += 1;
            }
            if times.is_empty() {
                return Err(parse_err(
                    line,
                    format!("{field}: table needs 'time:value' knots"),
                ));
            }
            Profile::Table { times, values }
        }
        other => {
            return Err(parse_err(
                line,
                format!("{field}: unknown preset '{other}' (const, linear, table)"),
            ))
        }
    };
    let mut c = Coefficient {
        profile,
        y_slope: 0.0,
        times_s: false,
    };
    while i < toks.len() {
        match toks[i] {
            "+y" => {
                i += 1;
                c.y_slope = num(&mut i)?;
            }
            "*s" => {
                c.times_s = true;
                i += 1;
            }
            other => {
                return Err(parse_err(
                    line,
                    format!("{field}: unexpected token '{other}'"),
                ));
            }
        }
    }
    Ok(c)
}

pub fn write_coefficient(c: &Coefficient) -> String {
    let mut s = match &c.profile {
        Profile::Constant(v) => format!("const {}", fmt_f64(*v)),
        Profile::Linear { a, b } => format!("linear {} {}", fmt_f64(*a), fmt_f64(*b)),
        Profile::Table { times, values } => {
            let knots: Vec<String> = times
                .iter()
                .zip(values)
                .map(|(t, v)| format!("{}:{}", fmt_f64(*t), fmt_f64(*v)))
                .collect();
            format!("table {}", knots.join(" "))
        }
    };
    if c.y_slope != 0.0 {
        s.push_str(&format!(" +y {}", fmt_f64(c.y_slope)));
    }
    if c.times_s {
        s.push_str(" *s");
    }
    s
}

pub fn parse_diffusion(text: &str) -> Result<DiffusionFile> {
    let mut version = false;
    let mut name = None;
    let (mut mu, mut sigma) = (None, None);
    let mut alpha = Coefficient::zero();
    let mut beta = Coefficient::zero();
    let mut rho = Coefficient::zero();
    let mut candidate = Candidate::zero();
    let (mut q, mut horizon) = (None, None);
    let (mut s0, mut y0) = (1.0, 0.0);
    let mut c_h = None;
    let (mut seed, mut paths, mut steps) = (None, None, None);
    let mut antithetic = true;
    for (lineno, line) in lines(text)? {
        let (key, value) = match line {
            Line::Section { kind, .. } => {
                return Err(parse_err(lineno, format!("unexpected section '{kind}'")))
            }
            Line::Field { key, value } => (key, value),
        };
        match key {
            "version" => {
                check_version(lineno, value)?;
                version = true;
            }
            "name" => name = Some(value.to_string()),
            "q" => q = Some(parse_f64(lineno, key, value)?),
            "horizon" => horizon = Some(parse_f64(lineno, key, value)?),
            "s0" => s0 = parse_f64(lineno, key, value)?,
            "y0" => y0 = parse_f64(lineno, key, value)?,
            "mu" => mu = Some(parse_coefficient(lineno, key, value)?),
            "sigma" => sigma = Some(parse_coefficient(lineno, key, value)?),
            "alpha" => alpha = parse_coefficient(lineno, key, value)?,
            "beta" => beta = parse_coefficient(lineno, key, value)?,
            "rho" => rho = parse_coefficient(lineno, key, value)?,
            "eta" => candidate.eta = parse_coefficient(lineno, key, value)?,
            "xi" => candidate.xi = parse_coefficient(lineno, key, value)?,
            "c_h" => c_h = Some(parse_f64(lineno, key, value)?),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    parse_err(
                        lineno,
                        format!("seed: '{value}' is not an unsigned integer"),
                    )
                })?)
            }
            "paths" => paths = Some(parse_usize(lineno, key, value)?),
            "steps" => steps = Some(parse_usize(lineno, key, value)?),
            "antithetic" => {
                antithetic = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(parse_err(lineno, "antithetic: expected true or false")),
                }
            }
            _ => return Err(parse_err(lineno, format!("unknown field '{key}'"))),
        }
    }
    if !version {
        return Err(parse_err(0, "missing required field 'version'"));
    }
    let spec = DiffusionSpec {
        mu: require(mu, "mu")?,
        sigma: require(sigma, "sigma")?,
        alpha,
        beta,
        rho,
        s0,
        y0,
        horizon: require(horizon, "horizon")?,
        q: require(q, "q")?,
    };
    Ok(DiffusionFile {
        name,
        spec,
        candidate,
        c_h,
        seed,
        paths,
        steps,
        antithetic,
    })
}

pub fn write_diffusion(d: &DiffusionFile) -> String {
    let mut out = format!("version = {FORMAT_VERSION}\n");
    if let Some(n) = &d.name {
        out.push_str(&format!("name = {n}\n"));
    }
    let s = &d.spec;
    out.push_str(&format!("q = {}\n", fmt_f64(s.q)));
    out.push_str(&format!("horizon = {}\n", fmt_f64(s.horizon)));
    out.push_str(&format!("s0 = {}\n", fmt_f64(s.s0)));
    out.push_str(&format!("y0 = {}\n", fmt_f64(s.y0)));
    for (k, c) in [
        ("mu", &s.mu),
        ("sigma", &s.sigma),
        ("alpha", &s.alpha),
        ("beta", &s.beta),
        ("rho", &s.rho),
        ("eta", &d.candidate.eta),
        ("xi", &d.candidate.xi),
    ] {
        out.push_str(&format!("{k} = {}\n", write_coefficient(c)));
    }
    if let Some(c) = d.c_h {
        out.push_str(&format!("c_h = {}\n", fmt_f64(c)));
    }
    if let Some(v) = d.seed {
        out.push_str(&format!("seed = {v}\n"));
    }
    if let Some(v) = d.paths {
        out.push_str(&format!("paths = {v}\n"));
    }
    if let Some(v) = d.steps {
        out.push_str(&format!("steps = {v}\n"));
    }
    out.push_str(&format!("antithetic = {}\n", d.antithetic));
    out
}
