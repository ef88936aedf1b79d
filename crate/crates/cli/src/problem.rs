//! Problem files: one operator/subspace entry plus values, time data,
//! an optional delay block and the verification grid.

use std::collections::{BTreeMap, BTreeSet};

use fracinv::corpus::{parse_entry_table, CorpusEntry, Instance};
use fracinv::expr::{parse, rational, Expr};
use fracinv::funcalg::{q_to_f64, Q};
use serde::Deserialize;

#[derive(Deserialize, Clone, Debug)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Num {
    fn to_q(&self) -> Result<Q, String> {
        match self {
            Num::Int(i) => Ok(Q::from_integer((*i).into())),
            // decimal text, so 0.1 reads as 1/10
            Num::Float(f) => rational(&format!("{f}")).map_err(|e| e.to_string()),
            Num::Str(s) => rational(s).map_err(|e| format!("`{s}`: {e}")),
        }
    }

    fn to_f64(&self) -> Result<f64, String> {
        match self {
            Num::Float(f) => Ok(*f),
            _ => self.to_q().map(|v| q_to_f64(&v)),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[allow(dead_code)]
    entry: toml::Value,
    #[serde(default)]
    values: BTreeMap<String, Num>,
    time: Option<RawTime>,
    delay: Option<RawDelay>,
    #[serde(default)]
    grid: RawGrid,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    alpha: f64,
    nu: Vec<Num>,
    mu: Option<Vec<Num>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelay {
    mu: Num,
    tau: Num,
    history: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    t_final: f64,
    h: f64,
    t_min: f64,
    points: usize,
    x1: [f64; 2],
    x2: [f64; 2],
    tol: Option<f64>,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid {
            t_final: 1.0,
            h: 5e-4,
            t_min: fracinv::solutions::DEFAULT_T_MIN,
            points: 5,
            x1: [0.0, 1.0],
            x2: [0.0, 1.0],
            tol: None,
        }
    }
}

pub struct TimeData {
    pub alpha: f64,
    pub nu: Vec<f64>,
    pub mu: Option<Vec<f64>>,
}

pub struct DelayData {
    pub mu: f64,
    pub tau: f64,
    /// One expression in `t` per coordinate; `None` means constant history.
    pub history: Option<Vec<Expr>>,
}

pub struct Grid {
    pub t_final: f64,
    pub h: f64,
    pub t_min: f64,
    pub points: usize,
    pub x1: [f64; 2],
    pub x2: [f64; 2],
    pub tol: Option<f64>,
}

impl Grid {
    pub fn space_points(&self) -> Vec<(f64, f64)> {
        let n = self.points;
        let at = |r: [f64; 2], i: usize| if n == 1 { r[0] } else { r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64 };
        let mut p = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                p.push((at(self.x1, i), at(self.x2, j)));
            }
        }
        p
    }
}

pub struct Problem {
    pub entry: CorpusEntry,
    pub instance: Instance,
    pub time: Option<TimeData>,
    pub delay: Option<DelayData>,
    pub grid: Grid,
}

fn syntax(name: &str, text: &str, e: toml::de::Error) -> String {
    match e.span() {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!("{name}:{line}: {}", e.message())
        }
        None => format!("{name}: {}", e.message()),
    }
}

pub fn parse_problem(text: &str, name: &str) -> Result<Problem, String> {
    let raw: RawProblem = toml::from_str(text).map_err(|e| syntax(name, text, e))?;
    let mut values = BTreeMap::new();
    for (k, v) in &raw.values {
        values.insert(k.clone(), v.to_q().map_err(|e| format!("{name}: values.{k}: {e}"))?);
    }
    let declared: BTreeSet<String> = values.keys().cloned().collect();
    let entry = parse_entry_table(text, name, &declared).map_err(|e| e.to_string())?;
    let instance = entry.resolve(&values).map_err(|e| format!("{name}: entry `{}`: {e}", entry.id))?;

    let time = match raw.time {
        None => None,
        Some(t) => {
            let nu = t.nu.iter().map(Num::to_f64).collect::<Result<Vec<_>, _>>();
            let nu = nu.map_err(|e| format!("{name}: time.nu: {e}"))?;
            let mu = match t.mu {
                Some(m) => Some(
                    m.iter()
                        .map(Num::to_f64)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| format!("{name}: time.mu: {e}"))?,
                ),
                None => None,
            };
            Some(TimeData { alpha: t.alpha, nu, mu })
        }
    };
    let delay = match raw.delay {
        None => None,
        Some(d) => {
            let history = match d.history {
                None => None,
                Some(hs) => {
                    let mut out = Vec::with_capacity(hs.len());
                    for h in &hs {
                        let e = parse(h).map_err(|e| format!("{name}: delay.history `{h}`: {e}"))?;
                        if let Some(s) = e.symbols().into_iter().find(|s| s != "t") {
                            return Err(format!("{name}: delay.history `{h}`: only `t` may appear, found `{s}`"));
                        }
                        out.push(e);
                    }
                    Some(out)
                }
            };
            Some(DelayData {
                mu: d.mu.to_f64().map_err(|e| format!("{name}: delay.mu: {e}"))?,
                tau: d.tau.to_f64().map_err(|e| format!("{name}: delay.tau: {e}"))?,
                history,
            })
        }
    };
    let g = raw.grid;
    if !(g.t_final > 0.0) || !(g.h > 0.0) || g.points == 0 || !(g.t_min >= 0.0) {
        return Err(format!("{name}: grid needs t_final > 0, h > 0, t_min >= 0 and points >= 1"));
    }
    let grid = Grid { t_final: g.t_final, h: g.h, t_min: g.t_min, points: g.points, x1: g.x1, x2: g.x2, tol: g.tol };
    Ok(Problem { entry, instance, time, delay, grid })
}
