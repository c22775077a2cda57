//! Plain-text container for a fitted model.
//!
//! Sections start with `[name]` lines. Floats use the shortest round-trip
//! representation, so writing a reloaded model reproduces the file exactly.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::conditional::{ConditionalModel, MarginalPosterior};
use crate::data::Schema;
use crate::dpm::DpmPosterior;
use crate::empirical::EmpiricalMarginal;
use crate::error::{Error, Result};
use crate::pl::{GaussianPrior, PLPosterior, RateSign};
use crate::polya_tree::PolyaTreePosterior;

const MAGIC: &str = "plcopula-model 1";

/// A fitted model with the encoding needed to score raw rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub model: ConditionalModel,
    pub feature_names: Vec<String>,
    pub schema: Option<Schema>,
}

fn join(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:?}");
    }
    out
}

pub fn write_model(stored: &StoredModel) -> String {
    let m = &stored.model;
    let pl = m.pl();
    let mut out = format!("{MAGIC}\n[pl]\n");
    let _ = writeln!(out, "sign={}", pl.sign.symbol());
    let _ = writeln!(out, "beta_map={}", join(&pl.beta_map));
    let _ = writeln!(out, "laplace_cov={}", join(pl.laplace_cov.as_slice().expect("standard layout")));
    let _ = writeln!(out, "log_post_at_map={:?}", pl.log_post_at_map);
    let _ = writeln!(out, "prior_mean={}", join(&pl.prior.mean));
    let _ = writeln!(out, "prior_var={}", join(&pl.prior.variance));
    let _ = writeln!(out, "iterations={}", pl.iterations);
    let _ = writeln!(out, "grad_norm={:?}", pl.grad_norm);
    if let Some(acc) = pl.mh_acceptance {
        let _ = writeln!(out, "mh_acceptance={acc:?}");
    }
    for s in pl.mh_samples.iter().flatten() {
        let _ = writeln!(out, "mh_sample={}", join(s));
    }
    out.push_str("[features]\n");
    for f in &stored.feature_names {
        let _ = writeln!(out, "{f}");
    }
    if let Some(schema) = &stored.schema {
        out.push_str("[schema]\n");
        out.push_str(&schema.to_string());
        if !out.ends_with('\n') {
            out.push('\n');
        }
    }
    let _ = writeln!(out, "[fx]\nrows={}", m.fx().nrows());
    for row in m.fx().rows() {
        let _ = writeln!(out, "{}", join(row.as_slice().expect("standard layout")));
    }
    let _ = writeln!(out, "[marginal]\nkind={}", m.marginal().name());
    match m.marginal() {
        MarginalPosterior::Ecdf(e) | MarginalPosterior::Bootstrap(e) => {
            let _ = writeln!(out, "values={}", join(e.sorted_values()));
        }
        MarginalPosterior::PolyaTree(p) => out.push_str(&p.to_text()),
        MarginalPosterior::Dpm(d) => out.push_str(&d.to_text()),
    }
    out.push_str("[end]\n");
    out
}

struct Sections<'a> {
    parts: Vec<(&'a str, usize, Vec<&'a str>)>,
}

impl<'a> Sections<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("missing header {MAGIC:?}"),
                })
            }
        }
        let mut parts: Vec<(&str, usize, Vec<&str>)> = Vec::new();
        for (ln, line) in lines {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                parts.push((name, ln + 1, Vec::new()));
            } else if let Some(last) = parts.last_mut() {
                last.2.push(line);
            } else if !line.trim().is_empty() {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: "content before the first section".into(),
                });
            }
        }
        if parts.last().map(|p| p.0) != Some("end") {
            return Err(Error::Parse {
                line: text.lines().count(),
                msg: "model file is truncated (no [end])".into(),
            });
        }
        Ok(Self { parts })
    }

    fn get(&self, name: &str) -> Option<(usize, &[&'a str])> {
        self.parts
            .iter()
            .find(|p| p.0 == name)
            .map(|p| (p.1, p.2.as_slice()))
    }

    fn require(&self, name: &str) -> Result<(usize, &[&'a str])> {
        self.get(name).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing section [{name}]"),
        })
    }
}

fn numbers(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|w| {
            w.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number {w:?}"),
            })
        })
        .collect()
}

fn key_values<'a>(start: usize, lines: &[&'a str]) -> Result<Vec<(usize, &'a str, &'a str)>> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (start + i + 1, k.trim(), v.trim()))
                .ok_or_else(|| Error::Parse {
                    line: start + i + 1,
                    msg: format!("expected key=value, got {l:?}"),
                })
        })
        .collect()
}

pub fn read_model(text: &str) -> Result<StoredModel> {
    let sections = Sections::parse(text)?;

    let (start, lines) = sections.require("pl")?;
    let mut sign = RateSign::Positive;
    let (mut beta, mut cov, mut mean, mut var) = (None, None, None, None);
    let (mut log_post, mut iterations, mut grad_norm) = (0.0, 0, 0.0);
    let mut mh_acceptance = None;
    let mut mh_samples: Vec<Vec<f64>> = Vec::new();
    for (ln, key, value) in key_values(start, lines)? {
        match key {
            "sign" => {
                sign = RateSign::from_symbol(value).ok_or_else(|| Error::Parse {
                    line: ln,
                    msg: format!("bad sign {value:?}"),
                })?
            }
            "beta_map" => beta = Some(numbers(ln, value)?),
            "laplace_cov" => cov = Some((ln, numbers(ln, value)?)),
            "log_post_at_map" => log_post = numbers(ln, value)?.first().copied().unwrap_or(0.0),
            "prior_mean" => mean = Some(numbers(ln, value)?),
            "prior_var" => var = Some(numbers(ln, value)?),
            "iterations" => iterations = numbers(ln, value)?.first().copied().unwrap_or(0.0) as usize,
            "grad_norm" => grad_norm = numbers(ln, value)?.first().copied().unwrap_or(0.0),
            "mh_acceptance" => mh_acceptance = numbers(ln, value)?.first().copied(),
            "mh_sample" => mh_samples.push(numbers(ln, value)?),
            other => {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        line: start,
        msg: format!("[pl] lacks {what}"),
    };
    let beta = beta.ok_or_else(|| missing("beta_map"))?;
    let p = beta.len();
    let (cov_line, cov) = cov.ok_or_else(|| missing("laplace_cov"))?;
    let laplace_cov = Array2::from_shape_vec((p, p), cov).map_err(|_| Error::Parse {
        line: cov_line,
        msg: format!("laplace_cov must hold {} values", p * p),
    })?;
    let pl = PLPosterior {
        beta_map: beta,
        laplace_cov,
        log_post_at_map: log_post,
        prior: GaussianPrior {
            mean: mean.ok_or_else(|| missing("prior_mean"))?,
            variance: var.ok_or_else(|| missing("prior_var"))?,
        },
        sign,
        iterations,
        grad_norm,
        mh_samples: if mh_samples.is_empty() { None } else { Some(mh_samples) },
        mh_acceptance,
    };

    let feature_names: Vec<String> = sections
        .get("features")
        .map(|(_, l)| l.iter().filter(|s| !s.trim().is_empty()).map(|s| s.to_string()).collect())
        .unwrap_or_default();
    let schema = match sections.get("schema") {
        Some((_, lines)) => Some(lines.join("\n").parse::<Schema>()?),
        None => None,
    };

    let (start, lines) = sections.require("fx")?;
    let rows_decl = lines
        .first()
        .and_then(|l| l.strip_prefix("rows="))
        .and_then(|v| v.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Parse {
            line: start + 1,
            msg: "expected rows=<count>".into(),
        })?;
    let mut flat = Vec::with_capacity(rows_decl * p);
    let mut rows = 0;
    for (i, line) in lines[1..].iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = numbers(start + i + 2, line)?;
        if v.len() != p {
            return Err(Error::Parse {
                line: start + i + 2,
                msg: format!("F_X row has {} values, expected {p}", v.len()),
            });
        }
        flat.extend(v);
        rows += 1;
    }
    if rows != rows_decl {
        return Err(Error::Parse {
            line: start,
            msg: format!("declared {rows_decl} F_X rows, found {rows}"),
        });
    }
    let fx = Array2::from_shape_vec((rows, p), flat).map_err(|e| Error::Dimension(e.to_string()))?;

    let (start, lines) = sections.require("marginal")?;
    let kind = lines
        .first()
        .and_then(|l| l.strip_prefix("kind="))
        .map(str::trim)
        .ok_or_else(|| Error::Parse {
            line: start + 1,
            msg: "expected kind=<marginal>".into(),
        })?;
    let body = lines[1..].join("\n");
    let empirical = || -> Result<EmpiricalMarginal> {
        let values = body.trim().strip_prefix("values=").ok_or_else(|| Error::Parse {
            line: start + 2,
            msg: "expected values=".into(),
        })?;
        EmpiricalMarginal::new(&numbers(start + 2, values)?)
    };
    let marginal = match kind {
        "ecdf" => MarginalPosterior::Ecdf(empirical()?),
        "bootstrap" => MarginalPosterior::Bootstrap(empirical()?),
        "polya-tree" => MarginalPosterior::PolyaTree(body.parse::<PolyaTreePosterior>()?),
        "dpm" => MarginalPosterior::Dpm(DpmPosterior::from_text(&body)?),
        other => {
            return Err(Error::Parse {
                line: start + 1,
                msg: format!("unknown marginal kind {other:?}"),
            })
        }
    };

    Ok(StoredModel {
        model: ConditionalModel::new(marginal, pl, fx)?,
        feature_names,
        schema,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polya_tree::{pt_update, BaseDistribution, PolyaTreeSpec};
    use ndarray::array;

    fn small_model(marginal: MarginalPosterior) -> StoredModel {
        let pl = PLPosterior {
            beta_map: vec![0.1, -0.3],
            laplace_cov: array![[0.01, 0.002], [0.002, 0.04]],
            log_post_at_map: -12.25,
            prior: GaussianPrior::isotropic(2, 0.0, 1.0),
            sign: RateSign::Positive,
            iterations: 5,
            grad_norm: 1e-11,
            mh_samples: None,
            mh_acceptance: None,
        };
        let fx = array![[0.0, 1.0], [1.5, -2.0], [0.3, 0.3]];
        StoredModel {
            model: ConditionalModel::new(marginal, pl, fx).unwrap(),
            feature_names: vec!["a".into(), "b=x".into()],
            schema: Some(Schema::new("y").numeric("a").categorical("b", "w")),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let spec = PolyaTreeSpec::new(BaseDistribution::Gaussian { mean: 1.0, sd: 2.0 }).with_depth(5);
        let marginals = [
            MarginalPosterior::Ecdf(EmpiricalMarginal::new(&[0.1, 0.7, 0.2]).unwrap()),
            MarginalPosterior::PolyaTree(pt_update(&spec, &[0.1, 0.7, 0.2]).unwrap()),
        ];
        for m in marginals {
            let stored = small_model(m);
            let text = write_model(&stored);
            let back = read_model(&text).unwrap();
            assert_eq!(back, stored);
            assert_eq!(write_model(&back), text);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = write_model(&small_model(MarginalPosterior::Ecdf(
            EmpiricalMarginal::new(&[1.0, 2.0]).unwrap(),
        )));
        let cut = &text[..text.len() / 2];
        assert!(matches!(read_model(cut), Err(Error::Parse { .. })));
        assert!(read_model("garbage").is_err());
    }
}
