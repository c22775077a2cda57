//! Dirichlet process mixture of univariate Gaussians.
//!
//! The base measure is normal-inverse-gamma: `σ² ~ IG(ν₁/2, ψ₁/2)` and
//! `μ | σ² ~ N(μ₁, σ²/κ₁)`. Cluster parameters are integrated out, so a
//! collapsed Gibbs sweep only needs Student-t predictives computed from
//! per-cluster sufficient statistics.

use std::fmt::Write as _;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{seeded_rng, StudentT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpmSpec {
    pub concentration: f64,
    pub mu1: f64,
    pub kappa1: f64,
    pub nu1: f64,
    pub psi1: f64,
}

impl Default for DpmSpec {
    fn default() -> Self {
        Self {
            concentration: 1.0,
            mu1: 0.0,
            kappa1: 0.5,
            nu1: 4.0,
            psi1: 1.0,
        }
    }
}

impl DpmSpec {
    /// Base measure centred on the sample with prior mean cluster variance
    /// of a quarter of the sample variance.
    pub fn scaled_to(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let nu1 = 4.0;
        Self {
            mu1: mean,
            psi1: ((nu1 - 2.0) * var / 4.0).max(f64::MIN_POSITIVE),
            nu1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("concentration", self.concentration),
            ("kappa1", self.kappa1),
            ("nu1", self.nu1),
            ("psi1", self.psi1),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.mu1.is_finite() {
            return Err(Error::Config("mu1 must be finite".into()));
        }
        Ok(())
    }

    /// Posterior predictive of a cluster with the given statistics.
    pub fn predictive(&self, stats: &ClusterStats) -> StudentT {
        let n = stats.count as f64;
        let kn = self.kappa1 + n;
        let nun = self.nu1 + n;
        let (mun, psin) = if stats.count == 0 {
            (self.mu1, self.psi1)
        } else {
            let mean = stats.sum / n;
            let ss = (stats.sumsq - stats.sum * mean).max(0.0);
            let dev = mean - self.mu1;
            (
                (self.kappa1 * self.mu1 + stats.sum) / kn,
                self.psi1 + ss + self.kappa1 * n * dev * dev / kn,
            )
        };
        StudentT {
            loc: mun,
            scale: (psin * (kn + 1.0) / (kn * nun)).sqrt(),
            dof: nun,
        }
    }
}

/// Sufficient statistics of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClusterStats {
    pub count: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl ClusterStats {
    fn add(&mut self, y: f64) {
        self.count += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn remove(&mut self, y: f64) {
        self.count -= 1;
        if self.count == 0 {
            *self = Self::default();
        } else {
            self.sum -= y;
            self.sumsq -= y * y;
        }
    }
}

/// Student-t with its log normalizer cached.
#[derive(Debug, Clone, Copy)]
struct CachedT {
    loc: f64,
    scale: f64,
    dof: f64,
    ln_norm: f64,
}

impl CachedT {
    fn new(t: StudentT) -> Self {
        let v = t.dof;
        let ln_norm = ln_gamma(0.5 * (v + 1.0))
            - ln_gamma(0.5 * v)
            - 0.5 * (v * std::f64::consts::PI).ln()
            - t.scale.ln();
        Self {
            loc: t.loc,
            scale: t.scale,
            dof: v,
            ln_norm,
        }
    }

    #[inline]
    fn ln_pdf(&self, y: f64) -> f64 {
        let z = (y - self.loc) / self.scale;
        self.ln_norm - 0.5 * (self.dof + 1.0) * (z * z / self.dof).ln_1p()
    }

    fn as_student(&self) -> StudentT {
        StudentT {
            loc: self.loc,
            scale: self.scale,
            dof: self.dof,
        }
    }
}

/// One recorded Gibbs state.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmState {
    /// Cluster label per observation; empty for states loaded from disk.
    pub assignments: Vec<u32>,
    pub clusters: Vec<ClusterStats>,
    pub iteration: usize,
}

impl DpmState {
    pub fn n(&self) -> u64 {
        self.clusters.iter().map(|c| c.count).sum()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Rebuilds cluster statistics from the assignments.
    pub fn recompute_stats(&self, y: &[f64]) -> Vec<ClusterStats> {
        let mut stats = vec![ClusterStats::default(); self.clusters.len()];
        for (&label, &v) in self.assignments.iter().zip(y) {
            stats[label as usize].add(v);
        }
        stats
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DpmInit {
    #[default]
    OneCluster,
    Singletons,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: DpmInit,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_iter: 2000,
            burn_in: 500,
            thin: 10,
            seed: 0,
            init: DpmInit::OneCluster,
        }
    }
}

/// Posterior sample of DPM states with the Rao-Blackwellized predictive.
#[derive(Debug, Clone)]
pub struct DpmPosterior {
    spec: DpmSpec,
    states: Vec<DpmState>,
    /// Flattened mixture over all states: `(weight, component)`.
    components: Vec<(f64, CachedT)>,
}

impl PartialEq for DpmPosterior {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.states == other.states
    }
}

/// Collapsed Gibbs sampler over cluster assignments.
pub fn dpm_gibbs_fit(spec: &DpmSpec, y: &[f64], config: &GibbsConfig) -> Result<DpmPosterior> {
    spec.validate()?;
    if config.n_iter <= config.burn_in {
        return Err(Error::Config(format!(
            "iterations ({}) must exceed burn-in ({})",
            config.n_iter, config.burn_in
        )));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite response {bad}")));
    }
    let thin = config.thin.max(1);
    let n = y.len();
    let mut rng = seeded_rng(config.seed);

    let mut labels: Vec<u32>;
    let mut clusters: Vec<ClusterStats>;
    match config.init {
        DpmInit::OneCluster => {
            labels = vec![0; n];
            let mut all = ClusterStats::default();
            y.iter().for_each(|&v| all.add(v));
            clusters = if n > 0 { vec![all] } else { Vec::new() };
        }
        DpmInit::Singletons => {
            labels = (0..n as u32).collect();
            clusters = y
                .iter()
                .map(|&v| {
                    let mut c = ClusterStats::default();
                    c.add(v);
                    c
                })
                .collect();
        }
    }
    let mut preds: Vec<CachedT> = clusters
        .iter()
        .map(|c| CachedT::new(spec.predictive(c)))
        .collect();
    let base = CachedT::new(spec.predictive(&ClusterStats::default()));
    let ln_c = spec.concentration.ln();
    let mut free: Vec<u32> = Vec::new();
    let mut logw: Vec<f64> = Vec::new();
    let mut states = Vec::new();

    for iteration in 1..=config.n_iter {
        for i in 0..n {
            let v = y[i];
            let old = labels[i] as usize;
            clusters[old].remove(v);
            if clusters[old].count == 0 {
                free.push(old as u32);
            } else {
                preds[old] = CachedT::new(spec.predictive(&clusters[old]));
            }

            logw.clear();
            let mut max = f64::NEG_INFINITY;
            for (c, p) in clusters.iter().zip(&preds) {
                let w = if c.count > 0 {
                    (c.count as f64).ln() + p.ln_pdf(v)
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(w);
                logw.push(w);
            }
            let w_new = ln_c + base.ln_pdf(v);
            max = max.max(w_new);
            let total: f64 = logw.iter().map(|w| (w - max).exp()).sum::<f64>() + (w_new - max).exp();
            let mut target = rng.random::<f64>() * total;
            let mut choice = None;
            for (k, w) in logw.iter().enumerate() {
                let p = (w - max).exp();
                if target < p {
                    choice = Some(k);
                    break;
                }
                target -= p;
            }
            let k = match choice {
                Some(k) => k,
                None => match free.pop() {
                    Some(k) => k as usize,
                    None => {
                        clusters.push(ClusterStats::default());
                        preds.push(base);
                        clusters.len() - 1
                    }
                },
            };
            clusters[k].add(v);
            preds[k] = CachedT::new(spec.predictive(&clusters[k]));
            labels[i] = k as u32;
        }

        if iteration > config.burn_in && (iteration - config.burn_in) % thin == 0 {
            states.push(compact_state(&labels, &clusters, iteration));
        }
    }
    Ok(DpmPosterior::from_states(*spec, states))
}

/// Drops empty clusters and relabels in order of first appearance.
fn compact_state(labels: &[u32], clusters: &[ClusterStats], iteration: usize) -> DpmState {
    let mut map = vec![u32::MAX; clusters.len()];
    let mut out_clusters = Vec::new();
    let assignments = labels
        .iter()
        .map(|&l| {
            let slot = &mut map[l as usize];
            if *slot == u32::MAX {
                *slot = out_clusters.len() as u32;
                out_clusters.push(clusters[l as usize]);
            }
            *slot
        })
        .collect();
    DpmState {
        assignments,
        clusters: out_clusters,
        iteration,
    }
}

impl DpmPosterior {
    pub fn from_states(spec: DpmSpec, states: Vec<DpmState>) -> Self {
        let base = CachedT::new(spec.predictive(&ClusterStats::default()));
        let mut components = Vec::new();
        let n_states = states.len().max(1) as f64;
        for state in &states {
            let denom = state.n() as f64 + spec.concentration;
            for c in &state.clusters {
                components.push((
                    c.count as f64 / denom / n_states,
                    CachedT::new(spec.predictive(c)),
                ));
            }
            components.push((spec.concentration / denom / n_states, base));
        }
        Self {
            spec,
            states,
            components,
        }
    }

    pub fn spec(&self) -> &DpmSpec {
        &self.spec
    }

    pub fn states(&self) -> &[DpmState] {
        &self.states
    }

    fn ensure_states(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidInput("DPM posterior has no recorded states".into()));
        }
        Ok(())
    }

    /// Posterior predictive density averaged over states.
    pub fn predictive_density(&self, y: f64) -> f64 {
        self.components
            .iter()
            .map(|(w, t)| w * t.ln_pdf(y).exp())
            .sum()
    }

    pub fn predictive_cdf(&self, y: f64) -> f64 {
        self.components
            .iter()
            .map(|(w, t)| w * t.as_student().cdf(y))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Predictive density on a grid; errors on an empty state list.
    pub fn density_on(&self, grid: &[f64]) -> Result<Vec<f64>> {
        self.ensure_states()?;
        Ok(grid.iter().map(|&y| self.predictive_density(y)).collect())
    }

    /// Inverse of the predictive CDF by bisection.
    pub fn predictive_quantile(&self, u: f64) -> Result<f64> {
        self.ensure_states()?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain { value: u, domain: "(0, 1)" });
        }
        let (mut lo, mut hi) = (self.spec.mu1 - 1.0, self.spec.mu1 + 1.0);
        let mut width = 1.0;
        while self.predictive_cdf(lo) > u {
            width *= 2.0;
            lo -= width;
        }
        width = 1.0;
        while self.predictive_cdf(hi) < u {
            width *= 2.0;
            hi += width;
        }
        Ok(crate::math::bisect_increasing(|y| self.predictive_cdf(y), u, lo, hi))
    }

    /// `n_draws` sorted values from the predictive mixture of one state.
    pub fn draw_marginal_sample(&self, state: usize, n_draws: usize, seed: u64) -> Result<Vec<f64>> {
        self.ensure_states()?;
        if n_draws < 1 {
            return Err(Error::InvalidInput("need at least one marginal draw".into()));
        }
        let st = self.states.get(state).ok_or_else(|| {
            Error::InvalidInput(format!("state {state} out of range ({})", self.states.len()))
        })?;
        let comps: Vec<StudentT> = st
            .clusters
            .iter()
            .map(|c| self.spec.predictive(c))
            .chain(std::iter::once(self.spec.predictive(&ClusterStats::default())))
            .collect();
        let weights: Vec<f64> = st
            .clusters
            .iter()
            .map(|c| c.count as f64)
            .chain(std::iter::once(self.spec.concentration))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut rng = seeded_rng(seed);
        let mut out: Vec<f64> = (0..n_draws)
            .map(|_| {
                let mut t = rng.random::<f64>() * total;
                let mut k = comps.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if t < *w {
                        k = i;
                        break;
                    }
                    t -= w;
                }
                comps[k].sample(&mut rng)
            })
            .collect();
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    /// Text form: spec line then one `state` line per state holding
    /// `count sum sumsq` triples. Assignments are not stored.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = format!(
            "spec={:?} {:?} {:?} {:?} {:?}\n",
            s.concentration, s.mu1, s.kappa1, s.nu1, s.psi1
        );
        for st in &self.states {
            let _ = write!(out, "state={}", st.iteration);
            for c in &st.clusters {
                let _ = write!(out, " {} {:?} {:?}", c.count, c.sum, c.sumsq);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = None;
        let mut states = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { line: ln + 1, msg };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let words: Vec<&str> = rest.split_whitespace().collect();
            let num = |w: &str| -> Result<f64> {
                w.parse().map_err(|_| err(format!("bad number {w:?}")))
            };
            match key {
                "spec" if words.len() == 5 => {
                    let s = DpmSpec {
                        concentration: num(words[0])?,
                        mu1: num(words[1])?,
                        kappa1: num(words[2])?,
                        nu1: num(words[3])?,
                        psi1: num(words[4])?,
                    };
                    s.validate()?;
                    spec = Some(s);
                }
                "state" if words.len() % 3 == 1 => {
                    let iteration = num(words[0])? as usize;
                    let clusters = words[1..]
                        .chunks(3)
                        .map(|c| {
                            Ok(ClusterStats {
                                count: num(c[0])? as u64,
                                sum: num(c[1])?,
                                sumsq: num(c[2])?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    states.push(DpmState {
                        assignments: Vec::new(),
                        clusters,
                        iteration,
                    });
                }
                _ => return Err(err(format!("unexpected line {line:?}"))),
            }
        }
        let spec = spec.ok_or_else(|| Error::Parse { line: 0, msg: "missing spec".into() })?;
        Ok(Self::from_states(spec, states))
    }
}
