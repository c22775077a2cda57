//! Pólya tree prior and posterior for the response marginal.
//!
//! The partition is dyadic in the mass space of a centering distribution
//! `G0`: at level `m` the set `B_{m,k}` is `G0⁻¹([k 2⁻ᵐ, (k+1) 2⁻ᵐ))`. Each
//! node splits its mass with `θ ~ Beta(α_m + n_left, α_m + n_right)`.
//! Below the truncation depth mass is spread as `G0` restricted to the leaf.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::math::{mix_seed, seeded_rng, std_normal_cdf, std_normal_quantile, LN_2PI};

/// Largest supported truncation depth.
pub const MAX_DEPTH: u32 = 30;

/// Centering distribution of the partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseDistribution {
    Gaussian { mean: f64, sd: f64 },
    Laplace { loc: f64, scale: f64 },
}

impl BaseDistribution {
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            BaseDistribution::Gaussian { mean, sd } => std_normal_cdf((y - mean) / sd),
            BaseDistribution::Laplace { loc, scale } => {
                let t = (y - loc) / scale;
                if t < 0.0 {
                    0.5 * t.exp()
                } else {
                    1.0 - 0.5 * (-t).exp()
                }
            }
        }
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        match *self {
            BaseDistribution::Gaussian { mean, sd } => {
                let t = (y - mean) / sd;
                -0.5 * t * t - sd.ln() - 0.5 * LN_2PI
            }
            BaseDistribution::Laplace { loc, scale } => {
                -((y - loc) / scale).abs() - (2.0 * scale).ln()
            }
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    /// Inverse CDF; `v` is clamped into the open unit interval.
    pub fn quantile(&self, v: f64) -> f64 {
        let v = v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        match *self {
            BaseDistribution::Gaussian { mean, sd } => mean + sd * std_normal_quantile(v),
            BaseDistribution::Laplace { loc, scale } => {
                if v < 0.5 {
                    loc + scale * (2.0 * v).ln()
                } else {
                    loc - scale * (2.0 * (1.0 - v)).ln()
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (centre, spread) = match *self {
            BaseDistribution::Gaussian { mean, sd } => (mean, sd),
            BaseDistribution::Laplace { loc, scale } => (loc, scale),
        };
        if !centre.is_finite() || !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::Config(format!(
                "base distribution needs a finite location and positive scale, got {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for BaseDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseDistribution::Gaussian { mean, sd } => write!(f, "gaussian {mean:?} {sd:?}"),
            BaseDistribution::Laplace { loc, scale } => write!(f, "laplace {loc:?} {scale:?}"),
        }
    }
}

/// Beta concentration per level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    /// `α_m = c·m²`, which makes draws absolutely continuous.
    Quadratic(f64),
    Constant(f64),
}

impl AlphaSchedule {
    pub fn alpha(&self, level: u32) -> f64 {
        match *self {
            AlphaSchedule::Quadratic(c) => c * (level as f64) * (level as f64),
            AlphaSchedule::Constant(c) => c,
        }
    }

    fn constant(&self) -> f64 {
        match *self {
            AlphaSchedule::Quadratic(c) | AlphaSchedule::Constant(c) => c,
        }
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule::Quadratic(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyaTreeSpec {
    pub base: BaseDistribution,
    pub alpha: AlphaSchedule,
    pub depth: u32,
}

impl PolyaTreeSpec {
    pub fn new(base: BaseDistribution) -> Self {
        Self {
            base,
            alpha: AlphaSchedule::default(),
            depth: 12,
        }
    }

    pub fn with_depth(mut self, depth: u32) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_alpha(mut self, alpha: AlphaSchedule) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::Config(format!(
                "tree depth must be in 1..={MAX_DEPTH}, got {}",
                self.depth
            )));
        }
        let c = self.alpha.constant();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("alpha constant must be positive, got {c}")));
        }
        Ok(())
    }

    /// Leaf index of `y` at the truncation depth.
    fn leaf(&self, y: f64) -> u32 {
        let cells = (1u64 << self.depth) as f64;
        let k = (self.base.cdf(y) * cells).floor();
        (k.max(0.0) as u64).min((1u64 << self.depth) - 1) as u32
    }
}

/// Pólya tree posterior: the tree settings plus sparse counts per node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyaTreePosterior {
    spec: PolyaTreeSpec,
    total: u64,
    /// `counts[m - 1]` maps node index `k` at level `m` to its count.
    counts: Vec<BTreeMap<u32, u64>>,
}

/// Posterior after routing every `y` down the tree.
pub fn pt_update(spec: &PolyaTreeSpec, y: &[f64]) -> Result<PolyaTreePosterior> {
    let mut post = PolyaTreePosterior::prior(spec)?;
    post.update(y)?;
    Ok(post)
}

impl PolyaTreePosterior {
    pub fn prior(spec: &PolyaTreeSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: *spec,
            total: 0,
            counts: vec![BTreeMap::new(); spec.depth as usize],
        })
    }

    pub fn spec(&self) -> &PolyaTreeSpec {
        &self.spec
    }

    pub fn n(&self) -> u64 {
        self.total
    }

    pub fn depth(&self) -> u32 {
        self.spec.depth
    }

    /// Count in node `k` at level `m`; level 0 is the root.
    pub fn count(&self, level: u32, k: u32) -> u64 {
        if level == 0 {
            return self.total;
        }
        self.counts[level as usize - 1].get(&k).copied().unwrap_or(0)
    }

    /// Nonzero node counts as `(level, index, count)`.
    pub fn nodes(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(m, level)| level.iter().map(move |(&k, &c)| (m as u32 + 1, k, c)))
    }

    pub fn insert(&mut self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite response {y}")));
        }
        let leaf = self.spec.leaf(y);
        let depth = self.spec.depth;
        for (m, level) in self.counts.iter_mut().enumerate() {
            *level.entry(leaf >> (depth - 1 - m as u32)).or_insert(0) += 1;
        }
        self.total += 1;
        Ok(())
    }

    /// Batch insertion: leaves are sorted once and run-length counted.
    pub fn update(&mut self, y: &[f64]) -> Result<()> {
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite response {bad}")));
        }
        let mut leaves: Vec<u32> = y.iter().map(|&v| self.spec.leaf(v)).collect();
        leaves.sort_unstable();
        let depth = self.spec.depth;
        for (m, level) in self.counts.iter_mut().enumerate() {
            let shift = depth - 1 - m as u32;
            let mut i = 0;
            while i < leaves.len() {
                let node = leaves[i] >> shift;
                let mut j = i + 1;
                while j < leaves.len() && leaves[j] >> shift == node {
                    j += 1;
                }
                *level.entry(node).or_insert(0) += (j - i) as u64;
                i = j;
            }
        }
        self.total += y.len() as u64;
        Ok(())
    }

    /// Posterior Beta parameters of the split below node `k` at `level`.
    pub fn split_params(&self, level: u32, k: u32) -> (f64, f64) {
        let alpha = self.spec.alpha.alpha(level + 1);
        (
            alpha + self.count(level + 1, 2 * k) as f64,
            alpha + self.count(level + 1, 2 * k + 1) as f64,
        )
    }

    fn mean_left_fraction(&self, level: u32, k: u32) -> f64 {
        let (a, b) = self.split_params(level, k);
        a / (a + b)
    }

    /// Posterior-mean density.
    pub fn mean_density(&self, y: f64) -> f64 {
        self.mean_ln_density(y).exp()
    }

    pub fn mean_ln_density(&self, y: f64) -> f64 {
        let depth = self.spec.depth;
        let leaf = self.spec.leaf(y);
        let mut ln_factor = 0.0;
        for m in 1..=depth {
            let node = leaf >> (depth - m);
            let (a, b) = self.split_params(m - 1, node >> 1);
            let own = if node & 1 == 0 { a } else { b };
            ln_factor += (2.0 * own / (a + b)).ln();
        }
        self.spec.base.ln_pdf(y) + ln_factor
    }

    /// Posterior-mean CDF.
    pub fn mean_cdf(&self, y: f64) -> f64 {
        let depth = self.spec.depth;
        let v = self.spec.base.cdf(y);
        let leaf = self.spec.leaf(y);
        let mut below = 0.0;
        let mut mass = 1.0;
        for m in 1..=depth {
            let node = leaf >> (depth - m);
            let left = self.mean_left_fraction(m - 1, node >> 1);
            if node & 1 == 0 {
                mass *= left;
            } else {
                below += mass * left;
                mass *= 1.0 - left;
            }
        }
        let cells = (1u64 << depth) as f64;
        let within = (v * cells - leaf as f64).clamp(0.0, 1.0);
        (below + mass * within).clamp(0.0, 1.0)
    }

    /// Posterior-mean inverse CDF.
    pub fn mean_inverse_cdf(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        Ok(self.invert(u, |level, k| self.mean_left_fraction(level, k)))
    }

    /// Inverse-CDF descent shared by the mean and random-measure samplers.
    ///
    /// `[a, b]` is the cumulative mass of the current node. Descend left
    /// when `u ≤ a + θ(b - a)`; otherwise move `a` up and keep `b`.
    fn invert<F: FnMut(u32, u32) -> f64>(&self, u: f64, mut theta: F) -> f64 {
        let depth = self.spec.depth;
        let (mut a, mut b) = (0.0_f64, 1.0_f64);
        let mut k = 0u32;
        for level in 0..depth {
            let split = a + theta(level, k) * (b - a);
            if u <= split {
                b = split;
                k <<= 1;
            } else {
                a = split;
                k = (k << 1) | 1;
            }
        }
        let frac = if b > a { ((u - a) / (b - a)).clamp(0.0, 1.0) } else { 0.5 };
        let cells = (1u64 << depth) as f64;
        self.spec.base.quantile((k as f64 + frac) / cells)
    }

    /// One random measure from the posterior, realised lazily per seed.
    pub fn draw(&self, seed: u64) -> PolyaTreeDraw<'_> {
        PolyaTreeDraw { post: self, seed }
    }

    /// Serialized form: `key=value` header lines, then `path,count` rows with
    /// the binary path of each nonzero node.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let (kind, c) = match self.spec.alpha {
            AlphaSchedule::Quadratic(c) => ("quadratic", c),
            AlphaSchedule::Constant(c) => ("constant", c),
        };
        let _ = writeln!(out, "base={}", self.spec.base);
        let _ = writeln!(out, "alpha={kind} {c:?}");
        let _ = writeln!(out, "depth={}", self.spec.depth);
        let _ = writeln!(out, "n={}", self.total);
        let _ = writeln!(out, "path,count");
        for (level, k, count) in self.nodes() {
            let _ = writeln!(out, "{:0width$b},{count}", k, width = level as usize);
        }
        out
    }
}

impl FromStr for PolyaTreePosterior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut base = None;
        let mut alpha = None;
        let mut depth = None;
        let mut total = None;
        let mut lines = s.lines().enumerate();
        let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
        for (ln, line) in lines.by_ref() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "path,count" {
                break;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(ln, format!("expected key=value, got {line:?}")))?;
            let words: Vec<&str> = value.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                words
                    .get(i)
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| parse_err(ln, format!("bad number in {line:?}")))
            };
            match key.trim() {
                "base" => {
                    base = Some(match words.first().copied() {
                        Some("gaussian") => BaseDistribution::Gaussian { mean: num(1)?, sd: num(2)? },
                        Some("laplace") => BaseDistribution::Laplace { loc: num(1)?, scale: num(2)? },
                        other => return Err(parse_err(ln, format!("unknown base {other:?}"))),
                    })
                }
                "alpha" => {
                    alpha = Some(match words.first().copied() {
                        Some("quadratic") => AlphaSchedule::Quadratic(num(1)?),
                        Some("constant") => AlphaSchedule::Constant(num(1)?),
                        other => return Err(parse_err(ln, format!("unknown alpha {other:?}"))),
                    })
                }
                "depth" => depth = Some(num(0)? as u32),
                "n" => total = Some(num(0)? as u64),
                other => return Err(parse_err(ln, format!("unknown key {other:?}"))),
            }
        }
        let spec = PolyaTreeSpec {
            base: base.ok_or_else(|| Error::Parse { line: 0, msg: "missing base".into() })?,
            alpha: alpha.unwrap_or_default(),
            depth: depth.ok_or_else(|| Error::Parse { line: 0, msg: "missing depth".into() })?,
        };
        let mut post = PolyaTreePosterior::prior(&spec)?;
        post.total = total.unwrap_or(0);
        for (ln, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (path, count) = line
                .split_once(',')
                .ok_or_else(|| parse_err(ln, format!("expected path,count, got {line:?}")))?;
            let level = path.len() as u32;
            if level == 0 || level > spec.depth {
                return Err(parse_err(ln, format!("path {path:?} outside the tree")));
            }
            let k = u32::from_str_radix(path, 2)
                .map_err(|e| parse_err(ln, format!("bad path {path:?}: {e}")))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(ln, format!("bad count: {e}")))?;
            post.counts[level as usize - 1].insert(k, count);
        }
        post.check_consistency()?;
        Ok(post)
    }
}

impl PolyaTreePosterior {
    /// Every parent count equals the sum of its children.
    pub fn check_consistency(&self) -> Result<()> {
        for level in 0..self.spec.depth {
            let parents: Vec<(u32, u64)> = if level == 0 {
                vec![(0, self.total)]
            } else {
                self.counts[level as usize - 1].iter().map(|(&k, &c)| (k, c)).collect()
            };
            let mut child_total = 0;
            for (k, c) in parents {
                let children = self.count(level + 1, 2 * k) + self.count(level + 1, 2 * k + 1);
                if children != c {
                    return Err(Error::InvalidInput(format!(
                        "node {k} at level {level} has count {c} but children sum to {children}"
                    )));
                }
                child_total += children;
            }
            let level_total: u64 = self.counts[level as usize].values().sum();
            if level_total != child_total {
                return Err(Error::InvalidInput(format!(
                    "orphan counts at level {}",
                    level + 1
                )));
            }
        }
        Ok(())
    }
}

fn check_unit(u: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain { value: u, domain: "(0, 1)" });
    }
    Ok(())
}

/// A random probability measure from the posterior.
///
/// Split proportions are drawn per node from a seed derived from the node
/// id, so every evaluation under one seed sees the same measure and the
/// inverse CDF is monotone in `u`.
#[derive(Debug, Clone, Copy)]
pub struct PolyaTreeDraw<'a> {
    post: &'a PolyaTreePosterior,
    seed: u64,
}

impl PolyaTreeDraw<'_> {
    pub fn theta(&self, level: u32, k: u32) -> f64 {
        let (a, b) = self.post.split_params(level, k);
        let node_id = (1u64 << level) | k as u64;
        let mut rng = seeded_rng(mix_seed(self.seed, node_id));
        Beta::new(a, b).expect("positive Beta parameters").sample(&mut rng)
    }

    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        Ok(self.post.invert(u, |level, k| self.theta(level, k)))
    }

    /// Masses of all `2^M` leaves. Only sensible for shallow trees.
    pub fn leaf_masses(&self) -> Vec<f64> {
        let mut masses = vec![1.0];
        for level in 0..self.post.depth() {
            let mut next = Vec::with_capacity(masses.len() * 2);
            for (k, m) in masses.iter().enumerate() {
                let t = self.theta(level, k as u32);
                next.push(m * t);
                next.push(m * (1.0 - t));
            }
            masses = next;
        }
        masses
    }
}

/// Inverse-CDF sample from a freshly drawn random measure.
pub fn pt_sample_inverse_cdf(post: &PolyaTreePosterior, u: f64, seed: u64) -> Result<f64> {
    post.draw(seed).inverse_cdf(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_spec() -> PolyaTreeSpec {
        PolyaTreeSpec::new(BaseDistribution::Gaussian { mean: 0.0, sd: 1.0 })
    }

    #[test]
    fn empty_posterior_density_is_the_base() {
        let post = pt_update(&std_spec(), &[]).unwrap();
        for y in [-3.0, -0.2, 0.0, 1.7] {
            let g0 = std_spec().base.pdf(y);
            assert!((post.mean_density(y) - g0).abs() <= 1e-15 * g0.max(1.0));
            assert!((post.mean_cdf(y) - std_spec().base.cdf(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_near_median_follows_one_side() {
        let spec = std_spec();
        let post = pt_update(&spec, &[1e-9]).unwrap();
        for m in 1..=spec.depth {
            assert_eq!(post.count(m, 1u32 << (m - 1)), 1, "level {m}");
        }
        let post = pt_update(&spec, &[-1e-9]).unwrap();
        for m in 1..=spec.depth {
            assert_eq!(post.count(m, (1u32 << (m - 1)) - 1), 1, "level {m}");
        }
    }

    #[test]
    fn symmetric_prior_median_under_mean_splits() {
        let post = pt_update(&std_spec(), &[]).unwrap();
        assert!(post.mean_inverse_cdf(0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn inverse_rejects_outside_unit_interval() {
        let post = pt_update(&std_spec(), &[]).unwrap();
        for u in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(post.mean_inverse_cdf(u), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn serialization_round_trips() {
        let spec = PolyaTreeSpec::new(BaseDistribution::Laplace { loc: 2.0, scale: 0.5 })
            .with_depth(6)
            .with_alpha(AlphaSchedule::Quadratic(0.3));
        let post = pt_update(&spec, &[0.1, 2.0, 2.2, 5.0, -4.0]).unwrap();
        let back: PolyaTreePosterior = post.to_text().parse().unwrap();
        assert_eq!(back, post);
    }

    #[test]
    fn leaf_placement_stays_in_leaf() {
        let spec = std_spec().with_depth(4);
        let post = pt_update(&spec, &[0.3, 0.4, -1.0]).unwrap();
        let draw = post.draw(7);
        for i in 1..200 {
            let u = i as f64 / 200.0;
            let y = draw.inverse_cdf(u).unwrap();
            let leaf = spec.leaf(y);
            let lo = spec.base.quantile(leaf as f64 / 16.0);
            let hi = spec.base.quantile((leaf + 1) as f64 / 16.0);
            assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(PolyaTreePosterior::prior(&std_spec().with_depth(0)).is_err());
        assert!(PolyaTreePosterior::prior(&std_spec().with_depth(31)).is_err());
        let bad = PolyaTreeSpec::new(BaseDistribution::Gaussian { mean: 0.0, sd: 0.0 });
        assert!(matches!(PolyaTreePosterior::prior(&bad), Err(Error::Config(_))));
    }
}
