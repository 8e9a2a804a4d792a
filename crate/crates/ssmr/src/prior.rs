//! Model-space prior, the configuration-to-covariance injection and the effect-size grid.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::CoefficientLayout;
use crate::error::{Error, Result};
use crate::linalg;

/// Largest supported number of configuration cells (`r * s`).
pub const MAX_CELLS: usize = 16;

/// Bitmask over the `r * s` cells of one covariate; bit `i * r + k` marks subgroup `i`, response `k`.
pub type Config = u32;

/// Parses a bitstring such as `"101"`; character `c` sets bit `c`.
pub fn parse_config(s: &str, cells: usize) -> Result<Config> {
    if s.len() != cells {
        return Err(Error::Validation(format!(
            "configuration '{s}' has length {}, expected {cells}",
            s.len()
        )));
    }
    let mut g = 0u32;
    for (c, ch) in s.chars().enumerate() {
        match ch {
            '0' => {}
            '1' => g |= 1 << c,
            _ => return Err(Error::Validation(format!("configuration '{s}' is not a bitstring"))),
        }
    }
    Ok(g)
}

pub fn format_config(g: Config, cells: usize) -> String {
    (0..cells).map(|c| if g >> c & 1 == 1 { '1' } else { '0' }).collect()
}

/// Parses a model written as one concatenated bitstring, a comma-separated list with one
/// configuration per covariate, or sparse `covariate:configuration` pairs (covariates named by
/// ID or index). An empty string or `null` is the null model.
pub fn parse_model(text: &str, s: usize, r: usize, covariate_ids: &[String]) -> Result<ModelConfig> {
    let (p, cells) = (covariate_ids.len(), s * r);
    let text = text.trim();
    if text.is_empty() || text == "null" {
        return Ok(ModelConfig::null(p, s, r));
    }
    if text.contains(':') {
        let mut active = Vec::new();
        for part in text.split(',') {
            let (id, cfg) = part
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("'{part}' is not a covariate:configuration pair")))?;
            let id = id.trim();
            let j = covariate_ids
                .iter()
                .position(|c| c == id)
                .or_else(|| id.parse::<usize>().ok().filter(|&j| j < p))
                .ok_or_else(|| Error::Validation(format!("unknown covariate '{id}'")))?;
            active.push((j, parse_config(cfg.trim(), cells)?));
        }
        return ModelConfig::from_active(p, s, r, &active);
    }
    let parts: Vec<&str> = if text.contains(',') {
        text.split(',').map(str::trim).collect()
    } else {
        if text.len() != p * cells {
            return Err(Error::Validation(format!(
                "model string has length {}, expected {} ({p} covariates x {cells} cells)",
                text.len(),
                p * cells
            )));
        }
        (0..p).map(|j| &text[j * cells..(j + 1) * cells]).collect()
    };
    if parts.len() != p {
        return Err(Error::Validation(format!("{} configurations given for {p} covariates", parts.len())));
    }
    let gammas = parts.iter().map(|g| parse_config(g, cells)).collect::<Result<Vec<_>>>()?;
    ModelConfig::new(gammas, s, r)
}

/// Binary skeleton of a candidate model: one configuration per covariate.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub gammas: Vec<Config>,
    pub s: usize,
    pub r: usize,
}

impl ModelConfig {
    pub fn null(p: usize, s: usize, r: usize) -> Self {
        ModelConfig { gammas: vec![0; p], s, r }
    }

    pub fn new(gammas: Vec<Config>, s: usize, r: usize) -> Result<Self> {
        let cells = s * r;
        if cells == 0 || cells > MAX_CELLS {
            return Err(Error::Validation(format!("r*s must lie in 1..={MAX_CELLS}")));
        }
        let full = if cells == 32 { u32::MAX } else { (1u32 << cells) - 1 };
        if gammas.iter().any(|&g| g & !full != 0) {
            return Err(Error::Validation("configuration has bits beyond r*s cells".into()));
        }
        Ok(ModelConfig { gammas, s, r })
    }

    /// Builds a model from sparse `(covariate, configuration)` pairs.
    pub fn from_active(p: usize, s: usize, r: usize, active: &[(usize, Config)]) -> Result<Self> {
        let mut g = vec![0; p];
        for &(j, c) in active {
            if j >= p {
                return Err(Error::Dimension(format!("covariate {j} out of range (p={p})")));
            }
            g[j] = c;
        }
        Self::new(g, s, r)
    }

    pub fn p(&self) -> usize {
        self.gammas.len()
    }
    pub fn cells(&self) -> usize {
        self.s * self.r
    }
    pub fn layout(&self) -> CoefficientLayout {
        CoefficientLayout { s: self.s, p: self.p(), r: self.r }
    }

    /// Active covariates with their configurations, in covariate order.
    pub fn active(&self) -> Vec<(usize, Config)> {
        self.gammas.iter().enumerate().filter(|(_, &g)| g != 0).map(|(j, &g)| (j, g)).collect()
    }

    /// Indicator of nonzero coefficients in flat layout order.
    pub fn xi(&self) -> Vec<bool> {
        let l = self.layout();
        let mut v = vec![false; l.len()];
        for (j, g) in self.active() {
            for c in 0..self.cells() {
                if g >> c & 1 == 1 {
                    v[l.cell_index(j, c)] = true;
                }
            }
        }
        v
    }

    /// Flat indices of the active coefficients of covariate `j`, ordered by cell.
    pub fn covariate_cells(&self, j: usize) -> Vec<usize> {
        let l = self.layout();
        (0..self.cells()).filter(|&c| self.gammas[j] >> c & 1 == 1).map(|c| l.cell_index(j, c)).collect()
    }

    pub fn gamma_strings(&self) -> Vec<String> {
        self.gammas.iter().map(|&g| format_config(g, self.cells())).collect()
    }
}

/// Sparse symmetric binary support pattern of the prior covariance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GammaMatrix {
    pub dim: usize,
    pub entries: Vec<(usize, usize)>,
}

impl GammaMatrix {
    pub fn get(&self, a: usize, b: usize) -> bool {
        self.entries.binary_search(&(a, b)).is_ok()
    }
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(a, b) in &self.entries {
            m[(a, b)] = 1.0;
        }
        m
    }
}

/// Per-covariate outer-product injection from configurations to the support pattern.
pub fn inject_gamma(model: &ModelConfig) -> GammaMatrix {
    let mut entries = Vec::new();
    for j in 0..model.p() {
        let cells = model.covariate_cells(j);
        for &a in &cells {
            for &b in &cells {
                entries.push((a, b));
            }
        }
    }
    entries.sort_unstable();
    GammaMatrix { dim: model.layout().len(), entries }
}

/// Dense block of a prior covariance on a set of flat coefficient indices.
#[derive(Clone, Debug)]
pub struct WBlock {
    pub cells: Vec<usize>,
    pub values: DMatrix<f64>,
}

/// Prior covariance of the candidate coefficients stored as a direct sum of blocks on
/// disjoint index sets. With `scale_invariant` set the blocks hold standardized `U`
/// values that are rescaled by residual standard deviations before use.
#[derive(Clone, Debug)]
pub struct PriorMatrixW {
    pub layout: CoefficientLayout,
    pub blocks: Vec<WBlock>,
    pub scale_invariant: bool,
}

impl PriorMatrixW {
    pub fn zero(layout: CoefficientLayout) -> Self {
        PriorMatrixW { layout, blocks: Vec::new(), scale_invariant: false }
    }

    /// Wraps an arbitrary dense `s*p*r` square matrix; zero rows and columns are dropped.
    pub fn from_dense(layout: CoefficientLayout, w: &DMatrix<f64>) -> Result<Self> {
        if w.nrows() != layout.len() || w.ncols() != layout.len() {
            return Err(Error::Dimension(format!("W must be {0}x{0}", layout.len())));
        }
        let cells: Vec<usize> =
            (0..layout.len()).filter(|&a| w.row(a).iter().any(|&v| v != 0.0)).collect();
        let values = DMatrix::from_fn(cells.len(), cells.len(), |a, b| w[(cells[a], cells[b])]);
        let out = PriorMatrixW {
            layout,
            blocks: if cells.is_empty() { vec![] } else { vec![WBlock { cells, values }] },
            scale_invariant: false,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn from_blocks(layout: CoefficientLayout, blocks: Vec<WBlock>, scale_invariant: bool) -> Result<Self> {
        let out = PriorMatrixW { layout, blocks, scale_invariant };
        out.validate()?;
        Ok(out)
    }

    /// Checks disjointness, symmetry and the positive semidefinite floor.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.layout.len()];
        for b in &self.blocks {
            if b.values.nrows() != b.cells.len() || b.values.ncols() != b.cells.len() {
                return Err(Error::Dimension("W block size does not match its index set".into()));
            }
            for &c in &b.cells {
                if c >= seen.len() || seen[c] {
                    return Err(Error::Dimension("W blocks overlap or exceed the layout".into()));
                }
                seen[c] = true;
            }
            if b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("W has non-finite entries".into()));
            }
            let asym = (&b.values - b.values.transpose()).abs().max();
            let scale = b.values.abs().max().max(1e-300);
            if asym > 1e-12 * scale {
                return Err(Error::Validation("W is not symmetric".into()));
            }
            linalg::psd_factor(&b.values)?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.values.iter().all(|&v| v == 0.0))
    }

    /// Sorted flat indices covered by the blocks.
    pub fn support(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.blocks.iter().flat_map(|b| b.cells.iter().cloned()).collect();
        v.sort_unstable();
        v
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.layout.len(), self.layout.len());
        for b in &self.blocks {
            for (x, &a) in b.cells.iter().enumerate() {
                for (y, &c) in b.cells.iter().enumerate() {
                    m[(a, c)] = b.values[(x, y)];
                }
            }
        }
        m
    }

    /// True when some block loses rank on its own index set.
    pub fn is_rank_deficient(&self) -> bool {
        self.blocks.iter().any(|b| {
            linalg::psd_factor(&b.values).map(|l| l.ncols() < b.cells.len()).unwrap_or(false)
        })
    }

    /// Adds `lambda` to every diagonal entry on the support.
    pub fn ridge(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            for i in 0..b.cells.len() {
                b.values[(i, i)] += lambda;
            }
        }
        out
    }
}

/// Builds standardized prior blocks `omega^2 11' + phi^2 I` on each covariate's active cells.
///
/// `points[j]` is the `(phi, omega)` pair for covariate `j`; entries for inactive covariates are ignored.
pub fn build_w(model: &ModelConfig, points: &[(f64, f64)]) -> Result<PriorMatrixW> {
    if points.len() != model.p() {
        return Err(Error::Dimension(format!(
            "{} grid points supplied for {} covariates",
            points.len(),
            model.p()
        )));
    }
    let mut blocks = Vec::new();
    for (j, _) in model.active() {
        let (phi, omega) = points[j];
        if !(phi >= 0.0 && omega >= 0.0) || !phi.is_finite() || !omega.is_finite() {
            return Err(Error::Validation(format!("grid point for covariate {j} must be nonnegative")));
        }
        let cells = model.covariate_cells(j);
        blocks.push(WBlock { values: effect_block(cells.len(), phi, omega), cells });
    }
    PriorMatrixW::from_blocks(model.layout(), blocks, true)
}

pub(crate) fn effect_block(m: usize, phi: f64, omega: f64) -> DMatrix<f64> {
    let mut u = DMatrix::from_element(m, m, omega * omega);
    for i in 0..m {
        u[(i, i)] += phi * phi;
    }
    u
}

/// Rescales standardized blocks by `sqrt(S_a S_b)` where `S` holds the residual variances.
pub fn scale_w(u: &PriorMatrixW, sigma: &[DMatrix<f64>]) -> Result<PriorMatrixW> {
    if sigma.len() != u.layout.s {
        return Err(Error::Dimension("one covariance per subgroup is required".into()));
    }
    for (i, s) in sigma.iter().enumerate() {
        if (0..u.layout.r).any(|k| !(s[(k, k)] > 0.0)) {
            return Err(Error::Numerical(format!("nonpositive residual variance in subgroup {i}")));
        }
    }
    let sd = |flat: usize| {
        let (i, _, k) = u.layout.locate(flat);
        sigma[i][(k, k)].sqrt()
    };
    let blocks = u
        .blocks
        .iter()
        .map(|b| WBlock {
            cells: b.cells.clone(),
            values: DMatrix::from_fn(b.cells.len(), b.cells.len(), |x, y| {
                b.values[(x, y)] * sd(b.cells[x]) * sd(b.cells[y])
            }),
        })
        .collect();
    Ok(PriorMatrixW { layout: u.layout, blocks, scale_invariant: false })
}

/// Finite mixture of `(phi, omega)` heterogeneity/magnitude pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EffectGrid {
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl Default for EffectGrid {
    fn default() -> Self {
        EffectGrid::uniform(vec![(0.05, 0.20), (0.10, 0.40), (0.20, 0.80), (0.40, 1.60)]).expect("valid")
    }
}

impl EffectGrid {
    pub fn uniform(points: Vec<(f64, f64)>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn new(points: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Validation("grid needs at least one point and one weight per point".into()));
        }
        for &(phi, omega) in &points {
            if !(phi >= 0.0 && omega >= 0.0) || (phi == 0.0 && omega == 0.0) {
                return Err(Error::Validation(format!("invalid grid point ({phi}, {omega})")));
            }
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("grid weights must be nonnegative and sum to 1".into()));
        }
        Ok(EffectGrid { points, weights })
    }
}

/// Independent per-covariate prior over configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPrior {
    pub cells: usize,
    pub pi0: f64,
    pub probs: BTreeMap<Config, f64>,
}

impl ModelPrior {
    pub fn new(cells: usize, pi0: f64, probs: BTreeMap<Config, f64>) -> Result<Self> {
        if cells == 0 || cells > MAX_CELLS {
            return Err(Error::Validation(format!("r*s must lie in 1..={MAX_CELLS}")));
        }
        if !(pi0 > 0.0 && pi0 < 1.0) {
            return Err(Error::Validation("pi0 must lie strictly between 0 and 1".into()));
        }
        let full = (1u32 << cells) - 1;
        for (&g, &pr) in &probs {
            if g == 0 || g & !full != 0 {
                return Err(Error::Validation(format!("invalid configuration {g:#b} in prior map")));
            }
            if !(pr >= 0.0) {
                return Err(Error::Validation("configuration probabilities must be nonnegative".into()));
            }
        }
        let total = pi0 + probs.values().sum::<f64>();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("configuration probabilities sum to {total}, not 1")));
        }
        let probs = probs.into_iter().filter(|(_, p)| *p > 0.0).collect();
        Ok(ModelPrior { cells, pi0, probs })
    }

    /// Null probability `pi0` with the remainder spread evenly over all nonzero configurations.
    pub fn uniform_nonnull(cells: usize, pi0: f64) -> Result<Self> {
        let k = (1u64 << cells) - 1;
        let each = (1.0 - pi0) / k as f64;
        Self::new(cells, pi0, (1..=k as u32).map(|g| (g, each)).collect())
    }

    /// Half of the non-null mass on the all-active configuration, the rest spread evenly.
    pub fn consistent_favored(cells: usize, pi0: f64) -> Result<Self> {
        let full = (1u32 << cells) - 1;
        if cells == 1 {
            return Self::uniform_nonnull(cells, pi0);
        }
        let rest = (1.0 - pi0) * 0.5 / (full - 1) as f64;
        let probs = (1..=full).map(|g| (g, if g == full { (1.0 - pi0) * 0.5 } else { rest })).collect();
        Self::new(cells, pi0, probs)
    }

    pub fn preset(name: &str, cells: usize, pi0: f64) -> Result<Self> {
        match name {
            "uniform-nonnull" => Self::uniform_nonnull(cells, pi0),
            "consistent-favored" => Self::consistent_favored(cells, pi0),
            other => Err(Error::Validation(format!("unknown prior preset '{other}'"))),
        }
    }

    pub fn log_prob(&self, g: Config) -> Result<f64> {
        if g == 0 {
            return Ok(self.pi0.ln());
        }
        self.probs.get(&g).map(|p| p.ln()).ok_or_else(|| {
            Error::Validation(format!("configuration {} has no prior probability", format_config(g, self.cells)))
        })
    }

    /// Allowed configurations with the null first.
    pub fn space(&self) -> ConfigSpace {
        let mut configs = vec![0];
        let mut log_probs = vec![self.pi0.ln()];
        for (&g, &p) in &self.probs {
            configs.push(g);
            log_probs.push(p.ln());
        }
        ConfigSpace { cells: self.cells, configs, log_probs }
    }
}

/// Ordered list of configurations a covariate may take, null first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSpace {
    pub cells: usize,
    pub configs: Vec<Config>,
    pub log_probs: Vec<f64>,
}

impl ConfigSpace {
    pub fn len(&self) -> usize {
        self.configs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
    pub fn position(&self, g: Config) -> Option<usize> {
        self.configs.iter().position(|&c| c == g)
    }
    pub fn labels(&self) -> Vec<String> {
        self.configs.iter().map(|&g| format_config(g, self.cells)).collect()
    }
}

/// Sum of per-covariate log prior probabilities.
pub fn log_prior(model: &ModelConfig, prior: &ModelPrior) -> Result<f64> {
    if model.cells() != prior.cells {
        return Err(Error::Dimension("model and prior disagree on r*s".into()));
    }
    let mut total = 0.0;
    let mut nulls = 0usize;
    for &g in &model.gammas {
        if g == 0 {
            nulls += 1;
        } else {
            total += prior.log_prob(g)?;
        }
    }
    Ok(total + nulls as f64 * prior.pi0.ln())
}

/// Inverse-Wishart nuisance parameters per subgroup, or the vague limit.
#[derive(Clone, Debug)]
pub struct NuisancePriors {
    pub nu: Vec<f64>,
    pub h: Vec<DMatrix<f64>>,
    pub use_limit: bool,
}

impl NuisancePriors {
    pub fn limit(s: usize, r: usize) -> Self {
        NuisancePriors { nu: vec![0.0; s], h: vec![DMatrix::zeros(r, r); s], use_limit: true }
    }

    pub fn informative(nu: Vec<f64>, h: Vec<DMatrix<f64>>) -> Result<Self> {
        if nu.len() != h.len() {
            return Err(Error::Dimension("nu and H must have one entry per subgroup".into()));
        }
        if nu.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Validation("nu must be positive unless the limit prior is used".into()));
        }
        for m in &h {
            linalg::psd_factor(m)?;
        }
        Ok(NuisancePriors { nu, h, use_limit: false })
    }

    /// Degrees of freedom from the inverse-Wishart shape `m_i` via `nu_i = m_i - q_i - r - 1`.
    pub fn from_shape(m: &[f64], q: &[usize], r: usize, h: Vec<DMatrix<f64>>) -> Result<Self> {
        let nu = m.iter().zip(q).map(|(&mi, &qi)| mi - qi as f64 - r as f64 - 1.0).collect();
        Self::informative(nu, h)
    }
}

/// Everything needed to turn a model skeleton into grid-averaged Bayes factors.
#[derive(Clone, Debug)]
pub struct PriorSpec {
    pub model_prior: ModelPrior,
    pub grid: EffectGrid,
    pub scale_invariant: bool,
    pub nuisance: NuisancePriors,
}

impl PriorSpec {
    /// Scale-invariant default grid, vague nuisance limit and the uniform non-null preset.
    pub fn default_for(s: usize, r: usize) -> Result<Self> {
        Ok(PriorSpec {
            model_prior: ModelPrior::uniform_nonnull(s * r, 0.99)?,
            grid: EffectGrid::default(),
            scale_invariant: true,
            nuisance: NuisancePriors::limit(s, r),
        })
    }

    pub fn from_file(file: &PriorFile, s: usize, r: usize) -> Result<Self> {
        let cells = s * r;
        let model_prior = match (&file.config_probs, &file.preset) {
            (Some(map), _) => {
                let mut probs = BTreeMap::new();
                for (k, &v) in map {
                    let g = parse_config(k, cells)?;
                    if g != 0 {
                        probs.insert(g, v);
                    }
                }
                let pi0 = file.pi0.unwrap_or_else(|| 1.0 - probs.values().sum::<f64>());
                ModelPrior::new(cells, pi0, probs)?
            }
            (None, preset) => {
                ModelPrior::preset(preset.as_deref().unwrap_or("uniform-nonnull"), cells, file.pi0.unwrap_or(0.99))?
            }
        };
        let grid = match &file.grid {
            Some(pts) => {
                let points: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
                match &file.grid_weights {
                    Some(w) => EffectGrid::new(points, w.clone())?,
                    None => EffectGrid::uniform(points)?,
                }
            }
            None => EffectGrid::default(),
        };
        let nuisance = match (&file.nu, &file.h) {
            (None, None) => NuisancePriors::limit(s, r),
            (Some(nu), Some(h)) => {
                let hs = h
                    .iter()
                    .map(|rows| matrix_from_rows(rows, r))
                    .collect::<Result<Vec<_>>>()?;
                if nu.len() != s {
                    return Err(Error::Dimension(format!("nu lists {} subgroups, data has {s}", nu.len())));
                }
                NuisancePriors::informative(nu.clone(), hs)?
            }
            _ => return Err(Error::Validation("nu and H must be given together".into())),
        };
        Ok(PriorSpec { model_prior, grid, scale_invariant: file.scale_invariant.unwrap_or(true), nuisance })
    }
}

/// Deserialized prior configuration file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    #[serde(default)]
    pub pi0: Option<f64>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub config_probs: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub grid: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub grid_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub scale_invariant: Option<bool>,
    #[serde(default)]
    pub nu: Option<Vec<f64>>,
    #[serde(default, rename = "H")]
    pub h: Option<Vec<Vec<Vec<f64>>>>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], r: usize) -> Result<DMatrix<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != r) {
        return Err(Error::Dimension(format!("expected a {r}x{r} matrix")));
    }
    Ok(DMatrix::from_fn(r, r, |a, b| rows[a][b]))
}
