//! Observed subgroup data and the coefficient layout.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One subgroup: responses `y` (n x r), controls `xc` (n x q, intercept first) and
/// candidate covariates `xg` (n x p).
#[derive(Clone, Debug)]
pub struct SubgroupData {
    pub y: DMatrix<f64>,
    pub xc: DMatrix<f64>,
    pub xg: DMatrix<f64>,
}

impl SubgroupData {
    pub fn new(y: DMatrix<f64>, xc: DMatrix<f64>, xg: DMatrix<f64>) -> Result<Self> {
        let n = y.nrows();
        if n == 0 {
            return Err(Error::Validation("subgroup has no rows".into()));
        }
        if xc.nrows() != n || xg.nrows() != n {
            return Err(Error::Dimension(format!(
                "row counts differ: Y has {n}, Xc has {}, Xg has {}",
                xc.nrows(),
                xg.nrows()
            )));
        }
        if xc.ncols() == 0 {
            return Err(Error::Validation("Xc needs at least the intercept column".into()));
        }
        if y.ncols() == 0 {
            return Err(Error::Validation("Y has no response columns".into()));
        }
        for (name, m) in [("Y", &y), ("Xc", &xc), ("Xg", &xg)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("{name} contains non-finite entries")));
            }
        }
        if xc.column(0).iter().any(|&v| (v - 1.0).abs() > 1e-12) {
            return Err(Error::Validation("first Xc column must be the all-ones intercept".into()));
        }
        Ok(SubgroupData { y, xc, xg })
    }

    /// Convenience constructor that supplies an intercept-only `Xc`.
    pub fn with_intercept(y: DMatrix<f64>, xg: DMatrix<f64>) -> Result<Self> {
        let xc = DMatrix::from_element(y.nrows(), 1, 1.0);
        Self::new(y, xc, xg)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn q(&self) -> usize {
        self.xc.ncols()
    }
}

/// The full system: `s` subgroups sharing `r` responses and `p` candidate covariates.
#[derive(Clone, Debug)]
pub struct SsmrData {
    pub subgroups: Vec<SubgroupData>,
    pub covariate_ids: Vec<String>,
    pub response_ids: Vec<String>,
}

impl SsmrData {
    pub fn new(subgroups: Vec<SubgroupData>) -> Result<Self> {
        let first = subgroups
            .first()
            .ok_or_else(|| Error::Validation("at least one subgroup is required".into()))?;
        let (r, p) = (first.y.ncols(), first.xg.ncols());
        for (i, sg) in subgroups.iter().enumerate() {
            if sg.y.ncols() != r || sg.xg.ncols() != p {
                return Err(Error::Dimension(format!(
                    "subgroup {i} has r={} p={}, expected r={r} p={p}",
                    sg.y.ncols(),
                    sg.xg.ncols()
                )));
            }
        }
        Ok(SsmrData {
            subgroups,
            covariate_ids: (0..p).map(|j| format!("x{j}")).collect(),
            response_ids: (0..r).map(|k| format!("y{k}")).collect(),
        })
    }

    pub fn with_ids(mut self, covariates: Vec<String>, responses: Vec<String>) -> Result<Self> {
        if covariates.len() != self.p() || responses.len() != self.r() {
            return Err(Error::Dimension("identifier counts do not match data".into()));
        }
        self.covariate_ids = covariates;
        self.response_ids = responses;
        Ok(self)
    }

    pub fn s(&self) -> usize {
        self.subgroups.len()
    }
    pub fn r(&self) -> usize {
        self.subgroups[0].y.ncols()
    }
    pub fn p(&self) -> usize {
        self.subgroups[0].xg.ncols()
    }
    pub fn layout(&self) -> CoefficientLayout {
        CoefficientLayout { s: self.s(), p: self.p(), r: self.r() }
    }
}

/// Maps (subgroup, covariate, response) to a flat coefficient index.
///
/// Subgroups are concatenated; within a subgroup covariates follow each other and
/// responses vary fastest. Configuration bits are indexed by `cell = subgroup * r + response`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoefficientLayout {
    pub s: usize,
    pub p: usize,
    pub r: usize,
}

impl CoefficientLayout {
    pub fn len(&self) -> usize {
        self.s * self.p * self.r
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Number of configuration cells per covariate.
    pub fn cells(&self) -> usize {
        self.s * self.r
    }
    #[inline]
    pub fn index(&self, subgroup: usize, covariate: usize, response: usize) -> usize {
        subgroup * self.p * self.r + covariate * self.r + response
    }
    #[inline]
    pub fn locate(&self, flat: usize) -> (usize, usize, usize) {
        let i = flat / (self.p * self.r);
        let rem = flat % (self.p * self.r);
        (i, rem / self.r, rem % self.r)
    }
    /// Flat index of configuration bit `cell` of covariate `j`.
    #[inline]
    pub fn cell_index(&self, covariate: usize, cell: usize) -> usize {
        self.index(cell / self.r, covariate, cell % self.r)
    }
}
