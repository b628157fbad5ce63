//! Minimization of the penalized least-squares objective
//!
//! ```text
//!   f(Theta) = 1/2 sum_ij |X_ij - G_ij - R_ij - C_ij - I_ij|_F^2
//!            + lam_G |G|_* + sum_i lam_Ri |R_i|_* + sum_j lam_Cj |C_j|_* + sum_ij lam_Iij |I_ij|_*
//! ```
//!
//! Two solvers are provided. The default cycles through the components and
//! replaces each one by the soft singular-value threshold of its residual
//! target, which is the exact blockwise minimizer; the objective therefore
//! never increases and, the objective being convex, the limit is a global
//! minimum. The alternative solver works on the factorized form of the same
//! objective with ridge penalties on the factors and reaches the same optimal
//! value.
//!
//! Components that are redundant for degenerate grids are kept at zero: the
//! global and row-shared terms when q = 1, the global and column-shared terms
//! when p = 1. A 1 x 1 grid therefore reduces to plain soft thresholding of
//! the single block.

use ndarray::{s, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{BlockGrid, BlockLayout};
use crate::linalg::{
    frobenius_norm, numerical_rank, singular_values, thin_svd, DEFAULT_RANK_TOL,
};
use crate::penalty::PenaltyScheme;
use crate::scale::ScaleInfo;

/// The estimated parameter set: one global matrix, p row-shared matrices,
/// q column-shared matrices, and a p x q grid of individual matrices.
#[derive(Debug, Clone)]
pub struct Decomposition {
    layout: BlockLayout,
    /// `m0 x n0`.
    pub global: Array2<f64>,
    /// `m_i x n0` for each row block.
    pub row_shared: Vec<Array2<f64>>,
    /// `m0 x n_j` for each column block.
    pub col_shared: Vec<Array2<f64>>,
    /// `m_i x n_j` per block.
    pub individual: Vec<Vec<Array2<f64>>>,
}

impl Decomposition {
    pub fn zeros(layout: &BlockLayout) -> Self {
        let (m0, n0) = (layout.m0(), layout.n0());
        Self {
            layout: layout.clone(),
            global: Array2::zeros((m0, n0)),
            row_shared: layout
                .row_dims()
                .iter()
                .map(|&m| Array2::zeros((m, n0)))
                .collect(),
            col_shared: layout
                .col_dims()
                .iter()
                .map(|&n| Array2::zeros((m0, n)))
                .collect(),
            individual: layout
                .row_dims()
                .iter()
                .map(|&m| {
                    layout
                        .col_dims()
                        .iter()
                        .map(|&n| Array2::zeros((m, n)))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Restriction of the global component to block (i, j).
    pub fn global_block(&self, i: usize, j: usize) -> Array2<f64> {
        self.global
            .slice(s![self.layout.row_range(i), self.layout.col_range(j)])
            .to_owned()
    }

    /// Restriction of row-shared component i to column block j.
    pub fn row_shared_block(&self, i: usize, j: usize) -> Array2<f64> {
        self.row_shared[i]
            .slice(s![.., self.layout.col_range(j)])
            .to_owned()
    }

    /// Restriction of column-shared component j to row block i.
    pub fn col_shared_block(&self, i: usize, j: usize) -> Array2<f64> {
        self.col_shared[j]
            .slice(s![self.layout.row_range(i), ..])
            .to_owned()
    }

    /// Total signal estimate for block (i, j): the sum of the four components.
    pub fn signal_block(&self, i: usize, j: usize) -> Array2<f64> {
        let mut s = self.global_block(i, j);
        s += &self.row_shared_block(i, j);
        s += &self.col_shared_block(i, j);
        s += &self.individual[i][j];
        s
    }

    /// Elementwise block sums `S_ij = G_ij + R_ij + C_ij + I_ij`.
    pub fn compose_signal(&self) -> Vec<Vec<Array2<f64>>> {
        (0..self.layout.p())
            .map(|i| (0..self.layout.q()).map(|j| self.signal_block(i, j)).collect())
            .collect()
    }

    /// Scales every component block back to the original data scale.
    pub fn back_transformed(&self, info: &ScaleInfo) -> Decomposition {
        let layout = &self.layout;
        let mut out = Decomposition::zeros(layout);
        for i in 0..layout.p() {
            for j in 0..layout.q() {
                let (rr, cc) = (layout.row_range(i), layout.col_range(j));
                out.global
                    .slice_mut(s![rr.clone(), cc.clone()])
                    .assign(&info.rescale_component_block(i, j, &self.global.slice(s![rr.clone(), cc.clone()])));
                out.row_shared[i]
                    .slice_mut(s![.., cc.clone()])
                    .assign(&info.rescale_component_block(i, j, &self.row_shared[i].slice(s![.., cc.clone()])));
                out.col_shared[j]
                    .slice_mut(s![rr.clone(), ..])
                    .assign(&info.rescale_component_block(i, j, &self.col_shared[j].slice(s![rr.clone(), ..])));
                out.individual[i][j] =
                    info.rescale_component_block(i, j, &self.individual[i][j].view());
            }
        }
        out
    }

    /// Numerical ranks of the concatenated components at the default
    /// tolerance.
    pub fn component_ranks(&self) -> Result<ComponentRanks> {
        let rank = |a: &Array2<f64>| numerical_rank(a.view(), DEFAULT_RANK_TOL);
        Ok(ComponentRanks {
            global: rank(&self.global)?,
            row_shared: self
                .row_shared
                .iter()
                .map(rank)
                .collect::<Result<Vec<_>>>()?,
            col_shared: self
                .col_shared
                .iter()
                .map(rank)
                .collect::<Result<Vec<_>>>()?,
            individual: self
                .individual
                .iter()
                .map(|row| row.iter().map(rank).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
        })
    }

    fn shapes_match(&self, layout: &BlockLayout) -> bool {
        self.layout == *layout
    }
}

/// Which solver minimizes the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Blockwise soft singular-value thresholding (the default).
    #[default]
    Issvt,
    /// Alternating ridge regression on the factorized objective.
    Als,
}

/// Starting point for the solver.
#[derive(Debug, Clone, Default)]
pub enum Init {
    /// All components zero. The factorized solver cannot start from an exact
    /// zero (it is a stationary saddle of the factor updates), so it
    /// deterministically perturbs the factors instead.
    #[default]
    Zeros,
    /// Continue from a previous estimate.
    Warm(Box<Decomposition>),
}

/// Optional upper bounds on component ranks; defaults to the smaller
/// dimension of each component, which leaves the problem unconstrained.
#[derive(Debug, Clone)]
pub struct RankCaps {
    pub global: usize,
    pub row_shared: Vec<usize>,
    pub col_shared: Vec<usize>,
    pub individual: Vec<Vec<usize>>,
}

impl RankCaps {
    /// The unconstrained default: `min(rows, cols)` of each component.
    pub fn full(layout: &BlockLayout) -> Self {
        let (m0, n0) = (layout.m0(), layout.n0());
        Self {
            global: m0.min(n0),
            row_shared: layout.row_dims().iter().map(|&m| m.min(n0)).collect(),
            col_shared: layout.col_dims().iter().map(|&n| m0.min(n)).collect(),
            individual: layout
                .row_dims()
                .iter()
                .map(|&m| layout.col_dims().iter().map(|&n| m.min(n)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Convergence threshold: stop when the per-sweep objective decrease
    /// drops to `rel_tol` times the starting objective.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub solver: SolverKind,
    pub init: Init,
    pub rank_caps: Option<RankCaps>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iter: 500,
            solver: SolverKind::default(),
            init: Init::default(),
            rank_caps: None,
        }
    }
}

/// Numerical ranks of the concatenated components.
#[derive(Debug, Clone)]
pub struct ComponentRanks {
    pub global: usize,
    pub row_shared: Vec<usize>,
    pub col_shared: Vec<usize>,
    pub individual: Vec<Vec<usize>>,
}

/// Labels of the columns in the variance-explained table.
pub const VARIANCE_COMPONENTS: [&str; 5] = [
    "global",
    "global+row",
    "global+col",
    "global+row+col",
    "signal",
];

/// Proportion of variance explained per block, with the numerical rank of
/// each compound component in parentheses when rendered.
#[derive(Debug, Clone)]
pub struct VarianceRow {
    pub row_block: usize,
    pub col_block: usize,
    /// R-squared of: global, global+row, global+col, global+row+col, signal.
    pub r2: [f64; 5],
    pub ranks: [usize; 5],
}

impl VarianceRow {
    /// Renders one cell as `"0.14 (34)"`.
    pub fn format_cell(&self, k: usize) -> String {
        format!("{:.2} ({})", self.r2[k], self.ranks[k])
    }
}

#[derive(Debug, Clone)]
pub struct VarianceTable {
    pub rows: Vec<VarianceRow>,
}

/// Fit diagnostics returned with every solve.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Objective value at the start and after every component update. For the
    /// factorized solver the entries are half the factorized objective, which
    /// coincides with the nuclear-norm objective at convergence.
    pub objective_trace: Vec<f64>,
    /// Completed sweeps.
    pub iterations: usize,
    pub converged: bool,
    pub component_ranks: ComponentRanks,
    pub variance_explained: VarianceTable,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }

    /// True when the trace never increases beyond `slack` times the starting
    /// objective (each update is an exact blockwise minimizer, so increases
    /// can only come from floating-point bookkeeping).
    pub fn is_monotone(&self, slack: f64) -> bool {
        let tol = slack * (1.0 + self.objective_trace[0].abs());
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + tol)
    }
}

/// Evaluates the penalized objective for an arbitrary parameter set. Masked
/// cells are excluded from the residual sum.
pub fn objective_f2(
    theta: &Decomposition,
    grid: &BlockGrid,
    scheme: &PenaltyScheme,
) -> Result<f64> {
    let layout = grid.layout();
    if !theta.shapes_match(layout) {
        return Err(Error::DimensionMismatch(
            "decomposition does not match the grid layout".into(),
        ));
    }
    check_scheme(scheme, layout)?;
    let mut resid = 0.0;
    for i in 0..layout.p() {
        for j in 0..layout.q() {
            let s = theta.signal_block(i, j);
            let x = grid.block(i, j);
            match grid.block_mask(i, j) {
                None => {
                    resid += x
                        .iter()
                        .zip(s.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
                Some(mask) => {
                    for ((r, c), &obs) in mask.indexed_iter() {
                        if obs {
                            let d = x[(r, c)] - s[(r, c)];
                            resid += d * d;
                        }
                    }
                }
            }
        }
    }
    let mut value = 0.5 * resid + scheme.global * nuclear_or_zero(&theta.global)?;
    for i in 0..layout.p() {
        value += scheme.row[i] * nuclear_or_zero(&theta.row_shared[i])?;
    }
    for j in 0..layout.q() {
        value += scheme.col[j] * nuclear_or_zero(&theta.col_shared[j])?;
    }
    for i in 0..layout.p() {
        for j in 0..layout.q() {
            value += scheme.individual[i][j] * nuclear_or_zero(&theta.individual[i][j])?;
        }
    }
    Ok(value)
}

fn nuclear_or_zero(a: &Array2<f64>) -> Result<f64> {
    if a.iter().all(|&x| x == 0.0) {
        Ok(0.0)
    } else {
        Ok(singular_values(a.view())?.sum())
    }
}

fn check_scheme(scheme: &PenaltyScheme, layout: &BlockLayout) -> Result<()> {
    if scheme.p() != layout.p() || scheme.q() != layout.q() {
        return Err(Error::DimensionMismatch(format!(
            "penalty scheme is {}x{}, grid is {}x{}",
            scheme.p(),
            scheme.q(),
            layout.p(),
            layout.q()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct ActiveComponents {
    global: bool,
    row: bool,
    col: bool,
}

fn active_components(layout: &BlockLayout) -> ActiveComponents {
    ActiveComponents {
        global: layout.p() > 1 && layout.q() > 1,
        row: layout.q() > 1,
        col: layout.p() > 1,
    }
}

/// Fits the decomposition by blockwise soft singular-value thresholding.
///
/// Each sweep updates the global, row-shared, column-shared, and individual
/// components in that fixed order, always against the residual of the most
/// recent values. Stops when the objective decrease over a sweep falls to
/// `rel_tol` times the starting objective, or after `max_iter` sweeps (in
/// which case the result is returned with `converged = false`).
pub fn issvt_fit(
    grid: &BlockGrid,
    scheme: &PenaltyScheme,
    config: &SolverConfig,
) -> Result<(Decomposition, FitReport)> {
    let active = active_components(grid.layout());
    issvt_fit_with(grid, scheme, config, active)
}

/// The vertical-integration special case: only column-shared and individual
/// components are estimated; the grid must have a single column block.
pub fn unifac_fit(
    grid: &BlockGrid,
    scheme: &PenaltyScheme,
    config: &SolverConfig,
) -> Result<(Decomposition, FitReport)> {
    if grid.layout().q() != 1 {
        return Err(Error::InvalidArgument(format!(
            "vertical integration expects a single column block, got q = {}",
            grid.layout().q()
        )));
    }
    let active = ActiveComponents {
        global: false,
        row: false,
        col: grid.layout().p() > 1,
    };
    issvt_fit_with(grid, scheme, config, active)
}

fn issvt_fit_with(
    grid: &BlockGrid,
    scheme: &PenaltyScheme,
    config: &SolverConfig,
    active: ActiveComponents,
) -> Result<(Decomposition, FitReport)> {
    let layout = grid.layout();
    check_scheme(scheme, layout)?;
    check_fully_observed(grid)?;
    let caps = config
        .rank_caps
        .clone()
        .unwrap_or_else(|| RankCaps::full(layout));

    let mut state = IssvtState::new(grid, scheme, &config.init)?;
    let f_init = state.objective();
    state.trace.push(f_init);

    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=config.max_iter {
        let before = state.objective();
        if active.global {
            state.update(Component::Global, caps.global)?;
        }
        if active.row {
            for i in 0..layout.p() {
                state.update(Component::Row(i), caps.row_shared[i])?;
            }
        }
        if active.col {
            for j in 0..layout.q() {
                state.update(Component::Col(j), caps.col_shared[j])?;
            }
        }
        for i in 0..layout.p() {
            for j in 0..layout.q() {
                state.update(Component::Individual(i, j), caps.individual[i][j])?;
            }
        }
        let after = state.objective();
        if !after.is_finite() {
            return Err(Error::NonFiniteObjective { sweep });
        }
        sweeps = sweep;
        if before - after <= config.rel_tol * f_init {
            converged = true;
            break;
        }
    }

    let theta = state.to_decomposition(layout);
    let report = build_report(&theta, grid, state.trace.clone(), sweeps, converged)?;
    Ok((theta, report))
}

fn check_fully_observed(grid: &BlockGrid) -> Result<()> {
    if let Some(mask) = grid.mask() {
        for (i, row) in mask.iter().enumerate() {
            for (j, m) in row.iter().enumerate() {
                if m.iter().any(|&o| !o) {
                    return Err(Error::MissingEntries {
                        row_block: i,
                        col_block: j,
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Component {
    Global,
    Row(usize),
    Col(usize),
    Individual(usize, usize),
}

/// Working state of the threshold solver. The four components and the
/// residual are kept as full concatenations; per-block residual energies and
/// per-component nuclear norms are cached so the objective after each update
/// costs nothing extra.
struct IssvtState {
    layout: BlockLayout,
    global: Array2<f64>,
    row: Array2<f64>,
    col: Array2<f64>,
    indiv: Array2<f64>,
    resid: Array2<f64>,
    resid_sq: Vec<Vec<f64>>,
    nuc_global: f64,
    nuc_row: Vec<f64>,
    nuc_col: Vec<f64>,
    nuc_indiv: Vec<Vec<f64>>,
    lam: PenaltyScheme,
    trace: Vec<f64>,
}

impl IssvtState {
    fn new(grid: &BlockGrid, scheme: &PenaltyScheme, init: &Init) -> Result<Self> {
        let layout = grid.layout().clone();
        let (m0, n0, p, q) = (layout.m0(), layout.n0(), layout.p(), layout.q());
        let x = grid.concat(crate::grid::ConcatView::Full)?;
        let (global, row, col, indiv, nuc_global, nuc_row, nuc_col, nuc_indiv) = match init {
            Init::Zeros => (
                Array2::zeros((m0, n0)),
                Array2::zeros((m0, n0)),
                Array2::zeros((m0, n0)),
                Array2::zeros((m0, n0)),
                0.0,
                vec![0.0; p],
                vec![0.0; q],
                vec![vec![0.0; q]; p],
            ),
            Init::Warm(theta) => {
                if !theta.shapes_match(&layout) {
                    return Err(Error::DimensionMismatch(
                        "warm start does not match the grid layout".into(),
                    ));
                }
                let mut row_full = Array2::zeros((m0, n0));
                let mut col_full = Array2::zeros((m0, n0));
                let mut indiv_full = Array2::zeros((m0, n0));
                for i in 0..p {
                    row_full
                        .slice_mut(s![layout.row_range(i), ..])
                        .assign(&theta.row_shared[i]);
                }
                for j in 0..q {
                    col_full
                        .slice_mut(s![.., layout.col_range(j)])
                        .assign(&theta.col_shared[j]);
                }
                for i in 0..p {
                    for j in 0..q {
                        indiv_full
                            .slice_mut(s![layout.row_range(i), layout.col_range(j)])
                            .assign(&theta.individual[i][j]);
                    }
                }
                let nuc_row = theta
                    .row_shared
                    .iter()
                    .map(nuclear_or_zero)
                    .collect::<Result<Vec<_>>>()?;
                let nuc_col = theta
                    .col_shared
                    .iter()
                    .map(nuclear_or_zero)
                    .collect::<Result<Vec<_>>>()?;
                let nuc_indiv = theta
                    .individual
                    .iter()
                    .map(|r| r.iter().map(nuclear_or_zero).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                (
                    theta.global.clone(),
                    row_full,
                    col_full,
                    indiv_full,
                    nuclear_or_zero(&theta.global)?,
                    nuc_row,
                    nuc_col,
                    nuc_indiv,
                )
            }
        };
        let mut resid = x.clone();
        resid -= &global;
        resid -= &row;
        resid -= &col;
        resid -= &indiv;
        let mut resid_sq = vec![vec![0.0; q]; p];
        for i in 0..p {
            for j in 0..q {
                resid_sq[i][j] = resid
                    .slice(s![layout.row_range(i), layout.col_range(j)])
                    .iter()
                    .map(|v| v * v)
                    .sum();
            }
        }
        Ok(Self {
            layout,
            global,
            row,
            col,
            indiv,
            resid,
            resid_sq,
            nuc_global,
            nuc_row,
            nuc_col,
            nuc_indiv,
            lam: scheme.clone(),
            trace: Vec::new(),
        })
    }

    fn objective(&self) -> f64 {
        let mut v = 0.5 * self.resid_sq.iter().flatten().sum::<f64>();
        v += self.lam.global * self.nuc_global;
        v += self
            .nuc_row
            .iter()
            .zip(&self.lam.row)
            .map(|(n, l)| n * l)
            .sum::<f64>();
        v += self
            .nuc_col
            .iter()
            .zip(&self.lam.col)
            .map(|(n, l)| n * l)
            .sum::<f64>();
        v += self
            .nuc_indiv
            .iter()
            .zip(&self.lam.individual)
            .map(|(nr, lr)| nr.iter().zip(lr).map(|(n, l)| n * l).sum::<f64>())
            .sum::<f64>();
        v
    }

    fn spans(&self, comp: Component) -> (Range<usize>, Range<usize>, f64) {
        match comp {
            Component::Global => (0..self.layout.m0(), 0..self.layout.n0(), self.lam.global),
            Component::Row(i) => (self.layout.row_range(i), 0..self.layout.n0(), self.lam.row[i]),
            Component::Col(j) => (0..self.layout.m0(), self.layout.col_range(j), self.lam.col[j]),
            Component::Individual(i, j) => (
                self.layout.row_range(i),
                self.layout.col_range(j),
                self.lam.individual[i][j],
            ),
        }
    }

    fn component_array(&mut self, comp: Component) -> &mut Array2<f64> {
        match comp {
            Component::Global => &mut self.global,
            Component::Row(_) => &mut self.row,
            Component::Col(_) => &mut self.col,
            Component::Individual(..) => &mut self.indiv,
        }
    }

    fn component_ref(&self, comp: Component) -> &Array2<f64> {
        match comp {
            Component::Global => &self.global,
            Component::Row(_) => &self.row,
            Component::Col(_) => &self.col,
            Component::Individual(..) => &self.indiv,
        }
    }

    /// Replaces one component by the soft threshold of its residual target
    /// and refreshes the caches touched by the change.
    fn update(&mut self, comp: Component, cap: usize) -> Result<()> {
        let (rows, cols, lam) = self.spans(comp);
        let mut target = self.resid.slice(s![rows.clone(), cols.clone()]).to_owned();
        target += &self
            .component_ref(comp)
            .slice(s![rows.clone(), cols.clone()]);
        let svd = thin_svd(target.view())?;
        let kept: Vec<f64> = svd
            .singular_values
            .iter()
            .take(cap)
            .map(|&d| (d - lam).max(0.0))
            .take_while(|&d| d > 0.0)
            .collect();
        let k = kept.len();
        let z = if k == 0 {
            Array2::zeros(target.dim())
        } else {
            let mut ud = svd.u.slice(s![.., ..k]).to_owned();
            for (mut c, &d) in ud.columns_mut().into_iter().zip(kept.iter()) {
                c.mapv_inplace(|x| x * d);
            }
            ud.dot(&svd.v.slice(s![.., ..k]).t())
        };
        let new_resid = &target - &z;
        self.resid
            .slice_mut(s![rows.clone(), cols.clone()])
            .assign(&new_resid);
        self.component_array(comp)
            .slice_mut(s![rows.clone(), cols.clone()])
            .assign(&z);
        let nuc = kept.iter().sum::<f64>();
        match comp {
            Component::Global => self.nuc_global = nuc,
            Component::Row(i) => self.nuc_row[i] = nuc,
            Component::Col(j) => self.nuc_col[j] = nuc,
            Component::Individual(i, j) => self.nuc_indiv[i][j] = nuc,
        }
        // refresh residual energies of the touched blocks
        let (p, q) = (self.layout.p(), self.layout.q());
        for bi in 0..p {
            let rr = self.layout.row_range(bi);
            if rr.end <= rows.start || rr.start >= rows.end {
                continue;
            }
            for bj in 0..q {
                let cc = self.layout.col_range(bj);
                if cc.end <= cols.start || cc.start >= cols.end {
                    continue;
                }
                self.resid_sq[bi][bj] = self
                    .resid
                    .slice(s![rr.clone(), cc])
                    .iter()
                    .map(|v| v * v)
                    .sum();
            }
        }
        self.trace.push(self.objective());
        Ok(())
    }

    fn to_decomposition(&self, layout: &BlockLayout) -> Decomposition {
        let mut theta = Decomposition::zeros(layout);
        theta.global = self.global.clone();
        for i in 0..layout.p() {
            theta.row_shared[i] = self.row.slice(s![layout.row_range(i), ..]).to_owned();
        }
        for j in 0..layout.q() {
            theta.col_shared[j] = self.col.slice(s![.., layout.col_range(j)]).to_owned();
        }
        for i in 0..layout.p() {
            for j in 0..layout.q() {
                theta.individual[i][j] = self
                    .indiv
                    .slice(s![layout.row_range(i), layout.col_range(j)])
                    .to_owned();
            }
        }
        theta
    }
}

fn build_report(
    theta: &Decomposition,
    grid: &BlockGrid,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<FitReport> {
    Ok(FitReport {
        objective_trace,
        iterations,
        converged,
        component_ranks: theta.component_ranks()?,
        variance_explained: variance_table(theta, grid)?,
    })
}

/// Proportion of variance explained by the compound components of each
/// block, with the numerical rank of each compound matrix.
pub fn variance_table(theta: &Decomposition, grid: &BlockGrid) -> Result<VarianceTable> {
    let layout = grid.layout();
    let mut rows = Vec::new();
    for i in 0..layout.p() {
        for j in 0..layout.q() {
            let g = theta.global_block(i, j);
            let r = theta.row_shared_block(i, j);
            let c = theta.col_shared_block(i, j);
            let gr = &g + &r;
            let gc = &g + &c;
            let grc = &gr + &c;
            let sig = &grc + &theta.individual[i][j];
            let x = grid.block(i, j);
            let xnorm = frobenius_norm(x.view()).powi(2);
            let r2 = |comp: &Array2<f64>| {
                if xnorm == 0.0 {
                    f64::NAN
                } else {
                    1.0 - frobenius_norm((x - comp).view()).powi(2) / xnorm
                }
            };
            let rank = |comp: &Array2<f64>| -> Result<usize> {
                if comp.iter().all(|&v| v == 0.0) {
                    Ok(0)
                } else {
                    numerical_rank(comp.view(), DEFAULT_RANK_TOL)
                }
            };
            rows.push(VarianceRow {
                row_block: i,
                col_block: j,
                r2: [r2(&g), r2(&gr), r2(&gc), r2(&grc), r2(&sig)],
                ranks: [rank(&g)?, rank(&gr)?, rank(&gc)?, rank(&grc)?, rank(&sig)?],
            });
        }
    }
    Ok(VarianceTable { rows })
}

/// Elementwise block sums of the components (free-function form of
/// [`Decomposition::compose_signal`]).
pub fn compose_signal(theta: &Decomposition) -> Vec<Vec<Array2<f64>>> {
    theta.compose_signal()
}

// ---------------------------------------------------------------------------
// Factorized (alternating ridge) solver
// ---------------------------------------------------------------------------

struct Factor {
    u: Array2<f64>,
    v: Array2<f64>,
}

impl Factor {
    fn product(&self) -> Array2<f64> {
        self.u.dot(&self.v.t())
    }

    fn penalty(&self) -> f64 {
        self.u.iter().map(|x| x * x).sum::<f64>() + self.v.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Fits the factorized form of the objective by alternating ridge updates of
/// the loading and score factors of each component, in the same sweep order
/// as the threshold solver. The assembled products minimize the nuclear-norm
/// objective at convergence.
pub fn als_fit(
    grid: &BlockGrid,
    scheme: &PenaltyScheme,
    config: &SolverConfig,
) -> Result<(Decomposition, FitReport)> {
    let layout = grid.layout();
    check_scheme(scheme, layout)?;
    check_fully_observed(grid)?;
    let active = active_components(layout);
    let caps = config
        .rank_caps
        .clone()
        .unwrap_or_else(|| RankCaps::full(layout));
    let (m0, n0, p, q) = (layout.m0(), layout.n0(), layout.p(), layout.q());
    let x = grid.concat(crate::grid::ConcatView::Full)?;

    // factor widths; suppressed components keep width 0 and stay zero
    let width = |cap: usize, rows: usize, cols: usize| cap.min(rows.min(cols)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x616c73);
    let mut init_factor = |rows: usize, cols: usize, w: usize| -> Factor {
        let scale = 1.0 / (w as f64).sqrt();
        match &config.init {
            Init::Zeros => Factor {
                u: Array2::from_shape_fn((rows, w), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }),
                v: Array2::from_shape_fn((cols, w), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }),
            },
            Init::Warm(_) => unreachable!("warm factors are built from the decomposition"),
        }
    };

    let mut g_factor;
    let mut r_factors;
    let mut c_factors;
    let mut i_factors;
    match &config.init {
        Init::Warm(theta) => {
            if !theta.shapes_match(layout) {
                return Err(Error::DimensionMismatch(
                    "warm start does not match the grid layout".into(),
                ));
            }
            g_factor = factor_from_matrix(&theta.global, caps.global)?;
            r_factors = theta
                .row_shared
                .iter()
                .enumerate()
                .map(|(i, m)| factor_from_matrix(m, caps.row_shared[i]))
                .collect::<Result<Vec<_>>>()?;
            c_factors = theta
                .col_shared
                .iter()
                .enumerate()
                .map(|(j, m)| factor_from_matrix(m, caps.col_shared[j]))
                .collect::<Result<Vec<_>>>()?;
            i_factors = theta
                .individual
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r.iter()
                        .enumerate()
                        .map(|(j, m)| factor_from_matrix(m, caps.individual[i][j]))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
        }
        Init::Zeros => {
            g_factor = init_factor(m0, n0, width(caps.global, m0, n0));
            r_factors = (0..p)
                .map(|i| {
                    let m = layout.row_dims()[i];
                    init_factor(m, n0, width(caps.row_shared[i], m, n0))
                })
                .collect();
            c_factors = (0..q)
                .map(|j| {
                    let n = layout.col_dims()[j];
                    init_factor(m0, n, width(caps.col_shared[j], m0, n))
                })
                .collect();
            i_factors = (0..p)
                .map(|i| {
                    (0..q)
                        .map(|j| {
                            let (m, n) = layout.block_shape(i, j);
                            init_factor(m, n, width(caps.individual[i][j], m, n))
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>();
        }
    }

    // zero out suppressed components so they contribute nothing
    if !active.global {
        g_factor.u.fill(0.0);
        g_factor.v.fill(0.0);
    }
    if !active.row {
        for f in &mut r_factors {
            f.u.fill(0.0);
            f.v.fill(0.0);
        }
    }
    if !active.col {
        for f in &mut c_factors {
            f.u.fill(0.0);
            f.v.fill(0.0);
        }
    }

    // full-size component images
    let mut g_full = Array2::zeros((m0, n0));
    g_full.assign(&g_factor.product());
    let mut r_full = Array2::zeros((m0, n0));
    for i in 0..p {
        r_full
            .slice_mut(s![layout.row_range(i), ..])
            .assign(&r_factors[i].product());
    }
    let mut c_full = Array2::zeros((m0, n0));
    for j in 0..q {
        c_full
            .slice_mut(s![.., layout.col_range(j)])
            .assign(&c_factors[j].product());
    }
    let mut i_full = Array2::zeros((m0, n0));
    for i in 0..p {
        for j in 0..q {
            i_full
                .slice_mut(s![layout.row_range(i), layout.col_range(j)])
                .assign(&i_factors[i][j].product());
        }
    }
    let mut resid = &x - &g_full - &r_full - &c_full - &i_full;

    let f1 = |resid: &Array2<f64>,
              g: &Factor,
              rs: &[Factor],
              cs: &[Factor],
              is: &[Vec<Factor>]| {
        let mut v = resid.iter().map(|x| x * x).sum::<f64>();
        v += scheme.global * g.penalty();
        v += rs
            .iter()
            .zip(&scheme.row)
            .map(|(f, l)| l * f.penalty())
            .sum::<f64>();
        v += cs
            .iter()
            .zip(&scheme.col)
            .map(|(f, l)| l * f.penalty())
            .sum::<f64>();
        v += is
            .iter()
            .zip(&scheme.individual)
            .map(|(fr, lr)| {
                fr.iter()
                    .zip(lr)
                    .map(|(f, l)| l * f.penalty())
                    .sum::<f64>()
            })
            .sum::<f64>();
        v
    };

    let mut trace = vec![f1(&resid, &g_factor, &r_factors, &c_factors, &i_factors) / 2.0];
    let f_init = trace[0];
    let mut converged = false;
    let mut sweeps = 0;

    // spans per component, in sweep order
    enum Comp {
        G,
        R(usize),
        C(usize),
        I(usize, usize),
    }
    let mut order = Vec::new();
    if active.global {
        order.push(Comp::G);
    }
    if active.row {
        for i in 0..p {
            order.push(Comp::R(i));
        }
    }
    if active.col {
        for j in 0..q {
            order.push(Comp::C(j));
        }
    }
    for i in 0..p {
        for j in 0..q {
            order.push(Comp::I(i, j));
        }
    }

    for sweep in 1..=config.max_iter {
        let before = *trace.last().unwrap();
        for comp in &order {
            let (rows, cols, lam, factor, full): (
                Range<usize>,
                Range<usize>,
                f64,
                &mut Factor,
                &mut Array2<f64>,
            ) = match comp {
                Comp::G => (0..m0, 0..n0, scheme.global, &mut g_factor, &mut g_full),
                Comp::R(i) => (
                    layout.row_range(*i),
                    0..n0,
                    scheme.row[*i],
                    &mut r_factors[*i],
                    &mut r_full,
                ),
                Comp::C(j) => (
                    0..m0,
                    layout.col_range(*j),
                    scheme.col[*j],
                    &mut c_factors[*j],
                    &mut c_full,
                ),
                Comp::I(i, j) => (
                    layout.row_range(*i),
                    layout.col_range(*j),
                    scheme.individual[*i][*j],
                    &mut i_factors[*i][*j],
                    &mut i_full,
                ),
            };
            let mut target = resid.slice(s![rows.clone(), cols.clone()]).to_owned();
            target += &full.slice(s![rows.clone(), cols.clone()]);
            // ridge updates: u given v, then v given u
            factor.u = ridge_solve(&target.dot(&factor.v), &factor.v, lam)?;
            factor.v = ridge_solve(&target.t().dot(&factor.u), &factor.u, lam)?;
            let z = factor.product();
            let new_resid = &target - &z;
            resid
                .slice_mut(s![rows.clone(), cols.clone()])
                .assign(&new_resid);
            full.slice_mut(s![rows, cols]).assign(&z);
            trace.push(f1(&resid, &g_factor, &r_factors, &c_factors, &i_factors) / 2.0);
        }
        let after = *trace.last().unwrap();
        if !after.is_finite() {
            return Err(Error::NonFiniteObjective { sweep });
        }
        sweeps = sweep;
        if before - after <= config.rel_tol * f_init {
            converged = true;
            break;
        }
    }

    let mut theta = Decomposition::zeros(layout);
    theta.global = g_full;
    for i in 0..p {
        theta.row_shared[i] = r_full.slice(s![layout.row_range(i), ..]).to_owned();
    }
    for j in 0..q {
        theta.col_shared[j] = c_full.slice(s![.., layout.col_range(j)]).to_owned();
    }
    for i in 0..p {
        for j in 0..q {
            theta.individual[i][j] = i_full
                .slice(s![layout.row_range(i), layout.col_range(j)])
                .to_owned();
        }
    }
    let report = build_report(&theta, grid, trace, sweeps, converged)?;
    Ok((theta, report))
}

/// Balanced factorization of a warm-start component: `u = U sqrt(D)`,
/// `v = V sqrt(D)`, keeping at most `cap` (and at least one) columns.
fn factor_from_matrix(a: &Array2<f64>, cap: usize) -> Result<Factor> {
    let svd = thin_svd(a.view())?;
    let w = svd.singular_values.len().min(cap.max(1));
    let roots: Vec<f64> = svd
        .singular_values
        .iter()
        .take(w)
        .map(|d| d.sqrt())
        .collect();
    let mut u = svd.u.slice(s![.., ..w]).to_owned();
    let mut v = svd.v.slice(s![.., ..w]).to_owned();
    for (mut c, &r) in u.columns_mut().into_iter().zip(&roots) {
        c.mapv_inplace(|x| x * r);
    }
    for (mut c, &r) in v.columns_mut().into_iter().zip(&roots) {
        c.mapv_inplace(|x| x * r);
    }
    Ok(Factor { u, v })
}

/// Solves `out (VᵀV + lam I) = RHS` for `out`, where `rhs = M·V` has one row
/// per output row. Uses a Cholesky factorization; if the regularized Gram
/// matrix is numerically singular (possible only at `lam = 0`), falls back to
/// a pseudo-inverse through the SVD.
fn ridge_solve(rhs: &Array2<f64>, v: &Array2<f64>, lam: f64) -> Result<Array2<f64>> {
    let w = v.ncols();
    let mut gram = v.t().dot(v);
    for k in 0..w {
        gram[(k, k)] += lam;
    }
    if let Some(chol) = cholesky(&gram) {
        // solve gram * xᵀ = rhsᵀ column by column
        let mut out = Array2::zeros(rhs.dim());
        let mut work = vec![0.0; w];
        for r in 0..rhs.nrows() {
            for k in 0..w {
                work[k] = rhs[(r, k)];
            }
            chol_solve_in_place(&chol, &mut work);
            for k in 0..w {
                out[(r, k)] = work[k];
            }
        }
        Ok(out)
    } else {
        let svd = thin_svd(gram.view())?;
        let dmax = svd.singular_values[0].max(f64::MIN_POSITIVE);
        let inv: Vec<f64> = svd
            .singular_values
            .iter()
            .map(|&d| if d > 1e-12 * dmax { 1.0 / d } else { 0.0 })
            .collect();
        // pinv(gram) = V diag(inv) Uᵀ, so out = rhs · V diag(inv) Uᵀ
        let mut vd = svd.v.clone();
        for (mut c, &x) in vd.columns_mut().into_iter().zip(&inv) {
            c.mapv_inplace(|y| y * x);
        }
        Ok(rhs.dot(&vd).dot(&svd.u.t()))
    }
}

/// Lower-triangular Cholesky factor, or None if a pivot is not positive.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

fn chol_solve_in_place(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * b[k];
        }
        b[i] = sum / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= l[(k, i)] * b[k];
        }
        b[i] = sum / l[(i, i)];
    }
}
