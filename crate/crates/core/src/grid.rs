//! The p x q grid of linked data blocks and its concatenated views.
//!
//! Blocks in the same grid row share rows (features), blocks in the same grid
//! column share columns (samples). Missing entries are tracked by an optional
//! boolean mask (`true` = observed); masked-out cells carry a NaN sentinel so
//! that any kernel that reads one by mistake fails loudly instead of silently
//! producing a number.

use ndarray::{s, Array2};
use std::ops::Range;

use crate::error::{Error, Result};

/// Row/column block sizes plus their prefix offsets into the concatenation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(row_dims: Vec<usize>, col_dims: Vec<usize>) -> Result<Self> {
        if row_dims.is_empty() || col_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "grid must have at least one row block and one column block".into(),
            ));
        }
        if row_dims.iter().any(|&m| m == 0) || col_dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(
                "block dimensions must be positive".into(),
            ));
        }
        let mut row_offsets = Vec::with_capacity(row_dims.len() + 1);
        let mut col_offsets = Vec::with_capacity(col_dims.len() + 1);
        row_offsets.push(0);
        for &m in &row_dims {
            row_offsets.push(row_offsets.last().unwrap() + m);
        }
        col_offsets.push(0);
        for &n in &col_dims {
            col_offsets.push(col_offsets.last().unwrap() + n);
        }
        Ok(Self {
            row_dims,
            col_dims,
            row_offsets,
            col_offsets,
        })
    }

    /// Number of row blocks.
    pub fn p(&self) -> usize {
        self.row_dims.len()
    }

    /// Number of column blocks.
    pub fn q(&self) -> usize {
        self.col_dims.len()
    }

    /// Total rows of the full concatenation.
    pub fn m0(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    /// Total columns of the full concatenation.
    pub fn n0(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    /// Row span of row block `i` within the concatenation.
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    /// Column span of column block `j` within the concatenation.
    pub fn col_range(&self, j: usize) -> Range<usize> {
        self.col_offsets[j]..self.col_offsets[j + 1]
    }

    pub fn block_shape(&self, i: usize, j: usize) -> (usize, usize) {
        (self.row_dims[i], self.col_dims[j])
    }

    fn check_indices(&self, i: Option<usize>, j: Option<usize>) -> Result<()> {
        if let Some(i) = i {
            if i >= self.p() {
                return Err(Error::IndexOutOfRange(format!(
                    "row block {i} out of 0..{}",
                    self.p()
                )));
            }
        }
        if let Some(j) = j {
            if j >= self.q() {
                return Err(Error::IndexOutOfRange(format!(
                    "column block {j} out of 0..{}",
                    self.q()
                )));
            }
        }
        Ok(())
    }
}

/// Which concatenation of the grid to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcatView {
    /// All blocks, `m0 x n0`.
    Full,
    /// One grid row: `[X_i1, ..., X_iq]`, `m_i x n0`.
    RowBlock(usize),
    /// One grid column: `[X_1j; ...; X_pj]`, `m0 x n_j`.
    ColBlock(usize),
}

/// A p x q grid of real matrices with an optional observation mask.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    layout: BlockLayout,
    blocks: Vec<Vec<Array2<f64>>>,
    mask: Option<Vec<Vec<Array2<bool>>>>,
}

impl BlockGrid {
    /// Builds a fully observed grid. Every block must be finite and block
    /// (i, j) must have shape `m_i x n_j`.
    pub fn new(blocks: Vec<Vec<Array2<f64>>>) -> Result<Self> {
        let grid = Self::from_parts(blocks, None)?;
        for row in &grid.blocks {
            for block in row {
                if let Some(((r, c), _)) = block.indexed_iter().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::NonFiniteEntry { row: r, col: c });
                }
            }
        }
        Ok(grid)
    }

    /// Builds a grid with missing entries. `mask[i][j]` must match the shape
    /// of block (i, j); `false` marks a missing cell. Observed cells must be
    /// finite; missing cells are overwritten with the NaN sentinel.
    pub fn with_mask(blocks: Vec<Vec<Array2<f64>>>, mask: Vec<Vec<Array2<bool>>>) -> Result<Self> {
        let mut grid = Self::from_parts(blocks, Some(mask))?;
        let mask = grid.mask.as_ref().unwrap();
        for (i, row) in grid.blocks.iter().enumerate() {
            for (j, block) in row.iter().enumerate() {
                if mask[i][j].dim() != block.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "mask for block ({i}, {j}) has shape {:?}, expected {:?}",
                        mask[i][j].dim(),
                        block.dim()
                    )));
                }
                for ((r, c), &v) in block.indexed_iter() {
                    if mask[i][j][(r, c)] && !v.is_finite() {
                        return Err(Error::NonFiniteEntry { row: r, col: c });
                    }
                }
            }
        }
        let mask = grid.mask.clone().unwrap();
        for (i, row) in grid.blocks.iter_mut().enumerate() {
            for (j, block) in row.iter_mut().enumerate() {
                for ((r, c), v) in block.indexed_iter_mut() {
                    if !mask[i][j][(r, c)] {
                        *v = f64::NAN;
                    }
                }
            }
        }
        Ok(grid)
    }

    fn from_parts(
        blocks: Vec<Vec<Array2<f64>>>,
        mask: Option<Vec<Vec<Array2<bool>>>>,
    ) -> Result<Self> {
        if blocks.is_empty() || blocks[0].is_empty() {
            return Err(Error::InvalidArgument("grid has no blocks".into()));
        }
        let q = blocks[0].len();
        if blocks.iter().any(|row| row.len() != q) {
            return Err(Error::DimensionMismatch(
                "all grid rows must have the same number of blocks".into(),
            ));
        }
        let row_dims: Vec<usize> = blocks.iter().map(|row| row[0].nrows()).collect();
        let col_dims: Vec<usize> = blocks[0].iter().map(|b| b.ncols()).collect();
        let layout = BlockLayout::new(row_dims, col_dims)?;
        for (i, row) in blocks.iter().enumerate() {
            for (j, block) in row.iter().enumerate() {
                let expect = layout.block_shape(i, j);
                if block.dim() != expect {
                    return Err(Error::DimensionMismatch(format!(
                        "block ({i}, {j}) has shape {:?}, expected {:?}",
                        block.dim(),
                        expect
                    )));
                }
            }
        }
        Ok(Self {
            layout,
            blocks,
            mask,
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block(&self, i: usize, j: usize) -> &Array2<f64> {
        &self.blocks[i][j]
    }

    pub fn blocks(&self) -> &Vec<Vec<Array2<f64>>> {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<Array2<f64>>> {
        self.blocks
    }

    pub fn mask(&self) -> Option<&Vec<Vec<Array2<bool>>>> {
        self.mask.as_ref()
    }

    /// Observation mask for one block, if the grid carries a mask.
    pub fn block_mask(&self, i: usize, j: usize) -> Option<&Array2<bool>> {
        self.mask.as_ref().map(|m| &m[i][j])
    }

    pub fn is_fully_observed(&self) -> bool {
        match &self.mask {
            None => true,
            Some(mask) => mask
                .iter()
                .all(|row| row.iter().all(|m| m.iter().all(|&o| o))),
        }
    }

    /// Total number of missing cells.
    pub fn missing_count(&self) -> usize {
        match &self.mask {
            None => 0,
            Some(mask) => mask
                .iter()
                .flat_map(|row| row.iter())
                .map(|m| m.iter().filter(|&&o| !o).count())
                .sum(),
        }
    }

    /// Number of observed cells in block (i, j).
    pub fn observed_count(&self, i: usize, j: usize) -> usize {
        match self.block_mask(i, j) {
            None => self.blocks[i][j].len(),
            Some(m) => m.iter().filter(|&&o| o).count(),
        }
    }

    /// Assembles the requested concatenation. Masked-out cells keep their NaN
    /// sentinel in the result.
    pub fn concat(&self, view: ConcatView) -> Result<Array2<f64>> {
        match view {
            ConcatView::Full => {
                let mut out = Array2::zeros((self.layout.m0(), self.layout.n0()));
                for i in 0..self.layout.p() {
                    for j in 0..self.layout.q() {
                        out.slice_mut(s![self.layout.row_range(i), self.layout.col_range(j)])
                            .assign(&self.blocks[i][j]);
                    }
                }
                Ok(out)
            }
            ConcatView::RowBlock(i) => {
                self.layout.check_indices(Some(i), None)?;
                let mut out = Array2::zeros((self.layout.row_dims()[i], self.layout.n0()));
                for j in 0..self.layout.q() {
                    out.slice_mut(s![.., self.layout.col_range(j)])
                        .assign(&self.blocks[i][j]);
                }
                Ok(out)
            }
            ConcatView::ColBlock(j) => {
                self.layout.check_indices(None, Some(j))?;
                let mut out = Array2::zeros((self.layout.m0(), self.layout.col_dims()[j]));
                for i in 0..self.layout.p() {
                    out.slice_mut(s![self.layout.row_range(i), ..])
                        .assign(&self.blocks[i][j]);
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn counted_grid() -> BlockGrid {
        // 2x2 grid with m = (2, 3), n = (4, 1); entries encode their block
        let m = [2usize, 3];
        let n = [4usize, 1];
        let mut blocks = Vec::new();
        for (i, &mi) in m.iter().enumerate() {
            let mut row = Vec::new();
            for (j, &nj) in n.iter().enumerate() {
                row.push(Array2::from_shape_fn((mi, nj), |(r, c)| {
                    (i * 10 + j) as f64 * 100.0 + (r * nj + c) as f64
                }));
            }
            blocks.push(row);
        }
        BlockGrid::new(blocks).unwrap()
    }

    #[test]
    fn concat_shapes() {
        let grid = counted_grid();
        assert_eq!(grid.concat(ConcatView::Full).unwrap().dim(), (5, 5));
        assert_eq!(grid.concat(ConcatView::RowBlock(0)).unwrap().dim(), (2, 5));
        assert_eq!(grid.concat(ConcatView::ColBlock(1)).unwrap().dim(), (5, 1));
        assert!(grid.concat(ConcatView::RowBlock(2)).is_err());
    }

    #[test]
    fn concat_roundtrip_is_lossless() {
        let grid = counted_grid();
        let full = grid.concat(ConcatView::Full).unwrap();
        let layout = grid.layout();
        for i in 0..layout.p() {
            for j in 0..layout.q() {
                let sub = full.slice(s![layout.row_range(i), layout.col_range(j)]);
                assert_eq!(sub.to_owned(), *grid.block(i, j));
            }
        }
    }

    #[test]
    fn shape_validation() {
        let blocks = vec![
            vec![Array2::<f64>::zeros((2, 3)), Array2::<f64>::zeros((2, 2))],
            vec![Array2::<f64>::zeros((3, 3)), Array2::<f64>::zeros((3, 1))],
        ];
        assert!(matches!(
            BlockGrid::new(blocks),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mask_sets_sentinel() {
        let blocks = vec![vec![Array2::<f64>::ones((2, 2))]];
        let mut mask = Array2::from_elem((2, 2), true);
        mask[(0, 1)] = false;
        let grid = BlockGrid::with_mask(blocks, vec![vec![mask]]).unwrap();
        assert!(grid.block(0, 0)[(0, 1)].is_nan());
        assert_eq!(grid.missing_count(), 1);
        assert_eq!(grid.observed_count(0, 0), 3);
        assert!(!grid.is_fully_observed());
    }
}
