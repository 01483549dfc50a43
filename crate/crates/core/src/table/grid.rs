use serde::{Deserialize, Serialize};

/// Identifier of an embedded insight record; the vizMask stores these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

/// Immutable identity of a cell, assigned at ingestion (or when aggregate derives it).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub index: u32,
    pub derived: bool,
}

impl CellId {
    pub fn original(index: u32) -> Self {
        CellId { index, derived: false }
    }
}

/// One grid position. Fill cells created by transformations have neither value nor id.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Cell {
    pub value: Option<f64>,
    pub id: Option<CellId>,
    pub viz: Option<RecordId>,
}

impl Cell {
    pub fn fill() -> Self {
        Cell::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl CellGrid {
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<Cell>) -> Self {
        assert_eq!(rows * cols, cells.len(), "grid shape does not match cell count");
        CellGrid { rows, cols, cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> &Cell {
        &self.cells[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut Cell {
        &mut self.cells[r * self.cols + c]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn transposed(&self) -> CellGrid {
        let mut cells = Vec::with_capacity(self.cells.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                cells.push(*self.get(r, c));
            }
        }
        CellGrid { rows: self.cols, cols: self.rows, cells }
    }

    pub fn clear_viz(&mut self) {
        for cell in &mut self.cells {
            cell.viz = None;
        }
    }

    pub fn values(&self) -> Vec<Vec<Option<f64>>> {
        self.cells.chunks(self.cols.max(1)).map(|row| row.iter().map(|c| c.value).collect()).collect()
    }

    pub fn visualized_count(&self) -> usize {
        self.cells.iter().filter(|c| c.viz.is_some()).count()
    }
}
