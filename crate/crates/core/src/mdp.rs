//! Gridworld MDPs built from ASCII layouts.
//!
//! Legend: `#` wall, `.` floor, `R` red tile, `S` start, `G` goal.
//! States are the non-wall cells in row-major scan order.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const N_ACTIONS: usize = 4;
/// Row/column offsets for up, down, left, right.
pub const MOVES: [(isize, isize); N_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub const DEFAULT_DELTA: f64 = 1e-3;
pub const LOW_REWARD: f64 = -20.0;
pub const STEP_REWARD: f64 = -1.0;

pub const BUNDLED: [(&str, &str); 4] = [
    ("grid_task", include_str!("../layouts/grid_task.txt")),
    ("four_rooms", include_str!("../layouts/four_rooms.txt")),
    ("grid_room", include_str!("../layouts/grid_room.txt")),
    ("grid_maze", include_str!("../layouts/grid_maze.txt")),
];

/// Text of a bundled layout, by name with or without the `.txt` suffix.
pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".txt").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == stem).map(|(_, t)| *t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor,
    Red,
    Start,
    Goal,
}

impl Cell {
    fn from_glyph(c: char) -> Option<Cell> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Floor,
            'R' => Cell::Red,
            'S' => Cell::Start,
            'G' => Cell::Goal,
            _ => return None,
        })
    }

    pub fn glyph(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Red => 'R',
            Cell::Start => 'S',
            Cell::Goal => 'G',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
}

impl GridLayout {
    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.cols + c]
    }

    /// Canonical text form, one newline-terminated line per row.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.cell(r, c).glyph());
            }
            out.push('\n');
        }
        out
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }
}

impl fmt::Display for GridLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub fn parse_layout(text: &str) -> Result<GridLayout> {
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Layout("empty layout".into()));
    }
    let cols = lines[0].chars().count();
    let rows = lines.len();
    let mut cells = Vec::with_capacity(rows * cols);
    for (r, line) in lines.iter().enumerate() {
        if line.chars().count() != cols {
            return Err(Error::Layout(format!(
                "row {r} has {} cells, expected {cols}",
                line.chars().count()
            )));
        }
        for (c, ch) in line.chars().enumerate() {
            let cell = Cell::from_glyph(ch)
                .ok_or_else(|| Error::Layout(format!("unknown glyph {ch:?} at row {r}, col {c}")))?;
            cells.push(cell);
        }
    }
    let layout = GridLayout { rows, cols, cells };
    validate(&layout)?;
    Ok(layout)
}

fn validate(l: &GridLayout) -> Result<()> {
    if l.rows < 3 || l.cols < 3 {
        return Err(Error::Layout(format!("grid {}x{} is too small", l.rows, l.cols)));
    }
    for r in 0..l.rows {
        for c in 0..l.cols {
            let border = r == 0 || c == 0 || r + 1 == l.rows || c + 1 == l.cols;
            if border && l.cell(r, c) != Cell::Wall {
                return Err(Error::Layout(format!("border cell ({r}, {c}) is not a wall")));
            }
        }
    }
    match l.count(Cell::Start) {
        1 => {}
        0 => return Err(Error::Layout("no start cell".into())),
        k => return Err(Error::Layout(format!("{k} start cells, expected one"))),
    }
    if l.count(Cell::Goal) == 0 {
        return Err(Error::Layout("no goal cell".into()));
    }
    // Goals are absorbing, so reachability does not pass through them.
    let start = l.cells.iter().position(|&c| c == Cell::Start).unwrap();
    let mut seen = vec![false; l.cells.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        if l.cells[i] == Cell::Goal {
            continue;
        }
        let (r, c) = (i / l.cols, i % l.cols);
        for (dr, dc) in MOVES {
            let j = (r as isize + dr) as usize * l.cols + (c as isize + dc) as usize;
            if l.cells[j] != Cell::Wall && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    if let Some(i) = (0..l.cells.len()).find(|&i| l.cells[i] != Cell::Wall && !seen[i]) {
        return Err(Error::Layout(format!(
            "cell ({}, {}) is unreachable from start",
            i / l.cols,
            i % l.cols
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    OneHot,
    Coordinates,
    Pixels,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::OneHot, EncoderKind::Coordinates, EncoderKind::Pixels];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::OneHot => "one-hot",
            EncoderKind::Coordinates => "coordinates",
            EncoderKind::Pixels => "pixels",
        }
    }

    pub fn parse(s: &str) -> Option<EncoderKind> {
        match s {
            "one-hot" | "onehot" | "one_hot" => Some(EncoderKind::OneHot),
            "coordinates" | "coords" | "coord" => Some(EncoderKind::Coordinates),
            "pixels" | "pixel" => Some(EncoderKind::Pixels),
            _ => None,
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    pub layout: GridLayout,
    /// (row, col) of each state.
    pub states: Vec<(usize, usize)>,
    pub n_states: usize,
    pub goal_ids: Vec<usize>,
    pub red_ids: Vec<usize>,
    pub start_id: usize,
    pub delta: f64,
    pub low_reward: f64,
    pub step_reward: f64,
    cell_state: Vec<Option<usize>>,
    next: Vec<[usize; N_ACTIONS]>,
    kind: Vec<Cell>,
}

impl GridWorld {
    pub fn new(layout: GridLayout, delta: f64) -> Result<GridWorld> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Invalid(format!("delta must be positive, got {delta}")));
        }
        validate(&layout)?;
        let mut states = Vec::new();
        let mut kind = Vec::new();
        let mut cell_state = vec![None; layout.cells.len()];
        for r in 0..layout.rows {
            for c in 0..layout.cols {
                let cell = layout.cell(r, c);
                if cell != Cell::Wall {
                    cell_state[r * layout.cols + c] = Some(states.len());
                    states.push((r, c));
                    kind.push(cell);
                }
            }
        }
        let n = states.len();
        let ids = |k: Cell| (0..n).filter(|&s| kind[s] == k).collect::<Vec<_>>();
        let goal_ids = ids(Cell::Goal);
        let red_ids = ids(Cell::Red);
        let start_id = ids(Cell::Start)[0];
        let mut next = vec![[0usize; N_ACTIONS]; n];
        for s in 0..n {
            if kind[s] == Cell::Goal {
                next[s] = [s; N_ACTIONS];
                continue;
            }
            let (r, c) = states[s];
            for (a, (dr, dc)) in MOVES.iter().enumerate() {
                let j = (r as isize + dr) as usize * layout.cols + (c as isize + dc) as usize;
                next[s][a] = cell_state[j].unwrap_or(s);
            }
        }
        Ok(GridWorld {
            layout,
            states,
            n_states: n,
            goal_ids,
            red_ids,
            start_id,
            delta,
            low_reward: LOW_REWARD,
            step_reward: STEP_REWARD,
            cell_state,
            next,
            kind,
        })
    }

    pub fn from_text(text: &str, delta: f64) -> Result<GridWorld> {
        GridWorld::new(parse_layout(text)?, delta)
    }

    pub fn bundled(name: &str) -> Result<GridWorld> {
        let text = bundled(name).ok_or_else(|| Error::Invalid(format!("no bundled layout named {name:?}")))?;
        GridWorld::from_text(text, DEFAULT_DELTA)
    }

    pub fn with_delta(&self, delta: f64) -> Result<GridWorld> {
        GridWorld::new(self.layout.clone(), delta)
    }

    pub fn cell_kind(&self, s: usize) -> Cell {
        self.kind[s]
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.kind[s] == Cell::Goal
    }

    pub fn is_red(&self, s: usize) -> bool {
        self.kind[s] == Cell::Red
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.layout.rows || col >= self.layout.cols {
            return None;
        }
        self.cell_state[row * self.layout.cols + col]
    }

    /// Deterministic successor, with wall bounce and absorbing goals.
    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next[s][a]
    }

    /// Transition matrix of the uniform default policy; goal rows are basis vectors.
    pub fn default_transition_matrix(&self) -> DenseMatrix {
        let n = self.n_states;
        let mut p = DenseMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..N_ACTIONS {
                p[(s, self.next[s][a])] += 1.0 / N_ACTIONS as f64;
            }
        }
        p
    }

    /// Same policy in the episodic view: goal rows are zero.
    pub fn episodic_transition_matrix(&self) -> DenseMatrix {
        let mut p = self.default_transition_matrix();
        for &g in &self.goal_ids {
            for j in 0..self.n_states {
                p[(g, j)] = 0.0;
            }
        }
        p
    }

    pub fn dr_reward(&self, s: usize) -> f64 {
        match self.kind[s] {
            Cell::Goal => -self.delta,
            Cell::Red => self.low_reward,
            _ => self.step_reward,
        }
    }

    pub fn dr_reward_vector(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| self.dr_reward(s)).collect()
    }

    /// Reward for arriving at `s` in the episodic view.
    pub fn arrival_reward(&self, s: usize) -> f64 {
        match self.kind[s] {
            Cell::Goal => 0.0,
            Cell::Red => self.low_reward,
            _ => self.step_reward,
        }
    }

    /// One episodic step: returns (s', r_env, done).
    pub fn env_step(&self, s: usize, a: usize) -> Result<(usize, f64, bool)> {
        if s >= self.n_states || a >= N_ACTIONS {
            return Err(Error::Invalid(format!("state {s} / action {a} out of range")));
        }
        if self.is_goal(s) {
            return Err(Error::Invalid(format!("step from terminal state {s}")));
        }
        let sn = self.next[s][a];
        Ok((sn, self.arrival_reward(sn), self.is_goal(sn)))
    }

    pub fn encoder_dim(&self, kind: EncoderKind) -> usize {
        match kind {
            EncoderKind::OneHot => self.n_states,
            EncoderKind::Coordinates => 2,
            EncoderKind::Pixels => 4 * self.layout.rows * self.layout.cols,
        }
    }

    pub fn encode_state(&self, kind: EncoderKind, s: usize) -> Result<Vec<f64>> {
        if s >= self.n_states {
            return Err(Error::Invalid(format!("state {s} out of range (n = {})", self.n_states)));
        }
        let mut x = vec![0.0; self.encoder_dim(kind)];
        self.encode_into(kind, s, &mut x);
        Ok(x)
    }

    /// Row-major matrix of all encodings, one state per row.
    pub fn feature_matrix(&self, kind: EncoderKind) -> Vec<f64> {
        let d = self.encoder_dim(kind);
        let mut out = vec![0.0; d * self.n_states];
        for s in 0..self.n_states {
            self.encode_into(kind, s, &mut out[s * d..(s + 1) * d]);
        }
        out
    }

    fn encode_into(&self, kind: EncoderKind, s: usize, x: &mut [f64]) {
        let (rows, cols) = (self.layout.rows, self.layout.cols);
        match kind {
            EncoderKind::OneHot => {
                x.fill(0.0);
                x[s] = 1.0;
            }
            EncoderKind::Coordinates => {
                let (r, c) = self.states[s];
                x[0] = c as f64 / (cols - 1) as f64 - 0.5;
                x[1] = r as f64 / (rows - 1) as f64 - 0.5;
            }
            EncoderKind::Pixels => {
                // channels: wall, red, goal, agent
                let plane = rows * cols;
                for i in 0..plane {
                    let cell = self.layout.cells[i];
                    x[i] = if cell == Cell::Wall { 0.5 } else { -0.5 };
                    x[plane + i] = if cell == Cell::Red { 0.5 } else { -0.5 };
                    x[2 * plane + i] = if cell == Cell::Goal { 0.5 } else { -0.5 };
                    x[3 * plane + i] = -0.5;
                }
                let (r, c) = self.states[s];
                x[3 * plane + r * cols + c] = 0.5;
            }
        }
    }
}
