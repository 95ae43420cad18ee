//! Deterministic grid abstraction of top-down block stacking.
//!
//! The workspace is a `W x W` grid of stacks. One action per cell: with an
//! empty hand the action picks the top piece covering that cell, with a full
//! hand it places the held piece with its left footprint cell there. Illegal
//! actions are no-ops. Long pieces (brick, long roof) always lie along a row.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{StackTask, Terminal};
use crate::mdp::{seeded_rng, ActionId, Environment, Observation, SeededRng, Transition};

pub const DEFAULT_WIDTH: usize = 8;
pub const DEFAULT_MAX_STEPS: usize = 20;
pub const SUCCESS_REWARD: f64 = 1.0;
/// In-hand encoding: empty plus one slot per piece kind.
pub const HAND_SLOTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PieceKind {
    Cube,
    Brick,
    ShortRoof,
    LongRoof,
}

impl PieceKind {
    /// Type-map code; 0 is reserved for empty cells.
    pub fn code(self) -> u8 {
        match self {
            PieceKind::Cube => 1,
            PieceKind::Brick => 2,
            PieceKind::ShortRoof => 3,
            PieceKind::LongRoof => 4,
        }
    }

    pub fn is_long(self) -> bool {
        matches!(self, PieceKind::Brick | PieceKind::LongRoof)
    }

    pub fn is_roof(self) -> bool {
        matches!(self, PieceKind::ShortRoof | PieceKind::LongRoof)
    }
}

/// Pieces needed to build `task`, bottom layer first.
pub fn pieces_for(task: &StackTask) -> Vec<PieceKind> {
    task.layers()
        .iter()
        .flat_map(|t| match t {
            Terminal::OneBlock => vec![PieceKind::Cube],
            Terminal::TwoBlocks => vec![PieceKind::Cube, PieceKind::Cube],
            Terminal::Brick => vec![PieceKind::Brick],
            Terminal::ShortRoof => vec![PieceKind::ShortRoof],
            Terminal::LongRoof => vec![PieceKind::LongRoof],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Placement {
    pub row: usize,
    /// Left-most footprint column.
    pub col: usize,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Piece {
    pub kind: PieceKind,
    /// `None` while held.
    pub placement: Option<Placement>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridStackState {
    width: usize,
    /// Bottom-to-top piece ids per cell, row-major.
    cells: Vec<Vec<usize>>,
    pieces: Vec<Piece>,
    in_hand: Option<usize>,
    pub steps: usize,
}

impl GridStackState {
    pub fn empty(width: usize) -> Self {
        Self {
            width,
            cells: vec![Vec::new(); width * width],
            pieces: Vec::new(),
            in_hand: None,
            steps: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn in_hand(&self) -> Option<PieceKind> {
        self.in_hand.map(|p| self.pieces[p].kind)
    }

    pub fn in_hand_id(&self) -> Option<usize> {
        self.in_hand
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn height(&self, cell: usize) -> usize {
        self.cells[cell].len()
    }

    pub fn top(&self, cell: usize) -> Option<usize> {
        self.cells[cell].last().copied()
    }

    pub fn top_kind(&self, cell: usize) -> Option<PieceKind> {
        self.top(cell).map(|p| self.pieces[p].kind)
    }

    pub fn piece_at(&self, cell: usize, level: usize) -> Option<usize> {
        self.cells[cell].get(level).copied()
    }

    /// Same configuration, ignoring the step counter.
    pub fn same_layout(&self, other: &GridStackState) -> bool {
        self.width == other.width
            && self.cells == other.cells
            && self.pieces == other.pieces
            && self.in_hand == other.in_hand
    }

    /// Multiset of piece kinds, held piece included.
    pub fn piece_kinds(&self) -> Vec<PieceKind> {
        let mut k: Vec<PieceKind> = self.pieces.iter().map(|p| p.kind).collect();
        k.sort();
        k
    }

    fn footprint(&self, kind: PieceKind, row: usize, col: usize) -> Option<Vec<usize>> {
        if row >= self.width || col >= self.width {
            return None;
        }
        if kind.is_long() {
            (col + 1 < self.width).then(|| vec![self.cell(row, col), self.cell(row, col + 1)])
        } else {
            Some(vec![self.cell(row, col)])
        }
    }

    fn piece_footprint(&self, id: usize) -> Option<Vec<usize>> {
        let p = &self.pieces[id];
        let at = p.placement?;
        self.footprint(p.kind, at.row, at.col)
    }

    fn can_place(&self, kind: PieceKind, row: usize, col: usize) -> Option<(Vec<usize>, usize)> {
        let cells = self.footprint(kind, row, col)?;
        let level = self.height(cells[0]);
        let flat = cells.iter().all(|&c| self.height(c) == level);
        let roofed = cells
            .iter()
            .any(|&c| self.top_kind(c).is_some_and(PieceKind::is_roof));
        (flat && !roofed).then_some((cells, level))
    }

    /// Adds a new piece at `(row, col)` on top of whatever is there.
    pub fn add_piece(&mut self, kind: PieceKind, row: usize, col: usize) -> Result<usize> {
        let (cells, level) = self.can_place(kind, row, col).ok_or_else(|| {
            Error::InvalidArgument(format!("cannot place {kind:?} at ({row}, {col})"))
        })?;
        let id = self.pieces.len();
        for c in cells {
            self.cells[c].push(id);
        }
        self.pieces.push(Piece {
            kind,
            placement: Some(Placement { row, col, level }),
        });
        Ok(id)
    }

    /// Picks the top piece covering `cell`. Returns false on a no-op.
    pub fn try_pick(&mut self, cell: usize) -> bool {
        if self.in_hand.is_some() {
            return false;
        }
        let Some(id) = self.top(cell) else {
            return false;
        };
        let cells = self
            .piece_footprint(id)
            .expect("placed piece has a footprint");
        if cells.iter().any(|&c| self.top(c) != Some(id)) {
            return false;
        }
        for c in cells {
            self.cells[c].pop();
        }
        self.pieces[id].placement = None;
        self.in_hand = Some(id);
        true
    }

    /// Places the held piece with its left cell at `cell`. Returns false on a
    /// no-op.
    pub fn try_place(&mut self, cell: usize) -> bool {
        let Some(id) = self.in_hand else {
            return false;
        };
        let (row, col) = (cell / self.width, cell % self.width);
        let Some((cells, level)) = self.can_place(self.pieces[id].kind, row, col) else {
            return false;
        };
        for c in cells {
            self.cells[c].push(id);
        }
        self.pieces[id].placement = Some(Placement { row, col, level });
        self.in_hand = None;
        true
    }

    /// Pick with an empty hand, place otherwise.
    pub fn apply(&mut self, cell: usize) -> bool {
        if self.in_hand.is_some() {
            self.try_place(cell)
        } else {
            self.try_pick(cell)
        }
    }

    pub fn obs_len(width: usize) -> usize {
        2 * width * width + HAND_SLOTS
    }

    /// Height map, top-piece type map, then the in-hand one-hot
    /// (slot 0 = empty hand).
    pub fn observation(&self) -> Observation {
        let n = self.width * self.width;
        let mut data = vec![0f32; Self::obs_len(self.width)];
        for c in 0..n {
            data[c] = self.height(c) as f32;
            data[n + c] = self.top_kind(c).map_or(0, PieceKind::code) as f32;
        }
        let slot = self.in_hand().map_or(0, |k| k.code() as usize);
        data[2 * n + slot] = 1.0;
        let len = data.len();
        Observation::new(data, vec![len]).expect("length matches by construction")
    }

    /// Free ground anchors for a piece of `kind`.
    fn ground_anchors(&self, kind: PieceKind) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for row in 0..self.width {
            for col in 0..self.width {
                if let Some(cells) = self.footprint(kind, row, col) {
                    if cells.iter().all(|&c| self.height(c) == 0) {
                        out.push((row, col));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Foot {
    Single(usize),
    /// Left cell of a two-cell footprint.
    Double(usize),
}

fn match_layers(s: &GridStackState, layers: &[Terminal], foot: Foot, level: usize) -> bool {
    let Some((&layer, rest)) = layers.split_first() else {
        return match foot {
            Foot::Single(c) => s.height(c) == level,
            Foot::Double(c) => s.height(c) == level && s.height(c + 1) == level,
        };
    };
    let kind_at = |cell: usize| s.piece_at(cell, level).map(|p| (p, s.pieces[p].kind));
    let anchored_long = |cell: usize, kind: PieceKind| match kind_at(cell) {
        Some((p, k)) if k == kind => s.pieces[p]
            .placement
            .is_some_and(|pl| s.cell(pl.row, pl.col) == cell),
        _ => false,
    };
    match layer {
        Terminal::OneBlock | Terminal::ShortRoof => {
            let want = if layer == Terminal::OneBlock {
                PieceKind::Cube
            } else {
                PieceKind::ShortRoof
            };
            let options: Vec<(usize, Option<usize>)> = match foot {
                Foot::Single(c) => vec![(c, None)],
                Foot::Double(c) => vec![(c, Some(c + 1)), (c + 1, Some(c))],
            };
            options.into_iter().any(|(cell, sibling)| {
                kind_at(cell).is_some_and(|(_, k)| k == want)
                    && sibling.map_or(true, |o| s.height(o) == level)
                    && match_layers(s, rest, Foot::Single(cell), level + 1)
            })
        }
        Terminal::TwoBlocks => match foot {
            Foot::Double(c) => {
                kind_at(c).is_some_and(|(_, k)| k == PieceKind::Cube)
                    && kind_at(c + 1).is_some_and(|(_, k)| k == PieceKind::Cube)
                    && match_layers(s, rest, foot, level + 1)
            }
            Foot::Single(_) => false,
        },
        Terminal::Brick | Terminal::LongRoof => match foot {
            Foot::Double(c) => {
                let want = if layer == Terminal::Brick {
                    PieceKind::Brick
                } else {
                    PieceKind::LongRoof
                };
                anchored_long(c, want) && match_layers(s, rest, foot, level + 1)
            }
            Foot::Single(_) => false,
        },
    }
}

/// True iff some ground location holds exactly the task's layers.
pub fn goal_satisfied(state: &GridStackState, task: &StackTask) -> bool {
    let layers = task.layers();
    let Some(&first) = layers.first() else {
        return false;
    };
    let w = state.width;
    (0..w).any(|row| {
        (0..w).any(|col| {
            let cell = state.cell(row, col);
            if first.is_long() {
                col + 1 < w && match_layers(state, layers, Foot::Double(cell), 0)
            } else {
                match_layers(state, layers, Foot::Single(cell), 0)
            }
        })
    })
}

fn scatter<R: Rng + ?Sized>(
    state: &mut GridStackState,
    kinds: &[PieceKind],
    rng: &mut R,
    task: &StackTask,
) -> Result<()> {
    for &kind in kinds {
        let anchors = state.ground_anchors(kind);
        let &(row, col) = anchors.choose(rng).ok_or_else(|| Error::BoardTooSmall {
            width: state.width,
            task: task.name().to_string(),
        })?;
        state.add_piece(kind, row, col)?;
    }
    Ok(())
}

/// The task's pieces scattered over the ground at random, non-overlapping
/// cells. Piece ids follow [`pieces_for`] order.
pub fn init_for_task<R: Rng + ?Sized>(
    task: &StackTask,
    width: usize,
    rng: &mut R,
) -> Result<GridStackState> {
    let mut state = GridStackState::empty(width);
    scatter(&mut state, &pieces_for(task), rng, task)?;
    Ok(state)
}

/// The finished goal structure at a random location. Piece ids follow
/// [`pieces_for`] order.
pub fn init_at_goal<R: Rng + ?Sized>(
    task: &StackTask,
    width: usize,
    rng: &mut R,
) -> Result<GridStackState> {
    let too_small = || Error::BoardTooSmall {
        width,
        task: task.name().to_string(),
    };
    let wide = task.layers().iter().any(|t| t.is_long());
    if width == 0 || (wide && width < 2) {
        return Err(too_small());
    }
    let mut state = GridStackState::empty(width);
    let row = rng.gen_range(0..width);
    let col = rng.gen_range(0..width - wide as usize);
    // Column of the single-cell sub-stack once the structure narrows.
    let mut single: Option<usize> = None;
    for &layer in task.layers() {
        match layer {
            Terminal::OneBlock | Terminal::ShortRoof => {
                let c =
                    *single
                        .get_or_insert_with(|| if wide { col + rng.gen_range(0..2) } else { col });
                let kind = if layer == Terminal::OneBlock {
                    PieceKind::Cube
                } else {
                    PieceKind::ShortRoof
                };
                state.add_piece(kind, row, c)?;
            }
            Terminal::TwoBlocks => {
                state.add_piece(PieceKind::Cube, row, col)?;
                state.add_piece(PieceKind::Cube, row, col + 1)?;
            }
            Terminal::Brick => {
                state.add_piece(PieceKind::Brick, row, col)?;
            }
            Terminal::LongRoof => {
                state.add_piece(PieceKind::LongRoof, row, col)?;
            }
        }
    }
    Ok(state)
}

/// Cells with non-zero height in an observation of a `width`-wide board.
pub fn heuristic_action_set(obs: &Observation, width: usize) -> Vec<ActionId> {
    obs.data()[..width * width]
        .iter()
        .enumerate()
        .filter(|(_, &h)| h > 0.0)
        .map(|(i, _)| ActionId(i))
        .collect()
}

/// A construction demonstration obtained by reversing a deconstruction.
#[derive(Clone, Debug)]
pub struct Demonstration {
    /// Scattered state the construction starts from.
    pub start: GridStackState,
    /// States visited by the construction, `states[0] == start`.
    pub states: Vec<GridStackState>,
    pub actions: Vec<ActionId>,
    pub transitions: Vec<Transition>,
}

/// Deconstructs the goal structure top-down, moving every piece once to a
/// random free ground spot, then reverses the episode: picks become places
/// at the piece's former anchor and vice versa.
pub fn deconstruction_episode<R: Rng + ?Sized>(
    task: &StackTask,
    width: usize,
    rng: &mut R,
) -> Result<Demonstration> {
    let mut state = init_at_goal(task, width, rng)?;
    let mut states = vec![state.clone()];
    // Reverse-direction action for each deconstruction step.
    let mut undo = Vec::new();
    let mut moved = vec![false; state.pieces.len()];
    while let Some(id) = (0..state.pieces.len())
        .filter(|&p| !moved[p])
        .max_by_key(|&p| {
            (
                state.pieces[p].placement.map_or(0, |pl| pl.level),
                std::cmp::Reverse(p),
            )
        })
    {
        let at = state.pieces[id].placement.expect("unmoved piece is placed");
        let anchor = state.cell(at.row, at.col);
        let picked = state.try_pick(anchor);
        debug_assert!(picked, "top-most piece is always free");
        states.push(state.clone());
        undo.push(ActionId(anchor));

        let spots = state.ground_anchors(state.pieces[id].kind);
        let &(row, col) = spots.choose(rng).ok_or_else(|| Error::BoardTooSmall {
            width,
            task: task.name().to_string(),
        })?;
        let cell = state.cell(row, col);
        let placed = state.try_place(cell);
        debug_assert!(placed);
        states.push(state.clone());
        undo.push(ActionId(cell));
        moved[id] = true;
    }

    states.reverse();
    undo.reverse();
    for (k, s) in states.iter_mut().enumerate() {
        s.steps = k;
    }
    let last = undo.len();
    let transitions = undo
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let done = k + 1 == last;
            let reward = if done { SUCCESS_REWARD } else { 0.0 };
            Transition::new(
                states[k].observation(),
                a,
                reward,
                states[k + 1].observation(),
                done,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Demonstration {
        start: states[0].clone(),
        states,
        actions: undo,
        transitions,
    })
}

pub fn deconstruction_demo<R: Rng + ?Sized>(
    task: &StackTask,
    width: usize,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    Ok(deconstruction_episode(task, width, rng)?.transitions)
}

#[derive(Clone, Debug)]
pub struct GridStackEnv {
    task: StackTask,
    width: usize,
    state: GridStackState,
    rng: SeededRng,
    max_steps: usize,
    terminal: bool,
    success: bool,
}

impl GridStackEnv {
    pub fn new(task: StackTask, seed: u64) -> Result<Self> {
        Self::with_width(task, DEFAULT_WIDTH, seed)
    }

    pub fn with_width(task: StackTask, width: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let state = init_for_task(&task, width, &mut rng)?;
        Ok(Self {
            task,
            width,
            state,
            rng,
            max_steps: DEFAULT_MAX_STEPS,
            terminal: false,
            success: false,
        })
    }

    pub fn task(&self) -> &StackTask {
        &self.task
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn state(&self) -> &GridStackState {
        &self.state
    }

    /// Replaces the current state, e.g. to replay a demonstration.
    pub fn set_state(&mut self, state: GridStackState) {
        self.success = goal_satisfied(&state, &self.task);
        self.terminal = self.success;
        self.state = state;
    }

    pub fn heuristic_actions(&self) -> Vec<ActionId> {
        heuristic_action_set(&self.observation(), self.width)
    }
}

impl Environment for GridStackEnv {
    fn action_count(&self) -> usize {
        self.width * self.width
    }

    fn obs_shape(&self) -> Vec<usize> {
        vec![GridStackState::obs_len(self.width)]
    }

    fn reset(&mut self) -> Observation {
        self.state = init_for_task(&self.task, self.width, &mut self.rng)
            .expect("board size was validated at construction");
        self.terminal = false;
        self.success = false;
        self.observation()
    }

    fn step(&mut self, action: ActionId) -> Result<Transition> {
        let n = self.action_count();
        if action.index() >= n {
            return Err(Error::ActionOutOfRange {
                action: action.index(),
                count: n,
            });
        }
        if self.terminal {
            return Err(Error::SteppedTerminalEnv);
        }
        let before = self.observation();
        self.state.apply(action.index());
        self.state.steps += 1;
        self.success = goal_satisfied(&self.state, &self.task);
        let reward = if self.success { SUCCESS_REWARD } else { 0.0 };
        self.terminal = self.success || self.state.steps >= self.max_steps;
        Transition::new(before, action, reward, self.observation(), self.terminal)
    }

    fn observation(&self) -> Observation {
        self.state.observation()
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn succeeded(&self) -> bool {
        self.success
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }
}
