use std::fmt;
use std::str::FromStr;

use super::TabularMdp;
use crate::error::{Error, Result};

pub const ROOM_MAP: &str = include_str!("../../assets/room.txt");
pub const MAZE_MAP: &str = include_str!("../../assets/maze.txt");

pub const ROOM_HORIZON: usize = 8;
pub const MAZE_HORIZON: usize = 10;
pub const DEFAULT_SLIP_PROB: f64 = 0.1;

/// Gridworld moves, indexed as the environment's action encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left = 0,
    Down = 1,
    Right = 2,
    Up = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Down, Action::Right, Action::Up];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Left => (0, -1),
            Action::Down => (1, 0),
            Action::Right => (0, 1),
            Action::Up => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Det,
    Stoc,
}

/// `obs = row * ncols + col`.
pub fn state_index(row: usize, col: usize, ncols: usize) -> Result<usize> {
    if col >= ncols {
        return Err(Error::domain(format!("column {col} outside grid of width {ncols}")));
    }
    Ok(row * ncols + col)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Row-major wall mask.
    pub walls: Vec<bool>,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub slip_prob: f64,
}

impl GridSpec {
    /// Parses the text map format: `#` wall, `.` free, `S` start, `G` goal.
    pub fn parse(text: &str, slip_prob: f64) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::Map("empty map".into()));
        }
        let cols = lines[0].chars().count();
        let mut walls = Vec::with_capacity(lines.len() * cols);
        let (mut start, mut goal) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Map(format!("row {r} has width {} (expected {cols})", line.chars().count())));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(Error::Map(format!("duplicate `{ch}` at ({r},{c})")));
                        }
                        walls.push(false);
                    }
                    other => return Err(Error::Map(format!("unknown cell `{other}` at ({r},{c})"))),
                }
            }
        }
        let spec = Self {
            rows: lines.len(),
            cols,
            walls,
            start: start.ok_or_else(|| Error::Map("missing start `S`".into()))?,
            goal: goal.ok_or_else(|| Error::Map("missing goal `G`".into()))?,
            slip_prob,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::domain(format!("slip_prob {} outside [0,1]", self.slip_prob)));
        }
        if self.is_wall(self.start.0, self.start.1) || self.is_wall(self.goal.0, self.goal.1) {
            return Err(Error::Map("start and goal must be free cells".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.walls[row * self.cols + col]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s / self.cols, s % self.cols)
    }

    pub fn start_state(&self) -> usize {
        self.index(self.start.0, self.start.1)
    }

    pub fn goal_state(&self) -> usize {
        self.index(self.goal.0, self.goal.1)
    }

    pub fn num_free(&self) -> usize {
        self.walls.iter().filter(|&&w| !w).count()
    }

    /// Cell reached by an intended move; blocked moves stay in place.
    pub fn step(&self, s: usize, action: Action) -> usize {
        let (r, c) = self.coords(s);
        let (dr, dc) = action.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            return s;
        }
        let next = self.index(nr as usize, nc as usize);
        if self.walls[next] {
            s
        } else {
            next
        }
    }

    /// Builds the transition kernel. With slip probability `p` the intended
    /// action is replaced by a uniformly drawn one, so the intended move keeps
    /// `1 - p + p/4`. Wall cells are absorbing and unreachable.
    pub fn to_mdp(&self, horizon: usize) -> Result<TabularMdp> {
        self.validate()?;
        let n = self.num_cells();
        let num_actions = Action::ALL.len();
        let p = self.slip_prob;
        let mut transitions = Vec::with_capacity(n * num_actions);
        for s in 0..n {
            for &intended in &Action::ALL {
                if self.walls[s] {
                    transitions.push(vec![(s, 1.0)]);
                    continue;
                }
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
                let mut add = |next: usize, mass: f64| {
                    if mass <= 0.0 {
                        return;
                    }
                    match row.iter_mut().find(|(n, _)| *n == next) {
                        Some(entry) => entry.1 += mass,
                        None => row.push((next, mass)),
                    }
                };
                add(self.step(s, intended), 1.0 - p);
                for &other in &Action::ALL {
                    add(self.step(s, other), p / num_actions as f64);
                }
                row.sort_by_key(|&(n, _)| n);
                transitions.push(row);
            }
        }
        let mut initial = vec![0.0; n];
        initial[self.start_state()] = 1.0;
        let reachable = self.walls.iter().map(|&w| !w).collect();
        Ok(TabularMdp::new(n, num_actions, transitions, initial, horizon, Some(reachable))?
            .with_grid(self.clone()))
    }

    /// Renders the layout back to the text map format.
    pub fn to_map_string(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                let ch = if (r, c) == self.start {
                    'S'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.is_wall(r, c) {
                    '#'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

fn slip_for(variant: Variant, slip_prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&slip_prob) {
        return Err(Error::domain(format!("slip_prob {slip_prob} outside [0,1]")));
    }
    Ok(match variant {
        Variant::Det => 0.0,
        Variant::Stoc => slip_prob,
    })
}

/// Two rooms joined by a one-cell-high corridor on a 5x11 grid.
pub fn make_room(variant: Variant, slip_prob: f64) -> Result<TabularMdp> {
    GridSpec::parse(ROOM_MAP, slip_for(variant, slip_prob)?)?.to_mdp(ROOM_HORIZON)
}

/// Branching corridor maze on a 10x10 grid, goal in the top row.
pub fn make_maze(variant: Variant, slip_prob: f64) -> Result<TabularMdp> {
    GridSpec::parse(MAZE_MAP, slip_for(variant, slip_prob)?)?.to_mdp(MAZE_HORIZON)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvId {
    RoomDet,
    RoomStoc,
    MazeDet,
    MazeStoc,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [EnvId::RoomDet, EnvId::RoomStoc, EnvId::MazeDet, EnvId::MazeStoc];

    pub fn build(self, slip_prob: f64) -> Result<TabularMdp> {
        match self {
            EnvId::RoomDet => make_room(Variant::Det, slip_prob),
            EnvId::RoomStoc => make_room(Variant::Stoc, slip_prob),
            EnvId::MazeDet => make_maze(Variant::Det, slip_prob),
            EnvId::MazeStoc => make_maze(Variant::Stoc, slip_prob),
        }
    }

    pub fn grid(self, slip_prob: f64) -> Result<GridSpec> {
        let (map, variant) = match self {
            EnvId::RoomDet => (ROOM_MAP, Variant::Det),
            EnvId::RoomStoc => (ROOM_MAP, Variant::Stoc),
            EnvId::MazeDet => (MAZE_MAP, Variant::Det),
            EnvId::MazeStoc => (MAZE_MAP, Variant::Stoc),
        };
        GridSpec::parse(map, slip_for(variant, slip_prob)?)
    }

    pub fn horizon(self) -> usize {
        match self {
            EnvId::RoomDet | EnvId::RoomStoc => ROOM_HORIZON,
            EnvId::MazeDet | EnvId::MazeStoc => MAZE_HORIZON,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::RoomDet => "room-det",
            EnvId::RoomStoc => "room-stoc",
            EnvId::MazeDet => "maze-det",
            EnvId::MazeStoc => "maze-stoc",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown environment `{s}`")))
    }
}
