//! 4-neighbor grid maps in the MovingAI `.map` format, plus scenario files.

use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;
use thiserror::Error;

/// A grid cell addressed as `(row, col)`; row 0 is the top line of the map file.
///
/// Coordinates are signed so that moving off the edge produces a representable
/// (out-of-bounds) location that the caller can reject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub row: i32,
    pub col: i32,
}

impl Location {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

impl FromStr for Location {
    type Err = String;

    /// Parses `row,col`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `row,col`, got `{s}`"))?;
        let row = r.trim().parse().map_err(|e| format!("bad row `{r}`: {e}"))?;
        let col = c.trim().parse().map_err(|e| format!("bad col `{c}`: {e}"))?;
        Ok(Location { row, col })
    }
}

/// The five single-step actions in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Wait = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Wait,
    ];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// `(d_row, d_col)` offset of the action.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Wait => (0, 0),
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            Action::Wait => Action::Wait,
        }
    }

    /// The action that moves `from` onto `to`, if they are equal or 4-adjacent.
    pub fn between(from: Location, to: Location) -> Option<Action> {
        let d = (to.row - from.row, to.col - from.col);
        Self::ALL.into_iter().find(|a| a.delta() == d)
    }

    /// Single-letter token used in traces.
    pub fn symbol(self) -> char {
        match self {
            Action::Up => 'U',
            Action::Down => 'D',
            Action::Left => 'L',
            Action::Right => 'R',
            Action::Wait => 'W',
        }
    }

    pub fn from_symbol(c: char) -> Option<Action> {
        Self::ALL.into_iter().find(|a| a.symbol() == c)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Offsets `v` by one cell in the direction of `a` (or not at all for `Wait`).
/// Bounds are the caller's concern.
pub fn apply_action(v: Location, a: Action) -> Location {
    let (dr, dc) = a.delta();
    Location::new(v.row + dr, v.col + dc)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("missing or malformed header line {line}: expected `{expected}`")]
    Header { line: usize, expected: &'static str },
    #[error("empty map")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("unknown cell character {ch:?} at row {row}, col {col}")]
    UnknownCell { ch: char, row: usize, col: usize },
    #[error("location {0} is blocked or outside the map")]
    NotFree(Location),
}

/// An immutable 4-neighbor grid with a blocked-cell mask stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    height: usize,
    width: usize,
    blocked: Vec<bool>,
    free_count: usize,
}

impl GridMap {
    /// Builds a map from a row-major blocked mask.
    pub fn from_blocked(height: usize, width: usize, blocked: Vec<bool>) -> Result<Self, MapError> {
        if height == 0 || width == 0 {
            return Err(MapError::Empty);
        }
        if blocked.len() != height * width {
            return Err(MapError::Dimensions(format!(
                "mask has {} cells, expected {}x{}",
                blocked.len(),
                height,
                width
            )));
        }
        let free_count = blocked.iter().filter(|b| !**b).count();
        Ok(Self {
            height,
            width,
            blocked,
            free_count,
        })
    }

    /// An obstacle-free map.
    pub fn empty(height: usize, width: usize) -> Self {
        Self::from_blocked(height, width, vec![false; height * width]).expect("non-zero dimensions")
    }

    /// Builds a map from rows of `.`/`@` style characters (no header).
    pub fn from_rows(rows: &[&str]) -> Result<Self, MapError> {
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        let mut blocked = Vec::with_capacity(height * width);
        for (r, line) in rows.iter().enumerate() {
            let n = line.chars().count();
            if n != width {
                return Err(MapError::Dimensions(format!(
                    "row {r} has {n} cells, expected {width}"
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                blocked.push(cell_blocked(ch).ok_or(MapError::UnknownCell { ch, row: r, col: c })?);
            }
        }
        Self::from_blocked(height, width, blocked)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn free_count(&self) -> usize {
        self.free_count
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn in_bounds(&self, v: Location) -> bool {
        v.row >= 0 && v.col >= 0 && (v.row as usize) < self.height && (v.col as usize) < self.width
    }

    /// Row-major index of an in-bounds location.
    pub fn index(&self, v: Location) -> Option<usize> {
        self.in_bounds(v)
            .then(|| v.row as usize * self.width + v.col as usize)
    }

    pub fn location(&self, index: usize) -> Location {
        Location::new((index / self.width) as i32, (index % self.width) as i32)
    }

    pub fn is_blocked_index(&self, index: usize) -> bool {
        self.blocked[index]
    }

    /// True for in-bounds, unblocked cells.
    pub fn is_free(&self, v: Location) -> bool {
        self.index(v).is_some_and(|i| !self.blocked[i])
    }

    /// Index of `v` if it is a free cell.
    pub fn free_index(&self, v: Location) -> Option<usize> {
        self.index(v).filter(|&i| !self.blocked[i])
    }

    /// Wait plus every move whose target is free, in canonical action order.
    pub fn neighbors(&self, v: Location) -> Result<SmallVec<[(Action, Location); 5]>, MapError> {
        if !self.is_free(v) {
            return Err(MapError::NotFree(v));
        }
        Ok(Action::ALL
            .into_iter()
            .map(|a| (a, apply_action(v, a)))
            .filter(|(_, u)| self.is_free(*u))
            .collect())
    }

    /// Free 4-neighbors of a free cell index, as `(action, index)` pairs.
    #[inline]
    pub fn moves_from(&self, index: usize) -> impl Iterator<Item = (Action, usize)> + '_ {
        let row = index / self.width;
        let col = index % self.width;
        Action::MOVES.into_iter().filter_map(move |a| {
            let target = match a {
                Action::Up if row > 0 => index - self.width,
                Action::Down if row + 1 < self.height => index + self.width,
                Action::Left if col > 0 => index - 1,
                Action::Right if col + 1 < self.width => index + 1,
                _ => return None,
            };
            (!self.blocked[target]).then_some((a, target))
        })
    }

    /// Target index of action `a` from `index`, if in bounds and free.
    #[inline]
    pub fn step_index(&self, index: usize, a: Action) -> Option<usize> {
        let row = index / self.width;
        let col = index % self.width;
        let target = match a {
            Action::Wait => index,
            Action::Up if row > 0 => index - self.width,
            Action::Down if row + 1 < self.height => index + self.width,
            Action::Left if col > 0 => index - 1,
            Action::Right if col + 1 < self.width => index + 1,
            _ => return None,
        };
        (!self.blocked[target]).then_some(target)
    }

    /// Number of free 4-neighbors of a cell.
    pub fn degree(&self, index: usize) -> usize {
        self.moves_from(index).count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_cells()).filter(move |&i| !self.blocked[i])
    }

    /// Connected-component label per cell (`u32::MAX` for blocked cells).
    pub fn components(&self) -> Vec<u32> {
        let mut label = vec![u32::MAX; self.num_cells()];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..self.num_cells() {
            if self.blocked[start] || label[start] != u32::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for (_, u) in self.moves_from(v) {
                    if label[u] == u32::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Renders the map in MovingAI format using `.` and `@`.
    pub fn to_movingai(&self) -> String {
        let mut out = format!(
            "type octile\nheight {}\nwidth {}\nmap\n",
            self.height, self.width
        );
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.blocked[r * self.width + c] { '@' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

fn cell_blocked(ch: char) -> Option<bool> {
    match ch {
        '.' | 'G' => Some(false),
        '@' | 'T' | 'O' => Some(true),
        _ => None,
    }
}

fn header_value(line: Option<&str>, key: &'static str, line_no: usize, expected: &'static str) -> Result<usize, MapError> {
    let err = || MapError::Header {
        line: line_no,
        expected,
    };
    let line = line.ok_or_else(err)?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(err());
    }
    let value = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
    if parts.next().is_some() {
        return Err(err());
    }
    Ok(value)
}

/// Parses a MovingAI `.map` file.
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    match lines.next() {
        Some(l) if l.split_whitespace().next() == Some("type") => {}
        None => return Err(MapError::Empty),
        _ => {
            return Err(MapError::Header {
                line: 1,
                expected: "type octile",
            })
        }
    }
    let height = header_value(lines.next(), "height", 2, "height H")?;
    let width = header_value(lines.next(), "width", 3, "width W")?;
    if lines.next().map(str::trim) != Some("map") {
        return Err(MapError::Header {
            line: 4,
            expected: "map",
        });
    }
    if height == 0 || width == 0 {
        return Err(MapError::Empty);
    }
    let rows: Vec<&str> = lines.collect();
    // Allow trailing blank lines after the body.
    let body_len = rows
        .iter()
        .rposition(|l| !l.is_empty())
        .map_or(0, |p| p + 1);
    if body_len != height {
        return Err(MapError::Dimensions(format!(
            "header says height {height}, body has {body_len} rows"
        )));
    }
    let mut blocked = Vec::with_capacity(height * width);
    for (r, row) in rows[..body_len].iter().enumerate() {
        let n = row.chars().count();
        if n != width {
            return Err(MapError::Dimensions(format!(
                "row {r} has {n} cells, header says width {width}"
            )));
        }
        for (c, ch) in row.chars().enumerate() {
            blocked.push(cell_blocked(ch).ok_or(MapError::UnknownCell { ch, row: r, col: c })?);
        }
    }
    GridMap::from_blocked(height, width, blocked)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing `seed <u64>` header")]
    MissingSeed,
    #[error("agent ids must be 0..n in order; found {found} where {expected} was expected")]
    AgentOrder { expected: usize, found: usize },
    #[error("agent {agent} starts on a blocked or out-of-bounds cell {at}")]
    BlockedStart { agent: usize, at: Location },
    #[error("agents {first} and {second} share start cell {at}")]
    DuplicateStart {
        first: usize,
        second: usize,
        at: Location,
    },
}

/// Start locations plus the seed of the goal streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub starts: Vec<Location>,
}

impl Scenario {
    /// Parses the line-oriented format: `seed <u64>` then `agent_id row col` per line.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut seed = None;
        let mut starts = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |msg: &str| ScenarioError::Syntax {
                line: i + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "seed" {
                if fields.len() != 2 || seed.is_some() {
                    return Err(syntax("expected a single `seed <u64>` line"));
                }
                seed = Some(fields[1].parse().map_err(|_| syntax("seed is not a u64"))?);
                continue;
            }
            if fields.len() != 3 {
                return Err(syntax("expected `agent_id row col`"));
            }
            let nums: Result<Vec<i64>, _> = fields.iter().map(|f| f.parse::<i64>()).collect();
            let nums = nums.map_err(|_| syntax("non-integer field"))?;
            if nums[0] < 0 {
                return Err(syntax("negative agent id"));
            }
            let id = nums[0] as usize;
            if id != starts.len() {
                return Err(ScenarioError::AgentOrder {
                    expected: starts.len(),
                    found: id,
                });
            }
            let row = i32::try_from(nums[1]).map_err(|_| syntax("row out of range"))?;
            let col = i32::try_from(nums[2]).map_err(|_| syntax("col out of range"))?;
            starts.push(Location::new(row, col));
        }
        Ok(Scenario {
            seed: seed.ok_or(ScenarioError::MissingSeed)?,
            starts,
        })
    }

    /// Checks starts against a map: free cells, pairwise distinct.
    pub fn validate(&self, map: &GridMap) -> Result<(), ScenarioError> {
        let mut owner = std::collections::HashMap::new();
        for (agent, &at) in self.starts.iter().enumerate() {
            if !map.is_free(at) {
                return Err(ScenarioError::BlockedStart { agent, at });
            }
            if let Some(first) = owner.insert(at, agent) {
                return Err(ScenarioError::DuplicateStart {
                    first,
                    second: agent,
                    at,
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for (i, s) in self.starts.iter().enumerate() {
            out.push_str(&format!("{} {} {}\n", i, s.row, s.col));
        }
        out
    }
}
