use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUCCESS_RADIUS: f64 = 1.2;
pub const DEFAULT_HORIZON: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Room,
    Room81,
    Corridor,
    CorridorShort,
    Maze,
}

impl Layout {
    pub const ALL: [Layout; 5] = [
        Layout::Room,
        Layout::Room81,
        Layout::Corridor,
        Layout::CorridorShort,
        Layout::Maze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Room => "room",
            Layout::Room81 => "room81",
            Layout::Corridor => "corridor",
            Layout::CorridorShort => "corridor-short",
            Layout::Maze => "maze",
        }
    }

    pub fn spec(self) -> MazeSpec {
        match self {
            Layout::Room => open_room("room", 29),
            Layout::Room81 => open_room("room81", 81),
            Layout::Corridor => u_corridor("corridor", 60),
            Layout::CorridorShort => u_corridor("corridor-short", 30),
            Layout::Maze => maze(),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::UnknownLayout(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GoalRule {
    Fixed([f64; 2]),
    /// One of the listed points, uniformly.
    OneOf(Vec<[f64; 2]>),
}

/// A point maze on a unit occupancy grid.
///
/// Cell `(ix, iy)` covers `[ox + ix, ox + ix + 1) × [oy + iy, oy + iy + 1)`.
/// Everything outside the grid counts as wall.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeSpec {
    pub name: String,
    width: usize,
    height: usize,
    origin: [f64; 2],
    /// Row-major by `iy`, `true` for wall.
    walls: Vec<bool>,
    pub start: [f64; 2],
    pub goal: GoalRule,
    pub success_radius: f64,
    pub horizon: usize,
}

impl MazeSpec {
    /// Builds a spec from text rows, top row first. `#` is wall, anything
    /// else is free.
    pub fn from_rows(
        name: &str,
        rows: &[&str],
        origin: [f64; 2],
        start: [f64; 2],
        goal: GoalRule,
    ) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Invalid(format!(
                "layout `{name}` rows must be non-empty and equal length"
            )));
        }
        let mut walls = vec![false; width * height];
        for (r, row) in rows.iter().enumerate() {
            let iy = height - 1 - r;
            for (ix, ch) in row.bytes().enumerate() {
                walls[iy * width + ix] = ch == b'#';
            }
        }
        let spec = MazeSpec {
            name: name.to_string(),
            width,
            height,
            origin,
            walls,
            start,
            goal,
            success_radius: SUCCESS_RADIUS,
            horizon: DEFAULT_HORIZON,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let mut pts = vec![self.start];
        match &self.goal {
            GoalRule::Fixed(g) => pts.push(*g),
            GoalRule::OneOf(gs) => pts.extend(gs),
        }
        if let Some(p) = pts.iter().find(|p| !self.is_free(**p)) {
            return Err(Error::Invalid(format!(
                "layout `{}`: {p:?} is not free",
                self.name
            )));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::Invalid("success radius must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Bounding box `(lo, hi)` of the grid.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let [ox, oy] = self.origin;
        ([ox, oy], [ox + self.width as f64, oy + self.height as f64])
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = (p[0] - self.origin[0]).floor();
        let fy = (p[1] - self.origin[1]).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn is_wall_cell(&self, ix: usize, iy: usize) -> bool {
        ix >= self.width || iy >= self.height || self.walls[iy * self.width + ix]
    }

    pub fn is_free(&self, p: [f64; 2]) -> bool {
        matches!(self.cell_of(p), Some((ix, iy)) if !self.is_wall_cell(ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + ix as f64 + 0.5,
            self.origin[1] + iy as f64 + 0.5,
        ]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|iy| (0..self.width).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| !self.is_wall_cell(ix, iy))
            .collect()
    }

    /// Uniform point over free space: a uniform free cell, then a uniform
    /// point inside it.
    pub fn sample_free(&self, rng: &mut impl Rng) -> [f64; 2] {
        let free = self.free_cells();
        let (ix, iy) = free[rng.gen_range(0..free.len())];
        [
            self.origin[0] + ix as f64 + rng.gen::<f64>(),
            self.origin[1] + iy as f64 + rng.gen::<f64>(),
        ]
    }

    pub fn sample_goal(&self, rng: &mut impl Rng) -> [f64; 2] {
        match &self.goal {
            GoalRule::Fixed(g) => *g,
            GoalRule::OneOf(gs) => gs[rng.gen_range(0..gs.len())],
        }
    }

    /// Shortest 4-connected path length in cells between the cells holding
    /// `from` and `to`, if any.
    pub fn bfs_steps(&self, from: [f64; 2], to: [f64; 2]) -> Option<usize> {
        let (s, t) = (self.cell_of(from)?, self.cell_of(to)?);
        let mut dist = vec![usize::MAX; self.width * self.height];
        let mut queue = VecDeque::from([s]);
        dist[s.1 * self.width + s.0] = 0;
        while let Some((x, y)) = queue.pop_front() {
            let d = dist[y * self.width + x];
            if (x, y) == t {
                return Some(d);
            }
            let nbrs = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in nbrs {
                if !self.is_wall_cell(nx, ny) && dist[ny * self.width + nx] == usize::MAX {
                    dist[ny * self.width + nx] = d + 1;
                    queue.push_back((nx, ny));
                }
            }
        }
        None
    }
}

fn open_room(name: &str, side: usize) -> MazeSpec {
    let row = ".".repeat(side);
    let rows: Vec<&str> = vec![row.as_str(); side];
    let half = side as f64 / 2.0;
    let c = half - 0.5;
    let corners = vec![[-c, -c], [-c, c], [c, -c], [c, c]];
    MazeSpec::from_rows(
        name,
        &rows,
        [-half, -half],
        [0.0, 0.0],
        GoalRule::OneOf(corners),
    )
    .expect("valid room")
}

/// U-shaped corridor of unit width: a top run and a bottom run of `len`
/// cells joined by a 3-cell connector in the last column.
fn u_corridor(name: &str, len: usize) -> MazeSpec {
    let open = ".".repeat(len);
    let middle = format!("{}.", "#".repeat(len - 1));
    let rows = [open.as_str(), middle.as_str(), open.as_str()];
    MazeSpec::from_rows(
        name,
        &rows,
        [0.0, 0.0],
        [0.5, 2.5],
        GoalRule::Fixed([0.5, 0.5]),
    )
    .expect("valid corridor")
}

const MAZE_ROWS: [&str; 15] = [
    "###############",
    "#S..........#.#",
    "###########.#.#",
    "#.#.....#...#.#",
    "#.#.###.#.###.#",
    "#.#.#.#...#...#",
    "#.#.#.#####.#.#",
    "#.#.#.......#.#",
    "#.#.#.#####...#",
    "#...#...#...#.#",
    "#.#######.###.#",
    "#.#.....#...#.#",
    "#.#.###.###.#.#",
    "#...#.......#G#",
    "###############",
];

fn maze() -> MazeSpec {
    MazeSpec::from_rows(
        "maze",
        &MAZE_ROWS,
        [0.0, 0.0],
        [1.5, 13.5],
        GoalRule::Fixed([13.5, 1.5]),
    )
    .expect("valid maze")
}
