//! Tile maps and their lane-centerline geometry.
//!
//! Grid cell `(gx, gy)` covers `[gx, gx+1) × [gy, gy+1)` tile lengths in the
//! map frame; `gy` grows towards +y. In map documents the first row listed is
//! the top of the map (largest `gy`), so the text reads like a picture.
//!
//! Edges are numbered E=0, N=1, W=2, S=3. At rotation 0 a straight opens
//! E/W, a curve opens E/N, a three-way opens E/N/W and a four-way opens all
//! four; rotation turns the openings counter-clockwise. Traffic keeps right:
//! each lane centerline is offset a quarter tile to the right of the road
//! axis, and turns are circular arcs around the tile corner.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pose::{normalize_angle, Pose2};
use super::SimError;

pub const DEFAULT_TILE_SIZE: f64 = 0.6;
pub const LANE_OFFSET_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileKind {
    Straight,
    Curve,
    ThreeWay,
    FourWay,
    Empty,
}

impl TileKind {
    fn base_openings(self) -> &'static [u8] {
        match self {
            TileKind::Straight => &[0, 2],
            TileKind::Curve => &[0, 1],
            TileKind::ThreeWay => &[0, 1, 2],
            TileKind::FourWay => &[0, 1, 2, 3],
            TileKind::Empty => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TileKind::Straight => "straight",
            TileKind::Curve => "curve",
            TileKind::ThreeWay => "three_way",
            TileKind::FourWay => "four_way",
            TileKind::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub kind: TileKind,
    /// Quarter turns counter-clockwise, 0..=3.
    pub rotation: u8,
}

impl Tile {
    pub fn is_drivable(&self) -> bool {
        self.kind != TileKind::Empty
    }

    pub fn open_edges(&self) -> Vec<u8> {
        self.kind
            .base_openings()
            .iter()
            .map(|e| (e + self.rotation) % 4)
            .collect()
    }

    pub fn is_open(&self, edge: u8) -> bool {
        self.open_edges().contains(&edge)
    }
}

impl FromStr for Tile {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::InvalidMap(format!("bad tile {s:?}, expected kind/rotation"));
        let (kind, rot) = s.split_once('/').unwrap_or((s, "0"));
        let kind = match kind.trim() {
            "straight" => TileKind::Straight,
            "curve" => TileKind::Curve,
            "three_way" => TileKind::ThreeWay,
            "four_way" => TileKind::FourWay,
            "empty" => TileKind::Empty,
            _ => return Err(bad()),
        };
        let rotation = match rot.trim() {
            "0" => 0,
            "90" => 1,
            "180" => 2,
            "270" => 3,
            _ => return Err(bad()),
        };
        Ok(Tile { kind, rotation })
    }
}

impl fmt::Display for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind.name(), self.rotation as u32 * 90)
    }
}

fn edge_dir(edge: u8) -> [f64; 2] {
    match edge % 4 {
        0 => [1.0, 0.0],
        1 => [0.0, 1.0],
        2 => [-1.0, 0.0],
        _ => [0.0, -1.0],
    }
}

fn right_of(u: [f64; 2]) -> [f64; 2] {
    [u[1], -u[0]]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Lane through one tile, entering across `entry` and leaving across `exit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LaneId {
    pub gx: usize,
    pub gy: usize,
    pub entry: u8,
    pub exit: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaneShape {
    Line {
        start: [f64; 2],
        dir: [f64; 2],
        length: f64,
    },
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        /// +1 counter-clockwise (left turn), -1 clockwise (right turn).
        turn: f64,
    },
}

impl LaneShape {
    pub fn length(&self) -> f64 {
        match *self {
            LaneShape::Line { length, .. } => length,
            LaneShape::Arc { radius, .. } => radius * FRAC_PI_2,
        }
    }

    pub fn point_at(&self, s: f64) -> ([f64; 2], f64) {
        match *self {
            LaneShape::Line { start, dir, .. } => (
                [start[0] + s * dir[0], start[1] + s * dir[1]],
                dir[1].atan2(dir[0]),
            ),
            LaneShape::Arc {
                center,
                radius,
                start_angle,
                turn,
            } => {
                let a = start_angle + turn * s / radius;
                (
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()],
                    normalize_angle(a + turn * FRAC_PI_2),
                )
            }
        }
    }

    /// Nearest point on the segment: `(s_local, lateral d, tangent heading, distance)`.
    fn nearest(&self, p: [f64; 2]) -> (f64, f64, f64, f64) {
        match *self {
            LaneShape::Line { start, dir, length } => {
                let rel = [p[0] - start[0], p[1] - start[1]];
                let along = (rel[0] * dir[0] + rel[1] * dir[1]).clamp(0.0, length);
                let q = [start[0] + along * dir[0], start[1] + along * dir[1]];
                let w = [p[0] - q[0], p[1] - q[1]];
                (along, cross(dir, w), dir[1].atan2(dir[0]), w[0].hypot(w[1]))
            }
            LaneShape::Arc {
                center,
                radius,
                start_angle,
                turn,
            } => {
                let rel = [p[0] - center[0], p[1] - center[1]];
                let rho = rel[0].hypot(rel[1]);
                let beta = rel[1].atan2(rel[0]);
                let swept = turn * normalize_angle(beta - start_angle);
                let swept = if (0.0..=FRAC_PI_2).contains(&swept) {
                    swept
                } else {
                    // outside the quarter turn: snap to the nearer end
                    let to_end = normalize_angle(swept - FRAC_PI_2).abs();
                    if swept.abs() <= to_end {
                        0.0
                    } else {
                        FRAC_PI_2
                    }
                };
                let a = start_angle + turn * swept;
                let q = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
                // left of travel is towards the centre on a left turn
                let d = turn * (radius - rho);
                (radius * swept, d, normalize_angle(a + turn * FRAC_PI_2), dist)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub shape: LaneShape,
    pub successor: Option<usize>,
    /// Arc-length of the lane start along its lane cycle.
    pub offset: f64,
    pub cycle_length: f64,
}

/// Position relative to the lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePoint {
    /// Lateral offset, positive to the left of the driving direction.
    pub d: f64,
    /// Heading error against the lane direction.
    pub phi: f64,
    /// Arc length along the lane cycle, in `[0, cycle_length)`.
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneProjection {
    pub point: LanePoint,
    pub lane: LaneId,
    pub cycle_length: f64,
}

/// Text form of a map: `tile_size`, optional `origin = [x, y, theta]`, and
/// `tiles`, a list of rows (top row first) of `"kind/rotation"` strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDoc {
    #[serde(default = "default_tile_size")]
    pub tile_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    pub tiles: Vec<Vec<String>>,
}

fn default_tile_size() -> f64 {
    DEFAULT_TILE_SIZE
}

#[derive(Debug, Clone)]
pub struct TileMap {
    rows: usize,
    cols: usize,
    tile_size: f64,
    /// Pose of the map frame in the world.
    origin: Pose2,
    /// Indexed `[gy][gx]`.
    tiles: Vec<Vec<Tile>>,
    lanes: Vec<Lane>,
    lanes_by_tile: BTreeMap<(usize, usize), Vec<usize>>,
}

impl TileMap {
    /// Builds and validates a map. `rows_top_first[0]` is the top row.
    pub fn new(tile_size: f64, origin: Pose2, rows_top_first: Vec<Vec<Tile>>) -> Result<Self, SimError> {
        if !(tile_size > 0.0 && tile_size.is_finite()) {
            return Err(SimError::InvalidMap(format!("tile_size must be positive, got {tile_size}")));
        }
        let rows = rows_top_first.len();
        let cols = rows_top_first.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(SimError::InvalidMap("map has no tiles".into()));
        }
        if rows_top_first.iter().any(|r| r.len() != cols) {
            return Err(SimError::InvalidMap("rows have different lengths".into()));
        }
        let mut tiles = rows_top_first;
        tiles.reverse();
        let mut map = Self {
            rows,
            cols,
            tile_size,
            origin,
            tiles,
            lanes: Vec::new(),
            lanes_by_tile: BTreeMap::new(),
        };
        map.check_connectivity()?;
        map.build_lanes();
        Ok(map)
    }

    pub fn from_doc(doc: &MapDoc) -> Result<Self, SimError> {
        let rows = doc
            .tiles
            .iter()
            .map(|r| r.iter().map(|s| s.parse()).collect::<Result<Vec<Tile>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let origin = doc.origin.map_or(Pose2::identity(), |o| Pose2::new(o[0], o[1], o[2]));
        Self::new(doc.tile_size, origin, rows)
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let doc: MapDoc = toml::from_str(text).map_err(|e| SimError::InvalidMap(e.to_string()))?;
        Self::from_doc(&doc)
    }

    pub fn to_doc(&self) -> MapDoc {
        let tiles = self
            .tiles
            .iter()
            .rev()
            .map(|r| r.iter().map(Tile::to_string).collect())
            .collect();
        let o = self.origin;
        MapDoc {
            tile_size: self.tile_size,
            origin: (o != Pose2::identity()).then_some([o.x, o.y, o.theta]),
            tiles,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tile_size(&self) -> f64 {
        self.tile_size
    }

    pub fn origin(&self) -> Pose2 {
        self.origin
    }

    /// Same map placed at a different world pose.
    pub fn with_origin(&self, origin: Pose2) -> Self {
        Self {
            origin,
            ..self.clone()
        }
    }

    pub fn tile(&self, gx: usize, gy: usize) -> Option<Tile> {
        self.tiles.get(gy).and_then(|r| r.get(gx)).copied()
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn diagonal(&self) -> f64 {
        (self.rows as f64 * self.tile_size).hypot(self.cols as f64 * self.tile_size)
    }

    pub fn drivable_tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |gy| {
            (0..self.cols).filter_map(move |gx| self.tiles[gy][gx].is_drivable().then_some((gx, gy)))
        })
    }

    /// Tile centre in world coordinates.
    pub fn tile_center(&self, gx: usize, gy: usize) -> [f64; 2] {
        self.origin.transform_point([
            (gx as f64 + 0.5) * self.tile_size,
            (gy as f64 + 0.5) * self.tile_size,
        ])
    }

    /// World pose of the lane centerline at arc length `s` along `lane`.
    pub fn lane_pose(&self, lane: usize, s: f64) -> Pose2 {
        let (p, heading) = self.lanes[lane].shape.point_at(s);
        self.origin.compose(&Pose2::new(p[0], p[1], heading))
    }

    pub fn lane_index(&self, id: LaneId) -> Option<usize> {
        self.lanes_by_tile
            .get(&(id.gx, id.gy))
            .and_then(|v| v.iter().copied().find(|&i| self.lanes[i].id == id))
    }

    fn neighbor(&self, gx: usize, gy: usize, edge: u8) -> Option<(usize, usize)> {
        let (dx, dy) = match edge {
            0 => (1i64, 0i64),
            1 => (0, 1),
            2 => (-1, 0),
            _ => (0, -1),
        };
        let nx = gx as i64 + dx;
        let ny = gy as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < self.cols && (ny as usize) < self.rows)
            .then_some((nx as usize, ny as usize))
    }

    fn check_connectivity(&self) -> Result<(), SimError> {
        let mut any = false;
        for gy in 0..self.rows {
            for gx in 0..self.cols {
                let tile = self.tiles[gy][gx];
                if !tile.is_drivable() {
                    continue;
                }
                any = true;
                for edge in tile.open_edges() {
                    let ok = self
                        .neighbor(gx, gy, edge)
                        .and_then(|(nx, ny)| self.tile(nx, ny))
                        .is_some_and(|n| n.is_open((edge + 2) % 4));
                    if !ok {
                        return Err(SimError::DisconnectedLane {
                            row: self.rows - 1 - gy,
                            col: gx,
                            edge: ["east", "north", "west", "south"][edge as usize],
                        });
                    }
                }
            }
        }
        if any {
            Ok(())
        } else {
            Err(SimError::InvalidMap("no drivable tile".into()))
        }
    }

    fn lane_shape(&self, gx: usize, gy: usize, entry: u8, exit: u8) -> LaneShape {
        let ts = self.tile_size;
        let c = [(gx as f64 + 0.5) * ts, (gy as f64 + 0.5) * ts];
        let u = edge_dir((entry + 2) % 4);
        let v = edge_dir(exit);
        let off = LANE_OFFSET_FRACTION * ts;
        let r = right_of(u);
        let start = [
            c[0] - 0.5 * ts * u[0] + off * r[0],
            c[1] - 0.5 * ts * u[1] + off * r[1],
        ];
        if u == v {
            return LaneShape::Line { start, dir: u, length: ts };
        }
        let center = [
            c[0] - 0.5 * ts * u[0] + 0.5 * ts * v[0],
            c[1] - 0.5 * ts * u[1] + 0.5 * ts * v[1],
        ];
        let turn = if cross(u, v) > 0.0 { 1.0 } else { -1.0 };
        let rel = [start[0] - center[0], start[1] - center[1]];
        LaneShape::Arc {
            center,
            radius: rel[0].hypot(rel[1]),
            start_angle: rel[1].atan2(rel[0]),
            turn,
        }
    }

    fn build_lanes(&mut self) {
        for gy in 0..self.rows {
            for gx in 0..self.cols {
                let open = self.tiles[gy][gx].open_edges();
                for &entry in &open {
                    for &exit in &open {
                        if entry == exit {
                            continue;
                        }
                        let id = LaneId { gx, gy, entry, exit };
                        let shape = self.lane_shape(gx, gy, entry, exit);
                        self.lanes_by_tile.entry((gx, gy)).or_default().push(self.lanes.len());
                        self.lanes.push(Lane {
                            id,
                            shape,
                            successor: None,
                            offset: 0.0,
                            cycle_length: 0.0,
                        });
                    }
                }
            }
        }
        // Each lane continues into the neighbouring tile, going straight
        // through intersections when possible, otherwise turning right.
        for i in 0..self.lanes.len() {
            let id = self.lanes[i].id;
            let Some((nx, ny)) = self.neighbor(id.gx, id.gy, id.exit) else {
                continue;
            };
            let entry = (id.exit + 2) % 4;
            let preferences = [id.exit, (id.exit + 3) % 4, (id.exit + 1) % 4];
            self.lanes[i].successor = preferences.iter().find_map(|&exit| {
                self.lane_index(LaneId { gx: nx, gy: ny, entry, exit })
            });
        }
        self.assign_cycle_offsets();
    }

    /// Every lane's successor chain ends in a cycle; cycle lanes get arc
    /// offsets from the cycle's smallest lane, feeder lanes count backwards
    /// from where they join.
    fn assign_cycle_offsets(&mut self) {
        let n = self.lanes.len();
        let mut done = vec![false; n];
        for start in 0..n {
            if done[start] {
                continue;
            }
            let mut path = Vec::new();
            let mut pos_in_path = BTreeMap::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                if done[i] || pos_in_path.contains_key(&i) {
                    break;
                }
                pos_in_path.insert(i, path.len());
                path.push(i);
                cur = self.lanes[i].successor;
            }
            let mut tail_end = path.len();
            if let Some(join) = cur.filter(|i| pos_in_path.contains_key(i)) {
                let cycle: Vec<usize> = path[pos_in_path[&join]..].to_vec();
                let first = *cycle.iter().min_by_key(|&&i| self.lanes[i].id).unwrap();
                let k0 = cycle.iter().position(|&i| i == first).unwrap();
                let total: f64 = cycle.iter().map(|&i| self.lanes[i].shape.length()).sum();
                let mut acc = 0.0;
                for k in 0..cycle.len() {
                    let i = cycle[(k0 + k) % cycle.len()];
                    self.lanes[i].offset = acc;
                    self.lanes[i].cycle_length = total;
                    acc += self.lanes[i].shape.length();
                    done[i] = true;
                }
                tail_end = pos_in_path[&join];
            }
            // feeders (or a dead-end chain, which a validated map cannot have)
            let (mut offset, mut total) = match cur {
                Some(j) if done[j] => (self.lanes[j].offset, self.lanes[j].cycle_length),
                _ => (0.0, 0.0),
            };
            for &i in path[..tail_end].iter().rev() {
                let len = self.lanes[i].shape.length();
                if total <= 0.0 {
                    total = path[..tail_end].iter().map(|&k| self.lanes[k].shape.length()).sum();
                    offset = total;
                }
                offset = (offset - len).rem_euclid(total);
                self.lanes[i].offset = offset;
                self.lanes[i].cycle_length = total;
                done[i] = true;
            }
        }
    }

    /// Projects a world pose onto the lane the robot is driving in.
    pub fn project(&self, pose: &Pose2) -> Result<LaneProjection, SimError> {
        let local = self.origin.between(pose);
        let gx = (local.x / self.tile_size).floor();
        let gy = (local.y / self.tile_size).floor();
        let off_road = || SimError::NotOnRoad { x: pose.x, y: pose.y };
        if gx < 0.0 || gy < 0.0 || gx >= self.cols as f64 || gy >= self.rows as f64 {
            return Err(off_road());
        }
        let (gx, gy) = (gx as usize, gy as usize);
        let candidates = self.lanes_by_tile.get(&(gx, gy)).ok_or_else(off_road)?;
        let mut best: Option<(bool, f64, usize, f64, f64, f64)> = None;
        for &i in candidates {
            let (s_local, d, heading, dist) = self.lanes[i].shape.nearest([local.x, local.y]);
            let phi = normalize_angle(local.theta - heading);
            let aligned = phi.abs() < FRAC_PI_2;
            let better = match best {
                None => true,
                Some((b_al, b_dist, ..)) => (aligned && !b_al) || (aligned == b_al && dist < b_dist - 1e-12),
            };
            if better {
                best = Some((aligned, dist, i, s_local, d, phi));
            }
        }
        let (_, _, i, s_local, d, phi) = best.ok_or_else(off_road)?;
        let lane = &self.lanes[i];
        let s = if lane.cycle_length > 0.0 {
            (lane.offset + s_local).rem_euclid(lane.cycle_length)
        } else {
            s_local
        };
        Ok(LaneProjection {
            point: LanePoint { d, phi, s },
            lane: lane.id,
            cycle_length: lane.cycle_length,
        })
    }
}

/// Lane-relative coordinates of `pose`.
pub fn project_to_lane(pose: &Pose2, map: &TileMap) -> Result<LanePoint, SimError> {
    map.project(pose).map(|p| p.point)
}

/// Centerline sample points every `step` metres, for coverage checks.
pub fn centerline_samples(map: &TileMap, step: f64) -> Vec<Pose2> {
    let mut out = Vec::new();
    for i in 0..map.lanes().len() {
        let len = map.lanes()[i].shape.length();
        let n = (len / step).ceil().max(1.0) as usize;
        for k in 0..=n {
            out.push(map.lane_pose(i, len * k as f64 / n as f64));
        }
    }
    out
}
