//! Spatial voting grid and consensus extraction.
//!
//! Every sampled rect adds one vote to each cell it covers. The consensus is
//! the largest connected component of cells holding the maximum vote count.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Connectivity, ImageSize, PixelRect, PointMode, RcConfig, Sample};

/// Per-cell vote counts, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteGrid {
    size: ImageSize,
    counts: Vec<u32>,
    k: usize,
}

impl VoteGrid {
    pub fn size(&self) -> ImageSize {
        self.size
    }

    /// Number of rects that voted.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.counts[y as usize * self.size.width() as usize + x as usize]
    }

    pub fn total_votes(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Summed-area table with a zero border, `(W+1) × (H+1)`.
    pub fn integral(&self) -> Integral {
        let w = self.size.width() as usize;
        let h = self.size.height() as usize;
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += self.counts[y * w + x] as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Integral { stride, table }
    }
}

/// Summed-area table over a [`VoteGrid`] for O(1) rect sums.
pub struct Integral {
    stride: usize,
    table: Vec<u64>,
}

impl Integral {
    pub fn rect_sum(&self, r: &PixelRect) -> u64 {
        if r.is_empty() {
            return 0;
        }
        let at = |x: u32, y: u32| self.table[y as usize * self.stride + x as usize];
        at(r.x2, r.y2) + at(r.x1, r.y1) - at(r.x1, r.y2) - at(r.x2, r.y1)
    }
}

fn check_bounds(rects: &[PixelRect], size: ImageSize) -> Result<()> {
    match rects.iter().find(|r| !r.fits(size)) {
        Some(&rect) => Err(Error::OutOfBounds { rect, size }),
        None => Ok(()),
    }
}

/// Builds the grid with a 2D difference array in `O(K + H·W)`.
pub fn build_vote_grid(rects: &[PixelRect], size: ImageSize) -> Result<VoteGrid> {
    check_bounds(rects, size)?;
    let w = size.width() as usize;
    let h = size.height() as usize;
    let stride = w + 1;
    let mut diff = vec![0i64; stride * (h + 1)];
    for r in rects.iter().filter(|r| !r.is_empty()) {
        let (x1, y1, x2, y2) = (r.x1 as usize, r.y1 as usize, r.x2 as usize, r.y2 as usize);
        diff[y1 * stride + x1] += 1;
        diff[y1 * stride + x2] -= 1;
        diff[y2 * stride + x1] -= 1;
        diff[y2 * stride + x2] += 1;
    }
    // Row-wise then column-wise prefix sums turn corner marks into coverage.
    for y in 0..h {
        let row = &mut diff[y * stride..(y + 1) * stride];
        for x in 1..w {
            row[x] += row[x - 1];
        }
    }
    for y in 1..h {
        for x in 0..w {
            diff[y * stride + x] += diff[(y - 1) * stride + x];
        }
    }
    let mut counts = Vec::with_capacity(w * h);
    for y in 0..h {
        counts.extend(diff[y * stride..y * stride + w].iter().map(|&v| v as u32));
    }
    Ok(VoteGrid {
        size,
        counts,
        k: rects.len(),
    })
}

/// Reference builder that increments every covered cell of every rect.
pub fn build_vote_grid_naive(rects: &[PixelRect], size: ImageSize) -> Result<VoteGrid> {
    check_bounds(rects, size)?;
    let w = size.width() as usize;
    let mut counts = vec![0u32; size.cells()];
    for r in rects {
        for y in r.y1..r.y2 {
            for x in r.x1..r.x2 {
                counts[y as usize * w + x as usize] += 1;
            }
        }
    }
    Ok(VoteGrid {
        size,
        counts,
        k: rects.len(),
    })
}

/// Highest count anywhere on the grid; 0 when nothing voted.
pub fn max_vote(grid: &VoteGrid) -> u32 {
    grid.counts.iter().copied().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRegion {
    pub v_max: u32,
    /// Member cells in row-major order.
    pub cells: Vec<(u32, u32)>,
    pub area: u64,
    pub bbox: PixelRect,
    pub center: (f64, f64),
    pub centroid: (f64, f64),
}

impl ConsensusRegion {
    pub fn point(&self, mode: PointMode) -> (f64, f64) {
        match mode {
            PointMode::BboxCenter => self.center,
            PointMode::Centroid => self.centroid,
        }
    }
}

const FOUR: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
const EIGHT: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Largest connected component of max-vote cells.
///
/// Components are discovered in row-major scan order and only a strictly
/// larger one replaces the current best, so equal-area ties go to the
/// component whose first cell (min y, then min x) comes earliest.
pub fn extract_consensus(
    grid: &VoteGrid,
    connectivity: Connectivity,
) -> Result<ConsensusRegion> {
    let v_max = max_vote(grid);
    if v_max == 0 {
        return Err(Error::NoConsensus);
    }
    let w = grid.size.width() as usize;
    let h = grid.size.height() as usize;
    let offsets: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    };

    let mut visited = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut best: Option<Vec<usize>> = None;

    for start in 0..w * h {
        if visited[start] || grid.counts[start] != v_max {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut component = Vec::new();
        while let Some(idx) = queue.pop_front() {
            component.push(idx);
            let (x, y) = ((idx % w) as i64, (idx / w) as i64);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if !visited[n] && grid.counts[n] == v_max {
                    visited[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if best.as_ref().is_none_or(|b| component.len() > b.len()) {
            best = Some(component);
        }
    }

    let mut members = best.expect("v_max >= 1 implies at least one component");
    members.sort_unstable();
    Ok(region_from_cells(v_max, &members, w))
}

fn region_from_cells(v_max: u32, members: &[usize], w: usize) -> ConsensusRegion {
    let cells: Vec<(u32, u32)> = members
        .iter()
        .map(|&i| ((i % w) as u32, (i / w) as u32))
        .collect();
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for &(x, y) in &cells {
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x + 1);
        y2 = y2.max(y + 1);
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
    }
    let n = cells.len() as f64;
    let bbox = PixelRect::new(x1, y1, x2, y2);
    ConsensusRegion {
        v_max,
        area: cells.len() as u64,
        center: bbox.center(),
        centroid: (sx / n, sy / n),
        bbox,
        cells,
    }
}

/// Consensus over rects, voting only inside the union bounding box.
///
/// Cells outside every rect hold zero votes and can never join a max-vote
/// component, so the result equals [`extract_consensus`] on the full grid.
pub fn consensus_of_rects(
    rects: &[PixelRect],
    size: ImageSize,
    connectivity: Connectivity,
) -> Result<ConsensusRegion> {
    check_bounds(rects, size)?;
    let mut live = rects.iter().filter(|r| !r.is_empty()).peekable();
    if live.peek().is_none() {
        return Err(Error::NoConsensus);
    }
    let window = live.fold(
        PixelRect::new(u32::MAX, u32::MAX, 0, 0),
        |w, r| PixelRect::new(w.x1.min(r.x1), w.y1.min(r.y1), w.x2.max(r.x2), w.y2.max(r.y2)),
    );
    let local_size = ImageSize::new(window.x2 - window.x1, window.y2 - window.y1)?;
    let shifted: Vec<PixelRect> = rects
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| PixelRect::new(r.x1 - window.x1, r.y1 - window.y1, r.x2 - window.x1, r.y2 - window.y1))
        .collect();
    let local = extract_consensus(&build_vote_grid(&shifted, local_size)?, connectivity)?;
    let (dx, dy) = (window.x1, window.y1);
    let cells: Vec<(u32, u32)> = local.cells.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
    let bbox = PixelRect::new(local.bbox.x1 + dx, local.bbox.y1 + dy, local.bbox.x2 + dx, local.bbox.y2 + dy);
    Ok(ConsensusRegion {
        v_max: local.v_max,
        area: local.area,
        center: bbox.center(),
        centroid: (local.centroid.0 + dx as f64, local.centroid.1 + dy as f64),
        bbox,
        cells,
    })
}

/// Vote over the samples' effective rects and return the consensus region.
pub fn gui_rc(samples: &[Sample], config: &RcConfig, size: ImageSize) -> Result<ConsensusRegion> {
    if samples.is_empty() {
        return Err(Error::NoConsensus);
    }
    let rects: Vec<PixelRect> = samples.iter().map(|s| s.rect).collect();
    consensus_of_rects(&rects, size, config.connectivity)
}

/// Parses raw texts and runs [`gui_rc`] on them.
pub fn gui_rc_texts<S: AsRef<str>>(
    texts: &[S],
    config: &RcConfig,
    size: ImageSize,
) -> Result<ConsensusRegion> {
    let samples: Vec<Sample> = texts
        .iter()
        .map(|t| Sample::from_text(t.as_ref(), config.alpha, size))
        .collect();
    gui_rc(&samples, config, size)
}

/// Binary PGM (P5) bytes with counts scaled linearly so `v_max` maps to 255.
pub fn heatmap_pgm(grid: &VoteGrid) -> Vec<u8> {
    let v_max = max_vote(grid) as u64;
    let mut out = format!("P5\n{} {}\n255\n", grid.size.width(), grid.size.height()).into_bytes();
    out.extend(grid.counts.iter().map(|&c| {
        if v_max == 0 {
            0u8
        } else {
            ((c as u64 * 255 + v_max / 2) / v_max) as u8
        }
    }));
    out
}

/// Writes [`heatmap_pgm`] to `path` via a temp file and rename.
pub fn render_heatmap(grid: &VoteGrid, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, |f| f.write_all(&heatmap_pgm(grid)))
}
