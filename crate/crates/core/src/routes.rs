//! Scan routes: bijective orderings of an `H×W` grid and the four-route SS2D
//! operator built on them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{s6_forward, SsmVars};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    HFwd,
    HBwd,
    VFwd,
    VBwd,
    DFwd,
    DBwd,
    AdFwd,
    AdBwd,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 8] = [
        ScanDirection::HFwd,
        ScanDirection::HBwd,
        ScanDirection::VFwd,
        ScanDirection::VBwd,
        ScanDirection::DFwd,
        ScanDirection::DBwd,
        ScanDirection::AdFwd,
        ScanDirection::AdBwd,
    ];

    pub fn is_backward(self) -> bool {
        matches!(
            self,
            ScanDirection::HBwd | ScanDirection::VBwd | ScanDirection::DBwd | ScanDirection::AdBwd
        )
    }

    /// The forward direction this one reverses (itself when already forward).
    pub fn forward(self) -> ScanDirection {
        match self {
            ScanDirection::HBwd => ScanDirection::HFwd,
            ScanDirection::VBwd => ScanDirection::VFwd,
            ScanDirection::DBwd => ScanDirection::DFwd,
            ScanDirection::AdBwd => ScanDirection::AdFwd,
            d => d,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScanDirection::HFwd => "H-fwd",
            ScanDirection::HBwd => "H-bwd",
            ScanDirection::VFwd => "V-fwd",
            ScanDirection::VBwd => "V-bwd",
            ScanDirection::DFwd => "D-fwd",
            ScanDirection::DBwd => "D-bwd",
            ScanDirection::AdFwd => "AD-fwd",
            ScanDirection::AdBwd => "AD-bwd",
        }
    }
}

impl fmt::Display for ScanDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The four directions owned by one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RouteSet {
    /// Horizontal and vertical, both senses.
    Hv,
    /// Diagonal and anti-diagonal, both senses.
    Da,
}

impl RouteSet {
    pub const K: usize = 4;

    pub fn directions(self) -> [ScanDirection; 4] {
        use ScanDirection::*;
        match self {
            RouteSet::Hv => [HFwd, HBwd, VFwd, VBwd],
            RouteSet::Da => [DFwd, DBwd, AdFwd, AdBwd],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            RouteSet::Hv => "HV",
            RouteSet::Da => "DA",
        }
    }
}

impl fmt::Display for RouteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RouteSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HV" => Ok(RouteSet::Hv),
            "DA" => Ok(RouteSet::Da),
            _ => Err(Error::invalid(format!("unknown route set {s:?} (expected HV or DA)"))),
        }
    }
}

/// `order[step]` is the row-major cell index visited at `step`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutePermutation {
    height: usize,
    width: usize,
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl RoutePermutation {
    pub fn new(height: usize, width: usize, order: Vec<usize>) -> Result<Self> {
        let n = height * width;
        if order.len() != n {
            return Err(Error::invalid(format!("order of length {} for {height}×{width} grid", order.len())));
        }
        let mut inverse = vec![usize::MAX; n];
        for (step, &cell) in order.iter().enumerate() {
            if cell >= n || inverse[cell] != usize::MAX {
                return Err(Error::invalid(format!("order is not a bijection at cell {cell}")));
            }
            inverse[cell] = step;
        }
        Ok(RoutePermutation {
            height,
            width,
            order,
            inverse,
        })
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `inverse[cell]` is the step at which `cell` is visited.
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }
}

/// Cell ordering realizing `dir` on an `H×W` grid.
pub fn route_order(dir: ScanDirection, height: usize, width: usize) -> Result<RoutePermutation> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("zero grid extent {height}×{width}")));
    }
    let mut cells: Vec<(usize, usize)> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .collect();
    match dir.forward() {
        ScanDirection::HFwd => {}
        ScanDirection::VFwd => cells.sort_by_key(|&(r, c)| (c, r)),
        ScanDirection::DFwd => cells.sort_by_key(|&(r, c)| (r + c, r)),
        ScanDirection::AdFwd => cells.sort_by_key(|&(r, c)| (r + (width - 1 - c), r)),
        _ => unreachable!(),
    }
    let mut order: Vec<usize> = cells.into_iter().map(|(r, c)| r * width + c).collect();
    if dir.is_backward() {
        order.reverse();
    }
    RoutePermutation::new(height, width, order)
}

fn check_grid(tape: &Tape, perm: &RoutePermutation, grid: Var, op: &'static str) -> Result<usize> {
    match *tape.shape(grid) {
        [h, w, c] if (h, w) == perm.extents() => Ok(c),
        ref s => Err(Error::shape(op, &[perm.height, perm.width], s)),
    }
}

/// Flattens an `H×W×C` grid into an `L×C` sequence in route order.
pub fn apply_route(tape: &mut Tape, perm: &RoutePermutation, grid: Var) -> Result<Var> {
    let c = check_grid(tape, perm, grid, "apply_route")?;
    let flat = tape.reshape(grid, &[perm.order.len(), c])?;
    tape.gather_rows(flat, &perm.order)
}

/// Scatters an `L×C` route-ordered sequence back onto the `H×W×C` grid.
pub fn invert_route(tape: &mut Tape, perm: &RoutePermutation, seq: Var) -> Result<Var> {
    let c = match *tape.shape(seq) {
        [l, c] if l == perm.order.len() => c,
        ref s => return Err(Error::shape("invert_route", &[perm.order.len()], s)),
    };
    let flat = tape.gather_rows(seq, &perm.inverse)?;
    tape.reshape(flat, &[perm.height, perm.width, c])
}

/// Output of [`ss2d_forward`].
#[derive(Clone, Copy, Debug)]
pub struct Ss2dOutput {
    /// `Σ_k z_k`, `H×W×C`.
    pub out: Var,
    /// Grid-aligned per-route outputs `z_1..z_4`.
    pub route_feats: [Var; 4],
}

/// Scans `grid` along each route of `route_set` with that route's own
/// parameters and sums the grid-aligned results in route order.
pub fn ss2d_forward(
    tape: &mut Tape,
    route_set: RouteSet,
    params: &[SsmVars; 4],
    grid: Var,
) -> Result<Ss2dOutput> {
    let (h, w) = match *tape.shape(grid) {
        [h, w, _] => (h, w),
        ref s => return Err(Error::domain("ss2d_forward", format!("expected H×W×C grid, got {s:?}"))),
    };
    let mut feats = Vec::with_capacity(4);
    for (dir, p) in route_set.directions().into_iter().zip(params) {
        let perm = route_order(dir, h, w)?;
        let seq = apply_route(tape, &perm, grid)?;
        let y = s6_forward(tape, p, seq)?;
        feats.push(invert_route(tape, &perm, y)?);
    }
    let route_feats: [Var; 4] = feats.try_into().unwrap();
    let mut out = route_feats[0];
    for &z in &route_feats[1..] {
        out = tape.add(out, z)?;
    }
    Ok(Ss2dOutput { out, route_feats })
}
