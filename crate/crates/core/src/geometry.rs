//! Observation regions and their geometry: thick sets, the
//! ball-containment condition, grid masks, and masked norms.
//!
//! A measurable set ω ⊂ ℝ^N is (γ, a)-thick when every translated cube
//! x + C, C = [0, a₁] × … × [0, a_N], meets ω in measure at least
//! γ·Π a_j. The check evaluates the intersection ratio over a
//! translation grid; for box-union and periodic representations the
//! per-translate measure is computed in closed form, so the only slack
//! is the grid spacing of the translations.

use crate::error::{Error, Result};
use crate::field::{GridSpec, GridState};

/// An axis-aligned box Π [min_j, max_j).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoxRegion {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::invalid("box bounds must have equal positive length"));
        }
        if min
            .iter()
            .zip(max.iter())
            .any(|(a, b)| !a.is_finite() || !b.is_finite() || a >= b)
        {
            return Err(Error::invalid("box bounds must be finite with min < max"));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn volume(&self) -> f64 {
        self.min
            .iter()
            .zip(self.max.iter())
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(self.max.iter()))
            .all(|(v, (a, b))| *v >= *a && *v < *b)
    }

    /// Intersection with another box, if nonempty.
    fn clip(&self, other: &BoxRegion) -> Option<BoxRegion> {
        let min: Vec<f64> = self
            .min
            .iter()
            .zip(other.min.iter())
            .map(|(a, b)| a.max(*b))
            .collect();
        let max: Vec<f64> = self
            .max
            .iter()
            .zip(other.max.iter())
            .map(|(a, b)| a.min(*b))
            .collect();
        if min.iter().zip(max.iter()).all(|(a, b)| a < b) {
            Some(BoxRegion { min, max })
        } else {
            None
        }
    }

    fn shifted(&self, offset: &[f64]) -> BoxRegion {
        BoxRegion {
            min: self
                .min
                .iter()
                .zip(offset.iter())
                .map(|(v, o)| v + o)
                .collect(),
            max: self
                .max
                .iter()
                .zip(offset.iter())
                .map(|(v, o)| v + o)
                .collect(),
        }
    }

    /// Erosion by a Euclidean ball of radius r: the box of centers whose
    /// ball fits inside this box. Empty when any side is shorter than 2r.
    fn eroded(&self, r: f64) -> Option<BoxRegion> {
        let min: Vec<f64> = self.min.iter().map(|v| v + r).collect();
        let max: Vec<f64> = self.max.iter().map(|v| v - r).collect();
        if min.iter().zip(max.iter()).all(|(a, b)| a <= b) {
            Some(BoxRegion { min, max })
        } else {
            None
        }
    }

    /// Euclidean distance from a point to this (closed) box.
    fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.min.iter().zip(self.max.iter()))
            .map(|(v, (a, b))| {
                if v < a {
                    (a - v) * (a - v)
                } else if v > b {
                    (v - b) * (v - b)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact Lebesgue measure of a union of boxes by coordinate compression.
fn union_measure(boxes: &[BoxRegion]) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    let n = boxes[0].dim();
    let mut coords: Vec<Vec<f64>> = vec![Vec::new(); n];
    for b in boxes {
        for a in 0..n {
            coords[a].push(b.min[a]);
            coords[a].push(b.max[a]);
        }
    }
    for c in coords.iter_mut() {
        c.sort_by(|x, y| x.partial_cmp(y).unwrap());
        c.dedup();
    }
    let cells: Vec<usize> = coords.iter().map(|c| c.len() - 1).collect();
    let total_cells: usize = cells.iter().product();
    let mut measure = 0.0;
    for flat in 0..total_cells {
        let mut rem = flat;
        let mut idx = vec![0usize; n];
        for a in (0..n).rev() {
            idx[a] = rem % cells[a];
            rem /= cells[a];
        }
        let mid: Vec<f64> = (0..n)
            .map(|a| 0.5 * (coords[a][idx[a]] + coords[a][idx[a] + 1]))
            .collect();
        if boxes.iter().any(|b| b.contains(&mid)) {
            measure += (0..n)
                .map(|a| coords[a][idx[a] + 1] - coords[a][idx[a]])
                .product::<f64>();
        }
    }
    measure
}

/// Geometric representation of an observation set.
#[derive(Debug, Clone)]
pub enum SetRepr {
    /// All of ℝ^N.
    Full,
    /// A finite union of axis-aligned boxes.
    Boxes(Vec<BoxRegion>),
    /// A pattern of boxes inside the fundamental cell [0, p_j) per axis,
    /// tiled over the period lattice.
    Periodic {
        periods: Vec<f64>,
        base: Vec<BoxRegion>,
    },
    /// Explicit cell indicator on a grid (approximate membership).
    Indicator { spec: GridSpec, inside: Vec<bool> },
}

/// An observation region with its claimed thickness parameters (γ, a).
#[derive(Debug, Clone)]
pub struct ThickSet {
    n: usize,
    repr: SetRepr,
    gamma: f64,
    a: Vec<f64>,
}

impl ThickSet {
    pub fn new(n: usize, repr: SetRepr, gamma: f64, a: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        if a.len() != n || a.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("cube sides must be positive, one per axis"));
        }
        let repr = match repr {
            SetRepr::Boxes(boxes) => {
                if boxes.iter().any(|b| b.dim() != n) {
                    return Err(Error::invalid("box dimension mismatch"));
                }
                SetRepr::Boxes(boxes)
            }
            SetRepr::Periodic { periods, base } => {
                if periods.len() != n || periods.iter().any(|&p| !(p > 0.0)) {
                    return Err(Error::invalid("periods must be positive, one per axis"));
                }
                if base.iter().any(|b| b.dim() != n) {
                    return Err(Error::invalid("base box dimension mismatch"));
                }
                let base = fold_into_cell(&base, &periods);
                SetRepr::Periodic { periods, base }
            }
            SetRepr::Indicator { spec, inside } => {
                if spec.dim() != n || inside.len() != spec.len() {
                    return Err(Error::invalid("indicator shape mismatch"));
                }
                SetRepr::Indicator { spec, inside }
            }
            SetRepr::Full => SetRepr::Full,
        };
        Ok(Self { n, repr, gamma, a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cube_sides(&self) -> &[f64] {
        &self.a
    }

    pub fn repr(&self) -> &SetRepr {
        &self.repr
    }

    /// Point membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.repr {
            SetRepr::Full => true,
            SetRepr::Boxes(boxes) => boxes.iter().any(|b| b.contains(x)),
            SetRepr::Periodic { periods, base } => {
                let folded: Vec<f64> = x
                    .iter()
                    .zip(periods.iter())
                    .map(|(v, p)| v.rem_euclid(*p))
                    .collect();
                base.iter().any(|b| b.contains(&folded))
            }
            SetRepr::Indicator { spec, inside } => {
                let m = spec.points_per_axis();
                let h = spec.spacing();
                let l = spec.half_width();
                let mut flat = 0usize;
                for &v in x {
                    if v < -l || v >= l {
                        return false;
                    }
                    let i = ((v + l) / h).floor() as usize;
                    flat = flat * m + i.min(m - 1);
                }
                inside[flat]
            }
        }
    }

    /// |ω ∩ (x + C)| with C = Π [0, a_j]: closed form for full, box and
    /// periodic representations; cell counting for indicators.
    pub fn cube_intersection_measure(&self, x: &[f64]) -> f64 {
        let cube = BoxRegion {
            min: x.to_vec(),
            max: x.iter().zip(self.a.iter()).map(|(v, s)| v + s).collect(),
        };
        match &self.repr {
            SetRepr::Full => cube.volume(),
            SetRepr::Boxes(boxes) => {
                let clipped: Vec<BoxRegion> = boxes.iter().filter_map(|b| b.clip(&cube)).collect();
                union_measure(&clipped)
            }
            SetRepr::Periodic { periods, base } => {
                let mut clipped = Vec::new();
                for off in lattice_offsets(&cube, periods) {
                    for b in base {
                        if let Some(c) = b.shifted(&off).clip(&cube) {
                            clipped.push(c);
                        }
                    }
                }
                union_measure(&clipped)
            }
            SetRepr::Indicator { spec, inside } => {
                let h = spec.spacing();
                let mut count = 0usize;
                for (flat, &is_in) in inside.iter().enumerate() {
                    if is_in && cube.contains(&spec.coordinate(flat)) {
                        count += 1;
                    }
                }
                count as f64 * h.powi(self.n as i32)
            }
        }
    }
}

/// Offsets k ⊙ p of period-lattice translates whose fundamental cell can
/// intersect the cube.
fn lattice_offsets(cube: &BoxRegion, periods: &[f64]) -> Vec<Vec<f64>> {
    let n = periods.len();
    let ranges: Vec<(i64, i64)> = (0..n)
        .map(|ax| {
            let lo = (cube.min[ax] / periods[ax]).floor() as i64 - 1;
            let hi = (cube.max[ax] / periods[ax]).ceil() as i64 + 1;
            (lo, hi)
        })
        .collect();
    let mut offsets: Vec<Vec<f64>> = vec![Vec::new()];
    for (ax, (lo, hi)) in ranges.iter().enumerate() {
        let mut next = Vec::new();
        for prefix in &offsets {
            for k in *lo..=*hi {
                let mut o = prefix.clone();
                o.push(k as f64 * periods[ax]);
                next.push(o);
            }
        }
        offsets = next;
    }
    offsets
}

/// Splits base boxes along period boundaries and folds them into the
/// fundamental cell [0, p_j) per axis.
fn fold_into_cell(boxes: &[BoxRegion], periods: &[f64]) -> Vec<BoxRegion> {
    let mut out: Vec<BoxRegion> = Vec::new();
    for b in boxes {
        let mut pieces = vec![b.clone()];
        for (ax, &p) in periods.iter().enumerate() {
            let mut next = Vec::new();
            for piece in pieces {
                let k = (piece.min[ax] / p).floor();
                let mut lo = piece.min[ax] - k * p;
                let mut hi = piece.max[ax] - k * p;
                if hi - lo >= p {
                    lo = 0.0;
                    hi = p;
                }
                if hi <= p {
                    let mut q = piece.clone();
                    q.min[ax] = lo;
                    q.max[ax] = hi;
                    next.push(q);
                } else {
                    let mut q1 = piece.clone();
                    q1.min[ax] = lo;
                    q1.max[ax] = p;
                    let mut q2 = piece.clone();
                    q2.min[ax] = 0.0;
                    q2.max[ax] = hi - p;
                    next.push(q1);
                    next.push(q2);
                }
            }
            pieces = next;
        }
        out.extend(pieces);
    }
    out
}

/// Result of a thickness verification.
#[derive(Debug, Clone)]
pub struct ThicknessReport {
    pub pass: bool,
    /// Minimum of |ω ∩ (x+C)| / Π a_j over the translation grid.
    pub min_ratio: f64,
    pub witness: Vec<f64>,
    /// Tolerance subtracted from γ (translation-grid slack 2/resolution).
    pub tol: f64,
    pub samples: usize,
}

/// Verifies (γ, a)-thickness over a translation grid in `window` with
/// per-axis spacing min_j(a_j)/resolution. The window must extend at
/// least one cube side per axis.
pub fn thickness_check(
    set: &ThickSet,
    window: &BoxRegion,
    resolution: usize,
) -> Result<ThicknessReport> {
    if window.dim() != set.dim() {
        return Err(Error::invalid("window dimension mismatch"));
    }
    if resolution < 64 {
        return Err(Error::invalid("resolution must be >= 64 samples per axis"));
    }
    let n = set.dim();
    for ax in 0..n {
        if window.max[ax] - window.min[ax] < set.a[ax] {
            return Err(Error::invalid(
                "window too small: must contain x + C for all tested x",
            ));
        }
    }
    let amin = set.a.iter().cloned().fold(f64::INFINITY, f64::min);
    let spacing = amin / resolution as f64;
    let counts: Vec<usize> = (0..n)
        .map(|ax| {
            let span = window.max[ax] - window.min[ax] - set.a[ax];
            (span / spacing).floor() as usize + 1
        })
        .collect();
    let volume: f64 = set.a.iter().product();

    let mut min_ratio = f64::INFINITY;
    let mut witness = window.min.clone();
    let total: usize = counts.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut x = vec![0.0f64; n];
        for ax in (0..n).rev() {
            let i = rem % counts[ax];
            rem /= counts[ax];
            x[ax] = window.min[ax] + i as f64 * spacing;
        }
        let ratio = set.cube_intersection_measure(&x) / volume;
        if ratio < min_ratio {
            min_ratio = ratio;
            witness = x;
        }
    }
    let tol = 2.0 / resolution as f64;
    Ok(ThicknessReport {
        pass: min_ratio >= set.gamma - tol,
        min_ratio,
        witness,
        tol,
        samples: total,
    })
}

/// Result of the ball-containment geometric condition check.
#[derive(Debug, Clone)]
pub struct GeometricConditionReport {
    pub pass: bool,
    /// Worst tested y: the one farthest from an admissible center y′
    /// (a point with B(y′, r) ⊂ ω).
    pub worst_y: Vec<f64>,
    pub worst_distance: f64,
    pub samples: usize,
}

/// Checks that every y in the window has a center y′ ∈ ω with
/// B(y′, r) ⊂ ω and |y − y′| < δ. Centers are sought in the erosion of
/// ω by r, computed per box (a sufficient criterion: balls spanning two
/// abutting boxes are not credited). `resolution` sets the y-grid
/// spacing to min(δ, r)/resolution per axis.
pub fn geometric_condition_check(
    set: &ThickSet,
    delta: f64,
    r: f64,
    window: &BoxRegion,
    resolution: usize,
) -> Result<GeometricConditionReport> {
    if !(delta > 0.0) || !(r > 0.0) {
        return Err(Error::invalid("delta and r must be positive"));
    }
    if window.dim() != set.dim() {
        return Err(Error::invalid("window dimension mismatch"));
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let n = set.dim();

    let eroded: Vec<BoxRegion> = match set.repr() {
        SetRepr::Full => {
            return Ok(GeometricConditionReport {
                pass: true,
                worst_y: window.min.clone(),
                worst_distance: 0.0,
                samples: 0,
            });
        }
        SetRepr::Boxes(boxes) => boxes.iter().filter_map(|b| b.eroded(r)).collect(),
        SetRepr::Periodic { base, .. } => base.iter().filter_map(|b| b.eroded(r)).collect(),
        SetRepr::Indicator { spec, inside } => {
            let mut cands = Vec::new();
            for (flat, &is_in) in inside.iter().enumerate() {
                if !is_in {
                    continue;
                }
                let c = spec.coordinate(flat);
                if ball_in_indicator(spec, inside, &c, r) {
                    // Degenerate box: the cell center as a point target.
                    cands.push(BoxRegion {
                        min: c.clone(),
                        max: c.iter().map(|v| v + f64::MIN_POSITIVE).collect(),
                    });
                }
            }
            cands
        }
    };

    let spacing = delta.min(r) / resolution as f64;
    let counts: Vec<usize> = (0..n)
        .map(|ax| ((window.max[ax] - window.min[ax]) / spacing).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();

    let periods = match set.repr() {
        SetRepr::Periodic { periods, .. } => Some(periods.clone()),
        _ => None,
    };

    let mut pass = true;
    let mut worst = (0.0f64, window.min.clone());
    for flat in 0..total {
        let mut rem = flat;
        let mut y = vec![0.0f64; n];
        for ax in (0..n).rev() {
            let i = rem % counts[ax];
            rem /= counts[ax];
            y[ax] = window.min[ax] + i as f64 * spacing;
        }
        let dist = distance_to_family(&y, &eroded, periods.as_deref());
        if dist > worst.0 {
            worst = (dist, y.clone());
        }
        if dist >= delta {
            pass = false;
        }
    }
    Ok(GeometricConditionReport {
        pass,
        worst_y: worst.1,
        worst_distance: worst.0,
        samples: total,
    })
}

fn ball_in_indicator(spec: &GridSpec, inside: &[bool], center: &[f64], r: f64) -> bool {
    // Cell-center criterion: every cell whose center lies within r of
    // the ball center must be inside.
    for (flat, &is_in) in inside.iter().enumerate() {
        if is_in {
            continue;
        }
        let c = spec.coordinate(flat);
        let d2: f64 = c
            .iter()
            .zip(center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2 < r * r {
            return false;
        }
    }
    true
}

fn distance_to_family(y: &[f64], boxes: &[BoxRegion], periods: Option<&[f64]>) -> f64 {
    if boxes.is_empty() {
        return f64::INFINITY;
    }
    match periods {
        None => boxes
            .iter()
            .map(|b| b.distance(y))
            .fold(f64::INFINITY, f64::min),
        Some(p) => {
            let n = y.len();
            let folded: Vec<f64> = y
                .iter()
                .zip(p.iter())
                .map(|(v, q)| v.rem_euclid(*q))
                .collect();
            // Neighboring period images suffice once y is folded.
            let mut offsets: Vec<Vec<f64>> = vec![Vec::new()];
            for ax in 0..n {
                let mut next = Vec::new();
                for prefix in &offsets {
                    for k in [-1i64, 0, 1] {
                        let mut o = prefix.clone();
                        o.push(k as f64 * p[ax]);
                        next.push(o);
                    }
                }
                offsets = next;
            }
            let mut best = f64::INFINITY;
            for off in &offsets {
                for b in boxes {
                    best = best.min(b.shifted(off).distance(&folded));
                }
            }
            best
        }
    }
}

/// A 0/1 cell indicator bound to a grid.
#[derive(Debug, Clone)]
pub struct GridMask {
    spec: GridSpec,
    inside: Vec<bool>,
}

impl GridMask {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn all_ones(spec: GridSpec) -> Self {
        let inside = vec![true; spec.len()];
        Self { spec, inside }
    }
}

/// Rasterizes an observation set on a grid: a cell belongs to the mask
/// when its center lies in ω.
pub fn mask(set: &ThickSet, spec: &GridSpec) -> Result<GridMask> {
    if set.dim() != spec.dim() {
        return Err(Error::invalid("set dimension does not match grid"));
    }
    let inside: Vec<bool> = (0..spec.len())
        .map(|flat| set.contains(&spec.coordinate(flat)))
        .collect();
    Ok(GridMask {
        spec: spec.clone(),
        inside,
    })
}

/// ‖u‖_{L²(ω)}: the discrete L² norm restricted to masked cells.
pub fn masked_l2_norm(state: &GridState, mask: &GridMask) -> Result<f64> {
    if state.spec() != &mask.spec {
        return Err(Error::invalid("state grid does not match mask grid"));
    }
    let w = state.spec().cell_volume();
    let sum: f64 = state
        .values()
        .iter()
        .zip(mask.inside.iter())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v * v)
        .sum();
    Ok((w * sum).sqrt())
}

/// Parses the textual observation-set format: an optional line
/// `periodic p1 [p2 …]` followed by lines `box x1min x1max [x2min x2max …]`.
pub fn parse_set_text(text: &str, n: usize) -> Result<SetRepr> {
    let mut periods: Option<Vec<f64>> = None;
    let mut boxes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let kind = fields.next().unwrap();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {:?}", lineno + 1, f)))
            })
            .collect::<Result<_>>()?;
        match kind {
            "periodic" => {
                if values.len() != n {
                    return Err(Error::Format(format!(
                        "line {}: periodic expects {} periods",
                        lineno + 1,
                        n
                    )));
                }
                periods = Some(values);
            }
            "box" => {
                if values.len() != 2 * n {
                    return Err(Error::Format(format!(
                        "line {}: box expects {} bounds",
                        lineno + 1,
                        2 * n
                    )));
                }
                let min: Vec<f64> = (0..n).map(|a| values[2 * a]).collect();
                let max: Vec<f64> = (0..n).map(|a| values[2 * a + 1]).collect();
                boxes.push(BoxRegion::new(min, max)?);
            }
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown directive {:?}",
                    lineno + 1,
                    other
                )));
            }
        }
    }
    Ok(match periods {
        Some(periods) => SetRepr::Periodic {
            periods,
            base: boxes,
        },
        None => SetRepr::Boxes(boxes),
    })
}
