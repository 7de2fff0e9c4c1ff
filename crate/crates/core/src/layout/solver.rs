//! Deterministic anchor-centred layout solver.
//!
//! Stages, in order:
//! 1. contradiction check (cycles in the horizontal order, vertical order or
//!    containment relations make the instance infeasible);
//! 2. heuristic placement: the anchor's root at the configured target, other
//!    roots placed next to their constrained neighbours in BFS order or on a
//!    spiral, contained objects on a grid inside their container;
//! 3. local repair of violated constraints, then push-apart of unintended
//!    overlaps without increasing the number of violated constraints;
//! 4. if anything is still violated, the layout is blended toward a reference
//!    layout that satisfies every constraint by construction (concentric boxes
//!    ordered by rank, nested by containment depth). All constraints are
//!    convex in box coordinates, so bisection on the blend weight finds the
//!    heuristic-closest feasible point on that segment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConstraintKind, LayoutConfig, LayoutConstraint, LayoutError, LayoutOutcome};
use crate::graph::{select_anchor, SceneGraph};
use crate::model::{BoundingBox, Diagnostic, DiagnosticCode, ObjectCategory, SceneObject};

/// Upper bound on objects per layout; keeps the reference layout's rank
/// spacing above the micro-unit rounding error.
pub const MAX_LAYOUT_OBJECTS: usize = 128;

const MIN_SIZE: f64 = 0.0101;
const GAP: f64 = 0.02;
const CELL_GAP: f64 = 0.04;
const MAX_CONTAINER: f64 = 0.96;
const ROOT_AREA_SHARE: f64 = 0.6;
const MIN_CROWD_SCALE: f64 = 0.35;
const SEPARATION_SLACK: f64 = 1e-3;
const CANVAS_SLACK: f64 = 1e-9;
const ORDER_MARGIN: f64 = 2e-6;
const OVERLAP_MARGIN: f64 = 2e-6;
const NEAR_MARGIN: f64 = 1e-5;
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
const SPIRAL_STEPS: usize = 96;
const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    l: f64,
    t: f64,
    r: f64,
    b: f64,
}

const CANVAS: Rect = Rect {
    l: 0.0,
    t: 0.0,
    r: 1.0,
    b: 1.0,
};

impl Rect {
    fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            l: cx - w / 2.0,
            t: cy - h / 2.0,
            r: cx + w / 2.0,
            b: cy + h / 2.0,
        }
    }

    fn w(&self) -> f64 {
        self.r - self.l
    }
    fn h(&self) -> f64 {
        self.b - self.t
    }
    fn cx(&self) -> f64 {
        (self.l + self.r) / 2.0
    }
    fn cy(&self) -> f64 {
        (self.t + self.b) / 2.0
    }
    fn area(&self) -> f64 {
        self.w() * self.h()
    }

    fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            l: self.l + dx,
            t: self.t + dy,
            r: self.r + dx,
            b: self.b + dy,
        }
    }

    /// Shifts into `bounds`, shrinking first if it cannot fit.
    fn clamped_into(&self, bounds: &Rect) -> Self {
        let w = self.w().min(bounds.w());
        let h = self.h().min(bounds.h());
        let l = self.l.clamp(bounds.l, bounds.r - w);
        let t = self.t.clamp(bounds.t, bounds.b - h);
        Self {
            l,
            t,
            r: l + w,
            b: t + h,
        }
    }

    fn union(&self, other: &Rect) -> Self {
        Self {
            l: self.l.min(other.l),
            t: self.t.min(other.t),
            r: self.r.max(other.r),
            b: self.b.max(other.b),
        }
    }

    fn padded(&self, pad: f64) -> Self {
        Self {
            l: self.l - pad,
            t: self.t - pad,
            r: self.r + pad,
            b: self.b + pad,
        }
    }

    fn contains(&self, inner: &Rect) -> bool {
        inner.l >= self.l && inner.t >= self.t && inner.r <= self.r && inner.b <= self.b
    }

    fn iou(&self, other: &Rect) -> f64 {
        let dx = self.r.min(other.r) - self.l.max(other.l);
        let dy = self.b.min(other.b) - self.t.max(other.t);
        if dx <= 0.0 || dy <= 0.0 {
            return 0.0;
        }
        let inter = dx * dy;
        inter / (self.area() + other.area() - inter)
    }

    fn lerp(&self, other: &Rect, t: f64) -> Self {
        let mix = |a: f64, b: f64| t * a + (1.0 - t) * b;
        Self {
            l: mix(self.l, other.l),
            t: mix(self.t, other.t),
            r: mix(self.r, other.r),
            b: mix(self.b, other.b),
        }
    }

    /// Float noise far below a micro-unit rounds away on quantization.
    fn in_canvas(&self) -> bool {
        self.l >= -CANVAS_SLACK && self.t >= -CANVAS_SLACK && self.r <= 1.0 + CANVAS_SLACK && self.b <= 1.0 + CANVAS_SLACK
    }

    fn to_box(self) -> BoundingBox {
        BoundingBox::from_edges(self.l, self.t, self.r, self.b)
    }
}

/// Constraint-derived relations between objects.
struct Structure {
    x_rank: Vec<usize>,
    y_rank: Vec<usize>,
    depth: Vec<usize>,
    max_depth: usize,
    primary_parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Primary-tree descendants, including the node itself.
    subtree: Vec<Vec<usize>>,
    unintended: Vec<(usize, usize)>,
    partners: Vec<Vec<usize>>,
    touching: Vec<Vec<usize>>,
}

/// Topological rank; a cycle yields `Err` with the nodes on or between cycles.
fn topo_rank(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        out[a].push(b);
        indegree[b] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut rank = vec![usize::MAX; n];
    let mut next = 0;
    while let Some(node) = ready.pop_first() {
        rank[node] = next;
        next += 1;
        for &succ in &out[node] {
            indegree[succ] -= 1;
            if indegree[succ] == 0 {
                ready.insert(succ);
            }
        }
    }
    if next == n {
        return Ok(rank);
    }
    // Peel nodes without remaining successors until only cycles are left.
    let mut remaining: BTreeSet<usize> = (0..n).filter(|&i| rank[i] == usize::MAX).collect();
    loop {
        let sinks: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&v| !out[v].iter().any(|s| remaining.contains(s)))
            .collect();
        if sinks.is_empty() {
            break;
        }
        for s in sinks {
            remaining.remove(&s);
        }
    }
    Err(remaining.into_iter().collect())
}

impl Structure {
    fn analyze(n: usize, constraints: &[LayoutConstraint]) -> Result<Self, LayoutError> {
        let mut x_edges = Vec::new();
        let mut y_edges = Vec::new();
        let mut contain_edges = Vec::new();
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut constrained: BTreeSet<(usize, usize)> = BTreeSet::new();
        for c in constraints {
            constrained.insert((c.a.min(c.b), c.a.max(c.b)));
            match c.kind {
                ConstraintKind::LeftOf => x_edges.push((c.a, c.b)),
                ConstraintKind::RightOf => x_edges.push((c.b, c.a)),
                ConstraintKind::Above => y_edges.push((c.a, c.b)),
                ConstraintKind::Below => y_edges.push((c.b, c.a)),
                ConstraintKind::Inside => {
                    contain_edges.push((c.b, c.a));
                    parents[c.a].push(c.b);
                }
                ConstraintKind::Overlap | ConstraintKind::Near => {}
            }
        }
        let infeasible = |axis: &'static str| move |objects| LayoutError::Infeasible { axis, objects };
        let x_rank = topo_rank(n, &x_edges).map_err(infeasible("horizontal"))?;
        let y_rank = topo_rank(n, &y_edges).map_err(infeasible("vertical"))?;
        let contain_rank = topo_rank(n, &contain_edges).map_err(infeasible("containment"))?;

        for p in &mut parents {
            p.sort_unstable();
            p.dedup();
        }
        let mut by_rank: Vec<usize> = (0..n).collect();
        by_rank.sort_by_key(|&i| contain_rank[i]);
        let mut depth = vec![0usize; n];
        for &node in &by_rank {
            depth[node] = parents[node].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);

        let primary_parent: Vec<Option<usize>> = parents
            .iter()
            .map(|ps| ps.iter().copied().max_by(|&a, &b| depth[a].cmp(&depth[b]).then(b.cmp(&a))))
            .collect();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (child, parent) in primary_parent.iter().enumerate() {
            if let Some(p) = parent {
                children[*p].push(child);
            }
        }
        for list in &mut children {
            list.sort_by_key(|&c| (y_rank[c], x_rank[c], c));
        }

        let mut subtree = vec![Vec::new(); n];
        for node in by_rank.iter().rev() {
            let mut nodes = vec![*node];
            for &c in &children[*node] {
                nodes.extend(subtree[c].iter().copied());
            }
            nodes.sort_unstable();
            subtree[*node] = nodes;
        }

        // Transitive containment ancestors over every parent link.
        let mut ancestors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &node in &by_rank {
            let mut set = BTreeSet::new();
            for &p in &parents[node] {
                set.insert(p);
                set.extend(ancestors[p].iter().copied());
            }
            ancestors[node] = set;
        }

        let mut unintended = Vec::new();
        let mut partners = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                if constrained.contains(&(i, j)) || ancestors[i].contains(&j) || ancestors[j].contains(&i) {
                    continue;
                }
                unintended.push((i, j));
                partners[i].push(j);
                partners[j].push(i);
            }
        }

        let mut touching = vec![Vec::new(); n];
        for (index, c) in constraints.iter().enumerate() {
            touching[c.a].push(index);
            if c.b != c.a {
                touching[c.b].push(index);
            }
        }

        Ok(Self {
            x_rank,
            y_rank,
            depth,
            max_depth,
            primary_parent,
            children,
            subtree,
            unintended,
            partners,
            touching,
        })
    }

    fn root_of(&self, mut node: usize) -> usize {
        while let Some(p) = self.primary_parent[node] {
            node = p;
        }
        node
    }
}

/// How far `kind(a, b)` is from holding, in canvas units; zero iff it holds.
fn shortfall(kind: ConstraintKind, a: &Rect, b: &Rect, near: f64) -> f64 {
    let short = |have: f64, need: f64| (need - have).max(0.0);
    match kind {
        ConstraintKind::LeftOf => short(b.cx() - a.cx(), ORDER_MARGIN),
        ConstraintKind::RightOf => short(a.cx() - b.cx(), ORDER_MARGIN),
        ConstraintKind::Above => short(b.cy() - a.cy(), ORDER_MARGIN),
        ConstraintKind::Below => short(a.cy() - b.cy(), ORDER_MARGIN),
        ConstraintKind::Inside => {
            short(a.l - b.l, 0.0) + short(a.t - b.t, 0.0) + short(b.r - a.r, 0.0) + short(b.b - a.b, 0.0)
        }
        ConstraintKind::Overlap => {
            short(a.r.min(b.r) - a.l.max(b.l), OVERLAP_MARGIN) + short(a.b.min(b.b) - a.t.max(b.t), OVERLAP_MARGIN)
        }
        ConstraintKind::Near => {
            let (dx, dy) = (a.cx() - b.cx(), a.cy() - b.cy());
            short(near - NEAR_MARGIN, (dx * dx + dy * dy).sqrt())
        }
    }
}

fn holds(kind: ConstraintKind, a: &Rect, b: &Rect, near: f64) -> bool {
    shortfall(kind, a, b, near) == 0.0
}

/// How `q` relates to an already placed `p` when a constraint links their roots.
fn relation_of(kind: ConstraintKind, q_is_a: bool) -> ConstraintKind {
    use ConstraintKind::*;
    match (kind, q_is_a) {
        (Inside, _) => Overlap,
        (k, true) => k,
        (LeftOf, false) => RightOf,
        (RightOf, false) => LeftOf,
        (Above, false) => Below,
        (Below, false) => Above,
        (k, false) => k,
    }
}

struct Solver<'a> {
    objects: &'a [SceneObject],
    constraints: &'a [LayoutConstraint],
    config: &'a LayoutConfig,
    anchor: usize,
    s: Structure,
    sizes: Vec<(f64, f64)>,
    rects: Vec<Option<Rect>>,
}

impl<'a> Solver<'a> {
    fn base_size(&self, i: usize) -> (f64, f64) {
        let cfg = self.config;
        if self.objects[i].category == ObjectCategory::Text {
            let w = (cfg.text_char_width * self.objects[i].display_len() as f64)
                .clamp(cfg.text_min_width, cfg.text_max_width);
            (w, cfg.text_height)
        } else if i == self.anchor {
            (cfg.anchor_size, cfg.anchor_size)
        } else {
            (cfg.sibling_size, cfg.sibling_size)
        }
    }

    /// Columns, rows and cell size for packing child boxes; prefers the
    /// squarest footprint, then the wider one.
    fn grid_shape(child_sizes: &[(f64, f64)]) -> (usize, usize, (f64, f64)) {
        let k = child_sizes.len();
        let cell_w = child_sizes.iter().map(|s| s.0).fold(0.0, f64::max) + CELL_GAP;
        let cell_h = child_sizes.iter().map(|s| s.1).fold(0.0, f64::max) + CELL_GAP;
        let mut best = (1, k, (cell_w + CELL_GAP, k as f64 * cell_h + CELL_GAP));
        for cols in 1..=k {
            let rows = k.div_ceil(cols);
            let need = (cols as f64 * cell_w + CELL_GAP, rows as f64 * cell_h + CELL_GAP);
            let score = need.0.max(need.1);
            let best_score = best.2 .0.max(best.2 .1);
            if score <= best_score + 1e-12 {
                best = (cols, rows, need);
            }
        }
        best
    }

    fn compute_sizes(&mut self) {
        let n = self.objects.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.s.depth[i]));
        self.sizes = (0..n).map(|i| self.base_size(i)).collect();
        for node in order {
            if self.s.children[node].is_empty() {
                continue;
            }
            let child_sizes: Vec<_> = self.s.children[node].iter().map(|&c| self.sizes[c]).collect();
            let (_, _, need) = Self::grid_shape(&child_sizes);
            let (w, h) = self.sizes[node];
            self.sizes[node] = (w.max(need.0).min(MAX_CONTAINER), h.max(need.1).min(MAX_CONTAINER));
        }

        // Shrink the other roots when they cannot fit beside the anchor's root.
        let anchor_root = self.s.root_of(self.anchor);
        let area = |(w, h): (f64, f64)| w * h;
        let others: Vec<usize> = (0..n)
            .filter(|&i| i != anchor_root && self.s.primary_parent[i].is_none())
            .collect();
        let demand: f64 = others.iter().map(|&i| area(self.sizes[i])).sum();
        let budget = ROOT_AREA_SHARE * (1.0 - area(self.sizes[anchor_root])).max(0.0);
        if demand > budget {
            let scale = (budget / demand).sqrt().max(MIN_CROWD_SCALE);
            for i in others {
                let (w, h) = self.sizes[i];
                self.sizes[i] = ((w * scale).max(MIN_SIZE), (h * scale).max(MIN_SIZE));
            }
        }
    }

    fn placed(&self) -> impl Iterator<Item = (usize, &Rect)> {
        self.rects.iter().enumerate().filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
    }

    fn max_iou_against_placed(&self, rect: &Rect) -> f64 {
        self.placed().map(|(_, r)| rect.iou(r)).fold(0.0, f64::max)
    }

    fn place_relative(&self, size: (f64, f64), p: Rect, kind: ConstraintKind) -> Rect {
        let (w, h) = size;
        let near = self.config.near_distance * 0.9;
        let mut candidates: Vec<(f64, f64)> = Vec::new();
        match kind {
            ConstraintKind::LeftOf | ConstraintKind::RightOf => {
                let cx = if kind == ConstraintKind::LeftOf {
                    p.l - GAP - w / 2.0
                } else {
                    p.r + GAP + w / 2.0
                };
                for dy in [0.0, -0.6 * h, 0.6 * h] {
                    candidates.push((cx, p.cy() + dy));
                }
            }
            ConstraintKind::Above | ConstraintKind::Below => {
                let cy = if kind == ConstraintKind::Above {
                    p.t - GAP - h / 2.0
                } else {
                    p.b + GAP + h / 2.0
                };
                for dx in [0.0, -0.6 * w, 0.6 * w] {
                    candidates.push((p.cx() + dx, cy));
                }
            }
            ConstraintKind::Overlap | ConstraintKind::Inside => {
                let ox = 0.5 * (p.w() / 2.0 + w / 2.0);
                let oy = 0.5 * (p.h() / 2.0 + h / 2.0);
                for (dx, dy) in [(ox, 0.0), (-ox, 0.0), (0.0, oy), (0.0, -oy)] {
                    candidates.push((p.cx() + dx, p.cy() + dy));
                }
            }
            ConstraintKind::Near => {
                let ox = (p.w() / 2.0 + w / 2.0 + GAP).min(near);
                let oy = (p.h() / 2.0 + h / 2.0 + GAP).min(near);
                let diag = near / std::f64::consts::SQRT_2;
                let (dx_d, dy_d) = (ox.min(diag), oy.min(diag));
                for (dx, dy) in [
                    (ox, 0.0),
                    (-ox, 0.0),
                    (0.0, oy),
                    (0.0, -oy),
                    (dx_d, dy_d),
                    (-dx_d, dy_d),
                    (dx_d, -dy_d),
                    (-dx_d, -dy_d),
                ] {
                    candidates.push((p.cx() + dx, p.cy() + dy));
                }
            }
        }
        let mut best: Option<(f64, Rect)> = None;
        for (cx, cy) in candidates {
            let rect = Rect::centered(cx, cy, w, h).clamped_into(&CANVAS);
            let penalty = if holds(kind, &rect, &p, self.config.near_distance) { 0.0 } else { 1.0 };
            let score = self.max_iou_against_placed(&rect) + penalty;
            if penalty == 0.0 && score <= self.config.iou_threshold {
                return rect;
            }
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, rect));
            }
        }
        best.expect("at least one candidate").1
    }

    fn place_on_spiral(&self, size: (f64, f64), start_angle: f64) -> Rect {
        let (acx, acy) = self.config.anchor_center;
        let mut best: Option<(f64, Rect)> = None;
        for k in 0..SPIRAL_STEPS {
            let angle = start_angle + k as f64 * GOLDEN_ANGLE;
            let radius = 0.18 + 0.32 * k as f64 / SPIRAL_STEPS as f64;
            let rect = Rect::centered(acx + radius * angle.cos(), acy + radius * angle.sin(), size.0, size.1)
                .clamped_into(&CANVAS);
            let score = self.max_iou_against_placed(&rect);
            if score <= self.config.iou_threshold {
                return rect;
            }
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, rect));
            }
        }
        best.expect("spiral has candidates").1
    }

    fn place_roots(&mut self) {
        let n = self.objects.len();
        let roots: Vec<usize> = (0..n).filter(|&i| self.s.primary_parent[i].is_none()).collect();
        let mut root_edges: BTreeMap<usize, Vec<(usize, ConstraintKind)>> = BTreeMap::new();
        for c in self.constraints {
            let (ra, rb) = (self.s.root_of(c.a), self.s.root_of(c.b));
            if ra == rb {
                continue;
            }
            root_edges.entry(ra).or_default().push((rb, relation_of(c.kind, false)));
            root_edges.entry(rb).or_default().push((ra, relation_of(c.kind, true)));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        let start_angle = rng.gen::<f64>() * std::f64::consts::TAU;

        let anchor_root = self.s.root_of(self.anchor);
        let mut order = vec![anchor_root];
        order.extend(roots.iter().copied().filter(|&r| r != anchor_root));

        for seed in order {
            if self.rects[seed].is_some() {
                continue;
            }
            let rect = if seed == anchor_root {
                let (cx, cy) = self.config.anchor_center;
                let (w, h) = self.sizes[seed];
                Rect::centered(cx, cy, w, h).clamped_into(&CANVAS)
            } else {
                self.place_on_spiral(self.sizes[seed], start_angle)
            };
            self.rects[seed] = Some(rect);
            let mut queue = VecDeque::from([seed]);
            while let Some(p) = queue.pop_front() {
                let p_rect = self.rects[p].expect("queued roots are placed");
                for &(q, kind) in root_edges.get(&p).map(Vec::as_slice).unwrap_or(&[]) {
                    if self.rects[q].is_some() {
                        continue;
                    }
                    self.rects[q] = Some(self.place_relative(self.sizes[q], p_rect, kind));
                    queue.push_back(q);
                }
            }
        }
    }

    fn place_children(&mut self) {
        let n = self.objects.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (self.s.depth[i], i));
        for node in order {
            let children = self.s.children[node].clone();
            if children.is_empty() {
                continue;
            }
            let container = self.rects[node].expect("containers are placed before their children");
            let desired: Vec<_> = children.iter().map(|&c| self.sizes[c]).collect();
            let (cols, rows, _) = Self::grid_shape(&desired);
            let inner = container.padded(-CELL_GAP / 2.0);
            let inner = if inner.w() > 0.0 && inner.h() > 0.0 { inner } else { container };
            let cell_w = inner.w() / cols as f64;
            let cell_h = inner.h() / rows as f64;
            let avail_w = (cell_w - CELL_GAP).max(cell_w * 0.5);
            let avail_h = (cell_h - CELL_GAP).max(cell_h * 0.5);
            for (k, (&child, &(w, h))) in children.iter().zip(&desired).enumerate() {
                let (row, col) = (k / cols, k % cols);
                let scale = (avail_w / w).min(avail_h / h).min(1.0);
                let size = ((w * scale).max(MIN_SIZE), (h * scale).max(MIN_SIZE));
                let cx = inner.l + (col as f64 + 0.5) * cell_w;
                let cy = inner.t + (row as f64 + 0.5) * cell_h;
                self.rects[child] = Some(Rect::centered(cx, cy, size.0, size.1).clamped_into(&container));
            }
        }
    }

    /// Grows secondary containers so multi-parent containment holds.
    fn grow_secondary_containers(&mut self, rects: &mut [Rect]) {
        let mut inside: Vec<&LayoutConstraint> = self
            .constraints
            .iter()
            .filter(|c| c.kind == ConstraintKind::Inside)
            .collect();
        inside.sort_by_key(|c| (std::cmp::Reverse(self.s.depth[c.a]), c.a, c.b));
        for c in inside {
            if !rects[c.b].contains(&rects[c.a]) {
                rects[c.b] = rects[c.b].union(&rects[c.a].padded(0.005)).clamped_into(&CANVAS);
            }
        }
    }

    fn shortfall_of(&self, rects: &[Rect], index: usize) -> f64 {
        let c = &self.constraints[index];
        shortfall(c.kind, &rects[c.a], &rects[c.b], self.config.near_distance)
    }

    fn is_violated(&self, rects: &[Rect], index: usize) -> bool {
        self.shortfall_of(rects, index) > 0.0
    }

    fn total_shortfall(&self, rects: &[Rect]) -> f64 {
        (0..self.constraints.len()).map(|i| self.shortfall_of(rects, i)).sum()
    }

    fn shortfall_touching(&self, rects: &[Rect], nodes: &[usize]) -> f64 {
        let mut seen = BTreeSet::new();
        for &node in nodes {
            seen.extend(self.s.touching[node].iter().copied());
        }
        seen.into_iter().map(|i| self.shortfall_of(rects, i)).sum()
    }

    fn rect_ok(r: &Rect) -> bool {
        r.in_canvas() && r.w() >= MIN_SIZE && r.h() >= MIN_SIZE
    }

    fn fully_feasible(&self, rects: &[Rect]) -> bool {
        rects.iter().all(Self::rect_ok) && (0..self.constraints.len()).all(|i| !self.is_violated(rects, i))
    }

    /// Translation of `node`'s subtree clamped to its container (or canvas).
    fn clamp_translation(&self, rects: &[Rect], node: usize, dx: f64, dy: f64) -> (f64, f64) {
        let bounds = self.s.primary_parent[node].map(|p| rects[p]).unwrap_or(CANVAS);
        let r = rects[node];
        let clamp = |d: f64, lo: f64, hi: f64| if lo > hi { 0.0 } else { d.clamp(lo, hi) };
        (
            clamp(dx, bounds.l - r.l, bounds.r - r.r),
            clamp(dy, bounds.t - r.t, bounds.b - r.b),
        )
    }

    fn translate_subtree(&self, rects: &mut [Rect], node: usize, dx: f64, dy: f64) {
        for &m in &self.s.subtree[node] {
            rects[m] = rects[m].translated(dx, dy);
        }
    }

    fn overlap_excess(&self, rects: &[Rect], nodes: &[usize]) -> f64 {
        let member: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut total = 0.0;
        for &i in nodes {
            for &j in &self.s.partners[i] {
                // count each pair once
                if member.contains(&j) && j < i {
                    continue;
                }
                total += (rects[i].iou(&rects[j]) - self.config.iou_threshold).max(0.0);
            }
        }
        total
    }

    /// `node` and its primary ancestors, innermost first.
    fn chain(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut cur = node;
        while let Some(p) = self.s.primary_parent[cur] {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Moves that would carry `mover` by `(dx, dy)`, applied at every level
    /// of its ancestor chain that does not also carry `other`.
    fn chain_moves(&self, rects: &[Rect], mover: usize, other: usize, dx: f64, dy: f64, out: &mut Vec<Vec<Rect>>) {
        let other_chain = self.chain(other);
        for node in self.chain(mover) {
            if other_chain.contains(&node) {
                break;
            }
            let (dx, dy) = self.clamp_translation(rects, node, dx, dy);
            if dx.abs() > 1e-12 || dy.abs() > 1e-12 {
                let mut next = rects.to_vec();
                self.translate_subtree(&mut next, node, dx, dy);
                out.push(next);
            }
        }
    }

    /// Candidate fixes for one violated constraint.
    fn repair_candidates(&self, rects: &[Rect], c: &LayoutConstraint) -> Vec<Vec<Rect>> {
        let mut out = Vec::new();
        let (a, b) = (rects[c.a], rects[c.b]);
        let spread_x = (a.w() + b.w()) / 4.0 + ORDER_MARGIN;
        let spread_y = (a.h() + b.h()) / 4.0 + ORDER_MARGIN;
        match c.kind {
            ConstraintKind::LeftOf | ConstraintKind::RightOf | ConstraintKind::Above | ConstraintKind::Below => {
                let sign = match c.kind {
                    ConstraintKind::LeftOf | ConstraintKind::Above => 1.0,
                    _ => -1.0,
                };
                let horizontal = matches!(c.kind, ConstraintKind::LeftOf | ConstraintKind::RightOf);
                let (gap, spread) = if horizontal {
                    (b.cx() - a.cx(), spread_x)
                } else {
                    (b.cy() - a.cy(), spread_y)
                };
                let axis = |d: f64| if horizontal { (d, 0.0) } else { (0.0, d) };
                for (fraction, margin) in [(1.0, spread), (1.0, 2.0 * ORDER_MARGIN), (0.5, spread)] {
                    // moving a by -delta (or b by +delta) leaves sign * gap = margin
                    let delta = (margin - sign * gap) * sign * fraction;
                    let (dx, dy) = axis(-delta);
                    self.chain_moves(rects, c.a, c.b, dx, dy, &mut out);
                    let (dx, dy) = axis(delta);
                    self.chain_moves(rects, c.b, c.a, dx, dy, &mut out);
                }
            }
            ConstraintKind::Inside => {
                let fitted = a.clamped_into(&b);
                self.chain_moves(rects, c.a, c.b, fitted.l - a.l, fitted.t - a.t, &mut out);
                let mut grown = rects.to_vec();
                grown[c.b] = b.union(&a.padded(0.005)).clamped_into(&CANVAS);
                out.push(grown);
            }
            ConstraintKind::Overlap | ConstraintKind::Near => {
                let (dx, dy) = (b.cx() - a.cx(), b.cy() - a.cy());
                let dist = (dx * dx + dy * dy).sqrt().max(1e-12);
                let mut fractions = vec![0.5, 1.0];
                if c.kind == ConstraintKind::Near {
                    fractions.push((1.0 - 0.8 * self.config.near_distance / dist).max(0.0));
                } else {
                    let reach = ((a.w() + b.w()) / 2.0 * 0.8).min((a.h() + b.h()) / 2.0 * 0.8);
                    fractions.push((1.0 - reach / dist).max(0.0));
                }
                for f in fractions {
                    self.chain_moves(rects, c.a, c.b, dx * f, dy * f, &mut out);
                    self.chain_moves(rects, c.b, c.a, -dx * f, -dy * f, &mut out);
                }
            }
        }
        out
    }

    /// Greedy descent on total constraint shortfall.
    fn local_repair(&self, rects: &mut Vec<Rect>) {
        let budget = 8 * self.objects.len() + 16;
        for _ in 0..budget {
            let current = self.total_shortfall(rects);
            if current == 0.0 {
                return;
            }
            let mut best: Option<(f64, Vec<Rect>)> = None;
            for index in 0..self.constraints.len() {
                if !self.is_violated(rects, index) {
                    continue;
                }
                for next in self.repair_candidates(rects, &self.constraints[index]) {
                    if !next.iter().all(Self::rect_ok) {
                        continue;
                    }
                    let score = self.total_shortfall(&next);
                    if score < current - 1e-12 && best.as_ref().is_none_or(|(s, _)| score < *s) {
                        best = Some((score, next));
                    }
                }
            }
            match best {
                Some((_, next)) => *rects = next,
                None => return,
            }
        }
    }

    fn separation_moves(&self, rects: &[Rect], mover: usize, other: usize) -> Vec<(f64, f64)> {
        let (m, o) = (rects[mover], rects[other]);
        let px = m.r.min(o.r) - m.l.max(o.l);
        let py = m.b.min(o.b) - m.t.max(o.t);
        let toward_positive_x = m.cx() > o.cx() || (m.cx() == o.cx() && mover > other);
        let toward_positive_y = m.cy() > o.cy() || (m.cy() == o.cy() && mover > other);
        let x_moves = if toward_positive_x {
            [o.r - m.l + SEPARATION_SLACK, -(m.r - o.l + SEPARATION_SLACK)]
        } else {
            [-(m.r - o.l + SEPARATION_SLACK), o.r - m.l + SEPARATION_SLACK]
        };
        let y_moves = if toward_positive_y {
            [o.b - m.t + SEPARATION_SLACK, -(m.b - o.t + SEPARATION_SLACK)]
        } else {
            [-(m.b - o.t + SEPARATION_SLACK), o.b - m.t + SEPARATION_SLACK]
        };
        let xs = x_moves.map(|d| (d, 0.0));
        let ys = y_moves.map(|d| (0.0, d));
        if px <= py {
            vec![xs[0], ys[0], xs[1], ys[1]]
        } else {
            vec![ys[0], xs[0], ys[1], xs[1]]
        }
    }

    /// Greedy descent on unintended overlap; never increases the summed
    /// shortfall of touched constraints, so a feasible layout stays feasible.
    fn push_apart(&self, rects: &mut [Rect]) {
        let threshold = self.config.iou_threshold;
        for _ in 0..self.config.max_iterations {
            let offending: Vec<(usize, usize)> = self
                .s
                .unintended
                .iter()
                .copied()
                .filter(|&(i, j)| rects[i].iou(&rects[j]) > threshold)
                .collect();
            if offending.is_empty() {
                return;
            }
            let mut moved_any = false;
            for (i, j) in offending {
                if rects[i].iou(&rects[j]) <= threshold {
                    continue;
                }
                let mut movers = [i, j];
                movers.sort_by(|&p, &q| {
                    let key = |v: usize| (v == self.anchor, rects[v].area());
                    let (kp, kq) = (key(p), key(q));
                    kp.0.cmp(&kq.0)
                        .then(kp.1.partial_cmp(&kq.1).unwrap_or(std::cmp::Ordering::Equal))
                        .then(q.cmp(&p))
                });
                let mut best: Option<(f64, usize, (f64, f64))> = None;
                for &mover in &movers {
                    let other = if mover == i { j } else { i };
                    let nodes = &self.s.subtree[mover];
                    let before_excess = self.overlap_excess(rects, nodes);
                    let before_shortfall = self.shortfall_touching(rects, nodes);
                    for (dx, dy) in self.separation_moves(rects, mover, other) {
                        let (dx, dy) = self.clamp_translation(rects, mover, dx, dy);
                        if dx.abs() < 1e-9 && dy.abs() < 1e-9 {
                            continue;
                        }
                        self.translate_subtree(rects, mover, dx, dy);
                        let excess = self.overlap_excess(rects, nodes);
                        let shortfall = self.shortfall_touching(rects, nodes);
                        self.translate_subtree(rects, mover, -dx, -dy);
                        let gain = before_excess - excess;
                        if shortfall <= before_shortfall
                            && gain > 1e-12
                            && best.is_none_or(|(g, _, _)| gain > g)
                        {
                            best = Some((gain, mover, (dx, dy)));
                        }
                    }
                }
                if let Some((_, mover, (dx, dy))) = best {
                    self.translate_subtree(rects, mover, dx, dy);
                    moved_any = true;
                }
            }
            if !moved_any {
                return;
            }
        }
    }

    /// Concentric layout satisfying every constraint: centers ordered by rank
    /// with spacing `eps`, half-extents shrinking by `step` per containment
    /// level. Since `n * eps <= step / 10`, children always fit their parents
    /// and no box leaves the canvas.
    fn reference_layout(&self) -> Vec<Rect> {
        let n = self.objects.len();
        let step = 0.44 / (self.s.max_depth as f64 + 1.0);
        let eps = step / (10.0 * n as f64);
        let mid = (n as f64 - 1.0) / 2.0;
        (0..n)
            .map(|i| {
                let half = 0.45 - self.s.depth[i] as f64 * step;
                let cx = 0.5 + (self.s.x_rank[i] as f64 - mid) * eps;
                let cy = 0.5 + (self.s.y_rank[i] as f64 - mid) * eps;
                Rect::centered(cx, cy, 2.0 * half, 2.0 * half)
            })
            .collect()
    }

    /// Objects linked by constraints, with the constraints among them.
    fn components(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let n = self.objects.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for c in self.constraints {
            let (ra, rb) = (find(&mut parent, c.a), find(&mut parent, c.b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().0.push(i);
        }
        for (index, c) in self.constraints.iter().enumerate() {
            let root = find(&mut parent, c.a);
            groups.get_mut(&root).expect("component exists").1.push(index);
        }
        groups.into_values().collect()
    }

    fn component_feasible(&self, rects: &[Rect], members: &[usize], constraints: &[usize]) -> bool {
        members.iter().all(|&i| Self::rect_ok(&rects[i])) && constraints.iter().all(|&c| !self.is_violated(rects, c))
    }

    /// The reference layout for one component, mapped onto the footprint
    /// the heuristic gave it when that mapping stays feasible.
    fn component_target(&self, rects: &[Rect], reference: &[Rect], members: &[usize], constraints: &[usize]) -> Vec<Rect> {
        let footprint = |rs: &[Rect]| {
            members
                .iter()
                .map(|&i| rs[i])
                .reduce(|a, b| a.union(&b))
                .expect("components are non-empty")
        };
        let target = footprint(rects).clamped_into(&CANVAS);
        let source = footprint(reference);
        let (sx, sy) = (target.w() / source.w(), target.h() / source.h());
        let mut out = rects.to_vec();
        for &i in members {
            let f = reference[i];
            out[i] = Rect {
                l: target.l + (f.l - source.l) * sx,
                t: target.t + (f.t - source.t) * sy,
                r: target.l + (f.r - source.l) * sx,
                b: target.t + (f.b - source.t) * sy,
            };
        }
        if !self.component_feasible(&out, members, constraints) {
            for &i in members {
                out[i] = reference[i];
            }
        }
        out
    }

    /// Per violated component, bisects toward its feasible target and keeps
    /// the heuristic-closest feasible blend.
    fn blend_toward_reference(&self, rects: &mut [Rect]) {
        let reference = self.reference_layout();
        debug_assert!(self.fully_feasible(&reference));
        for (members, constraints) in self.components() {
            if self.component_feasible(rects, &members, &constraints) {
                continue;
            }
            let target = self.component_target(rects, &reference, &members, &constraints);
            let blend = |t: f64| -> Vec<Rect> {
                let mut next = rects.to_vec();
                for &i in &members {
                    next[i] = rects[i].lerp(&target[i], t);
                }
                next
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..BISECTION_STEPS {
                let mid = (lo + hi) / 2.0;
                if self.component_feasible(&blend(mid), &members, &constraints) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let chosen = blend(lo);
            for &i in &members {
                rects[i] = chosen[i];
            }
        }
    }

    fn run(mut self) -> LayoutOutcome {
        let n = self.objects.len();
        self.compute_sizes();
        self.rects = vec![None; n];
        self.place_roots();
        self.place_children();
        let mut rects: Vec<Rect> = self.rects.iter().map(|r| r.expect("every object placed")).collect();
        self.grow_secondary_containers(&mut rects);
        self.local_repair(&mut rects);
        self.push_apart(&mut rects);
        self.local_repair(&mut rects);

        let repaired = !self.fully_feasible(&rects);
        if repaired {
            self.blend_toward_reference(&mut rects);
            self.push_apart(&mut rects);
        }

        let boxes: BTreeMap<usize, BoundingBox> = rects.iter().enumerate().map(|(i, r)| (i, r.to_box())).collect();
        let threshold = self.config.iou_threshold;
        let crowded: Vec<(usize, usize)> = self
            .s
            .unintended
            .iter()
            .copied()
            .filter(|(i, j)| boxes[i].iou(&boxes[j]) > threshold)
            .collect();
        let mut diagnostics = Vec::new();
        if !crowded.is_empty() {
            let mut ids: Vec<usize> = crowded.iter().flat_map(|&(i, j)| [i, j]).collect();
            ids.sort_unstable();
            ids.dedup();
            diagnostics.push(Diagnostic::warning(
                DiagnosticCode::LayoutBestEffort,
                format!(
                    "{} unrelated pair(s) still overlap above IoU {threshold}: {crowded:?}",
                    crowded.len()
                ),
                ids,
            ));
        }
        LayoutOutcome {
            boxes,
            anchor_id: self.anchor,
            best_effort: !crowded.is_empty(),
            diagnostics,
            repaired,
        }
    }
}

/// Places every object; see the module docs for the stages.
pub fn solve_layout(
    graph: &SceneGraph,
    objects: &[SceneObject],
    constraints: &[LayoutConstraint],
    config: &LayoutConfig,
) -> Result<LayoutOutcome, LayoutError> {
    config.validate()?;
    let n = objects.len();
    if n > MAX_LAYOUT_OBJECTS {
        return Err(LayoutError::TooManyObjects {
            count: n,
            max: MAX_LAYOUT_OBJECTS,
        });
    }
    let anchor = select_anchor(graph)?;
    for c in constraints {
        for object in [c.a, c.b] {
            if object >= n {
                return Err(LayoutError::UnknownObject { object, object_count: n });
            }
        }
    }
    if anchor >= n {
        return Err(LayoutError::UnknownObject {
            object: anchor,
            object_count: n,
        });
    }
    let structure = Structure::analyze(n, constraints)?;
    let solver = Solver {
        objects,
        constraints,
        config,
        anchor,
        s: structure,
        sizes: Vec::new(),
        rects: Vec::new(),
    };
    Ok(solver.run())
}
