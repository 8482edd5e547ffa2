//! Coalescing flow maps: collision detection, cluster merging with mass
//! aggregation, and diffusion rescaling.
//!
//! Between merges every cluster moves by the increments of its
//! representative's driver divided by `sqrt(mass)`. A collision is declared at
//! the first grid index where two adjacent clusters touch or cross; the merged
//! cluster continues from the representative cluster's position and the other
//! members snap onto it.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{bridge_crossing_prob, DrivingEnsemble, SeedRecord, TimeGrid};
use crate::rng::{counter_uniform, TAG_FLOW_BRIDGE};

/// Which index set the map acts on: two-sided, or one-sided to the right/left
/// of the domain edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Plus,
    Minus,
}

/// Contiguous particle index interval `[lo, hi]` with the anchor the full map
/// measures component indices from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    lo: i64,
    hi: i64,
    anchor: i64,
}

impl Domain {
    /// Domain with the anchor at the midpoint (rounded down).
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::config("domain", format!("empty domain [{lo}, {hi}]")));
        }
        Ok(Domain {
            lo,
            hi,
            anchor: lo + (hi - lo).div_euclid(2),
        })
    }

    pub fn with_anchor(lo: i64, hi: i64, anchor: i64) -> Result<Self> {
        if lo > hi || anchor < lo || anchor > hi {
            return Err(Error::config(
                "domain",
                format!("anchor {anchor} not inside [{lo}, {hi}]"),
            ));
        }
        Ok(Domain { lo, hi, anchor })
    }

    /// `{center - half_width, ..., center + half_width}` anchored at `center`.
    pub fn centered(center: i64, half_width: i64) -> Self {
        let half_width = half_width.max(0);
        Domain {
            lo: center - half_width,
            hi: center + half_width,
            anchor: center,
        }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn anchor(&self) -> i64 {
        self.anchor
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }

    fn check(&self, k: i64) -> Result<usize> {
        if self.contains(k) {
            Ok((k - self.lo) as usize)
        } else {
            Err(Error::OutOfDomain {
                index: k,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Member of a contiguous cluster whose driver continues to drive it.
///
/// Full map: minimal absolute component index `|k - anchor|`. Plus map:
/// leftmost member. Minus map: rightmost member.
pub fn representative_of(members: RangeInclusive<i64>, domain: &Domain, variant: Variant) -> Result<i64> {
    let (a, b) = (*members.start(), *members.end());
    if a > b {
        return Err(Error::Internal("representative of an empty member set".into()));
    }
    domain.check(a)?;
    domain.check(b)?;
    Ok(representative_unchecked(a, b, domain, variant))
}

#[inline]
fn representative_unchecked(a: i64, b: i64, domain: &Domain, variant: Variant) -> i64 {
    match variant {
        Variant::Full => domain.anchor.clamp(a, b),
        Variant::Plus => a,
        Variant::Minus => b,
    }
}

pub type ClusterId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snap {
    pub cluster: ClusterId,
    pub lo: i64,
    pub hi: i64,
    /// Position the absorbed cluster had reached at the merge index before snapping.
    pub pre_merge_position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub grid_index: usize,
    /// Clusters joined by this event, left to right (two unless several met at once).
    pub merged: Vec<ClusterId>,
    pub left_cluster: ClusterId,
    pub right_cluster: ClusterId,
    pub new_cluster: ClusterId,
    pub lo: i64,
    pub hi: i64,
    pub new_mass: u32,
    pub new_representative: i64,
    pub position: f64,
    pub snapped: Vec<Snap>,
    /// Some boundary in this event was closed by a bridge-crossing draw rather than on the grid.
    pub bridge_triggered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub id: ClusterId,
    pub lo: i64,
    pub hi: i64,
    pub mass: u32,
    pub representative: i64,
}

/// Partition of the domain into clusters at one grid index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    /// Cluster id for each particle, indexed by `k - domain.lo`.
    pub assignment: Vec<ClusterId>,
    /// Clusters left to right.
    pub clusters: Vec<ClusterInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub variant: Variant,
    /// Also merge clusters whose difference process crossed zero between grid
    /// points, drawn with the Brownian-bridge crossing probability.
    pub bridge: bool,
}

impl FlowOptions {
    pub fn new(variant: Variant) -> Self {
        FlowOptions {
            variant,
            bridge: false,
        }
    }
}

/// Coalesced particle paths on the grid together with their merge history.
#[derive(Debug, Clone)]
pub struct FlowRealization {
    domain: Domain,
    variant: Variant,
    grid: TimeGrid,
    seed: SeedRecord,
    // time-major: row i holds X_lo(t_i), ..., X_hi(t_i)
    positions: Vec<f64>,
    events: Vec<MergeEvent>,
    // (grid_index, mass) jumps per particle after the initial mass of one
    mass_jumps: Vec<Vec<(usize, u32)>>,
}

#[derive(Debug, Clone, Copy)]
struct Live {
    id: ClusterId,
    lo: i64,
    hi: i64,
    mass: u32,
    rep: i64,
    scale: f64,
    pos: f64,
    prev: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    first: usize,
    last: usize,
    lo: i64,
    hi: i64,
    mass: u32,
    rep: i64,
    pos: f64,
    bridged: bool,
}

/// Runs the coalescing map of the given variant over `domain` using the drivers in `ensemble`.
pub fn apply_flow_map(ensemble: &DrivingEnsemble, domain: Domain, variant: Variant) -> Result<FlowRealization> {
    apply_flow_map_with(ensemble, domain, FlowOptions::new(variant))
}

pub fn apply_flow_map_with(
    ensemble: &DrivingEnsemble,
    domain: Domain,
    options: FlowOptions,
) -> Result<FlowRealization> {
    if !ensemble.contains(domain.lo) || !ensemble.contains(domain.hi) {
        return Err(Error::config(
            "domain",
            format!(
                "domain [{}, {}] not inside ensemble range [{}, {}]",
                domain.lo,
                domain.hi,
                ensemble.lo(),
                ensemble.hi()
            ),
        ));
    }
    let grid = *ensemble.grid();
    let n = domain.len();
    let steps = grid.steps();
    let paths: Vec<&[f64]> = (domain.lo..=domain.hi)
        .map(|k| ensemble.path(k))
        .collect::<Result<_>>()?;

    let mut builder = Builder {
        domain,
        variant: options.variant,
        events: Vec::new(),
        mass_jumps: vec![Vec::new(); n],
        next_id: n as ClusterId,
        stack: Vec::with_capacity(n),
        scratch: Vec::with_capacity(n),
    };
    let mut live: Vec<Live> = (0..n)
        .map(|idx| {
            let k = domain.lo + idx as i64;
            Live {
                id: idx as ClusterId,
                lo: k,
                hi: k,
                mass: 1,
                rep: k,
                scale: 1.0,
                pos: paths[idx][0],
                prev: paths[idx][0],
            }
        })
        .collect();
    let mut force = vec![false; n];
    let mut positions = vec![0.0; n * (steps + 1)];

    if live.windows(2).any(|w| w[0].pos >= w[1].pos) {
        builder.merge_pass(&mut live, 0, &force);
    }
    write_row(&mut positions[..n], &live, domain.lo);

    let seed = ensemble.seed();
    let dt = grid.dt();
    for i in 0..steps {
        for c in live.iter_mut() {
            let p = paths[(c.rep - domain.lo) as usize];
            c.prev = c.pos;
            c.pos += (p[i + 1] - p[i]) * c.scale;
        }
        let mut needs_pass = live.windows(2).any(|w| w[0].pos >= w[1].pos);
        if options.bridge {
            for (j, w) in live.windows(2).enumerate() {
                force[j] = false;
                if w[0].pos >= w[1].pos {
                    continue;
                }
                let d0 = w[1].prev - w[0].prev;
                let d1 = w[1].pos - w[0].pos;
                let sigma2 = 1.0 / w[0].mass as f64 + 1.0 / w[1].mass as f64;
                let p = bridge_crossing_prob(d0.max(0.0), d1, sigma2, dt)?;
                if p > 0.0 && counter_uniform(seed.master_seed, seed.replication, TAG_FLOW_BRIDGE, w[1].lo, i) < p {
                    force[j] = true;
                    needs_pass = true;
                }
            }
        }
        if needs_pass {
            builder.merge_pass(&mut live, i + 1, &force);
            if options.bridge {
                force.iter_mut().for_each(|f| *f = false);
            }
        }
        let row = (i + 1) * n;
        write_row(&mut positions[row..row + n], &live, domain.lo);
    }

    Ok(FlowRealization {
        domain,
        variant: options.variant,
        grid,
        seed,
        positions,
        events: builder.events,
        mass_jumps: builder.mass_jumps,
    })
}

fn write_row(row: &mut [f64], live: &[Live], lo: i64) {
    for c in live {
        let a = (c.lo - lo) as usize;
        let b = (c.hi - lo) as usize;
        row[a..=b].fill(c.pos);
    }
}

struct Builder {
    domain: Domain,
    variant: Variant,
    events: Vec<MergeEvent>,
    mass_jumps: Vec<Vec<(usize, u32)>>,
    next_id: ClusterId,
    stack: Vec<Pending>,
    scratch: Vec<Live>,
}

impl Builder {
    /// Merges touching/crossing neighbours (and forced boundaries) until
    /// cluster positions are strictly increasing. `force[j]` marks the boundary
    /// between `live[j]` and `live[j + 1]`.
    fn merge_pass(&mut self, live: &mut Vec<Live>, grid_index: usize, force: &[bool]) {
        self.stack.clear();
        for (j, c) in live.iter().enumerate() {
            self.stack.push(Pending {
                first: j,
                last: j,
                lo: c.lo,
                hi: c.hi,
                mass: c.mass,
                rep: c.rep,
                pos: c.pos,
                bridged: false,
            });
            while self.stack.len() >= 2 {
                let b = self.stack[self.stack.len() - 1];
                let a = self.stack[self.stack.len() - 2];
                let forced = force.get(a.last).copied().unwrap_or(false) && b.first == a.last + 1;
                if !(a.pos >= b.pos || forced) {
                    break;
                }
                let rep = representative_unchecked(a.lo, b.hi, &self.domain, self.variant);
                debug_assert!(rep == a.rep || rep == b.rep);
                let pos = if rep == a.rep { a.pos } else { b.pos };
                self.stack.pop();
                let top = self.stack.last_mut().expect("stack holds a");
                *top = Pending {
                    first: a.first,
                    last: b.last,
                    lo: a.lo,
                    hi: b.hi,
                    mass: a.mass + b.mass,
                    rep,
                    pos,
                    bridged: a.bridged || b.bridged || (forced && a.pos < b.pos),
                };
            }
        }

        self.scratch.clear();
        for p in &self.stack {
            if p.first == p.last {
                self.scratch.push(live[p.first]);
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let parts = &live[p.first..=p.last];
            let snapped = parts
                .iter()
                .filter(|c| !(c.lo <= p.rep && p.rep <= c.hi))
                .map(|c| Snap {
                    cluster: c.id,
                    lo: c.lo,
                    hi: c.hi,
                    pre_merge_position: c.pos,
                })
                .collect();
            self.events.push(MergeEvent {
                grid_index,
                merged: parts.iter().map(|c| c.id).collect(),
                left_cluster: parts[0].id,
                right_cluster: parts[parts.len() - 1].id,
                new_cluster: id,
                lo: p.lo,
                hi: p.hi,
                new_mass: p.mass,
                new_representative: p.rep,
                position: p.pos,
                snapped,
                bridge_triggered: p.bridged,
            });
            for k in p.lo..=p.hi {
                self.mass_jumps[(k - self.domain.lo) as usize].push((grid_index, p.mass));
            }
            let prev = live[(p.first..=p.last)
                .find(|&j| live[j].lo <= p.rep && p.rep <= live[j].hi)
                .expect("representative belongs to a part")]
            .prev;
            self.scratch.push(Live {
                id,
                lo: p.lo,
                hi: p.hi,
                mass: p.mass,
                rep: p.rep,
                scale: (p.mass as f64).sqrt().recip(),
                pos: p.pos,
                prev,
            });
        }
        std::mem::swap(live, &mut self.scratch);
    }
}

impl FlowRealization {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    pub fn events(&self) -> &[MergeEvent] {
        &self.events
    }

    /// All positions at grid index `i`, ordered by particle index.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.domain.len();
        &self.positions[i * n..(i + 1) * n]
    }

    /// Positions at grid time `t` (no interpolation).
    pub fn row_at(&self, t: f64) -> Result<&[f64]> {
        Ok(self.row(self.grid.index_of(t)?))
    }

    pub fn position(&self, k: i64, i: usize) -> Result<f64> {
        let idx = self.domain.check(k)?;
        Ok(self.positions[i * self.domain.len() + idx])
    }

    pub fn path(&self, k: i64) -> Result<Vec<f64>> {
        let idx = self.domain.check(k)?;
        let n = self.domain.len();
        Ok(self.positions.iter().skip(idx).step_by(n).copied().collect())
    }

    pub fn mass_at_index(&self, k: i64, i: usize) -> Result<u32> {
        let idx = self.domain.check(k)?;
        Ok(self.mass_jumps[idx]
            .iter()
            .take_while(|(at, _)| *at <= i)
            .last()
            .map_or(1, |&(_, m)| m))
    }

    /// Mass step-function `m_k(t)`, right-continuous.
    pub fn mass_at(&self, k: i64, t: f64) -> Result<u32> {
        self.domain.check(k)?;
        self.check_time(t)?;
        self.mass_at_index(k, self.grid.floor_index(t))
    }

    /// `sum over t_i < t of min(dt, t - t_i) / m_k(t_i)`.
    pub fn quadratic_variation(&self, k: i64, t: f64) -> Result<f64> {
        let idx = self.domain.check(k)?;
        self.check_time(t)?;
        let jumps = &self.mass_jumps[idx];
        let dt = self.grid.dt();
        let mut mass = 1u32;
        let mut next = 0;
        let mut total = 0.0;
        for i in 0..self.grid.steps() {
            let ti = self.grid.time(i);
            if ti >= t {
                break;
            }
            while next < jumps.len() && jumps[next].0 <= i {
                mass = jumps[next].1;
                next += 1;
            }
            total += dt.min(t - ti) / mass as f64;
        }
        Ok(total)
    }

    /// Realized `sum_i (X_k(t_{i+1}) - X_k(t_i))^2` over the whole grid.
    pub fn realized_quadratic_variation(&self, k: i64) -> Result<f64> {
        let path = self.path(k)?;
        Ok(path.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum())
    }

    /// First grid index at which particles `k` and `l` share a position.
    pub fn first_meeting_index(&self, k: i64, l: i64) -> Result<Option<usize>> {
        let a = self.domain.check(k)?;
        let b = self.domain.check(l)?;
        let n = self.domain.len();
        Ok((0..=self.grid.steps()).find(|&i| self.positions[i * n + a] == self.positions[i * n + b]))
    }

    /// Position `k` would have had at grid index `i` had it not snapped onto a
    /// representative there; `None` if `k` did not snap at `i`.
    pub fn pre_merge_position(&self, k: i64, i: usize) -> Result<Option<f64>> {
        self.domain.check(k)?;
        Ok(self
            .events
            .iter()
            .filter(|e| e.grid_index == i)
            .flat_map(|e| e.snapped.iter())
            .find(|s| s.lo <= k && k <= s.hi)
            .map(|s| s.pre_merge_position))
    }

    /// Realized cross-variation `sum_i dX_k dX_l` stopped at the first grid
    /// index where the two meet; the final increment uses pre-snap positions.
    pub fn stopped_cross_variation(&self, k: i64, l: i64) -> Result<f64> {
        let meet = self.first_meeting_index(k, l)?.unwrap_or(self.grid.steps());
        let xk = self.path(k)?;
        let xl = self.path(l)?;
        let mut total = 0.0;
        for i in 0..meet {
            let (mut ak, mut al) = (xk[i + 1], xl[i + 1]);
            if i + 1 == meet {
                if let Some(p) = self.pre_merge_position(k, meet)? {
                    ak = p;
                }
                if let Some(p) = self.pre_merge_position(l, meet)? {
                    al = p;
                }
            }
            total += (ak - xk[i]) * (al - xl[i]);
        }
        Ok(total)
    }

    /// Replays the merge history up to and including grid index `i`.
    pub fn partition_at(&self, i: usize) -> ClusterPartition {
        let lo = self.domain.lo;
        let mut clusters: Vec<ClusterInfo> = (self.domain.lo..=self.domain.hi)
            .enumerate()
            .map(|(idx, k)| ClusterInfo {
                id: idx as ClusterId,
                lo: k,
                hi: k,
                mass: 1,
                representative: k,
            })
            .collect();
        for e in self.events.iter().take_while(|e| e.grid_index <= i) {
            let first = clusters.iter().position(|c| c.lo == e.lo).unwrap_or(0);
            let last = clusters.iter().position(|c| c.hi == e.hi).unwrap_or(first);
            clusters.splice(
                first..=last,
                std::iter::once(ClusterInfo {
                    id: e.new_cluster,
                    lo: e.lo,
                    hi: e.hi,
                    mass: e.new_mass,
                    representative: e.new_representative,
                }),
            );
        }
        let mut assignment = vec![0; self.domain.len()];
        for c in &clusters {
            for k in c.lo..=c.hi {
                assignment[(k - lo) as usize] = c.id;
            }
        }
        ClusterPartition { assignment, clusters }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.grid.horizon()).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.grid.horizon(),
            });
        }
        Ok(())
    }

    /// Counts of structural violations over every grid point; all zero for a valid realization.
    pub fn structural_check(&self) -> StructuralCheck {
        let n = self.domain.len();
        let mut out = StructuralCheck::default();
        for i in 0..=self.grid.steps() {
            let row = self.row(i);
            out.ordering += row.windows(2).filter(|w| w[0] > w[1]).count();
            if i > 0 {
                let prev = self.row(i - 1);
                out.permanence += (0..n.saturating_sub(1))
                    .filter(|&a| prev[a] == prev[a + 1] && row[a] != row[a + 1])
                    .count();
            }
        }
        // replay events independently of `partition_at`
        let mut cluster_of: Vec<(i64, i64)> = (self.domain.lo..=self.domain.hi).map(|k| (k, k)).collect();
        let mut last_index = 0;
        for e in &self.events {
            if e.grid_index < last_index {
                out.event_order += 1;
            }
            last_index = e.grid_index;
            let a = (e.lo - self.domain.lo) as usize;
            let b = (e.hi - self.domain.lo) as usize;
            // the event must be a union of whole existing clusters
            if cluster_of[a].0 != e.lo || cluster_of[b].1 != e.hi {
                out.contiguity += 1;
            }
            if e.new_mass as i64 != e.hi - e.lo + 1 || e.merged.len() < 2 {
                out.conservation += 1;
            }
            for c in &mut cluster_of[a..=b] {
                *c = (e.lo, e.hi);
            }
        }
        for i in 0..=self.grid.steps() {
            let row = self.row(i);
            let partition = self.partition_at(i);
            let total: u64 = partition.clusters.iter().map(|c| c.mass as u64).sum();
            if total != n as u64 {
                out.conservation += 1;
            }
            for c in &partition.clusters {
                let a = (c.lo - self.domain.lo) as usize;
                let b = (c.hi - self.domain.lo) as usize;
                if row[a..=b].iter().any(|&x| x != row[a]) {
                    out.contiguity += 1;
                }
                if c.mass as i64 != c.hi - c.lo + 1 {
                    out.conservation += 1;
                }
            }
            for w in partition.clusters.windows(2) {
                let a = (w[0].hi - self.domain.lo) as usize;
                if row[a] >= row[a + 1] {
                    out.ordering += 1;
                }
            }
        }
        for jumps in &self.mass_jumps {
            if jumps.windows(2).any(|w| w[0].1 > w[1].1 || w[0].0 > w[1].0)
                || jumps.first().is_some_and(|j| j.1 < 1)
            {
                out.mass_monotonicity += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralCheck {
    pub ordering: usize,
    pub permanence: usize,
    pub contiguity: usize,
    pub conservation: usize,
    pub event_order: usize,
    pub mass_monotonicity: usize,
}

impl StructuralCheck {
    pub fn total(&self) -> usize {
        self.ordering + self.permanence + self.contiguity + self.conservation + self.event_order + self.mass_monotonicity
    }
}
