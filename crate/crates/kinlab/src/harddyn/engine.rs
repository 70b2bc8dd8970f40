//! Event queue and executor behind [`evolve_hard`](super::evolve_hard).
//!
//! The engine runs the classic event-driven scheme: predict the next contact
//! per pair, keep predictions in a min-time priority queue, execute the
//! earliest one, and re-predict only for the two particles whose velocities
//! changed.  Stale queue entries are detected by per-particle collision
//! counters ("stamps") captured at prediction time, so invalidation costs
//! nothing at collision time and stale entries are simply discarded on pop.
//!
//! Positions are advanced lazily: each particle stores the coordinates it had
//! at the time of its own last update, and is extrapolated along its current
//! velocity whenever its position at a later time is needed.  On the torus a
//! pair prediction is only trusted within the time window in which the
//! minimum-image partner cannot change (no other periodic image can close the
//! gap); a pair whose flight exceeds the window gets a re-prediction event at
//! the window edge instead of a contact.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::core::{torus_wrap, wrap_displacement, Configuration, Geometry, PhasePoint};
use crate::vec;

use super::{
    contact_root, elastic_reflect, CollisionEvent, HardDynError, TrajectoryLog, MAX_EVENTS,
    SIMULTANEITY_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Contact,
    Recheck,
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::Contact => 0,
            EventKind::Recheck => 1,
        }
    }
}

/// A scheduled queue entry.  The stamps freeze the collision counts of both
/// particles at prediction time; if either particle collides before the entry
/// is popped, the entry no longer describes the dynamics and is dropped.
#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    i: u32,
    j: u32,
    stamp_i: u32,
    stamp_j: u32,
    kind: EventKind,
}

impl Pending {
    /// Total order: time first, then a deterministic tie-break so that
    /// simultaneous events execute in ascending pair order regardless of heap
    /// internals.
    fn order(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.i.cmp(&other.i))
            .then_with(|| self.j.cmp(&other.j))
            .then_with(|| self.kind.rank().cmp(&other.kind.rank()))
            .then_with(|| self.stamp_i.cmp(&other.stamp_i))
            .then_with(|| self.stamp_j.cmp(&other.stamp_j))
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.order(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.order(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order(other)
    }
}

pub(super) struct Engine<const D: usize> {
    geometry: Geometry,
    eps: f64,
    t_end: f64,
    x: Vec<[f64; D]>,
    v: Vec<[f64; D]>,
    /// Time at which `x[p]` was last written; positions at later times are
    /// extrapolated as `x[p] + (t - synced_at[p]) * v[p]`.
    synced_at: Vec<f64>,
    stamp: Vec<u32>,
    queue: BinaryHeap<Reverse<Pending>>,
    log: TrajectoryLog<D>,
    collisions: u64,
}

impl<const D: usize> Engine<D> {
    pub(super) fn run(
        cfg: &Configuration<D>,
        t: f64,
    ) -> Result<(Configuration<D>, TrajectoryLog<D>), HardDynError> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(HardDynError::InvalidParam(format!(
                "evolution time must be finite and nonnegative, got {t}"
            )));
        }
        cfg.check_hard_core()?;
        let n = cfg.points.len();
        let mut engine = Engine {
            geometry: cfg.geometry,
            eps: cfg.diameter,
            t_end: t,
            x: cfg.points.iter().map(|p| p.x).collect(),
            v: cfg.points.iter().map(|p| p.v).collect(),
            synced_at: vec![0.0; n],
            stamp: vec![0; n],
            queue: BinaryHeap::new(),
            log: TrajectoryLog::default(),
            collisions: 0,
        };
        for i in 0..n {
            for j in (i + 1)..n {
                engine.predict(i, j, 0.0);
            }
        }
        while let Some(Reverse(ev)) = engine.queue.pop() {
            debug_assert!(ev.time <= engine.t_end);
            if engine.stamp[ev.i as usize] != ev.stamp_i
                || engine.stamp[ev.j as usize] != ev.stamp_j
            {
                continue;
            }
            match ev.kind {
                EventKind::Recheck => {
                    engine.predict(ev.i as usize, ev.j as usize, ev.time);
                }
                EventKind::Contact => engine.execute(&ev)?,
            }
        }
        engine.finish(cfg)
    }

    /// Position of particle `p` extrapolated to time `t >= synced_at[p]`.
    #[inline]
    fn position_at(&self, p: usize, t: f64) -> [f64; D] {
        vec::axpy(self.x[p], t - self.synced_at[p], self.v[p])
    }

    /// Relative position `x_i - x_j` (minimum image on the torus) at time `t`.
    #[inline]
    fn relative_position(&self, i: usize, j: usize, t: f64) -> [f64; D] {
        let d = vec::sub(self.position_at(i, t), self.position_at(j, t));
        match self.geometry {
            Geometry::Torus => wrap_displacement(d),
            Geometry::FreeSpace => d,
        }
    }

    /// Predicts the next event for pair `(i, j)` looking forward from `from`,
    /// and schedules it.  Returns the contact time if a contact was scheduled
    /// (used by the caller to detect simultaneous multi-particle contacts).
    fn predict(&mut self, i: usize, j: usize, from: f64) -> Option<f64> {
        let remaining = self.t_end - from;
        if remaining <= 0.0 {
            return None;
        }
        let w = vec::sub(self.v[i], self.v[j]);
        let wn2 = vec::norm_sq(w);
        if wn2 == 0.0 {
            return None;
        }
        let wn = wn2.sqrt();
        let r = self.relative_position(i, j, from);
        // The minimum image is the nearest periodic copy, so no copy can come
        // within reach before the horizon if this bound fails.
        if vec::norm(r) - self.eps > wn * remaining {
            return None;
        }
        // Window in which the minimum image cannot change identity: every
        // other periodic copy starts at distance >= 1/2 and needs at least
        // (1/2 - eps)/|w| to reach contact.
        let window = match self.geometry {
            Geometry::Torus => (0.5 - self.eps) / wn,
            Geometry::FreeSpace => f64::INFINITY,
        };
        let seg = window.min(remaining);
        if let Some(root) = contact_root(r, w, self.eps) {
            if root <= seg {
                let time = from + root;
                self.push(i, j, time, EventKind::Contact);
                return Some(time);
            }
        }
        if seg < remaining {
            self.push(i, j, from + seg, EventKind::Recheck);
        }
        None
    }

    fn push(&mut self, i: usize, j: usize, time: f64, kind: EventKind) {
        self.queue.push(Reverse(Pending {
            time,
            i: i as u32,
            j: j as u32,
            stamp_i: self.stamp[i],
            stamp_j: self.stamp[j],
            kind,
        }));
    }

    fn execute(&mut self, ev: &Pending) -> Result<(), HardDynError> {
        let (i, j) = (ev.i as usize, ev.j as usize);
        let t_e = ev.time;
        for p in [i, j] {
            let pos = self.position_at(p, t_e);
            self.x[p] = match self.geometry {
                Geometry::Torus => torus_wrap(pos),
                Geometry::FreeSpace => pos,
            };
            self.synced_at[p] = t_e;
        }
        let mut t_c = t_e;
        let mut r = self.relative_position(i, j, t_c);
        let mut dist = vec::norm(r);
        // The scheduled time carries the ulps of order-one coordinates, so the
        // raw distance can miss ε by ~1e-14 absolute.  One Newton step on the
        // pair separation removes that, leaving only fresh representation
        // error; anything a polish this small cannot fix is a genuine defect
        // that the strict check below must surface.
        let radial = vec::dot(r, vec::sub(self.v[i], self.v[j])) / dist;
        if radial != 0.0 {
            let dt = (self.eps - dist) / radial;
            if dt.is_finite() && dt != 0.0 && dt.abs() <= 1e-9 {
                t_c = t_e + dt;
                for p in [i, j] {
                    let pos = vec::axpy(self.x[p], dt, self.v[p]);
                    self.x[p] = match self.geometry {
                        Geometry::Torus => torus_wrap(pos),
                        Geometry::FreeSpace => pos,
                    };
                    self.synced_at[p] = t_c;
                }
                r = self.relative_position(i, j, t_c);
                dist = vec::norm(r);
            }
        }
        // Contact must hold to 1e-12 relative; the small absolute floor
        // covers the ulps of order-one coordinates entering the difference.
        if (dist - self.eps).abs() > self.eps * 1e-12 + 1e-15 {
            return Err(HardDynError::NumericFailure(format!(
                "pair ({i}, {j}) executed at distance {dist} instead of {} at t = {t_c}",
                self.eps
            )));
        }
        let nu = vec::scale(r, 1.0 / dist);
        let c = vec::dot(nu, vec::sub(self.v[i], self.v[j]));
        if c >= 0.0 {
            return Err(HardDynError::NumericFailure(format!(
                "pair ({i}, {j}) no longer approaching at execution (nu.w = {c}, t = {t_c})"
            )));
        }
        let (vi_post, vj_post) = elastic_reflect(self.v[i], self.v[j], nu)?;
        self.log.events.push(CollisionEvent {
            time: t_c,
            i,
            j,
            normal: nu,
            v_i_pre: self.v[i],
            v_j_pre: self.v[j],
            v_i_post: vi_post,
            v_j_post: vj_post,
        });
        self.v[i] = vi_post;
        self.v[j] = vj_post;
        self.stamp[i] = self.stamp[i].wrapping_add(1);
        self.stamp[j] = self.stamp[j].wrapping_add(1);
        self.collisions += 1;
        if self.collisions > MAX_EVENTS {
            return Err(HardDynError::EventBudget {
                events: self.collisions,
            });
        }
        let n = self.x.len();
        for k in 0..n {
            if k != i {
                self.repredict_checked(i.min(k), i.max(k), t_c, i, j)?;
            }
        }
        for k in 0..n {
            if k != j && k != i {
                self.repredict_checked(j.min(k), j.max(k), t_c, i, j)?;
            }
        }
        Ok(())
    }

    /// Re-predicts a pair after a collision at `t_e`.  A fresh contact within
    /// the simultaneity window means a third particle stands at contact
    /// distance at the same instant — the measure-zero pathology the caller
    /// must abort on, since no execution order is physically meaningful.
    fn repredict_checked(
        &mut self,
        p: usize,
        q: usize,
        t_e: f64,
        i: usize,
        j: usize,
    ) -> Result<(), HardDynError> {
        if let Some(tc) = self.predict(p, q, t_e) {
            if tc - t_e <= SIMULTANEITY_WINDOW && (p, q) != (i.min(j), i.max(j)) {
                let third = if p == i || p == j { q } else { p };
                return Err(HardDynError::TripleContact {
                    time: t_e,
                    a: i,
                    b: j,
                    c: third,
                });
            }
        }
        Ok(())
    }

    fn finish(
        self,
        cfg: &Configuration<D>,
    ) -> Result<(Configuration<D>, TrajectoryLog<D>), HardDynError> {
        let n = self.x.len();
        let mut points = Vec::with_capacity(n);
        for p in 0..n {
            let pos = self.position_at(p, self.t_end);
            let x = match self.geometry {
                Geometry::Torus => torus_wrap(pos),
                Geometry::FreeSpace => pos,
            };
            points.push(PhasePoint::new(x, self.v[p]));
        }
        let out = Configuration::new(points, cfg.diameter, cfg.geometry)?;
        Ok((out, self.log))
    }
}
