//! Staged, queue-based path tracing.
//!
//! Every depth runs the same stages over a whole queue: intersect, dispatch
//! into surface / light / miss partitions, evaluate RRS factors for the
//! surface hits, then scatter children and shadow rays into the next queue.

mod engine;
mod film;

pub use engine::{Engine, EngineConfig, FrameOutput, FrameReport, TrainSample};
pub use film::Film;

use crate::math::{Rgb, Vec3};
use crate::scene::{Intersection, Ray};

/// One in-flight prefix path.
#[derive(Debug, Clone, Copy)]
pub struct PathState {
    pub pixel: u32,
    /// Number of the surface vertex this ray is about to find (camera rays
    /// are depth 1).
    pub depth: u32,
    pub ray: Ray,
    /// Prefix throughput `g(x) / p(x)`, including RRS compensation.
    pub weight: Rgb,
    /// Key of this path's random streams.
    pub lineage: u64,
    /// Realized factor that spawned this path (1 for camera paths).
    pub factor: f32,
    pub prev_position: Vec3,
    pub prev_bsdf_pdf: f32,
    pub prev_specular: bool,
    /// Index of this path's training record, if recording.
    pub record: u32,
}

/// A queue whose storage is allocated once; pushing past capacity fails
/// instead of growing.
#[derive(Debug, Clone)]
pub struct WorkQueue<T> {
    items: Vec<T>,
    capacity: usize,
}

impl<T> WorkQueue<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.items.len()
    }

    /// Hands the item back when the queue is full.
    pub fn push(&mut self, item: T) -> Result<(), T> {
        if self.items.len() >= self.capacity {
            return Err(item);
        }
        self.items.push(item);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn as_slice(&self) -> &[T] {
        &self.items
    }
}

/// Queue slack on top of the pixel budget.
pub fn queue_capacity(npx: usize) -> usize {
    npx + npx.div_ceil(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitKind {
    /// Scattering surface.
    Surface,
    /// Emitter that does not scatter.
    Light,
    Miss,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub surface: Vec<u32>,
    pub light: Vec<u32>,
    pub miss: Vec<u32>,
}

impl Partition {
    pub fn total(&self) -> usize {
        self.surface.len() + self.light.len() + self.miss.len()
    }
}

pub fn classify(hit: &Intersection, scatters: impl Fn(u32) -> bool) -> HitKind {
    match hit {
        Intersection::Miss { .. } => HitKind::Miss,
        Intersection::Hit(it) if scatters(it.material) => HitKind::Surface,
        Intersection::Hit(_) => HitKind::Light,
    }
}

/// Split queue entries by what their ray found; indices keep queue order.
pub fn dispatch(hits: &[Intersection], scatters: impl Fn(u32) -> bool) -> Partition {
    let mut p = Partition::default();
    for (i, h) in hits.iter().enumerate() {
        match classify(h, &scatters) {
            HitKind::Surface => p.surface.push(i as u32),
            HitKind::Light => p.light.push(i as u32),
            HitKind::Miss => p.miss.push(i as u32),
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::scene::{builtin_scene, BuiltinScene};

    #[test]
    fn queue_never_grows() {
        let mut q = WorkQueue::with_capacity(2);
        assert!(q.push(1).is_ok());
        assert!(q.push(2).is_ok());
        assert_eq!(q.push(3), Err(3));
        assert_eq!(q.len(), 2);
        q.clear();
        assert_eq!(q.remaining(), 2);
        assert_eq!(queue_capacity(100), 113);
        assert_eq!(queue_capacity(8), 9);
    }

    #[test]
    fn all_misses_go_to_the_miss_partition() {
        let hits = vec![Intersection::Miss { emission: Rgb::BLACK }; 7];
        let p = dispatch(&hits, |_| true);
        assert_eq!(p.miss.len(), 7);
        assert_eq!(p.total(), 7);
    }

    #[test]
    fn partition_matches_per_path_classification() {
        let scene = builtin_scene(BuiltinScene::Cornell, 8, 8);
        let mut rng = RngStream::new(3, 3);
        let hits: Vec<Intersection> = (0..2000)
            .map(|_| {
                let o = Vec3::new(rng.next_f32(), rng.next_f32(), rng.next_f32());
                let d = Vec3::new(rng.next_f32() - 0.5, rng.next_f32() - 0.5, rng.next_f32() - 0.5);
                scene.intersect(&Ray::new(o, d)).unwrap()
            })
            .collect();
        let scatters = |m: u32| scene.material(m).scatters();
        let p = dispatch(&hits, scatters);
        assert_eq!(p.total(), hits.len());
        assert!(!p.surface.is_empty() && !p.light.is_empty() && !p.miss.is_empty());
        for (list, kind) in [(&p.surface, HitKind::Surface), (&p.light, HitKind::Light), (&p.miss, HitKind::Miss)] {
            for &i in list {
                assert_eq!(classify(&hits[i as usize], scatters), kind);
            }
        }
    }
}
