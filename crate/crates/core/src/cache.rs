//! Position-keyed octree of radiance statistics.

use serde::{Deserialize, Serialize};

use crate::math::{Rgb, Vec3};
use crate::rrs::strategy::{RadianceSource, ShadingEvent};
use crate::scene::{Aabb, Intersection, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RadianceStats {
    pub count: u64,
    pub mean: [f64; 3],
    pub second_moment: [f64; 3],
}

impl RadianceStats {
    pub fn push(&mut self, x: [f64; 3]) {
        self.count += 1;
        let n = self.count as f64;
        for c in 0..3 {
            self.mean[c] += (x[c] - self.mean[c]) / n;
            self.second_moment[c] += (x[c] * x[c] - self.second_moment[c]) / n;
        }
    }

    pub fn merge(&self, other: &RadianceStats) -> RadianceStats {
        let n = self.count + other.count;
        if n == 0 {
            return RadianceStats::default();
        }
        let (a, b) = (self.count as f64 / n as f64, other.count as f64 / n as f64);
        let mut out = RadianceStats {
            count: n,
            ..Default::default()
        };
        for c in 0..3 {
            out.mean[c] = a * self.mean[c] + b * other.mean[c];
            out.second_moment[c] = a * self.second_moment[c] + b * other.second_moment[c];
        }
        out
    }

    pub fn mean_rgb(&self) -> Rgb {
        Rgb::new(self.mean[0] as f32, self.mean[1] as f32, self.mean[2] as f32)
    }

    pub fn variance_rgb(&self) -> Rgb {
        let v = |c: usize| (self.second_moment[c] - self.mean[c] * self.mean[c]).max(0.0) as f32;
        Rgb::new(v(0), v(1), v(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OctreeConfig {
    pub split_threshold: u64,
    pub max_depth: u32,
}

impl Default for OctreeConfig {
    fn default() -> Self {
        Self {
            split_threshold: 512,
            max_depth: 12,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    depth: u32,
    stats: RadianceStats,
    /// Index of the first of eight consecutive children.
    children: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct OctreeCache {
    config: OctreeConfig,
    nodes: Vec<Node>,
    rejected: u64,
    pending: Vec<(Vec3, Rgb)>,
}

impl OctreeCache {
    pub fn new(bounds: Aabb, config: OctreeConfig) -> Self {
        // pad degenerate axes so every point has a cell
        let pad = Vec3::splat(1e-4);
        let bounds = Aabb {
            min: bounds.min - pad,
            max: bounds.max + pad,
        };
        Self {
            config,
            nodes: vec![Node {
                bounds,
                depth: 0,
                stats: RadianceStats::default(),
                children: None,
            }],
            rejected: 0,
            pending: Vec::new(),
        }
    }

    pub fn for_scene(scene: &Scene, config: OctreeConfig) -> Self {
        Self::new(scene.bounds(), config)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    fn clamp(&self, p: Vec3) -> Vec3 {
        let b = self.nodes[0].bounds;
        p.max(b.min).min(b.max)
    }

    /// Child slot of `p` in `bounds`; points on a split plane go to the
    /// lower half.
    fn octant(bounds: &Aabb, p: Vec3) -> usize {
        let c = bounds.centre();
        (p.x > c.x) as usize | ((p.y > c.y) as usize) << 1 | ((p.z > c.z) as usize) << 2
    }

    fn child_bounds(bounds: &Aabb, octant: usize) -> Aabb {
        let c = bounds.centre();
        let pick = |bit: bool, lo: f32, mid: f32, hi: f32| if bit { (mid, hi) } else { (lo, mid) };
        let (x0, x1) = pick(octant & 1 != 0, bounds.min.x, c.x, bounds.max.x);
        let (y0, y1) = pick(octant & 2 != 0, bounds.min.y, c.y, bounds.max.y);
        let (z0, z1) = pick(octant & 4 != 0, bounds.min.z, c.z, bounds.max.z);
        Aabb {
            min: Vec3::new(x0, y0, z0),
            max: Vec3::new(x1, y1, z1),
        }
    }

    pub fn insert(&mut self, position: Vec3, sample: Rgb) {
        if !sample.is_finite() || !position.is_finite() {
            self.rejected += 1;
            return;
        }
        let p = self.clamp(position);
        let x = [sample.r as f64, sample.g as f64, sample.b as f64];
        let mut idx = 0usize;
        loop {
            self.nodes[idx].stats.push(x);
            match self.nodes[idx].children {
                Some(first) => {
                    let o = Self::octant(&self.nodes[idx].bounds, p);
                    idx = first as usize + o;
                }
                None => {
                    let node = &self.nodes[idx];
                    if node.stats.count > self.config.split_threshold && node.depth < self.config.max_depth {
                        let first = self.nodes.len() as u32;
                        let (bounds, depth) = (node.bounds, node.depth);
                        for o in 0..8 {
                            self.nodes.push(Node {
                                bounds: Self::child_bounds(&bounds, o),
                                depth: depth + 1,
                                stats: RadianceStats::default(),
                                children: None,
                            });
                        }
                        self.nodes[idx].children = Some(first);
                    }
                    return;
                }
            }
        }
    }

    /// Queue a sample; it becomes visible after [`Self::flush`].
    pub fn buffer(&mut self, position: Vec3, sample: Rgb) {
        self.pending.push((position, sample));
    }

    pub fn flush(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        for (p, s) in pending {
            self.insert(p, s);
        }
    }

    /// Statistics of the deepest populated node containing `position`.
    pub fn query(&self, position: Vec3) -> RadianceStats {
        let p = self.clamp(position);
        let mut idx = 0usize;
        let mut best = self.nodes[0].stats;
        while let Some(first) = self.nodes[idx].children {
            idx = first as usize + Self::octant(&self.nodes[idx].bounds, p);
            if self.nodes[idx].stats.count == 0 {
                break;
            }
            best = self.nodes[idx].stats;
        }
        best
    }

    /// Cached mean radiance at each pixel's primary hit, for inspection.
    pub fn debug_image(&self, scene: &Scene) -> Vec<Rgb> {
        let cam = &scene.camera;
        (0..cam.pixel_count())
            .map(|px| {
                let ray = cam.generate_ray(px as u32, [0.5, 0.5]);
                match scene.intersect_unchecked(&ray) {
                    Intersection::Hit(it) => self.query(it.position).mean_rgb(),
                    Intersection::Miss { .. } => Rgb::BLACK,
                }
            })
            .collect()
    }
}

impl RadianceSource for OctreeCache {
    fn mean_radiance(&self, events: &[ShadingEvent]) -> Vec<Rgb> {
        events.iter().map(|e| self.query(e.position).mean_rgb()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn unit_cache(threshold: u64) -> OctreeCache {
        OctreeCache::new(
            Aabb {
                min: Vec3::ZERO,
                max: Vec3::splat(1.0),
            },
            OctreeConfig {
                split_threshold: threshold,
                max_depth: 4,
            },
        )
    }

    #[test]
    fn empty_tree_returns_prior() {
        let c = unit_cache(4);
        let s = c.query(Vec3::splat(0.3));
        assert_eq!(s.count, 0);
        assert_eq!(s.mean_rgb(), Rgb::BLACK);
    }

    #[test]
    fn identical_samples_have_zero_variance() {
        let mut c = unit_cache(1000);
        for _ in 0..50 {
            c.insert(Vec3::splat(0.5), Rgb::new(0.25, 1.5, 3.0));
        }
        let s = c.query(Vec3::splat(0.9));
        assert_eq!(s.count, 50);
        assert!((s.mean_rgb() - Rgb::new(0.25, 1.5, 3.0)).max_component().abs() < 1e-6);
        assert!(s.variance_rgb().max_component() < 1e-9);
    }

    #[test]
    fn two_point_statistics() {
        let mut c = unit_cache(1000);
        c.insert(Vec3::splat(0.2), Rgb::BLACK);
        c.insert(Vec3::splat(0.2), Rgb::splat(2.0));
        let s = c.query(Vec3::splat(0.2));
        assert!((s.mean[0] - 1.0).abs() < 1e-12);
        assert!((s.second_moment[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let mut c = unit_cache(10);
        c.insert(Vec3::splat(0.5), Rgb::splat(f32::NAN));
        assert_eq!(c.rejected(), 1);
        assert_eq!(c.query(Vec3::splat(0.5)).count, 0);
    }

    #[test]
    fn boundary_points_go_to_the_lower_child() {
        let mut c = unit_cache(1);
        // two samples split the root; later samples land in children
        c.insert(Vec3::splat(0.1), Rgb::splat(1.0));
        c.insert(Vec3::splat(0.1), Rgb::splat(1.0));
        assert_eq!(c.node_count(), 9);
        c.insert(Vec3::splat(0.9), Rgb::splat(5.0));
        c.insert(Vec3::splat(0.5), Rgb::splat(3.0));
        let centre = c.root_bounds().centre();
        // the centre belongs to octant 0, which holds only the value 3
        let s = c.query(centre);
        assert_eq!(s.count, 1);
        assert_eq!(s.mean[0], 3.0);
    }

    #[test]
    fn node_means_match_flat_recomputation() {
        let mut c = unit_cache(64);
        let mut rng = RngStream::new(5, 1);
        let mut samples = Vec::new();
        // node id -> index of the first insert that can reach it
        let mut born = vec![0usize];
        for i in 0..1000 {
            let p = Vec3::new(rng.next_f32(), rng.next_f32(), rng.next_f32());
            let v = rng.next_f32() * 4.0;
            samples.push((p, v as f64));
            c.insert(p, Rgb::splat(v));
            born.resize(c.node_count(), i + 1);
        }
        assert!(c.node_count() > 9);
        for (id, node) in c.nodes.iter().enumerate() {
            let b = node.bounds;
            let inside = |p: Vec3| (0..3).all(|k| p[k] >= b.min[k] && p[k] <= b.max[k]);
            let vals: Vec<f64> = samples[born[id]..].iter().filter(|s| inside(s.0)).map(|s| s.1).collect();
            assert_eq!(node.stats.count as usize, vals.len(), "node {id}");
            if !vals.is_empty() {
                let flat = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!((node.stats.mean[0] - flat).abs() < 1e-5, "node {id}");
            }
        }
    }

    proptest! {
        #[test]
        fn merge_is_associative(xs in proptest::collection::vec(0.0f64..10.0, 3..60), cut1 in 0usize..60, cut2 in 0usize..60) {
            let n = xs.len();
            let (a, b) = (cut1.min(n), cut2.min(n));
            let (lo, hi) = (a.min(b), a.max(b));
            let stats = |s: &[f64]| {
                let mut r = RadianceStats::default();
                for &x in s { r.push([x, x, x]); }
                r
            };
            let all = stats(&xs);
            let left = stats(&xs[..lo]).merge(&stats(&xs[lo..hi])).merge(&stats(&xs[hi..]));
            let right = stats(&xs[..lo]).merge(&stats(&xs[lo..hi]).merge(&stats(&xs[hi..])));
            for r in [left, right] {
                prop_assert_eq!(r.count, all.count);
                prop_assert!((r.mean[0] - all.mean[0]).abs() <= 1e-5 * all.mean[0].abs().max(1.0));
                prop_assert!((r.second_moment[0] - all.second_moment[0]).abs() <= 1e-5 * all.second_moment[0].abs().max(1.0));
            }
        }
    }
}
