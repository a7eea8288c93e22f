//! Binned-SAH bounding volume hierarchy over triangles.

use crate::math::Vec3;

use super::{Ray, Triangle};

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::splat(f32::INFINITY),
        max: Vec3::splat(f32::NEG_INFINITY),
    };

    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn centre(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn surface_area(&self) -> f32 {
        let e = self.extent();
        if e.x < 0.0 {
            return 0.0;
        }
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    /// Slab test; returns the entry distance if the box is hit before `t_max`.
    #[inline]
    fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f32) -> Option<f32> {
        let mut t0 = 0.0f32;
        let mut t1 = t_max;
        for a in 0..3 {
            let ta = (self.min[a] - origin[a]) * inv_dir[a];
            let tb = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            // NaN from 0 * inf falls through max/min and leaves the slab open
            t0 = if lo > t0 { lo } else { t0 };
            t1 = if hi < t1 { hi } else { t1 };
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive index. Interior: index of the right child
    /// (the left child directly follows its parent).
    offset: u32,
    /// Zero for interior nodes.
    count: u32,
    axis: u8,
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle ids in leaf order.
    pub(crate) order: Vec<u32>,
}

const BINS: usize = 12;
const LEAF_SIZE: usize = 4;

struct BuildItem {
    bounds: Aabb,
    centroid: Vec3,
    id: u32,
}

impl Bvh {
    pub fn build(triangles: &[Triangle]) -> Self {
        let mut items: Vec<BuildItem> = triangles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut b = Aabb::EMPTY;
                b.grow(t.v0);
                b.grow(t.v0 + t.e1);
                b.grow(t.v0 + t.e2);
                BuildItem {
                    centroid: b.centre(),
                    bounds: b,
                    id: i as u32,
                }
            })
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * items.len().max(1)),
            order: Vec::with_capacity(items.len()),
        };
        if !items.is_empty() {
            let n = items.len();
            bvh.build_recursive(&mut items, 0, n, 0);
        }
        bvh.order = items.iter().map(|i| i.id).collect();
        bvh
    }

    fn build_recursive(
        &mut self,
        items: &mut [BuildItem],
        start: usize,
        end: usize,
        depth: usize,
    ) -> usize {
        let slice = &mut items[start..end];
        let mut bounds = Aabb::EMPTY;
        let mut cbounds = Aabb::EMPTY;
        for it in slice.iter() {
            bounds = bounds.union(&it.bounds);
            cbounds.grow(it.centroid);
        }
        let node_index = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            offset: start as u32,
            count: (end - start) as u32,
            axis: 0,
        });
        if slice.len() <= LEAF_SIZE {
            return node_index;
        }

        let ext = cbounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        if ext[axis] <= 0.0 {
            return node_index;
        }

        let lo = cbounds.min[axis];
        let scale = BINS as f32 / ext[axis];
        let bin_of = |c: f32| (((c - lo) * scale) as usize).min(BINS - 1);
        let mut bin_bounds = [Aabb::EMPTY; BINS];
        let mut bin_count = [0usize; BINS];
        for it in slice.iter() {
            let b = bin_of(it.centroid[axis]);
            bin_bounds[b] = bin_bounds[b].union(&it.bounds);
            bin_count[b] += 1;
        }
        let mut best = (f32::INFINITY, 0usize);
        for split in 1..BINS {
            let (mut lb, mut rb) = (Aabb::EMPTY, Aabb::EMPTY);
            let (mut lc, mut rc) = (0, 0);
            for b in 0..split {
                lb = lb.union(&bin_bounds[b]);
                lc += bin_count[b];
            }
            for b in split..BINS {
                rb = rb.union(&bin_bounds[b]);
                rc += bin_count[b];
            }
            if lc == 0 || rc == 0 {
                continue;
            }
            let cost = lb.surface_area() * lc as f32 + rb.surface_area() * rc as f32;
            if cost < best.0 {
                best = (cost, split);
            }
        }
        let leaf_cost = bounds.surface_area() * slice.len() as f32;
        if best.0 >= leaf_cost && slice.len() <= 16 {
            return node_index;
        }
        // keep the traversal stack bounded on adversarial inputs
        let mid = if best.0.is_finite() && depth < 40 {
            let split = best.1;
            let mut i = 0;
            for j in 0..slice.len() {
                if bin_of(slice[j].centroid[axis]) < split {
                    slice.swap(i, j);
                    i += 1;
                }
            }
            i
        } else {
            slice.len() / 2
        };
        let mid = if mid == 0 || mid == slice.len() || depth >= 40 {
            slice.sort_by(|a, b| a.centroid[axis].total_cmp(&b.centroid[axis]));
            slice.len() / 2
        } else {
            mid
        };

        let mid = start + mid;
        self.build_recursive(items, start, mid, depth + 1);
        let right = self.build_recursive(items, mid, end, depth + 1);
        let node = &mut self.nodes[node_index];
        node.offset = right as u32;
        node.count = 0;
        node.axis = axis as u8;
        node_index
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or(Aabb::EMPTY)
    }

    /// Closest hit as `(triangle id, t, barycentric u, v)`.
    pub fn intersect(&self, triangles: &[Triangle], ray: &Ray) -> Option<(u32, f32, f32, f32)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let neg = [inv.x < 0.0, inv.y < 0.0, inv.z < 0.0];
        let mut best: Option<(u32, f32, f32, f32)> = None;
        let mut t_max = ray.t_max;
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        let mut idx = 0u32;
        loop {
            let node = &self.nodes[idx as usize];
            if node.bounds.hit(ray.origin, inv, t_max).is_some() {
                if node.count > 0 {
                    for k in node.offset..node.offset + node.count {
                        let id = self.order[k as usize];
                        if let Some((t, u, v)) = triangles[id as usize].intersect(ray, t_max) {
                            let better = match best {
                                Some((bid, bt, _, _)) => t < bt || (t == bt && id < bid),
                                None => true,
                            };
                            if better {
                                t_max = t;
                                best = Some((id, t, u, v));
                            }
                        }
                    }
                } else {
                    // visit the near child first
                    let (first, second) = if neg[node.axis as usize] {
                        (node.offset, idx + 1)
                    } else {
                        (idx + 1, node.offset)
                    };
                    stack[sp] = second;
                    sp += 1;
                    idx = first;
                    continue;
                }
            }
            if sp == 0 {
                break;
            }
            sp -= 1;
            idx = stack[sp];
        }
        best
    }

    /// Any hit strictly before `ray.t_max`.
    pub fn occluded(&self, triangles: &[Triangle], ray: &Ray) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        let mut idx = 0u32;
        loop {
            let node = &self.nodes[idx as usize];
            if node.bounds.hit(ray.origin, inv, ray.t_max).is_some() {
                if node.count > 0 {
                    for k in node.offset..node.offset + node.count {
                        let id = self.order[k as usize];
                        if triangles[id as usize].intersect(ray, ray.t_max).is_some() {
                            return true;
                        }
                    }
                } else {
                    stack[sp] = node.offset;
                    sp += 1;
                    idx += 1;
                    continue;
                }
            }
            if sp == 0 {
                return false;
            }
            sp -= 1;
            idx = stack[sp];
        }
    }
}
