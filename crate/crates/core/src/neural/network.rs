//! A network is an optional hash grid over positions followed by an MLP;
//! the remaining inputs are supplied pre-encoded. Also home to the input
//! encodings of StatNet and both RRSNet variants.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::math::{direction_to_unit_spherical, Rgb, Vec3};
use crate::rrs::ShadingEvent;
use crate::rng::RngStream;
use crate::sampling::{box_cox, roughness_remap, OneBlob};

use super::hashgrid::{GridCache, HashGrid, HashGridConfig};
use super::mlp::{Mlp, MlpCache, MlpConfig};

/// Rows handled per worker in batched evaluation; fixed so results do not
/// depend on the thread count.
pub const CHUNK: usize = 4096;

pub const STATNET_EXTRA: usize = 16;
pub const NRRS_INPUTS: usize = 11;
pub const AID_EXTRA: usize = 16;
const BOX_COX_LAMBDA: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub grid: Option<HashGrid>,
    pub mlp: Mlp,
    extra: usize,
    bounds: (Vec3, Vec3),
    inv_extent: Vec3,
}

#[derive(Debug, Clone)]
pub struct NetCache {
    grid: GridCache,
    mlp: MlpCache,
    rows: usize,
}

impl Network {
    /// `extra` inputs follow the grid encoding; positions are mapped from
    /// `bounds` into the unit cube.
    pub fn new(grid: Option<HashGridConfig>, extra: usize, mlp: MlpConfig, bounds: (Vec3, Vec3)) -> Self {
        let grid = grid.map(HashGrid::new);
        let grid_dim = grid.as_ref().map_or(0, |g| g.output_dim());
        let mlp = Mlp::new(MlpConfig {
            input: grid_dim + extra,
            ..mlp
        });
        let ext = bounds.1 - bounds.0;
        let inv = |e: f32| if e > 0.0 { 1.0 / e } else { 0.0 };
        Self {
            grid,
            mlp,
            extra,
            bounds,
            inv_extent: Vec3::new(inv(ext.x), inv(ext.y), inv(ext.z)),
        }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        self.bounds
    }

    fn grid_params(&self) -> usize {
        self.grid.as_ref().map_or(0, |g| g.param_count())
    }

    pub fn param_count(&self) -> usize {
        self.grid_params() + self.mlp.param_count()
    }

    pub fn extra_dim(&self) -> usize {
        self.extra
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.config.output
    }

    pub fn init_params(&self, rng: &mut RngStream) -> Vec<f32> {
        let mut p = vec![0.0; self.param_count()];
        let gp = self.grid_params();
        if let Some(g) = &self.grid {
            g.init_params(&mut p[..gp], rng);
        }
        self.mlp.init_params(&mut p[gp..], rng);
        p
    }

    /// See [`Mlp::init_output`].
    pub fn init_output(&self, params: &mut [f32], weight_scale: f32, bias: f32) {
        let gp = self.grid_params();
        self.mlp.init_output(&mut params[gp..], weight_scale, bias);
    }

    /// Hidden activation signs for a chunk (see [`Mlp::activation_pattern`]).
    pub fn activation_pattern(&self, params: &[f32], positions: &[Vec3], extra: ArrayView2<f32>) -> Vec<bool> {
        let input = self.assemble(params, positions, extra, None);
        self.mlp.activation_pattern(&params[self.grid_params()..], input)
    }

    pub fn to_unit(&self, p: Vec3) -> Vec3 {
        let d = p - self.bounds.0;
        let u = Vec3::new(d.x * self.inv_extent.x, d.y * self.inv_extent.y, d.z * self.inv_extent.z);
        Vec3::new(u.x.clamp(0.0, 1.0), u.y.clamp(0.0, 1.0), u.z.clamp(0.0, 1.0))
    }

    fn assemble(&self, params: &[f32], positions: &[Vec3], extra: ArrayView2<f32>, cache: Option<&mut GridCache>) -> Array2<f32> {
        let n = extra.nrows();
        let Some(g) = &self.grid else {
            return extra.to_owned();
        };
        let gd = g.output_dim();
        let mut input = Array2::zeros((n, gd + self.extra));
        input.slice_mut(s![.., gd..]).assign(&extra);
        let mut cache = cache;
        let gp = &params[..self.grid_params()];
        let mut buf = vec![0.0; gd];
        for (r, &p) in positions.iter().enumerate() {
            g.encode(gp, self.to_unit(p), &mut buf, cache.as_deref_mut());
            for (k, &v) in buf.iter().enumerate() {
                input[[r, k]] = v;
            }
        }
        input
    }

    /// Raw head outputs for one chunk.
    pub fn forward(&self, params: &[f32], positions: &[Vec3], extra: ArrayView2<f32>, keep: bool) -> (Array2<f32>, Option<NetCache>) {
        debug_assert_eq!(extra.ncols(), self.extra);
        let mut gc = GridCache::default();
        let input = self.assemble(params, positions, extra, keep.then_some(&mut gc));
        let (out, mc) = self.mlp.forward(&params[self.grid_params()..], input, keep);
        let cache = mc.map(|mlp| NetCache {
            grid: gc,
            mlp,
            rows: out.nrows(),
        });
        (out, cache)
    }

    /// Accumulate parameter gradients for one chunk.
    pub fn backward(&self, params: &[f32], cache: &NetCache, d_out: Array2<f32>, grad: &mut [f32]) {
        let gp = self.grid_params();
        let (g_grid, g_mlp) = grad.split_at_mut(gp);
        let d_in = self.mlp.backward(&params[gp..], &cache.mlp, d_out, g_mlp);
        if let Some(g) = &self.grid {
            let gd = g.output_dim();
            let d_enc = d_in.slice(s![.., ..gd]).to_owned();
            let flat = d_enc.as_standard_layout();
            debug_assert_eq!(flat.nrows(), cache.rows);
            g.backward(&cache.grid, flat.as_slice().expect("contiguous"), g_grid);
        }
    }

    /// Forward over a whole batch in fixed-size chunks, in parallel.
    pub fn forward_batched(
        &self,
        params: &[f32],
        positions: &[Vec3],
        extra: &Array2<f32>,
        keep: bool,
    ) -> (Array2<f32>, Vec<NetCache>) {
        let n = extra.nrows();
        if n == 0 {
            return (Array2::zeros((0, self.output_dim())), Vec::new());
        }
        let parts: Vec<(Array2<f32>, Option<NetCache>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let (a, b) = (c * CHUNK, ((c + 1) * CHUNK).min(n));
                let pos = if self.grid.is_some() { &positions[a..b] } else { &[][..] };
                self.forward(params, pos, extra.slice(s![a..b, ..]), keep)
            })
            .collect();
        let views: Vec<_> = parts.iter().map(|(o, _)| o.view()).collect();
        let out = concatenate(Axis(0), &views).expect("chunk shapes");
        let caches = parts.into_iter().filter_map(|(_, c)| c).collect();
        (out, caches)
    }

    /// Backward over the chunks of `forward_batched`; partial gradients are
    /// summed in chunk order.
    pub fn backward_batched(&self, params: &[f32], caches: &[NetCache], d_out: &Array2<f32>) -> Vec<f32> {
        let mut offsets = Vec::with_capacity(caches.len());
        let mut at = 0;
        for c in caches {
            offsets.push(at);
            at += c.rows;
        }
        let partials: Vec<Vec<f32>> = caches
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(c, &a)| {
                let mut g = vec![0.0; self.param_count()];
                self.backward(params, c, d_out.slice(s![a..a + c.rows, ..]).to_owned(), &mut g);
                g
            })
            .collect();
        let mut iter = partials.into_iter();
        let mut total = iter.next().unwrap_or_else(|| vec![0.0; self.param_count()]);
        for p in iter {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }
}

fn direction_blobs(wo: Vec3, out: &mut [f32]) {
    let [theta, phi] = direction_to_unit_spherical(wo);
    let blob = OneBlob::default();
    blob.encode_into(theta, &mut out[..4]);
    blob.encode_into(phi, &mut out[4..8]);
}

fn bc(x: f32) -> f32 {
    box_cox(x, BOX_COX_LAMBDA)
}

/// Direction and roughness part of the StatNet input.
pub fn statnet_extra(e: &ShadingEvent, out: &mut [f32]) {
    direction_blobs(e.wo, &mut out[..8]);
    OneBlob::default().encode_into(roughness_remap(e.roughness), &mut out[8..16]);
}

/// Full NRRS RRSNet input from StatNet's mean and second moment.
pub fn nrrs_input(e: &ShadingEvent, pixel: Rgb, mean: [f32; 3], second: [f32; 3], out: &mut [f32]) {
    for c in 0..3 {
        out[c] = bc(mean[c]);
        out[3 + c] = bc(second[c]);
    }
    let w = e.weight.to_array();
    for c in 0..3 {
        out[6 + c] = bc(w[c]);
    }
    out[9] = bc(pixel.luminance());
    out[10] = roughness_remap(e.roughness);
}

/// Non-positional part of the AID RRSNet input.
pub fn aid_extra(e: &ShadingEvent, pixel: Rgb, out: &mut [f32]) {
    direction_blobs(e.wo, &mut out[..8]);
    let w = e.weight.to_array();
    for c in 0..3 {
        out[8 + c] = bc(w[c]);
    }
    out[11] = bc(pixel.luminance());
    OneBlob::default().encode_into(roughness_remap(e.roughness), &mut out[12..16]);
}

/// Build an `n x dim` matrix row by row.
pub fn build_rows<T>(items: &[T], dim: usize, f: impl Fn(&T, &mut [f32]) + Sync) -> Array2<f32>
where
    T: Sync,
{
    let mut m = Array2::zeros((items.len(), dim));
    if let Some(data) = m.as_slice_mut() {
        data.par_chunks_mut(dim.max(1)).zip(items.par_iter()).for_each(|(row, it)| f(it, row));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::softplus_mod;

    fn small_grid() -> HashGridConfig {
        HashGridConfig {
            levels: 3,
            base_resolution: 4,
            log2_table_size: 8,
            init_scale: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn batched_evaluation_matches_single_chunk() {
        let net = Network::new(Some(small_grid()), 3, MlpConfig::new(0, 2), (Vec3::ZERO, Vec3::splat(2.0)));
        let params = net.init_params(&mut RngStream::new(1, 1));
        let mut rng = RngStream::new(2, 2);
        let n = CHUNK + 77;
        let pos: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.next_f32(), rng.next_f32(), rng.next_f32()) * 2.0).collect();
        let extra = Array2::from_shape_fn((n, 3), |_| rng.next_f32());
        let (a, caches) = net.forward_batched(&params, &pos, &extra, true);
        assert_eq!(caches.len(), 2);
        let (b, _) = net.forward(&params, &pos, extra.view(), false);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-5));

        let d = Array2::from_shape_fn((n, 2), |_| rng.next_f32() - 0.5);
        let g1 = net.backward_batched(&params, &caches, &d);
        let (_, c) = net.forward(&params, &pos, extra.view(), true);
        let mut g2 = vec![0.0; net.param_count()];
        net.backward(&params, &c.unwrap(), d, &mut g2);
        let scale = g2.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(g1.iter().zip(&g2).all(|(x, y)| (x - y).abs() <= 1e-3 * scale));
    }

    /// Sum of softplus_mod(head) weighted by fixed coefficients.
    fn objective(net: &Network, params: &[f32], pos: &[Vec3], extra: &Array2<f32>, c: &[f32]) -> f64 {
        let (o, _) = net.forward(params, pos, extra.view(), false);
        o.column(0).iter().zip(c).map(|(&v, &k)| (softplus_mod(v) * k) as f64).sum()
    }

    #[test]
    fn grid_and_mlp_gradients_match_finite_differences() {
        let net = Network::new(Some(small_grid()), 2, MlpConfig::new(0, 1), (Vec3::ZERO, Vec3::splat(1.0)));
        let mut rng = RngStream::new(9, 9);
        let params = net.init_params(&mut rng);
        let pos: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.next_f32(), rng.next_f32(), rng.next_f32())).collect();
        let extra = Array2::from_shape_fn((6, 2), |_| rng.next_f32());
        let c: Vec<f32> = (0..6).map(|_| rng.next_f32() - 0.5).collect();
        let (o, cache) = net.forward(&params, &pos, extra.view(), true);
        let d = Array2::from_shape_fn((6, 1), |(r, _)| crate::sampling::softplus_mod_derivative(o[[r, 0]]) * c[r]);
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&params, &cache.unwrap(), d, &mut grad);
        let h = 1e-2;
        let mut checked = 0;
        for i in 0..params.len() {
            if grad[i] == 0.0 && i < net.grid_params() {
                continue;
            }
            let mut p = params.clone();
            p[i] += h;
            let up = objective(&net, &p, &pos, &extra, &c);
            let pat = net.activation_pattern(&p, &pos, extra.view());
            p[i] -= 2.0 * h;
            let dn = objective(&net, &p, &pos, &extra, &c);
            if pat != net.activation_pattern(&p, &pos, extra.view()) {
                continue;
            }
            let fd = (up - dn) / (2.0 * h as f64);
            let err = (fd - grad[i] as f64).abs() / fd.abs().max(grad[i].abs() as f64).max(1e-2);
            assert!(err < 1e-2, "param {i}: fd {fd} analytic {}", grad[i]);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn encodings_have_documented_widths() {
        let e = ShadingEvent {
            position: Vec3::ZERO,
            normal: Vec3::new(0.0, 0.0, 1.0),
            wo: Vec3::new(0.0, 0.6, 0.8),
            roughness: 0.3,
            weight: Rgb::new(0.5, 0.25, 1.0),
            pixel: 0,
            depth: 2,
        };
        let mut a = [f32::NAN; STATNET_EXTRA];
        statnet_extra(&e, &mut a);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!((a[..4].iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!((a[8..].iter().sum::<f32>() - 1.0).abs() < 1e-5);
        let mut b = [f32::NAN; NRRS_INPUTS];
        nrrs_input(&e, Rgb::splat(1.0), [1.0; 3], [4.0; 3], &mut b);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[3], 2.0);
        assert_eq!(b[9], 0.0);
        let mut c = [f32::NAN; AID_EXTRA];
        aid_extra(&e, Rgb::splat(1.0), &mut c);
        assert!(c.iter().all(|v| v.is_finite()));
    }
}
