//! Hash grid + MLP backward pass against central differences.

use ndarray::Array2;
use nrrs::math::Vec3;
use nrrs::neural::{HashGridConfig, MlpConfig, Network};
use nrrs::rng::RngStream;
use nrrs::sampling::{softplus_mod, softplus_mod_derivative};

fn objective(net: &Network, p: &[f32], pos: &[Vec3], extra: &Array2<f32>, c: &[f32]) -> f64 {
    let (o, _) = net.forward(p, pos, extra.view(), false);
    (0..pos.len()).map(|r| (softplus_mod(o[[r, 0]]) * c[r]) as f64).sum()
}

fn main() {
    let grid = HashGridConfig {
        levels: 4,
        base_resolution: 4,
        log2_table_size: 10,
        init_scale: 0.1,
        ..Default::default()
    };
    let net = Network::new(Some(grid), 3, MlpConfig::new(0, 1), (Vec3::ZERO, Vec3::splat(1.0)));
    let mut rng = RngStream::new(1, 1);
    let params = net.init_params(&mut rng);
    let pos: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.next_f32(), rng.next_f32(), rng.next_f32())).collect();
    let extra = Array2::from_shape_fn((4, 3), |_| rng.next_f32());
    let c: Vec<f32> = (0..4).map(|_| rng.next_f32() - 0.5).collect();

    let (o, cache) = net.forward(&params, &pos, extra.view(), true);
    let d = Array2::from_shape_fn((4, 1), |(r, _)| softplus_mod_derivative(o[[r, 0]]) * c[r]);
    let mut grad = vec![0.0; net.param_count()];
    net.backward(&params, &cache.expect("kept"), d, &mut grad);

    let h = 1e-2;
    let (mut worst, mut checked) = (0.0f64, 0);
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = objective(&net, &p, &pos, &extra, &c);
        let pattern = net.activation_pattern(&p, &pos, extra.view());
        p[i] -= 2.0 * h;
        let dn = objective(&net, &p, &pos, &extra, &c);
        if pattern != net.activation_pattern(&p, &pos, extra.view()) {
            continue;
        }
        let fd = (up - dn) / (2.0 * h as f64);
        if fd == 0.0 && grad[i] == 0.0 {
            continue;
        }
        worst = worst.max((fd - grad[i] as f64).abs() / fd.abs().max(grad[i].abs() as f64).max(1e-2));
        checked += 1;
    }
    println!("{} parameters, {checked} checked, worst relative error {worst:.2e}", params.len());
}
