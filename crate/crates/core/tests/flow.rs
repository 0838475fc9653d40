use open_sora_kit::flow::toy::{coupled_w1, GaussianMixture};
use open_sora_kit::flow::{euler_from_noise, noise_like};
use open_sora_kit::numerics::Tensor;
use open_sora_kit::rng;

fn exact_endpoints(gm: &GaussianMixture, noise: &Tensor<f32>) -> Tensor<f32> {
    let mut out = Vec::with_capacity(noise.len());
    for p in noise.data().chunks(2) {
        let y = gm.flow_map([p[0] as f64, p[1] as f64], 200);
        out.extend([y[0] as f32, y[1] as f32]);
    }
    Tensor::new(noise.shape().to_vec(), out).unwrap()
}

#[test]
fn euler_w1_shrinks_with_steps() {
    let gm = GaussianMixture::three_modes();
    let noise = noise_like(&mut rng::stream(1, &[]), &[10_000, 2]);
    let exact = exact_endpoints(&gm, &noise);
    let mut prev = f64::INFINITY;
    for steps in 2..=30 {
        let x = euler_from_noise(&gm, &noise, None, steps).unwrap();
        let w = coupled_w1(&x, &exact).unwrap();
        assert!(w < prev, "steps {}: {} !< {}", steps, w, prev);
        prev = w;
    }
    assert!(prev <= 0.1, "W1 at 30 steps {}", prev);
}

mod trained {
    use super::*;
    use open_sora_kit::flow::{interpolate, sample_timestep, velocity_target, FlowConfig};
    use open_sora_kit::numerics::{Activation, Adam, AdamConfig, Bound, Graph, Mlp, ParamStore, Var};
    use open_sora_kit::stdit::sinusoidal;

    const TDIM: usize = 8;

    struct Net {
        params: ParamStore,
        body: Mlp,
        head: Mlp,
    }

    impl Net {
        fn new() -> Self {
            let mut r = rng::stream(11, &[]);
            let mut params = ParamStore::new();
            let body = Mlp::new(&mut params, &mut r, "body", (2 + TDIM, 64, 64), Activation::Silu);
            let head = Mlp::new(&mut params, &mut r, "head", (64, 64, 2), Activation::Silu);
            Self { params, body, head }
        }

        fn g_forward(&self, g: &mut Graph<f32>, b: &Bound, x: Var, t: &[f64]) -> Var {
            let scaled: Vec<f64> = t.iter().map(|v| v * 100.0).collect();
            let te = g.constant(sinusoidal(&scaled, TDIM));
            let h = g.concat(&[x, te], 1).unwrap();
            let h = self.body.forward(g, b, h).unwrap();
            let h = g.silu(h).unwrap();
            self.head.forward(g, b, h).unwrap()
        }

        fn predict(&self, x: &Tensor<f32>, t: &[f64]) -> open_sora_kit::Result<Tensor<f32>> {
            let mut g = Graph::new();
            let b = self.params.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let y = self.g_forward(&mut g, &b, xv, t);
            Ok(g.value(y).clone())
        }
    }

    #[test]
    fn trained_velocity_net_recovers_mode_weights() {
        let gm = GaussianMixture::three_modes();
        let mut net = Net::new();
        let mut opt = Adam::new(AdamConfig { lr: 3e-3, ..Default::default() }, &net.params);
        let cfg = FlowConfig { shift: false, ..Default::default() };
        let steps = 2500;
        for step in 0..steps {
            let mut r = rng::stream(12, &[step]);
            let x0 = gm.sample(&mut r, 256);
            let x1 = noise_like(&mut r, &[256, 2]);
            let t: Vec<f64> = (0..256).map(|_| sample_timestep(&mut r, &cfg, 1).unwrap()).collect();
            let xt = interpolate(&x0, &x1, &t).unwrap();
            let v = velocity_target(&x0, &x1).unwrap();
            opt.cfg.lr = 3e-3 * (1.0 - 0.9 * step as f64 / steps as f64);
            let mut g = Graph::new();
            let b = net.params.bind(&mut g, true);
            let xv = g.constant(xt);
            let y = net.g_forward(&mut g, &b, xv, &t);
            let tv = g.constant(v);
            let loss = g.mse(y, tv).unwrap();
            let mut grads = g.backward(loss).unwrap();
            let grads = net.params.collect_grads(&b, &mut grads);
            opt.step(&mut net.params, &grads).unwrap();
        }
        let noise = noise_like(&mut rng::stream(13, &[]), &[10_000, 2]);
        let model = |x: &Tensor<f32>, t: &[f64]| net.predict(x, t);
        let out = euler_from_noise(&model, &noise, None, 30).unwrap();
        let fr = gm.mode_fractions(&out);
        for (f, w) in fr.iter().zip(&gm.weights) {
            assert!((f - w).abs() <= 0.05, "fractions {:?} vs {:?}", fr, gm.weights);
        }
    }
}
