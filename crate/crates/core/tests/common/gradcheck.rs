//! Analytic gradients of every differentiable path against central finite differences, in f64.

use phasestream::net::{build_model, Batch, FrontEnd, FrontEndKind, Model, NetworkConfig};
use phasestream::numerics::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use phasestream::numerics::layers::{
    fully_connected, fully_connected_backward, max_pool, max_pool_backward, softmax_cross_entropy, BatchNorm,
};
use phasestream::oracle::{finite_diff_grad, relative_error, FiniteDiffConfig};
use phasestream::phase::{
    complex_conv_backward, complex_conv_forward, crelu, crelu_backward, extract_phase, extract_phase_backward,
    gabor_regularizer, regularizer_gradient, ComplexConvLayer, ComplexResponse,
};
use phasestream::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn fd() -> FiniteDiffConfig {
    FiniteDiffConfig { epsilon: EPS }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so ReLU kinks stay outside the FD stencil.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with_data(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, v.to_vec()).unwrap()
}

/// Relative errors recorded per path.
#[derive(Default)]
pub struct Checks {
    pub errors: Vec<(String, f64)>,
}

impl Checks {
    fn check(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        self.errors.push((name.to_string(), relative_error(analytic, numeric, 1e-8)));
    }

    pub fn failures(&self) -> Vec<&(String, f64)> {
        self.errors.iter().filter(|(_, e)| !(*e <= TOL)).collect()
    }

    pub fn worst(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

pub fn conv2d_input_and_weights(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [ConvSpec::same(2, 3, 3), ConvSpec::same(1, 2, 5).with_stride(2)] {
        let x = random(&[2, spec.in_channels, 7, 7], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let y = conv2d_forward(&x, &w, &spec).unwrap();
        let c = random(y.shape(), &mut rng);
        let (gx, gw) = conv2d_backward(&c, &x, &w, &spec).unwrap();
        let nx = finite_diff_grad(|v| dot(&c, &conv2d_forward(&with_data(x.shape(), v), &w, &spec).unwrap()), x.data(), fd()).unwrap();
        let nw = finite_diff_grad(|v| dot(&c, &conv2d_forward(&x, &with_data(w.shape(), v), &spec).unwrap()), w.data(), fd()).unwrap();
        out.check("conv input", gx.data(), &nx);
        out.check("conv weights", gw.data(), &nw);
    }
}

pub fn complex_conv_free_weights_and_input(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = ComplexConvLayer::<f64>::new(2, 3, 5, 1.25, 0.0, &mut rng).unwrap();
    let x = random(&[2, 2, 6, 6], &mut rng);
    let resp = complex_conv_forward(&x, &layer).unwrap();
    let cr = random(resp.real.shape(), &mut rng);
    let ci = random(resp.imag.shape(), &mut rng);
    let loss = |l: &ComplexConvLayer<f64>, x: &Tensor<f64>| {
        let r = complex_conv_forward(x, l).unwrap();
        dot(&cr, &r.real) + dot(&ci, &r.imag)
    };
    let grad = ComplexResponse {
        real: cr.clone(),
        imag: ci.clone(),
    };
    let (gu, gx) = complex_conv_backward(&grad, &x, &layer, true).unwrap();
    // Perturbing U re-derives both tied parts, but only the imaginary path is trained.
    let nu = finite_diff_grad(
        |v| {
            let l = ComplexConvLayer::from_free(with_data(layer.free.value.shape(), v), layer.envelope().clone(), 0.0).unwrap();
            let r = complex_conv_forward(&x, &l).unwrap();
            dot(&ci, &r.imag)
        },
        layer.free.value.data(),
        fd(),
    )
    .unwrap();
    let nx = finite_diff_grad(|v| loss(&layer, &with_data(x.shape(), v)), x.data(), fd()).unwrap();
    out.check("complex conv U", gu.data(), &nu);
    out.check("complex conv input", gx.unwrap().data(), &nx);
}

pub fn crelu_paths(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let re = away_from_zero(&[2, 3, 4, 4], &mut rng);
    let im = away_from_zero(&[2, 3, 4, 4], &mut rng);
    let cr = random(re.shape(), &mut rng);
    let ci = random(im.shape(), &mut rng);
    let (gr, gi) = crelu_backward(&cr, &ci, &re, &im).unwrap();
    let nr = finite_diff_grad(|v| dot(&cr, &crelu(&with_data(re.shape(), v), &im).unwrap().0), re.data(), fd()).unwrap();
    let ni = finite_diff_grad(|v| dot(&ci, &crelu(&re, &with_data(im.shape(), v)).unwrap().1), im.data(), fd()).unwrap();
    out.check("crelu real", gr.data(), &nr);
    out.check("crelu imag", gi.data(), &ni);
}

pub fn batch_norm_input_gamma_beta(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 2, 4, 4], &mut rng);
    let mut bn = BatchNorm::<f64>::new(2);
    bn.gamma = vec![1.3, 0.7];
    bn.beta = vec![0.2, -0.4];
    let c = random(x.shape(), &mut rng);
    let (_, cache) = bn.clone().forward(&x, true).unwrap();
    let (gx, gg, gb) = bn.backward(&c, &cache.unwrap()).unwrap();
    let run = |bn: &BatchNorm<f64>, x: &Tensor<f64>| dot(&c, &bn.clone().forward(x, true).unwrap().0);
    let nx = finite_diff_grad(|v| run(&bn, &with_data(x.shape(), v)), x.data(), fd()).unwrap();
    let ng = finite_diff_grad(
        |v| {
            let mut b = bn.clone();
            b.gamma = v.to_vec();
            run(&b, &x)
        },
        &bn.gamma,
        fd(),
    )
    .unwrap();
    let nb = finite_diff_grad(
        |v| {
            let mut b = bn.clone();
            b.beta = v.to_vec();
            run(&b, &x)
        },
        &bn.beta,
        fd(),
    )
    .unwrap();
    out.check("bn input", gx.data(), &nx);
    out.check("bn gamma", &gg, &ng);
    out.check("bn beta", &gb, &nb);
}

pub fn fully_connected_paths(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 6], &mut rng);
    let w = random(&[4, 6], &mut rng);
    let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = random(&[3, 4], &mut rng);
    let (gx, gw, gb) = fully_connected_backward(&c, &x, &w).unwrap();
    let nx = finite_diff_grad(|v| dot(&c, &fully_connected(&with_data(x.shape(), v), &w, &b).unwrap()), x.data(), fd()).unwrap();
    let nw = finite_diff_grad(|v| dot(&c, &fully_connected(&x, &with_data(w.shape(), v), &b).unwrap()), w.data(), fd()).unwrap();
    let nb = finite_diff_grad(|v| dot(&c, &fully_connected(&x, &w, v).unwrap()), &b, fd()).unwrap();
    out.check("fc input", gx.data(), &nx);
    out.check("fc weights", gw.data(), &nw);
    out.check("fc bias", &gb, &nb);
}

pub fn cross_entropy_logits(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = random(&[4, 5], &mut rng);
    let labels = [0, 3, 4, 1];
    let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
    let n = finite_diff_grad(|v| softmax_cross_entropy(&with_data(z.shape(), v), &labels).unwrap().0, z.data(), fd()).unwrap();
    out.check("cross-entropy", g.data(), &n);
}

pub fn max_pool_path(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Distinct values so the argmax is stable under the FD step.
    let mut vals: Vec<f64> = (0..2 * 2 * 6 * 6).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = with_data(&[2, 2, 6, 6], &vals);
    let (y, arg) = max_pool(&x, 2).unwrap();
    let c = random(y.shape(), &mut rng);
    let g = max_pool_backward(&c, &arg, x.shape());
    let n = finite_diff_grad(|v| dot(&c, &max_pool(&with_data(x.shape(), v), 2).unwrap().0), x.data(), fd()).unwrap();
    out.check("max pool", g.data(), &n);
}

pub fn phase_extraction_path(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let re = away_from_zero(&[2, 3, 3, 3], &mut rng);
    let im = random(re.shape(), &mut rng);
    let c = random(re.shape(), &mut rng);
    let eps = 1e-8;
    let (gr, gi) = extract_phase_backward(&c, &re, &im, eps).unwrap();
    let nr = finite_diff_grad(|v| dot(&c, &extract_phase(&with_data(re.shape(), v), &im, eps).unwrap()), re.data(), fd()).unwrap();
    let ni = finite_diff_grad(|v| dot(&c, &extract_phase(&re, &with_data(im.shape(), v), eps).unwrap()), im.data(), fd()).unwrap();
    out.check("phase real", gr.data(), &nr);
    out.check("phase imag", gi.data(), &ni);
}

pub fn regularizer_path(out: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [5, 7] {
        let layer = ComplexConvLayer::<f64>::new(2, 3, k, k as f64 / 4.0, 1e-3, &mut rng).unwrap();
        let u = &layer.free.value;
        let g = regularizer_gradient(u, layer.envelope()).unwrap();
        let n = finite_diff_grad(|v| gabor_regularizer(&with_data(u.shape(), v), layer.envelope()).unwrap(), u.data(), fd()).unwrap();
        out.check("regularizer", g.data(), &n);
    }
}

fn refresh(model: &mut Model<f64>) {
    if let FrontEnd::Complex { layer, .. } = &mut model.front {
        layer.refresh_imag();
    }
}

/// End-to-end loss (cross-entropy plus weighted regularizer, dropout mask fixed by
/// seed) against FD on a sample of coordinates of every parameter tensor.
fn end_to_end(kind: FrontEndKind, seed: u64, out: &mut Checks) {
    let mut cfg = NetworkConfig::mini(3);
    cfg.front_end = kind;
    cfg.input_size = 8;
    cfg.front.filters = 4;
    cfg.front.kernel = 5;
    let mut model = build_model::<f64>(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let batch = Batch {
        inputs: random(&[4, 1, 8, 8], &mut rng),
        labels: vec![0, 1, 2, 1],
    };
    let (dropout, mask_seed) = (0.5, 77);
    model.loss_and_grad(&batch, dropout, mask_seed).unwrap();
    let grads: Vec<Tensor<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let names = model.param_names();
    for (pi, name) in names.iter().enumerate() {
        if !model.params()[pi].trainable {
            continue;
        }
        let len = grads[pi].len();
        let coords: Vec<usize> = if len <= 40 { (0..len).collect() } else { (0..40).map(|_| rng.gen_range(0..len)).collect() };
        let mut numeric = Vec::new();
        let mut analytic = Vec::new();
        for &j in &coords {
            let orig = model.params()[pi].value.data()[j];
            let mut eval = |v: f64| {
                model.params_mut()[pi].value.data_mut()[j] = v;
                refresh(&mut model);
                model.loss(&batch, dropout, mask_seed).unwrap()
            };
            let (fp, fm) = (eval(orig + EPS), eval(orig - EPS));
            eval(orig);
            numeric.push((fp - fm) / (2.0 * EPS));
            analytic.push(grads[pi].data()[j]);
        }
        out.check(&format!("end-to-end {name}"), &analytic, &numeric);
    }
}

pub fn end_to_end_complex_front(out: &mut Checks) {
    end_to_end(FrontEndKind::Complex, 11, out);
}

pub fn end_to_end_plain_front(out: &mut Checks) {
    end_to_end(FrontEndKind::Plain, 12, out);
}

/// Every path check, in order.
pub const ALL: [fn(&mut Checks); 11] = [conv2d_input_and_weights, complex_conv_free_weights_and_input, crelu_paths, batch_norm_input_gamma_beta, fully_connected_paths, cross_entropy_logits, max_pool_path, phase_extraction_path, regularizer_path, end_to_end_complex_front, end_to_end_plain_front];
