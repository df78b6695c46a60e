//! Convolution, max-pooling, unpooling and transposed convolution on
//! square maps, with the backward passes used by training.
//!
//! Every output map owns one `S×S` kernel and one bias; the kernel is
//! applied to the sum of the layer's input maps.

use rand::Rng;

use super::tensor::{sum_maps, uniform, Map};
use super::PredictorError;

/// Kernels and biases of one convolution or deconvolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Kernel side `S`.
    pub kernel: usize,
    /// `out_maps × S × S`, one kernel per output map.
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(kernel: usize, out_maps: usize) -> Self {
        Self {
            kernel,
            kernels: vec![0.0; out_maps * kernel * kernel],
            biases: vec![0.0; out_maps],
        }
    }

    /// Kernels uniform on `[-range, range]`, biases uniform on `[0, range]`.
    pub fn random(kernel: usize, out_maps: usize, range: f64, rng: &mut impl Rng) -> Self {
        let kernels = (0..out_maps * kernel * kernel).map(|_| uniform(rng, -range, range)).collect();
        let biases = (0..out_maps).map(|_| uniform(rng, 0.0, range)).collect();
        Self { kernel, kernels, biases }
    }

    pub fn out_maps(&self) -> usize {
        self.biases.len()
    }

    pub(crate) fn add_assign(&mut self, other: &ConvLayer) {
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn kernel_of(&self, m: usize) -> &[f64] {
        let s2 = self.kernel * self.kernel;
        &self.kernels[m * s2..(m + 1) * s2]
    }
}

/// Pooling switches of one map: for each pooled cell, the flat index of the
/// winning cell in the unpooled map.
pub type Switches = Vec<usize>;

/// Valid sliding-window correlation:
/// `out[i][j] = Σ_ab input[i+a][j+b] · kernel[a][b]`.
pub fn correlate_valid(input: &Map, kernel: &[f64], s: usize) -> Map {
    let n = input.side + 1 - s;
    let mut out = Map::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..s {
                let row = &input.data[(i + a) * input.side + j..(i + a) * input.side + j + s];
                let krow = &kernel[a * s..(a + 1) * s];
                acc += row.iter().zip(krow).map(|(x, k)| x * k).sum::<f64>();
            }
            out.data[i * n + j] = acc;
        }
    }
    out
}

/// Transposed (full) correlation, the adjoint of [`correlate_valid`]:
/// `out[i+a][j+b] += input[i][j] · kernel[a][b]`.
pub fn transpose_correlate(input: &Map, kernel: &[f64], s: usize) -> Map {
    let n = input.side + s - 1;
    let mut out = Map::zeros(n);
    for i in 0..input.side {
        for j in 0..input.side {
            let v = input.data[i * input.side + j];
            if v == 0.0 {
                continue;
            }
            for a in 0..s {
                let orow = &mut out.data[(i + a) * n + j..(i + a) * n + j + s];
                for (o, k) in orow.iter_mut().zip(&kernel[a * s..(a + 1) * s]) {
                    *o += v * k;
                }
            }
        }
    }
    out
}

fn check_inputs(input: &[Map], what: &'static str) -> Result<usize, PredictorError> {
    let side = input.first().ok_or(PredictorError::Shape { what, detail: "no input maps".into() })?.side;
    if input.iter().any(|m| m.side != side || m.data.len() != side * side) {
        return Err(PredictorError::Shape { what, detail: "input maps differ in size".into() });
    }
    Ok(side)
}

fn relu_in_place(map: &mut Map, bias: f64) {
    for v in &mut map.data {
        *v = (*v + bias).max(0.0);
    }
}

/// `H^m = ReLU(Σ_k H_in^k ⊛ W^m + b^m)`; output side shrinks by `S - 1`.
pub fn conv_forward(input: &[Map], layer: &ConvLayer) -> Result<Vec<Map>, PredictorError> {
    let side = check_inputs(input, "conv")?;
    if side < layer.kernel {
        return Err(PredictorError::Shape {
            what: "conv",
            detail: format!("input side {side} smaller than kernel {}", layer.kernel),
        });
    }
    let summed = sum_maps(input);
    Ok((0..layer.out_maps())
        .map(|m| {
            let mut out = correlate_valid(&summed, layer.kernel_of(m), layer.kernel);
            relu_in_place(&mut out, layer.biases[m]);
            out
        })
        .collect())
}

/// Non-overlapping max-pooling; ties go to the first cell in row-major
/// order within the window.
pub fn maxpool_forward(maps: &[Map], window: usize) -> Result<(Vec<Map>, Vec<Switches>), PredictorError> {
    let side = check_inputs(maps, "maxpool")?;
    if window == 0 || side % window != 0 {
        return Err(PredictorError::Shape {
            what: "maxpool",
            detail: format!("side {side} not divisible by pooling window {window}"),
        });
    }
    let n = side / window;
    let mut pooled = Vec::with_capacity(maps.len());
    let mut switches = Vec::with_capacity(maps.len());
    for map in maps {
        let mut out = Map::zeros(n);
        let mut sw = vec![0; n * n];
        for pi in 0..n {
            for pj in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for a in 0..window {
                    for b in 0..window {
                        let idx = (pi * window + a) * side + pj * window + b;
                        if map.data[idx] > best {
                            best = map.data[idx];
                            arg = idx;
                        }
                    }
                }
                out.data[pi * n + pj] = best;
                sw[pi * n + pj] = arg;
            }
        }
        pooled.push(out);
        switches.push(sw);
    }
    Ok((pooled, switches))
}

/// Places each value at its recorded switch position in a zero map of side
/// `out_side`.
pub fn unpool(maps: &[Map], switches: &[Switches], out_side: usize) -> Result<Vec<Map>, PredictorError> {
    if maps.len() != switches.len() {
        return Err(PredictorError::Shape {
            what: "unpool",
            detail: format!("{} maps but {} switch sets", maps.len(), switches.len()),
        });
    }
    maps.iter()
        .zip(switches)
        .map(|(map, sw)| {
            if sw.len() != map.data.len() || sw.iter().any(|&i| i >= out_side * out_side) {
                return Err(PredictorError::Shape {
                    what: "unpool",
                    detail: "switches do not match the map".into(),
                });
            }
            let mut out = Map::zeros(out_side);
            for (&v, &i) in map.data.iter().zip(sw) {
                out.data[i] = v;
            }
            Ok(out)
        })
        .collect()
}

/// `H^m = ReLU(tconv(Σ_k H_in^k, W^m) + b^m)`; output side grows by `S - 1`.
pub fn deconv_forward(input: &[Map], layer: &ConvLayer) -> Result<Vec<Map>, PredictorError> {
    check_inputs(input, "deconv")?;
    let summed = sum_maps(input);
    Ok((0..layer.out_maps())
        .map(|m| {
            let mut out = transpose_correlate(&summed, layer.kernel_of(m), layer.kernel);
            relu_in_place(&mut out, layer.biases[m]);
            out
        })
        .collect())
}

/// Backward through [`conv_forward`]. `output` are the forward outputs (the
/// ReLU mask is read from them), `grad_out` the loss gradient w.r.t. them.
/// Accumulates parameter gradients into `grad` and returns the gradient
/// w.r.t. the summed input (identical for every input map).
pub(crate) fn conv_backward(
    summed_input: &Map,
    output: &[Map],
    grad_out: &[Map],
    layer: &ConvLayer,
    grad: &mut ConvLayer,
    want_input_grad: bool,
) -> Option<Map> {
    let s = layer.kernel;
    let n = output[0].side;
    let mut d_in = want_input_grad.then(|| Map::zeros(summed_input.side));
    for m in 0..layer.out_maps() {
        let dz: Vec<f64> = output[m]
            .data
            .iter()
            .zip(&grad_out[m].data)
            .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
            .collect();
        grad.biases[m] += dz.iter().sum::<f64>();
        let gk = &mut grad.kernels[m * s * s..(m + 1) * s * s];
        let k = layer.kernel_of(m);
        for i in 0..n {
            for j in 0..n {
                let g = dz[i * n + j];
                if g == 0.0 {
                    continue;
                }
                for a in 0..s {
                    let base = (i + a) * summed_input.side + j;
                    for b in 0..s {
                        gk[a * s + b] += g * summed_input.data[base + b];
                    }
                    if let Some(d) = d_in.as_mut() {
                        for b in 0..s {
                            d.data[base + b] += g * k[a * s + b];
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// Backward through [`deconv_forward`]; same conventions as
/// [`conv_backward`].
pub(crate) fn deconv_backward(
    summed_input: &Map,
    output: &[Map],
    grad_out: &[Map],
    layer: &ConvLayer,
    grad: &mut ConvLayer,
) -> Map {
    let s = layer.kernel;
    let n_in = summed_input.side;
    let n_out = output[0].side;
    let mut d_in = Map::zeros(n_in);
    for m in 0..layer.out_maps() {
        let dz: Vec<f64> = output[m]
            .data
            .iter()
            .zip(&grad_out[m].data)
            .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
            .collect();
        grad.biases[m] += dz.iter().sum::<f64>();
        let gk = &mut grad.kernels[m * s * s..(m + 1) * s * s];
        let k = layer.kernel_of(m);
        for i in 0..n_in {
            for j in 0..n_in {
                let u = summed_input.data[i * n_in + j];
                let mut acc = 0.0;
                for a in 0..s {
                    let base = (i + a) * n_out + j;
                    for b in 0..s {
                        let g = dz[base + b];
                        gk[a * s + b] += u * g;
                        acc += g * k[a * s + b];
                    }
                }
                d_in.data[i * n_in + j] += acc;
            }
        }
    }
    d_in
}

/// Routes pooled-map gradients back to the switch positions.
pub(crate) fn pool_backward(grad_pooled: &[Map], switches: &[Switches], side: usize) -> Vec<Map> {
    grad_pooled
        .iter()
        .zip(switches)
        .map(|(g, sw)| {
            let mut out = Map::zeros(side);
            for (&v, &i) in g.data.iter().zip(sw) {
                out.data[i] += v;
            }
            out
        })
        .collect()
}

/// Gathers unpooled-map gradients from the switch positions.
pub(crate) fn unpool_backward(grad_unpooled: &Map, switches: &[Switches], pooled_side: usize) -> Vec<Map> {
    switches
        .iter()
        .map(|sw| Map::from_vec(pooled_side, sw.iter().map(|&i| grad_unpooled.data[i]).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(side: usize, rng: &mut ChaCha8Rng) -> Map {
        Map::from_vec(side, (0..side * side).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_zero_input_zero_bias() {
        let layer = ConvLayer { kernel: 3, kernels: vec![0.3; 18], biases: vec![0.0; 2] };
        let out = conv_forward(&[Map::zeros(5)], &layer).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|m| m.side == 3 && m.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn conv_unit_kernel_is_relu() {
        let input = Map::from_vec(2, vec![-1.0, 2.0, 0.5, -3.0]);
        let layer = ConvLayer { kernel: 1, kernels: vec![1.0], biases: vec![0.0] };
        let out = conv_forward(&[input], &layer).unwrap();
        assert_eq!(out[0].data, vec![0.0, 2.0, 0.5, 0.0]);
    }

    #[test]
    fn conv_three_by_three_matches_direct_sum() {
        let input = Map::from_vec(3, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0, 2.0, 0.0, 1.5]);
        let kernel = vec![0.1, 0.2, -0.3, 0.4, 0.5, 0.6, -0.7, 0.8, 0.9];
        // Frobenius inner product: 0.1 - 0.4 - 0.9 + 0.2 + 2.0 - 0.6 - 1.4 + 0 + 1.35 = 0.35
        let layer = ConvLayer { kernel: 3, kernels: kernel.clone(), biases: vec![0.05] };
        let out = conv_forward(&[input.clone()], &layer).unwrap();
        assert_eq!(out[0].side, 1);
        assert!((out[0].data[0] - 0.40).abs() < 1e-12);
        let neg = ConvLayer { biases: vec![-0.5], ..layer };
        assert_eq!(conv_forward(&[input], &neg).unwrap()[0].data[0], 0.0);
    }

    #[test]
    fn conv_sums_input_maps() {
        let a = Map::from_vec(2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Map::from_vec(2, vec![0.5, 0.5, 0.5, 0.5]);
        let layer = ConvLayer { kernel: 2, kernels: vec![1.0, 1.0, 1.0, 1.0], biases: vec![0.0] };
        let out = conv_forward(&[a, b], &layer).unwrap();
        assert_eq!(out[0].data, vec![12.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let layer = ConvLayer::zeros(3, 1);
        assert!(conv_forward(&[], &layer).is_err());
        assert!(conv_forward(&[Map::zeros(2)], &layer).is_err());
        assert!(conv_forward(&[Map::zeros(4), Map::zeros(5)], &layer).is_err());
    }

    #[test]
    fn maxpool_constant_and_simple() {
        let (p, sw) = maxpool_forward(&[Map::from_vec(4, vec![2.0; 16])], 2).unwrap();
        assert_eq!(p[0].data, vec![2.0; 4]);
        assert_eq!(sw[0], vec![0, 2, 8, 10]);
        let (p, sw) = maxpool_forward(&[Map::from_vec(2, vec![1.0, 2.0, 3.0, 4.0])], 2).unwrap();
        assert_eq!(p[0].data, vec![4.0]);
        assert_eq!(sw[0], vec![3]);
        assert!(maxpool_forward(&[Map::zeros(5)], 2).is_err());
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_map(4, &mut rng);
            let (p, sw) = maxpool_forward(&[m.clone()], 2).unwrap();
            for pi in 0..2 {
                for pj in 0..2 {
                    let cells = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(a, b)| m.at(2 * pi + a, 2 * pj + b));
                    let max = cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(p[0].at(pi, pj), max);
                    let (r, c) = (sw[0][pi * 2 + pj] / 4, sw[0][pi * 2 + pj] % 4);
                    assert!(r / 2 == pi && c / 2 == pj, "switch outside its window");
                    assert_eq!(m.at(r, c), max);
                }
            }
        }
    }

    #[test]
    fn unpool_inverts_pool_maxima() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Map::from_vec(6, (0..36).map(|_| rng.gen_range(0.1..1.0)).collect());
        let (p, sw) = maxpool_forward(&[m], 3).unwrap();
        let up = unpool(&p, &sw, 6).unwrap();
        let (again, _) = maxpool_forward(&up, 3).unwrap();
        assert_eq!(again[0].data, p[0].data);
        assert_eq!(up[0].data.iter().filter(|&&v| v != 0.0).count(), p[0].data.len());
    }

    #[test]
    fn unpool_to_window_origins() {
        let p = Map::from_vec(2, vec![1.0, 2.0, 3.0, 4.0]);
        let up = unpool(&[p], &[vec![0, 2, 8, 10]], 4).unwrap();
        let expected = [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(up[0].data, expected);
        assert!(unpool(&[Map::zeros(2)], &[vec![0, 1, 2]], 4).is_err());
        assert!(unpool(&[Map::zeros(2)], &[], 4).is_err());
        assert!(unpool(&[Map::zeros(2)], &[vec![0, 1, 2, 99]], 4).is_err());
    }

    #[test]
    fn deconv_basics() {
        let layer = ConvLayer { kernel: 3, kernels: vec![0.5; 9], biases: vec![0.0] };
        let out = deconv_forward(&[Map::zeros(2)], &layer).unwrap();
        assert_eq!(out[0].side, 4);
        assert!(out[0].data.iter().all(|&v| v == 0.0));

        let kernel = vec![1.0, -2.0, 3.0, -4.0, 5.0, -6.0, 7.0, -8.0, 9.0];
        let layer = ConvLayer { kernel: 3, kernels: kernel.clone(), biases: vec![0.5] };
        let out = deconv_forward(&[Map::from_vec(1, vec![2.0])], &layer).unwrap();
        let expected: Vec<f64> = kernel.iter().map(|k| (2.0 * k + 0.5f64).max(0.0)).collect();
        assert_eq!(out[0].data, expected);
    }

    #[test]
    fn transpose_correlate_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for s in [1, 2, 3, 5] {
            let a = random_map(9, &mut rng);
            let b = random_map(9 + 1 - s, &mut rng);
            let k: Vec<f64> = (0..s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs: f64 = correlate_valid(&a, &k, s).data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
            let rhs: f64 = a.data.iter().zip(&transpose_correlate(&b, &k, s).data).map(|(x, y)| x * y).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }
}
