//! Forward and reverse-mode passes of the point-set networks.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::arch::{Head, LayerSlice, ParamsView};
use crate::pointcloud::Point3;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, mask drawn from `seed`.
    Train { seed: u64 },
}

pub fn points_to_matrix<T: Real>(points: &[Point3<T>]) -> Array2<T> {
    let mut m = Array2::zeros((points.len(), 3));
    for (mut row, p) in m.rows_mut().into_iter().zip(points) {
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.z;
    }
    m
}

fn weights<'a, T: Real>(values: &'a [T], layer: &LayerSlice) -> (ArrayView2<'a, T>, ArrayView1<'a, T>) {
    let n = layer.fan_in * layer.fan_out;
    let w = ArrayView2::from_shape(
        (layer.fan_in, layer.fan_out),
        &values[layer.weight_offset..layer.weight_offset + n],
    )
    .expect("layout matches arch");
    let b = ArrayView1::from(&values[layer.bias_offset..layer.bias_offset + layer.fan_out]);
    (w, b)
}

fn affine<T: Real>(input: &ArrayView2<T>, w: &ArrayView2<T>, b: &ArrayView1<T>) -> Array2<T> {
    let mut out = Array2::zeros((input.nrows(), w.ncols()));
    for mut row in out.rows_mut() {
        row.assign(b);
    }
    general_mat_mul(T::one(), input, w, T::one(), &mut out);
    out
}

fn relu_in_place<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub input: Array2<T>,
    /// Post-ReLU output of every per-point layer.
    pub per_point: Vec<Array2<T>>,
    /// Point index achieving each pooled channel (first on ties).
    pub argmax: Vec<usize>,
    pub pooled: Array1<T>,
    pub global_input: Array2<T>,
    /// Post-ReLU output of every global layer, before dropout.
    pub global: Vec<Array2<T>>,
    /// Scaled keep mask applied to the last global layer.
    pub dropout: Option<Array2<T>>,
    pub output: Array2<T>,
}

fn check_input<T: Real>(params: &ParamsView<T>, input: &ArrayView2<T>) -> Result<()> {
    if input.nrows() == 0 {
        return Err(Error::Dimension("network input has no points".into()));
    }
    if input.ncols() != params.arch.input_dim {
        return Err(Error::Dimension(format!(
            "expected {} input columns, got {}",
            params.arch.input_dim,
            input.ncols()
        )));
    }
    if params.values.len() != params.arch.param_count() {
        return Err(Error::Dimension("parameter vector does not match architecture".into()));
    }
    Ok(())
}

pub fn forward_traced<T: Real>(params: &ParamsView<T>, input: ArrayView2<T>, mode: Mode) -> Result<Trace<T>> {
    check_input(params, &input)?;
    let arch = params.arch;
    let n_point = arch.per_point_layer_widths.len();
    let n_global = arch.global_layer_widths.len();
    let n = input.nrows();

    let mut per_point: Vec<Array2<T>> = Vec::with_capacity(n_point);
    for layer in &params.layout[..n_point] {
        let (w, b) = weights(params.values, layer);
        let prev = per_point.last().map(|a| a.view()).unwrap_or_else(|| input.view());
        let mut out = affine(&prev, &w, &b);
        relu_in_place(&mut out);
        per_point.push(out);
    }

    let last = per_point.last().expect("validated arch");
    let channels = last.ncols();
    let mut pooled = Array1::from_elem(channels, T::neg_infinity());
    let mut argmax = vec![0usize; channels];
    for (p, row) in last.rows().into_iter().enumerate() {
        for c in 0..channels {
            if row[c] > pooled[c] {
                pooled[c] = row[c];
                argmax[c] = p;
            }
        }
    }

    let global_input = match arch.head {
        Head::PerPointBinary => {
            let local = &per_point[0];
            let w0 = local.ncols();
            let mut gi = Array2::zeros((n, w0 + channels));
            gi.slice_mut(s![.., ..w0]).assign(local);
            for mut row in gi.rows_mut() {
                row.slice_mut(s![w0..]).assign(&pooled);
            }
            gi
        }
        Head::Vector { .. } => pooled.clone().insert_axis(Axis(0)),
    };

    let mut global: Vec<Array2<T>> = Vec::with_capacity(n_global);
    let mut dropout = None;
    let mut current = global_input.clone();
    for (j, layer) in params.layout[n_point..n_point + n_global].iter().enumerate() {
        let (w, b) = weights(params.values, layer);
        let mut out = affine(&current.view(), &w, &b);
        relu_in_place(&mut out);
        global.push(out.clone());
        let is_last = j + 1 == n_global;
        if let (true, Mode::Train { seed }) = (is_last, mode) {
            if arch.dropout_keep < 1.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keep = arch.dropout_keep;
                let scale = T::lit(1.0 / keep);
                let mask = Array2::from_shape_fn(out.dim(), |_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                });
                out = &out * &mask;
                dropout = Some(mask);
            }
        }
        current = out;
    }

    let (w, b) = weights(params.values, params.layout.last().expect("output layer"));
    let output = affine(&current.view(), &w, &b);
    Ok(Trace {
        input: input.to_owned(),
        per_point,
        argmax,
        pooled,
        global_input,
        global,
        dropout,
        output,
    })
}

fn accumulate_layer<T: Real>(
    grad: &mut [T],
    layer: &LayerSlice,
    input: &ArrayView2<T>,
    delta: &ArrayView2<T>,
) {
    let n = layer.fan_in * layer.fan_out;
    {
        let mut gw = ArrayViewMut2::from_shape(
            (layer.fan_in, layer.fan_out),
            &mut grad[layer.weight_offset..layer.weight_offset + n],
        )
        .expect("layout matches arch");
        general_mat_mul(T::one(), &input.t(), delta, T::one(), &mut gw);
    }
    let mut gb = ArrayViewMut1::from(&mut grad[layer.bias_offset..layer.bias_offset + layer.fan_out]);
    gb += &delta.sum_axis(Axis(0));
}

fn relu_backward<T: Real>(delta: &mut Array2<T>, activation: &Array2<T>) {
    delta.zip_mut_with(activation, |d, a| {
        if *a <= T::zero() {
            *d = T::zero();
        }
    });
}

/// Accumulates `d loss / d params` into `grad` and returns `d loss / d input`.
pub fn backward_traced<T: Real>(
    params: &ParamsView<T>,
    trace: &Trace<T>,
    d_output: ArrayView2<T>,
    grad: &mut [T],
) -> Result<Array2<T>> {
    if d_output.dim() != trace.output.dim() {
        return Err(Error::Dimension(format!(
            "output gradient {:?} does not match output {:?}",
            d_output.dim(),
            trace.output.dim()
        )));
    }
    if grad.len() != params.values.len() {
        return Err(Error::Dimension("gradient buffer length".into()));
    }
    let arch = params.arch;
    let n_point = arch.per_point_layer_widths.len();
    let n_global = arch.global_layer_widths.len();
    let layout = params.layout;

    // Output layer.
    let out_layer = layout.last().expect("output layer");
    let last_hidden = match trace.global.last() {
        Some(g) => match &trace.dropout {
            Some(mask) => g * mask,
            None => g.clone(),
        },
        None => trace.global_input.clone(),
    };
    accumulate_layer(grad, out_layer, &last_hidden.view(), &d_output);
    let (w, _) = weights(params.values, out_layer);
    let mut delta = d_output.dot(&w.t());

    // Global stack.
    for j in (0..n_global).rev() {
        if j + 1 == n_global {
            if let Some(mask) = &trace.dropout {
                delta = &delta * mask;
            }
        }
        relu_backward(&mut delta, &trace.global[j]);
        let layer = &layout[n_point + j];
        let input = if j == 0 { &trace.global_input } else { &trace.global[j - 1] };
        accumulate_layer(grad, layer, &input.view(), &delta.view());
        let (w, _) = weights(params.values, layer);
        delta = delta.dot(&w.t());
    }

    // Split the global-input gradient into local and pooled parts.
    let channels = trace.pooled.len();
    let (d_local, d_pooled) = match arch.head {
        Head::PerPointBinary => {
            let w0 = trace.per_point[0].ncols();
            (
                Some(delta.slice(s![.., ..w0]).to_owned()),
                delta.slice(s![.., w0..]).sum_axis(Axis(0)),
            )
        }
        Head::Vector { .. } => (None, delta.row(0).to_owned()),
    };

    let n = trace.input.nrows();
    let mut delta = Array2::zeros((n, channels));
    for c in 0..channels {
        delta[[trace.argmax[c], c]] = d_pooled[c];
    }

    for i in (0..n_point).rev() {
        if i == 0 {
            if let Some(local) = &d_local {
                delta += local;
            }
        }
        relu_backward(&mut delta, &trace.per_point[i]);
        let layer = &layout[i];
        let input = if i == 0 { &trace.input } else { &trace.per_point[i - 1] };
        accumulate_layer(grad, layer, &input.view(), &delta.view());
        let (w, _) = weights(params.values, layer);
        delta = delta.dot(&w.t());
    }
    Ok(delta)
}

/// Per-point logits (`n x 2`).
pub fn forward_seg<T: Real>(params: &ParamsView<T>, points: ArrayView2<T>, mode: Mode) -> Result<Array2<T>> {
    if params.arch.head != Head::PerPointBinary {
        return Err(Error::Dimension("forward_seg needs a per-point binary head".into()));
    }
    Ok(forward_traced(params, points, mode)?.output)
}

pub fn forward_vec<T: Real>(params: &ParamsView<T>, points: ArrayView2<T>, mode: Mode) -> Result<Array1<T>> {
    if !matches!(params.arch.head, Head::Vector { .. }) {
        return Err(Error::Dimension("forward_vec needs a vector head".into()));
    }
    Ok(forward_traced(params, points, mode)?.output.row(0).to_owned())
}

/// The max-pooled global feature.
pub fn pooled_feature<T: Real>(params: &ParamsView<T>, points: ArrayView2<T>) -> Result<Array1<T>> {
    Ok(forward_traced(params, points, Mode::Eval)?.pooled)
}

/// A forward operation paired with its loss and targets.
#[derive(Clone, Copy, Debug)]
pub enum LossSpec<'a, T> {
    /// `forward_seg` under mean per-point cross-entropy.
    SegCrossEntropy { labels: &'a [u8] },
    /// `forward_vec` under mean smooth L1.
    VecSmoothL1 { target: &'a [T], delta: T },
}

fn ensure_finite<T: Real>(values: impl IntoIterator<Item = T>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(what.into()))
    }
}

/// Loss value and its exact gradient with respect to every parameter.
pub fn loss_and_gradient<T: Real>(
    params: &ParamsView<T>,
    input: ArrayView2<T>,
    mode: Mode,
    loss: LossSpec<T>,
) -> Result<(T, Vec<T>)> {
    let trace = forward_traced(params, input, mode)?;
    ensure_finite(trace.output.iter().copied(), "network output")?;
    let (value, d_output) = match (loss, params.arch.head) {
        (LossSpec::SegCrossEntropy { labels }, Head::PerPointBinary) => {
            crate::nn::loss::cross_entropy_per_point_grad(trace.output.view(), labels)?
        }
        (LossSpec::VecSmoothL1 { target, delta }, Head::Vector { .. }) => {
            let (v, g) = crate::nn::loss::smooth_l1_grad(trace.output.row(0).as_slice().expect("contiguous"), target, delta)?;
            (v, Array2::from_shape_vec((1, g.len()), g).expect("row vector"))
        }
        _ => return Err(Error::Dimension("loss does not match the network head".into())),
    };
    ensure_finite([value], "loss")?;
    let mut grad = vec![T::zero(); params.values.len()];
    backward_traced(params, &trace, d_output.view(), &mut grad)?;
    ensure_finite(grad.iter().copied(), "gradient")?;
    Ok((value, grad))
}

pub fn backward<T: Real>(params: &ParamsView<T>, input: ArrayView2<T>, mode: Mode, loss: LossSpec<T>) -> Result<Vec<T>> {
    Ok(loss_and_gradient(params, input, mode, loss)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{ArchDescriptor, ModelParams};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_input(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0))
    }

    fn permuted(input: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
        input.select(Axis(0), perm)
    }

    #[test]
    fn output_shapes() {
        let seg = ModelParams::<f64>::init(ArchDescriptor::desk_segmentation(), 1).unwrap();
        let out = forward_seg(&seg.view(), random_input(1, 2).view(), Mode::Eval).unwrap();
        assert_eq!(out.dim(), (1, 2));
        let vec = ModelParams::<f64>::init(ArchDescriptor::desk_vector(7), 1).unwrap();
        let out = forward_vec(&vec.view(), random_input(5, 2).view(), Mode::Eval).unwrap();
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn shape_errors() {
        let seg = ModelParams::<f64>::init(ArchDescriptor::desk_segmentation(), 1).unwrap();
        assert!(matches!(
            forward_seg(&seg.view(), Array2::zeros((4, 2)).view(), Mode::Eval),
            Err(Error::Dimension(_))
        ));
        assert!(forward_seg(&seg.view(), Array2::zeros((0, 3)).view(), Mode::Eval).is_err());
        assert!(forward_vec(&seg.view(), random_input(3, 0).view(), Mode::Eval).is_err());
    }

    #[test]
    fn duplicate_point_keeps_pooled_feature() {
        let params = ModelParams::<f64>::init(ArchDescriptor::desk_segmentation(), 3).unwrap();
        let input = random_input(20, 4);
        let mut dup = input.clone().into_raw_vec_and_offset().0;
        dup.extend_from_slice(&[input[[7, 0]], input[[7, 1]], input[[7, 2]]]);
        let dup = Array2::from_shape_vec((21, 3), dup).unwrap();
        let a = pooled_feature(&params.view(), input.view()).unwrap();
        let b = pooled_feature(&params.view(), dup.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_single_point_matches_single() {
        let params = ModelParams::<f64>::init(ArchDescriptor::desk_vector(5), 8).unwrap();
        let one = random_input(1, 9);
        let many = Array2::from_shape_fn((100, 3), |(_, c)| one[[0, c]]);
        let a = forward_vec(&params.view(), one.view(), Mode::Eval).unwrap();
        let b = forward_vec(&params.view(), many.view(), Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let params = ModelParams::<f64>::init(ArchDescriptor::desk_vector(4), 2).unwrap();
        let input = random_input(30, 1);
        let e1 = forward_vec(&params.view(), input.view(), Mode::Eval).unwrap();
        let e2 = forward_vec(&params.view(), input.view(), Mode::Eval).unwrap();
        assert_eq!(e1, e2);
        let t1 = forward_vec(&params.view(), input.view(), Mode::Train { seed: 5 }).unwrap();
        let t2 = forward_vec(&params.view(), input.view(), Mode::Train { seed: 5 }).unwrap();
        let t3 = forward_vec(&params.view(), input.view(), Mode::Train { seed: 6 }).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, t3);
        assert_ne!(t1, e1);
    }

    #[test]
    fn zero_output_layer_zero_target_has_zero_bias_gradient() {
        let mut params = ModelParams::<f64>::init(ArchDescriptor::vector(&[8, 16], &[8], 3), 11).unwrap();
        params.zero_output_layer();
        let input = random_input(12, 3);
        let target = [0.0; 3];
        let out = forward_vec(&params.view(), input.view(), Mode::Eval).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let grad = backward(
            &params.view(),
            input.view(),
            Mode::Eval,
            LossSpec::VecSmoothL1 { target: &target, delta: 1.0 },
        )
        .unwrap();
        assert_eq!(grad.len(), params.values.len());
        let out_layer = params.layer("output").unwrap();
        assert!(grad[out_layer.bias_offset..].iter().all(|g| *g == 0.0));

        let target = [0.5, 0.0, 0.0];
        let grad = backward(
            &params.view(),
            input.view(),
            Mode::Eval,
            LossSpec::VecSmoothL1 { target: &target, delta: 1.0 },
        )
        .unwrap();
        assert!(grad[out_layer.bias_offset] != 0.0);
    }

    #[test]
    fn mismatched_loss_rejected() {
        let params = ModelParams::<f64>::init(ArchDescriptor::vector(&[4], &[4], 2), 0).unwrap();
        let labels = [0u8; 3];
        let r = backward(&params.view(), random_input(3, 0).view(), Mode::Eval, LossSpec::SegCrossEntropy { labels: &labels });
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_input_is_numeric_overflow() {
        let params = ModelParams::<f64>::init(ArchDescriptor::vector(&[4], &[4], 2), 0).unwrap();
        let mut input = random_input(3, 0);
        input[[1, 1]] = f64::MAX;
        input[[2, 1]] = -f64::MAX;
        let target = [0.0, 0.0];
        let r = backward(&params.view(), input.view(), Mode::Eval, LossSpec::VecSmoothL1 { target: &target, delta: 1.0 });
        assert!(matches!(r, Err(Error::NumericOverflow(_))));
    }

    // Central differences on a small network. Entries whose perturbation flips
    // a ReLU or an argmax are skipped because the loss is not differentiable
    // there; the skipped fraction is bounded.
    fn check_gradient(params: &ModelParams<f64>, input: &Array2<f64>, mode: Mode, loss: LossSpec<f64>) {
        let (_, grad) = loss_and_gradient(&params.view(), input.view(), mode, loss).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        let pattern = |values: &[f64]| {
            let t = forward_traced(&params.with_values(values), input.view(), mode).unwrap();
            let sig: Vec<bool> = t.per_point.iter().chain(&t.global).flat_map(|a| a.iter().map(|v| *v > 0.0)).collect();
            (sig, t.argmax)
        };
        let base = pattern(&params.values);
        for i in 0..params.values.len() {
            let mut up = params.values.clone();
            up[i] += h;
            let mut down = params.values.clone();
            down[i] -= h;
            if pattern(&up) != base || pattern(&down) != base {
                skipped += 1;
                continue;
            }
            let f = |v: &[f64]| loss_and_gradient(&params.with_values(v), input.view(), mode, loss).unwrap().0;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
        assert!(skipped * 20 <= params.values.len(), "skipped {skipped} of {}", params.values.len());
    }

    #[test]
    fn segmentation_gradient_matches_finite_differences() {
        let arch = ArchDescriptor::segmentation(&[6, 10], &[8, 6]);
        let params = ModelParams::<f64>::init(arch, 21).unwrap();
        assert!(params.values.len() <= 2000);
        let input = random_input(9, 22);
        let labels = [1u8, 0, 0, 1, 1, 0, 1, 0, 0];
        check_gradient(&params, &input, Mode::Eval, LossSpec::SegCrossEntropy { labels: &labels });
        check_gradient(&params, &input, Mode::Train { seed: 3 }, LossSpec::SegCrossEntropy { labels: &labels });
    }

    #[test]
    fn vector_gradient_matches_finite_differences() {
        let arch = ArchDescriptor::vector(&[6, 12], &[10, 8], 4);
        let params = ModelParams::<f64>::init(arch, 31).unwrap();
        let input = random_input(11, 32);
        let target = [0.3, -2.0, 0.05, 1.1];
        check_gradient(&params, &input, Mode::Eval, LossSpec::VecSmoothL1 { target: &target, delta: 1.0 });
        check_gradient(&params, &input, Mode::Train { seed: 9 }, LossSpec::VecSmoothL1 { target: &target, delta: 1.0 });
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let arch = ArchDescriptor::vector(&[8, 8], &[8], 2);
        let params = ModelParams::<f64>::init(arch, 5).unwrap();
        let input = random_input(6, 6);
        let target = [0.4, -0.4];
        let loss = LossSpec::VecSmoothL1 { target: &target, delta: 1.0 };
        let trace = forward_traced(&params.view(), input.view(), Mode::Eval).unwrap();
        let (_, d_out) = crate::nn::loss::smooth_l1_grad(trace.output.row(0).as_slice().unwrap(), &target, 1.0).unwrap();
        let d_out = Array2::from_shape_vec((1, 2), d_out).unwrap();
        let mut grad = vec![0.0; params.values.len()];
        let d_input = backward_traced(&params.view(), &trace, d_out.view(), &mut grad).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (2, 1), (5, 2), (3, 0)] {
            let mut up = input.clone();
            up[idx] += h;
            let mut down = input.clone();
            down[idx] -= h;
            let f = |x: &Array2<f64>| loss_and_gradient(&params.view(), x.view(), Mode::Eval, loss).unwrap().0;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert!((fd - d_input[idx]).abs() <= 1e-6 * fd.abs().max(1.0), "{idx:?}: {fd} vs {}", d_input[idx]);
        }
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let p64 = ModelParams::<f64>::init(ArchDescriptor::desk_segmentation(), 12).unwrap();
        let p32 = p64.cast::<f32>();
        let input = random_input(40, 13);
        let a = forward_seg(&p64.view(), input.view(), Mode::Eval).unwrap();
        let b = forward_seg(&p32.view(), input.mapv(|v| v as f32).view(), Mode::Eval).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn seg_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..40) {
            let params = ModelParams::<f64>::init(ArchDescriptor::segmentation(&[8, 16], &[16, 8]), seed).unwrap();
            let input = random_input(n, seed ^ 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 2));
            let out = forward_seg(&params.view(), input.view(), Mode::Eval).unwrap();
            let out_perm = forward_seg(&params.view(), permuted(&input, &perm).view(), Mode::Eval).unwrap();
            prop_assert_eq!(out_perm, permuted(&out, &perm));
        }

        #[test]
        fn vec_is_permutation_invariant(seed in any::<u64>(), n in 1usize..40) {
            let params = ModelParams::<f64>::init(ArchDescriptor::vector(&[8, 16], &[16, 8], 5), seed).unwrap();
            let input = random_input(n, seed ^ 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 2));
            let a = forward_vec(&params.view(), input.view(), Mode::Eval).unwrap();
            let b = forward_vec(&params.view(), permuted(&input, &perm).view(), Mode::Eval).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
