use ief_core::net::{gradient_check, loss_and_grad, sgd_update, Architecture, PredictorParams, SgdConfig};
use ief_core::render::AugmentedInput;
use ief_core::rng;
use rand::Rng;

fn arch() -> Architecture {
    Architecture::reference(12, 12, 1, 3, 2)
}

fn input(arch: &Architecture, rng: &mut impl Rng) -> AugmentedInput {
    AugmentedInput {
        width: arch.width,
        height: arch.height,
        image_channels: arch.image_channels,
        heatmap_channels: arch.heatmap_channels,
        data: (0..arch.in_channels() * arch.width * arch.height).map(|_| rng.gen::<f32>()).collect(),
    }
}

fn batch_loss(params: &PredictorParams<f32>, inputs: &[AugmentedInput], target: &[f64], mask: &[bool]) -> f64 {
    inputs
        .iter()
        .map(|x| {
            let (out, _) = params.forward(x).unwrap();
            loss_and_grad(&out, target, mask).unwrap().0 as f64
        })
        .sum()
}

#[test]
fn tiny_net_passes_the_gradient_oracle() {
    let mut rng = rng::stream(3, 0);
    let a = Architecture::reference(4, 4, 1, 2, 2);
    let params = PredictorParams::<f64>::init(a.clone(), &mut rng).unwrap();
    assert!(params.num_params() <= 10_000);
    for _ in 0..5 {
        let x = input(&a, &mut rng);
        let target = [1.5, -2.0, 0.25, 3.0];
        let g = gradient_check(&params, &x, &target, &[true, true], 1e-5, 40, &mut rng).unwrap();
        assert_eq!(g.checked, 40);
        assert!(g.max_relative_error < 1e-4, "{}", g.max_relative_error);
    }
}

#[test]
fn masked_target_changes_neither_loss_nor_gradients() {
    let mut rng = rng::stream(4, 0);
    let a = arch();
    let params = PredictorParams::<f64>::init(a.clone(), &mut rng).unwrap();
    let x = input(&a, &mut rng);
    let (out, cache) = params.forward(&x).unwrap();
    let mask = [true, false];
    let (l1, d1) = loss_and_grad(&out, &[1.0, 2.0, 3.0, 4.0], &mask).unwrap();
    let (l2, d2) = loss_and_grad(&out, &[1.0, 2.0, -300.0, 1e6], &mask).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(d1, d2);
    assert_eq!(&d1[2..], &[0.0, 0.0]);
    let g1 = params.backward(&cache, &d1).unwrap();
    let g2 = params.backward(&cache, &d2).unwrap();
    assert_eq!(g1.tensors, g2.tensors);
}

#[test]
fn masked_outputs_have_zero_numeric_gradient() {
    let mut rng = rng::stream(5, 0);
    let a = arch();
    let mut params = PredictorParams::<f64>::init(a.clone(), &mut rng).unwrap();
    let x = input(&a, &mut rng);
    let target = [0.5, 0.5, 9.0, 9.0];
    let mask = [true, false];
    let loss = |p: &PredictorParams<f64>| loss_and_grad(&p.forward(&x).unwrap().0, &target, &mask).unwrap().0;
    // The last tensor is the output bias; entries 2 and 3 feed the masked keypoint.
    let total = params.num_params();
    let bias_start = total - a.outputs;
    for i in [bias_start + 2, bias_start + 3] {
        let v = params.get_flat(i);
        params.set_flat(i, v + 1e-3);
        let up = loss(&params);
        params.set_flat(i, v - 1e-3);
        let down = loss(&params);
        params.set_flat(i, v);
        assert_eq!(up, down);
    }
}

#[test]
fn small_step_does_not_increase_batch_loss() {
    let mut rng = rng::stream(6, 0);
    let a = Architecture::reference(32, 32, 1, 7, 6);
    let mut params = PredictorParams::<f32>::init(a.clone(), &mut rng).unwrap();
    let inputs: Vec<AugmentedInput> = (0..4).map(|_| input(&a, &mut rng)).collect();
    let target: Vec<f64> = (0..12).map(|i| (i as f64 - 6.0) * 0.7).collect();
    let mask = [true; 6];
    let before = batch_loss(&params, &inputs, &target, &mask);
    let refs: Vec<&AugmentedInput> = inputs.iter().collect();
    let (out, cache) = params.forward_batch(&refs).unwrap();
    let mut d = Vec::new();
    for chunk in out.chunks_exact(12) {
        d.extend(loss_and_grad(chunk, &target, &mask).unwrap().1);
    }
    let grads = params.backward(&cache, &d).unwrap();
    sgd_update(&mut params, &grads, &SgdConfig { learning_rate: 1e-4, momentum: 0.9 }).unwrap();
    let after = batch_loss(&params, &inputs, &target, &mask);
    assert!(after <= before, "{before} -> {after}");
}

#[test]
fn seeded_updates_are_bit_reproducible() {
    let run = || {
        let mut rng = rng::stream(8, 0);
        let a = arch();
        let mut params = PredictorParams::<f32>::init(a.clone(), &mut rng).unwrap();
        for _ in 0..10 {
            let x = input(&a, &mut rng);
            let (out, cache) = params.forward(&x).unwrap();
            let (_, d) = loss_and_grad(&out, &[1.0, 1.0, -1.0, 2.0], &[true, true]).unwrap();
            let grads = params.backward(&cache, &d).unwrap();
            sgd_update(&mut params, &grads, &SgdConfig { learning_rate: 1e-3, momentum: 0.9 }).unwrap();
        }
        params
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradients() {
    let mut rng = rng::stream(9, 0);
    let a = arch();
    let params = PredictorParams::<f64>::init(a.clone(), &mut rng).unwrap();
    let (_, cache) = params.forward(&input(&a, &mut rng)).unwrap();
    let g = params.backward(&cache, &[0.0; 4]).unwrap();
    assert!(g.tensors.iter().all(|t| t.iter().all(|&v| v == 0.0)));
}
