//! Invariants of the mask-biased attention, checked on randomly parameterized
//! blocks and on the blocks of the default denoiser.

use perldiff::conditioning::BundleVars;
use perldiff::diffusion::{DenoiserConfig, DenoiserModel};
use perldiff::numerics::layers::linear;
use perldiff::numerics::{Graph, ParameterStore, Tensor, Var};
use perldiff::perlcm::{object_cross_attention, perlcm_block, scene_cross_attention, LevelCondition, PerlCmBlock};
use perldiff::pipeline::default_vocabulary;
use perldiff::scenegen::Palette;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const WIDTH: usize = 6;
const COND: usize = 5;
const PIXELS: usize = 9;
const SLOTS: usize = 4;
const CASES: u64 = 200;

fn block(lambda: f64) -> PerlCmBlock {
    PerlCmBlock {
        prefix: "b".into(),
        width: WIDTH,
        cond_dim: COND,
        attn_dim: 4,
        lambda_scene: lambda,
        lambda_object: lambda,
        view_attention: false,
    }
}

fn random(rng: &mut ChaCha8Rng, dims: &[usize], amp: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random_range(-amp..amp))
}

/// Every parameter of the block redrawn, so logits and gates are far from trivial.
fn random_store(seed: u64) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    block(0.0).init(&mut store, &mut rng).expect("init");
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in names {
        let dims = store.get(&n).expect("param").dims().to_vec();
        store.set(&n, random(&mut rng, &dims, 1.5)).expect("set");
    }
    store
}

/// Inputs of one object-attention call.
struct Case {
    store: ParameterStore,
    z: Tensor,
    road_token: Tensor,
    boxes: Tensor,
    null_scene: Tensor,
    null_object: Tensor,
    road_mask: Vec<f64>,
    box_masks: Vec<f64>,
    valid: Vec<bool>,
}

impl Case {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let frac = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..=1.0) };
        let road_mask = (0..PIXELS).map(|_| frac(&mut rng)).collect();
        let box_masks = (0..PIXELS * SLOTS).map(|_| frac(&mut rng)).collect();
        let mut valid: Vec<bool> = (0..SLOTS).map(|_| rng.random_bool(0.75)).collect();
        valid[0] = true;
        Self {
            store: random_store(seed),
            z: random(&mut rng, &[PIXELS, WIDTH], 2.0),
            road_token: random(&mut rng, &[1, COND], 2.0),
            boxes: random(&mut rng, &[SLOTS, COND], 2.0),
            null_scene: random(&mut rng, &[1, COND], 2.0),
            null_object: random(&mut rng, &[1, COND], 2.0),
            road_mask,
            box_masks,
            valid,
        }
    }

    /// Scene output and weights, then object output and weights.
    fn run(&self, lambda: f64) -> (Tensor, Tensor, Tensor, Tensor) {
        let b = block(lambda);
        let mut g = Graph::new();
        let z = g.constant(self.z.clone());
        let (hm, hb) = (g.constant(self.road_token.clone()), g.constant(self.boxes.clone()));
        let (ns, no) = (g.constant(self.null_scene.clone()), g.constant(self.null_object.clone()));
        let (zs, sa) = scene_cross_attention(&mut g, &self.store, &b, z, hm, ns, &self.road_mask).expect("scene");
        let (zb, oa) =
            object_cross_attention(&mut g, &self.store, &b, z, hb, no, &self.box_masks, &self.valid).expect("object");
        (g.value(zs).clone(), g.value(sa).clone(), g.value(zb).clone(), g.value(oa).clone())
    }

    /// The same case with box slots reordered by `perm`.
    fn permuted(&self, perm: &[usize]) -> Self {
        let boxes = perm.iter().flat_map(|&j| self.boxes.data()[j * COND..(j + 1) * COND].to_vec()).collect();
        let box_masks = (0..PIXELS).flat_map(|p| perm.iter().map(move |&j| (p, j))).map(|(p, j)| self.box_masks[p * SLOTS + j]);
        Self {
            store: self.store.clone(),
            z: self.z.clone(),
            road_token: self.road_token.clone(),
            boxes: Tensor::new(&[SLOTS, COND], boxes).expect("boxes"),
            null_scene: self.null_scene.clone(),
            null_object: self.null_object.clone(),
            road_mask: self.road_mask.clone(),
            box_masks: box_masks.collect(),
            valid: perm.iter().map(|&j| self.valid[j]).collect(),
        }
    }
}

/// Plain attention without any bias, built from graph primitives.
fn unbiased(g: &mut Graph, store: &ParameterStore, prefix: &str, z: Var, keys: Var) -> (Var, Var) {
    let q = linear(g, store, &format!("{prefix}.q"), z).expect("q");
    let k = linear(g, store, &format!("{prefix}.k"), keys).expect("k");
    let v = linear(g, store, &format!("{prefix}.v"), keys).expect("v");
    let s = g.matmul_t(q, false, k, true).expect("qk");
    let logits = g.scale(s, 1.0 / (g.dims(q)[1] as f64).sqrt());
    let a = g.softmax(logits);
    let out = g.matmul(a, v).expect("av");
    let out = linear(g, store, &format!("{prefix}.o"), out).expect("o");
    let gamma = g.param(store, &format!("{prefix}.gamma")).expect("gamma");
    let gated = g.scale_by(out, gamma).expect("gate");
    (g.add(gated, z).expect("residual"), a)
}

/// Softmax weights recomputed with scalar loops, for comparison with a tolerance.
fn reference_weights(store: &ParameterStore, prefix: &str, z: &Tensor, keys: &Tensor) -> Vec<f64> {
    let lin = |x: &Tensor, name: &str| -> Vec<Vec<f64>> {
        let w = store.get(&format!("{prefix}.{name}.weight")).expect("w");
        let b = store.get(&format!("{prefix}.{name}.bias")).expect("b");
        let (n, inp) = x.as_matrix_dims();
        let out = w.dims()[1];
        (0..n)
            .map(|r| (0..out).map(|c| b.data()[c] + (0..inp).map(|i| x.at2(r, i) * w.at2(i, c)).sum::<f64>()).collect())
            .collect()
    };
    let (q, k) = (lin(z, "q"), lin(keys, "k"));
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    let mut out = Vec::new();
    for qr in &q {
        let logits: Vec<f64> = k.iter().map(|kr| scale * qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>()).collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn stack(a: &Tensor, b: &Tensor) -> Tensor {
    let mut d = a.data().to_vec();
    d.extend_from_slice(b.data());
    Tensor::new(&[a.dims()[0] + b.dims()[0], a.dims()[1]], d).expect("stack")
}

fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
    a.dims() == b.dims() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn row_sum_error(w: &Tensor) -> f64 {
    let cols = w.dims()[1];
    w.data().chunks(cols).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

fn rows_sum_to_one() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut negative = false;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..CASES {
        let case = Case::new(seed);
        let (_, sa, _, oa) = case.run(rng.random_range(0.0..50.0));
        worst = worst.max(row_sum_error(&sa)).max(row_sum_error(&oa));
        negative |= sa.data().iter().chain(oa.data()).any(|&v| v < 0.0);
    }
    (worst < 1e-9 && !negative, format!("row sums within {worst:.1e}"))
}

fn zero_lambda_is_unbiased() -> (bool, String) {
    let mut exact = true;
    let mut worst = 0.0f64;
    for seed in 0..CASES {
        let mut case = Case::new(seed);
        case.valid = vec![true; SLOTS];
        let (zs, sa, zb, oa) = case.run(0.0);
        let mut g = Graph::new();
        let z = g.constant(case.z.clone());
        let road_keys = g.constant(stack(&case.road_token, &case.null_scene));
        let box_keys = g.constant(stack(&case.boxes, &case.null_object));
        let (us, usa) = unbiased(&mut g, &case.store, "b.scene", z, road_keys);
        let (ub, uoa) = unbiased(&mut g, &case.store, "b.object", z, box_keys);
        exact &= bits_equal(&zs, g.value(us)) && bits_equal(&sa, g.value(usa));
        exact &= bits_equal(&zb, g.value(ub)) && bits_equal(&oa, g.value(uoa));
        let reference = reference_weights(&case.store, "b.object", &case.z, &stack(&case.boxes, &case.null_object));
        worst = oa.data().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    (exact && worst < 1e-12, format!("bit-identical {exact}, scalar reference within {worst:.1e}"))
}

/// In-mask weight of a pixel is `Σ a_i m_i` over its keys; its derivative in
/// λ is the variance of the mask values under the weights, so it rises with λ.
/// With binary masks this is the total weight on covering keys.
fn in_mask_weight_grows() -> (bool, String) {
    let lambdas = [0.0, 0.25, 1.0, 2.0, 5.0, 10.0, 20.0];
    let (mut checked, mut violations) = (0usize, 0usize);
    for seed in 0..CASES {
        let case = Case::new(seed);
        let in_mask: Vec<(Vec<f64>, Vec<f64>)> = lambdas
            .iter()
            .map(|&l| {
                let (_, sa, _, oa) = case.run(l);
                let road = (0..PIXELS).map(|p| sa.at2(p, 0) * case.road_mask[p]).collect();
                let objects = (0..PIXELS)
                    .map(|p| (0..SLOTS).filter(|&i| case.valid[i]).map(|i| oa.at2(p, i) * case.box_masks[p * SLOTS + i]).sum())
                    .collect();
                (road, objects)
            })
            .collect();
        for w in in_mask.windows(2) {
            for p in 0..PIXELS {
                let covered = (0..SLOTS).any(|i| case.valid[i] && case.box_masks[p * SLOTS + i] > 0.0);
                for (on, lo, hi) in [(case.road_mask[p] > 0.0, w[0].0[p], w[1].0[p]), (covered, w[0].1[p], w[1].1[p])] {
                    if on {
                        checked += 1;
                        violations += !(hi >= lo) as usize;
                    }
                }
            }
        }
    }
    (violations == 0 && checked > 0, format!("{checked} in-mask weights, {violations} decreasing"))
}

fn permutation_equivariance() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..CASES {
        let case = Case::new(seed);
        let mut perm: Vec<usize> = (0..SLOTS).collect();
        for i in (1..SLOTS).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (_, _, zb, oa) = case.run(5.0);
        let (_, _, pzb, poa) = case.permuted(&perm).run(5.0);
        worst = worst.max(zb.max_abs_diff(&pzb));
        for p in 0..PIXELS {
            for (i, &j) in perm.iter().enumerate() {
                if case.valid[j] {
                    worst = worst.max((poa.at2(p, i) - oa.at2(p, j)).abs());
                }
            }
            worst = worst.max((poa.at2(p, SLOTS) - oa.at2(p, SLOTS)).abs());
        }
    }
    (worst < 1e-9, format!("permuted outputs within {worst:.1e}"))
}

/// Every block of the default denoiser, freshly initialized, maps its input to itself.
fn blocks_start_as_identity() -> (bool, String) {
    let palette = Palette::default();
    let cfg = DenoiserConfig::default();
    let model = DenoiserModel::new(cfg.clone(), default_vocabulary(&palette)).expect("model");
    let store = model.init(11).expect("init");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cams = 3;
    let mut identical = true;
    for b in model.blocks() {
        let mut g = Graph::new();
        let zs: Vec<Var> = (0..cams).map(|_| g.constant(random(&mut rng, &[PIXELS, b.width], 2.0))).collect();
        let m = cfg.max_boxes;
        let tokens: Vec<BundleVars> = (0..cams)
            .map(|_| BundleVars {
                h_m: g.constant(random(&mut rng, &[1, b.cond_dim], 2.0)),
                h_d: g.constant(random(&mut rng, &[1, b.cond_dim], 2.0)),
                h_b: g.constant(random(&mut rng, &[m, b.cond_dim], 2.0)),
                null_scene: g.constant(random(&mut rng, &[1, b.cond_dim], 2.0)),
                null_object: g.constant(random(&mut rng, &[1, b.cond_dim], 2.0)),
            })
            .collect();
        let road: Vec<f64> = (0..PIXELS).map(|_| rng.random_range(0.0..=1.0)).collect();
        let boxes: Vec<f64> = (0..PIXELS * m).map(|_| rng.random_range(0.0..=1.0)).collect();
        let valid: Vec<bool> = (0..m).map(|i| i % 3 != 2).collect();
        let conds: Vec<LevelCondition> =
            tokens.iter().map(|&t| LevelCondition { tokens: t, road_mask: &road, box_masks: &boxes, valid: &valid }).collect();
        let (out, _) = perlcm_block(&mut g, &store, b, &zs, &conds).expect("block");
        identical &= out.iter().zip(&zs).all(|(o, z)| bits_equal(g.value(*o), g.value(*z)));
    }
    (identical, format!("{} fresh blocks identity {identical}", model.blocks().len()))
}

pub fn invariants() -> Outcome {
    let checks = [
        rows_sum_to_one(),
        zero_lambda_is_unbiased(),
        in_mask_weight_grows(),
        permutation_equivariance(),
        blocks_start_as_identity(),
    ];
    Outcome {
        pass: checks.iter().all(|c| c.0),
        detail: checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "),
    }
}
