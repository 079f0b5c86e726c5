//! Backward-pass gradients against central finite differences.

use insert_core::data::Split;
use insert_core::model::layers::gru_cell;
use insert_core::model::{loss, session_loss, LossMode, Model, ModelConfig, Variant};
use insert_core::retrieval::{build_candidate_sets, RetrievalConfig, SimilarUsers};
use insert_core::synthetic::random_corpus;
use insert_core::tensor::{check_gradients, GradCheck, ParameterStore, Tape, Tensor, Var};
use insert_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_all_below(checks: &[GradCheck], tol: f64, context: &str) {
    for c in checks {
        assert!(
            c.rel_error < tol,
            "{context}: {} rel error {:.3e} (analytic {:.3e}, numeric {:.3e})",
            c.name,
            c.rel_error,
            c.analytic_norm,
            c.numeric_norm
        );
    }
}

#[test]
fn matmul_sum_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    store.insert("a", random_tensor(&mut rng, 3, 4)).unwrap();
    store.insert("b", random_tensor(&mut rng, 4, 2)).unwrap();
    let checks = check_gradients(&store, H, |t| {
        let a = t.param_by_name("a")?;
        let b = t.param_by_name("b")?;
        let c = t.matmul(a, b)?;
        t.sum(c)
    })
    .unwrap();
    assert_all_below(&checks, 1e-6, "sum(A B)");
}

#[test]
fn softmax_cross_entropy_gradient() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        store.insert("logits", random_tensor(&mut rng, 2, 6)).unwrap();
        let targets = [rng.gen_range(0..6), rng.gen_range(0..6)];
        let checks = check_gradients(&store, H, |t| {
            let z = t.param_by_name("logits")?;
            let l = t.softmax_cross_entropy(z, &targets)?;
            t.sum(l)
        })
        .unwrap();
        assert_all_below(&checks, 1e-6, "softmax cross entropy");
    }
}

#[test]
fn complement_loss_gradient() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        store.insert("logits", random_tensor(&mut rng, 3, 7)).unwrap();
        let targets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..7)).collect();
        let checks = check_gradients(&store, H, |t| {
            let z = t.param_by_name("logits")?;
            loss(t, z, &targets, LossMode::PaperFormula)
        })
        .unwrap();
        assert_all_below(&checks, 1e-5, "complement loss");
    }
}

#[test]
fn gru_cell_weight_gradients() {
    for seed in 0..10 {
        let mut cfg = ModelConfig::new(6, 2);
        cfg.embed_dim = 5;
        let (model, mut store) = Model::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // non-zero biases so every path is exercised
        for name in ["gru.b_z", "gru.b_r", "gru.b_h"] {
            let id = store.id(name).unwrap();
            store.set_value(id, random_tensor(&mut rng, 1, 5)).unwrap();
        }
        let x = random_tensor(&mut rng, 1, 5);
        let h = random_tensor(&mut rng, 1, 5);
        let proj = random_tensor(&mut rng, 5, 1);
        let checks = check_gradients(&store, H, |t| {
            let w = model.weights(t);
            let x = t.constant(x.clone())?;
            let h = t.constant(h.clone())?;
            let p = t.constant(proj.clone())?;
            let out = gru_cell(t, x, h, &w.gru)?;
            let y = t.matmul(out, p)?;
            t.sum(y)
        })
        .unwrap();
        let gru: Vec<GradCheck> = checks.into_iter().filter(|c| c.name.starts_with("gru.")).collect();
        assert_eq!(gru.len(), 9);
        for c in &gru {
            assert!(c.analytic_norm > 0.0, "{} has no gradient", c.name);
        }
        assert_all_below(&gru, 1e-5, "gru cell");
    }
}

/// A random composition of tape ops ending in a scalar.
fn random_program(t: &mut Tape<'_>, rng: &mut ChaCha8Rng) -> Result<Var> {
    let a = t.param_by_name("a")?;
    let b = t.param_by_name("b")?;
    let c = t.param_by_name("c")?;
    let table = t.param_by_name("table")?;
    let mut cur = t.matmul(a, b)?;
    for _ in 0..rng.gen_range(2..6) {
        cur = match rng.gen_range(0..11) {
            0 => t.tanh(cur)?,
            1 => t.sigmoid(cur)?,
            2 => t.add(cur, c)?,
            3 => t.mul(cur, c)?,
            4 => {
                let ct = t.transpose(c)?;
                t.matmul(cur, ct)?
            }
            5 => t.softmax_rows(cur)?,
            6 => {
                let idx: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
                let g = t.gather(table, &idx)?;
                t.sub(cur, g)?
            }
            7 => {
                let top = t.slice_rows(cur, 1, 3)?;
                let bottom = t.slice_rows(cur, 0, 1)?;
                t.concat_rows(&[top, bottom])?
            }
            8 => {
                let s = t.sigmoid(c)?;
                let one = t.constant(Tensor::scalar(1.0))?;
                let denom = t.add(s, one)?;
                t.div(cur, denom)?
            }
            9 => {
                let scaled = t.scale(cur, 0.7)?;
                let s = t.dot(scaled, c)?;
                t.mul(cur, s)?
            }
            _ => {
                let g = t.group_max(cur, &[vec![0, 2], vec![1], vec![2, 1, 0]])?;
                t.add(g, c)?
            }
        };
    }
    match rng.gen_range(0..5) {
        0 => t.sum(cur),
        1 => t.max(cur),
        2 => {
            let l = t.softmax_cross_entropy(cur, &[0, 2, 1])?;
            t.sum(l)
        }
        3 => {
            let l = t.complement_cross_entropy(cur, &[1, 1, 0], 1e-12)?;
            t.sum(l)
        }
        _ => t.dot(cur, c),
    }
}

#[test]
fn random_compositions_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        store.insert("a", random_tensor(&mut rng, 3, 4)).unwrap();
        store.insert("b", random_tensor(&mut rng, 4, 3)).unwrap();
        store.insert("c", random_tensor(&mut rng, 3, 3)).unwrap();
        store.insert("table", random_tensor(&mut rng, 5, 3)).unwrap();
        let program_seed = rng.gen::<u64>();
        let checks = check_gradients(&store, H, |t| {
            random_program(t, &mut ChaCha8Rng::seed_from_u64(program_seed))
        })
        .unwrap();
        assert_all_below(&checks, 1e-5, &format!("seed {seed}"));
    }
}

#[test]
fn gradients_are_deterministic_and_isolated() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParameterStore::new();
    store.insert("a", random_tensor(&mut rng, 3, 4)).unwrap();
    store.insert("b", random_tensor(&mut rng, 4, 3)).unwrap();
    store.insert("c", random_tensor(&mut rng, 3, 3)).unwrap();
    store.insert("table", random_tensor(&mut rng, 5, 3)).unwrap();
    let run = |store: &ParameterStore| {
        let mut t = Tape::new(store);
        let l = random_program(&mut t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let g = t.backward(l).unwrap();
        store
            .ids()
            .flat_map(|id| g.get(id).map(|t| t.data().to_vec()).unwrap_or_default())
            .map(f64::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(&store), run(&store));

    // accumulating into the store adds, zero_grads resets exactly
    let mut t = Tape::new(&store);
    let l = random_program(&mut t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let g = t.backward(l).unwrap();
    drop(t);
    let mut other = store.clone();
    store.accumulate(&g);
    store.accumulate(&g);
    let id = store.id("a").unwrap();
    let once = g.get(id).unwrap().data().to_vec();
    for (twice, one) in store.grad(id).data().iter().zip(&once) {
        assert_eq!(*twice, 2.0 * one);
    }
    assert!(other.grad(id).data().iter().all(|&v| v == 0.0));
    store.zero_grads();
    assert!(store.ids().all(|id| store.grad(id).data().iter().all(|&v| v == 0.0)));
    other.accumulate(&g);
    assert_eq!(other.grad(id).data(), &once[..]);
}

/// Summed loss over every training session of a small random corpus.
fn corpus_loss(
    t: &mut Tape<'_>,
    model: &Model,
    ds: &insert_core::data::SessionDataset,
    similar: &SimilarUsers,
    masks: &[Tensor],
) -> Result<Var> {
    let w = model.weights(t);
    let retrieval = RetrievalConfig::default();
    let mut total: Option<Var> = None;
    for (s, mask) in ds.split(Split::Train).iter().zip(masks) {
        let cands = build_candidate_sets(ds, similar, s.user, s.ordinal, &retrieval)?;
        let (l, _) = session_loss(model, t, &w, s, &cands, Some(mask))?;
        total = Some(match total {
            Some(acc) => t.add(acc, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty corpus"))
}

fn fixed_masks(ds: &insert_core::data::SessionDataset, d: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ds.split(Split::Train)
        .iter()
        .map(|s| insert_core::model::dropout_mask(&mut rng, s.items.len() - 1, d, 0.2))
        .collect()
}

/// Smallest `|sum_j x_j . theta_u|` over every (user, training session)
/// pair. The session encoder divides by this sum, so finite differences with
/// `h = 1e-4` are only meaningful when it stays clear of zero.
fn min_normalizer(ds: &insert_core::data::SessionDataset, store: &ParameterStore) -> f64 {
    let items = store.value(store.id("item_embeddings").unwrap());
    let users = store.value(store.id("user_embeddings").unwrap());
    let d = items.dims2().unwrap().1;
    let row = |t: &Tensor, r: usize| t.data()[r * d..(r + 1) * d].to_vec();
    let mut min = f64::INFINITY;
    for u in 0..ds.num_users() {
        let theta = row(users, u);
        for s in ds.split(Split::Train) {
            let eta: f64 = s
                .items
                .iter()
                .map(|&i| row(items, i as usize).iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            min = min.min(eta.abs());
        }
    }
    min
}

#[test]
fn full_model_gradients_on_toy_corpus() {
    let ds = random_corpus(3, 12, 19, 5, 21).unwrap();
    let similar = SimilarUsers::build(&ds, 10);
    for mode in [LossMode::PaperFormula, LossMode::StandardCe] {
        for share in [true, false] {
            let mut cfg = ModelConfig::new(ds.num_items(), ds.num_users());
            cfg.embed_dim = 8;
            cfg.loss_mode = mode;
            cfg.share_ssrn_gru = share;
            let (model, store) = Model::init(cfg, 0).unwrap();
            assert!(min_normalizer(&ds, &store) > 0.01);
            let masks = fixed_masks(&ds, 8, 3);
            let checks = check_gradients(&store, H, |t| corpus_loss(t, &model, &ds, &similar, &masks)).unwrap();
            assert_all_below(&checks, 1e-4, &format!("{mode:?} share={share}"));
        }
    }
}

#[test]
fn gradient_completeness_per_variant() {
    let ds = random_corpus(4, 16, 15, 5, 2).unwrap();
    let similar = SimilarUsers::build(&ds, 10);
    for variant in Variant::ALL {
        let mut cfg = ModelConfig::new(ds.num_items(), ds.num_users());
        cfg.embed_dim = 6;
        cfg.variant = variant;
        let (model, store) = Model::init(cfg, 1).unwrap();
        let masks = fixed_masks(&ds, 6, 0);
        let mut t = model.tape(&store);
        let l = corpus_loss(&mut t, &model, &ds, &similar, &masks).unwrap();
        let grads = t.backward(l).unwrap();
        for id in store.ids() {
            let name = store.name(id);
            let used = match name.split('.').next().unwrap() {
                "user_embeddings" => variant != Variant::C,
                "mlp_h" => variant.uses_own_history(),
                "mlp_s" => variant.uses_similar_users(),
                _ => true,
            };
            let norm = grads.get(id).map_or(0.0, Tensor::norm_sq);
            if used {
                assert!(norm > 0.0, "{variant}: {name} got no gradient");
            } else {
                assert_eq!(norm, 0.0, "{variant}: {name} should be untouched");
            }
        }
    }
}
