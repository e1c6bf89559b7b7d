mod common;

use common::oracle;
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survfuse::fusion::{late_fuse, tune_alpha, LateFusionWeight};
use survfuse::nn::{InputLayout, MlpConfig, RiskNet};
use survfuse::{c_index, SurvivalData};

/// Best grid alpha by direct pair enumeration, larger alpha on ties.
fn grid_oracle(r_wsi: &[f64], r_ct: &[f64], t: &[f64], e: &[bool]) -> f64 {
    let mut best = (f64::NEG_INFINITY, 1.0);
    for k in (0..=100).rev() {
        let a = k as f64 / 100.0;
        let fused: Vec<f64> = r_wsi.iter().zip(r_ct).map(|(w, c)| a * w + (1.0 - a) * c).collect();
        let c = oracle::c_index(&fused, t, e).unwrap();
        if c > best.0 {
            best = (c, a);
        }
    }
    best.1
}

#[test]
fn six_patient_mixture_beats_both_modalities() {
    let r_wsi = [6.0, 4.0, 5.0, 3.0, 2.0, 1.0];
    let r_ct = [6.0, 6.0, 3.0, 3.0, 2.0, 1.0];
    let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let e = [true; 6];
    let d = SurvivalData::new(t.to_vec(), e.to_vec()).unwrap();
    let alpha = tune_alpha(&r_wsi, &r_ct, &d, 0.01).unwrap().alpha();
    assert_eq!(alpha, grid_oracle(&r_wsi, &r_ct, &t, &e));
    assert!(alpha > 0.0 && alpha < 1.0, "{alpha}");
    let fused = late_fuse(&r_wsi, &r_ct, LateFusionWeight::new(alpha).unwrap()).unwrap();
    let best = c_index(&d, &fused).unwrap();
    assert!(best > c_index(&d, &r_wsi).unwrap());
    assert!(best > c_index(&d, &r_ct).unwrap());
}

fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 1u8..=10, any::<bool>()), 2..=30).prop_map(|rows| {
        (
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| f64::from(r.2)).collect(),
            rows.iter().map(|r| r.3).collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn late_fusion_is_affine_in_alpha((w, c, _, _) in scores(), a in 0.0f64..=1.0) {
        let one = late_fuse(&w, &c, LateFusionWeight::new(1.0).unwrap()).unwrap();
        let zero = late_fuse(&w, &c, LateFusionWeight::new(0.0).unwrap()).unwrap();
        let mid = late_fuse(&w, &c, LateFusionWeight::new(a).unwrap()).unwrap();
        prop_assert_eq!(&one, &w);
        prop_assert_eq!(&zero, &c);
        for k in 0..w.len() {
            prop_assert!((mid[k] - (a * one[k] + (1.0 - a) * zero[k])).abs() <= 1e-12);
        }
    }

    #[test]
    fn tuned_alpha_is_no_worse_than_either_modality((w, c, t, e) in scores()) {
        let d = SurvivalData::new(t.clone(), e.clone()).unwrap();
        prop_assume!(c_index(&d, &w).is_ok());
        let alpha = tune_alpha(&w, &c, &d, 0.01).unwrap();
        prop_assert!((0.0..=1.0).contains(&alpha.alpha()));
        prop_assert_eq!(alpha.alpha(), grid_oracle(&w, &c, &t, &e));
        let tuned = c_index(&d, &late_fuse(&w, &c, alpha).unwrap()).unwrap();
        let floor = c_index(&d, &w).unwrap().max(c_index(&d, &c).unwrap());
        prop_assert!(tuned >= floor - 1e-12);
    }
}

#[test]
fn zeroed_ct_block_reduces_to_the_wsi_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (wsi, ct, n) = (5, 3, 12);
    let cfg = MlpConfig {
        input_dim: wsi + ct,
        hidden_dim: 32,
        dropout: 0.0,
        seed: 4,
    };
    let mut fused = RiskNet::init(&cfg, InputLayout::ProjectCt { wsi_dim: wsi }).unwrap();
    fused.mlp.ln_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    fused.mlp.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    fused.mlp.w1.slice_mut(s![.., wsi..]).fill(0.0);

    let mut wsi_only = RiskNet::from_mlp(fused.mlp.clone());
    wsi_only.mlp.w1 = fused.mlp.w1.slice(s![.., ..wsi]).to_owned();

    let x = Array2::from_shape_fn((n, wsi + ct), |_| rng.random_range(-2.0..2.0));
    let a = fused.predict(x.view()).unwrap();
    let b = wsi_only.predict(x.slice(s![.., ..wsi])).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
    }
}
