use std::collections::BTreeSet;

use avcoh_core::config::RunConfig;
use avcoh_core::tokenizer::{random_mask, segment_index, sincos_embedding, tube_mask, MaskPlan, TokenGrid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn is_partition(plan: &MaskPlan, n: usize) -> bool {
    let all: BTreeSet<usize> = plan.visible_idx.iter().chain(&plan.masked_idx).copied().collect();
    all.len() == n && plan.len() == n && all.iter().next_back() == Some(&(n - 1))
}

fn tube_holds(plan: &MaskPlan, grid: &TokenGrid) -> bool {
    let cells = grid.cells();
    let masked: BTreeSet<usize> = plan.masked_idx.iter().copied().collect();
    (0..grid.len()).all(|i| masked.contains(&i) == masked.contains(&(i % cells)))
}

#[test]
fn default_token_counts() {
    let g = RunConfig::paper().geometry;
    let (v, a) = (TokenGrid::video(&g).unwrap(), TokenGrid::audio(&g).unwrap());
    assert_eq!((v.len(), a.len()), (1568, 512));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vp = tube_mask(&v, 0.9, &mut rng).unwrap();
    let ap = random_mask(&a, 0.8125, &mut rng).unwrap();
    assert_eq!(vp.visible_idx.len(), 160);
    assert_eq!(ap.masked_idx.len(), 416);
    assert_eq!(ap.visible_idx.len(), 96);
}

#[test]
fn mask_frequencies_are_uniform() {
    let g = RunConfig::desk().geometry;
    let (v, a) = (TokenGrid::video(&g).unwrap(), TokenGrid::audio(&g).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 4000;
    let mut vc = vec![0usize; v.len()];
    let mut ac = vec![0usize; a.len()];
    for _ in 0..draws {
        for &i in &tube_mask(&v, 0.9, &mut rng).unwrap().masked_idx {
            vc[i] += 1;
        }
        for &i in &random_mask(&a, 0.8125, &mut rng).unwrap().masked_idx {
            ac[i] += 1;
        }
    }
    let pv = (0.9 * v.cells() as f64).floor() / v.cells() as f64;
    let pa = (0.8125 * a.len() as f64).floor() / a.len() as f64;
    for c in vc {
        assert!((c as f64 / draws as f64 - pv).abs() < 0.04);
    }
    for c in ac {
        assert!((c as f64 / draws as f64 - pa).abs() < 0.04);
    }
}

#[test]
fn segments_are_contiguous_blocks() {
    let g = RunConfig::paper().geometry;
    for grid in [TokenGrid::video(&g).unwrap(), TokenGrid::audio(&g).unwrap()] {
        let seg = segment_index(&grid, 8).unwrap();
        assert!(seg.windows(2).all(|w| w[0] <= w[1]));
        let per: Vec<usize> = (0..8).map(|s| seg.iter().filter(|&&x| x == s).count()).collect();
        assert!(per.iter().all(|&c| c == grid.len() / 8), "{per:?}");
    }
    let v = TokenGrid::video(&g).unwrap();
    assert!(segment_index(&v, v.temporal() + 1).is_err());
}

#[test]
fn positional_rows_are_distinct() {
    let g = RunConfig::desk().geometry;
    let v = TokenGrid::video(&g).unwrap();
    let pe = sincos_embedding(&v, 64);
    assert!(pe.data().iter().all(|x| x.abs() <= 1.0));
    let rows: BTreeSet<Vec<u64>> = (0..pe.rows()).map(|r| pe.row(r).iter().map(|x| x.to_bits()).collect()).collect();
    assert_eq!(rows.len(), v.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tube_mask_shares_cells_across_time(seed in any::<u64>(), ratio in 0.05f64..0.95, paper in any::<bool>()) {
        let g = if paper { RunConfig::paper().geometry } else { RunConfig::desk().geometry };
        let grid = TokenGrid::video(&g).unwrap();
        let plan = tube_mask(&grid, ratio, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(is_partition(&plan, grid.len()));
        prop_assert!(tube_holds(&plan, &grid));
        let k = (ratio * grid.cells() as f64).floor() as usize;
        prop_assert_eq!(plan.masked_idx.len(), k * grid.temporal());
    }

    #[test]
    fn random_mask_partitions(seed in any::<u64>(), ratio in 0.05f64..0.95) {
        let grid = TokenGrid::audio(&RunConfig::desk().geometry).unwrap();
        let plan = random_mask(&grid, ratio, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(is_partition(&plan, grid.len()));
        prop_assert_eq!(plan.masked_idx.len(), (ratio * grid.len() as f64).floor() as usize);
        prop_assert!(plan.visible_idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_ratios_rejected(r in prop_oneof![Just(0.0), Just(1.0), -5.0f64..0.0, 1.0f64..5.0]) {
        let grid = TokenGrid::audio(&RunConfig::desk().geometry).unwrap();
        prop_assert!(random_mask(&grid, r, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        prop_assert!(tube_mask(&TokenGrid::video(&RunConfig::desk().geometry).unwrap(), r, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
