mod common;

use common::gradcheck::{finetuning, pretraining, TOL};

#[test]
fn pretraining_loss_gradients() {
    let worst = pretraining();
    assert!(worst.values().all(|&e| e < TOL), "{worst:?}");
    for g in ["tokenizer", "encoder", "interaction", "decoder", "cross_decoder"] {
        assert!(worst.contains_key(g), "group {g} not reached: {worst:?}");
    }
    assert!(!worst.contains_key("head"), "classifier must not receive pre-training gradients");
}

#[test]
fn finetune_loss_gradients() {
    let worst = finetuning();
    assert!(worst.values().all(|&e| e < TOL), "{worst:?}");
    for g in ["tokenizer", "encoder", "interaction", "scorer", "alpha", "head"] {
        assert!(worst.contains_key(g), "group {g} not reached: {worst:?}");
    }
    assert!(!worst.contains_key("decoder"));
}
