use super::open;
use crate::config::Config;
use crate::{CliError, Io};
use l2i_core::losses::{
    finite_diff_check, parse_fixture, pixel_loss, to_probabilities, token_loss, total_loss,
    AmodalMask, AttentionMap, LossKind, PixelOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub struct CheckPlan {
    pub fixtures: Vec<PathBuf>,
    pub trials: usize,
    pub seed: u64,
    pub min_size: usize,
    pub max_size: usize,
}

/// One random instance set: 1..=3 maps of a shared size with values in
/// [0.05, 0.95] and random binary masks.
pub fn random_instances(rng: &mut impl Rng, min: usize, max: usize) -> (Vec<AttentionMap>, Vec<AmodalMask>) {
    let h = rng.random_range(min..=max);
    let w = rng.random_range(min..=max);
    let count = rng.random_range(1..=3);
    let mut maps = Vec::with_capacity(count);
    let mut masks = Vec::with_capacity(count);
    for _ in 0..count {
        let values: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.05..0.95)).collect();
        let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        maps.push(AttentionMap::new(h, w, values).expect("positive values"));
        masks.push(AmodalMask::new(h, w, mask).expect("matching size"));
    }
    (maps, masks)
}

fn loss_err(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn check_fixture(cfg: &Config, path: &Path, io: &mut Io) -> Result<f64, CliError> {
    let fx = parse_fixture(open(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let pixel = PixelOptions {
        epsilon: cfg.losses.epsilon,
        mapping: cfg.probability_mapping(),
    };
    let b = total_loss(0.0, &fx.maps, &fx.masks, cfg.loss_weights(), pixel).map_err(loss_err)?;
    let token = token_loss(&fx.maps, &fx.masks).map_err(loss_err)?;
    let _ = writeln!(
        io.out,
        "{}: {} instances, token={:.6} pixel={:.6} ({}) lambda*token+beta*pixel={:.6}",
        path.display(),
        fx.maps.len(),
        token,
        b.pixel,
        pixel.mapping,
        b.total
    );
    let mut worst = finite_diff_check(LossKind::Token, &fx.maps, &fx.masks, cfg.losses.step).map_err(loss_err)?;
    // The pixel gradient is only checked where the clamp is inactive.
    let interior = fx.maps.iter().all(|m| {
        to_probabilities(m, pixel.mapping)
            .iter()
            .all(|&p| p - cfg.losses.step > cfg.losses.epsilon && p + cfg.losses.step < 1.0 - cfg.losses.epsilon)
    });
    if interior {
        let probs: Vec<AttentionMap> = fx
            .maps
            .iter()
            .map(|m| AttentionMap::new(m.height(), m.width(), to_probabilities(m, pixel.mapping)))
            .collect::<Result<_, _>>()
            .map_err(loss_err)?;
        for (p, m) in probs.iter().zip(&fx.masks) {
            pixel_loss(p, m, pixel.epsilon).map_err(loss_err)?;
        }
        worst = worst.max(finite_diff_check(LossKind::Pixel, &probs, &fx.masks, cfg.losses.step).map_err(loss_err)?);
    }
    Ok(worst)
}

pub fn run(cfg: &Config, plan: &CheckPlan, io: &mut Io) -> Result<i32, CliError> {
    if plan.min_size == 0 || plan.min_size > plan.max_size {
        return Err(CliError::Config(format!(
            "invalid size range {}..={}",
            plan.min_size, plan.max_size
        )));
    }
    let tol = cfg.losses.tolerance;
    let mut failed = false;
    for path in &plan.fixtures {
        let worst = check_fixture(cfg, path, io)?;
        let ok = worst < tol;
        failed |= !ok;
        let _ = writeln!(io.out, "  gradient max rel err {worst:.3e} [{}]", if ok { "ok" } else { "FAIL" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    for kind in [LossKind::Token, LossKind::Pixel] {
        let mut worst = 0.0f64;
        for _ in 0..plan.trials {
            let (maps, masks) = random_instances(&mut rng, plan.min_size, plan.max_size);
            worst = worst.max(finite_diff_check(kind, &maps, &masks, cfg.losses.step).map_err(loss_err)?);
        }
        let ok = worst < tol;
        failed |= !ok;
        let _ = writeln!(
            io.out,
            "{kind}: {} random trials ({}..={} px per side), max rel err {worst:.3e}, tolerance {tol:e} [{}]",
            plan.trials,
            plan.min_size,
            plan.max_size,
            if ok { "ok" } else { "FAIL" }
        );
    }
    Ok(i32::from(failed))
}
