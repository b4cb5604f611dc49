//! A fixed battery of gradient checks over every tape op, whole residual
//! blocks and every head kind, all in `f64`.
//!
//! Each case draws its inputs from a seed. Draws that put a relu input or
//! max-pool tie within [`KINK_MARGIN`] of a kink are rejected and the next
//! seed is tried, since the derivative is undefined there.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{grad_check, leaves, GradCheckReport};
use crate::model::{build_model, Depth, HeadKind, Model, ModelConfig};
use crate::nn::{BnMode, PoolSpec, BN_EPS};
use crate::swp::SwpSpec;
use crate::{Error, Fill, Result, Tape, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-5;
const MAX_DRAWS: u64 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE && self.report.kink_margin.is_none_or(|m| m > KINK_MARGIN)
    }
}

fn normal(shape: &[usize], std: f64, seed: u64) -> Result<Tensor<f64>> {
    Tensor::new(shape, Fill::Normal { mean: 0.0, std, seed })
}

fn away_from_kinks(name: &'static str, mut attempt: impl FnMut(u64) -> Result<GradCheckReport>) -> Result<Case> {
    let mut last = None;
    for seed in 0..MAX_DRAWS {
        let report = attempt(seed)?;
        let clear = report.kink_margin.is_none_or(|m| m > KINK_MARGIN);
        last = Some(Case { name, seed, report });
        if clear {
            break;
        }
    }
    last.ok_or_else(|| Error::invalid("no draws"))
}

/// `sum(y * r)` for a fixed random `r`, so every output entry matters.
fn project<'a>(tape: &mut Tape<'a, f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = normal(&shape, 1.0, seed ^ 0xA5A5)?;
    let rv = tape.constant(&shape, r.into_data())?;
    let p = tape.mul(y, rv)?;
    tape.sum(p)
}

/// Checks a single op `f(tape, inputs)` on inputs drawn with `shapes`.
fn op_case(
    name: &'static str,
    shapes: &'static [&'static [usize]],
    op: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<Case> {
    away_from_kinks(name, |seed| {
        let mut params = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| normal(s, 1.0, seed * 97 + i as u64).map(Tensor::with_grad))
            .collect::<Result<Vec<_>>>()?;
        grad_check(&mut params, EPS, |p, tape| {
            let vars = leaves(p, tape);
            let y = op(tape, &vars)?;
            let loss = project(tape, y, seed)?;
            Ok((loss, vars))
        })
    })
}

fn layer_cases() -> Result<Vec<Case>> {
    let mut v = vec![
        op_case("conv2d 3x3 stride 2", &[&[2, 3, 7, 7], &[4, 3, 3, 3], &[4]], |t, x| {
            t.conv2d(x[0], x[1], Some(x[2]), 2, 1)
        })?,
        op_case("conv2d 3x3 single image", &[&[1, 2, 5, 5], &[3, 2, 3, 3]], |t, x| t.conv2d(x[0], x[1], None, 1, 1))?,
        op_case("conv2d 1x1", &[&[2, 3, 4, 4], &[5, 3, 1, 1]], |t, x| t.conv2d(x[0], x[1], None, 1, 0))?,
        op_case("conv2d 7x7 stride 2", &[&[1, 3, 9, 9], &[2, 3, 7, 7]], |t, x| t.conv2d(x[0], x[1], None, 2, 3))?,
        op_case("batch norm train 4d", &[&[3, 4, 3, 3], &[4], &[4]], |t, x| {
            Ok(t.batch_norm_train(x[0], x[1], x[2], BN_EPS)?.0)
        })?,
        op_case("batch norm train 2d", &[&[5, 6], &[6], &[6]], |t, x| Ok(t.batch_norm_train(x[0], x[1], x[2], BN_EPS)?.0))?,
        op_case("batch norm infer", &[&[2, 3, 2, 2], &[3], &[3]], |t, x| {
            t.batch_norm_infer(x[0], x[1], x[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], BN_EPS)
        })?,
        op_case("relu", &[&[3, 10]], |t, x| t.relu(x[0]))?,
        op_case("max pool 3x3 stride 2", &[&[2, 2, 7, 7]], |t, x| t.pool2d(x[0], &PoolSpec::max(3, 2, 1)))?,
        op_case("average pool", &[&[2, 3, 4, 4]], |t, x| t.pool2d(x[0], &PoolSpec::average(4, 1)))?,
        op_case("linear", &[&[3, 5], &[4, 5], &[4]], |t, x| t.linear(x[0], x[1], Some(x[2])))?,
        op_case("matmul", &[&[3, 4], &[4, 2]], |t, x| t.matmul(x[0], x[1]))?,
        op_case("add", &[&[2, 3], &[2, 3]], |t, x| t.add(x[0], x[1]))?,
        op_case("mul", &[&[2, 3], &[2, 3]], |t, x| t.mul(x[0], x[1]))?,
        op_case("swp", &[&[2, 3, 4, 4], &[2, 4, 4]], |t, x| t.swp(x[0], x[1]))?,
        op_case("flatten", &[&[2, 3, 2, 2]], |t, x| t.flatten(x[0]))?,
        op_case("batch slice and concat", &[&[4, 2, 3]], |t, x| {
            let a = t.slice_batch(x[0], 1, 2)?;
            let b = t.slice_batch(x[0], 0, 3)?;
            t.concat_batch(&[a, b])
        })?,
    ];
    v.push(away_from_kinks("softmax cross-entropy", |seed| {
        let mut params = vec![normal(&[4, 6], 2.0, seed)?.with_grad()];
        grad_check(&mut params, EPS, |p, tape| {
            let vars = leaves(p, tape);
            let loss = tape.softmax_cross_entropy(vars[0], &[0, 5, 2, 2])?;
            Ok((loss, vars))
        })
    })?);
    Ok(v)
}

fn tiny(depth: Depth, head: HeadKind) -> ModelConfig {
    ModelConfig::new(depth, 3).with_width(1.0 / 32.0).with_input(32).with_head(head)
}

/// Leaves only entries named with `prefix` trainable, so the check skips
/// parameters the recorded graph never touches.
fn only(mut model: Model<f64>, prefix: &str) -> Model<f64> {
    for e in model.params_mut().entries_mut() {
        if !e.name.starts_with(prefix) {
            e.tensor.requires_grad = false;
        }
    }
    model
}

fn block_case(name: &'static str, depth: Depth, index: usize, prefix: &'static str) -> Result<Case> {
    let base = build_model::<f64>(&tiny(depth, HeadKind::Plain))?;
    let channels = base.block_in_channels(index)?;
    let base = only(base, prefix);
    away_from_kinks(name, |seed| {
        let mut model = base.clone();
        let x = normal(&[2, channels, 6, 6], 1.0, seed + 1000)?;
        grad_check(&mut model, EPS, |m, tape| {
            let xv = tape.input(x.clone());
            let (y, leaves) = m.forward_block(tape, xv, index, BnMode::Train)?;
            Ok((project(tape, y, seed)?, leaves))
        })
    })
}

fn head_case(name: &'static str, head: HeadKind) -> Result<Case> {
    let mut cfg = tiny(Depth::R18, head).with_input(64);
    cfg.swp = SwpSpec::new(2, 2, 2)?;
    cfg.fc_nodes = 5;
    let base = only(build_model::<f64>(&cfg)?, "head.");
    let (c, f) = (cfg.feature_channels()?, cfg.feature_size()?);
    away_from_kinks(name, |seed| {
        let mut model = base.clone();
        // Post-activation features are non-negative.
        let x = normal(&[4, c, f, f], 1.0, seed + 2000)?.map(f64::abs);
        grad_check(&mut model, EPS, |m, tape| {
            let xv = tape.input(x.clone());
            let (outs, leaves) = m.forward_head(tape, xv, BnMode::Train)?;
            let mut loss = None;
            for (o, &y) in outs.iter().enumerate() {
                let classes = tape.shape(y)[1];
                let targets: Vec<usize> = (0..4).map(|b| (b * 7 + o * 3) % classes).collect();
                let l = tape.softmax_cross_entropy(y, &targets)?;
                loss = Some(match loss {
                    Some(acc) => tape.add(acc, l)?,
                    None => l,
                });
            }
            Ok((loss.ok_or_else(|| Error::invalid("head has no outputs"))?, leaves))
        })
    })
}

fn model_cases() -> Result<Vec<Case>> {
    Ok(vec![
        block_case("basic block, identity shortcut", Depth::R18, 0, "stage1.block0.")?,
        block_case("basic block, projection shortcut", Depth::R34, 3, "stage2.block0.")?,
        block_case("bottleneck block, projection shortcut", Depth::R50, 0, "stage1.block0.")?,
        block_case("bottleneck block, identity shortcut", Depth::R50, 1, "stage1.block1.")?,
        head_case("plain head", HeadKind::Plain)?,
        head_case("swp head", HeadKind::Swp)?,
        head_case("localisation head", HeadKind::Loc)?,
        head_case("localisation head with swp", HeadKind::LocSwp)?,
    ])
}

/// Every case, layers first.
pub fn run_all() -> Result<Vec<Case>> {
    let mut v = layer_cases()?;
    v.extend(model_cases()?);
    Ok(v)
}

/// One line per case.
pub fn describe(case: &Case) -> String {
    alloc::format!(
        "{:<40} rel {:.2e} entries {:>5} kink margin {} seed {}",
        case.name,
        case.report.max_rel_error,
        case.report.entries_checked,
        case.report.kink_margin.map_or_else(|| String::from("none"), |m| alloc::format!("{m:.2e}")),
        case.seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LOC_OUTPUTS;

    #[test]
    fn head_outputs_cover_all_loc_bins() {
        let m = build_model::<f64>(&tiny(Depth::R18, HeadKind::Loc)).unwrap();
        let c = m.config();
        let x = Tensor::zeros(&[1, c.feature_channels().unwrap(), 1, 1]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let (outs, _) = m.forward_head(&mut tape, xv, BnMode::Infer).unwrap();
        let widths: Vec<usize> = outs.iter().map(|&o| tape.shape(o)[1]).collect();
        assert_eq!(widths, LOC_OUTPUTS);
    }
}
