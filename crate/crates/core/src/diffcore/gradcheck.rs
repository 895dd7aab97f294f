//! Per-primitive gradient checks against the finite-difference oracle.

#![cfg(test)]

use std::rc::Rc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::array::NdArray;
use super::fd::{finite_difference_gradient, max_relative_deviation};
use super::tape::{Tape, Var};
use crate::error::Result;

const TOL: f64 = 1e-6;

/// Check reverse-mode gradients of `f` (applied to one leaf of `shape`)
/// against central finite differences, using a fixed random readout so the
/// scalarization has non-trivial structure.
fn check_unary(
    shape: &[usize],
    sample: impl Fn(&mut ChaCha8Rng) -> f64,
    f: impl for<'t> Fn(&Var<'t, f64>) -> Result<Var<'t, f64>>,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let x0: Vec<f64> = (0..n).map(|_| sample(&mut rng)).collect();
    let eval = |x: &[f64]| -> Result<(f64, Option<Vec<f64>>)> {
        let tape = Tape::<f64>::new();
        let leaf = tape.leaf(NdArray::new(shape.to_vec(), x.to_vec())?);
        let y = f(&leaf)?;
        let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let w: Vec<f64> = (0..y.value().len()).map(|_| r2.gen_range(-1.0..1.0)).collect();
        let wv = tape.constant(NdArray::new(y.shape().to_vec(), w)?);
        let out = y.mul(&wv)?.sum_all()?;
        let val = out.value().scalar_value()?;
        let grads = out.backward()?;
        Ok((val, Some(grads.wrt(&leaf)?.into_data())))
    };
    let (_, ad) = eval(&x0).unwrap();
    let ad = ad.unwrap();
    let fd = finite_difference_gradient(|x| eval(x).map(|(v, _)| v), &x0, 1e-6).unwrap();
    let dev = max_relative_deviation(&ad, &fd, 1e-3);
    assert!(dev < TOL, "gradient deviation {dev} exceeds {TOL} for shape {shape:?}");
}

fn check_binary(
    sa: &[usize],
    sb: &[usize],
    sample: impl Fn(&mut ChaCha8Rng) -> f64,
    f: impl for<'t> Fn(&Var<'t, f64>, &Var<'t, f64>) -> Result<Var<'t, f64>>,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na: usize = sa.iter().product();
    let nb: usize = sb.iter().product();
    let x0: Vec<f64> = (0..na + nb).map(|_| sample(&mut rng)).collect();
    let eval = |x: &[f64]| -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(NdArray::new(sa.to_vec(), x[..na].to_vec())?);
        let b = tape.leaf(NdArray::new(sb.to_vec(), x[na..].to_vec())?);
        let y = f(&a, &b)?;
        let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
        let w: Vec<f64> = (0..y.value().len()).map(|_| r2.gen_range(-1.0..1.0)).collect();
        let wv = tape.constant(NdArray::new(y.shape().to_vec(), w)?);
        let out = y.mul(&wv)?.sum_all()?;
        let val = out.value().scalar_value()?;
        let grads = out.backward()?;
        Ok((val, Some((grads.wrt(&a)?.into_data(), grads.wrt(&b)?.into_data()))))
    };
    let (_, ad) = eval(&x0).unwrap();
    let (ga, gb) = ad.unwrap();
    let ad_all: Vec<f64> = ga.into_iter().chain(gb).collect();
    let fd = finite_difference_gradient(|x| eval(x).map(|(v, _)| v), &x0, 1e-6).unwrap();
    let dev = max_relative_deviation(&ad_all, &fd, 1e-3);
    assert!(dev < TOL, "gradient deviation {dev} exceeds {TOL} for {sa:?} x {sb:?}");
}

fn unit(r: &mut ChaCha8Rng) -> f64 {
    r.gen_range(-1.5..1.5)
}

fn positive(r: &mut ChaCha8Rng) -> f64 {
    r.gen_range(0.2..2.0)
}

#[test]
fn grad_add_same_and_broadcast() {
    check_binary(&[3, 4], &[3, 4], unit, |a, b| a.add(b), 1);
    check_binary(&[3, 4], &[4], unit, |a, b| a.add(b), 2);
    check_binary(&[2, 3, 4], &[1], unit, |a, b| a.add(b), 3);
}

#[test]
fn grad_mul_same_and_broadcast() {
    check_binary(&[3, 4], &[3, 4], unit, |a, b| a.mul(b), 4);
    check_binary(&[5], &[1], unit, |a, b| a.mul(b), 5);
    check_binary(&[2, 1, 4], &[3, 1], unit, |a, b| a.mul(b), 6);
}

#[test]
fn grad_div() {
    check_binary(&[3, 4], &[3, 4], positive, |a, b| a.div(b), 7);
    check_binary(&[6], &[1], positive, |a, b| a.div(b), 8);
}

#[test]
fn grad_matmul_plain() {
    check_binary(&[3, 4], &[4, 2], unit, |a, b| a.matmul(b), 9);
}

#[test]
fn grad_matmul_transpose_b() {
    check_binary(&[3, 4], &[2, 4], unit, |a, b| a.matmul_tb(b), 10);
}

#[test]
fn grad_matmul_batched() {
    check_binary(&[2, 3, 4], &[2, 4, 2], unit, |a, b| a.matmul(b), 11);
    check_binary(&[2, 3, 4], &[2, 5, 4], unit, |a, b| a.matmul_tb(b), 12);
    // shared rhs
    check_binary(&[2, 3, 4], &[4, 2], unit, |a, b| a.matmul(b), 13);
}

#[test]
fn grad_softmax() {
    check_unary(&[3, 5], unit, |x| x.softmax(), 14);
}

#[test]
fn grad_gather_scatter() {
    let idx = Rc::new(vec![2usize, 0, 1, 2]);
    check_unary(&[3, 2], unit, move |x| x.gather(idx.clone()), 15);
    let idx2 = Rc::new(vec![1usize, 1, 0, 2]);
    check_unary(&[4, 2], unit, move |x| x.scatter_add(idx2.clone(), 3), 16);
}

#[test]
fn grad_reductions() {
    check_unary(&[3, 4], unit, |x| x.sum_axis(0), 17);
    check_unary(&[3, 4], unit, |x| x.sum_axis(1), 18);
    check_unary(&[3, 4], unit, |x| x.sum_all(), 19);
    check_unary(&[2, 3, 4], unit, |x| x.mean_axis(2), 20);
}

#[test]
fn grad_exp_log() {
    check_unary(&[7], unit, |x| x.exp(), 21);
    check_unary(&[7], positive, |x| x.log(), 22);
}

#[test]
fn grad_rsqrt_sqrt() {
    check_unary(&[6], positive, |x| x.rsqrt(), 23);
    check_unary(&[6], positive, |x| x.sqrt(), 24);
}

#[test]
fn grad_sin() {
    check_unary(&[8], unit, |x| x.sin(), 25);
}

#[test]
fn grad_gelu() {
    check_unary(&[9], unit, |x| x.gelu(), 26);
}

#[test]
fn grad_sigmoid_composite() {
    check_unary(&[6], unit, |x| x.sigmoid(), 27);
}

#[test]
fn grad_reshape() {
    check_unary(&[2, 6], unit, |x| x.reshape(vec![3, 4]), 28);
}

#[test]
fn grad_composite_chain() {
    // A deeper composition exercising accumulation through shared nodes.
    check_unary(&[4, 4], positive, |x| {
        let y = x.matmul_tb(x)?; // x x^T, shares the leaf twice
        let z = y.add_scalar(1.0)?.log()?;
        z.softmax()?.sum_axis(1)
    }, 29);
}

#[test]
fn value_and_gradient_examples() {
    // f(x) = x^2 at x = 3 -> value 9, gradient 6.
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::scalar(3.0));
    let y = x.square().unwrap().sum_all().unwrap();
    assert_eq!(y.value().scalar_value().unwrap(), 9.0);
    let g = y.backward().unwrap().wrt(&x).unwrap();
    assert_eq!(g.data(), &[6.0]);

    // f(x) = sum(x) over R^5 -> gradient all ones.
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::from_vec(vec![0.3, -1.0, 2.0, 4.5, 0.0]));
    let y = x.sum_all().unwrap();
    let g = y.backward().unwrap().wrt(&x).unwrap();
    assert_eq!(g.data(), &[1.0; 5]);
}

#[test]
fn non_participating_leaf_gets_zero_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::from_vec(vec![1.0, 2.0]));
    let unused = tape.leaf(NdArray::from_vec(vec![5.0, 5.0, 5.0]));
    let y = x.sum_all().unwrap();
    let grads = y.backward().unwrap();
    assert_eq!(grads.wrt(&unused).unwrap().data(), &[0.0; 3]);
}

#[test]
fn gradient_linearity_over_terms() {
    // grad of (f + g) == grad f + grad g for independent terms.
    let x0 = vec![0.4, -0.7, 1.2];
    fn term1<'t>(x: &Var<'t, f64>) -> Var<'t, f64> {
        x.square().unwrap().sum_all().unwrap()
    }
    fn term2<'t>(x: &Var<'t, f64>) -> Var<'t, f64> {
        x.sin().unwrap().sum_all().unwrap()
    }

    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::from_vec(x0.clone()));
    let joint = term1(&x).add(&term2(&x)).unwrap();
    let g_joint = joint.backward().unwrap().wrt(&x).unwrap();

    let tape1 = Tape::<f64>::new();
    let x1 = tape1.leaf(NdArray::from_vec(x0.clone()));
    let g1 = term1(&x1).backward().unwrap().wrt(&x1).unwrap();
    let tape2 = Tape::<f64>::new();
    let x2 = tape2.leaf(NdArray::from_vec(x0));
    let g2 = term2(&x2).backward().unwrap().wrt(&x2).unwrap();

    for i in 0..3 {
        let sum = g1.data()[i] + g2.data()[i];
        assert!((g_joint.data()[i] - sum).abs() < 1e-14);
    }
}

#[test]
fn repeated_evaluation_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = Tape::<f64>::new();
        let x = tape.leaf(NdArray::new(vec![8, 8], vals).unwrap());
        let y = x.matmul_tb(&x).unwrap().gelu().unwrap().softmax().unwrap().sum_all().unwrap();
        let v = y.value().scalar_value().unwrap();
        let g = y.backward().unwrap().wrt(&x).unwrap();
        (v.to_bits(), g.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1, v2);
    assert_eq!(g1, g2);
}

#[test]
fn shape_mismatch_reports_primitive() {
    let tape = Tape::<f64>::new();
    let a = tape.leaf(NdArray::from_vec(vec![1.0, 2.0, 3.0]));
    let b = tape.leaf(NdArray::from_vec(vec![1.0, 2.0]));
    let err = a.add(&b).err().expect("expected shape mismatch");
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains('3') && msg.contains('2'), "msg: {msg}");
}

#[test]
fn inference_tape_records_nothing() {
    let tape = Tape::<f64>::inference();
    let x = tape.leaf(NdArray::from_vec(vec![1.0, 2.0]));
    let y = x.square().unwrap().sum_all().unwrap();
    assert_eq!(y.value().scalar_value().unwrap(), 5.0);
    assert_eq!(tape.num_nodes(), 0);
    assert!(y.backward().is_err());
}
