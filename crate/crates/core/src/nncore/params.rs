//! Named-tensor traversal shared by the optimizer, checkpoints and hashing.

use sha2::{Digest, Sha256};

pub type ParamVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;
pub type ParamVisitorMut<'a> = dyn FnMut(&str, &mut [f64]) + 'a;

/// A model whose parameters can be enumerated as named tensors in a fixed
/// order. Both visitors must walk the same tensors in the same order.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor);
    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut);
}

/// `(name, shape)` of every tensor.
pub fn param_shapes<P: Parameterized + ?Sized>(model: &P) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |name, shape, _| out.push((trim(name), shape.to_vec())));
    out
}

pub fn param_count<P: Parameterized + ?Sized>(model: &P) -> usize {
    let mut n = 0;
    model.visit_params("", &mut |_, _, data| n += data.len());
    n
}

/// All parameters concatenated in visiting order.
pub fn flatten<P: Parameterized + ?Sized>(model: &P) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

/// Overwrites parameters from a flat vector produced by [`flatten`].
pub fn unflatten<P: Parameterized + ?Sized>(model: &mut P, values: &[f64]) {
    let mut offset = 0;
    model.visit_params_mut("", &mut |_, data| {
        data.copy_from_slice(&values[offset..offset + data.len()]);
        offset += data.len();
    });
    assert_eq!(offset, values.len(), "flat parameter length mismatch");
}

/// Sets every parameter to zero; used to build gradient accumulators.
pub fn zeroed<P: Parameterized + Clone>(model: &P) -> P {
    let mut z = model.clone();
    z.visit_params_mut("", &mut |_, data| data.fill(0.0));
    z
}

/// SHA-256 over tensor names, shapes and little-endian values.
pub fn param_hash<P: Parameterized + ?Sized>(model: &P) -> String {
    let mut h = Sha256::new();
    model.visit_params("", &mut |name, shape, data| {
        h.update(trim(name).as_bytes());
        for s in shape {
            h.update((*s as u64).to_le_bytes());
        }
        for v in data {
            h.update(v.to_le_bytes());
        }
    });
    hex::encode(h.finalize())
}

pub fn all_finite<P: Parameterized + ?Sized>(model: &P) -> bool {
    let mut ok = true;
    model.visit_params("", &mut |_, _, data| ok &= data.iter().all(|v| v.is_finite()));
    ok
}

/// Names are built as `prefix.child`; the root prefix is empty.
pub(crate) fn trim(name: &str) -> String {
    name.trim_start_matches('.').to_string()
}
