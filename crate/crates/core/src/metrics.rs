//! NMSE over task regions.

use crate::channel::CsiArray;
use crate::error::{contract, Result};
use crate::tokenizer::{MaskSpec, TokenLayout};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nmse {
    pub linear: f64,
    /// `10·log10(linear)`; `-inf` for a perfect prediction.
    pub db: f64,
}

impl Nmse {
    pub fn from_linear(linear: f64) -> Self {
        let db = if linear == 0.0 { f64::NEG_INFINITY } else { 10.0 * linear.log10() };
        Self { linear, db }
    }
}

/// `‖H − Ĥ‖² / ‖H‖²` restricted to the flat element indices in `region`.
pub fn nmse(pred: &CsiArray, target: &CsiArray, region: &[usize]) -> Result<Nmse> {
    if pred.dims != target.dims {
        return Err(contract(format!(
            "prediction extents {:?} differ from target {:?}",
            pred.dims, target.dims
        )));
    }
    let mut err = 0.0;
    let mut power = 0.0;
    for &i in region {
        err += (pred.h[i] - target.h[i]).norm_sqr();
        power += target.h[i].norm_sqr();
    }
    if power == 0.0 {
        return Err(contract("target region carries no power"));
    }
    Ok(Nmse::from_linear(err / power))
}

/// Flat element indices covered by the masked tokens, padding excluded.
/// For tail masks this is exactly the hidden future slots or upper band.
pub fn task_region(layout: &TokenLayout, mask: &MaskSpec) -> Vec<usize> {
    let mut out = Vec::new();
    for &m in &mask.masked {
        for j in 0..layout.patch.volume() {
            if let Some((t, k, u)) = layout.element(m, j) {
                out.push(layout.source.index(t, k, u));
            }
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::channel::Dims;

    fn array(values: &[f64]) -> CsiArray {
        let h = values.iter().map(|&v| Complex64::new(v, -v)).collect();
        CsiArray::from_vec(Dims::new(values.len(), 1, 1), h).unwrap()
    }

    #[test]
    fn reference_cases() {
        let t = array(&[1.0, 2.0, 3.0]);
        let all = [0, 1, 2];
        assert_eq!(nmse(&t, &t, &all).unwrap().db, f64::NEG_INFINITY);
        let zero = nmse(&array(&[0.0; 3]), &t, &all).unwrap();
        assert_eq!((zero.linear, zero.db), (1.0, 0.0));
        let double = nmse(&array(&[2.0, 4.0, 6.0]), &t, &all).unwrap();
        assert!((double.linear - 1.0).abs() < 1e-15);
        assert!(nmse(&t, &array(&[0.0; 3]), &all).is_err());
    }

    #[test]
    fn outside_region_is_ignored() {
        let t = array(&[1.0, 2.0, 3.0]);
        let p = array(&[9.0, 2.0, 3.5]);
        assert_eq!(nmse(&p, &t, &[1, 2]).unwrap(), nmse(&array(&[-4.0, 2.0, 3.5]), &t, &[1, 2]).unwrap());
    }
}
