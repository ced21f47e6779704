use crate::operators::sobel_edge_map;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// `mean|sr − hr| + mean|structure − sobel(hr)|`, weighted 1:1.
pub fn loss<T: Real>(tape: &Tape<T>, sr: Var, hr: &Tensor<T>, structure: Var) -> Result<Var> {
    let (ss, ps) = (tape.shape(sr), tape.shape(structure));
    if ss != hr.shape() || ps != hr.shape() {
        return Err(Error::shape("loss", format!("sr {ss:?}, structure {ps:?} and hr {:?} must match", hr.shape())));
    }
    let target_edge = tape.constant(sobel_edge_map(hr)?);
    let hr = tape.constant(hr.clone());
    let d1 = tape.sub(sr, hr)?;
    let l1 = tape.mean(tape.abs(d1));
    let d2 = tape.sub(structure, target_edge)?;
    let l2 = tape.mean(tape.abs(d2));
    tape.add(l1, l2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_costs_nothing() {
        let hr = Tensor::<f64>::from_fn(&[2, 1, 6, 6], |i| ((i * 7) % 5) as f64 / 5.0);
        let tape = Tape::new();
        let sr = tape.constant(hr.clone());
        let st = tape.constant(sobel_edge_map(&hr).unwrap());
        let l = loss(&tape, sr, &hr, st).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn constant_offset_costs_the_offset() {
        let hr = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64 / 16.0);
        let tape = Tape::new();
        let sr = tape.constant(hr.map(|v| v + 0.1));
        let st = tape.constant(sobel_edge_map(&hr).unwrap());
        let l = loss(&tape, sr, &hr, st).unwrap();
        assert!((tape.value(l).item() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tape = Tape::<f64>::new();
        let sr = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        assert!(loss(&tape, sr, &Tensor::zeros(&[1, 1, 4, 5]), sr).is_err());
    }
}
