//! Mean absolute error between a predicted image and its ground truth.

use ndarray::ArrayD;

use crate::error::{Error, Result};

/// Mean of `|sr - gt|` over every element.
pub fn l1_loss(sr: &ArrayD<f64>, gt: &ArrayD<f64>) -> Result<f64> {
    if sr.shape() != gt.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("prediction {:?} vs target {:?}", sr.shape(), gt.shape()),
        ));
    }
    let n = sr.len();
    if n == 0 {
        return Err(Error::shape("l1_loss", "empty tensors"));
    }
    let sum: f64 = sr.iter().zip(gt.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / n as f64)
}

/// Gradient of [`l1_loss`] with respect to the prediction:
/// `sign(sr - gt) / numel`, with the tie at exact equality sent to zero.
pub fn l1_loss_backward(sr: &ArrayD<f64>, gt: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    if sr.shape() != gt.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("prediction {:?} vs target {:?}", sr.shape(), gt.shape()),
        ));
    }
    let scale = 1.0 / sr.len() as f64;
    let mut g = sr - gt;
    g.map_inplace(|v| {
        *v = if *v > 0.0 {
            scale
        } else if *v < 0.0 {
            -scale
        } else {
            0.0
        }
    });
    Ok(g)
}
