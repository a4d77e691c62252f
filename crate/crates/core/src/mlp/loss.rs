use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
    Relative,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::L1, LossKind::L2, LossKind::Relative];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Relative => "relative",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "relative" | "rel" => Ok(LossKind::Relative),
            other => Err(crate::Error::InvalidParameter(format!("unknown loss `{other}`"))),
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of one prediction and its gradient with respect to the prediction.
pub fn loss_value_and_grad(kind: LossKind, epsilon: f64, pred: &[f64; 3], truth: &[f64; 3]) -> (f64, [f64; 3]) {
    let e = [pred[0] - truth[0], pred[1] - truth[1], pred[2] - truth[2]];
    match kind {
        LossKind::L1 => (
            e.iter().map(|x| x.abs()).sum(),
            [sign(e[0]), sign(e[1]), sign(e[2])],
        ),
        LossKind::L2 => (e.iter().map(|x| x * x).sum(), [2.0 * e[0], 2.0 * e[1], 2.0 * e[2]]),
        LossKind::Relative => {
            let denom = truth.iter().map(|x| x.abs()).sum::<f64>() + epsilon;
            let l1: f64 = e.iter().map(|x| x.abs()).sum();
            (
                l1 / denom,
                [sign(e[0]) / denom, sign(e[1]) / denom, sign(e[2]) / denom],
            )
        }
    }
}
