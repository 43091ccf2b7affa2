use crate::Scalar;

/// Elementwise nonlinearity applied after hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Mish,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Relu => x.max(S::zero()),
            Activation::Identity => x,
        }
    }

    pub fn derivative<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Mish => {
                let sp = softplus(x);
                let th = sp.tanh();
                let sigmoid = S::one() / (S::one() + (-x).exp());
                th + x * (S::one() - th * th) * sigmoid
            }
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Mish => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Mish),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::lit(20.0) {
        x
    } else if x < S::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
