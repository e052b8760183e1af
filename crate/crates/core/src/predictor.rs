use crate::env::Position;
use crate::error::Result;

/// Anything that can estimate the channel gain (dB) of a transmitter/receiver
/// link: the oracle, the learned twin, the path-loss fit or an interpolator.
pub trait GainPredictor {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64>;
}

impl<T: GainPredictor + ?Sized> GainPredictor for &T {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        (**self).gain(tx, rx)
    }
}

impl<T: GainPredictor + ?Sized> GainPredictor for Box<T> {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        (**self).gain(tx, rx)
    }
}

/// Adapts a closure into a predictor.
pub struct FnPredictor<F>(pub F);

impl<F> GainPredictor for FnPredictor<F>
where
    F: Fn(&Position, &Position) -> Result<f64>,
{
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        (self.0)(tx, rx)
    }
}
