//! Recursive feedforward and recursive Bayesian networks for triaxial
//! stress–strain–volume response, with a strain-controlled simulator to
//! generate training data.

pub mod bayesmodel;
pub mod datapipe;
pub mod detmodel;
pub mod evalkit;
pub mod gradcore;
mod parallel;
pub mod rng;
pub mod triaxsim;
