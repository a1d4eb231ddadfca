#![allow(dead_code)]

pub mod gradcheck;
pub mod stepper;
pub mod variational;
