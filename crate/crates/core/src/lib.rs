pub mod al_loop;
pub mod backbone;
pub mod env;
pub mod error;
pub mod harness;
pub mod rng;
pub mod uncertainty;
