//! Guide doctests. Each chapter of `book/src` is compiled and run here, so a
//! snippet that drifts from the API fails `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/splitting.md")]
pub mod splitting {}

#[doc = include_str!("../../../book/src/labeldp.md")]
pub mod labeldp {}

#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}

#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}

#[doc = include_str!("../../../book/src/cost-model.md")]
pub mod cost_model {}

#[doc = include_str!("../../../book/src/attack.md")]
pub mod attack {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
