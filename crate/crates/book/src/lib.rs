//! The guide in `book/` compiled as one module per chapter, so that
//! `cargo test --doc -p sns-lab-book` runs every listing against the
//! current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/fields.md")]
pub mod fields {}
#[doc = include_str!("../../../book/src/forcing.md")]
pub mod forcing {}
#[doc = include_str!("../../../book/src/stepping.md")]
pub mod stepping {}
#[doc = include_str!("../../../book/src/moments.md")]
pub mod moments {}
#[doc = include_str!("../../../book/src/small_scales.md")]
pub mod small_scales {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/synchronization.md")]
pub mod synchronization {}
#[doc = include_str!("../../../book/src/coupling.md")]
pub mod coupling {}
#[doc = include_str!("../../../book/src/cascade.md")]
pub mod cascade {}
#[doc = include_str!("../../../book/src/command_line.md")]
pub mod command_line {}
