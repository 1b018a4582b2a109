//! Independent reference implementations used only by the integration tests.
#![allow(dead_code)]

pub mod vertex;
