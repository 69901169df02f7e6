//! Contextual inside-outside layers over a pruned chart.

mod engine;
mod params;

pub use engine::{
    induce_tree, inside_pass, outside_pass, run_stack, run_tree, Counters, LayerVars, OutsideMode, PrevOutside,
    TreeVars,
};
pub use params::{compatibility, compose, CioConfig, CioLayer, CioStack, CompatHead, ComposeParams, Slot};
