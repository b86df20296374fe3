#![allow(dead_code)]

pub mod desk;
pub mod gradients;
pub mod persistence;
