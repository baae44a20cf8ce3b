#![allow(dead_code)]

pub mod attention;
pub mod fixtures;
pub mod gradcheck;
pub mod oracles;
