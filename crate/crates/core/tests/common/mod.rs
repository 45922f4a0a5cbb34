#![allow(dead_code)]

pub mod metric_fixture;
