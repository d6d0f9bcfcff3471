//! Static architecture analysis: per-stage output shapes, receptive
//! fields (by the standard recurrence, scaled by accumulated stride) and
//! exact parameter counts.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::net::AvNet;
use crate::tensor::Element;

/// Receptive-field recurrence state. Each layer grows the field by
/// `(k - 1) * dilation * jump`, where `jump` is the accumulated stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RfState {
    pub rf: usize,
    pub jump: usize,
}

impl RfState {
    pub fn new() -> Self {
        RfState { rf: 1, jump: 1 }
    }

    pub fn after_conv(mut self, k: usize, stride: usize, dilation: usize) -> Self {
        self.rf += (k - 1) * dilation * self.jump;
        self.jump *= stride;
        self
    }

    pub fn after_pool(mut self, k: usize, stride: usize) -> Self {
        self.rf += (k - 1) * self.jump;
        self.jump *= stride;
        self
    }

    pub fn after_upsample2x(mut self) -> Self {
        self.jump = (self.jump / 2).max(1);
        self
    }
}

impl Default for RfState {
    fn default() -> Self {
        RfState::new()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StageRow {
    pub name: String,
    /// Output shape as [C, H, W] for the analyzed input size.
    pub output_shape: Vec<usize>,
    /// Receptive field at input scale after this stage.
    pub receptive_field: usize,
    /// Accumulated stride after this stage.
    pub stride: usize,
    /// Trainable parameters owned by the stage.
    pub params: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AnalysisReport {
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub rows: Vec<StageRow>,
    pub total_params: usize,
    /// Receptive field of the dilation cascade at the bottleneck's own
    /// scale (1 + 2 * sum of rates for 3x3 kernels).
    pub cdc_local_receptive_field: usize,
    /// Receptive field at input scale after the cascade.
    pub cdc_receptive_field: usize,
}

/// Walk the model structurally; parameter counts come from exact tensor
/// enumeration, shapes and receptive fields from the recurrence.
pub fn analyze<E: Element>(model: &AvNet<E>, input_hw: (usize, usize)) -> AnalysisReport {
    let cfg = model.config();
    let (h, w) = input_hw;
    let unit_params: std::collections::BTreeMap<String, usize> = {
        let mut per_unit: std::collections::BTreeMap<String, usize> = Default::default();
        model.for_each_param(&mut |name, t| {
            // "enc0.incept.b1.conv.weight" -> unit key "enc0.incept.b1"
            let unit = name.rsplitn(3, '.').nth(2).unwrap_or(&name).to_string();
            *per_unit.entry(unit).or_default() += t.numel();
        });
        per_unit
    };
    let sum_units = |prefix: &str| -> usize {
        unit_params
            .iter()
            .filter(|(k, _)| k.as_str() == prefix || k.starts_with(&format!("{prefix}.")))
            .map(|(_, v)| v)
            .sum()
    };

    let mut rows = Vec::new();
    let mut rf = RfState::new();
    let enc = &cfg.encoder_channels;
    let stages = cfg.num_stages();
    let (mut ch, mut hh, mut ww) = (enc[0], h, w);

    rf = rf.after_conv(3, 1, 1); // stem
    rows.push(StageRow {
        name: "stem".into(),
        output_shape: vec![ch, hh, ww],
        receptive_field: rf.rf,
        stride: rf.jump,
        params: sum_units("stem"),
    });

    for i in 0..stages {
        rf = inception_rf(rf);
        rows.push(StageRow {
            name: format!("enc{i}.incept"),
            output_shape: vec![enc[i], hh, ww],
            receptive_field: rf.rf,
            stride: rf.jump,
            params: sum_units(&format!("enc{i}.incept")),
        });
        rf = downsample_rf(rf);
        ch = enc[i + 1];
        hh /= 2;
        ww /= 2;
        rows.push(StageRow {
            name: format!("enc{i}.down"),
            output_shape: vec![ch, hh, ww],
            receptive_field: rf.rf,
            stride: rf.jump,
            params: sum_units(&format!("enc{i}.down")),
        });
    }

    rf = inception_rf(rf);
    rows.push(StageRow {
        name: "bottleneck".into(),
        output_shape: vec![ch, hh, ww],
        receptive_field: rf.rf,
        stride: rf.jump,
        params: sum_units("bottleneck"),
    });

    for &rate in &cfg.cdc.dilation_rates {
        rf = rf.after_conv(3, 1, rate);
    }
    let cdc_rf = rf.rf;
    rows.push(StageRow {
        name: "cdc".into(),
        output_shape: vec![ch, hh, ww],
        receptive_field: rf.rf,
        stride: rf.jump,
        params: sum_units("cdc"),
    });

    for (j, &out) in cfg.decoder_channels.iter().enumerate() {
        rf = rf.after_upsample2x();
        rf = rf.after_conv(3, 1, 1); // post-upsample conv
        rf = rf.after_conv(3, 1, 1).after_conv(3, 1, 1); // fuse pair
        ch = out;
        hh *= 2;
        ww *= 2;
        rows.push(StageRow {
            name: format!("dec{j}"),
            output_shape: vec![ch, hh, ww],
            receptive_field: rf.rf,
            stride: rf.jump,
            params: sum_units(&format!("dec{j}")),
        });
    }

    rows.push(StageRow {
        name: "head".into(),
        output_shape: vec![cfg.num_classes, hh, ww],
        receptive_field: rf.rf,
        stride: rf.jump,
        params: sum_units("head"),
    });

    AnalysisReport {
        input_shape: vec![cfg.input_channels, h, w],
        num_classes: cfg.num_classes,
        rows,
        total_params: model.param_count(),
        cdc_local_receptive_field: cfg.cdc.receptive_field(),
        cdc_receptive_field: cdc_rf,
    }
}

/// Widest branch of the Inception block: 1x1 then 1x7 then 7x1.
fn inception_rf(rf: RfState) -> RfState {
    let b2 = rf.after_conv(3, 1, 1);
    let b3 = rf.after_conv(1, 1, 1).after_conv(7, 1, 1);
    let b4 = rf.after_pool(3, 1);
    RfState {
        rf: b2.rf.max(b3.rf).max(b4.rf),
        jump: rf.jump,
    }
}

/// Parallel pool / strided-conv pair: the conv branch is wider.
fn downsample_rf(rf: RfState) -> RfState {
    let pool = rf.after_pool(2, 2);
    let conv = rf.after_conv(3, 2, 1);
    RfState {
        rf: pool.rf.max(conv.rf),
        jump: conv.jump,
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "input [{}] -> {} classes",
            shape_str(&self.input_shape),
            self.num_classes
        )?;
        writeln!(
            f,
            "{:<14} {:>16} {:>6} {:>7} {:>10}",
            "stage", "output [CxHxW]", "rf", "stride", "params"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<14} {:>16} {:>6} {:>7} {:>10}",
                row.name,
                shape_str(&row.output_shape),
                row.receptive_field,
                row.stride,
                row.params
            )?;
        }
        writeln!(f, "total_params {}", self.total_params)?;
        writeln!(
            f,
            "cdc_local_receptive_field {}",
            self.cdc_local_receptive_field
        )?;
        writeln!(f, "cdc_receptive_field {}", self.cdc_receptive_field)
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}
