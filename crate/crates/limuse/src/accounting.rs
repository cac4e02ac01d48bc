//! Parameter, MACs and model-size accounting.
//!
//! One row per parameter tensor. Bytes follow the serialization scheme:
//! full-precision tensors cost 4 bytes per value; a quantized weight
//! tensor costs `ceil(params * W_q / 8)` packed bytes plus fixed per-layer
//! quantizer metadata (output/input scales, step biases, the level set,
//! and activation range statistics).

use crate::nn::LayerKind;

#[derive(Clone, Debug)]
pub struct LayerRow {
    pub name: String,
    pub kind: LayerKind,
    /// Number of stored values in this tensor.
    pub params: usize,
    /// Multiply-accumulates at the report's probe length (0 for tensors
    /// that are not convolution/FC weights).
    pub macs: f64,
    /// Whether this tensor is packed at the low bit width in a quantized
    /// export.
    pub quantized: bool,
}

/// Per-layer quantizer metadata bytes at a weight bit width: alpha + beta
/// (4+4), `n = 2^bits - 2` step biases, `n + 1` level integers, and the
/// activation quantizer's running min/max (4+4), all 32-bit.
pub fn quantizer_metadata_bytes(weight_bits: u32) -> usize {
    let n = (1usize << weight_bits) - 2;
    8 + 4 * n + 4 * (n + 1) + 8
}

fn row_bytes(row: &LayerRow, weight_bits: Option<u32>) -> usize {
    match weight_bits {
        Some(bits) if row.quantized => {
            (row.params * bits as usize).div_ceil(8) + quantizer_metadata_bytes(bits)
        }
        _ => 4 * row.params,
    }
}

#[derive(Clone, Debug)]
pub struct AccountingReport {
    pub rows: Vec<LayerRow>,
    /// When set, quantized rows are priced at this bit width.
    pub weight_bits: Option<u32>,
    /// Probe length (seconds) the MACs column was computed for.
    pub probe_seconds: f64,
}

impl AccountingReport {
    pub fn new(rows: Vec<LayerRow>, weight_bits: Option<u32>, probe_seconds: f64) -> Self {
        AccountingReport { rows, weight_bits, probe_seconds }
    }

    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> f64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.rows.iter().map(|r| row_bytes(r, self.weight_bits)).sum()
    }

    pub fn row_bytes(&self, row: &LayerRow) -> usize {
        row_bytes(row, self.weight_bits)
    }

    /// CSV with the header `layer,name,params,macs,bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,name,params,macs,bytes\n");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.0},{}\n",
                i,
                row.name,
                row.params,
                row.macs,
                row_bytes(row, self.weight_bits)
            ));
        }
        out.push_str(&format!(
            "total,,{},{:.0},{}\n",
            self.total_params(),
            self.total_macs(),
            self.total_bytes()
        ));
        out
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once("layer".len()))
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "{:<6} {:<name_w$} {:>12} {:>14} {:>12}\n",
            "layer", "name", "params", "macs", "bytes"
        );
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{:<6} {:<name_w$} {:>12} {:>14.0} {:>12}\n",
                i,
                row.name,
                row.params,
                row.macs,
                row_bytes(row, self.weight_bits)
            ));
        }
        out.push_str(&format!(
            "{:<6} {:<name_w$} {:>12} {:>14.0} {:>12}\n",
            "total",
            "",
            self.total_params(),
            self.total_macs(),
            self.total_bytes()
        ));
        out.push_str(&format!(
            "\n{:.3} M params, {:.3} G-MACs @ {:.1}s, {:.3} MB\n",
            self.total_params() as f64 / 1e6,
            self.total_macs() / 1e9,
            self.probe_seconds,
            self.total_bytes() as f64 / 1e6
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc_row(params: usize, quantized: bool) -> LayerRow {
        LayerRow {
            name: "fc.weight".into(),
            kind: LayerKind::Linear,
            params,
            macs: params as f64,
            quantized,
        }
    }

    #[test]
    fn full_precision_bytes_are_four_per_param() {
        let report = AccountingReport::new(vec![fc_row(1000, true)], None, 1.0);
        assert_eq!(report.total_bytes(), 4000);
    }

    #[test]
    fn quantized_row_bytes_closed_form() {
        // single FC layer at 3 bits: ceil(params*3/8) + metadata
        let report = AccountingReport::new(vec![fc_row(1000, true)], Some(3), 1.0);
        let expect = (1000usize * 3).div_ceil(8) + quantizer_metadata_bytes(3);
        assert_eq!(report.total_bytes(), expect);
        // a non-quantized row is unaffected by the bit width
        let report = AccountingReport::new(vec![fc_row(1000, false)], Some(3), 1.0);
        assert_eq!(report.total_bytes(), 4000);
    }

    #[test]
    fn metadata_matches_field_inventory() {
        // 3-bit: alpha+beta 8, six biases 24, seven levels 28, act range 8
        assert_eq!(quantizer_metadata_bytes(3), 68);
    }

    #[test]
    fn csv_has_header_and_total() {
        let report = AccountingReport::new(vec![fc_row(10, false)], None, 3.0);
        let csv = report.to_csv();
        assert!(csv.starts_with("layer,name,params,macs,bytes\n"));
        assert!(csv.contains("0,fc.weight,10,10,40"));
        assert!(csv.trim_end().ends_with("total,,10,10,40"));
    }
}
