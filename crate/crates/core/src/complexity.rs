//! Closed-form parameter counting and space lower bounds, audited
//! against instantiated networks.
//!
//! One module decomposes as convolution + reduced attention + blended
//! attention + three LayerNorms. With the temporal attention variant the
//! closed form is 7d^2 + 6d + 3 regardless of sequence length; the
//! component variant counts 5d^2 + 2n^2 + 6d + 3, which coincides with
//! the former exactly when n = d. The training-time space lower bound is
//! 2m + 1 scalar slots (parameters, their gradients, the learning rate)
//! stored as 32-bit floats.

use crate::gnnm::{AttentionVariant, GnnmConfig};
use crate::hierarchy::{NetworkPlan, SharingRegistry};
use crate::scalar::Scalar;

/// Parameters of a convolution layer: channels x kernel taps (+ bias per
/// output channel).
pub fn count_conv(c_in: u64, kernel_size: u64, c_out: u64, bias: bool) -> u64 {
    c_in * kernel_size * c_out + if bias { c_out } else { 0 }
}

/// Parameters of a fully connected layer (+ bias per output feature).
pub fn count_linear(l_in: u64, l_out: u64, bias: bool) -> u64 {
    l_in * l_out + if bias { l_out } else { 0 }
}

/// Per-part parameter counts of one module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModuleCounts {
    pub conv: u64,
    pub reduced_attention: u64,
    pub blended_attention: u64,
    pub layer_norm: u64,
}

impl ModuleCounts {
    pub fn total(&self) -> u64 {
        self.conv + self.reduced_attention + self.blended_attention + self.layer_norm
    }
}

/// Closed-form per-part counts for one module configuration.
pub fn count_gnnm_parts(config: &GnnmConfig) -> ModuleCounts {
    let d = config.d as u64;
    let n = config.n as u64;
    let reduced = match config.attention_variant {
        // Four maps of d x d/2 weights each.
        AttentionVariant::Temporal => 4 * count_linear(d, d / 2, false),
        // Four maps of n x n/2 weights each.
        AttentionVariant::Component => 4 * count_linear(n, n / 2, false),
    };
    ModuleCounts {
        conv: count_conv(1, 3, 1, false),
        reduced_attention: reduced,
        blended_attention: count_linear(d, d, false) + 2 * count_linear(2 * d, d, false),
        layer_norm: 3 * 2 * d,
    }
}

/// Closed-form total for one module: 7d^2 + 6d + 3 (temporal) or
/// 5d^2 + 2n^2 + 6d + 3 (component).
pub fn count_gnnm_params(config: &GnnmConfig) -> u64 {
    count_gnnm_parts(config).total()
}

/// Training-space lower bound for `m` parameters: 2m + 1 scalar slots
/// (parameters + gradients + learning rate), and the same in bytes at
/// 32-bit storage.
pub fn space_lower_bound(m: u64) -> (u64, u64) {
    let slots = 2 * m + 1;
    (slots, slots * 4)
}

/// Audit of one network: formula counts beside enumerated counts.
#[derive(Debug, Clone)]
pub struct CountReport {
    /// (slot key, per-part formula counts) per logical slot.
    pub per_slot: Vec<(String, ModuleCounts)>,
    /// Sum of formula counts over logical slots.
    pub logical_total: u64,
    /// Sum of enumerated scalars over physical sets (sharing-aware).
    pub physical_total: u64,
    /// (physical set index, formula count, enumerated count) triples with
    /// a mismatch; empty on a clean audit.
    pub mismatches: Vec<(usize, u64, u64)>,
    /// Space lower bound over the physical parameters, in slots and bytes.
    pub space_slots: u64,
    pub space_bytes: u64,
}

impl CountReport {
    pub fn clean(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Aligned table for human eyes.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>12} {:>12} {:>10} {:>12}\n",
            "slot", "conv", "reduced", "blended", "layernorm", "total"
        ));
        for (key, parts) in &self.per_slot {
            out.push_str(&format!(
                "{:<10} {:>8} {:>12} {:>12} {:>10} {:>12}\n",
                key,
                parts.conv,
                parts.reduced_attention,
                parts.blended_attention,
                parts.layer_norm,
                parts.total()
            ));
        }
        out.push_str(&format!(
            "logical total  {:>10}\nphysical total {:>10}\nspace bound    {:>10} slots ({} bytes)\n",
            self.logical_total, self.physical_total, self.space_slots, self.space_bytes
        ));
        if self.clean() {
            out.push_str("audit: formula counts match enumerated parameters\n");
        } else {
            for (idx, formula, actual) in &self.mismatches {
                out.push_str(&format!(
                    "audit MISMATCH: physical set {idx} formula {formula} enumerated {actual}\n"
                ));
            }
        }
        out
    }

    /// Key-value rendering for machine diffing.
    pub fn render_key_values(&self) -> String {
        let mut out = String::new();
        for (key, parts) in &self.per_slot {
            out.push_str(&format!("slot.{key}.conv={}\n", parts.conv));
            out.push_str(&format!(
                "slot.{key}.reduced_attention={}\n",
                parts.reduced_attention
            ));
            out.push_str(&format!(
                "slot.{key}.blended_attention={}\n",
                parts.blended_attention
            ));
            out.push_str(&format!("slot.{key}.layer_norm={}\n", parts.layer_norm));
            out.push_str(&format!("slot.{key}.total={}\n", parts.total()));
        }
        out.push_str(&format!("logical_total={}\n", self.logical_total));
        out.push_str(&format!("physical_total={}\n", self.physical_total));
        out.push_str(&format!("space_slots={}\n", self.space_slots));
        out.push_str(&format!("space_bytes={}\n", self.space_bytes));
        out.push_str(&format!("audit_clean={}\n", self.clean()));
        out
    }
}

/// Count a built network: logical totals from the closed forms, physical
/// totals by enumerating instantiated tensors, flagging any disagreement
/// between formulas and reality.
pub fn audit_network<T: Scalar>(
    plan: &NetworkPlan,
    registry: &SharingRegistry<T>,
) -> CountReport {
    let per_slot: Vec<(String, ModuleCounts)> = plan
        .slots
        .iter()
        .map(|s| (s.key(), count_gnnm_parts(&s.config)))
        .collect();
    let logical_total: u64 = per_slot.iter().map(|(_, p)| p.total()).sum();

    let mut physical_total = 0;
    let mut mismatches = Vec::new();
    for (idx, set) in registry.physical_sets.iter().enumerate() {
        let enumerated = set.num_scalars();
        physical_total += enumerated;
        // Formula for this physical set comes from any slot bound to it.
        let slot = registry
            .slot_to_physical
            .iter()
            .position(|&p| p == idx)
            .expect("physical set with no slot");
        let formula = count_gnnm_params(&plan.slots[slot].config);
        if formula != enumerated {
            mismatches.push((idx, formula, enumerated));
        }
    }

    let (space_slots, space_bytes) = space_lower_bound(physical_total);
    CountReport {
        per_slot,
        logical_total,
        physical_total,
        mismatches,
        space_slots,
        space_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnnm::GnnmParameters;
    use crate::hierarchy::{build_network, HierarchyConfig, Sharing, Task};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_counts() {
        assert_eq!(count_conv(1, 3, 1, false), 3);
        assert_eq!(count_conv(1, 3, 1, true), 4);
        assert_eq!(count_conv(2, 3, 4, false), 24);
    }

    #[test]
    fn linear_counts() {
        assert_eq!(count_linear(4, 2, false), 8);
        // Four reduced projections: 4 (d x d/2) = 2 d^2.
        let d = 10;
        assert_eq!(4 * count_linear(d, d / 2, false), 2 * d * d);
        // Blended attention: d x d + 2 (d x 2d) = 5 d^2.
        assert_eq!(
            count_linear(d, d, false) + 2 * count_linear(2 * d, d, false),
            5 * d * d
        );
    }

    #[test]
    fn module_totals_match_polynomials() {
        // Temporal: 7 d^2 + 6 d + 3 for every n; d = 512 gives 1 838 083.
        let big = GnnmConfig::new(512, 31, AttentionVariant::Temporal);
        assert_eq!(count_gnnm_params(&big), 7 * 512 * 512 + 6 * 512 + 3);
        assert_eq!(count_gnnm_params(&big), 1_838_083);

        // Component at n = d coincides with the temporal formula.
        let square = GnnmConfig::new(4, 4, AttentionVariant::Component);
        assert_eq!(count_gnnm_params(&square), 139);
        assert_eq!(count_gnnm_params(&square), 7 * 16 + 6 * 4 + 3);

        // Component at n != d follows 5 d^2 + 2 n^2 + 6 d + 3.
        let rect = GnnmConfig::new(4, 8, AttentionVariant::Component);
        assert_eq!(count_gnnm_params(&rect), 5 * 16 + 2 * 64 + 6 * 4 + 3);
        assert_eq!(count_gnnm_params(&rect), 235);
    }

    #[test]
    fn temporal_count_is_independent_of_n() {
        let d = 16;
        let counts: Vec<u64> = [2usize, 6, 10, 32]
            .iter()
            .map(|&n| count_gnnm_params(&GnnmConfig::new(d, n, AttentionVariant::Temporal)))
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn formula_equals_enumeration_over_a_grid() {
        for variant in [AttentionVariant::Component, AttentionVariant::Temporal] {
            for d in (2..=16).step_by(2) {
                for n in (2..=12).step_by(2) {
                    let config = GnnmConfig::new(d, n, variant);
                    let params = GnnmParameters::<f32>::zeros(&config).unwrap();
                    assert_eq!(
                        count_gnnm_params(&config),
                        params.num_scalars(),
                        "variant {variant:?} d={d} n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn space_bound_values() {
        assert_eq!(space_lower_bound(0), (1, 4));
        assert_eq!(space_lower_bound(139), (279, 1116));
        // One module: m = 7 d^2 + 6 d + 3 gives 14 d^2 + 12 d + 7 slots.
        let d = 512u64;
        let m = 7 * d * d + 6 * d + 3;
        assert_eq!(space_lower_bound(m).0, 14 * d * d + 12 * d + 7);
    }

    #[test]
    fn space_bound_is_strictly_increasing() {
        let mut last = 0;
        for m in 1..200 {
            let (slots, _) = space_lower_bound(m);
            assert!(slots > last);
            last = slots;
        }
    }

    #[test]
    fn network_audits_cleanly_per_level_and_per_module() {
        let mut config = HierarchyConfig::new(8, 2, 4, Task::OpenEnded);
        config.attention_variant = AttentionVariant::Temporal;
        config.sharing = Sharing::PerLevel;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (plan, registry) = build_network::<f32>(config, &mut rng).unwrap();
        let report = audit_network(&plan, &registry);
        let per_module_count = 7 * 64 + 6 * 8 + 3;
        assert_eq!(report.physical_total, 2 * per_module_count);
        assert_eq!(report.logical_total, 4 * per_module_count);
        assert!(report.clean());

        config.sharing = Sharing::PerModule;
        let (plan, registry) = build_network::<f32>(config, &mut rng).unwrap();
        let report = audit_network(&plan, &registry);
        assert_eq!(report.physical_total, 4 * per_module_count);
        assert_eq!(report.logical_total, report.physical_total);
        assert!(report.clean());
    }

    #[test]
    fn report_renders_both_formats() {
        let config = HierarchyConfig::new(4, 2, 4, Task::Count);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (plan, registry) = build_network::<f32>(config, &mut rng).unwrap();
        let report = audit_network(&plan, &registry);
        let table = report.render_table();
        assert!(table.contains("clip.0"));
        assert!(table.contains("audit: formula counts match"));
        let kv = report.render_key_values();
        assert!(kv.contains("physical_total="));
        assert!(kv.contains("audit_clean=true"));
    }
}
