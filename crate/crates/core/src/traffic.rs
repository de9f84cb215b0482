//! FTP Model 1 traffic: Poisson file arrivals, one file per user, and
//! user-perceived throughput accounting.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

/// 0.5 MB with MB = 10⁶ bytes.
pub const FILE_SIZE_BITS: u64 = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTransfer {
    pub ue_id: u64,
    pub size_bits: u64,
    pub remaining_bits: u64,
    pub arrival_tti: u64,
    pub completion_tti: Option<u64>,
}

impl FileTransfer {
    pub fn new(ue_id: u64, size_bits: u64, arrival_tti: u64) -> Self {
        assert!(size_bits > 0, "file size must be positive");
        Self {
            ue_id,
            size_bits,
            remaining_bits: size_bits,
            arrival_tti,
            completion_tti: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.completion_tti.is_some()
    }

    pub fn delivered_bits(&self) -> u64 {
        self.size_bits - self.remaining_bits
    }
}

/// Delivers up to `bits` and returns how many were actually consumed
/// (never more than what remained). Completes the transfer at `tti` when
/// nothing is left.
///
/// # Panics
/// If the transfer is already complete.
pub fn record_delivery(transfer: &mut FileTransfer, bits: u64, tti: u64) -> u64 {
    assert!(
        !transfer.is_complete(),
        "delivery to completed transfer of UE {}",
        transfer.ue_id
    );
    let used = bits.min(transfer.remaining_bits);
    transfer.remaining_bits -= used;
    if transfer.remaining_bits == 0 {
        transfer.completion_tti = Some(tti);
    }
    used
}

/// `size / ((completion − arrival + 1)·T)` in bits/s.
///
/// # Panics
/// If the transfer has not completed.
pub fn upt(transfer: &FileTransfer, tti_duration_s: f64) -> f64 {
    let done = transfer
        .completion_tti
        .unwrap_or_else(|| panic!("UPT of incomplete transfer of UE {}", transfer.ue_id));
    let ttis = done - transfer.arrival_tti + 1;
    transfer.size_bits as f64 / (ttis as f64 * tti_duration_s)
}

/// Poisson count of arrivals in one TTI.
///
/// # Panics
/// If `lambda_per_s` is negative or not finite.
pub fn generate_arrivals(lambda_per_s: f64, tti_duration_s: f64, rng: &mut SimRng) -> u64 {
    assert!(
        lambda_per_s.is_finite() && lambda_per_s >= 0.0,
        "arrival rate must be finite and non-negative, got {lambda_per_s}"
    );
    let mean = lambda_per_s * tti_duration_s;
    if mean == 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Continuous-time Poisson arrival process binned into TTIs.
///
/// Arrival `k` happens at `(E_1 + … + E_k)/λ` seconds with `E_i ~ Exp(1)`,
/// so the count in every TTI is Poisson with mean `λ·T`. Because the unit
/// exponentials do not depend on `λ`, changing the rate only rescales the
/// arrival times.
#[derive(Clone, Debug)]
pub struct ArrivalProcess {
    lambda_per_s: f64,
    tti_duration_s: f64,
    rng: SimRng,
    /// Time of the next arrival in unit-rate time, `E_1 + … + E_k`.
    next_unit_time: f64,
}

impl ArrivalProcess {
    pub fn new(lambda_per_s: f64, tti_duration_s: f64, mut rng: SimRng) -> Self {
        assert!(
            lambda_per_s.is_finite() && lambda_per_s >= 0.0,
            "arrival rate must be finite and non-negative, got {lambda_per_s}"
        );
        assert!(tti_duration_s > 0.0, "TTI duration must be positive");
        let first: f64 = rng.sample(Exp1);
        Self {
            lambda_per_s,
            tti_duration_s,
            rng,
            next_unit_time: first,
        }
    }

    /// Arrival times (seconds) falling in TTI `tti`, i.e. in
    /// `[tti·T, (tti+1)·T)`. TTIs must be visited in increasing order.
    pub fn arrivals_in(&mut self, tti: u64, out: &mut Vec<f64>) {
        out.clear();
        if self.lambda_per_s == 0.0 {
            return;
        }
        let end = (tti + 1) as f64 * self.tti_duration_s;
        loop {
            let t = self.next_unit_time / self.lambda_per_s;
            if t >= end {
                break;
            }
            out.push(t);
            let e: f64 = self.rng.sample(Exp1);
            self.next_unit_time += e;
        }
    }

    pub fn lambda_per_s(&self) -> f64 {
        self.lambda_per_s
    }
}

/// One row of the per-transfer results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub ue_id: u64,
    pub arrival_tti: u64,
    pub completion_tti: u64,
    pub upt_bps: f64,
    pub serving_cluster: usize,
    pub scheme: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn exact_finish_and_floor() {
        let mut t = FileTransfer::new(1, 4_000_000, 10);
        t.remaining_bits = 1_000_000;
        assert_eq!(record_delivery(&mut t, 1_000_000, 12), 1_000_000);
        assert_eq!(t.completion_tti, Some(12));

        let mut t = FileTransfer::new(1, 4_000_000, 10);
        t.remaining_bits = 1_000_000;
        assert_eq!(record_delivery(&mut t, 4_000_000, 11), 1_000_000);
        assert_eq!(t.remaining_bits, 0);
        assert_eq!(t.delivered_bits(), 4_000_000);
    }

    #[test]
    #[should_panic(expected = "completed transfer")]
    fn delivery_after_completion_panics() {
        let mut t = FileTransfer::new(1, 10, 0);
        record_delivery(&mut t, 10, 0);
        record_delivery(&mut t, 1, 1);
    }

    #[test]
    fn upt_arithmetic() {
        let mut t = FileTransfer::new(0, FILE_SIZE_BITS, 5);
        record_delivery(&mut t, FILE_SIZE_BITS, 104);
        assert_eq!(upt(&t, 1e-3), 40e6);
        let mut t = FileTransfer::new(0, FILE_SIZE_BITS, 5);
        record_delivery(&mut t, FILE_SIZE_BITS, 5);
        assert_eq!(upt(&t, 1e-3), FILE_SIZE_BITS as f64 / 1e-3);
    }

    #[test]
    #[should_panic(expected = "incomplete")]
    fn upt_of_incomplete_panics() {
        upt(&FileTransfer::new(0, 10, 0), 1e-3);
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut rng = stream(1, Stream::Test, 0, 0);
        assert!((0..1000).all(|_| generate_arrivals(0.0, 1e-3, &mut rng) == 0));
        let mut p = ArrivalProcess::new(0.0, 1e-3, stream(1, Stream::Arrivals, 0, 0));
        let mut buf = Vec::new();
        for t in 0..1000 {
            p.arrivals_in(t, &mut buf);
            assert!(buf.is_empty());
        }
    }

    #[test]
    fn arrival_times_scale_with_rate() {
        let collect = |lambda: f64| {
            let mut p = ArrivalProcess::new(lambda, 1e-3, stream(3, Stream::Arrivals, 0, 0));
            let mut all = Vec::new();
            let mut buf = Vec::new();
            for t in 0..5000 {
                p.arrivals_in(t, &mut buf);
                all.extend_from_slice(&buf);
            }
            all
        };
        let slow = collect(10.0);
        let fast = collect(20.0);
        assert!(fast.len() > slow.len());
        for (a, b) in slow.iter().zip(&fast) {
            assert!((a / 2.0 - b).abs() < 1e-12);
        }
    }
}
