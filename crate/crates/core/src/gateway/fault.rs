//! Fault injection for error-rate studies.

use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, Completion, GatewayError, GenerationRequest};

/// Reply substituted for a too-long fault: five sentences.
pub const INJECTED_TOO_LONG: &str = "Je vois une poire avec des bras. Elle a aussi des jambes. \
Elle semble plutôt joyeuse. Peut-être vend-elle des jus de fruits. Qu'en penses-tu ?";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultRates {
    pub empty: f64,
    pub too_long: f64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FaultCounts {
    pub calls: usize,
    pub empty: usize,
    pub too_long: usize,
}

/// Wraps a backend and replaces its replies with an empty or an over-long
/// message at the configured rates. Draws come from a seeded RNG.
pub struct FaultInjector {
    inner: Arc<dyn Backend>,
    rates: FaultRates,
    rng: Mutex<ChaCha8Rng>,
    counts: Mutex<FaultCounts>,
}

impl fmt::Debug for FaultInjector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FaultInjector")
            .field("inner", &self.inner)
            .field("rates", &self.rates)
            .finish_non_exhaustive()
    }
}

impl FaultInjector {
    pub fn new(inner: Arc<dyn Backend>, rates: FaultRates, seed: u64) -> Self {
        Self {
            inner,
            rates,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            counts: Mutex::new(FaultCounts::default()),
        }
    }

    pub fn counts(&self) -> FaultCounts {
        *self.counts.lock().expect("fault lock")
    }
}

impl Backend for FaultInjector {
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        let draw: f64 = self.rng.lock().expect("fault lock").gen();
        let mut counts = self.counts.lock().expect("fault lock");
        counts.calls += 1;
        if draw < self.rates.empty {
            counts.empty += 1;
            return Ok(Completion::stopped(""));
        }
        if draw < self.rates.empty + self.rates.too_long {
            counts.too_long += 1;
            return Ok(Completion::stopped(INJECTED_TOO_LONG));
        }
        drop(counts);
        self.inner.complete(request)
    }

    fn parallelism(&self) -> usize {
        self.inner.parallelism()
    }
}
