//! Instance-hour accounting.
//!
//! Every started hour of an instance is billed at the hourly rate of its size.

use crate::clock::{Millis, MS_PER_HOUR};
use crate::instance::InstanceSize;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingTable {
    pub small: f64,
    pub medium: f64,
}

impl Default for PricingTable {
    fn default() -> Self {
        Self { small: 1.0, medium: 2.0 }
    }
}

impl PricingTable {
    pub fn rate(&self, size: InstanceSize) -> f64 {
        match size {
            InstanceSize::Small => self.small,
            InstanceSize::Medium => self.medium,
        }
    }
}

/// `ceil((end - start) / 1h)`.
pub fn billed_hours(start: Millis, end: Millis) -> u64 {
    end.saturating_sub(start).div_ceil(MS_PER_HOUR)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageSpan {
    pub deployment: String,
    pub instance: String,
    pub size: InstanceSize,
    pub start: Millis,
    pub end: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BillingRecord {
    pub deployment: String,
    pub instance: String,
    pub size: InstanceSize,
    pub start: Millis,
    pub end: Millis,
    pub billed_hours: u64,
    pub rate: f64,
    pub amount: f64,
    /// Span still running; billed up to the report time.
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountingReport {
    pub records: Vec<BillingRecord>,
    pub total_hours: u64,
    pub total_amount: f64,
}

impl AccountingReport {
    pub fn open_spans(&self) -> usize {
        self.records.iter().filter(|r| r.open).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageLedger {
    spans: Vec<UsageSpan>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, deployment: impl Into<String>, instance: impl Into<String>, size: InstanceSize, at: Millis) {
        self.spans.push(UsageSpan { deployment: deployment.into(), instance: instance.into(), size, start: at, end: None });
    }

    /// Closes the instance's open span. False if it had none.
    pub fn close(&mut self, instance: &str, at: Millis) -> bool {
        match self.spans.iter_mut().find(|s| s.instance == instance && s.end.is_none()) {
            Some(s) => {
                s.end = Some(at.max(s.start));
                true
            }
            None => false,
        }
    }

    pub fn spans(&self) -> &[UsageSpan] {
        &self.spans
    }

    pub fn report(&self, now: Millis, pricing: &PricingTable) -> AccountingReport {
        let records: Vec<_> = self
            .spans
            .iter()
            .map(|s| {
                let end = s.end.unwrap_or(now.max(s.start));
                let hours = billed_hours(s.start, end);
                let rate = pricing.rate(s.size);
                BillingRecord {
                    deployment: s.deployment.clone(),
                    instance: s.instance.clone(),
                    size: s.size,
                    start: s.start,
                    end,
                    billed_hours: hours,
                    rate,
                    amount: hours as f64 * rate,
                    open: s.end.is_none(),
                }
            })
            .collect();
        AccountingReport {
            total_hours: records.iter().map(|r| r.billed_hours).sum(),
            total_amount: records.iter().map(|r| r.amount).sum(),
            records,
        }
    }
}
