//! Black-box model auditing framed as hypothesis testing.
//!
//! An audit queries an opaque model, estimates a compliance criterion `g(f)`
//! from the collected evidence, and decides between "compliant" and
//! "non-compliant" under an explicitly declared presumption (the null
//! hypothesis). The crate is organised bottom-up:
//!
//! - [`blackbox`]: the opaque model interface, a synthetic model zoo with known
//!   ground truth, and an HTTP client for deployed models.
//! - [`evidence`]: seeded sampling strategies, query budgets and the
//!   append-only evidence log.
//! - [`criteria`]: compliance criteria and their finite-sample estimators.
//! - [`testing`]: boundary tests, bootstrap intervals, power and sample-size
//!   planning, multiplicity corrections and the audit driver.
//! - [`ll144`]: the NYC Local Law 144 bias-audit workflow.
//! - [`cli`]: the `bbaudit` command-line front end.

pub mod blackbox;
pub mod cli;
pub mod criteria;
pub mod evidence;
pub mod ll144;
pub mod seed;
pub mod testing;

pub use blackbox::{query, query_batch, BlackBoxModel, ModelInput, ModelOutput, Value};
pub use criteria::{ComplianceCriterion, CriterionEstimate};
pub use evidence::{collect, Evidence, QueryBudget, SamplingStrategy};
pub use testing::{run_audit, AuditOutcome, AuditResult, AuditSpec, Decision, Presumption, TestMethod};
