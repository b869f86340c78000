//! Micropayments: invoices, delegated ephemeral payer keys, the
//! `X-Payment` header and atomic settlement against a local ledger.
//!
//! Header grammar, fields in this order, no whitespace:
//!
//! ```text
//! X-Payment: v1;inv=<32hex>;payer=<did>;eph=<64hex>;nonce=<32hex>;amt=<u64>;deleg=<128hex><16hex>;sig=<128hex>
//! ```
//!
//! `deleg` is the owner's signature over the ephemeral key and its window,
//! followed by the window itself as two big-endian `u32` logical times.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Writer;
use crate::hexser;
use crate::identity::{self, generate_keypair, AgentDid, KeyPair, KeyResolver, SignatureBytes};

pub const HEADER_NAME: &str = "X-Payment";
pub const HEADER_VERSION: &str = "v1";
const HEADER_PREFIX: &str = "X-Payment: ";
const DELEGATION_DOMAIN: &str = "agentmesh/delegation/v1";
const PAYMENT_DOMAIN: &str = "agentmesh/payment/v1";
const LEDGER_DOMAIN: &str = "agentmesh/ledger/v1";

const FIELDS: [&str; 7] = ["inv", "payer", "eph", "nonce", "amt", "deleg", "sig"];

macro_rules! hex_id {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(#[serde(with = "hexser")] pub [u8; $len]);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.iter().try_for_each(|b| write!(f, "{b:02x}"))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self)
            }
        }
    };
}

hex_id!(InvoiceId, 16);
hex_id!(Nonce, 16);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayError {
    #[error("invoice amount must be positive")]
    ZeroAmount,
    #[error("ephemeral key window [{issued_at}, {expires_at}) is empty")]
    EmptyWindow { issued_at: u32, expires_at: u32 },
    #[error("ephemeral key is not valid at time {now}")]
    EphemeralExpired { now: u64 },
    #[error("ephemeral key was delegated by a different owner")]
    DelegationMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoice {
    pub invoice_id: InvoiceId,
    pub payee: AgentDid,
    /// Micro-units.
    pub amount: u64,
    pub task_id: String,
    pub expires_at: u64,
}

pub fn create_invoice<R: RngCore + ?Sized>(
    payee: AgentDid,
    amount: u64,
    task_id: &str,
    expires_at: u64,
    rng: &mut R,
) -> Result<Invoice, PayError> {
    if amount == 0 {
        return Err(PayError::ZeroAmount);
    }
    let mut id = [0u8; 16];
    rng.fill_bytes(&mut id);
    Ok(Invoice {
        invoice_id: InvoiceId(id),
        payee,
        amount,
        task_id: task_id.into(),
        expires_at,
    })
}

pub fn delegation_bytes(ephemeral_pub: &[u8; 32], issued_at: u32, expires_at: u32) -> Vec<u8> {
    let mut w = Writer::with_domain(DELEGATION_DOMAIN);
    w.raw(ephemeral_pub).u32(issued_at).u32(expires_at);
    w.finish()
}

pub fn payment_bytes(
    invoice_id: &InvoiceId,
    payer: &AgentDid,
    amount: u64,
    nonce: &Nonce,
) -> Vec<u8> {
    let mut w = Writer::with_domain(PAYMENT_DOMAIN);
    w.raw(&invoice_id.0)
        .raw(payer.digest())
        .u64(amount)
        .raw(&nonce.0);
    w.finish()
}

/// Short-lived signing key vouched for by its owner over a window
/// `[issued_at, expires_at)` of logical time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralKey {
    pub keys: KeyPair,
    pub owner: AgentDid,
    pub issued_at: u32,
    pub expires_at: u32,
    #[serde(with = "hexser")]
    pub delegation: SignatureBytes,
}

impl EphemeralKey {
    pub fn delegate(
        owner: &KeyPair,
        seed: [u8; 32],
        issued_at: u32,
        expires_at: u32,
    ) -> Result<Self, PayError> {
        if issued_at >= expires_at {
            return Err(PayError::EmptyWindow {
                issued_at,
                expires_at,
            });
        }
        let keys = generate_keypair(seed);
        let delegation = owner.sign(&delegation_bytes(&keys.public_key, issued_at, expires_at));
        Ok(Self {
            keys,
            owner: owner.did(),
            issued_at,
            expires_at,
            delegation,
        })
    }

    pub fn is_valid_at(&self, now: u64) -> bool {
        window_contains(self.issued_at, self.expires_at, now)
    }
}

fn window_contains(issued_at: u32, expires_at: u32, now: u64) -> bool {
    issued_at as u64 <= now && now < expires_at as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentHeader {
    pub invoice_id: InvoiceId,
    pub payer: AgentDid,
    #[serde(with = "hexser")]
    pub ephemeral_pub: [u8; 32],
    pub nonce: Nonce,
    pub amount: u64,
    #[serde(with = "hexser")]
    pub delegation: SignatureBytes,
    pub issued_at: u32,
    pub expires_at: u32,
    #[serde(with = "hexser")]
    pub signature: SignatureBytes,
}

impl PaymentHeader {
    /// Signs a payment for `invoice` with the ephemeral key.
    pub fn authorize(
        invoice: &Invoice,
        payer_owner: &KeyPair,
        ephemeral: &EphemeralKey,
        nonce: Nonce,
        now: u64,
    ) -> Result<Self, PayError> {
        let payer = payer_owner.did();
        if ephemeral.owner != payer {
            return Err(PayError::DelegationMismatch);
        }
        if !ephemeral.is_valid_at(now) {
            return Err(PayError::EphemeralExpired { now });
        }
        let signature = ephemeral.keys.sign(&payment_bytes(
            &invoice.invoice_id,
            &payer,
            invoice.amount,
            &nonce,
        ));
        Ok(Self {
            invoice_id: invoice.invoice_id,
            payer,
            ephemeral_pub: ephemeral.keys.public_key,
            nonce,
            amount: invoice.amount,
            delegation: ephemeral.delegation,
            issued_at: ephemeral.issued_at,
            expires_at: ephemeral.expires_at,
            signature,
        })
    }

    pub fn render(&self) -> String {
        format!(
            "{HEADER_PREFIX}{HEADER_VERSION};inv={};payer={};eph={};nonce={};amt={};deleg={}{:08x}{:08x};sig={}",
            self.invoice_id,
            self.payer,
            hex::encode(self.ephemeral_pub),
            self.nonce,
            self.amount,
            hex::encode(self.delegation),
            self.issued_at,
            self.expires_at,
            hex::encode(self.signature),
        )
    }

    pub fn parse(s: &str) -> Result<Self, ParseError> {
        parse_payment_header(s)
    }
}

pub fn build_payment_header(
    invoice: &Invoice,
    payer_owner: &KeyPair,
    ephemeral: &EphemeralKey,
    nonce: Nonce,
    now: u64,
) -> Result<String, PayError> {
    PaymentHeader::authorize(invoice, payer_owner, ephemeral, nonce, now).map(|h| h.render())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseReason {
    MissingPrefix,
    UnsupportedVersion,
    EmptyField,
    MalformedField,
    UnknownField,
    DuplicateField,
    FieldOutOfOrder,
    MissingField,
    BadFieldLength,
    BadHex,
    BadAmount,
    BadDid,
}

/// `position` is a byte offset into the input: the start of the offending
/// field's key, or the end of input for a missing field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{reason:?} at byte {position}")]
pub struct ParseError {
    pub position: usize,
    pub reason: ParseReason,
}

fn fail<T>(position: usize, reason: ParseReason) -> Result<T, ParseError> {
    Err(ParseError { position, reason })
}

fn hex_field<const N: usize>(value: &str, at: usize) -> Result<[u8; N], ParseError> {
    if value.len() != 2 * N {
        return fail(at, ParseReason::BadFieldLength);
    }
    hexser::decode_array::<N>(value).map_or_else(|| fail(at, ParseReason::BadHex), Ok)
}

fn amount_field(value: &str, at: usize) -> Result<u64, ParseError> {
    let canonical = !value.is_empty()
        && value.bytes().all(|b| b.is_ascii_digit())
        && (value == "0" || !value.starts_with('0'));
    if !canonical {
        return fail(at, ParseReason::BadAmount);
    }
    value
        .parse()
        .map_or_else(|_| fail(at, ParseReason::BadAmount), Ok)
}

/// Strict parser for the header line. Never panics.
pub fn parse_payment_header(s: &str) -> Result<PaymentHeader, ParseError> {
    let Some(body) = s.strip_prefix(HEADER_PREFIX) else {
        return fail(0, ParseReason::MissingPrefix);
    };
    let base = HEADER_PREFIX.len();
    let mut segments = body.split(';');
    let mut offset = base;
    let version = segments.next().unwrap_or_default();
    if version != HEADER_VERSION {
        return fail(offset, ParseReason::UnsupportedVersion);
    }
    offset += version.len() + 1;

    let mut values: [Option<(&str, usize)>; 7] = [None; 7];
    let mut last_index: Option<usize> = None;
    for segment in segments {
        let at = offset;
        offset += segment.len() + 1;
        if segment.is_empty() {
            return fail(at, ParseReason::EmptyField);
        }
        let Some((key, value)) = segment.split_once('=') else {
            return fail(at, ParseReason::MalformedField);
        };
        let Some(index) = FIELDS.iter().position(|f| *f == key) else {
            return fail(at, ParseReason::UnknownField);
        };
        if values[index].is_some() {
            return fail(at, ParseReason::DuplicateField);
        }
        if last_index.is_some_and(|last| index < last) {
            return fail(at, ParseReason::FieldOutOfOrder);
        }
        last_index = Some(index);
        values[index] = Some((value, at));
    }
    let mut fields = [("", 0usize); 7];
    for (slot, value) in fields.iter_mut().zip(values) {
        *slot = value.ok_or(ParseError {
            position: s.len(),
            reason: ParseReason::MissingField,
        })?;
    }
    let [inv, payer, eph, nonce, amt, deleg, sig] = fields;

    let invoice_id = InvoiceId(hex_field::<16>(inv.0, inv.1)?);
    let payer = AgentDid::parse(payer.0).or_else(|_| fail(payer.1, ParseReason::BadDid))?;
    let ephemeral_pub = hex_field::<32>(eph.0, eph.1)?;
    let nonce = Nonce(hex_field::<16>(nonce.0, nonce.1)?);
    let amount = amount_field(amt.0, amt.1)?;
    let deleg_bytes = hex_field::<72>(deleg.0, deleg.1)?;
    let signature = hex_field::<64>(sig.0, sig.1)?;

    let mut delegation = [0u8; 64];
    delegation.copy_from_slice(&deleg_bytes[..64]);
    let issued_at = u32::from_be_bytes(deleg_bytes[64..68].try_into().expect("4 bytes"));
    let expires_at = u32::from_be_bytes(deleg_bytes[68..72].try_into().expect("4 bytes"));
    Ok(PaymentHeader {
        invoice_id,
        payer,
        ephemeral_pub,
        nonce,
        amount,
        delegation,
        issued_at,
        expires_at,
        signature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpiryKind {
    Invoice,
    EphemeralKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SettleError {
    #[error("header refers to a different invoice")]
    UnknownInvoice,
    #[error("header amount {header} does not match invoice amount {invoice}")]
    AmountMismatch { header: u64, invoice: u64 },
    #[error("{0:?} expired")]
    Expired(ExpiryKind),
    #[error("ephemeral key delegation does not verify against the payer")]
    BadDelegation,
    #[error("payment signature does not verify")]
    BadSignature,
    #[error("nonce already used by this payer")]
    DuplicateNonce,
    #[error("invoice already settled")]
    InvoiceAlreadySettled,
    #[error("payer balance {balance} below amount {amount}")]
    InsufficientFunds { balance: u64, amount: u64 },
    #[error("payee balance would overflow")]
    BalanceOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub sequence: u64,
    pub invoice_id: InvoiceId,
    pub task_id: String,
    pub payer: AgentDid,
    pub payee: AgentDid,
    pub amount: u64,
    pub nonce: Nonce,
    pub settled_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeenNonce {
    pub payer: AgentDid,
    pub nonce: Nonce,
}

/// Single-writer balance book. Settlement moves units between accounts and
/// never creates or destroys them; `deposit` is the only way in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    balances: BTreeMap<AgentDid, u64>,
    seen_nonces: BTreeSet<SeenNonce>,
    settled_invoices: BTreeSet<InvoiceId>,
    receipts: Vec<Receipt>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deposit(&mut self, account: AgentDid, amount: u64) -> Result<(), SettleError> {
        let slot = self.balances.entry(account).or_insert(0);
        *slot = slot
            .checked_add(amount)
            .ok_or(SettleError::BalanceOverflow)?;
        Ok(())
    }

    pub fn balance(&self, account: &AgentDid) -> u64 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<AgentDid, u64> {
        &self.balances
    }

    pub fn total(&self) -> u128 {
        self.balances.values().map(|&b| b as u128).sum()
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub fn has_seen(&self, payer: &AgentDid, nonce: &Nonce) -> bool {
        self.seen_nonces.contains(&SeenNonce {
            payer: *payer,
            nonce: *nonce,
        })
    }

    pub fn is_settled(&self, invoice_id: &InvoiceId) -> bool {
        self.settled_invoices.contains(invoice_id)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_domain(LEDGER_DOMAIN);
        w.u64(self.balances.len() as u64);
        for (did, bal) in &self.balances {
            w.raw(did.digest()).u64(*bal);
        }
        w.u64(self.seen_nonces.len() as u64);
        for seen in &self.seen_nonces {
            w.raw(seen.payer.digest()).raw(&seen.nonce.0);
        }
        w.u64(self.settled_invoices.len() as u64);
        for id in &self.settled_invoices {
            w.raw(&id.0);
        }
        w.u64(self.receipts.len() as u64);
        for r in &self.receipts {
            w.u64(r.sequence)
                .raw(&r.invoice_id.0)
                .str(&r.task_id)
                .raw(r.payer.digest())
                .raw(r.payee.digest())
                .u64(r.amount)
                .raw(&r.nonce.0)
                .u64(r.settled_at);
        }
        w.finish()
    }

    /// Verifies and applies a payment. All checks run before any mutation,
    /// so an error leaves the ledger exactly as it was.
    pub fn settle(
        &mut self,
        header: &PaymentHeader,
        invoice: &Invoice,
        resolver: &impl KeyResolver,
        now: u64,
    ) -> Result<Receipt, SettleError> {
        if header.invoice_id != invoice.invoice_id {
            return Err(SettleError::UnknownInvoice);
        }
        if header.amount != invoice.amount {
            return Err(SettleError::AmountMismatch {
                header: header.amount,
                invoice: invoice.amount,
            });
        }
        if now > invoice.expires_at {
            return Err(SettleError::Expired(ExpiryKind::Invoice));
        }
        if !window_contains(header.issued_at, header.expires_at, now) {
            return Err(SettleError::Expired(ExpiryKind::EphemeralKey));
        }
        let owner_key = resolver
            .public_key(&header.payer)
            .ok_or(SettleError::BadDelegation)?;
        if AgentDid::from_public_key(&owner_key) != header.payer
            || !identity::verify(
                &owner_key,
                &delegation_bytes(&header.ephemeral_pub, header.issued_at, header.expires_at),
                &header.delegation,
            )
        {
            return Err(SettleError::BadDelegation);
        }
        let message = payment_bytes(
            &header.invoice_id,
            &header.payer,
            header.amount,
            &header.nonce,
        );
        if !identity::verify(&header.ephemeral_pub, &message, &header.signature) {
            return Err(SettleError::BadSignature);
        }
        if self.has_seen(&header.payer, &header.nonce) {
            return Err(SettleError::DuplicateNonce);
        }
        if self.is_settled(&invoice.invoice_id) {
            return Err(SettleError::InvoiceAlreadySettled);
        }
        let balance = self.balance(&header.payer);
        if balance < header.amount {
            return Err(SettleError::InsufficientFunds {
                balance,
                amount: header.amount,
            });
        }
        if header.payer != invoice.payee
            && self
                .balance(&invoice.payee)
                .checked_add(header.amount)
                .is_none()
        {
            return Err(SettleError::BalanceOverflow);
        }

        *self.balances.entry(header.payer).or_insert(0) -= header.amount;
        *self.balances.entry(invoice.payee).or_insert(0) += header.amount;
        self.seen_nonces.insert(SeenNonce {
            payer: header.payer,
            nonce: header.nonce,
        });
        self.settled_invoices.insert(invoice.invoice_id);
        let receipt = Receipt {
            sequence: self.receipts.len() as u64,
            invoice_id: invoice.invoice_id,
            task_id: invoice.task_id.clone(),
            payer: header.payer,
            payee: invoice.payee,
            amount: header.amount,
            nonce: header.nonce,
            settled_at: now,
        };
        self.receipts.push(receipt.clone());
        Ok(receipt)
    }
}

pub fn settle(
    ledger: &mut Ledger,
    header: &PaymentHeader,
    invoice: &Invoice,
    resolver: &impl KeyResolver,
    now: u64,
) -> Result<Receipt, SettleError> {
    ledger.settle(header, invoice, resolver, now)
}
